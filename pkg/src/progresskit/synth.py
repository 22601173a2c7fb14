"""Synthetic tube generator: desk-scale videos with known progress structure.

Each video holds one ground-truth tube whose per-frame feature map is a smooth
random function of a latent phase: the progress itself for non-cyclic classes,
or the fractional part of ``cycles * progress`` for cyclic classes (so a single
frame cannot reveal how many repetitions have passed).  Background padding
frames before and after the action get a phase-independent pattern.  A simple
detector error model produces matching detections with optional score noise,
dropped tubes, box jitter, and temporal dilation into the padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMap
from .tubes import BoundingBox, ClassInfo, Dataset, Tube


@dataclass(frozen=True)
class DetectorNoise:
    """How detections degrade relative to ground truth."""

    score_sigma: float = 0.0
    drop_rate: float = 0.0
    box_jitter: float = 0.0
    dilate_max: int = 0

    def __post_init__(self):
        if min(self.score_sigma, self.box_jitter) < 0 or self.dilate_max < 0:
            raise ValueError("noise levels must be >= 0")
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError("drop_rate must be in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 4
    cyclic: tuple[bool, ...] | None = None  # default: every other class, starting False
    videos_per_class: int = 10
    length_range: tuple[int, int] = (30, 50)
    padding_range: tuple[int, int] = (0, 0)
    cycles: int = 3
    harmonics: int = 2
    map_height: int = 8
    map_width: int = 8
    channels: int = 2
    image_size: tuple[int, int] = (128, 128)
    feature_noise: float = 0.02
    box_jitter: float = 1.5
    detector: DetectorNoise = field(default_factory=DetectorNoise)
    seed: int = 0
    mapping_seed: int | None = None  # share class mappings across splits; defaults to seed

    def __post_init__(self):
        if self.n_classes < 1 or self.videos_per_class < 1:
            raise ValueError("need at least one class and one video per class")
        if self.cyclic is not None and len(self.cyclic) != self.n_classes:
            raise ValueError("cyclic flags must match n_classes")
        if self.length_range[0] < 1 or self.length_range[0] > self.length_range[1]:
            raise ValueError("bad length_range")
        if self.padding_range[0] < 0 or self.padding_range[0] > self.padding_range[1]:
            raise ValueError("bad padding_range")
        if self.cycles < 1 or self.harmonics < 1:
            raise ValueError("cycles and harmonics must be >= 1")
        if min(self.feature_noise, self.box_jitter) < 0:
            raise ValueError("noise levels must be >= 0")

    def cyclic_flags(self) -> tuple[bool, ...]:
        if self.cyclic is not None:
            return tuple(self.cyclic)
        return tuple(c % 2 == 1 for c in range(self.n_classes))


class _PhaseMapping:
    """Per-class smooth random map from latent phase to a feature grid.

    Non-cyclic classes use half-period harmonics so the map is injective on
    [0, 1] (start and end look different); cyclic classes use full-period
    harmonics of the wrapped phase, which repeat ``cycles`` times per tube.
    """

    def __init__(self, config: SynthConfig, cyclic: bool, rng: np.random.Generator):
        shape = (config.harmonics, config.map_height, config.map_width, config.channels)
        scale = 1.0 / np.sqrt(config.harmonics)
        self.a_sin = rng.normal(0.0, scale, shape)
        self.a_cos = rng.normal(0.0, scale, shape)
        self.bias = rng.normal(0.0, 0.5, shape[1:])
        self.cyclic = cyclic
        self.cycles = config.cycles
        self.harmonics = config.harmonics

    def __call__(self, progress: float) -> np.ndarray:
        if self.cyclic:
            phase = (self.cycles * progress) % 1.0
            angles = 2.0 * np.pi * phase
        else:
            angles = np.pi * progress
        out = self.bias.copy()
        for h in range(self.harmonics):
            out += self.a_sin[h] * np.sin((h + 1) * angles)
            out += self.a_cos[h] * np.cos((h + 1) * angles)
        return out


def _walk_boxes(
    n: int, config: SynthConfig, rng: np.random.Generator
) -> list[BoundingBox]:
    img_w, img_h = config.image_size
    w = rng.uniform(0.25, 0.45) * img_w
    h = rng.uniform(0.25, 0.45) * img_h
    cx = rng.uniform(w / 2, img_w - w / 2)
    cy = rng.uniform(h / 2, img_h - h / 2)
    boxes = []
    for _ in range(n):
        cx = np.clip(cx + rng.normal(0.0, config.box_jitter), w / 2, img_w - w / 2)
        cy = np.clip(cy + rng.normal(0.0, config.box_jitter), h / 2, img_h - h / 2)
        boxes.append(BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
    return boxes


def _jitter_box(
    box: BoundingBox, sigma: float, image_size: tuple[int, int], rng: np.random.Generator
) -> BoundingBox:
    if sigma == 0:
        return box
    img_w, img_h = image_size
    x0, y0, x1, y1 = (
        box.x_min + rng.normal(0, sigma),
        box.y_min + rng.normal(0, sigma),
        box.x_max + rng.normal(0, sigma),
        box.y_max + rng.normal(0, sigma),
    )
    x0, x1 = sorted((x0, x1))
    y0, y1 = sorted((y0, y1))
    x0 = float(np.clip(x0, 0.0, img_w - 2.0))
    y0 = float(np.clip(y0, 0.0, img_h - 2.0))
    x1 = float(np.clip(x1, x0 + 1.0, img_w))
    y1 = float(np.clip(y1, y0 + 1.0, img_h))
    return BoundingBox(x0, y0, x1, y1)


def _detection_for(
    gt: Tube,
    pad_before: int,
    pad_after: int,
    config: SynthConfig,
    rng: np.random.Generator,
) -> Tube | None:
    noise = config.detector
    if noise.drop_rate > 0 and rng.random() < noise.drop_rate:
        return None
    dil_b = int(rng.integers(0, min(noise.dilate_max, pad_before) + 1))
    dil_a = int(rng.integers(0, min(noise.dilate_max, pad_after) + 1))
    boxes = [gt.boxes[0]] * dil_b + list(gt.boxes) + [gt.boxes[-1]] * dil_a
    boxes = [_jitter_box(b, noise.box_jitter, config.image_size, rng) for b in boxes]
    score = float(np.clip(1.0 - abs(rng.normal(0.0, noise.score_sigma)), 0.01, 1.0))
    return Tube(
        video_id=gt.video_id,
        class_id=gt.class_id,
        start_frame=gt.start_frame - dil_b,
        end_frame=gt.end_frame + dil_a,
        boxes=tuple(boxes),
        score=score,
    )


def generate(config: SynthConfig) -> tuple[Dataset, dict[str, list[FeatureMap]]]:
    """Build a dataset plus per-video feature maps, fully determined by the seed."""
    flags = config.cyclic_flags()
    n_videos = config.n_classes * config.videos_per_class
    map_seed = config.seed if config.mapping_seed is None else config.mapping_seed
    mapping_rng = np.random.default_rng(np.random.SeedSequence((map_seed, 0xFEA7)))
    seeds = np.random.SeedSequence(config.seed).spawn(1 + n_videos)

    mappings = [
        _PhaseMapping(config, flags[c], mapping_rng) for c in range(config.n_classes)
    ]
    background = mapping_rng.normal(
        0.0, 1.0, (config.map_height, config.map_width, config.channels)
    )
    spatial_scale = config.map_width / config.image_size[0]

    classes = {
        c: ClassInfo(c, f"action{c:02d}", flags[c]) for c in range(config.n_classes)
    }
    video_frames: dict[str, int] = {}
    ground_truth: list[Tube] = []
    detections: list[Tube] = []
    feature_maps: dict[str, list[FeatureMap]] = {}

    video_index = 0
    for class_id in range(config.n_classes):
        for _ in range(config.videos_per_class):
            rng = np.random.default_rng(seeds[1 + video_index])
            video_id = f"c{class_id}_v{video_index:04d}"
            video_index += 1

            length = int(rng.integers(config.length_range[0], config.length_range[1] + 1))
            pad_b = int(rng.integers(config.padding_range[0], config.padding_range[1] + 1))
            pad_a = int(rng.integers(config.padding_range[0], config.padding_range[1] + 1))
            total = pad_b + length + pad_a
            video_frames[video_id] = total

            boxes = _walk_boxes(length, config, rng)
            gt = Tube(
                video_id=video_id,
                class_id=class_id,
                start_frame=pad_b,
                end_frame=pad_b + length - 1,
                boxes=tuple(boxes),
                score=1.0,
            )
            ground_truth.append(gt)

            progress = (
                np.array([1.0]) if length == 1 else np.arange(length) / (length - 1)
            )
            maps = []
            for frame in range(total):
                if gt.start_frame <= frame <= gt.end_frame:
                    grid = mappings[class_id](float(progress[frame - gt.start_frame]))
                else:
                    grid = background
                grid = grid + rng.normal(0.0, config.feature_noise, grid.shape)
                maps.append(FeatureMap(spatial_scale, grid))
            feature_maps[video_id] = maps

            det = _detection_for(gt, pad_b, pad_a, config, rng)
            if det is not None:
                detections.append(det)

    dataset = Dataset(
        classes=classes,
        video_frames=video_frames,
        ground_truth=tuple(ground_truth),
        detections=tuple(detections),
    )
    return dataset, feature_maps
