"""Run a backbone over video frames and write progresskit annotation + feature files.

The adapter only produces the two file formats; progress prediction, training,
and evaluation all stay in the main toolkit.  Videos come in as directories of
image frames (sorted by filename) or as video files when OpenCV is available.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from progresskit.features import FeatureMap
from progresskit.fileio import write_annotations, write_feature_file
from progresskit.tubes import BoundingBox, ClassInfo, Dataset, Tube

from .backbones import BackboneError, load_backbone

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
VIDEO_SUFFIXES = (".mp4", ".avi", ".mkv", ".mov")

# ImageNet statistics used by the torchvision backbones
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class VideoReadError(RuntimeError):
    """Raised when a video path yields no readable frames."""


@dataclass(frozen=True)
class ExtractionConfig:
    video_paths: tuple[str, ...]
    backbone: str = "resnet18-layer4"
    output_dir: str = "extracted"
    frame_stride: int = 1
    weights_path: str | None = None
    class_id: int = 0
    class_name: str = "action"
    cyclic: bool = False

    def __post_init__(self):
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")
        if not self.video_paths:
            raise ValueError("no video paths given")


def _read_frame_dir(path: Path) -> list[np.ndarray]:
    files = sorted(
        p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    frames = []
    for f in files:
        with Image.open(f) as img:
            frames.append(np.asarray(img.convert("RGB")))
    return frames


def _read_video_file(path: Path) -> list[np.ndarray]:
    try:
        import cv2
    except ImportError as exc:
        raise VideoReadError(f"OpenCV is required to read {path.name}: {exc}") from exc
    capture = cv2.VideoCapture(str(path))
    frames = []
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        frames.append(frame[:, :, ::-1].copy())  # BGR -> RGB
    capture.release()
    return frames


def read_frames(path, stride: int = 1) -> list[np.ndarray]:
    path = Path(path)
    if path.is_dir():
        frames = _read_frame_dir(path)
    elif path.suffix.lower() in VIDEO_SUFFIXES:
        frames = _read_video_file(path)
    else:
        raise VideoReadError(f"unsupported video source {path}")
    frames = frames[::stride]
    if not frames:
        raise VideoReadError(f"no frames in {path}")
    return frames


def _to_batch(frame: np.ndarray) -> torch.Tensor:
    scaled = (frame.astype(np.float32) / 255.0 - _MEAN) / _STD
    return torch.from_numpy(scaled.transpose(2, 0, 1)).unsqueeze(0)


def extract_video(extractor, spec, frames) -> list[FeatureMap]:
    maps = []
    with torch.no_grad():
        for frame in frames:
            out = extractor(_to_batch(frame))["map"][0]  # (C, H, W)
            grid = out.permute(1, 2, 0).numpy()
            maps.append(FeatureMap(spec.spatial_scale, grid))
    return maps


def extract(config: ExtractionConfig) -> list[tuple[Path, Path]]:
    """Process every video; returns (annotation_path, feature_path) per video."""
    extractor, spec = load_backbone(config.backbone, config.weights_path)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for video_path in config.video_paths:
        video_path = Path(video_path)
        video_id = video_path.stem
        frames = read_frames(video_path, config.frame_stride)
        maps = extract_video(extractor, spec, frames)

        height, width = frames[0].shape[:2]
        boxes = tuple(BoundingBox(0.0, 0.0, float(width), float(height))) if False else tuple(
            BoundingBox(0.0, 0.0, float(width), float(height)) for _ in frames
        )
        tube = Tube(
            video_id=video_id,
            class_id=config.class_id,
            start_frame=0,
            end_frame=len(frames) - 1,
            boxes=boxes,
            score=1.0,
        )
        dataset = Dataset(
            classes={config.class_id: ClassInfo(config.class_id, config.class_name, config.cyclic)},
            video_frames={video_id: len(frames)},
            ground_truth=(),
            detections=(tube,),
        )
        ann_path = out_dir / f"{video_id}.txt"
        feat_path = out_dir / f"{video_id}.feat"
        write_annotations(dataset, ann_path)
        write_feature_file(feat_path, video_id, maps)
        written.append((ann_path, feat_path))
    return written
