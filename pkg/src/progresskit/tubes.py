"""Core data model: per-frame boxes, action tubes, overlap measures, progress targets.

An action tube is a temporally contiguous sequence of bounding boxes, one per
frame, enclosing a single performance of an action.  Everything downstream
(features, training, refinement, evaluation) operates on these types.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous frame coordinates with strictly positive area."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"box must have positive area: "
                f"({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Tube:
    """A scored, class-labeled sequence of boxes over an inclusive frame range.

    Frame indices are integers; there is exactly one box per frame in
    [start_frame, end_frame], so a tube has no temporal gaps.
    """

    video_id: str
    class_id: int
    start_frame: int
    end_frame: int
    boxes: tuple[BoundingBox, ...]
    score: float = 1.0

    def __post_init__(self):
        if self.end_frame < self.start_frame:
            raise ValueError(
                f"end_frame {self.end_frame} precedes start_frame {self.start_frame}"
            )
        expected = self.end_frame - self.start_frame + 1
        if len(self.boxes) != expected:
            raise ValueError(
                f"tube spans {expected} frames but has {len(self.boxes)} boxes"
            )
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if not isinstance(self.boxes, tuple):
            object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.end_frame + 1)

    def box_at(self, frame: int) -> BoundingBox:
        if not self.start_frame <= frame <= self.end_frame:
            raise IndexError(f"frame {frame} outside tube range {self.frames}")
        return self.boxes[frame - self.start_frame]

    def window(self, start_offset: int, end_offset: int) -> "Tube":
        """Contiguous sub-tube covering offsets [start_offset, end_offset)."""
        if not 0 <= start_offset < end_offset <= self.n_frames:
            raise ValueError(f"bad window [{start_offset}, {end_offset})")
        return Tube(
            video_id=self.video_id,
            class_id=self.class_id,
            start_frame=self.start_frame + start_offset,
            end_frame=self.start_frame + end_offset - 1,
            boxes=self.boxes[start_offset:end_offset],
            score=self.score,
        )


@dataclass(frozen=True)
class ClassInfo:
    """One row of the class table."""

    class_id: int
    name: str
    cyclic: bool = False


@dataclass(eq=False)
class Dataset:
    """Ground-truth and detected tubes for a collection of videos.

    Ground-truth tubes always carry score 1.  The optional progress maps attach
    per-frame progress values (predictions, or stored targets) to tubes by their
    index in the corresponding tuple; they are populated by prediction tools and
    by the annotation parser, and stay empty for pure annotation data.
    """

    classes: dict[int, ClassInfo]
    video_frames: dict[str, int]
    ground_truth: tuple[Tube, ...]
    detections: tuple[Tube, ...] = ()
    gt_progress: dict[int, np.ndarray] = field(default_factory=dict)
    det_progress: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.ground_truth = tuple(self.ground_truth)
        self.detections = tuple(self.detections)
        self.validate()

    def validate(self) -> None:
        for kind, tubes in (("gt", self.ground_truth), ("det", self.detections)):
            for i, tube in enumerate(tubes):
                label = f"{kind} tube #{i}"
                if tube.class_id not in self.classes:
                    raise ValueError(f"{label} references undeclared class {tube.class_id}")
                if tube.video_id not in self.video_frames:
                    raise ValueError(f"{label} references undeclared video {tube.video_id!r}")
                n = self.video_frames[tube.video_id]
                if tube.start_frame < 0 or tube.end_frame >= n:
                    raise ValueError(
                        f"{label} frames [{tube.start_frame}, {tube.end_frame}] "
                        f"outside video {tube.video_id!r} with {n} frames"
                    )
                if kind == "gt" and tube.score != 1.0:
                    raise ValueError(f"{label} must have score 1, got {tube.score}")
        for name, progress, tubes in (
            ("gt_progress", self.gt_progress, self.ground_truth),
            ("det_progress", self.det_progress, self.detections),
        ):
            for i, values in progress.items():
                if not 0 <= i < len(tubes):
                    raise ValueError(f"{name} keyed by unknown tube index {i}")
                if len(values) != tubes[i].n_frames:
                    raise ValueError(
                        f"{name}[{i}] has {len(values)} values for a "
                        f"{tubes[i].n_frames}-frame tube"
                    )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.classes == other.classes
            and self.video_frames == other.video_frames
            and self.ground_truth == other.ground_truth
            and self.detections == other.detections
            and _progress_equal(self.gt_progress, other.gt_progress)
            and _progress_equal(self.det_progress, other.det_progress)
        )


def _progress_equal(a: Mapping[int, np.ndarray], b: Mapping[int, np.ndarray]) -> bool:
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


def progress_targets(tube: Tube) -> np.ndarray:
    """Per-frame progress targets: the fraction of the tube elapsed at each frame.

    Targets ramp linearly from 0 at the first frame to 1 at the last.  A
    single-frame tube gets the single value 1.0: an action contained in one
    frame is complete at that frame.
    """
    n = tube.n_frames
    if n == 1:
        return np.array([1.0])
    return np.arange(n, dtype=float) / (n - 1)


def spatial_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, 0 when disjoint."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def tube_iou(a: Tube, b: Tube) -> float:
    """Spatio-temporal overlap of two tubes in the same video coordinate system.

    Temporal IoU of the two frame ranges, multiplied by the mean spatial IoU
    over the frames both tubes cover.  Temporally disjoint tubes score 0.
    """
    lo = max(a.start_frame, b.start_frame)
    hi = min(a.end_frame, b.end_frame)
    if lo > hi:
        return 0.0
    inter = hi - lo + 1
    union = a.n_frames + b.n_frames - inter
    spatial = sum(spatial_iou(a.box_at(f), b.box_at(f)) for f in range(lo, hi + 1))
    return (inter / union) * (spatial / inter)


@dataclass(frozen=True)
class ScoredBox:
    """A per-frame detector output before linking."""

    box: BoundingBox
    class_id: int
    score: float


def link_detections(
    per_frame_boxes: Mapping[int, Sequence[ScoredBox]],
    link_iou_threshold: float,
    video_id: str = "",
) -> list[Tube]:
    """Greedily link per-frame scored boxes into class-consistent tubes.

    Walks frames in order; each open tube claims the unclaimed same-class box
    with the highest spatial IoU against its last box, provided that IoU is at
    least ``link_iou_threshold``.  Ties break toward the higher-scored box,
    then the lower box index.  Tubes with no match close; unclaimed boxes open
    new tubes.  A tube's score is the mean of its box scores.
    """
    if not per_frame_boxes:
        return []

    open_tubes: list[dict] = []
    finished: list[dict] = []
    first, last = min(per_frame_boxes), max(per_frame_boxes)
    for frame in range(first, last + 1):
        boxes = list(per_frame_boxes.get(frame, ()))
        claimed = [False] * len(boxes)
        survivors = []
        for t in open_tubes:
            best_idx = -1
            best_key = None
            for idx, sb in enumerate(boxes):
                if claimed[idx] or sb.class_id != t["class_id"]:
                    continue
                iou = spatial_iou(t["boxes"][-1], sb.box)
                if iou < link_iou_threshold:
                    continue
                key = (iou, sb.score, -idx)
                if best_key is None or key > best_key:
                    best_idx, best_key = idx, key
            if best_idx >= 0:
                claimed[best_idx] = True
                t["boxes"].append(boxes[best_idx].box)
                t["scores"].append(boxes[best_idx].score)
                survivors.append(t)
            else:
                finished.append(t)
        open_tubes = survivors
        for idx, sb in enumerate(boxes):
            if not claimed[idx]:
                open_tubes.append(
                    {
                        "class_id": sb.class_id,
                        "start": frame,
                        "boxes": [sb.box],
                        "scores": [sb.score],
                    }
                )
    finished.extend(open_tubes)

    return [
        Tube(
            video_id=video_id,
            class_id=t["class_id"],
            start_frame=t["start"],
            end_frame=t["start"] + len(t["boxes"]) - 1,
            boxes=tuple(t["boxes"]),
            score=float(np.mean(t["scores"])),
        )
        for t in finished
    ]
