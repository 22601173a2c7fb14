"""Evaluation protocols: framewise MSE, progress-gated AP, and tube-level AP.

All AP variants share one greedy matcher: detections are visited in descending
score order and matched to the highest-overlap ground truth of the right class
(and frame/video scope); a ground truth can satisfy at most one detection.
Average precision is the exact area under the stepwise precision-recall curve.
Classes with no ground truth have undefined AP and are excluded from the mean;
the exclusion is recorded on the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tubes import Dataset, Tube, progress_targets, spatial_iou, tube_iou

VIDEO_AP_TAUS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
PARTIAL_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class MatchParams:
    iou_threshold: float = 0.5
    progress_margin: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in (0, 1]")
        if not 0.0 <= self.progress_margin <= 1.0:
            raise ValueError("progress_margin must be in [0, 1]")


@dataclass(frozen=True)
class BoxObservation:
    """A single per-frame box: a detection (with score and optional predicted
    progress) or a ground truth (score 1, progress holding the target)."""

    video_id: str
    frame: int
    class_id: int
    box: object
    score: float = 1.0
    progress: float | None = None


@dataclass(frozen=True)
class MatchRecord:
    class_id: int
    detection_index: int
    score: float
    matched_gt: int | None
    iou: float
    progress_error: float | None
    true_positive: bool


@dataclass
class EvalReport:
    metric: str
    params: dict
    per_class: dict[int, float]
    mean: float
    matches: tuple[MatchRecord, ...] = ()
    excluded_classes: tuple[int, ...] = ()


def _report(metric, params, per_class, matches=(), excluded=()):
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return EvalReport(
        metric=metric,
        params=dict(params),
        per_class=dict(sorted(per_class.items())),
        mean=mean,
        matches=tuple(matches),
        excluded_classes=tuple(sorted(excluded)),
    )


def framewise_mse(tubes: Sequence[Tube], predictions: Sequence[np.ndarray]) -> EvalReport:
    """Mean squared progress error on ground-truth tubes, pooled per class."""
    if len(tubes) != len(predictions):
        raise ValueError("one prediction sequence per tube required")
    sq_err: dict[int, list[np.ndarray]] = {}
    for tube, pred in zip(tubes, predictions):
        pred = np.asarray(pred, dtype=float).ravel()
        if len(pred) != tube.n_frames:
            raise ValueError(
                f"{len(pred)} predictions for a {tube.n_frames}-frame tube"
            )
        sq_err.setdefault(tube.class_id, []).append((pred - progress_targets(tube)) ** 2)
    per_class = {c: float(np.mean(np.concatenate(v))) for c, v in sq_err.items()}
    return _report("mse", {}, per_class)


def average_precision(true_positive_flags, n_gt: int) -> float:
    """Area under the stepwise precision-recall curve.

    ``true_positive_flags`` must already be ordered by descending score.
    """
    if n_gt <= 0:
        raise ValueError("average precision is undefined without ground truth")
    flags = np.asarray(true_positive_flags, dtype=bool)
    if len(flags) == 0:
        return 0.0
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, len(flags) + 1)
    recall = tp / n_gt
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum(precision * (recall - prev_recall)))


def _score_order(scores: Sequence[float]) -> np.ndarray:
    # stable: ties keep input order, for deterministic reports
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def _greedy_match(
    detections: Sequence,
    ground_truths: Sequence,
    overlap: Callable,
    scope: Callable,
    iou_threshold: float,
    progress_margin: float | None,
    det_progress: Callable,
    gt_progress: Callable,
) -> list[MatchRecord]:
    """Score-descending greedy matching within (video, frame/tube, class) scopes."""
    gt_by_scope: dict = {}
    for j, gt in enumerate(ground_truths):
        gt_by_scope.setdefault(scope(gt), []).append(j)
    taken = [False] * len(ground_truths)
    records = []
    order = _score_order([d.score for d in detections])
    for rank in order:
        det = detections[rank]
        best_j, best_iou = None, 0.0
        for j in gt_by_scope.get(scope(det), ()):
            iou = overlap(det, ground_truths[j])
            if iou > best_iou:
                best_j, best_iou = j, iou
        perr = None
        hit = best_j is not None and best_iou >= iou_threshold and not taken[best_j]
        if hit and progress_margin is not None:
            perr = abs(det_progress(det) - gt_progress(ground_truths[best_j]))
            hit = perr <= progress_margin
        if hit:
            taken[best_j] = True
        records.append(
            MatchRecord(
                class_id=det.class_id,
                detection_index=int(rank),
                score=det.score,
                matched_gt=best_j if hit else None,
                iou=best_iou,
                progress_error=perr,
                true_positive=hit,
            )
        )
    return records


def _ap_by_class(detections, ground_truths, match) -> tuple[dict, list, set]:
    gt_classes = {g.class_id for g in ground_truths}
    det_classes = {d.class_id for d in detections}
    per_class, all_records = {}, []
    for class_id in sorted(gt_classes):
        dets = [d for d in detections if d.class_id == class_id]
        gts = [g for g in ground_truths if g.class_id == class_id]
        records = match(dets, gts)
        all_records.extend(records)
        per_class[class_id] = average_precision(
            [r.true_positive for r in records], len(gts)
        )
    return per_class, all_records, det_classes - gt_classes


def frame_ap(
    detections: Sequence[BoxObservation],
    ground_truths: Sequence[BoxObservation],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """AP of per-frame detections matched by spatial IoU within each frame."""
    per_class, records, excluded = _ap_by_class(
        detections,
        ground_truths,
        lambda d, g: _greedy_match(
            d,
            g,
            overlap=lambda a, b: spatial_iou(a.box, b.box),
            scope=lambda o: (o.video_id, o.frame),
            iou_threshold=iou_threshold,
            progress_margin=None,
            det_progress=None,
            gt_progress=None,
        ),
    )
    return _report("frame_ap", {"iou_threshold": iou_threshold}, per_class, records, excluded)


def app(
    detections: Sequence[BoxObservation],
    ground_truths: Sequence[BoxObservation],
    iou_threshold: float = 0.5,
    progress_margin: float = 1.0,
) -> EvalReport:
    """Frame AP where a true positive also needs progress error within the margin."""
    for name, obs in (("detection", detections), ("ground truth", ground_truths)):
        if any(o.progress is None for o in obs):
            raise ValueError(f"every {name} needs a progress value")
    per_class, records, excluded = _ap_by_class(
        detections,
        ground_truths,
        lambda d, g: _greedy_match(
            d,
            g,
            overlap=lambda a, b: spatial_iou(a.box, b.box),
            scope=lambda o: (o.video_id, o.frame),
            iou_threshold=iou_threshold,
            progress_margin=progress_margin,
            det_progress=lambda o: o.progress,
            gt_progress=lambda o: o.progress,
        ),
    )
    return _report(
        "app",
        {"iou_threshold": iou_threshold, "progress_margin": progress_margin},
        per_class,
        records,
        excluded,
    )


def video_ap(
    detected_tubes: Sequence[Tube],
    ground_truth_tubes: Sequence[Tube],
    taus: Sequence[float] = VIDEO_AP_TAUS,
) -> dict[float, EvalReport]:
    """AP over whole tubes matched by spatio-temporal IoU, one report per threshold."""
    out = {}
    for tau in taus:
        per_class, records, excluded = _ap_by_class(
            detected_tubes,
            ground_truth_tubes,
            lambda d, g, tau=tau: _greedy_match(
                d,
                g,
                overlap=lambda a, b: tube_iou(a, b),
                scope=lambda t: t.video_id,
                iou_threshold=tau,
                progress_margin=None,
                det_progress=None,
                gt_progress=None,
            ),
        )
        out[tau] = _report(
            "video_ap", {"iou_threshold": tau}, per_class, records, excluded
        )
    return out


def frame_observations(
    tubes: Sequence[Tube],
    progress: Mapping[int, np.ndarray] | None = None,
    use_targets: bool = False,
) -> list[BoxObservation]:
    """Explode tubes into per-frame observations.

    ``progress`` attaches predicted values by tube index; with ``use_targets``
    the tube's own progress targets are attached instead (ground-truth side).
    """
    obs = []
    for i, tube in enumerate(tubes):
        if use_targets:
            values = progress_targets(tube)
        elif progress is not None and i in progress:
            values = np.asarray(progress[i], dtype=float)
        else:
            values = None
        for offset, frame in enumerate(tube.frames):
            obs.append(
                BoxObservation(
                    video_id=tube.video_id,
                    frame=frame,
                    class_id=tube.class_id,
                    box=tube.box_at(frame),
                    score=tube.score,
                    progress=None if values is None else float(values[offset]),
                )
            )
    return obs


def partial_window(n_frames: int, start_fraction: float, end_fraction: float) -> tuple[int, int]:
    """Frame offsets [lo, hi) covered by a fractional window of the tube."""
    if not 0.0 <= start_fraction < end_fraction <= 1.0:
        raise ValueError(f"need 0 <= start < end <= 1, got ({start_fraction}, {end_fraction})")
    lo = int(np.floor(start_fraction * n_frames))
    hi = int(np.ceil(end_fraction * n_frames))
    if hi <= lo:
        raise ValueError("empty window")
    return lo, hi


def partial_tube_mse(
    predict: Callable[[Tube, np.ndarray], np.ndarray],
    samples: Sequence[tuple[Tube, np.ndarray]],
    start_fraction: float,
    end_fraction: float,
) -> EvalReport:
    """MSE when only a fractional window of each tube is observed.

    ``predict`` receives the windowed tube and its windowed feature rows and
    runs cold from the window start; targets are the original values restricted
    to the window, never rescaled.
    """
    sq_err: dict[int, list[np.ndarray]] = {}
    for tube, rows in samples:
        lo, hi = partial_window(tube.n_frames, start_fraction, end_fraction)
        window = tube.window(lo, hi)
        targets = progress_targets(tube)[lo:hi]
        preds = np.asarray(predict(window, rows[lo:hi]), dtype=float).ravel()
        if len(preds) != hi - lo:
            raise ValueError("predictor returned wrong length")
        sq_err.setdefault(tube.class_id, []).append((preds - targets) ** 2)
    per_class = {c: float(np.mean(np.concatenate(v))) for c, v in sq_err.items()}
    return _report(
        "partial_mse",
        {"start_fraction": start_fraction, "end_fraction": end_fraction},
        per_class,
    )


def partial_tube_grid(
    predict: Callable[[Tube, np.ndarray], np.ndarray],
    samples: Sequence[tuple[Tube, np.ndarray]],
    fractions: Sequence[float] = PARTIAL_FRACTIONS,
) -> dict[tuple[float, float], EvalReport]:
    """The full grid of fractional windows (every start < end pair)."""
    out = {}
    for i, s in enumerate(fractions):
        for e in fractions[i + 1 :]:
            out[(s, e)] = partial_tube_mse(predict, samples, s, e)
    return out


def mse_by_progress_bin(
    tubes: Sequence[Tube], predictions: Sequence[np.ndarray], n_bins: int = 10
) -> list[tuple[float, float, float, int]]:
    """(bin_lo, bin_hi, mse, count) rows, binning frames by target progress."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    targets, errors = [], []
    for tube, pred in zip(tubes, predictions):
        pred = np.asarray(pred, dtype=float).ravel()
        t = progress_targets(tube)
        targets.append(t)
        errors.append((pred - t) ** 2)
    targets = np.concatenate(targets)
    errors = np.concatenate(errors)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    rows = []
    for b in range(n_bins):
        lo, hi = edges[b], edges[b + 1]
        mask = (targets >= lo) & (targets < hi if b < n_bins - 1 else targets <= hi)
        count = int(mask.sum())
        mse = float(errors[mask].mean()) if count else 0.0
        rows.append((float(lo), float(hi), mse, count))
    return rows


def mapp_curve(
    detections: Sequence[BoxObservation],
    ground_truths: Sequence[BoxObservation],
    iou_threshold: float = 0.5,
    margins: Sequence[float] = tuple(np.round(np.linspace(0.0, 1.0, 21), 2)),
) -> list[tuple[float, float]]:
    """(margin, mean APP) rows for the margin-sweep curve."""
    return [
        (float(m), app(detections, ground_truths, iou_threshold, float(m)).mean)
        for m in margins
    ]
