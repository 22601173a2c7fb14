"""File formats: annotation text files, binary feature files, checkpoints, reports.

One annotation dialect covers ground truth, detections, and optional per-frame
progress values; writing then parsing is lossless (floats are emitted in their
shortest round-trip form).  Feature maps and model weights are versioned
little-endian binaries with 32-bit payloads.  All parsers raise typed errors
that name the offending line or byte offset and never abort the process.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import FeatureMap
from .metrics import EvalReport
from .model import ModelConfig, ModelParams, RECURRENT, STATIC, param_shapes
from .tubes import BoundingBox, ClassInfo, Dataset, Tube

ANNOTATION_HEADER = "progresskit-annotations"
ANNOTATION_VERSION = 1
FEATURE_MAGIC = b"PKFT"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"PKCK"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Base class for every malformed-file error this package raises."""


class AnnotationError(FormatError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class FeatureFileError(FormatError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f"offset {offset}: " if offset is not None else ""
        super().__init__(f"{where}{message}")


class CheckpointError(FormatError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# annotations


def write_annotations(dataset: Dataset, path) -> None:
    """Write a dataset in canonical form: sorted header, tubes in stored order."""
    lines = [f"{ANNOTATION_HEADER} {ANNOTATION_VERSION}"]
    for class_id in sorted(dataset.classes):
        info = dataset.classes[class_id]
        if any(ch.isspace() for ch in info.name) or not info.name:
            raise AnnotationError(f"class name {info.name!r} must be a non-empty token")
        lines.append(f"class {class_id} {int(info.cyclic)} {info.name}")
    for video_id in sorted(dataset.video_frames):
        if any(ch.isspace() for ch in video_id) or not video_id:
            raise AnnotationError(f"video id {video_id!r} must be a non-empty token")
        lines.append(f"video {video_id} {dataset.video_frames[video_id]}")
    for kind, tubes, progress in (
        ("gt", dataset.ground_truth, dataset.gt_progress),
        ("det", dataset.detections, dataset.det_progress),
    ):
        for i, tube in enumerate(tubes):
            lines.append(
                f"tube {kind} {tube.video_id} {tube.class_id} {_fmt(tube.score)} "
                f"{tube.start_frame} {tube.n_frames}"
            )
            for box in tube.boxes:
                lines.append(
                    f"box {_fmt(box.x_min)} {_fmt(box.y_min)} "
                    f"{_fmt(box.x_max)} {_fmt(box.y_max)}"
                )
            if i in progress:
                lines.append("progress " + " ".join(_fmt(v) for v in progress[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class _LineReader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    @property
    def line_no(self) -> int:
        return self.pos  # 1-based number of the last line handed out

    def peek(self) -> str | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def take(self) -> str:
        line = self.peek()
        if line is None:
            raise AnnotationError("unexpected end of file", self.pos)
        self.pos += 1
        return line


def _parse_int(token: str, what: str, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise AnnotationError(f"bad {what} {token!r}", line) from None


def _parse_float(token: str, what: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise AnnotationError(f"bad {what} {token!r}", line) from None
    if not np.isfinite(value):
        raise AnnotationError(f"non-finite {what} {token!r}", line)
    return value


def parse_annotations(path) -> Dataset:
    """Parse an annotation file; malformed input raises AnnotationError with a line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise AnnotationError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise AnnotationError(f"not a UTF-8 text file: {exc}") from exc
    reader = _LineReader(text)

    header = reader.take().split()
    if len(header) != 2 or header[0] != ANNOTATION_HEADER:
        raise AnnotationError(f"expected '{ANNOTATION_HEADER} <version>' header", 1)
    if _parse_int(header[1], "version", 1) != ANNOTATION_VERSION:
        raise AnnotationError(f"unsupported version {header[1]}", 1)

    classes: dict[int, ClassInfo] = {}
    video_frames: dict[str, int] = {}
    tubes: dict[str, list[Tube]] = {"gt": [], "det": []}
    progress: dict[str, dict[int, np.ndarray]] = {"gt": {}, "det": {}}

    while (line := reader.peek()) is not None:
        fields = line.split()
        line_no = reader.pos + 1
        if not fields:
            raise AnnotationError("blank line not allowed", line_no)
        keyword = fields[0]
        if keyword == "class":
            reader.take()
            if len(fields) != 4:
                raise AnnotationError("class wants: class <id> <cyclic> <name>", line_no)
            class_id = _parse_int(fields[1], "class id", line_no)
            cyclic = _parse_int(fields[2], "cyclic flag", line_no)
            if cyclic not in (0, 1):
                raise AnnotationError(f"cyclic flag must be 0 or 1, got {cyclic}", line_no)
            if class_id in classes:
                raise AnnotationError(f"duplicate class {class_id}", line_no)
            classes[class_id] = ClassInfo(class_id, fields[3], bool(cyclic))
        elif keyword == "video":
            reader.take()
            if len(fields) != 3:
                raise AnnotationError("video wants: video <id> <frames>", line_no)
            if fields[1] in video_frames:
                raise AnnotationError(f"duplicate video {fields[1]!r}", line_no)
            n = _parse_int(fields[2], "frame count", line_no)
            if n < 1:
                raise AnnotationError(f"frame count must be >= 1, got {n}", line_no)
            video_frames[fields[1]] = n
        elif keyword == "tube":
            _parse_tube(reader, fields, line_no, classes, video_frames, tubes, progress)
        else:
            raise AnnotationError(f"unknown record {keyword!r}", line_no)

    try:
        return Dataset(
            classes=classes,
            video_frames=video_frames,
            ground_truth=tuple(tubes["gt"]),
            detections=tuple(tubes["det"]),
            gt_progress=progress["gt"],
            det_progress=progress["det"],
        )
    except ValueError as exc:
        raise AnnotationError(str(exc)) from exc


def _parse_tube(reader, fields, line_no, classes, video_frames, tubes, progress):
    reader.take()
    if len(fields) != 7:
        raise AnnotationError(
            "tube wants: tube <gt|det> <video> <class> <score> <start> <n_frames>",
            line_no,
        )
    kind = fields[1]
    if kind not in ("gt", "det"):
        raise AnnotationError(f"tube kind must be gt or det, got {kind!r}", line_no)
    video_id = fields[2]
    if video_id not in video_frames:
        raise AnnotationError(f"tube references undeclared video {video_id!r}", line_no)
    class_id = _parse_int(fields[3], "class id", line_no)
    if class_id not in classes:
        raise AnnotationError(f"tube references undeclared class {class_id}", line_no)
    score = _parse_float(fields[4], "score", line_no)
    start = _parse_int(fields[5], "start frame", line_no)
    n_frames = _parse_int(fields[6], "frame count", line_no)
    if n_frames < 1:
        raise AnnotationError(f"tube frame count must be >= 1, got {n_frames}", line_no)

    boxes = []
    for _ in range(n_frames):
        box_line_no = reader.pos + 1
        box_fields = reader.take().split()
        if len(box_fields) != 5 or box_fields[0] != "box":
            raise AnnotationError(
                f"expected 'box <x_min> <y_min> <x_max> <y_max>' "
                f"({len(boxes)} of {n_frames} read)",
                box_line_no,
            )
        coords = [
            _parse_float(tok, name, box_line_no)
            for tok, name in zip(box_fields[1:], ("x_min", "y_min", "x_max", "y_max"))
        ]
        try:
            boxes.append(BoundingBox(*coords))
        except ValueError as exc:
            raise AnnotationError(str(exc), box_line_no) from exc
    try:
        tube = Tube(
            video_id=video_id,
            class_id=class_id,
            start_frame=start,
            end_frame=start + n_frames - 1,
            boxes=tuple(boxes),
            score=score,
        )
    except ValueError as exc:
        raise AnnotationError(str(exc), line_no) from exc

    next_line = reader.peek()
    if next_line is not None and next_line.split()[:1] == ["progress"]:
        prog_line_no = reader.pos + 1
        values = reader.take().split()[1:]
        if len(values) != n_frames:
            raise AnnotationError(
                f"progress has {len(values)} values for a {n_frames}-frame tube",
                prog_line_no,
            )
        parsed = np.array(
            [_parse_float(v, "progress value", prog_line_no) for v in values]
        )
        if parsed.size and (parsed.min() < 0.0 or parsed.max() > 1.0):
            raise AnnotationError("progress values must lie in [0, 1]", prog_line_no)
        progress[kind][len(tubes[kind])] = parsed
    tubes[kind].append(tube)


# ---------------------------------------------------------------------------
# feature files


class _ByteReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FeatureFileError(
                f"truncated while reading {what} ({size} bytes wanted)", self.pos
            )
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def read_bytes(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.data):
            raise FeatureFileError(
                f"truncated while reading {what} ({size} bytes wanted)", self.pos
            )
        out = self.data[self.pos : self.pos + size]
        self.pos += size
        return out


def write_feature_file(path, video_id: str, maps: Sequence[FeatureMap]) -> None:
    """Binary layout: magic, version, video id, frame count, then per frame the
    grid header (height, width, channels, spatial scale) and f32 LE data in
    row-major channel-last order."""
    encoded = video_id.encode("utf-8")
    parts = [
        FEATURE_MAGIC,
        struct.pack("<I", FEATURE_VERSION),
        struct.pack("<H", len(encoded)),
        encoded,
        struct.pack("<I", len(maps)),
    ]
    for fmap in maps:
        parts.append(
            struct.pack("<HHHf", fmap.height, fmap.width, fmap.channels, fmap.spatial_scale)
        )
        parts.append(fmap.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_feature_file(path) -> tuple[str, list[FeatureMap]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FeatureFileError(f"cannot read {path}: {exc}") from exc
    r = _ByteReader(data)
    magic = r.read_bytes(4, "magic")
    if magic != FEATURE_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}", 0)
    (version,) = r.read("<I", "version")
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"unsupported version {version}", 4)
    (id_len,) = r.read("<H", "video id length")
    try:
        video_id = r.read_bytes(id_len, "video id").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FeatureFileError(f"video id is not UTF-8: {exc}", r.pos) from exc
    (n_frames,) = r.read("<I", "frame count")
    maps = []
    for i in range(n_frames):
        header_at = r.pos
        h, w, c, scale = r.read("<HHHf", f"frame {i} header")
        if min(h, w, c) < 1:
            raise FeatureFileError(f"frame {i}: degenerate grid {h}x{w}x{c}", header_at)
        if not (np.isfinite(scale) and scale > 0):
            raise FeatureFileError(f"frame {i}: bad spatial scale {scale}", header_at)
        raw = r.read_bytes(4 * h * w * c, f"frame {i} data")
        grid = np.frombuffer(raw, dtype="<f4").reshape(h, w, c)
        if not np.all(np.isfinite(grid)):
            raise FeatureFileError(f"frame {i}: non-finite values", header_at)
        maps.append(FeatureMap(float(scale), grid))
    if r.pos != len(data):
        raise FeatureFileError(f"{len(data) - r.pos} trailing bytes", r.pos)
    return video_id, maps


def write_feature_dir(directory, feature_maps: Mapping[str, Sequence[FeatureMap]]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for video_id, maps in sorted(feature_maps.items()):
        write_feature_file(directory / f"{video_id}.feat", video_id, maps)


def load_feature_dir(directory, video_ids: Iterable[str]) -> dict[str, list[FeatureMap]]:
    directory = Path(directory)
    out = {}
    for video_id in video_ids:
        path = directory / f"{video_id}.feat"
        stored_id, maps = read_feature_file(path)
        if stored_id != video_id:
            raise FeatureFileError(f"{path} stores video {stored_id!r}, expected {video_id!r}")
        out[video_id] = maps
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams) -> None:
    cfg = params.config
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<B", 0 if cfg.variant == RECURRENT else 1),
        struct.pack("<II", cfg.input_dim, cfg.fc7_dim),
        struct.pack("<I", len(cfg.recurrent_dims)),
        struct.pack(f"<{len(cfg.recurrent_dims)}I", *cfg.recurrent_dims),
        struct.pack("<f", cfg.dropout_rate),
    ]
    for name in param_shapes(cfg):
        parts.append(params[name].astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> ModelParams:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    r = _ByteReader(data)
    try:
        magic = r.read_bytes(4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        (version,) = r.read("<I", "version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported version {version}")
        (variant_code,) = r.read("<B", "variant")
        if variant_code not in (0, 1):
            raise CheckpointError(f"unknown variant code {variant_code}")
        input_dim, fc7_dim = r.read("<II", "dims")
        (n_layers,) = r.read("<I", "layer count")
        if n_layers == 0 or n_layers > 64:
            raise CheckpointError(f"implausible layer count {n_layers}")
        dims = r.read(f"<{n_layers}I", "layer dims")
        (dropout,) = r.read("<f", "dropout rate")
        config = ModelConfig(
            input_dim=input_dim,
            fc7_dim=fc7_dim,
            recurrent_dims=tuple(int(d) for d in dims),
            dropout_rate=float(np.float32(dropout)),
            variant=RECURRENT if variant_code == 0 else STATIC,
        )
    except (FeatureFileError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    arrays = {}
    for name, shape in param_shapes(config).items():
        size = int(np.prod(shape)) if shape else 1
        raw = r.read_bytes(4 * size, name)
        arrays[name] = np.frombuffer(raw, dtype="<f4").astype(float).reshape(shape)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes")
    try:
        return ModelParams(config, arrays)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


# ---------------------------------------------------------------------------
# reports and traces


def report_to_dict(report: EvalReport) -> dict:
    return {
        "metric": report.metric,
        "params": report.params,
        "per_class": {str(k): v for k, v in report.per_class.items()},
        "mean": report.mean,
        "excluded_classes": list(report.excluded_classes),
    }


def write_report_json(reports, path) -> None:
    """``reports`` is one EvalReport or a mapping of label -> EvalReport."""
    if isinstance(reports, EvalReport):
        payload = report_to_dict(reports)
    else:
        payload = {str(k): report_to_dict(v) for k, v in sorted(reports.items())}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def report_to_text(report: EvalReport, class_names: Mapping[int, str] | None = None) -> str:
    lines = [f"{report.metric}  " + " ".join(f"{k}={v}" for k, v in report.params.items())]
    for class_id, value in report.per_class.items():
        name = class_names.get(class_id, str(class_id)) if class_names else str(class_id)
        lines.append(f"  {name:<24} {value:.6f}")
    lines.append(f"  {'mean':<24} {report.mean:.6f}")
    if report.excluded_classes:
        lines.append(f"  excluded (no ground truth): {list(report.excluded_classes)}")
    return "\n".join(lines)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_loss_trace_csv(trace, path) -> None:
    write_csv(path, ("epoch", "step", "loss"), trace)
