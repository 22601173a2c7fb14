import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from progresskit.features import FeatureMap
from progresskit.fileio import (
    AnnotationError,
    CheckpointError,
    FeatureFileError,
    FormatError,
    load_checkpoint,
    load_feature_dir,
    parse_annotations,
    read_feature_file,
    report_to_text,
    save_checkpoint,
    write_annotations,
    write_csv,
    write_feature_dir,
    write_feature_file,
    write_loss_trace_csv,
    write_report_json,
)
from progresskit.metrics import framewise_mse
from progresskit.model import ModelConfig, ModelParams
from progresskit.synth import DetectorNoise, SynthConfig, generate
from progresskit.training import TraceEntry, xavier_init
from progresskit.tubes import BoundingBox, ClassInfo, Dataset, Tube, progress_targets


def sample_dataset():
    config = SynthConfig(
        n_classes=2,
        videos_per_class=2,
        length_range=(4, 7),
        padding_range=(1, 3),
        map_height=3,
        map_width=3,
        channels=2,
        seed=3,
        detector=DetectorNoise(score_sigma=0.05, box_jitter=0.5, dilate_max=2),
    )
    dataset, maps = generate(config)
    for i, tube in enumerate(dataset.ground_truth):
        dataset.gt_progress[i] = progress_targets(tube)
    for i, tube in enumerate(dataset.detections):
        dataset.det_progress[i] = np.round(np.linspace(0.1, 0.9, tube.n_frames), 6)
    return dataset, maps


class TestAnnotationRoundTrip:
    def test_write_parse_identity(self, tmp_path):
        dataset, _ = sample_dataset()
        path = tmp_path / "a.txt"
        write_annotations(dataset, path)
        assert parse_annotations(path) == dataset

    def test_canonical_rewrite_is_byte_identical(self, tmp_path):
        dataset, _ = sample_dataset()
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        write_annotations(dataset, p1)
        write_annotations(parse_annotations(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_subpixel_coordinates_roundtrip_losslessly(self, tmp_path):
        box = BoundingBox(0.123456789123, 1 / 3, 10.999999999999, 7.000000001)
        tube = Tube("v", 0, 0, 0, (box,), 1.0)
        dataset = Dataset(
            classes={0: ClassInfo(0, "a", False)},
            video_frames={"v": 5},
            ground_truth=(tube,),
        )
        path = tmp_path / "a.txt"
        write_annotations(dataset, path)
        parsed = parse_annotations(path)
        assert parsed.ground_truth[0].boxes[0] == box


class TestAnnotationErrors:
    def write(self, tmp_path, text):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        return path

    def test_truncated_file_names_line(self, tmp_path):
        dataset, _ = sample_dataset()
        path = tmp_path / "a.txt"
        write_annotations(dataset, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(AnnotationError) as info:
            parse_annotations(path)
        assert info.value.line is not None

    def test_undeclared_video_named(self, tmp_path):
        path = self.write(
            tmp_path,
            "progresskit-annotations 1\n"
            "class 0 0 a\n"
            "tube gt ghost 0 1.0 0 1\n"
            "box 0.0 0.0 1.0 1.0\n",
        )
        with pytest.raises(AnnotationError, match="ghost"):
            parse_annotations(path)

    def test_bad_header(self, tmp_path):
        path = self.write(tmp_path, "something else\n")
        with pytest.raises(AnnotationError, match="header"):
            parse_annotations(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = self.write(tmp_path, "progresskit-annotations 99\n")
        with pytest.raises(AnnotationError, match="version"):
            parse_annotations(path)

    def test_progress_length_mismatch(self, tmp_path):
        path = self.write(
            tmp_path,
            "progresskit-annotations 1\n"
            "class 0 0 a\n"
            "video v 4\n"
            "tube gt v 0 1.0 0 2\n"
            "box 0.0 0.0 1.0 1.0\n"
            "box 0.0 0.0 1.0 1.0\n"
            "progress 0.5\n",
        )
        with pytest.raises(AnnotationError, match="progress"):
            parse_annotations(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(AnnotationError):
            parse_annotations(tmp_path / "nope.txt")


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    mutation=st.tuples(st.integers(0, 4000), st.binary(min_size=1, max_size=12)),
)
def test_fuzzed_annotations_never_abort(tmp_path, mutation):
    dataset, _ = sample_dataset()
    path = tmp_path / "fuzz.txt"
    write_annotations(dataset, path)
    raw = bytearray(path.read_bytes())
    pos, payload = mutation
    pos = pos % (len(raw) + 1)
    raw[pos:pos] = payload
    path.write_bytes(bytes(raw))
    try:
        parse_annotations(path)
    except AnnotationError:
        pass  # rejecting with a typed error is the contract


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(data=st.binary(min_size=0, max_size=400))
def test_random_bytes_never_abort_either_parser(tmp_path, data):
    path = tmp_path / "junk.bin"
    path.write_bytes(data)
    for parser in (parse_annotations, read_feature_file, load_checkpoint):
        try:
            parser(path)
        except FormatError:
            pass


class TestFeatureFiles:
    def test_roundtrip(self, tmp_path):
        _, maps = sample_dataset()
        video_id = next(iter(maps))
        path = tmp_path / "v.feat"
        write_feature_file(path, video_id, maps[video_id])
        stored_id, loaded = read_feature_file(path)
        assert stored_id == video_id
        assert len(loaded) == len(maps[video_id])
        for a, b in zip(loaded, maps[video_id]):
            assert a.spatial_scale == pytest.approx(b.spatial_scale, rel=1e-6)
            np.testing.assert_array_equal(a.data, b.data)  # both stored as f32

    def test_truncation_names_offset(self, tmp_path):
        _, maps = sample_dataset()
        video_id = next(iter(maps))
        path = tmp_path / "v.feat"
        write_feature_file(path, video_id, maps[video_id])
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 7])
        with pytest.raises(FeatureFileError) as info:
            read_feature_file(path)
        assert info.value.offset is not None

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "v.feat"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FeatureFileError, match="magic"):
            read_feature_file(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        _, maps = sample_dataset()
        video_id = next(iter(maps))
        path = tmp_path / "v.feat"
        write_feature_file(path, video_id, maps[video_id])
        path.write_bytes(path.read_bytes() + b"!")
        with pytest.raises(FeatureFileError, match="trailing"):
            read_feature_file(path)

    def test_directory_roundtrip_checks_ids(self, tmp_path):
        _, maps = sample_dataset()
        write_feature_dir(tmp_path / "features", maps)
        loaded = load_feature_dir(tmp_path / "features", sorted(maps))
        assert set(loaded) == set(maps)


class TestCheckpoints:
    def test_roundtrip_via_f32(self, tmp_path):
        config = ModelConfig(input_dim=6, fc7_dim=5, recurrent_dims=(4, 3), dropout_rate=0.5)
        params = xavier_init(config, np.random.default_rng(0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        assert loaded.config == config or (
            loaded.config.dropout_rate == pytest.approx(0.5) and
            loaded.config.recurrent_dims == config.recurrent_dims
        )
        for name in params.arrays:
            np.testing.assert_array_equal(
                loaded[name], params[name].astype(np.float32).astype(float)
            )

    def test_static_variant_roundtrip(self, tmp_path):
        config = ModelConfig(input_dim=4, fc7_dim=3, recurrent_dims=(2,), dropout_rate=0.0, variant="static")
        params = xavier_init(config, np.random.default_rng(1))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        assert load_checkpoint(path).config.variant == "static"

    def test_truncated_checkpoint(self, tmp_path):
        config = ModelConfig(input_dim=4, fc7_dim=3, recurrent_dims=(2,), dropout_rate=0.0)
        params = ModelParams.zeros(config)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestReportsAndCsv:
    def test_report_json_and_text(self, tmp_path):
        tube = Tube("v", 0, 0, 2, (BoundingBox(0, 0, 1, 1),) * 3)
        report = framewise_mse([tube], [np.array([0.1, 0.5, 0.9])])
        text = report_to_text(report, {0: "demo"})
        assert "demo" in text and "mean" in text
        path = tmp_path / "r.json"
        write_report_json(report, path)
        write_report_json({"a": report, "b": report}, tmp_path / "multi.json")
        assert path.read_text().startswith("{")

    def test_loss_trace_csv(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_loss_trace_csv([TraceEntry(0, 0, 0.5), TraceEntry(0, 1, 0.25)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,step,loss"
        assert lines[1] == "0,0,0.5"

    def test_write_csv_floats_roundtrip(self, tmp_path):
        path = tmp_path / "x.csv"
        write_csv(path, ("a", "b"), [(1, 1 / 3)])
        assert float(path.read_text().splitlines()[1].split(",")[1]) == 1 / 3
