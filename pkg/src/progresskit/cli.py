"""Command-line surface: generate data, train, predict, refine, evaluate, export.

Every command is deterministic given its inputs and ``--seed``; reruns produce
byte-identical output files.  Failures print a single ``error: ...`` line on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio, metrics
from .features import PoolingConfig, pool_tube_features
from .fileio import FormatError
from .model import (
    ModelConfig,
    baseline_constant,
    baseline_expected_length,
    baseline_random,
    dump_hidden_states,
    forward_tube,
)
from .refine import TrimParams, trim_range
from .synth import DetectorNoise, SynthConfig, generate
from .training import TrainConfig, TrainingError, class_mean_lengths, train
from .tubes import Dataset


def _parse_pair(text: str, sep: str, what: str) -> tuple[int, int]:
    try:
        a, b = text.split(sep)
        return int(a), int(b)
    except ValueError:
        raise ValueError(f"bad {what} {text!r}, expected e.g. 3{sep}3") from None


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise ValueError(f"bad {what} {text!r}, expected comma-separated ints") from None


def _parse_float_list(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError:
        raise ValueError(f"bad {what} {text!r}, expected comma-separated floats") from None


def _pooling(args) -> PoolingConfig:
    pool_h, pool_w = _parse_pair(args.pool, "x", "pool size")
    return PoolingConfig(pool_h, pool_w, _parse_int_list(args.levels, "levels"))


def _add_pool_flags(parser):
    parser.add_argument("--pool", default="3x3", help="region pool grid, e.g. 3x3")
    parser.add_argument("--levels", default="1,2,4", help="pyramid levels, e.g. 1,2,4")


def _load_features_for(dataset: Dataset, directory, tubes) -> dict:
    videos = sorted({t.video_id for t in tubes})
    return fileio.load_feature_dir(directory, videos)


def _selected_tubes(dataset: Dataset, which: str):
    if which == "gt":
        return dataset.ground_truth, dataset.gt_progress
    return dataset.detections, dataset.det_progress


# ---------------------------------------------------------------------------
# commands


def _cmd_gen_synth(args) -> int:
    cyclic = None
    if args.cyclic is not None:
        ids = set(_parse_int_list(args.cyclic, "cyclic class list")) if args.cyclic else set()
        cyclic = tuple(c in ids for c in range(args.classes))
    config = SynthConfig(
        n_classes=args.classes,
        cyclic=cyclic,
        videos_per_class=args.videos_per_class,
        length_range=_parse_pair(args.length, ":", "length range"),
        padding_range=_parse_pair(args.padding, ":", "padding range"),
        cycles=args.cycles,
        channels=args.channels,
        map_height=_parse_pair(args.map_size, "x", "map size")[0],
        map_width=_parse_pair(args.map_size, "x", "map size")[1],
        feature_noise=args.feature_noise,
        box_jitter=args.box_jitter,
        detector=DetectorNoise(
            score_sigma=args.det_score_sigma,
            drop_rate=args.det_drop,
            box_jitter=args.det_jitter,
            dilate_max=args.det_dilate,
        ),
        seed=args.seed,
        mapping_seed=args.mapping_seed,
    )
    dataset, feature_maps = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_annotations(dataset, out / "annotations.txt")
    fileio.write_feature_dir(out / "features", feature_maps)
    print(
        f"wrote {len(dataset.ground_truth)} ground-truth tubes, "
        f"{len(dataset.detections)} detections, "
        f"{len(dataset.video_frames)} videos to {out}"
    )
    return 0


def _cmd_train(args) -> int:
    dataset = fileio.parse_annotations(args.annotations)
    features = _load_features_for(dataset, args.features, dataset.ground_truth)
    pooling = _pooling(args)
    if not dataset.ground_truth:
        raise TrainingError("dataset has no ground-truth tubes")
    channels = features[dataset.ground_truth[0].video_id][0].channels
    model_config = ModelConfig(
        input_dim=pooling.blended_length(channels),
        fc7_dim=args.fc7_dim,
        recurrent_dims=_parse_int_list(args.rnn_dims, "rnn dims"),
        dropout_rate=args.dropout,
        variant=args.variant,
    )
    train_config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        loss=args.loss,
        curriculum=args.curriculum,
        stage2_epochs=args.stage2_epochs,
        subsample_max=args.subsample_max,
        augment=not args.no_augment,
    )
    params, trace = train(dataset, features, model_config, train_config, pooling)
    fileio.save_checkpoint(args.out, params)
    if args.trace:
        fileio.write_loss_trace_csv(trace, args.trace)
    print(f"trained {train_config.epochs} epochs, final loss {trace[-1].loss:.6f}, wrote {args.out}")
    return 0


def _cmd_predict(args) -> int:
    dataset = fileio.parse_annotations(args.annotations)
    params = fileio.load_checkpoint(args.checkpoint)
    pooling = _pooling(args)
    tubes, progress = _selected_tubes(dataset, args.tubes)
    if not tubes:
        raise ValueError(f"no {args.tubes} tubes to predict on")
    features = _load_features_for(dataset, args.features, tubes)
    for i, tube in enumerate(tubes):
        rows = pool_tube_features(features[tube.video_id], tube, pooling)
        progress[i] = forward_tube(params, rows)
    fileio.write_annotations(dataset, args.out)
    print(f"predicted progress for {len(tubes)} {args.tubes} tubes, wrote {args.out}")
    return 0


def _cmd_baselines(args) -> int:
    dataset = fileio.parse_annotations(args.annotations)
    tubes, progress = _selected_tubes(dataset, args.tubes)
    if not tubes:
        raise ValueError(f"no {args.tubes} tubes to predict on")
    rng = np.random.default_rng(args.seed)
    if args.method == "expected-length":
        source = (
            fileio.parse_annotations(args.train_annotations)
            if args.train_annotations
            else dataset
        )
        means = class_mean_lengths(source)
    for i, tube in enumerate(tubes):
        if args.method == "random":
            progress[i] = baseline_random(tube, rng)
        elif args.method == "constant":
            progress[i] = baseline_constant(tube, args.constant)
        else:
            progress[i] = baseline_expected_length(tube, means)
    fileio.write_annotations(dataset, args.out)
    print(f"{args.method} baseline on {len(tubes)} {args.tubes} tubes, wrote {args.out}")
    return 0


def _cmd_refine(args) -> int:
    dataset = fileio.parse_annotations(args.predictions)
    params = TrimParams(delta=args.delta, mu_start=args.mu_start, mu_end=args.mu_end)
    if not dataset.detections:
        raise ValueError("no detection tubes to refine")
    trimmed, trimmed_progress = [], {}
    for i, tube in enumerate(dataset.detections):
        if i not in dataset.det_progress:
            raise ValueError(f"detection tube #{i} has no progress predictions")
        predictions = dataset.det_progress[i]
        lo, hi = trim_range(predictions, params)
        trimmed.append(tube.window(lo, hi))
        trimmed_progress[i] = predictions[lo:hi]
    out = Dataset(
        classes=dataset.classes,
        video_frames=dataset.video_frames,
        ground_truth=dataset.ground_truth,
        detections=tuple(trimmed),
        gt_progress=dataset.gt_progress,
        det_progress=trimmed_progress,
    )
    fileio.write_annotations(out, args.out)
    kept = sum(t.n_frames for t in trimmed)
    total = sum(t.n_frames for t in dataset.detections)
    print(f"trimmed {total - kept} of {total} detection frames, wrote {args.out}")
    return 0


def _print_report(report, dataset, args):
    print(fileio.report_to_text(report, {c: i.name for c, i in dataset.classes.items()}))
    if args.out:
        fileio.write_report_json(report, args.out)


def _cmd_eval(args) -> int:
    dataset = fileio.parse_annotations(args.predictions)
    if args.protocol == "mse":
        missing = [i for i in range(len(dataset.ground_truth)) if i not in dataset.gt_progress]
        if missing:
            raise ValueError(f"ground-truth tubes without predictions: {missing}")
        report = metrics.framewise_mse(
            dataset.ground_truth,
            [dataset.gt_progress[i] for i in range(len(dataset.ground_truth))],
        )
        _print_report(report, dataset, args)
    elif args.protocol == "app":
        dets = metrics.frame_observations(dataset.detections, dataset.det_progress)
        gts = metrics.frame_observations(dataset.ground_truth, use_targets=True)
        report = metrics.app(dets, gts, args.tau, args.margin)
        _print_report(report, dataset, args)
    elif args.protocol == "frame-ap":
        dets = metrics.frame_observations(dataset.detections, dataset.det_progress)
        gts = metrics.frame_observations(dataset.ground_truth, use_targets=True)
        report = metrics.frame_ap(dets, gts, args.tau)
        _print_report(report, dataset, args)
    else:  # vap
        taus = _parse_float_list(args.taus, "tau list")
        reports = metrics.video_ap(dataset.detections, dataset.ground_truth, taus)
        names = {c: i.name for c, i in dataset.classes.items()}
        for tau in taus:
            print(fileio.report_to_text(reports[tau], names))
        if args.out:
            fileio.write_report_json(reports, args.out)
    return 0


def _cmd_eval_partial(args) -> int:
    dataset = fileio.parse_annotations(args.annotations)
    tubes = dataset.ground_truth
    if not tubes:
        raise ValueError("no ground-truth tubes to evaluate")
    pooling = _pooling(args)
    features = _load_features_for(dataset, args.features, tubes)
    samples = [(t, pool_tube_features(features[t.video_id], t, pooling)) for t in tubes]
    if args.baseline == "expected-length":
        source = (
            fileio.parse_annotations(args.train_annotations)
            if args.train_annotations
            else dataset
        )
        means = class_mean_lengths(source)
        predict = lambda tube, rows: baseline_expected_length(tube, means)
    else:
        params = fileio.load_checkpoint(args.checkpoint)
        predict = lambda tube, rows: forward_tube(params, rows)
    names = {c: i.name for c, i in dataset.classes.items()}
    if args.grid:
        reports = metrics.partial_tube_grid(predict, samples)
        for (s, e), report in sorted(reports.items()):
            print(fileio.report_to_text(report, names))
        if args.out:
            fileio.write_report_json(
                {f"{s}-{e}": rep for (s, e), rep in reports.items()}, args.out
            )
    else:
        report = metrics.partial_tube_mse(predict, samples, args.start, args.end)
        _print_report(report, dataset, args)
    return 0


def _cmd_dump_states(args) -> int:
    dataset = fileio.parse_annotations(args.annotations)
    params = fileio.load_checkpoint(args.checkpoint)
    pooling = _pooling(args)
    tubes, _ = _selected_tubes(dataset, args.tubes)
    if not tubes:
        raise ValueError(f"no {args.tubes} tubes to dump")
    features = _load_features_for(dataset, args.features, tubes)
    width = params.config.recurrent_dims[-1]
    rows = []
    for i, tube in enumerate(tubes):
        x = pool_tube_features(features[tube.video_id], tube, pooling)
        states = dump_hidden_states(params, x)
        for offset, frame in enumerate(tube.frames):
            rows.append(
                [i, tube.video_id, tube.class_id, frame]
                + [float(v) for v in states[offset]]
            )
    header = ["tube", "video", "class", "frame"] + [f"h{j}" for j in range(width)]
    fileio.write_csv(args.out, header, rows)
    print(f"wrote {len(rows)} hidden states to {args.out}")
    return 0


def _cmd_export_plots(args) -> int:
    dataset = fileio.parse_annotations(args.predictions)
    if args.plot == "mse-bins":
        missing = [i for i in range(len(dataset.ground_truth)) if i not in dataset.gt_progress]
        if missing:
            raise ValueError(f"ground-truth tubes without predictions: {missing}")
        rows = metrics.mse_by_progress_bin(
            dataset.ground_truth,
            [dataset.gt_progress[i] for i in range(len(dataset.ground_truth))],
            n_bins=args.bins,
        )
        fileio.write_csv(args.out, ("bin_lo", "bin_hi", "mse", "count"), rows)
    else:  # app-margins
        dets = metrics.frame_observations(dataset.detections, dataset.det_progress)
        gts = metrics.frame_observations(dataset.ground_truth, use_targets=True)
        margins = _parse_float_list(args.margins, "margins")
        rows = metrics.mapp_curve(dets, gts, args.tau, margins)
        fileio.write_csv(args.out, ("margin", "mapp"), rows)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="progresskit",
        description="Predict, refine, and evaluate action progress in action tubes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset with features")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--videos-per-class", type=int, default=10)
    p.add_argument("--cyclic", default=None, help="comma-separated cyclic class ids")
    p.add_argument("--length", default="30:50", help="tube length range, e.g. 30:50")
    p.add_argument("--padding", default="0:0", help="background padding range")
    p.add_argument("--cycles", type=int, default=3)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--map-size", default="8x8")
    p.add_argument("--feature-noise", type=float, default=0.02)
    p.add_argument("--box-jitter", type=float, default=1.5)
    p.add_argument("--det-score-sigma", type=float, default=0.0)
    p.add_argument("--det-drop", type=float, default=0.0)
    p.add_argument("--det-jitter", type=float, default=0.0)
    p.add_argument("--det-dilate", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--mapping-seed", type=int, default=None,
        help="seed for the class feature mappings; share it across splits",
    )
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train", help="train the progress predictor")
    p.add_argument("--annotations", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss", choices=("bo", "l2"), default="bo")
    p.add_argument("--variant", choices=("recurrent", "static"), default="recurrent")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--fc7-dim", type=int, default=128)
    p.add_argument("--rnn-dims", default="64,32")
    p.add_argument("--curriculum", action="store_true")
    p.add_argument("--stage2-epochs", type=int, default=None)
    p.add_argument("--subsample-max", type=int, default=10)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None, help="loss trace CSV path")
    _add_pool_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict progress for tubes")
    p.add_argument("--annotations", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tubes", choices=("gt", "det"), default="det")
    _add_pool_flags(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("baselines", help="reference baseline predictions")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("random", "constant", "expected-length"), required=True)
    p.add_argument("--constant", type=float, default=0.5)
    p.add_argument("--train-annotations", default=None, help="source of class mean lengths")
    p.add_argument("--tubes", choices=("gt", "det"), default="gt")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_baselines)

    p = sub.add_parser("refine", help="trim detection tubes using predicted progress")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--mu-start", type=float, default=0.1)
    p.add_argument("--mu-end", type=float, default=0.8)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    eval_sub = p.add_subparsers(dest="protocol", required=True)
    for protocol in ("mse", "app", "frame-ap", "vap"):
        q = eval_sub.add_parser(protocol)
        q.add_argument("--predictions", required=True)
        q.add_argument("--out", default=None)
        if protocol in ("app", "frame-ap"):
            q.add_argument("--tau", type=float, default=0.5)
        if protocol == "app":
            q.add_argument("--margin", type=float, default=1.0)
        if protocol == "vap":
            q.add_argument("--taus", default="0.05,0.1,0.2,0.3,0.4,0.5,0.6")
        q.set_defaults(func=_cmd_eval)
    q = eval_sub.add_parser("partial")
    q.add_argument("--annotations", required=True)
    q.add_argument("--features", required=True)
    q.add_argument("--checkpoint", default=None)
    q.add_argument("--baseline", choices=("expected-length",), default=None)
    q.add_argument("--train-annotations", default=None)
    q.add_argument("--start", type=float, default=0.0)
    q.add_argument("--end", type=float, default=1.0)
    q.add_argument("--grid", action="store_true")
    q.add_argument("--out", default=None)
    _add_pool_flags(q)
    q.set_defaults(func=_cmd_eval_partial)

    p = sub.add_parser("dump-states", help="export per-frame memory-layer states")
    p.add_argument("--annotations", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tubes", choices=("gt", "det"), default="gt")
    _add_pool_flags(p)
    p.set_defaults(func=_cmd_dump_states)

    p = sub.add_parser("export-plots", help="plot-ready CSV exports")
    plots = p.add_subparsers(dest="plot", required=True)
    q = plots.add_parser("mse-bins")
    q.add_argument("--predictions", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--bins", type=int, default=10)
    q.set_defaults(func=_cmd_export_plots)
    q = plots.add_parser("app-margins")
    q.add_argument("--predictions", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--tau", type=float, default=0.5)
    q.add_argument("--margins", default="0.0,0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5,0.75,1.0")
    q.set_defaults(func=_cmd_export_plots)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FormatError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
