"""Training loop: initialization, augmentations, Adam, and the two-stage curriculum.

Training samples are positive ground-truth tubes.  Two augmentations fight
overfitting: a random sub-window of each tube (keeping the original progress
values, so sequences rarely start at 0) and a random frame-rate subsampling.
The optional curriculum first trains everything on the non-cyclic classes,
then freezes all but the output head and fine-tunes on every class.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .features import FeatureMap, PoolingConfig, pool_tube_features
from .losses import LOSSES
from .model import ModelConfig, ModelParams, backward_tube, forward_tube, param_shapes
from .tubes import Dataset, Tube, progress_targets

# Action classes whose appearance does not repeat within one performance; used
# as the default first-stage subset when real annotations carry no cyclic flags.
NONCYCLIC_CLASS_NAMES = frozenset(
    {
        "Basketball",
        "BasketballDunk",
        "CliffDiving",
        "CricketBowling",
        "Diving",
        "FloorGymnastics",
        "GolfSwing",
        "LongJump",
        "PoleVault",
        "TennisSwing",
        "VolleyballSpiking",
    }
)


class TrainingError(RuntimeError):
    """Raised when training cannot proceed (empty data, diverged loss)."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0
    loss: str = "bo"
    curriculum: bool = False
    stage2_epochs: int | None = None
    subsample_max: int = 10
    augment: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.subsample_max < 1:
            raise ValueError("subsample_max must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; options: {sorted(LOSSES)}")


class TraceEntry(NamedTuple):
    epoch: int
    step: int
    loss: float


def xavier_init(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Weights uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero."""
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name.split(".")[-1].startswith("b"):
            arrays[name] = np.zeros(shape)
            continue
        if len(shape) == 2:
            fan_in, fan_out = shape
        else:
            fan_in, fan_out = shape[0], 1  # fc8 weight vector maps to a scalar
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-limit, limit, shape)
    return ModelParams(config, arrays)


@dataclass(frozen=True)
class TubeSample:
    """A tube with the subset of frame offsets (and their targets) kept for training."""

    tube: Tube
    offsets: tuple[int, ...]
    targets: np.ndarray

    def __post_init__(self):
        if len(self.offsets) != len(self.targets):
            raise ValueError("offsets and targets must align")
        if not self.offsets:
            raise ValueError("a sample needs at least one frame")

    @classmethod
    def full(cls, tube: Tube) -> "TubeSample":
        return cls(tube, tuple(range(tube.n_frames)), progress_targets(tube))


def augment_subtube(sample: TubeSample, rng: np.random.Generator) -> TubeSample:
    """Keep a uniformly chosen contiguous window; targets are restricted, never rescaled."""
    n = len(sample.offsets)
    start = int(rng.integers(0, n))
    duration = int(rng.integers(1, n - start + 1))
    sl = slice(start, start + duration)
    return TubeSample(sample.tube, sample.offsets[sl], sample.targets[sl])


def augment_subsample(
    sample: TubeSample, rng: np.random.Generator, subsample_max: int = 10
) -> TubeSample:
    """Keep every k-th frame for k uniform in 1..subsample_max, always keeping the first."""
    k = int(rng.integers(1, subsample_max + 1))
    if k == 1:
        return sample
    return TubeSample(sample.tube, sample.offsets[::k], sample.targets[::k])


class Adam:
    """Adam over a named parameter set, with optional per-step trainable subset.

    Parameters outside the trainable subset are skipped entirely, so their
    values (and moments) stay bitwise unchanged.
    """

    def __init__(self, config: TrainConfig, params: ModelParams):
        self.lr = config.learning_rate
        self.beta1, self.beta2, self.eps = config.beta1, config.beta2, config.epsilon
        self.m = {n: np.zeros_like(a) for n, a in params.arrays.items()}
        self.v = {n: np.zeros_like(a) for n, a in params.arrays.items()}
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams, trainable=None) -> None:
        self.t += 1
        for name, value in params.arrays.items():
            if trainable is not None and name not in trainable:
                continue
            grad = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * grad**2
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            params.arrays[name] = value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def class_mean_lengths(dataset: Dataset) -> dict[int, float]:
    """Mean ground-truth tube length per class, for the expected-length baseline."""
    lengths: dict[int, list[int]] = {}
    for tube in dataset.ground_truth:
        lengths.setdefault(tube.class_id, []).append(tube.n_frames)
    return {c: float(np.mean(v)) for c, v in lengths.items()}


def _make_sample(
    sample: TubeSample, rng: np.random.Generator, config: TrainConfig
) -> TubeSample:
    if not config.augment:
        return sample
    sample = augment_subtube(sample, rng)
    return augment_subsample(sample, rng, config.subsample_max)


def train(
    dataset: Dataset,
    features: Mapping[str, Sequence[FeatureMap]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    pooling: PoolingConfig = PoolingConfig(),
) -> tuple[ModelParams, list[TraceEntry]]:
    """Mini-batch Adam on the configured loss over augmented ground-truth tubes.

    With ``curriculum`` on, stage one trains all layers on the non-cyclic
    classes and stage two freezes everything except FC8 while fine-tuning on
    all classes.  Same seed and config give a bitwise-identical loss trace.
    """
    tubes = list(dataset.ground_truth)
    if not tubes:
        raise TrainingError("dataset has no ground-truth tubes")
    loss_fn = LOSSES[train_config.loss]
    rng = np.random.default_rng(train_config.seed)

    inputs = [pool_tube_features(features[t.video_id], t, pooling) for t in tubes]
    for t, x in zip(tubes, inputs):
        if x.shape[1] != model_config.input_dim:
            raise TrainingError(
                f"pooled feature length {x.shape[1]} != model input_dim "
                f"{model_config.input_dim}"
            )
    samples = [TubeSample.full(t) for t in tubes]

    params = xavier_init(model_config, rng)
    optimizer = Adam(train_config, params)
    fc8_names = {n for n in params.arrays if n.startswith("fc8.")}

    noncyclic = [
        i for i, t in enumerate(tubes) if not dataset.classes[t.class_id].cyclic
    ]
    if train_config.curriculum:
        if not noncyclic:
            raise TrainingError("curriculum requires at least one non-cyclic tube")
        stage2 = train_config.stage2_epochs
        stages = [
            (noncyclic, None, train_config.epochs),
            (list(range(len(tubes))), fc8_names, stage2 if stage2 is not None else train_config.epochs),
        ]
    else:
        stages = [(list(range(len(tubes))), None, train_config.epochs)]

    trace: list[TraceEntry] = []
    epoch_counter = 0
    for tube_ids, trainable, n_epochs in stages:
        for _ in range(n_epochs):
            order = rng.permutation(len(tube_ids))
            step = 0
            for lo in range(0, len(order), train_config.batch_size):
                batch = [tube_ids[j] for j in order[lo : lo + train_config.batch_size]]
                grads = params.zeros_like()
                batch_loss = 0.0
                for idx in batch:
                    sample = _make_sample(samples[idx], rng, train_config)
                    x_rows = inputs[idx][list(sample.offsets)]
                    preds, caches = forward_tube(
                        params, x_rows, train_mode=True, rng=rng, return_cache=True
                    )
                    loss = loss_fn(preds, sample.targets)
                    batch_loss += loss.value
                    tube_grads = backward_tube(params, caches, loss.gradient)
                    for name, g in tube_grads.arrays.items():
                        grads.arrays[name] += g / len(batch)
                batch_loss /= len(batch)
                if not np.isfinite(batch_loss):
                    raise TrainingError(
                        f"non-finite loss {batch_loss} at epoch {epoch_counter}, step {step}"
                    )
                if any(
                    not np.all(np.isfinite(a)) for a in grads.arrays.values()
                ):
                    raise TrainingError(
                        f"non-finite gradients at epoch {epoch_counter}, step {step} "
                        f"(loss {batch_loss}); training diverged"
                    )
                optimizer.step(params, grads, trainable)
                trace.append(TraceEntry(epoch_counter, step, batch_loss))
                step += 1
            epoch_counter += 1
    return params, trace
