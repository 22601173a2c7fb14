"""The progress predictor: blend layer, stacked recurrent memory, sigmoid head.

The network maps a blended region+context feature to a progress value in
(0, 1) at every frame, online: FC7 (rectifier) -> two stacked gated memory
layers (64 and 32 units by default) -> FC8 (sigmoid).  A memoryless "static"
variant replaces the recurrent layers with two framewise rectifier layers of
the same widths.  Forward, exact reverse-mode gradients through time, and the
reference baselines all live here; the optimizer and initialization are in
``training``.

A forward pass over a tube records a tape: a dict of per-frame activation
matrices (one row per frame) that the backward pass consumes.  Everything
without a time dependency is batched over frames; only the gated recurrence
itself walks the sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .features import FeatureVector

RECURRENT = "recurrent"
STATIC = "static"
GATES = ("i", "f", "o", "g")  # input, forget, output, candidate


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; parameter shapes follow from these alone."""

    input_dim: int = 32
    fc7_dim: int = 128
    recurrent_dims: tuple[int, ...] = (64, 32)
    dropout_rate: float = 0.5
    variant: str = RECURRENT

    def __post_init__(self):
        object.__setattr__(self, "recurrent_dims", tuple(self.recurrent_dims))
        if self.input_dim < 1 or self.fc7_dim < 1:
            raise ValueError("input_dim and fc7_dim must be >= 1")
        if not self.recurrent_dims or any(d < 1 for d in self.recurrent_dims):
            raise ValueError("recurrent_dims must be non-empty with all dims >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if self.variant not in (RECURRENT, STATIC):
            raise ValueError(f"unknown variant {self.variant!r}")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in declaration (checkpoint) order."""
    shapes: dict[str, tuple[int, ...]] = {
        "fc7.W": (config.input_dim, config.fc7_dim),
        "fc7.b": (config.fc7_dim,),
    }
    in_dim = config.fc7_dim
    for layer, width in enumerate(config.recurrent_dims):
        if config.variant == RECURRENT:
            for gate in GATES:
                shapes[f"rnn{layer}.Wx_{gate}"] = (in_dim, width)
                shapes[f"rnn{layer}.Wh_{gate}"] = (width, width)
                shapes[f"rnn{layer}.b_{gate}"] = (width,)
        else:
            shapes[f"dense{layer}.W"] = (in_dim, width)
            shapes[f"dense{layer}.b"] = (width,)
        in_dim = width
    shapes["fc8.W"] = (in_dim,)
    shapes["fc8.b"] = ()
    return shapes


@dataclass(eq=False)
class ModelParams:
    """All learnable weights, keyed by name in declaration order."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(self.arrays) != list(expected):
            raise ValueError("parameter names do not match the config's declaration order")
        for name, shape in expected.items():
            arr = np.asarray(self.arrays[name], dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite values")
            self.arrays[name] = arr

    @classmethod
    def _unchecked(cls, config: ModelConfig, arrays: dict) -> "ModelParams":
        # internal fast path for arrays already known to have the right shapes
        obj = object.__new__(cls)
        obj.config = config
        obj.arrays = arrays
        return obj

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls._unchecked(
            config, {n: np.zeros(s) for n, s in param_shapes(config).items()}
        )

    def zeros_like(self) -> "ModelParams":
        return ModelParams.zeros(self.config)

    def copy(self) -> "ModelParams":
        return ModelParams._unchecked(
            self.config, {n: a.copy() for n, a in self.arrays.items()}
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


@dataclass(frozen=True)
class RecurrentState:
    """Per-layer hidden and cell vectors; a fresh state is all zeros."""

    hidden: tuple[np.ndarray, ...]
    cell: tuple[np.ndarray, ...]


def zero_state(config: ModelConfig) -> RecurrentState:
    if config.variant == STATIC:
        return RecurrentState((), ())
    dims = config.recurrent_dims
    return RecurrentState(
        tuple(np.zeros(d) for d in dims), tuple(np.zeros(d) for d in dims)
    )


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    # inverted scaling: inference needs no rescale
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(float) / keep


def _as_matrix(tube_features) -> np.ndarray:
    if isinstance(tube_features, np.ndarray) and tube_features.ndim == 2:
        return tube_features.astype(float, copy=False)
    rows = [
        x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=float).ravel()
        for x in tube_features
    ]
    if not rows:
        raise ValueError("empty feature sequence")
    return np.stack(rows)


def _stack_gates(params: ModelParams, layer: int):
    wx = np.concatenate([params[f"rnn{layer}.Wx_{g}"] for g in GATES], axis=1)
    wh = np.concatenate([params[f"rnn{layer}.Wh_{g}"] for g in GATES], axis=1)
    b = np.concatenate([params[f"rnn{layer}.b_{g}"] for g in GATES])
    return wx, wh, b


def _run(
    params: ModelParams,
    x: np.ndarray,
    state: RecurrentState,
    train_mode: bool,
    rng: np.random.Generator | None,
):
    """Forward over an (n_frames, input_dim) matrix from the given state.

    Returns (predictions, final state, tape).  The tape maps activation names
    to per-frame matrices; the backward pass consumes it as-is.
    """
    cfg = params.config
    n_frames = x.shape[0]
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"input shape {x.shape} != (n, {cfg.input_dim})")
    if n_frames == 0:
        raise ValueError("empty feature sequence")
    use_dropout = train_mode and cfg.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("train_mode with dropout requires an rng")

    tape: dict = {"x": x}
    if use_dropout:
        m7 = _dropout_mask(x.shape, cfg.dropout_rate, rng)
        tape["m7"] = m7
        x_in = x * m7
    else:
        x_in = x
    tape["x_in"] = x_in
    z7 = x_in @ params["fc7.W"] + params["fc7.b"]
    a7 = np.maximum(z7, 0.0)
    tape["z7"] = z7
    tape["a7"] = a7

    h_below = a7
    layers = []
    if cfg.variant == RECURRENT:
        final_h, final_c = [], []
        for layer, width in enumerate(cfg.recurrent_dims):
            wx, wh, b = _stack_gates(params, layer)
            gates = np.empty((n_frames, 4 * width))
            h_prev = np.empty((n_frames, width))
            c_prev = np.empty((n_frames, width))
            c_mat = np.empty((n_frames, width))
            tanh_c = np.empty((n_frames, width))
            h_mat = np.empty((n_frames, width))
            h, c = state.hidden[layer], state.cell[layer]
            x_part = h_below @ wx + b  # no time dependency: one matmul
            for t in range(n_frames):
                z_all = x_part[t] + h @ wh
                s = _sigmoid(z_all[: 3 * width])
                g = np.tanh(z_all[3 * width :])
                h_prev[t] = h
                c_prev[t] = c
                c = s[width : 2 * width] * c + s[:width] * g
                np.tanh(c, out=tanh_c[t])
                h = s[2 * width : 3 * width] * tanh_c[t]
                gates[t, : 3 * width] = s
                gates[t, 3 * width :] = g
                h_mat[t] = h
                c_mat[t] = c
            layers.append(
                {
                    "x": h_below,
                    "h_prev": h_prev,
                    "c_prev": c_prev,
                    "i": gates[:, :width],
                    "f": gates[:, width : 2 * width],
                    "o": gates[:, 2 * width : 3 * width],
                    "g": gates[:, 3 * width :],
                    "c": c_mat,
                    "tanh_c": tanh_c,
                    "h": h_mat,
                }
            )
            final_h.append(h)
            final_c.append(c)
            h_below = h_mat
        new_state = RecurrentState(tuple(final_h), tuple(final_c))
    else:
        for layer in range(len(cfg.recurrent_dims)):
            z = h_below @ params[f"dense{layer}.W"] + params[f"dense{layer}.b"]
            a = np.maximum(z, 0.0)
            layers.append({"x": h_below, "z": z, "a": a})
            h_below = a
        new_state = state
    tape["layers"] = layers

    if use_dropout:
        m8 = _dropout_mask(h_below.shape, cfg.dropout_rate, rng)
        tape["m8"] = m8
        h8 = h_below * m8
    else:
        h8 = h_below
    tape["h8"] = h8
    z8 = h8 @ params["fc8.W"] + params["fc8.b"]
    preds = _sigmoid(z8)
    tape["pred"] = preds
    return preds, new_state, tape


def forward_step(
    params: ModelParams,
    state: RecurrentState,
    x,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
):
    """One online step: returns (prediction, new_state, cache).

    ``x`` is a blended feature vector (or its raw values).  Dropout is applied
    to the FC7 and FC8 inputs only, and only when ``train_mode`` is set, in
    which case ``rng`` must be provided.  The cache is a single-frame tape
    holding every activation the backward pass needs.
    """
    x = np.asarray(
        x.values if isinstance(x, FeatureVector) else x, dtype=float
    ).reshape(1, -1)
    preds, new_state, tape = _run(params, x, state, train_mode, rng)
    return float(preds[0]), new_state, tape


def forward_tube(
    params: ModelParams,
    tube_features,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    return_cache: bool = False,
):
    """Predictions for a whole feature sequence, folding from a zero state.

    ``tube_features`` is an (n_frames, input_dim) matrix or a sequence of
    blended feature vectors.  With ``return_cache`` the tape for
    :func:`backward_tube` is returned alongside the predictions.
    """
    x = _as_matrix(tube_features)
    preds, _, tape = _run(params, x, zero_state(params.config), train_mode, rng)
    if return_cache:
        return preds, tape
    return preds


def backward_tube(params: ModelParams, tape, loss_gradient) -> ModelParams:
    """Exact gradients of a scalar loss wrt every parameter, unrolled over time.

    ``tape`` comes from a forward pass over the same tube; ``loss_gradient``
    holds d(loss)/d(prediction) per frame.
    """
    if not isinstance(tape, dict) or "pred" not in tape:
        raise ValueError("missing forward cache")
    preds = tape["pred"]
    n_frames = len(preds)
    d_pred = np.asarray(loss_gradient, dtype=float).ravel()
    if len(d_pred) != n_frames:
        raise ValueError(f"{len(d_pred)} loss gradients for {n_frames} cached frames")
    cfg = params.config
    grads: dict[str, np.ndarray] = {}

    dz8 = d_pred * preds * (1.0 - preds)
    grads["fc8.W"] = tape["h8"].T @ dz8
    grads["fc8.b"] = np.asarray(dz8.sum())
    d_top = np.outer(dz8, params["fc8.W"])
    if "m8" in tape:
        d_top = d_top * tape["m8"]

    d_above = d_top
    if cfg.variant == RECURRENT:
        for layer in reversed(range(len(cfg.recurrent_dims))):
            lc = tape["layers"][layer]
            width = cfg.recurrent_dims[layer]
            wx, wh, _ = _stack_gates(params, layer)
            i, f, o, g = lc["i"], lc["f"], lc["o"], lc["g"]
            tanh_c = lc["tanh_c"]
            dz_all = np.empty((n_frames, 4 * width))
            dh_carry = np.zeros(width)
            dc_carry = np.zeros(width)
            for t in reversed(range(n_frames)):
                dh = d_above[t] + dh_carry
                do = dh * tanh_c[t]
                dc = dc_carry + dh * o[t] * (1.0 - tanh_c[t] ** 2)
                dc_carry = dc * f[t]
                row = dz_all[t]
                row[:width] = dc * g[t] * i[t] * (1.0 - i[t])
                row[width : 2 * width] = dc * lc["c_prev"][t] * f[t] * (1.0 - f[t])
                row[2 * width : 3 * width] = do * o[t] * (1.0 - o[t])
                row[3 * width :] = dc * i[t] * (1.0 - g[t] ** 2)
                dh_carry = wh @ row
            gwx = lc["x"].T @ dz_all
            gwh = lc["h_prev"].T @ dz_all
            gb = dz_all.sum(axis=0)
            for k, gate in enumerate(GATES):
                grads[f"rnn{layer}.Wx_{gate}"] = gwx[:, k * width : (k + 1) * width].copy()
                grads[f"rnn{layer}.Wh_{gate}"] = gwh[:, k * width : (k + 1) * width].copy()
                grads[f"rnn{layer}.b_{gate}"] = gb[k * width : (k + 1) * width].copy()
            d_above = dz_all @ wx.T
    else:
        for layer in reversed(range(len(cfg.recurrent_dims))):
            lc = tape["layers"][layer]
            dz = d_above * (lc["z"] > 0)
            grads[f"dense{layer}.W"] = lc["x"].T @ dz
            grads[f"dense{layer}.b"] = dz.sum(axis=0)
            d_above = dz @ params[f"dense{layer}.W"].T

    dz7 = d_above * (tape["z7"] > 0)
    grads["fc7.W"] = tape["x_in"].T @ dz7
    grads["fc7.b"] = dz7.sum(axis=0)
    ordered = {name: grads[name] for name in param_shapes(cfg)}
    return ModelParams._unchecked(cfg, ordered)


def dump_hidden_states(params: ModelParams, tube_features) -> np.ndarray:
    """Per-frame output of the last memory layer, as an (n_frames, width) matrix.

    For the static variant this is the last framewise rectifier layer instead.
    """
    x = _as_matrix(tube_features)
    _, _, tape = _run(params, x, zero_state(params.config), False, None)
    last = tape["layers"][-1]
    return (last["h"] if params.config.variant == RECURRENT else last["a"]).copy()


def baseline_random(tube, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform predictions, the upper reference on the error scale."""
    return rng.uniform(0.0, 1.0, tube.n_frames)


def baseline_constant(tube, c: float = 0.5) -> np.ndarray:
    """A constant prediction, by default the expectation of a uniform progress."""
    return np.full(tube.n_frames, float(c))


def baseline_expected_length(tube, class_mean_lengths: Mapping[int, float]) -> np.ndarray:
    """Frame position over the class's mean training length, clamped to [0, 1]."""
    if tube.class_id not in class_mean_lengths:
        raise ValueError(f"no mean length recorded for class {tube.class_id}")
    mean_len = float(class_mean_lengths[tube.class_id])
    return np.clip((np.arange(tube.n_frames) + 1.0) / mean_len, 0.0, 1.0)
