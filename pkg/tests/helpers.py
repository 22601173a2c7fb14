"""Shared oracles for the test suite: finite differences and kink-free sampling."""

import numpy as np

from progresskit.model import forward_tube
from progresskit.training import xavier_init


def kink_free(tape, tol=1e-3) -> bool:
    """True when no recorded rectifier pre-activation sits within tol of zero.

    Central finite differences are meaningless across the ReLU kink, so
    gradient checks only run on instances that stay clear of it.
    """
    if np.any(np.abs(tape["z7"]) < tol):
        return False
    for layer in tape["layers"]:
        if "z" in layer and np.any(np.abs(layer["z"]) < tol):
            return False
    return True


def sample_instance(config, seed, n_frames, jitter=0.05, max_tries=20):
    """A random (params, inputs, targets) triple whose forward pass avoids ReLU kinks."""
    for attempt in range(max_tries):
        rng = np.random.default_rng(seed + 7919 * attempt)
        params = xavier_init(config, rng)
        for name in params.arrays:
            params.arrays[name] = params.arrays[name] + rng.uniform(
                -jitter, jitter, params.arrays[name].shape
            )
        x = rng.normal(size=(n_frames, config.input_dim))
        targets = rng.uniform(0.05, 0.95, n_frames)
        _, tape = forward_tube(params, x, return_cache=True)
        if kink_free(tape):
            return params, x, targets
    raise AssertionError(f"no kink-free instance found from seed {seed}")


def fd_param_gradient(objective, params, name, idx, h=1e-5):
    """Central finite difference of a scalar objective wrt one parameter entry."""
    arr = params.arrays[name]
    if arr.ndim:
        view = arr.reshape(-1)
        orig = float(view[idx])
        view[idx] = orig + h
        plus = objective(params)
        view[idx] = orig - h
        minus = objective(params)
        view[idx] = orig
    else:
        orig = float(arr)
        params.arrays[name] = np.asarray(orig + h)
        plus = objective(params)
        params.arrays[name] = np.asarray(orig - h)
        minus = objective(params)
        params.arrays[name] = np.asarray(orig)
    return (plus - minus) / (2 * h)


def max_relative_gradient_error(config, params, x, upstream, grads, objective, h=1e-5):
    """Worst relative disagreement between analytic and numeric gradients."""
    worst = 0.0
    for name in params.arrays:
        for idx in range(params.arrays[name].size):
            numeric = fd_param_gradient(objective, params, name, idx, h)
            analytic = (
                float(grads.arrays[name].reshape(-1)[idx])
                if params.arrays[name].ndim
                else float(grads.arrays[name])
            )
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
