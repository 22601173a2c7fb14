"""Tube refinement: trim temporal boundaries using predicted progress.

A frame is trimmable when the predicted progress is not advancing (its
temporal derivative is at most ``delta``) while the prediction says the action
has barely begun (at most ``mu_start``) or is essentially over (at least
``mu_end``).  Only maximal runs at the two ends are removed, repeatedly until
nothing more can go, so a second trim is always a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tubes import Tube


@dataclass(frozen=True)
class TrimParams:
    delta: float = 0.05
    mu_start: float = 0.1
    mu_end: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.mu_start < self.mu_end <= 1.0:
            raise ValueError(f"need 0 <= mu_start < mu_end <= 1, got {self.mu_start}, {self.mu_end}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


def progress_derivative(predictions) -> np.ndarray:
    """Backward differences of a progress sequence; the first frame's is 0."""
    p = np.asarray(predictions, dtype=float).ravel()
    if len(p) == 0:
        raise ValueError("empty sequence")
    d = np.empty_like(p)
    d[0] = 0.0
    d[1:] = np.diff(p)
    return d


def trim_range(predictions, params: TrimParams = TrimParams()) -> tuple[int, int]:
    """Kept frame range [lo, hi) after trimming; never empty.

    Prefix/suffix runs satisfying the trim conditions are removed and the scan
    repeats on the remainder (the first kept frame's derivative resets to 0)
    until stable.  If everything would go, the single frame with the largest
    derivative of the original sequence is kept.
    """
    p = np.asarray(predictions, dtype=float).ravel()
    n = len(p)
    if n == 0:
        raise ValueError("empty sequence")
    lo, hi = 0, n
    changed = True
    while changed and lo < hi:
        changed = False
        window = p[lo:hi]
        d = progress_derivative(window)
        i = 0
        while i < len(window) and d[i] <= params.delta and window[i] <= params.mu_start:
            i += 1
        j = len(window)
        while j > i and d[j - 1] <= params.delta and window[j - 1] >= params.mu_end:
            j -= 1
        if i > 0 or j < len(window):
            changed = True
        lo, hi = lo + i, lo + j
    if lo >= hi:
        keep = int(np.argmax(progress_derivative(p)))
        return keep, keep + 1
    return lo, hi


def trim_tube(tube: Tube, predictions, params: TrimParams = TrimParams()) -> Tube:
    """Trim a tube's temporal ends; interior frames are never removed."""
    p = np.asarray(predictions, dtype=float).ravel()
    if len(p) != tube.n_frames:
        raise ValueError(f"{len(p)} predictions for a {tube.n_frames}-frame tube")
    lo, hi = trim_range(p, params)
    return tube.window(lo, hi)
