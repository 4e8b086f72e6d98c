"""Runtime distribution invariants, enforced on every training epoch."""

from __future__ import annotations

import numpy as np


class InvariantError(AssertionError):
    """A distribution invariant was violated during training."""


def check_row_stochastic(name: str, arr: np.ndarray, tol: float) -> None:
    if arr.min() < 0.0:
        raise InvariantError(f"{name} has a negative entry ({arr.min():.3g})")
    err = np.abs(arr.sum(axis=1) - 1.0).max()
    if err > tol:
        raise InvariantError(f"{name} rows deviate from sum 1 by {err:.3g} (tol {tol:.1g})")


def check_nonnegative(name: str, value: float) -> None:
    if value < 0.0:
        raise InvariantError(f"{name} is negative: {value:.6g}")
