"""Signed fractional powers and weighted dilation families.

Every homogeneous computation in this package reduces to two primitives:
the signed power |x|^a * sign(x), with the single-valued selection
sign(0) = 0, and the anisotropic scaling x_i -> eps^{w_i} x_i.  Both live
here, together with the homogeneous norms used for sphere sampling and
convergence detection and a residual that measures how far a scalar field
is from being homogeneous of a given degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Magnitudes below this are treated as exact zeros inside fractional powers,
# so feedback laws vanish cleanly instead of producing spurious infinities.
_TINY = 1e-300


def signed_power(x, a: float):
    """Return |x|^a * sign(x) with sign(0) selected as 0.

    Continuous for a > 0 and, for a >= 1, differentiable with derivative
    a*|x|^(a-1).  With a = 0 the result is sign(x).  Accepts a scalar or a
    numpy array.
    """
    if math.isnan(a):
        raise ValueError("signed_power: exponent is NaN")
    if a < 0:
        raise ValueError(f"signed_power: exponent must be >= 0, got {a}")
    if isinstance(x, np.ndarray):
        if np.isnan(x).any():
            raise ValueError("signed_power: NaN input")
        if a == 0.0:
            return np.sign(x)
        out = np.sign(x) * np.abs(x) ** a
        return np.where(np.abs(x) < _TINY, 0.0, out)
    x = float(x)
    if math.isnan(x):
        raise ValueError("signed_power: NaN input")
    if a == 0.0:
        return float((x > 0) - (x < 0))
    ax = abs(x)
    if ax < _TINY:
        return 0.0
    return math.copysign(ax**a, x)


@dataclass(frozen=True)
class DilationWeights:
    """One-parameter family of dilations x_i -> eps^{w_i} x_i, w_i > 0."""

    weights: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) < 1:
            raise ValueError("DilationWeights: need at least one weight")
        if any((not math.isfinite(v)) or v <= 0 for v in w):
            raise ValueError("DilationWeights: weights must be strictly positive")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)


def integer_weights(r: int) -> DilationWeights:
    """Weights (r, r-1, ..., 1) of the diag(lambda^r, ..., lambda) scaling."""
    if r < 1:
        raise ValueError(f"integer_weights: order must be >= 1, got {r}")
    return DilationWeights(tuple(float(k) for k in range(r, 0, -1)))


def dilation_apply(w: DilationWeights, eps: float, x):
    """Scale component i of x by eps^{w_i}."""
    eps = float(eps)
    if math.isnan(eps) or eps <= 0:
        raise ValueError(f"dilation_apply: eps must be positive, got {eps}")
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != len(w):
        raise ValueError(
            f"dilation_apply: got {arr.shape[-1]} components for {len(w)} weights"
        )
    return arr * eps ** np.asarray(w.weights)


def homogeneity_residual(
    f: Callable[[np.ndarray], float],
    w: DilationWeights,
    degree: float,
    x: Sequence[float],
    eps: float,
) -> float:
    """Relative defect of the identity f(delta_eps x) = eps^degree f(x).

    Zero (up to rounding) exactly when f is homogeneous of the stated degree
    at the probed point and scale.
    """
    if eps <= 0:
        raise ValueError("homogeneity_residual: eps must be positive")
    arr = np.asarray(x, dtype=float)
    scaled = float(f(dilation_apply(w, eps, arr)))
    ref = eps**degree * float(f(arr))
    return abs(scaled - ref) / (abs(ref) + _TINY)


def homogeneous_norm(w: DilationWeights, x) -> float:
    """Degree-one norm (sum_i |x_i|^(2/w_i))^(1/2) of the dilation family."""
    arr = np.asarray(x, dtype=float)
    return float(np.sqrt(np.sum(np.abs(arr) ** (2.0 / np.asarray(w.weights)))))


def homogeneous_max_norm(w: DilationWeights, x) -> float:
    """Degree-one norm max_i |x_i|^(1/w_i) of the dilation family."""
    arr = np.asarray(x, dtype=float)
    return float(np.max(np.abs(arr) ** (1.0 / np.asarray(w.weights))))
