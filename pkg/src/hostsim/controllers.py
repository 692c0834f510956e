"""Homogeneity exponent ladders and finite-time feedbacks for integrator chains.

The exponent ladder fixes every exponent appearing in the cascade designs:
weights p_i, recursion exponents alpha_i and beta_i, and the exponent
lambda_V of the scaled potential.  Two feedback families are built on it,
a continuous cascade and a terminal-switching variant that is continuous at
the origin but switches across the surface z_r = v_{r-1}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algebra import DilationWeights, signed_power


@dataclass(frozen=True)
class ExponentLadder:
    """All homogeneity exponents of an order-r chain (normalization p_1 = 1).

    kappa = -1/(r+1) and p_i = 1 + (i-1)*kappa, so p_{r+1} = -kappa > 0.
    The recursion exponents satisfy beta_0 = p_2, (beta_i + 1) p_{i+1} =
    beta_0 + 1 and alpha_i = p_{i+1}/p_i; lambda_V = 1/(1 + beta_{r-1}).
    """

    r: int
    kappa: float
    p: tuple
    alpha: tuple
    beta: tuple
    lambda_V: float

    @property
    def state_weights(self) -> DilationWeights:
        """Dilation weights (p_1, ..., p_r) of the state space."""
        return DilationWeights(self.p[: self.r])

    @property
    def extended_weights(self) -> DilationWeights:
        """Dilation weights (p_1, ..., p_{r+1}) of the extended space."""
        return DilationWeights(self.p)


def build_ladder(r: int) -> ExponentLadder:
    """Construct the canonical exponent ladder for a chain of order r."""
    if r < 1:
        raise ValueError(f"build_ladder: chain order must be >= 1, got {r}")
    kappa = -1.0 / (r + 1)
    # p_i = 1 + (i-1)*kappa, evaluated as (r+1-(i-1))/(r+1) to round cleanly
    p = tuple((r + 1.0 - i) / (r + 1.0) for i in range(r + 1))
    alpha = tuple(p[i + 1] / p[i] for i in range(r))
    beta = [p[1]]
    for i in range(1, r):
        # (beta_i + 1) * p_{i+1} = beta_0 + 1, with p_{i+1} = p[i] zero-based
        beta.append((beta[0] + 1.0) / p[i] - 1.0)
    lambda_v = 1.0 / (1.0 + beta[-1])
    return ExponentLadder(r, kappa, p, alpha, tuple(beta), lambda_v)


def validate_gains(gains: Sequence[float], r: int) -> tuple:
    g = tuple(float(v) for v in gains)
    if len(g) != r:
        raise ValueError(f"need {r} gains, got {len(g)}")
    if any(v <= 0 for v in g):
        raise ValueError("gains must all be positive")
    return g


def _as_state(z, r: int) -> np.ndarray:
    arr = np.asarray(z, dtype=float)
    if arr.shape != (r,):
        raise ValueError(f"state must have shape ({r},), got {arr.shape}")
    return arr


def hong_virtual_controls(z, ladder: ExponentLadder, gains) -> tuple:
    """Virtual-control cascade (v_0, ..., v_r); the last entry is the feedback.

    v_0 = 0 and v_{i+1} = -l_{i+1} * <<z_{i+1}>^{beta_i} - <v_i>^{beta_i}>^{alpha_{i+1}/beta_i},
    where <x>^a denotes the signed power.
    """
    arr = _as_state(z, ladder.r)
    g = validate_gains(gains, ladder.r)
    v = [0.0]
    for i in range(ladder.r):
        b = ladder.beta[i]
        inner = signed_power(arr[i], b) - signed_power(v[i], b)
        v.append(-g[i] * signed_power(inner, ladder.alpha[i] / b))
    return tuple(v)


def hong_control(z, ladder: ExponentLadder, gains) -> float:
    """Continuous finite-time feedback: last virtual control of the cascade."""
    return hong_virtual_controls(z, ladder, gains)[-1]


def modified_hong_control(z, ladder: ExponentLadder, gains) -> float:
    """Terminal-switching feedback, continuous at 0.

    Keeps v_1..v_{r-1} from the cascade and switches the top level:
    u = -l_r * (|z_r|^b + |v_{r-1}|^b)^(alpha_r/b) * sign(z_r - v_{r-1}),
    b = beta_{r-1}.  Discontinuous across z_r = v_{r-1} away from 0.
    """
    arr = _as_state(z, ladder.r)
    g = validate_gains(gains, ladder.r)
    r = ladder.r
    v = hong_virtual_controls(arr, ladder, g)
    b = ladder.beta[r - 1]
    mag = (abs(arr[r - 1]) ** b + abs(v[r - 1]) ** b) ** (ladder.alpha[r - 1] / b)
    gap = float(arr[r - 1]) - v[r - 1]
    sgn = float((gap > 0.0) - (gap < 0.0))
    return -g[r - 1] * mag * sgn
