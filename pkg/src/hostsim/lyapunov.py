"""Strict Lyapunov machinery for the cascade feedbacks.

Evaluates the cascade potential V0, the scaled potential V1 = V0^lambda/lambda,
its top partial derivative, and the extended function

    W(z, xi) = A * (V1(z) + xi^2 / (2 kI))^(3/2) - z_r * xi

used to certify the super-twisting loops.  The existence constants of the
decrease inequalities (c, A, d, the partial-derivative supremum, and the
admissible perturbation budgets) are calibrated numerically by sampling
homogeneous spheres; all calibrated quantities are degree-zero ratios, so a
sphere extremum extends to the whole punctured space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .algebra import (
    DilationWeights,
    dilation_apply,
    homogeneous_max_norm,
    signed_power,
)
from .controllers import (
    ExponentLadder,
    build_ladder,
    hong_control,
    hong_virtual_controls,
    modified_hong_control,
    validate_gains,
)

VARIANTS = ("hong", "modified_hong")

QUAD_REL_TOL = 1e-10
QUAD_ABS_FLOOR = 1e-14


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved tolerance {achieved:.3e})")
        self.achieved = achieved


class CalibrationError(RuntimeError):
    """A sampled inequality has the wrong sign, so no constant can be certified."""

    def __init__(self, inequality: str, witness, value: float):
        super().__init__(
            f"calibration failed: {inequality} violated at {np.asarray(witness)} "
            f"(value {value:.6g})"
        )
        self.inequality = inequality
        self.witness = np.asarray(witness, dtype=float)
        self.value = value


@dataclass(frozen=True)
class LyapunovBundle:
    """A controller variant plus the data needed to evaluate its Lyapunov objects."""

    variant: str
    ladder: ExponentLadder
    gains: tuple

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "gains", validate_gains(self.gains, self.ladder.r))

    @property
    def decrease_exponent(self) -> float:
        """Exponent of the V1 decrease condition, 1 + kappa/(2 p_{r+1}) = 1/2."""
        return 1.0 + self.ladder.kappa / (2.0 * self.ladder.p[-1])

    def control(self, z) -> float:
        if self.variant == "hong":
            return hong_control(z, self.ladder, self.gains)
        return modified_hong_control(z, self.ladder, self.gains)


def make_bundle(variant: str, r: int, gains) -> LyapunovBundle:
    return LyapunovBundle(variant, build_ladder(r), tuple(gains))


def adaptive_simpson(
    g,
    a: float,
    b: float,
    rel_tol: float = QUAD_REL_TOL,
    abs_floor: float = QUAD_ABS_FLOOR,
    max_depth: int = 48,
) -> float:
    """Adaptive Simpson quadrature of g over [a, b] with interval bisection.

    The per-interval acceptance test is the classical |S_half - S| <= 15*tol
    Richardson estimate, with the tolerance split between children.
    """
    a = float(a)
    b = float(b)
    if a == b:
        return 0.0

    def simpson(lo, hi, flo, fm, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fm + fhi)

    fa, fb = g(a), g(b)
    m0 = 0.5 * (a + b)
    fm0 = g(m0)
    whole = simpson(a, b, fa, fm0, fb)
    tol0 = max(rel_tol * abs(whole), abs_floor)
    # stack entries: (lo, hi, flo, fm, fhi, S, tol, depth)
    stack = [(a, b, fa, fm0, fb, whole, tol0, 0)]
    total = 0.0
    worst = 0.0
    failed = False
    while stack:
        lo, hi, flo, fm, fhi, s, tol, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        flm = g(lm)
        frm = g(rm)
        left = simpson(lo, mid, flo, flm, fm)
        right = simpson(mid, hi, fm, frm, fhi)
        err = (left + right - s) / 15.0
        if abs(err) <= tol:
            total += left + right + err
        elif depth >= max_depth:
            total += left + right + err
            worst = max(worst, abs(err))
            failed = True
        else:
            half = 0.5 * tol
            stack.append((lo, mid, flo, flm, fm, left, half, depth + 1))
            stack.append((mid, hi, fm, frm, fhi, right, half, depth + 1))
    if failed:
        raise QuadratureError("adaptive Simpson quadrature did not converge", worst)
    return total


def _terminal_potential(z_r: float, v_prev: float, b: float) -> float:
    """Top potential of the switching variant, by quadrature split at s = 0.

    Integrates (|s|^b + |v_prev|^b) * sign(s - v_prev) from v_prev to z_r;
    the sign factor is constant on the open interval, so the value is the
    magnitude of the integral of the nonnegative envelope.
    """
    if z_r == v_prev:
        return 0.0
    c = abs(v_prev) ** b

    def g(s):
        return abs(s) ** b + c

    lo, hi = (v_prev, z_r) if z_r > v_prev else (z_r, v_prev)
    if lo < 0.0 < hi:
        val = adaptive_simpson(g, lo, 0.0) + adaptive_simpson(g, 0.0, hi)
    else:
        val = adaptive_simpson(g, lo, hi)
    return abs(val)


class ChainTerms(NamedTuple):
    """One pass over the cascade at a fixed state."""

    v: tuple  # virtual controls (v_0, ..., v_r)
    potentials: tuple  # (W_1, ..., W_r)
    v0: float  # sum of potentials
    w_top: float  # integrand of the top potential at z_r
    u0: float  # feedback value of the bundle's variant


def chain_terms(z, bundle: LyapunovBundle) -> ChainTerms:
    lad = bundle.ladder
    g = bundle.gains
    r = lad.r
    arr = np.asarray(z, dtype=float)
    if arr.shape != (r,):
        raise ValueError(f"state must have shape ({r},), got {arr.shape}")
    modified = bundle.variant == "modified_hong"
    v = [0.0]
    pots = []
    total = 0.0
    w_top = 0.0
    u0 = 0.0
    for i in range(r):
        zi = float(arr[i])
        b = lad.beta[i]
        v_prev = v[i]
        pv = signed_power(v_prev, b)
        last = i == r - 1
        if modified and last:
            w_top = (abs(zi) ** b + abs(v_prev) ** b) * float(
                (zi > v_prev) - (zi < v_prev)
            )
            wi = _terminal_potential(zi, v_prev, b)
            mag = (abs(zi) ** b + abs(v_prev) ** b) ** (lad.alpha[i] / b)
            u0 = -g[i] * mag * float((zi > v_prev) - (zi < v_prev))
            v.append(u0)
        else:
            diff = signed_power(zi, b) - pv
            wi = (abs(zi) ** (b + 1.0) - abs(v_prev) ** (b + 1.0)) / (b + 1.0) - pv * (
                zi - v_prev
            )
            v.append(-g[i] * signed_power(diff, lad.alpha[i] / b))
            if last:
                w_top = diff
                u0 = v[-1]
        pots.append(wi)
        total += wi
    return ChainTerms(tuple(v), tuple(pots), total, w_top, u0)


def potential_Wi(i: int, z_prefix, bundle: LyapunovBundle) -> float:
    """Potential of cascade level i, a function of z_1..z_i only.

    Levels below the top (and every level of the continuous variant) have the
    closed form

        (|z_i|^(b+1) - |v|^(b+1))/(b+1) - <v>^b (z_i - v),   b = beta_{i-1},

    with v = v_{i-1}(z_1..z_{i-1}); the top level of the switching variant is
    integrated numerically.  The result is nonnegative and vanishes exactly
    on z_i = v_{i-1}.
    """
    lad = bundle.ladder
    if not 1 <= i <= lad.r:
        raise ValueError(f"level must be in 1..{lad.r}, got {i}")
    prefix = np.asarray(z_prefix, dtype=float)
    if prefix.shape != (i,):
        raise ValueError(f"need the first {i} state components, got shape {prefix.shape}")
    v_prev = 0.0
    for j in range(i - 1):
        b = lad.beta[j]
        diff = signed_power(float(prefix[j]), b) - signed_power(v_prev, b)
        v_prev = -bundle.gains[j] * signed_power(diff, lad.alpha[j] / b)
    b = lad.beta[i - 1]
    zi = float(prefix[i - 1])
    if bundle.variant == "modified_hong" and i == lad.r:
        return _terminal_potential(zi, v_prev, b)
    pv = signed_power(v_prev, b)
    return (abs(zi) ** (b + 1.0) - abs(v_prev) ** (b + 1.0)) / (b + 1.0) - pv * (zi - v_prev)


def v0(z, bundle: LyapunovBundle) -> float:
    """Cascade potential: sum of the level potentials, positive definite."""
    return chain_terms(z, bundle).v0


def v1(z, bundle: LyapunovBundle) -> float:
    """Scaled potential V0^lambda/lambda, homogeneous of degree 2 p_{r+1}."""
    lam = bundle.ladder.lambda_V
    return v0(z, bundle) ** lam / lam


def dr_v1(z, bundle: LyapunovBundle) -> float:
    """Top partial derivative of the scaled potential: V0^(lambda-1) * w_r.

    Homogeneous of degree zero, hence globally bounded by its supremum over
    a homogeneous sphere; assigned the value 0 at the origin.
    """
    lad = bundle.ladder
    arr = np.asarray(z, dtype=float)
    nrm = homogeneous_max_norm(lad.state_weights, arr)
    if nrm == 0.0:
        return 0.0
    # degree-zero: renormalize extreme states so V0^(lambda-1) cannot overflow
    if nrm < 1e-20 or nrm > 1e20:
        arr = dilation_apply(lad.state_weights, 1.0 / nrm, arr)
    terms = chain_terms(arr, bundle)
    if terms.v0 == 0.0:
        return 0.0
    return terms.v0 ** (lad.lambda_V - 1.0) * terms.w_top


def extended_w(z, xi: float, a_const: float, k_i: float, bundle: LyapunovBundle) -> float:
    """Extended function A*(V1 + xi^2/(2 kI))^(3/2) - z_r*xi.

    Positive definite for large enough A; homogeneous of degree 3 p_{r+1}
    with respect to the extended dilation family.
    """
    if a_const <= 0 or k_i <= 0:
        raise ValueError("extended_w: A and kI must be positive")
    e = 2.0 - bundle.decrease_exponent
    val = v1(z, bundle) + xi * xi / (2.0 * k_i)
    return a_const * val**e - float(np.asarray(z, dtype=float)[-1]) * xi


def extended_w_partials(z, xi: float, a_const: float, k_i: float, bundle: LyapunovBundle):
    """Closed-form partials of the extended function in (z_r, xi)."""
    if a_const <= 0 or k_i <= 0:
        raise ValueError("extended_w_partials: A and kI must be positive")
    e = 2.0 - bundle.decrease_exponent
    val = v1(z, bundle) + xi * xi / (2.0 * k_i)
    shell = a_const * e * val ** (e - 1.0)
    z_r = float(np.asarray(z, dtype=float)[-1])
    d_r = shell * dr_v1(z, bundle) - xi
    d_xi = shell * xi / k_i - z_r
    return d_r, d_xi


def homogeneous_sphere_sample(w: DilationWeights, n: int, seed: int) -> np.ndarray:
    """n points on the unit sphere of the homogeneous norm of the family w.

    Each Euclidean-unit gaussian direction is rescaled along its dilation
    orbit until the homogeneous norm equals one; deterministic per seed.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    rng = np.random.default_rng(seed)
    dim = len(w)
    dirs = rng.standard_normal((n, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    weights = np.asarray(w.weights)
    norms = np.sqrt(np.sum(np.abs(dirs) ** (2.0 / weights), axis=1))
    return dirs * (1.0 / norms)[:, None] ** weights


@dataclass(frozen=True)
class CalibrationResult:
    """Numerically certified constants for one controller bundle.

    All extrema were taken over sampled homogeneous spheres and shrunk (grown
    for upper bounds) by the safety margin; every certified quantity is a
    degree-zero ratio, so the sphere extremum is the global one up to
    sampling density.
    """

    c: float
    A: float
    d: float
    v1_sup: float
    phi_star: float
    gamma_tilde: float
    delta0: float
    lambda0: float
    sample_count: int
    safety_margin: float
    variant: str
    r: int
    kP: float
    kI: float
    seed: int
    d1_hat: float


def closed_loop_v1_rate(z, bundle: LyapunovBundle) -> float:
    """Ratio -dV1/dt / V1^(1/2) along the raw closed loop at a state z != 0.

    The time derivative is a centered difference of V1 along the field
    direction, which is exact for the piecewise-linear r = 1 potential and
    fourth-order accurate elsewhere off the kink surfaces.
    """
    arr = np.asarray(z, dtype=float)
    field = np.empty_like(arr)
    field[:-1] = arr[1:]
    field[-1] = bundle.control(arr)
    fn = float(np.linalg.norm(field))
    zn = float(np.linalg.norm(arr))
    if zn == 0.0:
        raise ValueError("closed_loop_v1_rate: undefined at the origin")
    if fn == 0.0:
        return math.inf
    h = 1e-6 * zn / fn
    dv1 = (v1(arr + h * field, bundle) - v1(arr - h * field, bundle)) / (2.0 * h)
    return -dv1 / math.sqrt(v1(arr, bundle))


def _upper_decrease_bound(a_const, c, k_p, k_i, v1s, u0s, drvs, zr, xi):
    """Sampled upper bound on dW/dt along the pure super-twisting loop."""
    return -1.5 * c * a_const * v1s - k_p * u0s * xi + k_i * zr * drvs - xi * xi


def calibrate(
    bundle: LyapunovBundle,
    kP: float = 1.0,
    kI: float = 1.0,
    sample_count: int = 4096,
    margin: float = 0.1,
    seed: int = 20240,
    phi_bar: float | None = None,
    gamma_bar: float | None = None,
    gamma_m: float | None = None,
    gamma_M: float | None = None,
) -> CalibrationResult:
    """Certify the decrease constants of the bundle by sphere sampling.

    Steps, in dependency order: the V1 decrease rate c of the raw loop, the
    smallest doubling-search A making W positive with margin-negative upper
    bound on its derivative, the decrease constant d of W, the supremum of
    the top partial of V1, and the admissible perturbation budgets
    (phi_star, gamma_tilde, delta0).  With disturbance bounds supplied,
    lambda0 = max(phi_bar/phi_star, 1/(gamma_d*gamma_tilde)).

    Raises CalibrationError naming the violated inequality and the witness
    sample whenever an extremum has the wrong sign.
    """
    if sample_count < 1000:
        raise ValueError(f"sample_count must be at least 1000, got {sample_count}")
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must be in (0, 1), got {margin}")
    if kP < 1.0 or kI <= 0.0:
        raise ValueError("calibrate: need kP >= 1 and kI > 0")
    lad = bundle.ladder

    zs = homogeneous_sphere_sample(lad.state_weights, sample_count, seed)
    ext = homogeneous_sphere_sample(lad.extended_weights, sample_count, seed + 1)

    # decrease rate of V1 along the raw loop (condition on the state sphere)
    rates = np.array([closed_loop_v1_rate(z, bundle) for z in zs])
    i_min = int(np.argmin(rates))
    if rates[i_min] <= 0.0:
        raise CalibrationError("V1 decrease along the raw loop", zs[i_min], rates[i_min])
    c = (1.0 - margin) * float(rates[i_min])

    # supremum of the top partial on the state sphere (degree-zero field)
    v1_sup = float(max(abs(dr_v1(z, bundle)) for z in zs))
    if v1_sup <= 0.0:
        raise CalibrationError("positivity of sup |d_r V1|", zs[0], v1_sup)

    # per-sample data on the extended sphere
    zpart = ext[:, :-1]
    xi = ext[:, -1]
    v1s = np.array([v1(z, bundle) for z in zpart])
    u0s = np.array([bundle.control(z) for z in zpart])
    drvs = np.array([dr_v1(z, bundle) for z in zpart])
    zr = zpart[:, -1]

    # smallest power-of-two A with positive W and a margin of negativity in
    # the decrease bound; both requirements are monotone in A
    cushion = margin * (1.5 * c * v1s + xi * xi)
    a_const = None
    for k in range(41):
        cand = float(2**k)
        w_vals = cand * (v1s + xi * xi / (2.0 * kI)) ** 1.5 - zr * xi
        bound = _upper_decrease_bound(cand, c, kP, kI, v1s, u0s, drvs, zr, xi)
        if w_vals.min() > 0.0 and (bound + cushion).max() <= 0.0:
            a_const = cand
            break
    if a_const is None:
        bad = int(np.argmax(bound + cushion))
        raise CalibrationError("negative-definiteness of the W bound", ext[bad], bound[bad])

    w_vals = a_const * (v1s + xi * xi / (2.0 * kI)) ** 1.5 - zr * xi
    bound = _upper_decrease_bound(a_const, c, kP, kI, v1s, u0s, drvs, zr, xi)
    w23 = w_vals ** (2.0 / 3.0)
    ratio = -bound / w23
    j_min = int(np.argmin(ratio))
    if ratio[j_min] <= 0.0:
        raise CalibrationError("W decrease rate", ext[j_min], ratio[j_min])
    d = (1.0 - margin) * float(ratio[j_min])

    # closed-form partials of W, cross-checked against central differences
    d_r = a_const * 1.5 * np.sqrt(v1s + xi * xi / (2.0 * kI)) * drvs - xi
    d_xi = a_const * 1.5 * np.sqrt(v1s + xi * xi / (2.0 * kI)) * xi / kI - zr
    _crosscheck_partials(bundle, ext, a_const, kI, d_r, d_xi)

    # admissible budgets: the rate bound on the additive disturbance keeps
    # half of the decrease, the divisor-mismatch and gain-rate channels get
    # one sixth each
    abs_dxi = np.abs(d_xi)
    mask = abs_dxi > 1e-12
    cap_xi = float(np.min(w23[mask] / abs_dxi[mask])) if mask.any() else math.inf
    phi_star = 0.5 * d * cap_xi

    mixed = kP * np.abs(d_r * u0s) + kI * v1_sup * abs_dxi
    mmask = mixed > 1e-12
    cap_mixed = float(np.min(w23[mmask] / mixed[mmask])) if mmask.any() else math.inf
    delta0 = min((d / 6.0) * cap_mixed, 1.0 - 1e-9)

    s1 = float(np.max(abs_dxi / w23))
    d1_hat = 2.0 * kI * v1_sup * s1
    gamma_tilde = min((d / 6.0) * cap_xi / (kI * v1_sup), d / (12.0 * d1_hat))

    lambda0 = 0.0
    if phi_bar is not None and gamma_m is not None and gamma_M is not None:
        gamma_d = 0.5 * (gamma_m + gamma_M)
        lambda0 = max(phi_bar / phi_star, 1.0 / (gamma_d * gamma_tilde))

    return CalibrationResult(
        c=c,
        A=a_const,
        d=d,
        v1_sup=v1_sup,
        phi_star=phi_star,
        gamma_tilde=gamma_tilde,
        delta0=delta0,
        lambda0=lambda0,
        sample_count=sample_count,
        safety_margin=margin,
        variant=bundle.variant,
        r=lad.r,
        kP=kP,
        kI=kI,
        seed=seed,
        d1_hat=d1_hat,
    )


def _crosscheck_partials(bundle, ext, a_const, k_i, d_r, d_xi, n_check: int = 8):
    """Spot-check the closed-form W partials against central differences."""
    lad = bundle.ladder
    count = 0
    for idx in range(ext.shape[0]):
        if count >= n_check:
            break
        z = ext[idx, :-1].copy()
        xi = float(ext[idx, -1])
        # stay away from the switching surface of the modified variant
        vs = hong_virtual_controls(z, lad, bundle.gains)
        if abs(z[-1] - vs[lad.r - 1]) < 1e-2:
            continue
        h = 1e-6
        ez = np.zeros_like(z)
        ez[-1] = h
        fd_r = (
            extended_w(z + ez, xi, a_const, k_i, bundle)
            - extended_w(z - ez, xi, a_const, k_i, bundle)
        ) / (2.0 * h)
        fd_xi = (
            extended_w(z, xi + h, a_const, k_i, bundle)
            - extended_w(z, xi - h, a_const, k_i, bundle)
        ) / (2.0 * h)
        scale_r = abs(d_r[idx]) + 1.0
        scale_xi = abs(d_xi[idx]) + 1.0
        if abs(fd_r - d_r[idx]) / scale_r > 1e-4 or abs(fd_xi - d_xi[idx]) / scale_xi > 1e-4:
            raise CalibrationError(
                "closed-form W partials vs central differences",
                ext[idx],
                max(abs(fd_r - d_r[idx]), abs(fd_xi - d_xi[idx])),
            )
        count += 1


@dataclass(frozen=True)
class RecheckReport:
    passed: bool
    min_w: float
    max_bound: float
    min_d_ratio: float
    min_c_ratio: float


def recheck_calibration(
    result: CalibrationResult,
    bundle: LyapunovBundle,
    sample_count: int = 2000,
    seed: int = 77,
) -> RecheckReport:
    """Re-verify a calibration on held-out sphere samples.

    The margin folded into c and d is what makes the certified values hold
    on fresh samples with room to spare.
    """
    lad = bundle.ladder
    zs = homogeneous_sphere_sample(lad.state_weights, sample_count, seed)
    ext = homogeneous_sphere_sample(lad.extended_weights, sample_count, seed + 1)
    rates = np.array([closed_loop_v1_rate(z, bundle) for z in zs])
    zpart = ext[:, :-1]
    xi = ext[:, -1]
    v1s = np.array([v1(z, bundle) for z in zpart])
    u0s = np.array([bundle.control(z) for z in zpart])
    drvs = np.array([dr_v1(z, bundle) for z in zpart])
    zr = zpart[:, -1]
    w_vals = result.A * (v1s + xi * xi / (2.0 * result.kI)) ** 1.5 - zr * xi
    bound = _upper_decrease_bound(
        result.A, result.c, result.kP, result.kI, v1s, u0s, drvs, zr, xi
    )
    d_ratio = -bound / w_vals ** (2.0 / 3.0)
    report = RecheckReport(
        passed=bool(
            w_vals.min() > 0.0
            and bound.max() < 0.0
            and d_ratio.min() >= result.d
            and rates.min() >= result.c
        ),
        min_w=float(w_vals.min()),
        max_bound=float(bound.max()),
        min_d_ratio=float(d_ratio.min()),
        min_c_ratio=float(rates.min()),
    )
    return report
