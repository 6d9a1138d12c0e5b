"""The time transform V(t|x), its derivative v, and its inverse.

V maps a subject's time axis onto the baseline distribution and comes in
three flavours, all reducing to the classic accelerated-failure-time
transform t * exp(-x'beta) when the flexible coefficients alpha are zero:

* constant:   V(t|x) = t * exp(-x'beta)

* piecewise:  an increasing piecewise-linear function with breakpoints
  tau = (0, tau_1, ..., tau_J),

      V(t|x) = exp(-x'beta) * [min(t, tau_1)
                + sum_j exp(-x1 * alpha_j) * (min(t, tau_{j+1}) - tau_j)_+],

  i.e. slope exp(-x'beta) before tau_1 and exp(-x'beta - x1*alpha_j) on
  [tau_j, tau_{j+1}). Its inverse is again piecewise linear and is
  computed in closed form from the transformed breakpoints V(tau_j).

* spline:     V(t|x) = t * exp(-x'beta - x1 * sum_j alpha_j B_j(log t))
  with a natural cubic spline basis B on the log-time axis (linear term
  plus one restricted cubic per internal knot; linear beyond the boundary
  knots). The inverse is found by bisection on the log-time axis.

A binary time-varying covariate switching 0 -> 1 at time t_x induces

    V(t) = exp(-x'beta) * [min(t, t_x)
            + (t - t_x)_+ * exp(-b1 - sum_k alpha_k B_k(t - t_x))],

with the flexible basis evaluated on the time-since-switch axis (the
piecewise basis B_k(s) = (min(s, tau_{k+1}) - tau_k)_+ / s, or the spline
basis at log(s)). The covariate has not yet switched at t == t_x.

Derivatives at piecewise breakpoints use the right-hand limit so the
likelihood is deterministic for observations landing exactly on a knot.
All functions are pure and accept scalar or ndarray time arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError

__all__ = [
    "EffectSpec",
    "TimeVaryingCovariate",
    "v_value",
    "v_deriv",
    "v_inverse",
    "tv_v_value",
    "tv_v_inverse",
    "monotonicity_check",
    "tv_monotonicity_check",
    "spline_basis",
    "spline_basis_deriv",
]

EFFECT_KINDS = ("constant", "piecewise", "spline")


@dataclass(frozen=True)
class EffectSpec:
    """Shape of the flexible effect: kind plus its knot vector.

    Piecewise knots are on the natural time axis and must start at 0;
    spline knots are boundary-plus-internal locations on the log-time
    axis (or log time-since-switch for time-varying effects). The number
    of alpha coefficients is ``J``: len(knots) - 1 for either flexible
    kind, 0 for constant.
    """

    kind: str
    knots: tuple = ()

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise DomainError(f"unknown effect kind {self.kind!r}")
        knots = tuple(float(k) for k in self.knots)
        object.__setattr__(self, "knots", knots)
        arr = np.asarray(knots, dtype=float)
        if self.kind == "constant":
            if arr.size:
                raise DomainError("constant effect takes no knots")
            return
        if arr.size < 2:
            raise DomainError(f"{self.kind} effect needs at least 2 knots")
        if not np.all(np.isfinite(arr)):
            raise DomainError("knots must be finite")
        if np.any(np.diff(arr) <= 0):
            raise DomainError(f"knots must be strictly increasing: {knots}")
        if self.kind == "piecewise" and arr[0] != 0.0:
            raise DomainError("piecewise knots must start at 0")

    @property
    def J(self) -> int:
        return 0 if self.kind == "constant" else len(self.knots) - 1

    def knot_array(self) -> np.ndarray:
        return np.asarray(self.knots, dtype=float)


@dataclass(frozen=True)
class TimeVaryingCovariate:
    """Switch time of a binary step covariate; +inf means never switches."""

    change_time: float

    def __post_init__(self):
        if np.isnan(self.change_time) or self.change_time <= 0:
            raise DomainError(
                f"change time must be > 0 (or +inf), got {self.change_time}")


def _check_alpha(spec: EffectSpec, alpha) -> np.ndarray:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if spec.kind == "constant" and alpha.size == 0:
        return alpha
    if alpha.size != spec.J:
        raise DomainError(f"alpha has length {alpha.size}, expected {spec.J}")
    return alpha


def _linpred(beta, x) -> float:
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if beta.shape != x.shape:
        raise DomainError(f"beta shape {beta.shape} != x shape {x.shape}")
    return float(x @ beta) if beta.size else 0.0


# -- natural cubic spline basis -------------------------------------------

def spline_basis(knots, u):
    """Natural cubic spline basis on knots k_1 < ... < k_m, evaluated at u.

    Column 0 is the identity; column i is the restricted cubic for
    internal knot k_{i+1},

        (u - k)_+^3 - lam*(u - k_1)_+^3 - (1 - lam)*(u - k_m)_+^3,

    lam = (k_m - k)/(k_m - k_1), which is linear outside [k_1, k_m].
    Returns shape u.shape + (m - 1,).
    """
    knots = np.asarray(knots, dtype=float)
    u = np.asarray(u, dtype=float)
    cols = [u]
    k1, km = knots[0], knots[-1]
    for k in knots[1:-1]:
        lam = (km - k) / (km - k1)
        cols.append(_pcub(u, k) - lam * _pcub(u, k1) - (1 - lam) * _pcub(u, km))
    return np.stack(cols, axis=-1)


def spline_basis_deriv(knots, u):
    """Derivative of `spline_basis` with respect to u, same shape."""
    knots = np.asarray(knots, dtype=float)
    u = np.asarray(u, dtype=float)
    cols = [np.ones_like(u)]
    k1, km = knots[0], knots[-1]
    for k in knots[1:-1]:
        lam = (km - k) / (km - k1)
        cols.append(3 * (_psq(u, k) - lam * _psq(u, k1) - (1 - lam) * _psq(u, km)))
    return np.stack(cols, axis=-1)


def _pcub(u, k):
    d = np.maximum(u - k, 0.0)
    return d * d * d


def _psq(u, k):
    d = np.maximum(u - k, 0.0)
    return d * d


# -- piecewise pieces ------------------------------------------------------

def piecewise_terms(knots: np.ndarray, t):
    """Leading segment min(t, tau_1) and the J capped segment lengths
    (min(t, tau_{j+1}) - tau_j)_+ with tau_{J+1} = +inf."""
    t = np.asarray(t, dtype=float)
    upper = np.append(knots[2:], np.inf)        # tau_{j+1} for j = 1..J
    lead = np.minimum(t, knots[1])
    terms = np.maximum(np.minimum(t[..., None], upper) - knots[1:], 0.0)
    return lead, terms


def piecewise_segment(knots: np.ndarray, t):
    """0-based segment index of t, right-continuous at the knots:
    0 on [0, tau_1), j on [tau_j, tau_{j+1})."""
    t = np.asarray(t, dtype=float)
    return np.clip(np.searchsorted(knots, t, side="right") - 1, 0, len(knots) - 1)


# -- time-varying basis on the time-since-switch axis ----------------------

def tv_basis(effect: EffectSpec, s):
    """Flexible-effect basis at time-since-switch s > 0, shape s.shape + (J,)."""
    s = np.asarray(s, dtype=float)
    if effect.kind == "piecewise":
        knots = effect.knot_array()
        _, terms = piecewise_terms(knots, s)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(s[..., None] > 0, terms / s[..., None], 0.0)
    return spline_basis(effect.knot_array(), np.log(s))


def tv_basis_sderiv(effect: EffectSpec, s):
    """s * d/ds of `tv_basis`, shape s.shape + (J,)."""
    s = np.asarray(s, dtype=float)
    if effect.kind == "piecewise":
        knots = effect.knot_array()
        seg = piecewise_segment(knots, s)
        active = seg[..., None] == np.arange(1, len(knots))
        return active.astype(float) - tv_basis(effect, s)
    return spline_basis_deriv(effect.knot_array(), np.log(s))


# -- V, v, V^{-1} ----------------------------------------------------------

def v_value(spec: EffectSpec, beta, alpha, x, t, x1_index: int = 0):
    """V(t|x); t >= 0 with V(0) = 0."""
    alpha = _check_alpha(spec, alpha)
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(t_arr)) or np.any(t_arr < 0):
        raise DomainError("time must be >= 0")
    eta = _linpred(beta, x)
    x1 = float(np.asarray(x, dtype=float)[x1_index]) if spec.kind != "constant" else 0.0

    if spec.kind == "constant":
        out = t_arr * np.exp(-eta)
    elif spec.kind == "piecewise":
        knots = spec.knot_array()
        lead, terms = piecewise_terms(knots, t_arr)
        out = np.exp(-eta) * (lead + terms @ np.exp(-x1 * alpha))
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            g = spline_basis(spec.knot_array(), np.log(t_arr)) @ alpha
            out = np.where(t_arr > 0, t_arr * np.exp(-eta - x1 * g), 0.0)
    return _scalar_like(t, out)


def v_deriv(spec: EffectSpec, beta, alpha, x, t, x1_index: int = 0):
    """v(t|x) = dV/dt for t > 0; right-hand value at piecewise breakpoints."""
    alpha = _check_alpha(spec, alpha)
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(t_arr)) or np.any(t_arr <= 0):
        raise DomainError("time must be > 0")
    eta = _linpred(beta, x)
    x1 = float(np.asarray(x, dtype=float)[x1_index]) if spec.kind != "constant" else 0.0

    if spec.kind == "constant":
        out = np.full_like(t_arr, np.exp(-eta))
    elif spec.kind == "piecewise":
        seg = piecewise_segment(spec.knot_array(), t_arr)
        alpha_seg = np.concatenate([[0.0], alpha])[seg]
        out = np.exp(-eta - x1 * alpha_seg)
    else:
        u = np.log(t_arr)
        g = spline_basis(spec.knot_array(), u) @ alpha
        gp = spline_basis_deriv(spec.knot_array(), u) @ alpha
        out = np.exp(-eta - x1 * g) * (1.0 - x1 * gp)
    return _scalar_like(t, out)


def v_inverse(spec: EffectSpec, beta, alpha, x, s, x1_index: int = 0):
    """The time t with V(t|x) = s, for s >= 0.

    Closed form for constant and piecewise kinds; bisection on the
    log-time axis for the spline kind (V must be increasing, which is the
    caller's responsibility to ensure via `monotonicity_check`).
    """
    alpha = _check_alpha(spec, alpha)
    s_arr = np.asarray(s, dtype=float)
    if np.any(np.isnan(s_arr)) or np.any(s_arr < 0):
        raise DomainError("target value must be >= 0")
    eta = _linpred(beta, x)
    x1 = float(np.asarray(x, dtype=float)[x1_index]) if spec.kind != "constant" else 0.0

    if spec.kind == "constant":
        out = s_arr * np.exp(eta)
    elif spec.kind == "piecewise":
        out = _piecewise_inverse(spec.knot_array(), eta, x1, alpha, s_arr)
    else:
        out = _spline_inverse(spec.knot_array(), eta, x1, alpha, np.atleast_1d(s_arr))
        out = out.reshape(s_arr.shape)
    return _scalar_like(s, out)


def _piecewise_inverse(knots, eta, x1, alpha, s):
    slopes = np.exp(-eta - x1 * np.concatenate([[0.0], alpha]))
    tau_star = np.concatenate([[0.0], np.cumsum(slopes[:-1] * np.diff(knots))])
    seg = np.clip(np.searchsorted(tau_star, s, side="right") - 1, 0, len(knots) - 1)
    return knots[seg] + (s - tau_star[seg]) / slopes[seg]


def _spline_inverse(knots, eta, x1, alpha, s):
    # Solve r - x1*g(r) = log(s) + eta for r = log(t); s = 0 maps to t = 0
    # directly and is excluded from the root search.
    with np.errstate(divide="ignore"):
        target = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), 0.0) + eta

    def phi(r):
        return r - x1 * (spline_basis(knots, r) @ alpha)

    lo = target - 1.0
    hi = target + 1.0
    for _ in range(200):
        bad = phi(lo) > target
        if not np.any(bad):
            break
        lo = np.where(bad, lo - 2.0 * (hi - lo), lo)
    else:
        raise NumericalError("spline inverse: lower bracket failed")
    for _ in range(200):
        bad = phi(hi) < target
        if not np.any(bad):
            break
        hi = np.where(bad, hi + 2.0 * (hi - lo), hi)
    else:
        raise NumericalError("spline inverse: upper bracket failed")

    for _ in range(100):
        mid = 0.5 * (lo + hi)
        left = phi(mid) < target
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
        if np.all(hi - lo <= 1e-12):
            break
    out = np.exp(0.5 * (lo + hi))
    return np.where(s > 0, out, 0.0)


def tv_v_value(beta1: float, beta2_term: float, alpha, tv: TimeVaryingCovariate,
               effect: EffectSpec | None, t):
    """V(t) under a binary covariate switching at tv.change_time.

    `beta2_term` is the linear predictor x'beta of the time-invariant
    covariates; `effect` carries the flexible basis for the switch effect
    (None or constant kind for a pure constant effect).
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(t_arr)) or np.any(t_arr < 0):
        raise DomainError("time must be >= 0")
    out = np.exp(-beta2_term) * _tv_core(beta1, alpha, tv.change_time, effect, t_arr)
    return _scalar_like(t, out)


def _tv_core(beta1, alpha, t_x, effect, t):
    s = t - t_x
    post = s > 0
    if not np.any(post):
        return np.minimum(t, t_x) + 0.0
    s_safe = np.where(post, s, 1.0)
    a = _tv_exponent(alpha, effect, s_safe)
    bump = np.where(post, s_safe * np.exp(-beta1 - a), 0.0)
    return np.minimum(t, t_x) + bump


def _tv_exponent(alpha, effect, s):
    if effect is None or effect.kind == "constant":
        return np.zeros_like(s)
    alpha = _check_alpha(effect, alpha)
    return tv_basis(effect, s) @ alpha


def tv_v_inverse(beta1: float, beta2_term: float, alpha,
                 tv: TimeVaryingCovariate, effect: EffectSpec | None, s):
    """Inverse of `tv_v_value`: closed form for a constant switch effect,
    bisection on the time-since-switch axis for a flexible one."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(np.isnan(s_arr)) or np.any(s_arr < 0):
        raise DomainError("target value must be >= 0")
    t_x = tv.change_time
    scale = np.exp(beta2_term)
    v_at_switch = t_x * np.exp(-beta2_term)  # V value where the switch bites
    pre = s_arr <= v_at_switch

    if effect is None or effect.kind == "constant":
        with np.errstate(invalid="ignore"):
            post_t = t_x + (s_arr * scale - t_x) * np.exp(beta1)
        out = np.where(pre, s_arr * scale, post_t)
        return _scalar_like(s, out)

    target = s_arr * scale - t_x  # solve u * exp(-beta1 - a(u)) = target, u > 0
    u = _tv_flexible_inverse(beta1, _check_alpha(effect, alpha), effect,
                             np.atleast_1d(np.where(pre, 1.0, target)))
    out = np.where(pre, s_arr * scale, t_x + u.reshape(s_arr.shape))
    return _scalar_like(s, out)


def _tv_flexible_inverse(beta1, alpha, effect, target):
    def h(u):
        return u * np.exp(-beta1 - tv_basis(effect, u) @ alpha)

    lo = np.full_like(target, 1e-300)
    hi = np.maximum(target * np.exp(beta1), 1e-6)
    for _ in range(400):
        bad = h(hi) < target
        if not np.any(bad):
            break
        hi = np.where(bad, hi * 2.0, hi)
    else:
        raise NumericalError("time-varying inverse: upper bracket failed")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        left = h(mid) < target
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
        if np.all(hi - lo <= 1e-13 * np.maximum(1.0, hi)):
            break
    return 0.5 * (lo + hi)


# -- monotonicity ----------------------------------------------------------

def monotonicity_check(spec: EffectSpec, beta, alpha, x, grid,
                       x1_index: int = 0) -> bool:
    """True iff v(t|x) > 0 at every grid point, for every row of x.

    Constant and piecewise transforms are increasing by construction; the
    spline transform is increasing iff x1 * g'(log t) < 1 everywhere.
    """
    alpha = _check_alpha(spec, alpha)
    if spec.kind in ("constant", "piecewise"):
        return bool(np.all(np.isfinite(alpha)))
    grid = np.asarray(grid, dtype=float)
    patterns = np.atleast_2d(np.asarray(x, dtype=float))
    x1 = patterns[:, x1_index]
    gp = spline_basis_deriv(spec.knot_array(), np.log(grid)) @ alpha
    return bool(np.all(1.0 - np.outer(x1, gp) > 0.0))


def tv_monotonicity_check(beta1: float, alpha, effect: EffectSpec | None,
                          s_grid) -> bool:
    """True iff the post-switch transform u * exp(-b1 - a(u)) is increasing
    at every point of the time-since-switch grid."""
    if effect is None or effect.kind == "constant":
        return np.isfinite(beta1)
    alpha = _check_alpha(effect, alpha)
    s_grid = np.asarray(s_grid, dtype=float)
    sap = tv_basis_sderiv(effect, s_grid) @ alpha
    return bool(np.all(1.0 - sap > 0.0))


def _scalar_like(t, value):
    if np.ndim(t) == 0:
        return float(value)
    return value
