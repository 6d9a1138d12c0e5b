"""Baseline survivor distributions.

Three families are supported:

* Weibull:     S0(t) = exp(-[t * exp(-mu)]^sigma)
* log-normal:  S0(t) = 1 - Phi((log t - mu) / sigma)
* Bernstein-transformed ("tbp"): a simplex-weighted mixture of regularized
  incomplete-beta CDFs applied to a Weibull or log-normal centering
  survivor,

      S0(t) = sum_{k=1..K} w_k * I(S0c(t); K - k + 1, k),

  where I(x; a, b) is the regularized incomplete beta function and S0c is
  the centering survivor. Equal weights w_k = 1/K reproduce the centering
  distribution exactly, and any simplex weight vector yields a valid
  (decreasing) survivor because each beta CDF is increasing on [0, 1].

All operations are pure functions of immutable value objects and accept a
scalar or ndarray time argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError

__all__ = [
    "BaselineParams",
    "TBPWeights",
    "BaselineSpec",
    "survivor",
    "density",
    "log_survivor",
    "log_density",
    "inverse_survivor",
]

# log of the smallest positive normal double; below this a log-probability
# is treated as -inf rather than fed to downstream exp/expm1 calls.
LOG_FLOOR = -745.0


@dataclass(frozen=True)
class BaselineParams:
    """Location (log-time) and positive shape/scale of a parametric baseline."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise DomainError(f"baseline mu must be finite, got {self.mu}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"baseline sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class TBPWeights:
    """Simplex weights of the Bernstein-transformed baseline plus the
    Dirichlet concentration used in its prior."""

    w: tuple
    theta: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", tuple(float(v) for v in w))
        if w.ndim != 1 or w.size < 1:
            raise DomainError("tbp weights must be a non-empty vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("tbp weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"tbp weights must sum to 1, got {w.sum():.15g}")
        if not (np.isfinite(self.theta) and self.theta > 0):
            raise DomainError(f"tbp theta must be > 0, got {self.theta}")

    @property
    def K(self) -> int:
        return len(self.w)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=float)


FAMILIES = ("weibull", "lognormal", "tbp")
CENTERINGS = ("weibull", "lognormal")


@dataclass(frozen=True)
class BaselineSpec:
    """Choice of baseline family; `centering` and `K` apply to tbp only."""

    family: str
    centering: str = "weibull"
    K: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown baseline family {self.family!r}")
        if self.family == "tbp":
            if self.centering not in CENTERINGS:
                raise DomainError(f"unknown tbp centering {self.centering!r}")
            if int(self.K) < 1:
                raise DomainError(f"tbp requires K >= 1, got {self.K}")
            object.__setattr__(self, "K", int(self.K))

    @property
    def is_tbp(self) -> bool:
        return self.family == "tbp"


def _check_weights(spec: BaselineSpec, w: TBPWeights | None) -> None:
    if spec.is_tbp:
        if w is None:
            raise DomainError("tbp baseline requires a weight vector")
        if w.K != spec.K:
            raise DomainError(f"weight vector length {w.K} != spec K {spec.K}")
    elif w is not None:
        raise DomainError("weights supplied for a non-tbp baseline")


def _as_time_array(t, allow_zero: bool) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError("time contains NaN")
    lo = 0.0 if allow_zero else np.nextafter(0.0, 1.0)
    if np.any(arr < lo):
        raise DomainError("time must be " + (">= 0" if allow_zero else "> 0"))
    return arr


def _scalar_like(t, value: np.ndarray):
    if np.ndim(t) == 0:
        return float(value)
    return value


# -- parametric centering forms ------------------------------------------

def _weibull_log_sf(mu: float, sigma: float, t: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (t * np.exp(-mu)) ** sigma
    return -z


def _weibull_log_pdf(mu: float, sigma: float, t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore"):
        logt = np.log(t)
        z = (t * np.exp(-mu)) ** sigma
    return np.log(sigma) - mu + (sigma - 1.0) * (logt - mu) - z


def _weibull_inv_sf(mu: float, sigma: float, p) -> np.ndarray:
    return np.exp(mu) * (-np.log(p)) ** (1.0 / sigma)


def _lognormal_log_sf(mu: float, sigma: float, t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        s = (np.log(t) - mu) / sigma
    return special.log_ndtr(-s)


def _lognormal_log_pdf(mu: float, sigma: float, t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logt = np.log(t)
        s = (logt - mu) / sigma
    return -0.5 * s * s - 0.5 * np.log(2.0 * np.pi) - np.log(sigma) - logt


def _lognormal_inv_sf(mu: float, sigma: float, p) -> np.ndarray:
    return np.exp(mu + sigma * special.ndtri(1.0 - np.asarray(p, dtype=float)))


def _centering_log_sf(spec: BaselineSpec, params: BaselineParams, t):
    if spec.centering == "weibull":
        return _weibull_log_sf(params.mu, params.sigma, t)
    return _lognormal_log_sf(params.mu, params.sigma, t)


def _centering_log_pdf(spec: BaselineSpec, params: BaselineParams, t):
    if spec.centering == "weibull":
        return _weibull_log_pdf(params.mu, params.sigma, t)
    return _lognormal_log_pdf(params.mu, params.sigma, t)


def _centering_inv_sf(spec: BaselineSpec, params: BaselineParams, p):
    if spec.centering == "weibull":
        return _weibull_inv_sf(params.mu, params.sigma, p)
    return _lognormal_inv_sf(params.mu, params.sigma, p)


# -- Bernstein transform pieces ------------------------------------------

def tbp_shape_pairs(K: int) -> tuple[np.ndarray, np.ndarray]:
    """Beta shape pairs (a_k, b_k) = (K - k + 1, k) for k = 1..K."""
    k = np.arange(1, K + 1)
    return (K - k + 1).astype(float), k.astype(float)


def _log_betainc_integer(a: np.ndarray, b: np.ndarray, logp: np.ndarray,
                         log1mp: np.ndarray) -> np.ndarray:
    """log I(p; a, b) for positive integer shapes via the binomial tail sum

        I(p; a, b) = sum_{j=a}^{n} C(n, j) p^j (1-p)^(n-j),  n = a + b - 1,

    evaluated with log-sum-exp so it stays finite for p near 0 or 1.
    Shapes: a, b are (K,), logp/log1mp are (...,); result is (..., K).
    """
    n = int(round(float(a[0] + b[0]) - 1.0))
    j = np.arange(1, n + 1, dtype=float)  # smallest a is 1
    logcomb = (special.gammaln(n + 1.0) - special.gammaln(j + 1.0)
               - special.gammaln(n - j + 1.0))
    terms = (logcomb + j * logp[..., None, None]
             + _zero_safe_mul(n - j, log1mp[..., None, None]))  # (..., 1, n)
    mask = j[None, :] >= a[:, None]  # (K, n): include j >= a_k only
    terms = np.where(mask, terms, -np.inf)
    return special.logsumexp(terms, axis=-1)


def _zero_safe_mul(c, logv):
    """c * logv with the convention 0 * (-inf) = 0."""
    with np.errstate(invalid="ignore"):
        return np.where(np.asarray(c) == 0, 0.0, c * logv)


def _tbp_log_sf(spec, params, w: TBPWeights, t: np.ndarray) -> np.ndarray:
    logsc = _centering_log_sf(spec, params, t)
    log1msc = _log1mexp(logsc)
    a, b = tbp_shape_pairs(spec.K)
    logI = _log_betainc_integer(a, b, logsc, log1msc)  # (..., K)
    with np.errstate(divide="ignore"):
        logw = np.log(w.as_array())
    return special.logsumexp(logw + logI, axis=-1)


def _tbp_sf(spec, params, w: TBPWeights, t: np.ndarray) -> np.ndarray:
    sc = np.exp(_centering_log_sf(spec, params, t))
    a, b = tbp_shape_pairs(spec.K)
    vals = special.betainc(a, b, sc[..., None])
    return vals @ w.as_array()


def _tbp_log_pdf(spec, params, w: TBPWeights, t: np.ndarray) -> np.ndarray:
    logsc = _centering_log_sf(spec, params, t)
    log1msc = _log1mexp(logsc)
    logfc = _centering_log_pdf(spec, params, t)
    a, b = tbp_shape_pairs(spec.K)
    logbeta = (-special.betaln(a, b)
               + _zero_safe_mul(a - 1.0, logsc[..., None])
               + _zero_safe_mul(b - 1.0, log1msc[..., None]))
    with np.errstate(divide="ignore"):
        logw = np.log(w.as_array())
    return logfc + special.logsumexp(logw + logbeta, axis=-1)


def _log1mexp(logx: np.ndarray) -> np.ndarray:
    """log(1 - exp(logx)) for logx <= 0, stable near both ends."""
    logx = np.asarray(logx, dtype=float)
    out = np.empty_like(logx)
    small = logx < np.log(0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[small] = np.log1p(-np.exp(logx[small]))
        out[~small] = np.log(-np.expm1(logx[~small]))
    return out


# -- public operations ----------------------------------------------------

def log_survivor(spec: BaselineSpec, params: BaselineParams,
                 w: TBPWeights | None, t):
    """log S0(t). Stable deep in the tail (no exp/log round trip)."""
    _check_weights(spec, w)
    arr = _as_time_array(t, allow_zero=True)
    if spec.family == "weibull":
        out = _weibull_log_sf(params.mu, params.sigma, arr)
    elif spec.family == "lognormal":
        out = _lognormal_log_sf(params.mu, params.sigma, arr)
    else:
        out = _tbp_log_sf(spec, params, w, arr)
    return _scalar_like(t, out)


def survivor(spec: BaselineSpec, params: BaselineParams,
             w: TBPWeights | None, t):
    """Baseline survivor S0(t) in [0, 1]."""
    _check_weights(spec, w)
    arr = _as_time_array(t, allow_zero=True)
    if spec.family == "weibull":
        out = np.exp(_weibull_log_sf(params.mu, params.sigma, arr))
    elif spec.family == "lognormal":
        out = np.exp(_lognormal_log_sf(params.mu, params.sigma, arr))
    else:
        out = _tbp_sf(spec, params, w, arr)
    return _scalar_like(t, out)


def log_density(spec: BaselineSpec, params: BaselineParams,
                w: TBPWeights | None, t):
    """log f0(t) where f0 = -dS0/dt; requires t > 0."""
    _check_weights(spec, w)
    arr = _as_time_array(t, allow_zero=False)
    if spec.family == "weibull":
        out = _weibull_log_pdf(params.mu, params.sigma, arr)
    elif spec.family == "lognormal":
        out = _lognormal_log_pdf(params.mu, params.sigma, arr)
    else:
        out = _tbp_log_pdf(spec, params, w, arr)
    return _scalar_like(t, out)


def density(spec: BaselineSpec, params: BaselineParams,
            w: TBPWeights | None, t):
    """Baseline density f0(t) >= 0; requires t > 0."""
    return _scalar_like(t, np.exp(log_density(spec, params, w, np.asarray(t, dtype=float))))


def inverse_survivor(spec: BaselineSpec, params: BaselineParams,
                     w: TBPWeights | None, p):
    """The time t solving S0(t) = p, for p in (0, 1).

    Closed form for the parametric families; bracketed bisection for the
    Bernstein-transformed family, with the bracket seeded from centering
    quantiles at p/10 and 1 - (1-p)/10 and widened geometrically if needed.
    """
    _check_weights(spec, w)
    parr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(parr)) or np.any(parr <= 0) or np.any(parr >= 1):
        raise DomainError("quantile level p must lie in (0, 1)")
    if spec.family == "weibull":
        out = _weibull_inv_sf(params.mu, params.sigma, parr)
    elif spec.family == "lognormal":
        out = _lognormal_inv_sf(params.mu, params.sigma, parr)
    else:
        out = _tbp_inv_sf(spec, params, w, np.atleast_1d(parr))
        out = out.reshape(parr.shape)
    return _scalar_like(p, out)


def _tbp_inv_sf(spec, params, w, p: np.ndarray) -> np.ndarray:
    lo = _centering_inv_sf(spec, params, 1.0 - (1.0 - p) / 10.0)
    hi = _centering_inv_sf(spec, params, p / 10.0)

    def sf(t):
        return _tbp_sf(spec, params, w, t)

    for _ in range(200):
        bad = sf(lo) < p
        if not np.any(bad):
            break
        lo = np.where(bad, lo / 4.0, lo)
    else:
        raise NumericalError("tbp inverse: lower bracket failed",
                             p=p.tolist(), lo=lo.tolist())
    for _ in range(200):
        bad = sf(hi) > p
        if not np.any(bad):
            break
        hi = np.where(bad, hi * 4.0, hi)
    else:
        raise NumericalError("tbp inverse: upper bracket failed",
                             p=p.tolist(), hi=hi.tolist())

    while True:
        mid = 0.5 * (lo + hi)
        high_side = sf(mid) >= p  # survivor decreasing: root is to the right
        lo = np.where(high_side, mid, lo)
        hi = np.where(high_side, hi, mid)
        if np.all(hi - lo <= 1e-10 * np.maximum(1.0, lo)):
            return 0.5 * (lo + hi)
