"""Log-likelihood, priors, and the unconstrained log-posterior with its
analytic gradient.

The per-subject likelihood under censoring interval (y_l, y_u], exact-event
indicator delta, and left-truncation time l is

    [f0(V(y_l)) v(y_l)]^delta * [S0(V(y_l)) - S0(V(y_u))]^(1-delta)
        / S0(V(l)),

with S0(inf) = 0, so right censoring and the classic censored-data
likelihood fall out as special cases. Priors are flat on beta, alpha and
mu, Gamma(a_sigma, b_sigma) on sigma, and for Bernstein-transformed
baselines symmetric Dirichlet(theta) on the weights with a
Gamma(a_theta, b_theta) hyperprior on theta.

The sampler works on an unconstrained vector z laid out as

    [beta | alpha | mu | log sigma | stick-breaking coords of w | log theta]

with the standard logistic stick-breaking transform (offset log(K - k) at
stick k so the origin maps to uniform weights) and its log-Jacobian added
to the posterior. Gradients are assembled analytically by the chain rule
through the time transform, the baseline, and the transforms; every
component is pinned against central finite differences in the test suite.

Per-subject log-likelihood contributions are computed in log space
throughout; a contribution that falls below -745 (where a double
underflows) is declared -inf, which the sampler treats as a rejection.
Non-monotone flexible transforms are likewise rejected by returning -inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import baseline as bl
from .covproc import (
    piecewise_segment,
    piecewise_terms,
    spline_basis,
    spline_basis_deriv,
    tv_basis,
    tv_basis_sderiv,
)
from .data import Dataset, as_dataset, max_followup
from .errors import DomainError, NumericalError
from .model import ModelSpec

__all__ = [
    "PriorSpec",
    "ParameterVector",
    "loglik_subject",
    "loglik_total",
    "pointwise_loglik_vector",
    "log_prior",
    "log_posterior_unconstrained",
    "grad_log_posterior",
    "make_posterior",
    "constrain",
    "unconstrain",
    "log_jacobian",
    "constrained_array",
    "psi_from_constrained",
]

LOG_FLOOR = -745.0


@dataclass(frozen=True)
class PriorSpec:
    """Gamma hyperparameters for sigma and (tbp only) theta; regression
    and location parameters carry flat priors."""

    a_sigma: float = 0.3
    b_sigma: float = 0.05
    a_theta: float = 1.0
    b_theta: float = 1.0

    def __post_init__(self):
        for name in ("a_sigma", "b_sigma", "a_theta", "b_theta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"prior {name} must be > 0, got {v}")


@dataclass(frozen=True)
class ParameterVector:
    beta: np.ndarray
    alpha: np.ndarray
    mu: float
    sigma: float
    w: np.ndarray | None = None
    theta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "alpha",
                           np.asarray(self.alpha, dtype=float).reshape(-1))
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if self.w is not None:
            object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        if self.theta is not None and not (np.isfinite(self.theta) and self.theta > 0):
            raise DomainError(f"theta must be > 0, got {self.theta}")

    def baseline_params(self) -> bl.BaselineParams:
        return bl.BaselineParams(self.mu, self.sigma)

    def tbp_weights(self) -> bl.TBPWeights | None:
        if self.w is None:
            return None
        return bl.TBPWeights(tuple(self.w), self.theta if self.theta else 1.0)


def check_psi(model: ModelSpec, psi: ParameterVector) -> None:
    if psi.beta.size != model.n_beta:
        raise DomainError(f"beta has length {psi.beta.size}, "
                          f"expected {model.n_beta}")
    if psi.alpha.size != model.J:
        raise DomainError(f"alpha has length {psi.alpha.size}, expected {model.J}")
    if model.baseline.is_tbp:
        if psi.w is None or psi.theta is None:
            raise DomainError("tbp baseline requires w and theta")
        if psi.w.size != model.K:
            raise DomainError(f"w has length {psi.w.size}, expected {model.K}")
        if np.any(psi.w < 0) or abs(psi.w.sum() - 1.0) > 1e-10:
            raise DomainError("w must lie on the simplex")
    elif psi.w is not None or psi.theta is not None:
        raise DomainError("w/theta supplied for a non-tbp baseline")


# -- constrained <-> unconstrained -----------------------------------------

def _stick_forward(y: np.ndarray):
    """Stick-breaking y in R^(K-1) -> simplex w in R^K, plus the logistic
    values z_k and the log-Jacobian of the transform."""
    Km1 = y.size
    offsets = np.log(np.arange(Km1, 0, -1, dtype=float))  # log(K - k)
    z = special.expit(y - offsets)
    w = np.empty(Km1 + 1)
    stick = 1.0
    logjac = 0.0
    for k in range(Km1):
        w[k] = z[k] * stick
        logjac += math.log(z[k]) + math.log1p(-z[k]) + math.log(stick)
        stick *= 1.0 - z[k]
    w[Km1] = stick
    return w, z, logjac


def _stick_inverse(w: np.ndarray) -> np.ndarray:
    Km1 = w.size - 1
    offsets = np.log(np.arange(Km1, 0, -1, dtype=float))
    y = np.empty(Km1)
    stick = 1.0
    for k in range(Km1):
        y[k] = special.logit(w[k] / stick) + offsets[k]
        stick -= w[k]
    return y


def unconstrain(model: ModelSpec, psi: ParameterVector) -> np.ndarray:
    check_psi(model, psi)
    parts = [psi.beta, psi.alpha, [psi.mu], [math.log(psi.sigma)]]
    if model.baseline.is_tbp:
        parts += [_stick_inverse(psi.w), [math.log(psi.theta)]]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _split(model: ModelSpec, z: np.ndarray):
    nb, J = model.n_beta, model.J
    if z.shape != (model.n_unconstrained,):
        raise DomainError(f"z has shape {z.shape}, expected "
                          f"({model.n_unconstrained},)")
    beta = z[:nb]
    alpha = z[nb:nb + J]
    mu = z[nb + J]
    logsigma = z[nb + J + 1]
    rest = z[nb + J + 2:]
    return beta, alpha, mu, logsigma, rest


def constrain(model: ModelSpec, z: np.ndarray) -> ParameterVector:
    z = np.asarray(z, dtype=float)
    beta, alpha, mu, logsigma, rest = _split(model, z)
    w = theta = None
    if model.baseline.is_tbp:
        w, _, _ = _stick_forward(rest[:model.K - 1])
        theta = math.exp(rest[model.K - 1])
    return ParameterVector(beta.copy(), alpha.copy(), float(mu),
                           math.exp(logsigma), w, theta)


def log_jacobian(model: ModelSpec, z: np.ndarray) -> float:
    """log |d constrained / d z| of the constraining transform."""
    z = np.asarray(z, dtype=float)
    _, _, _, logsigma, rest = _split(model, z)
    out = float(logsigma)
    if model.baseline.is_tbp:
        _, _, lj = _stick_forward(rest[:model.K - 1])
        out += lj + float(rest[model.K - 1])
    return out


def constrained_array(model: ModelSpec, psi: ParameterVector) -> np.ndarray:
    """Constrained parameters flattened in `model.param_names` order."""
    check_psi(model, psi)
    parts = [psi.beta, psi.alpha, [psi.mu, psi.sigma]]
    if model.baseline.is_tbp:
        parts += [psi.w, [psi.theta]]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def psi_from_constrained(model: ModelSpec, arr) -> ParameterVector:
    arr = np.asarray(arr, dtype=float)
    nb, J = model.n_beta, model.J
    w = theta = None
    if model.baseline.is_tbp:
        w = arr[nb + J + 2:nb + J + 2 + model.K]
        w = w / w.sum()
        theta = float(arr[-1])
    return ParameterVector(arr[:nb], arr[nb:nb + J], float(arr[nb + J]),
                           float(arr[nb + J + 1]), w, theta)


# -- prepared data -----------------------------------------------------------

class _TimeGroup:
    """Per-(subject-subset, time-point) precomputation: everything about the
    time transform that does not depend on the parameters."""

    def __init__(self, model: ModelSpec, data: Dataset, idx: np.ndarray,
                 t: np.ndarray):
        self.idx = idx
        self.t = t
        self.m = len(idx)
        self.X = data.x[idx]
        kind = model.effect.kind
        if model.time_varying:
            onset = data.onset[idx]
            self.post = t > onset
            self.min_t_onset = np.minimum(t, onset)
            s = np.where(self.post, t - onset, 1.0)
            self.s = s
            if kind != "constant":
                self.B = tv_basis(model.effect, s)
                self.sBp = tv_basis_sderiv(model.effect, s)
        elif kind == "piecewise":
            knots = model.effect.knot_array()
            self.lead, self.terms = piecewise_terms(knots, t)
            self.seg = piecewise_segment(knots, t)
            self.x1 = data.x[idx, model.exposure_index]
        elif kind == "spline":
            logt = np.log(t)
            self.B = spline_basis(model.effect.knot_array(), logt)
            self.Bp = spline_basis_deriv(model.effect.knot_array(), logt)
            self.x1 = data.x[idx, model.exposure_index]


class Prepared:
    """Dataset digested for repeated likelihood/gradient evaluation."""

    def __init__(self, model: ModelSpec, data: Dataset):
        if len(data.covariate_names) != len(model.covariates):
            raise DomainError(
                f"data has {len(data.covariate_names)} covariates, model "
                f"expects {len(model.covariates)}")
        self.model = model
        self.data = data
        self.n = data.n
        ev = data.event
        fin_u = np.isfinite(data.y_upper)
        self.idx_exact = np.where(ev)[0]
        self.idx_interval = np.where(~ev & fin_u)[0]
        self.idx_right = np.where(~ev & ~fin_u)[0]
        self.idx_trunc = np.where(data.trunc > 0)[0]

        self.g_exact = _TimeGroup(model, data, self.idx_exact,
                                  data.y_lower[self.idx_exact])
        self.g_int_lo = _TimeGroup(model, data, self.idx_interval,
                                   data.y_lower[self.idx_interval])
        self.g_int_hi = _TimeGroup(model, data, self.idx_interval,
                                   data.y_upper[self.idx_interval])
        self.g_right = _TimeGroup(model, data, self.idx_right,
                                  data.y_lower[self.idx_right])
        self.g_trunc = _TimeGroup(model, data, self.idx_trunc,
                                  data.trunc[self.idx_trunc])

        # Monotonicity-rejection grid for flexible transforms.
        tmax = max(max_followup(data), 1e-8)
        grid = np.geomspace(tmax * 1.5e-6, 1.5 * tmax, 200)
        self.mono_grid = grid
        kind = model.effect.kind
        if model.time_varying and kind != "constant":
            self.mono_sBp = tv_basis_sderiv(model.effect, grid)
        elif kind == "spline":
            self.mono_Bp = spline_basis_deriv(model.effect.knot_array(),
                                              np.log(grid))
            x1 = data.x[:, model.exposure_index]
            self.mono_x1 = np.array([x1.min(initial=0.0), x1.max(initial=0.0)])


def prepare(model: ModelSpec, data) -> Prepared:
    return Prepared(model, as_dataset(data, tuple(model.covariates)))


def _monotone_ok(prep: Prepared, alpha: np.ndarray) -> bool:
    model = prep.model
    kind = model.effect.kind
    if not np.all(np.isfinite(alpha)):
        return False
    if kind == "constant":
        return True
    if model.time_varying:
        return bool(np.all(1.0 - prep.mono_sBp @ alpha > 0.0))
    if kind == "spline":
        gp = prep.mono_Bp @ alpha
        return bool(np.all(1.0 - np.outer(prep.mono_x1, gp) > 0.0))
    return True  # piecewise: positive slopes for any finite alpha


# -- time-transform evaluation with parameter partials -----------------------

class _TransformEval:
    __slots__ = ("u", "du_dbeta", "du_dalpha", "logv", "dlv_dbeta",
                 "dlv_dalpha", "ok")


def _eval_group(model: ModelSpec, beta: np.ndarray, alpha: np.ndarray,
                grp: _TimeGroup, need_logv: bool) -> _TransformEval:
    out = _TransformEval()
    out.ok = True
    kind = model.effect.kind
    m, J = grp.m, model.J
    if m == 0:
        out.u = np.zeros(0)
        out.du_dbeta = np.zeros((0, model.n_beta))
        out.du_dalpha = np.zeros((0, J))
        if need_logv:
            out.logv = np.zeros(0)
            out.dlv_dbeta = np.zeros((0, model.n_beta))
            out.dlv_dalpha = np.zeros((0, J))
        return out

    if model.time_varying:
        b1, bcov = beta[0], beta[1:]
        eta = grp.X @ bcov if bcov.size else np.zeros(m)
        scale = np.exp(-eta)
        if kind == "constant":
            a = np.zeros(m)
        else:
            a = grp.B @ alpha
        E = np.where(grp.post, np.exp(-b1 - a), 0.0)
        bump = grp.s * E
        core = grp.min_t_onset + np.where(grp.post, bump, 0.0)
        u = scale * core
        du_db1 = -scale * np.where(grp.post, bump, 0.0)
        du_dbeta = np.empty((m, model.n_beta))
        du_dbeta[:, 0] = du_db1
        du_dbeta[:, 1:] = -grp.X * u[:, None]
        if J:
            du_dalpha = np.where(grp.post[:, None], -(scale * bump)[:, None] * grp.B, 0.0)
        else:
            du_dalpha = np.zeros((m, 0))
        out.u, out.du_dbeta, out.du_dalpha = u, du_dbeta, du_dalpha
        if need_logv:
            if kind == "constant":
                one_minus = np.ones(m)
            else:
                sap = grp.sBp @ alpha
                one_minus = np.where(grp.post, 1.0 - sap, 1.0)
            if np.any(one_minus <= 0.0):
                out.ok = False
                one_minus = np.maximum(one_minus, 1e-300)
            logv = -eta + np.where(grp.post, -b1 - a + np.log(one_minus), 0.0)
            dlv_dbeta = np.empty((m, model.n_beta))
            dlv_dbeta[:, 0] = np.where(grp.post, -1.0, 0.0)
            dlv_dbeta[:, 1:] = -grp.X
            if J:
                dlv_dalpha = np.where(
                    grp.post[:, None],
                    -grp.B - grp.sBp / one_minus[:, None], 0.0)
            else:
                dlv_dalpha = np.zeros((m, 0))
            out.logv, out.dlv_dbeta, out.dlv_dalpha = logv, dlv_dbeta, dlv_dalpha
        return out

    eta = grp.X @ beta if beta.size else np.zeros(m)
    if kind == "constant":
        u = grp.t * np.exp(-eta)
        out.u = u
        out.du_dbeta = -grp.X * u[:, None]
        out.du_dalpha = np.zeros((m, 0))
        if need_logv:
            out.logv = -eta
            out.dlv_dbeta = -grp.X
            out.dlv_dalpha = np.zeros((m, 0))
        return out

    if kind == "piecewise":
        Ej = np.exp(-np.outer(grp.x1, alpha))          # (m, J)
        weighted = Ej * grp.terms
        core = grp.lead + weighted.sum(axis=1)
        scale = np.exp(-eta)
        u = scale * core
        out.u = u
        out.du_dbeta = -grp.X * u[:, None]
        out.du_dalpha = -(scale * grp.x1)[:, None] * weighted
        if need_logv:
            alpha_seg = np.concatenate([[0.0], alpha])[grp.seg]
            out.logv = -eta - grp.x1 * alpha_seg
            out.dlv_dbeta = -grp.X
            active = grp.seg[:, None] == np.arange(1, J + 1)
            out.dlv_dalpha = -grp.x1[:, None] * active
        return out

    # spline
    g = grp.B @ alpha
    u = grp.t * np.exp(-eta - grp.x1 * g)
    out.u = u
    out.du_dbeta = -grp.X * u[:, None]
    out.du_dalpha = -(grp.x1 * u)[:, None] * grp.B
    if need_logv:
        gp = grp.Bp @ alpha
        one_minus = 1.0 - grp.x1 * gp
        if np.any(one_minus <= 0.0):
            out.ok = False
            one_minus = np.maximum(one_minus, 1e-300)
        out.logv = -eta - grp.x1 * g + np.log(one_minus)
        out.dlv_dbeta = -grp.X
        out.dlv_dalpha = (-grp.x1[:, None] * grp.B
                          - (grp.x1 / one_minus)[:, None] * grp.Bp)
    return out


# -- baseline terms with parameter partials ----------------------------------

class _BaselineTerms:
    __slots__ = ("val", "d_du", "d_dmu", "d_dls", "d_dw")


def _weibull_sf_terms(mu, sigma, u):
    t = _BaselineTerms()
    logu = np.log(u)
    z = np.exp(sigma * (logu - mu))
    t.val = -z
    t.d_du = -sigma * z / u
    t.d_dmu = sigma * z
    t.d_dls = -sigma * (logu - mu) * z
    t.d_dw = None
    return t


def _weibull_pdf_terms(mu, sigma, u):
    t = _BaselineTerms()
    logu = np.log(u)
    z = np.exp(sigma * (logu - mu))
    t.val = np.log(sigma) - mu + (sigma - 1.0) * (logu - mu) - z
    t.d_du = ((sigma - 1.0) - sigma * z) / u
    t.d_dmu = sigma * (z - 1.0)
    t.d_dls = 1.0 + sigma * (logu - mu) * (1.0 - z)
    t.d_dw = None
    return t


def _normal_hazard(s):
    # phi(s) / (1 - Phi(s)), stable for large |s|
    return np.sqrt(2.0 / np.pi) / special.erfcx(s / np.sqrt(2.0))


def _lognormal_sf_terms(mu, sigma, u):
    t = _BaselineTerms()
    s = (np.log(u) - mu) / sigma
    lam = _normal_hazard(s)
    t.val = special.log_ndtr(-s)
    t.d_du = -lam / (sigma * u)
    t.d_dmu = lam / sigma
    t.d_dls = lam * s
    t.d_dw = None
    return t


def _lognormal_pdf_terms(mu, sigma, u):
    t = _BaselineTerms()
    logu = np.log(u)
    s = (logu - mu) / sigma
    t.val = -0.5 * s * s - 0.5 * np.log(2.0 * np.pi) - np.log(sigma) - logu
    t.d_du = -(s / sigma + 1.0) / u
    t.d_dmu = s / sigma
    t.d_dls = s * s - 1.0
    t.d_dw = None
    return t


def _centering_terms(model, mu, sigma, u, pdf: bool):
    fam = model.baseline.centering
    if fam == "weibull":
        return (_weibull_pdf_terms if pdf else _weibull_sf_terms)(mu, sigma, u)
    return (_lognormal_pdf_terms if pdf else _lognormal_sf_terms)(mu, sigma, u)


def _tbp_common(model, psi, u):
    K = model.K
    sc = _centering_terms(model, psi.mu, psi.sigma, u, pdf=False)
    logp = sc.val                                   # log centering survivor
    log1mp = bl._log1mexp(np.minimum(logp, -1e-300))
    a, b = bl.tbp_shape_pairs(K)
    p = np.exp(logp)
    with np.errstate(divide="ignore"):
        logw = np.log(np.maximum(psi.w, 1e-300))
    logI = bl._log_betainc_integer(a, b, logp, log1mp)       # (m, K)
    logg = (-special.betaln(a, b)
            + bl._zero_safe_mul(a - 1.0, logp[..., None])
            + bl._zero_safe_mul(b - 1.0, log1mp[..., None]))  # (m, K)
    logS = special.logsumexp(logw + logI, axis=-1)
    logG = special.logsumexp(logw + logg, axis=-1)
    return sc, p, logI, logg, logS, logG, a, b


def _tbp_sf_terms(model, psi, u):
    t = _BaselineTerms()
    sc, p, logI, logg, logS, logG, a, b = _tbp_common(model, psi, u)
    t.val = logS
    ratio = np.exp(logG - logS)          # Gmix / Smix
    t.d_du = ratio * p * sc.d_du         # dp/du = p * dlogSc/du
    t.d_dmu = ratio * p * sc.d_dmu
    t.d_dls = ratio * p * sc.d_dls
    t.d_dw = np.exp(logI - logS[..., None])
    return t


def _tbp_pdf_terms(model, psi, u):
    t = _BaselineTerms()
    fc = _centering_terms(model, psi.mu, psi.sigma, u, pdf=True)
    sc, p, logI, logg, logS, logG, a, b = _tbp_common(model, psi, u)
    with np.errstate(divide="ignore"):
        logw = np.log(np.maximum(psi.w, 1e-300))
    rho = np.exp(logw + logg - logG[..., None])      # weights summing to 1
    p_c = np.clip(p, 1e-300, 1.0 - 1e-16)[..., None]
    c = (a - 1.0) / p_c - (b - 1.0) / (1.0 - p_c)
    gratio = (rho * c).sum(axis=-1)                  # Gmix' / Gmix
    t.val = fc.val + logG
    t.d_du = fc.d_du + gratio * p * sc.d_du
    t.d_dmu = fc.d_dmu + gratio * p * sc.d_dmu
    t.d_dls = fc.d_dls + gratio * p * sc.d_dls
    t.d_dw = np.exp(logg - logG[..., None])
    return t


def _log_sf_terms(model, psi, u):
    fam = model.baseline.family
    if fam == "weibull":
        return _weibull_sf_terms(psi.mu, psi.sigma, u)
    if fam == "lognormal":
        return _lognormal_sf_terms(psi.mu, psi.sigma, u)
    return _tbp_sf_terms(model, psi, u)


def _log_pdf_terms(model, psi, u):
    fam = model.baseline.family
    if fam == "weibull":
        return _weibull_pdf_terms(psi.mu, psi.sigma, u)
    if fam == "lognormal":
        return _lognormal_pdf_terms(psi.mu, psi.sigma, u)
    return _tbp_pdf_terms(model, psi, u)


# -- likelihood ---------------------------------------------------------------

class _Grad:
    """Accumulator for the gradient in constrained-block coordinates
    (beta, alpha, mu, log sigma, w)."""

    def __init__(self, model: ModelSpec):
        self.beta = np.zeros(model.n_beta)
        self.alpha = np.zeros(model.J)
        self.mu = 0.0
        self.logsigma = 0.0
        self.w = np.zeros(model.K) if model.baseline.is_tbp else None

    def add(self, sign, coeff, terms: _BaselineTerms, ev: _TransformEval):
        """Accumulate sign * coeff_m * d/dtheta of a baseline log-term
        evaluated at u = V(t_m)."""
        c = sign * coeff
        cu = c * terms.d_du
        self.beta += cu @ ev.du_dbeta
        if self.alpha.size:
            self.alpha += cu @ ev.du_dalpha
        self.mu += float(np.sum(c * terms.d_dmu))
        self.logsigma += float(np.sum(c * terms.d_dls))
        if self.w is not None:
            self.w += (np.asarray(c)[:, None] * terms.d_dw).sum(axis=0)

    def add_logv(self, ev: _TransformEval):
        self.beta += ev.dlv_dbeta.sum(axis=0)
        if self.alpha.size:
            self.alpha += ev.dlv_dalpha.sum(axis=0)


def _pointwise(model: ModelSpec, psi: ParameterVector, prep: Prepared,
               grad: _Grad | None):
    """Per-subject log-likelihood vector; also accumulates the gradient of
    the total into `grad` when given. Returns (ll_vector, ok_flag).

    Extreme parameter proposals can overflow intermediates; the resulting
    non-finite contributions are caught by the callers (rejection), so the
    arithmetic warnings are suppressed here."""
    with np.errstate(all="ignore"):
        return _pointwise_impl(model, psi, prep, grad)


def _pointwise_impl(model, psi, prep, grad):
    beta, alpha = psi.beta, psi.alpha
    need_grad = grad is not None
    ll = np.zeros(prep.n)
    ok = True

    ev_e = _eval_group(model, beta, alpha, prep.g_exact, need_logv=True)
    ev_l = _eval_group(model, beta, alpha, prep.g_int_lo, need_logv=False)
    ev_h = _eval_group(model, beta, alpha, prep.g_int_hi, need_logv=False)
    ev_r = _eval_group(model, beta, alpha, prep.g_right, need_logv=False)
    ev_t = _eval_group(model, beta, alpha, prep.g_trunc, need_logv=False)
    ok &= ev_e.ok

    if prep.idx_exact.size:
        tf = _log_pdf_terms(model, psi, ev_e.u)
        ll[prep.idx_exact] = tf.val + ev_e.logv
        if need_grad:
            grad.add(1.0, np.ones(len(ev_e.u)), tf, ev_e)
            grad.add_logv(ev_e)

    if prep.idx_right.size:
        ts = _log_sf_terms(model, psi, ev_r.u)
        ll[prep.idx_right] = ts.val
        if need_grad:
            grad.add(1.0, np.ones(len(ev_r.u)), ts, ev_r)

    if prep.idx_interval.size:
        ts1 = _log_sf_terms(model, psi, ev_l.u)
        ts2 = _log_sf_terms(model, psi, ev_h.u)
        delta = ts2.val - ts1.val
        with np.errstate(invalid="ignore"):
            bad = delta >= 0
        delta = np.where(bad, -1e-300, delta)
        ll[prep.idx_interval] = ts1.val + bl._log1mexp(delta)
        if np.any(bad):
            ll[prep.idx_interval[bad]] = -np.inf
        if need_grad:
            with np.errstate(over="ignore"):
                q1 = 1.0 / (-np.expm1(delta))
                q2 = np.exp(delta) * q1
            grad.add(1.0, q1, ts1, ev_l)
            grad.add(-1.0, q2, ts2, ev_h)

    if prep.idx_trunc.size:
        ts = _log_sf_terms(model, psi, ev_t.u)
        ll[prep.idx_trunc] -= ts.val
        if need_grad:
            grad.add(-1.0, np.ones(len(ev_t.u)), ts, ev_t)

    return ll, ok


def pointwise_loglik_vector(model: ModelSpec, psi: ParameterVector,
                            data) -> np.ndarray:
    """Per-subject log-likelihood contributions, with -inf for zero-likelihood
    subjects; NaN raises a numerical error naming the subject."""
    check_psi(model, psi)
    prep = data if isinstance(data, Prepared) else prepare(model, data)
    ll, _ = _pointwise(model, psi, prep, None)
    ll = np.where(ll < LOG_FLOOR, -np.inf, ll)
    if np.any(np.isnan(ll)):
        bad = int(np.where(np.isnan(ll))[0][0])
        raise NumericalError(
            f"non-finite log-likelihood for subject {bad}", subject=bad)
    return ll


def loglik_subject(model: ModelSpec, psi: ParameterVector, rec) -> float:
    """Log-likelihood contribution of a single record."""
    ds = Dataset.from_records([rec], tuple(model.covariates))
    if (not rec.event) and np.isfinite(rec.y_upper):
        # degenerate interval: survivor mass numerically zero across it
        s1 = _conditional_logsf(model, psi, ds, rec.y_lower)
        s2 = _conditional_logsf(model, psi, ds, rec.y_upper)
        if s2 >= s1:
            raise NumericalError(
                "degenerate interval: no survivor mass between y_l and y_u",
                y_l=rec.y_lower, y_u=rec.y_upper)
    return float(pointwise_loglik_vector(model, psi, ds)[0])


def _conditional_logsf(model, psi, ds, t):
    grp = _TimeGroup(model, ds, np.array([0]), np.array([float(t)]))
    ev = _eval_group(model, psi.beta, psi.alpha, grp, need_logv=False)
    return float(_log_sf_terms(model, psi, ev.u).val[0])


def loglik_total(model: ModelSpec, psi: ParameterVector, data) -> float:
    """Sum of subject contributions; -inf if any subject has zero likelihood."""
    ll = pointwise_loglik_vector(model, psi, data)
    return float(ll.sum()) if np.all(np.isfinite(ll)) else -math.inf


# -- priors -------------------------------------------------------------------

def _gamma_logpdf(x, a, b):
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(x) - b * x


def log_prior(model: ModelSpec, psi: ParameterVector,
              priors: PriorSpec) -> float:
    """Log prior density on the constrained scale (no transform Jacobian)."""
    check_psi(model, psi)
    out = _gamma_logpdf(psi.sigma, priors.a_sigma, priors.b_sigma)
    if model.baseline.is_tbp:
        K, th = model.K, psi.theta
        if np.any(psi.w <= 0):
            return -math.inf
        out += (math.lgamma(K * th) - K * math.lgamma(th)
                + (th - 1.0) * float(np.sum(np.log(psi.w))))
        out += _gamma_logpdf(th, priors.a_theta, priors.b_theta)
    return out


# -- posterior ---------------------------------------------------------------

def _posterior_impl(model, z, prep, priors, want_grad: bool):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        return -math.inf, None
    beta, alpha, mu, logsigma, rest = _split(model, z)
    sigma = math.exp(logsigma)
    if sigma == 0.0 or math.isinf(sigma):
        return -math.inf, None
    w = theta = None
    zk = None
    logjac = logsigma
    if model.baseline.is_tbp:
        w, zk, lj = _stick_forward(rest[:model.K - 1])
        logtheta = rest[model.K - 1]
        theta = math.exp(logtheta)
        if np.any(w < 1e-300) or theta == 0.0 or math.isinf(theta):
            return -math.inf, None
        logjac += lj + logtheta
    psi = ParameterVector(beta.copy(), alpha.copy(), float(mu), sigma, w, theta)

    if not _monotone_ok(prep, psi.alpha):
        return -math.inf, None

    grad = _Grad(model) if want_grad else None
    ll, ok = _pointwise(model, psi, prep, grad)
    ll = np.where(ll < LOG_FLOOR, -np.inf, ll)
    if not ok or not np.all(np.isfinite(ll)):
        return -math.inf, None

    total = float(ll.sum())
    total += _gamma_logpdf(sigma, priors.a_sigma, priors.b_sigma)
    if model.baseline.is_tbp:
        K = model.K
        total += (math.lgamma(K * theta) - K * math.lgamma(theta)
                  + (theta - 1.0) * float(np.sum(np.log(w))))
        total += _gamma_logpdf(theta, priors.a_theta, priors.b_theta)
    total += logjac

    if not want_grad:
        return total, None

    gz = np.zeros_like(z)
    nb, J = model.n_beta, model.J
    gz[:nb] = grad.beta
    gz[nb:nb + J] = grad.alpha
    gz[nb + J] = grad.mu
    # d/dlog sigma: chain through likelihood, Gamma prior, and Jacobian
    gz[nb + J + 1] = (grad.logsigma
                      + (priors.a_sigma - 1.0) - priors.b_sigma * sigma
                      + 1.0)
    if model.baseline.is_tbp:
        K = model.K
        g_w = grad.w + (theta - 1.0) / w
        # map d/dw onto the stick-breaking coordinates:
        #   dL/dy_k = g_w[k] w_k (1 - z_k) - z_k * sum_{j>k} g_w[j] w_j
        c = g_w * w
        suffix = np.cumsum(c[::-1])[::-1]           # suffix[k] = sum_{j>=k} c_j
        gy = c[:K - 1] * (1.0 - zk) - zk * suffix[1:]
        # Jacobian gradient: d/dy_k of sum_j (log z_j + log(1-z_j) + log stick_j)
        ks = np.arange(1, K)
        gy += 1.0 - zk * (K + 1.0 - ks)
        gz[nb + J + 2:nb + J + 1 + K] = gy
        # theta coordinate
        dtheta = (K * special.digamma(K * theta) - K * special.digamma(theta)
                  + float(np.sum(np.log(w))))
        gz[nb + J + 1 + K] = (theta * dtheta
                              + (priors.a_theta - 1.0) - priors.b_theta * theta
                              + 1.0)
    if not np.all(np.isfinite(gz)):
        return total, None
    return total, gz


def log_posterior_unconstrained(model: ModelSpec, z, data,
                                priors: PriorSpec) -> float:
    """loglik + log prior + log transform Jacobian at unconstrained z;
    -inf encodes rejection (non-monotone transform or zero likelihood)."""
    prep = data if isinstance(data, Prepared) else prepare(model, data)
    val, _ = _posterior_impl(model, z, prep, priors, want_grad=False)
    return val


def grad_log_posterior(model: ModelSpec, z, data, priors: PriorSpec) -> np.ndarray:
    """Gradient of `log_posterior_unconstrained` with respect to z."""
    prep = data if isinstance(data, Prepared) else prepare(model, data)
    val, g = _posterior_impl(model, z, prep, priors, want_grad=True)
    if not math.isfinite(val):
        raise NumericalError("log-posterior is not finite at z", value=val)
    if g is None:
        raise NumericalError("non-finite gradient", value=val)
    return g


def make_posterior(model: ModelSpec, data, priors: PriorSpec):
    """Bind (model, data, priors) into a fast logp-and-gradient callable for
    the sampler: f(z) -> (logp, grad); grad is zeros when logp = -inf."""
    prep = prepare(model, data)
    dim = model.n_unconstrained

    def logp_and_grad(z):
        val, g = _posterior_impl(model, z, prep, priors, want_grad=True)
        if g is None:
            return -math.inf, np.zeros(dim)
        return val, g

    return logp_and_grad, prep
