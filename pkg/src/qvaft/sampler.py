"""Gradient-based MCMC over the unconstrained posterior.

The transition is dynamic-trajectory Hamiltonian Monte Carlo: leapfrog
trajectories are doubled until the no-U-turn criterion fires (or a depth
cap is hit), and the next state is drawn multinomially across the whole
trajectory with weights exp(-H). A trajectory segment whose Hamiltonian
error exceeds 1000 is flagged divergent and stops the doubling; states
with log-posterior -inf get zero selection weight, so they are never
accepted.

Warmup interleaves dual-averaging step-size adaptation (toward
`target_accept`) with windowed estimation of a diagonal inverse mass
matrix: a 75-iteration step-size-only buffer, expanding variance windows
starting at 25 iterations, and a 50-iteration terminal buffer, scaled
proportionally when the warmup budget is small.

Every iteration draws its randomness from a counter-based Philox stream
keyed by (seed, chain, iteration), so runs are bit-reproducible and chains
are independent; chains can run in worker processes when `threads` > 1.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import as_dataset, atomic_write_text
from .errors import DiagnosticsError, DomainError, NumericalError
from .likelihood import PriorSpec, constrain, constrained_array, make_posterior
from .model import ModelSpec

__all__ = [
    "SamplerConfig",
    "PosteriorDraws",
    "GradientTarget",
    "run_chains",
    "sample",
    "rhat",
    "ess",
    "leapfrog_step",
    "draws_to_csv",
    "draws_from_csv",
    "draws_to_npz",
]

DIVERGENCE_THRESHOLD = 1000.0
DRAWS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 3
    warmup_iters: int = 2000
    sampling_iters: int = 10000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    thin: int = 1
    threads: int = 1
    init_overrides: tuple = ()  # ((param name, unconstrained value), ...)

    def __post_init__(self):
        if self.chains < 1 or self.warmup_iters < 0 or self.sampling_iters < 1:
            raise DomainError("chains/warmup/sampling sizes must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise DomainError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise DomainError("max_tree_depth must be >= 1")
        if self.thin < 1 or self.sampling_iters % self.thin:
            raise DomainError("thin must divide sampling_iters")
        if self.seed < 0:
            raise DomainError("seed must be a non-negative integer")
        object.__setattr__(self, "init_overrides",
                           tuple((str(k), float(v)) for k, v in self.init_overrides))


@dataclass
class GradientTarget:
    """A log-density with gradient; the minimal interface the sampler needs."""

    dim: int
    logp_and_grad: object
    initial_point: object = None        # fn(rng) -> z; default Uniform(-2, 2)
    param_names: tuple = ()             # names of the reported (constrained) view
    constrain_fn: object = None         # z -> constrained array; default identity


@dataclass
class PosteriorDraws:
    """Retained draws of all chains, merged in (chain, iteration) order."""

    z: np.ndarray               # (M, dim) unconstrained
    constrained: np.ndarray     # (M, P) reported view
    param_names: tuple
    chain_id: np.ndarray
    iteration: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    step_size: np.ndarray
    n_chains: int
    model: ModelSpec | None = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return len(self.z)

    @property
    def draws_per_chain(self) -> int:
        return self.M // self.n_chains

    def chain_matrix(self, param_index: int) -> np.ndarray:
        """Retained draws of one reported parameter, shape (chains, draws)."""
        col = self.constrained[:, param_index]
        return col.reshape(self.n_chains, self.draws_per_chain)

    def thin_by(self, factor: int) -> "PosteriorDraws":
        keep = np.zeros(self.M, dtype=bool)
        per = self.draws_per_chain
        for c in range(self.n_chains):
            keep[c * per:(c + 1) * per][::factor] = True
        return PosteriorDraws(
            self.z[keep], self.constrained[keep], self.param_names,
            self.chain_id[keep], self.iteration[keep], self.divergent[keep],
            self.energy[keep], self.step_size[keep], self.n_chains, self.model)


# -- hamiltonian pieces -------------------------------------------------------

def _iteration_rng(seed: int, chain: int, iteration: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chain, iteration))
    return np.random.Generator(np.random.Philox(ss))


def leapfrog_step(logp_and_grad, z, p, grad, eps, inv_mass):
    """One leapfrog update; returns (z', p', logp', grad')."""
    p_half = p + 0.5 * eps * grad
    z_new = z + eps * inv_mass * p_half
    logp_new, grad_new = logp_and_grad(z_new)
    p_new = p_half + 0.5 * eps * grad_new
    return z_new, p_new, logp_new, grad_new


def _kinetic(p, inv_mass):
    return 0.5 * float(np.dot(inv_mass * p, p))


class _Tree:
    __slots__ = ("z_left", "p_left", "grad_left", "z_right", "p_right",
                 "grad_right", "z_prop", "grad_prop", "logp_prop", "h_prop",
                 "log_w", "sum_alpha", "n_alpha", "divergent", "turning")


def _build_tree(rng, logp_and_grad, z, p, grad, direction, depth, eps,
                inv_mass, h0):
    if depth == 0:
        z1, p1, logp1, grad1 = leapfrog_step(logp_and_grad, z, p, grad,
                                             direction * eps, inv_mass)
        h1 = -logp1 + _kinetic(p1, inv_mass)
        delta = h1 - h0
        t = _Tree()
        t.z_left = t.z_right = t.z_prop = z1
        t.p_left = t.p_right = p1
        t.grad_left = t.grad_right = t.grad_prop = grad1
        t.logp_prop = logp1
        t.h_prop = h1
        t.divergent = (not math.isfinite(h1)) or delta > DIVERGENCE_THRESHOLD
        t.turning = False
        t.log_w = -np.inf if t.divergent else -delta
        t.sum_alpha = min(1.0, math.exp(min(0.0, -delta))) if math.isfinite(delta) else 0.0
        t.n_alpha = 1
        return t

    first = _build_tree(rng, logp_and_grad, z, p, grad, direction, depth - 1,
                        eps, inv_mass, h0)
    if first.divergent or first.turning:
        return first
    if direction == 1:
        second = _build_tree(rng, logp_and_grad, first.z_right, first.p_right,
                             first.grad_right, direction, depth - 1, eps,
                             inv_mass, h0)
        first.z_right, first.p_right = second.z_right, second.p_right
        first.grad_right = second.grad_right
    else:
        second = _build_tree(rng, logp_and_grad, first.z_left, first.p_left,
                             first.grad_left, direction, depth - 1, eps,
                             inv_mass, h0)
        first.z_left, first.p_left = second.z_left, second.p_left
        first.grad_left = second.grad_left

    total = np.logaddexp(first.log_w, second.log_w)
    if second.log_w > -np.inf and math.log(rng.random() + 1e-300) < second.log_w - total:
        first.z_prop = second.z_prop
        first.grad_prop = second.grad_prop
        first.logp_prop = second.logp_prop
        first.h_prop = second.h_prop
    first.log_w = total
    first.sum_alpha += second.sum_alpha
    first.n_alpha += second.n_alpha
    first.divergent = second.divergent
    first.turning = second.turning or _uturn(first, inv_mass)
    return first


def _uturn(tree: _Tree, inv_mass) -> bool:
    dz = tree.z_right - tree.z_left
    return (np.dot(dz, inv_mass * tree.p_left) < 0
            or np.dot(dz, inv_mass * tree.p_right) < 0)


def _nuts_transition(rng, logp_and_grad, z, logp, grad, eps, inv_mass,
                     max_depth):
    dim = len(z)
    p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
    h0 = -logp + _kinetic(p0, inv_mass)

    t = _Tree()
    t.z_left = t.z_right = t.z_prop = z
    t.p_left = t.p_right = p0
    t.grad_left = t.grad_right = t.grad_prop = grad
    t.logp_prop = logp
    t.h_prop = h0
    t.log_w = 0.0
    t.sum_alpha = 0.0
    t.n_alpha = 0
    divergent = False
    depth = 0
    while depth < max_depth:
        direction = 1 if rng.random() < 0.5 else -1
        if direction == 1:
            sub = _build_tree(rng, logp_and_grad, t.z_right, t.p_right,
                              t.grad_right, 1, depth, eps, inv_mass, h0)
        else:
            sub = _build_tree(rng, logp_and_grad, t.z_left, t.p_left,
                              t.grad_left, -1, depth, eps, inv_mass, h0)
        t.sum_alpha += sub.sum_alpha
        t.n_alpha += sub.n_alpha
        if sub.divergent:
            divergent = True
            break
        if direction == 1:
            t.z_right, t.p_right, t.grad_right = sub.z_right, sub.p_right, sub.grad_right
        else:
            t.z_left, t.p_left, t.grad_left = sub.z_left, sub.p_left, sub.grad_left
        if not sub.turning:
            total = np.logaddexp(t.log_w, sub.log_w)
            if math.log(rng.random() + 1e-300) < sub.log_w - total:
                t.z_prop = sub.z_prop
                t.grad_prop = sub.grad_prop
                t.logp_prop = sub.logp_prop
                t.h_prop = sub.h_prop
            t.log_w = total
        if sub.turning or _uturn(t, inv_mass):
            break
        depth += 1
    accept_stat = t.sum_alpha / max(t.n_alpha, 1)
    return (t.z_prop, t.logp_prop, t.grad_prop, t.h_prop, divergent,
            accept_stat)


def _find_epsilon(rng, logp_and_grad, z, logp, grad, inv_mass) -> float:
    eps = 1.0
    p = rng.standard_normal(len(z)) / np.sqrt(inv_mass)
    h0 = -logp + _kinetic(p, inv_mass)
    _, p1, logp1, _ = leapfrog_step(logp_and_grad, z, p, grad, eps, inv_mass)
    h1 = -logp1 + _kinetic(p1, inv_mass) if math.isfinite(logp1) else math.inf
    ratio = h0 - h1
    direction = 1.0 if ratio > math.log(0.5) else -1.0
    for _ in range(100):
        eps *= 2.0 ** direction
        if eps < 1e-10 or eps > 1e7:
            break
        _, p1, logp1, _ = leapfrog_step(logp_and_grad, z, p, grad, eps, inv_mass)
        h1 = -logp1 + _kinetic(p1, inv_mass) if math.isfinite(logp1) else math.inf
        ratio = h0 - h1
        if direction * ratio <= direction * math.log(0.5):
            break
    return min(max(eps, 1e-10), 1e7)


# -- adaptation ---------------------------------------------------------------

class _DualAveraging:
    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, eps0: float, delta: float):
        self.restart(eps0)
        self.delta = delta

    def restart(self, eps0: float):
        self.mu = math.log(10.0 * eps0)
        self.log_eps = math.log(eps0)
        self.log_eps_bar = math.log(eps0)
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept_stat: float) -> float:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.delta - accept_stat)
        self.log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        w = m ** (-self.kappa)
        self.log_eps_bar = (1 - w) * self.log_eps_bar + w * self.log_eps
        return math.exp(self.log_eps)

    @property
    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


def _mass_update_points(warmup: int) -> list:
    """Warmup iterations (1-based) after which the mass matrix is refreshed."""
    if warmup < 20:
        return []
    init_buffer, term_buffer, base = 75, 50, 25
    if warmup < init_buffer + term_buffer + base:
        init_buffer = max(1, int(0.15 * warmup))
        term_buffer = max(1, int(0.10 * warmup))
        return [warmup - term_buffer]
    points = []
    pos = init_buffer
    size = base
    while True:
        end = pos + size
        if end + 2 * size > warmup - term_buffer:
            end = warmup - term_buffer
            points.append(end)
            break
        points.append(end)
        pos = end
        size *= 2
    return points


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def variance(self):
        if self.n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.n - 1)
        # shrink toward unit scale, as a guard for short windows
        return (self.n / (self.n + 5.0)) * var + 1e-3 * (5.0 / (self.n + 5.0))


# -- chain driver -------------------------------------------------------------

def _default_init(rng: np.random.Generator, dim: int) -> np.ndarray:
    return rng.uniform(-2.0, 2.0, size=dim)


def _run_chain(target: GradientTarget, cfg: SamplerConfig, chain: int):
    dim = target.dim
    lg = target.logp_and_grad
    rng0 = _iteration_rng(cfg.seed, chain, 0)
    init = target.initial_point or (lambda r: _default_init(r, dim))
    z = logp = grad = None
    for _ in range(100):
        z = np.asarray(init(rng0), dtype=float)
        logp, grad = lg(z)
        if math.isfinite(logp):
            break
    else:
        raise NumericalError(
            f"chain {chain}: no finite log-posterior found in 100 "
            "initialization attempts")

    inv_mass = np.ones(dim)
    eps = _find_epsilon(rng0, lg, z, logp, grad, inv_mass)
    da = _DualAveraging(eps, cfg.target_accept)
    mass_points = set(_mass_update_points(cfg.warmup_iters))
    welford = _Welford(dim)

    n_keep = cfg.sampling_iters // cfg.thin
    zs = np.empty((n_keep, dim))
    divs = np.zeros(n_keep, dtype=bool)
    energies = np.empty(n_keep)
    iters = np.empty(n_keep, dtype=int)
    kept = 0
    warmup_divergences = 0

    total = cfg.warmup_iters + cfg.sampling_iters
    for it in range(1, total + 1):
        rng = _iteration_rng(cfg.seed, chain, it)
        warming = it <= cfg.warmup_iters
        z, logp, grad, energy, divergent, astat = _nuts_transition(
            rng, lg, z, logp, grad, eps, inv_mass, cfg.max_tree_depth)
        if warming:
            warmup_divergences += divergent
            eps = da.update(astat)
            welford.push(z)
            if it in mass_points:
                inv_mass = welford.variance()
                welford = _Welford(dim)
                eps = _find_epsilon(rng, lg, z, logp, grad, inv_mass)
                da.restart(eps)
            if it == cfg.warmup_iters:
                eps = da.adapted
        else:
            s = it - cfg.warmup_iters
            if s % cfg.thin == 0:
                zs[kept] = z
                divs[kept] = divergent
                energies[kept] = energy
                iters[kept] = s
                kept += 1

    if cfg.warmup_iters and warmup_divergences == cfg.warmup_iters:
        raise NumericalError(
            f"chain {chain}: every warmup iteration diverged; "
            "the posterior may be improper or the initialization invalid")
    return zs, divs, energies, iters, eps


def sample(target: GradientTarget, cfg: SamplerConfig) -> PosteriorDraws:
    """Run `cfg.chains` independent chains on an arbitrary gradient target,
    sequentially (parallel chains are handled by `run_chains`, whose inputs
    survive a trip to a worker process)."""
    results = [_run_chain(target, cfg, c) for c in range(cfg.chains)]

    zs = np.concatenate([r[0] for r in results])
    divs = np.concatenate([r[1] for r in results])
    energies = np.concatenate([r[2] for r in results])
    iters = np.concatenate([r[3] for r in results])
    per = cfg.sampling_iters // cfg.thin
    chain_id = np.repeat(np.arange(cfg.chains), per)
    step = np.repeat([r[4] for r in results], per)

    if target.constrain_fn is not None:
        constrained = np.array([target.constrain_fn(z) for z in zs])
    else:
        constrained = zs.copy()
    names = tuple(target.param_names) or tuple(
        f"z_{i}" for i in range(target.dim))
    return PosteriorDraws(zs, constrained, names, chain_id, iters, divs,
                          energies, step, cfg.chains)


def make_model_target(model: ModelSpec, data, priors: PriorSpec) -> GradientTarget:
    logp_and_grad, _ = make_posterior(model, data, priors)
    dim = model.n_unconstrained
    nb, J = model.n_beta, model.J

    fixed = np.full(dim, np.nan)
    fixed[nb + J + 1:] = 0.0  # log sigma, stick coords, log theta start at 0
    name_to_idx = {}
    for i, nm in enumerate(model.beta_names):
        name_to_idx["beta_" + nm] = i
    for j in range(J):
        name_to_idx[f"alpha_{j + 1}"] = nb + j
    name_to_idx["mu"] = nb + J
    name_to_idx["log_sigma"] = nb + J + 1
    if model.baseline.is_tbp:
        name_to_idx["log_theta"] = dim - 1

    overrides = dict()

    def initial_point(rng):
        z = rng.uniform(-2.0, 2.0, size=dim)
        known = np.isfinite(fixed)
        z[known] = fixed[known]
        for key, val in overrides.items():
            z[name_to_idx[key]] = val
        return z

    target = GradientTarget(dim, logp_and_grad, initial_point,
                            model.param_names,
                            lambda z: constrained_array(model, constrain(model, z)))
    target._name_to_idx = name_to_idx
    target._fixed = fixed
    target._overrides = overrides
    return target


def run_chains(model: ModelSpec, data, priors: PriorSpec,
               cfg: SamplerConfig) -> PosteriorDraws:
    """Fit the survival model: sample the unconstrained posterior and return
    draws with the constrained (reported) parameter view attached."""
    data = as_dataset(data)
    target = make_model_target(model, data, priors)
    for key, val in cfg.init_overrides:
        if key not in target._name_to_idx:
            raise DomainError(f"unknown init override {key!r}")
        target._overrides[key] = val
    if cfg.threads > 1:
        # worker processes rebuild the closure from picklable pieces
        results = _run_parallel_model(model, data, priors, cfg)
        draws = _merge_results(results, cfg, target)
    else:
        draws = sample(target, cfg)
    draws.model = model
    return draws


def _model_chain_worker(args):
    model, data, priors, cfg, chain = args
    target = make_model_target(model, data, priors)
    for key, val in cfg.init_overrides:
        target._overrides[key] = val
    return _run_chain(target, cfg, chain)


def _run_parallel_model(model, data, priors, cfg):
    jobs = [(model, data, priors, cfg, c) for c in range(cfg.chains)]
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(_model_chain_worker, jobs))


def _merge_results(results, cfg, target: GradientTarget) -> PosteriorDraws:
    zs = np.concatenate([r[0] for r in results])
    divs = np.concatenate([r[1] for r in results])
    energies = np.concatenate([r[2] for r in results])
    iters = np.concatenate([r[3] for r in results])
    per = cfg.sampling_iters // cfg.thin
    chain_id = np.repeat(np.arange(cfg.chains), per)
    step = np.repeat([r[4] for r in results], per)
    constrained = np.array([target.constrain_fn(z) for z in zs])
    return PosteriorDraws(zs, constrained, tuple(target.param_names), chain_id,
                          iters, divs, energies, step, cfg.chains)


# -- diagnostics --------------------------------------------------------------

def _as_chain_array(draws, param_index) -> np.ndarray:
    if isinstance(draws, PosteriorDraws):
        if param_index is None:
            raise DiagnosticsError("param_index required with PosteriorDraws")
        return draws.chain_matrix(param_index)
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _split_halves(arr: np.ndarray) -> np.ndarray:
    m, n = arr.shape
    half = n // 2
    return np.vstack([arr[:, :half], arr[:, n - half:]])


def rhat(draws, param_index: int | None = None) -> float:
    """Split-chain potential scale reduction factor (between/within variance
    ratio on the half-chains)."""
    arr = _as_chain_array(draws, param_index)
    if arr.shape[0] < 2:
        raise DiagnosticsError("rhat needs at least 2 chains")
    if arr.shape[1] < 4:
        raise DiagnosticsError("rhat needs at least 4 draws per chain")
    split = _split_halves(arr)
    n = split.shape[1]
    chain_means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean()
    b = n * np.var(chain_means, ddof=1)
    if w == 0.0:
        return math.nan
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def ess(draws, param_index: int | None = None) -> float:
    """Effective sample size via per-chain FFT autocovariances combined with
    the initial-monotone-sequence truncation rule."""
    arr = _as_chain_array(draws, param_index)
    split = _split_halves(arr) if arr.shape[1] >= 4 else arr
    m, n = split.shape
    acov = np.empty((m, n))
    for c in range(m):
        acov[c] = _autocov(split[c])
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(split.mean(axis=1), ddof=1)
    if var_plus == 0.0 or w == 0.0:
        return 0.0

    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, enforcing monotone decay
    tau = 0.0
    prev = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        tau += pair
        prev = pair
        t += 2
    tau = max(2.0 * tau - 1.0, 1.0 / math.log10(max(n * m, 10)))
    return float(m * n / tau)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = len(x)
    xc = x - x.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


# -- export -------------------------------------------------------------------

def draws_to_csv(draws: PosteriorDraws, path) -> None:
    header = ["chain", "iter", *draws.param_names, "divergent", "energy"]
    lines = [",".join(header)]
    for i in range(draws.M):
        row = [str(int(draws.chain_id[i])), str(int(draws.iteration[i]))]
        row += [repr(float(v)) for v in draws.constrained[i]]
        row += [str(int(draws.divergent[i])), repr(float(draws.energy[i]))]
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def draws_from_csv(path, model: ModelSpec) -> PosteriorDraws:
    from .likelihood import psi_from_constrained, unconstrain

    raw = np.genfromtxt(path, delimiter=",", names=True)
    names = model.param_names
    cols = [raw[nm.replace("[", "_").replace("]", "_")] for nm in names]
    constrained = np.column_stack([np.atleast_1d(c) for c in cols])
    chain_id = np.atleast_1d(raw["chain"]).astype(int)
    iteration = np.atleast_1d(raw["iter"]).astype(int)
    divergent = np.atleast_1d(raw["divergent"]).astype(bool)
    energy = np.atleast_1d(raw["energy"]).astype(float)
    z = np.array([unconstrain(model, psi_from_constrained(model, row))
                  for row in constrained])
    n_chains = len(np.unique(chain_id))
    return PosteriorDraws(z, constrained, names, chain_id, iteration,
                          divergent, energy, np.zeros(len(z)), n_chains, model)


def draws_to_npz(draws: PosteriorDraws, path) -> None:
    np.savez_compressed(
        path,
        format_version=DRAWS_FORMAT_VERSION,
        z=draws.z,
        constrained=draws.constrained,
        param_names=np.array(draws.param_names),
        chain_id=draws.chain_id,
        iteration=draws.iteration,
        divergent=draws.divergent,
        energy=draws.energy,
        step_size=draws.step_size,
        n_chains=draws.n_chains,
    )
