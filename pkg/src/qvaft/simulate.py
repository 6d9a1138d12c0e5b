"""Exact synthetic-data generation by inverse-transform sampling.

An event time under covariates x is T = V^{-1}(S0^{-1}(U) | x) with
U ~ Uniform(0,1), so survivor(V(T)) is uniform by construction and every
supported model can be sampled without approximation. Left truncation is
honoured by rejection (redraw T until T > entry), right censoring by an
administrative cutoff and/or an independent exponential clock running from
entry, and interval censoring by recording the true bracketing pair of a
visit schedule with fixed gap starting at entry. Events never observed
before the censoring time are right-censored at the last clean visit.

Each subject draws from its own counter-based stream keyed by
(seed, subject), so datasets are reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SubjectRecord
from .errors import ConfigError, DomainError
from .inference import quantile_time
from .likelihood import ParameterVector, check_psi
from .model import ModelSpec

__all__ = [
    "CovariateSpec",
    "CensoringSpec",
    "TruncationSpec",
    "OnsetSpec",
    "SimConfig",
    "draw_event_time",
    "simulate_dataset",
]

MAX_REJECTION_ATTEMPTS = 10_000  # acceptance below 1e-4 is a config error
TINY_TIME = 1e-12  # floor for interval/censoring endpoints at time zero


@dataclass(frozen=True)
class CovariateSpec:
    """Marginal distribution of one covariate column:
    bernoulli(p) | normal(mean, sd) | uniform(lo, hi) | constant(v)."""

    dist: str
    params: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        want = {"bernoulli": 1, "normal": 2, "uniform": 2, "constant": 1}
        if self.dist not in want:
            raise DomainError(f"unknown covariate distribution {self.dist!r}")
        if len(self.params) != want[self.dist]:
            raise DomainError(f"{self.dist} takes {want[self.dist]} parameters")

    def draw(self, rng: np.random.Generator) -> float:
        if self.dist == "bernoulli":
            return float(rng.random() < self.params[0])
        if self.dist == "normal":
            return float(rng.normal(self.params[0], self.params[1]))
        if self.dist == "uniform":
            return float(rng.uniform(self.params[0], self.params[1]))
        return self.params[0]


@dataclass(frozen=True)
class CensoringSpec:
    admin_time: float | None = None   # absolute cutoff
    exp_rate: float | None = None     # exponential clock from entry
    visit_gap: float | None = None    # interval-censoring visit spacing

    def __post_init__(self):
        if self.admin_time is not None and not self.admin_time > 0:
            raise ConfigError(
                f"censoring.admin_time must be > 0, got {self.admin_time} "
                "(no events would be observable)")
        if self.exp_rate is not None and not self.exp_rate > 0:
            raise ConfigError("censoring.exp_rate must be > 0")
        if self.visit_gap is not None and not self.visit_gap > 0:
            raise ConfigError("censoring.visit_gap must be > 0")


@dataclass(frozen=True)
class TruncationSpec:
    """Entry-time distribution: none | fixed(t) | uniform(lo, hi) |
    exponential(rate)."""

    dist: str = "none"
    params: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        want = {"none": 0, "fixed": 1, "uniform": 2, "exponential": 1}
        if self.dist not in want:
            raise ConfigError(f"unknown truncation distribution {self.dist!r}")
        if len(self.params) != want[self.dist]:
            raise ConfigError(f"{self.dist} takes {want[self.dist]} parameters")

    def draw(self, rng: np.random.Generator) -> float:
        if self.dist == "none":
            return 0.0
        if self.dist == "fixed":
            return self.params[0]
        if self.dist == "uniform":
            return float(rng.uniform(self.params[0], self.params[1]))
        return float(rng.exponential(1.0 / self.params[0]))


@dataclass(frozen=True)
class OnsetSpec:
    """Switch-time distribution for time-varying models: fixed(t) |
    uniform(lo, hi) | exponential(rate), with probability `never_prob` of
    never switching."""

    dist: str = "exponential"
    params: tuple = (1.0,)
    never_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        if self.dist not in ("fixed", "uniform", "exponential"):
            raise ConfigError(f"unknown onset distribution {self.dist!r}")
        if not 0.0 <= self.never_prob <= 1.0:
            raise ConfigError("onset.never_prob must lie in [0, 1]")

    def draw(self, rng: np.random.Generator) -> float:
        if rng.random() < self.never_prob:
            return math.inf
        if self.dist == "fixed":
            return self.params[0]
        if self.dist == "uniform":
            return float(rng.uniform(self.params[0], self.params[1]))
        return float(rng.exponential(1.0 / self.params[0]))


@dataclass(frozen=True)
class SimConfig:
    n: int
    model: ModelSpec
    psi: ParameterVector
    covariates: tuple            # one CovariateSpec per model covariate
    censoring: CensoringSpec = field(default_factory=CensoringSpec)
    truncation: TruncationSpec = field(default_factory=TruncationSpec)
    onset: OnsetSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("simulate.n must be >= 1")
        check_psi(self.model, self.psi)
        if len(self.covariates) != len(self.model.covariates):
            raise ConfigError(
                f"{len(self.covariates)} covariate generators for "
                f"{len(self.model.covariates)} model covariates")
        if self.model.time_varying and self.onset is None:
            raise ConfigError("time-varying models need an onset spec")


def _subject_rng(seed: int, subject: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(subject,))
    return np.random.Generator(np.random.Philox(ss))


def draw_event_time(model: ModelSpec, psi: ParameterVector, x,
                    rng: np.random.Generator, onset: float = math.inf) -> float:
    """One exact event time: T = V^{-1}(S0^{-1}(U) | x), U ~ Uniform(0,1)."""
    u = rng.random()
    while u <= 0.0:
        u = rng.random()
    return float(quantile_time(model, psi, np.asarray(x, dtype=float), u, onset))


def _one_record(cfg: SimConfig, i: int) -> SubjectRecord:
    rng = _subject_rng(cfg.seed, i)
    cens = cfg.censoring
    for _ in range(MAX_REJECTION_ATTEMPTS):
        x = tuple(spec.draw(rng) for spec in cfg.covariates)
        onset = cfg.onset.draw(rng) if cfg.onset is not None else math.inf
        entry = cfg.truncation.draw(rng)
        if cens.admin_time is not None and entry >= cens.admin_time:
            continue  # would be unobservable; redraw the subject
        t = draw_event_time(cfg.model, cfg.psi, x, rng, onset)
        if t > entry:
            break
    else:
        raise ConfigError(
            f"subject {i}: rejection acceptance rate below "
            f"{1.0 / MAX_REJECTION_ATTEMPTS:g}; entry times sit in the far "
            "tail of the event distribution")

    censor = math.inf
    if cens.admin_time is not None:
        censor = cens.admin_time
    if cens.exp_rate is not None:
        censor = min(censor, entry + rng.exponential(1.0 / cens.exp_rate))

    if cens.visit_gap is None:
        if t <= censor:
            return SubjectRecord(t, t, 1, entry, x, onset)
        return SubjectRecord(max(censor, TINY_TIME), math.inf, 0, entry, x, onset)

    gap = cens.visit_gap
    k = math.floor((t - entry) / gap)
    left = entry + k * gap
    right = entry + (k + 1) * gap
    if t <= censor and right <= censor:
        return SubjectRecord(max(left, TINY_TIME), right, 0,
                             min(entry, max(left, TINY_TIME)), x, onset)
    last_clean = entry + gap * math.floor((min(censor, t) - entry) / gap)
    return SubjectRecord(max(last_clean, TINY_TIME), math.inf, 0,
                         min(entry, max(last_clean, TINY_TIME)), x, onset)


def simulate_dataset(cfg: SimConfig) -> Dataset:
    """Generate n records satisfying the `SubjectRecord` invariants."""
    records = [_one_record(cfg, i) for i in range(cfg.n)]
    return Dataset.from_records(records, tuple(cfg.model.covariates))
