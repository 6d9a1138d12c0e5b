"""Command-line front end.

Subcommands: simulate, fit, standardize, af, surface, loo. A fit writes a
self-contained directory (draws.csv/draws.npz, summary.json, fit.json,
data.csv snapshot) that the post-processing commands consume. Exit codes:
0 success, 2 input/schema problems, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from .data import Dataset, read_csv, write_csv
from .errors import (
    ComparisonError,
    ConfigError,
    DataError,
    DiagnosticsError,
    DomainError,
    NumericalError,
    QvaftError,
    ValidityError,
)
from .inference import (
    ContrastSpec,
    CurveTable,
    acceleration_factor,
    af_surface,
    default_quantile_grid,
    standardized_af,
    standardized_survivor_curves,
    surface_quantile_grid,
)
from .model import ModelSpec
from .modelcheck import (
    exact_loo_subject,
    pointwise_loglik,
    psis_loo,
    write_loo_pointwise,
    write_loo_report,
)
from .sampler import (
    PosteriorDraws,
    SamplerConfig,
    draws_from_csv,
    draws_to_csv,
    draws_to_npz,
    ess,
    rhat,
    run_chains,
)

FIT_FORMAT_VERSION = 1


def dataset_hash(data: Dataset) -> str:
    h = hashlib.sha256()
    for arr in (data.y_lower, data.y_upper, data.event.astype(float),
                data.trunc, data.x, data.onset):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    h.update(",".join(data.covariate_names).encode())
    return h.hexdigest()


def _parse_grid(text: str, name: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"{name}: expected lo:hi:count, got {text!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"{name}: expected lo:hi:count, got {text!r}")
    if count < 1 or hi < lo:
        raise ConfigError(f"{name}: bad grid bounds {text!r}")
    return np.linspace(lo, hi, count)


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("QAFT_THREADS", "")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"QAFT_THREADS: not an integer: {env!r}")
    return 1


# -- fit ------------------------------------------------------------------------

def _summarize(model: ModelSpec, draws: PosteriorDraws) -> dict:
    params = {}
    multi = draws.n_chains >= 2
    for i, name in enumerate(draws.param_names):
        col = draws.constrained[:, i]
        params[name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)) if len(col) > 1 else 0.0,
            "median": float(np.percentile(col, 50.0)),
            "lo95": float(np.percentile(col, 2.5)),
            "hi95": float(np.percentile(col, 97.5)),
            "rhat": float(rhat(draws, i)) if multi else None,
            "ess": float(ess(draws, i)),
        }
    return params


def cmd_fit(args) -> int:
    data = read_csv(args.data)
    raw = cfgmod.load_config(args.config)
    model = cfgmod.resolve_model(raw, data)
    priors = cfgmod.resolve_priors(raw)
    cfg = cfgmod.resolve_sampler(raw, seed_override=args.seed,
                                 threads=_threads(args))
    draws = run_chains(model, data, priors, cfg)

    os.makedirs(args.out, exist_ok=True)
    draws_to_csv(draws, os.path.join(args.out, "draws.csv"))
    draws_to_npz(draws, os.path.join(args.out, "draws.npz"))
    write_csv(data, os.path.join(args.out, "data.csv"))
    summary = {
        "params": _summarize(model, draws),
        "sampler": {
            "chains": cfg.chains,
            "warmup": cfg.warmup_iters,
            "iters": cfg.sampling_iters,
            "thin": cfg.thin,
            "seed": cfg.seed,
            "target_accept": cfg.target_accept,
            "divergences": int(draws.divergent.sum()),
            "step_size": [float(s) for s in
                          np.unique(draws.step_size).tolist()],
        },
        "n_subjects": data.n,
    }
    cfgmod.write_json(os.path.join(args.out, "summary.json"), summary)
    cfgmod.write_json(os.path.join(args.out, "fit.json"), {
        "format_version": FIT_FORMAT_VERSION,
        "model": cfgmod.model_to_jsonable(model),
        "priors": {"a_sigma": priors.a_sigma, "b_sigma": priors.b_sigma,
                   "a_theta": priors.a_theta, "b_theta": priors.b_theta},
        "sampler": summary["sampler"],
        "data_hash": dataset_hash(data),
        "param_names": list(draws.param_names),
    })
    div = int(draws.divergent.sum())
    print(f"fit: {data.n} subjects, {draws.M} draws, {div} divergences "
          f"-> {args.out}")
    return 0


def _load_fit(fit_dir: str):
    meta_path = os.path.join(fit_dir, "fit.json")
    missing = [p for p in ("fit.json", "data.csv")
               if not os.path.exists(os.path.join(fit_dir, p))]
    if not (os.path.exists(os.path.join(fit_dir, "draws.npz"))
            or os.path.exists(os.path.join(fit_dir, "draws.csv"))):
        missing.append("draws.csv")
    if missing:
        raise DataError(f"{fit_dir}: missing fit artifacts: {missing}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    model = cfgmod.model_from_jsonable(meta["model"])
    data = read_csv(os.path.join(fit_dir, "data.csv"))
    npz_path = os.path.join(fit_dir, "draws.npz")
    if os.path.exists(npz_path):
        raw = np.load(npz_path, allow_pickle=False)
        draws = PosteriorDraws(
            raw["z"], raw["constrained"],
            tuple(str(s) for s in raw["param_names"]),
            raw["chain_id"], raw["iteration"], raw["divergent"],
            raw["energy"], raw["step_size"], int(raw["n_chains"]), model)
    else:
        draws = draws_from_csv(os.path.join(fit_dir, "draws.csv"), model)
    return meta, model, data, draws


# -- simulate ---------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simulate import simulate_dataset

    raw = cfgmod.load_config(args.config)
    model = cfgmod.resolve_model(raw, None)
    psi = cfgmod.resolve_truth(raw, model)
    sim = cfgmod.resolve_sim(raw, model, psi, seed_override=args.seed)
    data = simulate_dataset(sim)
    write_csv(data, args.out, include_onset=model.time_varying)
    truth = {
        "model": cfgmod.model_to_jsonable(model),
        "beta": {n: float(v) for n, v in zip(model.beta_names, psi.beta)},
        "alpha": [float(a) for a in psi.alpha],
        "mu": psi.mu,
        "sigma": psi.sigma,
        "seed": sim.seed,
    }
    if model.baseline.is_tbp:
        truth["w"] = [float(v) for v in psi.w]
        truth["theta"] = psi.theta
    cfgmod.write_json(args.out + ".truth.json", truth)
    print(f"simulate: wrote {data.n} records -> {args.out}")
    return 0


# -- post-processing ----------------------------------------------------------------

def _contrast(args, model: ModelSpec) -> ContrastSpec:
    if model.time_varying:
        if args.exposed is None:
            raise ConfigError("--exposed: time-varying contrasts need a "
                              "switch time")
        ref = math.inf if args.reference is None else args.reference
        return ContrastSpec(args.exposed, ref)
    return ContrastSpec(1.0 if args.exposed is None else args.exposed,
                        0.0 if args.reference is None else args.reference)


def _with_exposure(model: ModelSpec, args) -> ModelSpec:
    """Resolve which covariate the contrast flips; constant-effect fits
    carry no flexible covariate, so it may arrive via --covariate."""
    import dataclasses

    name = getattr(args, "covariate", None)
    if model.time_varying:
        if name:
            raise ConfigError("--covariate: the contrast of a time-varying "
                              "model is the switch itself")
        return model
    if name:
        if name not in model.covariates:
            raise ConfigError(f"--covariate: {name!r} not a model covariate")
        return dataclasses.replace(model, exposure=name)
    if model.exposure is None:
        raise ConfigError("the fitted model names no exposure covariate; "
                          "pass --covariate")
    return model


def cmd_standardize(args) -> int:
    _, model, data, draws = _load_fit(args.fit)
    model = _with_exposure(model, args)
    if args.thin > 1:
        draws = draws.thin_by(args.thin)
    t_grid = (_parse_grid(args.t_grid, "--t-grid")
              if args.t_grid else None)
    table = standardized_survivor_curves(model, draws, data, t_grid,
                                         _contrast(args, model))
    table.to_csv(args.out)
    print(f"standardize: {table.n_rows} rows -> {args.out}")
    return 0


def _analytic_af(args) -> CurveTable:
    raw = cfgmod.load_config(args.config)
    model = cfgmod.resolve_model(raw, None)
    psi = cfgmod.resolve_truth(raw, model)
    p = (_parse_grid(args.p_grid, "--p-grid") if args.p_grid
         else default_quantile_grid())
    d = len(model.covariates)
    if model.time_varying:
        con = _contrast(args, model)
        x = np.zeros(d)
        vals = np.array([
            acceleration_factor(model, psi, pv, x, x,
                                onset=con.exposed, onset_prime=con.reference)
            for pv in p])
    else:
        name = args.covariate or model.exposure
        if name is None:
            if d != 1:
                raise ConfigError("--covariate: required when the model has "
                                  "several covariates and no flexible one")
            name = model.covariates[0]
        if name not in model.covariates:
            raise ConfigError(f"--covariate: {name!r} not a model covariate")
        j = model.covariates.index(name)
        con = _contrast(args, model)
        x1 = np.zeros(d)
        x0 = np.zeros(d)
        x1[j] = con.exposed
        x0[j] = con.reference
        vals = np.array([acceleration_factor(model, psi, pv, x1, x0)
                         for pv in p])
    zeros = np.zeros(len(p), dtype=bool)
    return CurveTable(p, np.full(len(p), "af", dtype=object), vals,
                      vals.copy(), vals.copy(), vals.copy(), zeros)


def cmd_af(args) -> int:
    if args.analytic:
        if not args.config:
            raise ConfigError("--config: required with --analytic")
        table = _analytic_af(args)
    else:
        if not args.fit:
            raise ConfigError("--fit: required unless --analytic is given")
        _, model, data, draws = _load_fit(args.fit)
        model = _with_exposure(model, args)
        if args.thin > 1:
            draws = draws.thin_by(args.thin)
        p = (_parse_grid(args.p_grid, "--p-grid") if args.p_grid
             else default_quantile_grid())
        table = standardized_af(model, draws, data, p, _contrast(args, model))
    table.to_csv(args.out)
    print(f"af: {table.n_rows} rows -> {args.out}")
    return 0


def cmd_surface(args) -> int:
    _, model, data, draws = _load_fit(args.fit)
    onset_grid = (_parse_grid(args.onset_grid, "--onset-grid")
                  if args.onset_grid else None)
    p = (_parse_grid(args.p_grid, "--p-grid") if args.p_grid
         else surface_quantile_grid())
    table = af_surface(model, draws, data, onset_grid, p, thin=args.thin)
    table.to_csv(args.out)
    print(f"surface: {table.n_rows} rows -> {args.out}")
    return 0


def cmd_loo(args) -> int:
    meta, model, fit_data, draws = _load_fit(args.fit)
    data = read_csv(args.data)
    if dataset_hash(data) != meta["data_hash"]:
        raise DataError("the supplied data file does not match the one the "
                        "model was fitted to")
    ll = pointwise_loglik(model, draws, data)
    res = psis_loo(ll)
    if args.refit_khat:
        from .likelihood import PriorSpec
        pri = PriorSpec(**meta["priors"])
        scfg = meta["sampler"]
        cfg = SamplerConfig(chains=2, warmup_iters=min(500, scfg["warmup"]),
                            sampling_iters=min(1000, scfg["iters"]),
                            seed=scfg["seed"] + 1)
        for i in np.where(res.khat > 0.7)[0]:
            res.pointwise[i] = exact_loo_subject(model, data, pri, cfg, int(i))
            res.khat[i] = math.nan
        res.elpd = float(res.pointwise.sum())
        res.elpd_se = float(math.sqrt(res.n * np.var(res.pointwise, ddof=1)))
        res.minus2elpd = -2.0 * res.elpd
        res.warnings.append("refit applied to high-khat subjects")
    out_dir = args.out or args.fit
    os.makedirs(out_dir, exist_ok=True)
    write_loo_report(res, os.path.join(out_dir, "loo.txt"))
    write_loo_pointwise(res, os.path.join(out_dir, "loo_pointwise.csv"))
    print(f"loo: elpd {res.elpd:.3f} (se {res.elpd_se:.3f}), "
          f"-2elpd {res.minus2elpd:.3f} -> {out_dir}")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qvaft",
        description="Bayesian accelerated failure time models with "
                    "quantile-varying acceleration factors")
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to a data file")
    fit.add_argument("--data", required=True)
    fit.add_argument("--config", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--threads", type=int, default=None)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="generate synthetic data")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.set_defaults(func=cmd_simulate)

    std = sub.add_parser("standardize",
                         help="standardized survivor curves from a fit")
    std.add_argument("--fit", required=True)
    std.add_argument("--out", required=True)
    std.add_argument("--covariate", default=None,
                     help="contrast covariate when the fit names none")
    std.add_argument("--exposed", type=float, default=None)
    std.add_argument("--reference", type=float, default=None)
    std.add_argument("--t-grid", dest="t_grid", default=None)
    std.add_argument("--thin", type=int, default=1)
    std.set_defaults(func=cmd_standardize)

    af = sub.add_parser("af", help="standardized acceleration factor curve")
    af.add_argument("--fit")
    af.add_argument("--analytic", action="store_true",
                    help="compute the exact curve from truth values in "
                         "--config instead of a fit")
    af.add_argument("--config")
    af.add_argument("--covariate", default=None,
                    help="contrast covariate when the model names none")
    af.add_argument("--out", required=True)
    af.add_argument("--exposed", type=float, default=None)
    af.add_argument("--reference", type=float, default=None)
    af.add_argument("--p-grid", dest="p_grid", default=None)
    af.add_argument("--thin", type=int, default=1)
    af.set_defaults(func=cmd_af)

    surf = sub.add_parser("surface",
                          help="acceleration factor surface over switch times")
    surf.add_argument("--fit", required=True)
    surf.add_argument("--out", required=True)
    surf.add_argument("--onset-grid", dest="onset_grid", default=None)
    surf.add_argument("--p-grid", dest="p_grid", default=None)
    surf.add_argument("--thin", type=int, default=10)
    surf.set_defaults(func=cmd_surface)

    loo = sub.add_parser("loo", help="PSIS leave-one-out model criterion")
    loo.add_argument("--fit", required=True)
    loo.add_argument("--data", required=True)
    loo.add_argument("--out", default=None)
    loo.add_argument("--refit-khat", dest="refit_khat", action="store_true",
                     help="refit exactly for subjects with khat > 0.7")
    loo.set_defaults(func=cmd_loo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError, DomainError, ComparisonError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (NumericalError, ValidityError, DiagnosticsError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except QvaftError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
