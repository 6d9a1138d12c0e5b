"""Command-line pipeline: schema validation and exit codes, artifact
round-trips, knot-placement rules, seed determinism, and the
simulate -> fit -> summarize loop under the CI budget."""

import json
import math
import time

import numpy as np
import pytest
import yaml

from qvaft.cli import main
from qvaft.data import read_csv
from qvaft.inference import CurveTable
from qvaft.modelcheck import read_loo_report

BASE_CONFIG = {
    "model": {
        "baseline": {"family": "weibull"},
        "effect": {"kind": "constant", "flexible_covariate": "x1"},
        "covariates": ["x1", "x2"],
    },
    "priors": {"a_sigma": 0.3, "b_sigma": 0.05},
    "sampler": {"chains": 2, "warmup": 300, "iters": 300, "seed": 5},
    "truth": {"beta": {"x1": 0.5, "x2": -0.3}, "mu": 1.0, "sigma": 1.2},
    "simulate": {
        "n": 120,
        "covariates": {"x1": {"dist": "bernoulli", "p": 0.5},
                       "x2": {"dist": "normal", "mean": 0.0, "sd": 1.0}},
        "censoring": {"admin_time": 8.0},
        "truncation": {"dist": "uniform", "lo": 0.0, "hi": 2.0},
        "seed": 3,
    },
}


def write_config(tmp_path, overrides=None, name="cfg.yaml"):
    cfg = json.loads(json.dumps(BASE_CONFIG))
    for path, value in (overrides or {}).items():
        node = cfg
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        if value is None:
            node.pop(keys[-1], None)
        else:
            node[keys[-1]] = value
    out = tmp_path / name
    out.write_text(yaml.safe_dump(cfg))
    return str(out)


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    """One simulate + fit shared by the read-only post-processing tests."""
    tmp = tmp_path_factory.mktemp("fit")
    cfg = write_config(tmp)
    data = str(tmp / "data.csv")
    assert main(["simulate", "--config", cfg, "--out", data]) == 0
    fit_dir = str(tmp / "fit")
    assert main(["fit", "--data", data, "--config", cfg, "--out", fit_dir]) == 0
    return {"cfg": cfg, "data": data, "fit": fit_dir, "tmp": tmp}


class TestSimulate:
    def test_emits_reingestable_csv_and_truth(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "d.csv")
        assert main(["simulate", "--config", cfg, "--out", out]) == 0
        ds = read_csv(out)
        assert ds.n == 120
        truth = json.load(open(out + ".truth.json"))
        assert truth["beta"] == {"x1": 0.5, "x2": -0.3}

    def test_seed_override_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b, c = (str(tmp_path / f"{k}.csv") for k in "abc")
        assert main(["simulate", "--config", cfg, "--out", a, "--seed", "9"]) == 0
        assert main(["simulate", "--config", cfg, "--out", b, "--seed", "9"]) == 0
        assert main(["simulate", "--config", cfg, "--out", c, "--seed", "10"]) == 0
        assert open(a).read() == open(b).read()
        assert open(a).read() != open(c).read()

    def test_schema_error_exit_2(self, tmp_path):
        cfg = write_config(tmp_path, {"simulate.n": -5})
        assert main(["simulate", "--config", cfg,
                     "--out", str(tmp_path / "x.csv")]) == 2

    def test_unknown_key_named_in_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"simulate.nn": 10})
        assert main(["simulate", "--config", cfg,
                     "--out", str(tmp_path / "x.csv")]) == 2
        assert "simulate.nn" in capsys.readouterr().err

    def test_unknown_sampler_key_fails_fit(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"sampler.warmupp": 10})
        data = str(tmp_path / "d.csv")
        ok_cfg = write_config(tmp_path, name="ok.yaml")
        assert main(["simulate", "--config", ok_cfg, "--out", data]) == 0
        assert main(["fit", "--data", data, "--config", cfg,
                     "--out", str(tmp_path / "f")]) == 2
        assert "sampler.warmupp" in capsys.readouterr().err


class TestFit:
    def test_artifacts_and_summary(self, fitted):
        fit = fitted["fit"]
        summary = json.load(open(fit + "/summary.json"))
        for name in ("beta_x1", "beta_x2", "mu", "sigma"):
            p = summary["params"][name]
            assert math.isfinite(p["median"])
            assert p["lo95"] <= p["median"] <= p["hi95"]
        meta = json.load(open(fit + "/fit.json"))
        assert meta["model"]["effect"]["kind"] == "constant"
        lines = open(fit + "/draws.csv").read().splitlines()
        assert lines[0] == ("chain,iter,beta_x1,beta_x2,mu,sigma,"
                            "divergent,energy")
        assert len(lines) == 1 + 600

    def test_validation_error_exit_2(self, fitted, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("y_l,y_u,delta\n1,2,0\n")
        assert main(["fit", "--data", str(bad), "--config", fitted["cfg"],
                     "--out", str(tmp_path / "f")]) == 2

    def test_knot_rule_places_log_quantiles(self, fitted, tmp_path):
        cfg = write_config(tmp_path, {
            "model.effect.kind": "spline",
            "model.effect.knot_rule": "quantiles:2,log",
            "sampler.warmup": 150, "sampler.iters": 150,
        })
        fit_dir = str(tmp_path / "fit_spline")
        assert main(["fit", "--data", fitted["data"], "--config", cfg,
                     "--out", fit_dir]) == 0
        knots = json.load(open(fit_dir + "/fit.json"))["model"]["effect"]["knots"]
        ds = read_csv(fitted["data"])
        interval = ~ds.event & np.isfinite(ds.y_upper)
        times = np.concatenate([ds.y_lower[ds.event],
                                0.5 * (ds.y_lower + ds.y_upper)[interval]])
        want = np.quantile(np.log(np.sort(times)), [0, 1/3, 2/3, 1])
        np.testing.assert_allclose(knots, want, atol=1e-12)

    def test_seed_determinism(self, fitted, tmp_path):
        f1, f2 = str(tmp_path / "f1"), str(tmp_path / "f2")
        for f in (f1, f2):
            assert main(["fit", "--data", fitted["data"], "--config",
                         fitted["cfg"], "--out", f, "--seed", "77"]) == 0
        assert open(f1 + "/draws.csv").read() == open(f2 + "/draws.csv").read()


class TestPostProcessing:
    def test_standardize_and_af(self, fitted, tmp_path):
        surv = str(tmp_path / "surv.csv")
        assert main(["standardize", "--fit", fitted["fit"], "--out", surv,
                     "--thin", "4"]) == 0
        table = CurveTable.from_csv(surv)
        assert set(table.group) == {"exposed", "unexposed"}
        for g in ("exposed", "unexposed"):
            rows = table.rows_for(g)
            assert np.all(np.diff(rows.mean) <= 1e-12)

        af = str(tmp_path / "af.csv")
        assert main(["af", "--fit", fitted["fit"], "--out", af,
                     "--thin", "4", "--p-grid", "0.2:0.8:4"]) == 0
        got = CurveTable.from_csv(af)
        # constant-effect model: flat in p
        assert got.mean.max() - got.mean.min() < 1e-9

    def test_af_analytic_constant(self, fitted, tmp_path):
        out = str(tmp_path / "af_an.csv")
        assert main(["af", "--analytic", "--config", fitted["cfg"],
                     "--out", out, "--covariate", "x1"]) == 0
        table = CurveTable.from_csv(out)
        assert len(table.abscissa) == 99
        np.testing.assert_allclose(table.mean, math.exp(0.5), atol=1e-9)
        assert np.all(table.hi95 == table.lo95)

    def test_missing_fit_artifacts_exit_2(self, tmp_path):
        assert main(["af", "--fit", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "x.csv")]) == 2

    def test_csv_draws_fallback_matches_npz(self, fitted, tmp_path):
        import shutil

        clone = tmp_path / "fit_csv_only"
        shutil.copytree(fitted["fit"], clone)
        (clone / "draws.npz").unlink()
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        args = ["--thin", "4", "--p-grid", "0.3:0.7:3"]
        assert main(["af", "--fit", str(clone), "--out", a] + args) == 0
        assert main(["af", "--fit", fitted["fit"], "--out", b] + args) == 0
        ta, tb = CurveTable.from_csv(a), CurveTable.from_csv(b)
        np.testing.assert_allclose(ta.mean, tb.mean, rtol=1e-12)

    def test_loo_report(self, fitted, tmp_path):
        out = str(tmp_path / "loo_out")
        assert main(["loo", "--fit", fitted["fit"], "--data", fitted["data"],
                     "--out", out]) == 0
        rep = read_loo_report(out + "/loo.txt")
        assert rep["minus2elpd"] == -2 * rep["elpd"]
        assert rep["n"] == 120
        rows = open(out + "/loo_pointwise.csv").read().splitlines()
        assert rows[0] == "subject,elpd_i,khat"
        assert len(rows) == 121

    def test_loo_mismatched_data_exit_2(self, fitted, tmp_path):
        cfg = write_config(tmp_path, {"simulate.seed": 123})
        other = str(tmp_path / "other.csv")
        assert main(["simulate", "--config", cfg, "--out", other]) == 0
        assert main(["loo", "--fit", fitted["fit"], "--data", other]) == 2

    def test_loo_refit_flag_runs(self, fitted, tmp_path):
        out = str(tmp_path / "loo_refit")
        assert main(["loo", "--fit", fitted["fit"], "--data", fitted["data"],
                     "--out", out, "--refit-khat"]) == 0
        assert read_loo_report(out + "/loo.txt")["n"] == 120


class TestThreads:
    def test_parallel_chains_match_sequential(self, fitted, tmp_path,
                                              monkeypatch):
        f1, f2 = str(tmp_path / "t1"), str(tmp_path / "t2")
        assert main(["fit", "--data", fitted["data"], "--config",
                     fitted["cfg"], "--out", f1, "--seed", "3",
                     "--threads", "2"]) == 0
        monkeypatch.setenv("QAFT_THREADS", "1")
        assert main(["fit", "--data", fitted["data"], "--config",
                     fitted["cfg"], "--out", f2, "--seed", "3"]) == 0
        assert open(f1 + "/draws.csv").read() == open(f2 + "/draws.csv").read()


class TestTimeVaryingPipeline:
    def test_surface_and_slice(self, tmp_path):
        cfg = write_config(tmp_path, {
            "model.covariates": ["x2"],
            "model.effect": {"kind": "constant", "time_varying": True},
            "truth.beta": {"onset": -0.7, "x2": 0.2},
            "simulate.covariates": {"x2": {"dist": "normal", "mean": 0.0,
                                           "sd": 1.0}},
            "simulate.onset": {"dist": "exponential", "rate": 0.4,
                               "never_prob": 0.3},
            "simulate.n": 100,
            "sampler.warmup": 200, "sampler.iters": 200,
        })
        data = str(tmp_path / "tv.csv")
        assert main(["simulate", "--config", cfg, "--out", data]) == 0
        assert "tx_time" in open(data).readline().strip().split(",")
        fit_dir = str(tmp_path / "tvfit")
        assert main(["fit", "--data", data, "--config", cfg,
                     "--out", fit_dir]) == 0

        surf = str(tmp_path / "surf.csv")
        assert main(["surface", "--fit", fit_dir, "--out", surf,
                     "--onset-grid", "1.0:3.0:2", "--p-grid", "0.3:0.7:3",
                     "--thin", "20"]) == 0
        af = str(tmp_path / "af_tv.csv")
        assert main(["af", "--fit", fit_dir, "--out", af, "--exposed", "1.0",
                     "--p-grid", "0.3:0.7:3", "--thin", "20"]) == 0
        surface = CurveTable.from_csv(surf)
        slice1 = surface.rows_for("tx=1")
        direct = CurveTable.from_csv(af)
        np.testing.assert_array_equal(slice1.mean, direct.mean)
        np.testing.assert_array_equal(slice1.lo95, direct.lo95)


class TestRoundTripBudget:
    def test_pipeline_under_ci_budget(self, tmp_path):
        """simulate -> fit -> summarize at n=200, 2 x (500 + 500)."""
        cfg = write_config(tmp_path, {"simulate.n": 200,
                                      "sampler.warmup": 500,
                                      "sampler.iters": 500})
        start = time.time()
        data = str(tmp_path / "d.csv")
        assert main(["simulate", "--config", cfg, "--out", data]) == 0
        fit_dir = str(tmp_path / "f")
        assert main(["fit", "--data", data, "--config", cfg,
                     "--out", fit_dir]) == 0
        summary = json.load(open(fit_dir + "/summary.json"))
        assert all(math.isfinite(v["median"])
                   for v in summary["params"].values())
        assert time.time() - start < 300.0


@pytest.mark.slow
class TestCalibrationSmoke:
    def test_alpha_intervals_cover_zero_under_constant_truth(self, tmp_path):
        """Data generated with a constant effect, fitted with a flexible
        one: the alpha intervals should usually cover zero."""
        good = 0
        for rep in range(10):
            sim_cfg = write_config(tmp_path, {
                "simulate.n": 150,
                "simulate.seed": 1000 + rep,
            }, name=f"sim{rep}.yaml")
            fit_cfg = write_config(tmp_path, {
                "model.effect.kind": "piecewise",
                "model.effect.knot_rule": "even:4",
                "sampler.warmup": 300, "sampler.iters": 400,
                "sampler.seed": rep,
            }, name=f"cfg{rep}.yaml")
            data = str(tmp_path / f"d{rep}.csv")
            assert main(["simulate", "--config", sim_cfg, "--out", data]) == 0
            fit_dir = str(tmp_path / f"f{rep}")
            assert main(["fit", "--data", data, "--config", fit_cfg,
                         "--out", fit_dir]) == 0
            params = json.load(open(fit_dir + "/summary.json"))["params"]
            cover = sum(
                params[f"alpha_{j}"]["lo95"] <= 0.0 <= params[f"alpha_{j}"]["hi95"]
                for j in range(1, 5))
            good += cover >= 3
        assert good >= 9
