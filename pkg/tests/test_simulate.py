"""Inverse-transform correctness (Kolmogorov-Smirnov against the model
survivor), truncation by rejection, censoring bookkeeping, and
reproducibility."""

import math

import numpy as np
import pytest
from scipy import stats

from conftest import make_model
from qvaft.data import write_csv, read_csv
from qvaft.errors import ConfigError
from qvaft.inference import quantile_time, survivor_conditional
from qvaft.likelihood import ParameterVector
from qvaft.simulate import (
    CensoringSpec,
    CovariateSpec,
    OnsetSpec,
    SimConfig,
    TruncationSpec,
    draw_event_time,
    simulate_dataset,
)

PSI2 = ParameterVector(np.array([0.5, -0.3]), np.array([]), 1.0, 1.2)
GENS2 = (CovariateSpec("bernoulli", (0.5,)),
         CovariateSpec("normal", (0.0, 1.0)))


class TestDrawEventTime:
    def test_deterministic_inversion_at_median(self):
        # u = 0.5, exposure effect 0.5, exponential rate 0.3
        model = make_model(covariates=("x1",))
        psi = ParameterVector(np.array([0.5]), np.array([]),
                              math.log(1 / 0.3), 1.0)

        class FixedU:
            def random(self):
                return 0.5

        t = draw_event_time(model, psi, np.array([1.0]), FixedU())
        assert t == pytest.approx(math.log(2.0) / 0.3 * math.exp(0.5),
                                  rel=1e-12)

    def test_monte_carlo_survivor_value(self, rng):
        model = make_model(covariates=("x1",))
        psi = ParameterVector(np.array([0.0]), np.array([]), 0.0, 1.0)
        u = rng.random(100_000)
        t = quantile_time(model, psi, np.array([0.0]), u)
        frac = float(np.mean(t > 1.0))
        assert abs(frac - math.exp(-1.0)) < 0.005

    @pytest.mark.parametrize("family,K,w", [
        ("weibull", 0, None), ("lognormal", 0, None),
        ("tbp", 5, (0.01, 0.03, 0.09, 0.23, 0.64))])
    def test_uniform_survivor_values_per_family(self, family, K, w, rng):
        model = make_model(family=family, K=K, covariates=("x1",))
        psi = ParameterVector(np.array([0.4]), np.array([]), 0.3, 1.2,
                              None if w is None else np.array(w),
                              None if w is None else 1.0)
        x = np.array([1.0])
        u = rng.random(50_000)
        t = quantile_time(model, psi, x, u)
        s = survivor_conditional(model, psi, x, t)
        ks = stats.kstest(s, "uniform").statistic
        assert ks < 0.01

    def test_piecewise_transform_ks(self, rng):
        model = make_model(effect_kind="piecewise", knots=(0.0, 1.0, 2.5),
                           covariates=("x1",))
        psi = ParameterVector(np.array([0.2]), np.array([0.6, -0.4]), 0.4, 1.1)
        x = np.array([1.0])
        u = rng.random(50_000)
        t = quantile_time(model, psi, x, u)
        s = survivor_conditional(model, psi, x, t)
        assert stats.kstest(s, "uniform").statistic < 0.01


class TestSimulateDataset:
    def test_no_censoring_all_events(self):
        model = make_model()
        cfg = SimConfig(60, model, PSI2, GENS2, seed=4)
        ds = simulate_dataset(cfg)
        assert np.all(ds.event)
        np.testing.assert_array_equal(ds.y_lower, ds.y_upper)
        assert np.all(ds.trunc == 0.0)

    def test_kolmogorov_through_subject_path(self):
        model = make_model(covariates=("x1",))
        psi = ParameterVector(np.array([0.3]), np.array([]), 0.5, 1.3)
        cfg = SimConfig(50_000, model, psi,
                        (CovariateSpec("constant", (1.0,)),), seed=9)
        ds = simulate_dataset(cfg)
        s = survivor_conditional(model, psi, np.array([1.0]), ds.y_lower)
        assert stats.kstest(s, "uniform").statistic < 0.01

    def test_truncation_conditional_law(self):
        """Exponential baseline: accepted T minus a fixed entry time is again
        exponential (memorylessness)."""
        model = make_model(covariates=("x1",))
        psi = ParameterVector(np.array([0.0]), np.array([]), 0.0, 1.0)
        cfg = SimConfig(20_000, model, psi,
                        (CovariateSpec("constant", (0.0,)),),
                        truncation=TruncationSpec("fixed", (1.5,)), seed=11)
        ds = simulate_dataset(cfg)
        assert np.all(ds.y_lower > 1.5)
        ks = stats.kstest(ds.y_lower - 1.5, "expon").statistic
        assert ks < 0.01

    def test_administrative_censoring_rate(self):
        model = make_model()
        cfg = SimConfig(2000, model, PSI2, GENS2,
                        censoring=CensoringSpec(admin_time=4.0), seed=2)
        ds = simulate_dataset(cfg)
        censored = ~ds.event
        assert np.all(ds.y_lower[censored] == 4.0)
        assert np.all(np.isinf(ds.y_upper[censored]))
        assert 0.05 < censored.mean() < 0.95

    def test_interval_records_bracket_visits(self):
        model = make_model()
        gap = 0.7
        cfg = SimConfig(500, model, PSI2, GENS2,
                        censoring=CensoringSpec(admin_time=6.0, visit_gap=gap),
                        truncation=TruncationSpec("uniform", (0.0, 1.0)),
                        seed=13)
        ds = simulate_dataset(cfg)
        interval = ~ds.event & np.isfinite(ds.y_upper)
        assert interval.mean() > 0.5
        width = ds.y_upper[interval] - ds.y_lower[interval]
        np.testing.assert_allclose(width, gap, atol=1e-9)
        assert np.all(ds.trunc <= ds.y_lower + 1e-12)

    def test_time_varying_onsets(self):
        model = make_model(covariates=("x2",), time_varying=True)
        psi = ParameterVector(np.array([-0.5, 0.2]), np.array([]), 0.8, 1.1)
        cfg = SimConfig(300, model, psi, (CovariateSpec("normal", (0, 1)),),
                        onset=OnsetSpec("exponential", (0.5,), never_prob=0.3),
                        seed=6)
        ds = simulate_dataset(cfg)
        assert 0.1 < np.isinf(ds.onset).mean() < 0.6
        assert np.all(ds.onset[np.isfinite(ds.onset)] > 0)

    def test_seed_determinism_and_csv_round_trip(self, tmp_path):
        model = make_model()
        cfg = SimConfig(40, model, PSI2, GENS2,
                        censoring=CensoringSpec(admin_time=5.0), seed=21)
        a = simulate_dataset(cfg)
        b = simulate_dataset(cfg)
        np.testing.assert_array_equal(a.y_lower, b.y_lower)
        np.testing.assert_array_equal(a.x, b.x)
        path = tmp_path / "sim.csv"
        write_csv(a, path)
        back = read_csv(path)
        np.testing.assert_array_equal(back.y_lower, a.y_lower)

    def test_zero_admin_time_is_config_error(self):
        with pytest.raises(ConfigError):
            CensoringSpec(admin_time=0.0)

    def test_hopeless_truncation_is_config_error(self):
        model = make_model()
        cfg = SimConfig(3, model, PSI2, GENS2,
                        truncation=TruncationSpec("fixed", (1e8,)), seed=1)
        with pytest.raises(ConfigError, match="acceptance"):
            simulate_dataset(cfg)

    def test_covariate_generator_count_checked(self):
        model = make_model()
        with pytest.raises(ConfigError):
            SimConfig(10, model, PSI2, GENS2[:1], seed=0)
