import numpy as np
import pytest

from gsfde.gbm import (GPath, Scenario, ScenarioError, VolatilityBand,
                       VolatilityControl, capacity_estimate, check_markov_inequality,
                       path_rng, sample_path, scenario_grid, sublinear_expectation)


def grid(lo, hi, dt, levels=3):
    return scenario_grid(VolatilityBand(lo, hi), dt, levels)


class TestBandAndControls:
    def test_band_validation(self):
        with pytest.raises(ScenarioError):
            VolatilityBand(0.5, 0.3)
        with pytest.raises(ScenarioError):
            VolatilityBand(-0.1, 0.3)

    def test_control_must_stay_in_band(self):
        band = VolatilityBand(0.3, 0.6)
        with pytest.raises(ScenarioError):
            Scenario("bad", band, 0.01, VolatilityControl(kind="constant", value=0.9))
        with pytest.raises(ScenarioError):
            Scenario("bad", band, 0.01,
                     VolatilityControl(kind="periodic", values=(0.3, 0.7), period=1.0))

    def test_grid_levels(self):
        scens = grid(0.3, 0.6, 0.01, levels=5)
        vals = [s.control.value for s in scens]
        np.testing.assert_allclose(vals, np.linspace(0.3, 0.6, 5))


class TestSamplePath:
    def test_degenerate_band_is_classical(self):
        sc = Scenario.constant(1.0, VolatilityBand(1.0, 1.0), 0.01)
        path = sample_path(sc, 1.0, seed=1)
        assert path.qv[-1] == pytest.approx(1.0, rel=1e-12)
        np.testing.assert_allclose(np.diff(path.qv), 0.01)

    def test_zero_band(self):
        sc = Scenario.constant(0.0, VolatilityBand(0.0, 0.0), 0.01)
        path = sample_path(sc, 1.0, seed=1)
        assert np.all(path.B == 0.0)
        assert np.all(path.qv == 0.0)

    def test_variance_monte_carlo(self):
        # sample variance of B(1) under constant sigma=0.5 is 0.25
        sc = Scenario.constant(0.5, VolatilityBand(0.3, 0.6), 0.05)
        n = 20000
        vals = np.array([sample_path(sc, 1.0, seed=9, path_index=i).value(1.0)
                         for i in range(n)])
        var = vals.var(ddof=1)
        se_var = 0.25 * np.sqrt(2.0 / n)
        assert abs(var - 0.25) <= 3 * se_var

    def test_qv_band_exact_for_every_control(self):
        band = VolatilityBand(0.3, 0.6)
        dt = 0.01
        controls = [
            VolatilityControl(kind="constant", value=0.45),
            VolatilityControl(kind="periodic", values=(0.3, 0.6), period=0.25),
            VolatilityControl(kind="threshold", threshold=0.5, below=0.3, above=0.6),
            VolatilityControl(kind="random"),
        ]
        for ctl in controls:
            sc = Scenario(f"c-{ctl.kind}", band, dt, ctl)
            for pi in range(5):
                path = sample_path(sc, 2.0, seed=3, path_index=pi)
                assert path.band_violation(band) == 0.0
                assert path.qv[0] == 0.0
                assert np.all(np.diff(path.qv) >= 0.0)

    def test_seed_reproducibility(self):
        sc = Scenario.constant(0.4, VolatilityBand(0.3, 0.6), 0.01)
        a = sample_path(sc, 1.0, seed=42, path_index=3)
        b = sample_path(sc, 1.0, seed=42, path_index=3)
        assert np.array_equal(a.B, b.B)
        c = sample_path(sc, 1.0, seed=43, path_index=3)
        assert not np.array_equal(a.B, c.B)

    def test_stream_split_is_stable_across_block_sizes(self):
        g1 = path_rng(5, 0, 0)
        whole = g1.standard_normal(100)
        g2 = path_rng(5, 0, 0)
        parts = np.concatenate([g2.standard_normal(37), g2.standard_normal(63)])
        assert np.array_equal(whole, parts)

    def test_horizon_must_be_divisible(self):
        sc = Scenario.constant(0.4, VolatilityBand(0.3, 0.6), 0.3)
        with pytest.raises(ScenarioError):
            sample_path(sc, 1.0, seed=1)

    def test_realized_qv_converges_to_bracket(self):
        # RMS relative error of sum (dB)^2 vs <B>(1) is sqrt(2 dt) ~ 1.4%
        sc = Scenario.constant(0.5, VolatilityBand(0.5, 0.5), 1e-4)
        errs = []
        for pi in range(1000):
            path = sample_path(sc, 1.0, seed=11, path_index=pi)
            realized = float(np.sum(path.increments ** 2))
            errs.append((realized - path.qv[-1]) / path.qv[-1])
        rms = float(np.sqrt(np.mean(np.square(errs))))
        assert rms < 0.05

    def test_g_normal_band_limits(self):
        # the per-step variance sits inside [lo^2 dt, hi^2 dt] for every control
        band = VolatilityBand(0.2, 0.9)
        sc = Scenario("rnd", band, 0.02, VolatilityControl(kind="random"))
        path = sample_path(sc, 1.0, seed=2)
        assert np.all(path.sigmas >= band.sigma_lo)
        assert np.all(path.sigmas <= band.sigma_hi)


class TestSublinearExpectation:
    def setup_method(self):
        self.dt = 0.01
        self.scens = grid(0.5, 1.0, self.dt, 3)

    def test_constant_preserved(self):
        est = sublinear_expectation(lambda p: 4.2, self.scens, 1.0, 100, seed=0)
        assert est.estimate == pytest.approx(4.2, rel=1e-12)
        assert est.se == 0.0

    def test_b1_squared_attained_at_top(self):
        est = sublinear_expectation(lambda p: p.value(1.0) ** 2, self.scens,
                                    1.0, 8000, seed=1)
        assert est.scenario_names[est.argmax] == "const-1"
        assert abs(est.estimate - 1.0) <= 3 * est.se

    def test_negative_b1_squared_attained_at_bottom(self):
        est = sublinear_expectation(lambda p: -p.value(1.0) ** 2, self.scens,
                                    1.0, 8000, seed=1)
        assert est.scenario_names[est.argmax] == "const-0.5"
        assert abs(est.estimate + 0.25) <= 3 * est.se

    def test_insufficient_sample(self):
        with pytest.raises(ScenarioError, match="insufficient"):
            sublinear_expectation(lambda p: 1.0, self.scens, 1.0, 1, seed=0)
        with pytest.raises(ScenarioError):
            sublinear_expectation(lambda p: 1.0, (), 1.0, 100, seed=0)

    def test_axioms_on_coupled_estimators(self):
        f = lambda p: p.value(1.0) ** 2
        n = 2000
        est = sublinear_expectation(f, self.scens, 1.0, n, seed=5)
        est_half = sublinear_expectation(lambda p: 0.5 * f(p), self.scens, 1.0, n, seed=5)
        est_scaled = sublinear_expectation(lambda p: 3.0 * f(p), self.scens, 1.0, n, seed=5)
        est_neg = sublinear_expectation(lambda p: -f(p), self.scens, 1.0, n, seed=5)
        est_sum = sublinear_expectation(lambda p: f(p) - f(p), self.scens, 1.0, n, seed=5)
        # monotone, positively homogeneous, subadditive
        assert est_half.estimate <= est.estimate
        assert est_scaled.estimate == pytest.approx(3.0 * est.estimate, rel=1e-12)
        assert est_sum.estimate <= est.estimate + est_neg.estimate + 1e-12
        # strict slack under genuine volatility uncertainty
        assert est.estimate + est_neg.estimate > 0.1


class TestCapacity:
    def setup_method(self):
        self.scens = grid(0.5, 1.0, 0.01, 3)

    def test_impossible_and_certain(self):
        cap0 = capacity_estimate(lambda p: False, self.scens, 1.0, 50, seed=0)
        cap1 = capacity_estimate(lambda p: True, self.scens, 1.0, 50, seed=0)
        assert cap0.estimate == 0.0
        assert cap1.estimate == 1.0

    def test_gaussian_tail(self):
        # P(|B(1)| > 2) = 2 Phi(-2) ~ 0.04550 for the classical band [1,1]
        scens = (Scenario.constant(1.0, VolatilityBand(1.0, 1.0), 0.01),)
        cap = capacity_estimate(lambda p: abs(p.value(1.0)) > 2.0, scens,
                                1.0, 8000, seed=3)
        assert abs(cap.estimate - 0.0455) <= 3 * max(cap.se, 1e-3)


class TestMarkov:
    def test_zero_variable(self):
        scens = grid(0.5, 1.0, 0.01, 2)
        chk = check_markov_inequality(lambda p: 0.0, p=2.0, delta=1.0,
                                      scenarios=scens, horizon=1.0,
                                      n_paths=100, seed=0)
        assert chk.holds
        assert chk.capacity == 0.0

    def test_b1_printed_form(self):
        scens = (Scenario.constant(1.0, VolatilityBand(1.0, 1.0), 0.01),)
        chk = check_markov_inequality(lambda p: p.value(1.0), p=2.0, delta=2.0,
                                      scenarios=scens, horizon=1.0,
                                      n_paths=4000, seed=1)
        assert chk.holds
        assert chk.bound == pytest.approx(0.5, rel=0.1)
        # the delta^p variant is reported but never asserted
        assert chk.bound_delta_p == pytest.approx(chk.bound / 2.0, rel=1e-12)

    def test_wide_band_large_slack(self):
        scens = grid(0.5, 1.0, 0.01, 3)
        chk = check_markov_inequality(lambda p: p.value(1.0), p=2.0, delta=0.1,
                                      scenarios=scens, horizon=1.0,
                                      n_paths=2000, seed=2)
        assert chk.holds
        assert chk.slack > 1.0

    def test_delta_positive(self):
        with pytest.raises(ScenarioError):
            check_markov_inequality(lambda p: 1.0, 2.0, 0.0,
                                    grid(0.5, 1.0, 0.01, 2), 1.0, 100, 0)
