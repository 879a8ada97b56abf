import numpy as np
import pytest
from scipy import integrate as spi

from gsfde.measures import (DelayMeasure, MeasureError, check_delay_integral_bound,
                            integrate_segment, moment)
from gsfde.phase_space import HistorySegment, TailModel, from_initial_data


def quad_moment(mu: DelayMeasure, m: float) -> float:
    """Independent oracle: numeric quadrature of e^{-m a} against mu."""
    total = sum(w * np.exp(m * tau) for tau, w in mu.atoms)
    for rho, w in mu.densities:
        # exponents combined so the integrand stays finite at -inf
        val, _ = spi.quad(lambda a, r=rho: r * np.exp((r - m) * a), -np.inf, 0.0)
        total += w * val
    return total


class TestMoments:
    def test_point_mass_at_zero(self):
        mu = DelayMeasure.point_mass(0.0)
        for m in (0.0, 1.0, 7.5):
            assert moment(mu, m) == pytest.approx(1.0)

    def test_single_density_closed_form_vs_quadrature(self):
        mu = DelayMeasure.exponential(3.0)
        assert quad_moment(mu, 1.0) == pytest.approx(1.5, abs=1e-8)
        assert moment(mu, 1.0) == pytest.approx(1.5, rel=1e-14)

    def test_atom_moment(self):
        mu = DelayMeasure.point_mass(1.0)
        assert moment(mu, 2.0) == pytest.approx(np.exp(2.0), rel=1e-14)
        assert moment(mu, 2.0) == pytest.approx(7.389056, abs=1e-6)

    def test_not_in_class(self):
        mu = DelayMeasure.exponential(1.5)
        with pytest.raises(MeasureError, match="not in N"):
            moment(mu, 2.0)
        assert mu.in_class(1.0)
        assert not mu.in_class(1.5)

    def test_total_mass(self):
        mu = DelayMeasure(atoms=((0.5, 0.25),), densities=((2.0, 0.75),))
        assert moment(mu, 0.0) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("m1,m2", [(0.0, 0.5), (0.5, 1.0), (1.0, 1.9)])
    def test_moment_monotone_in_order(self, m1, m2):
        rng = np.random.default_rng(0)
        for _ in range(20):
            w = rng.uniform(0.1, 0.9)
            mu = DelayMeasure(atoms=((rng.uniform(0, 2), w),),
                              densities=((rng.uniform(2.0, 5.0), 1.0 - w),))
            assert moment(mu, m1) <= moment(mu, m2) + 1e-12

    def test_validation_names_entry(self):
        with pytest.raises(MeasureError, match="atom #1"):
            DelayMeasure(atoms=((0.5, 0.5), (-1.0, 0.5)))
        with pytest.raises(MeasureError, match="density #0"):
            DelayMeasure(densities=((-2.0, 1.0),))
        with pytest.raises(MeasureError, match="mass"):
            DelayMeasure(atoms=((0.0, 0.7),))


def exp_history_segment(q=1.0, dt=1e-3, horizon=5.0):
    n = int(round(horizon / dt)) + 1
    alphas = -dt * np.arange(n - 1, -1, -1)
    buf = np.exp(alphas)[:, None]
    return HistorySegment(q, dt, buf, TailModel.exp_decay(1.0, 1.0))


class TestIntegrateSegment:
    def test_constant_segment_any_measure(self):
        seg = from_initial_data({"kind": "constant", "value": 2.5}, q=1.0,
                                grid_step=1e-3)
        for mu in (DelayMeasure.point_mass(0.3),
                   DelayMeasure.exponential(3.0),
                   DelayMeasure(atoms=((0.2, 0.5),), densities=((4.0, 0.5),))):
            out = integrate_segment(mu, seg, 1)
            assert out[0] == pytest.approx(2.5, rel=1e-6)

    def test_zero_segment(self):
        seg = from_initial_data({"kind": "constant", "value": 0.0}, q=1.0)
        mu = DelayMeasure.exponential(3.0)
        assert integrate_segment(mu, seg, 1)[0] == 0.0
        assert integrate_segment(mu, seg, 2) == 0.0

    def test_exp_history_against_density_oracle(self):
        # int e^a * 3 e^{3a} da over (-inf, 0] = 3/4
        seg = exp_history_segment()
        mu = DelayMeasure.exponential(3.0)
        oracle, _ = spi.quad(lambda a: np.exp(a) * 3.0 * np.exp(3.0 * a), -np.inf, 0)
        assert oracle == pytest.approx(0.75, abs=1e-10)
        # trapezoid budget: (rho+r)^2 dt^2 / 12 ~ 1.3e-6 relative at dt=1e-3
        assert integrate_segment(mu, seg, 1)[0] == pytest.approx(0.75, abs=2e-6)

    def test_power_two_against_oracle(self):
        seg = exp_history_segment()
        mu = DelayMeasure.exponential(3.0)
        oracle, _ = spi.quad(lambda a: np.exp(2 * a) * 3.0 * np.exp(3.0 * a), -np.inf, 0)
        # steeper integrand: (rho+2r)^2 dt^2 / 12 ~ 2.1e-6 relative
        assert integrate_segment(mu, seg, 2) == pytest.approx(oracle, rel=3e-6)

    def test_atom_lookup_beyond_buffer_uses_tail(self):
        seg = exp_history_segment(horizon=2.0)
        mu = DelayMeasure.point_mass(4.0)  # deeper than the buffer
        assert integrate_segment(mu, seg, 1)[0] == pytest.approx(np.exp(-4.0), rel=1e-12)

    def test_off_grid_atom_on_coarse_grid_rejected(self):
        seg = from_initial_data({"kind": "constant", "value": 1.0}, q=1.0,
                                grid_step=0.01)
        mu = DelayMeasure.point_mass(0.0550001)
        with pytest.raises(MeasureError, match="off-grid"):
            integrate_segment(mu, seg, 1)

    def test_linearity_in_segment(self):
        rng = np.random.default_rng(1)
        mu = DelayMeasure(atoms=((0.5, 0.3),), densities=((3.0, 0.7),))
        n = 101
        buf1 = rng.standard_normal((n, 1))
        buf2 = rng.standard_normal((n, 1))
        s1 = HistorySegment(1.0, 0.01, buf1)
        s2 = HistorySegment(1.0, 0.01, buf2)
        both = HistorySegment(1.0, 0.01, buf1 + 2.0 * buf2)
        lhs = integrate_segment(mu, both, 1)
        rhs = integrate_segment(mu, s1, 1) + 2.0 * integrate_segment(mu, s2, 1)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_power_two_monotone_in_magnitude(self):
        rng = np.random.default_rng(2)
        mu = DelayMeasure.exponential(3.0)
        buf = rng.standard_normal((101, 1))
        small = HistorySegment(1.0, 0.01, buf)
        big = HistorySegment(1.0, 0.01, 2.0 * buf)
        assert integrate_segment(mu, small, 2) <= integrate_segment(mu, big, 2)


class TestDelayIntegralBound:
    def setup_method(self):
        self.dt = 0.01
        self.q = 1.0
        self.zeta_zero = from_initial_data({"kind": "constant", "value": 0.0},
                                           q=self.q, grid_step=self.dt)
        self.zeta_one = from_initial_data({"kind": "constant", "value": 1.0},
                                          q=self.q, grid_step=self.dt)

    def test_zero_trajectory(self):
        times = self.dt * np.arange(101)
        values = np.zeros(101)
        for variant in ("plain", "exponential"):
            chk = check_delay_integral_bound(times, values, self.zeta_zero,
                                             DelayMeasure.point_mass(0.5),
                                             variant=variant)
            assert chk.holds
            assert chk.min_slack == pytest.approx(0.0, abs=1e-15)

    def test_constant_trajectory_point_mass_at_zero(self):
        # Inner integral equals |X(s)|^2, so the time terms cancel exactly
        # and the raw slack is the full history term mu^(pq)/(pq) ||zeta||^p.
        c = 1.0
        times = self.dt * np.arange(101)
        values = np.full(101, c)
        mu = DelayMeasure.point_mass(0.0)
        chk = check_delay_integral_bound(times, values, self.zeta_one, mu,
                                         p=2.0, variant="plain")
        assert chk.holds
        expected = moment(mu, 2.0 * self.q) / (2.0 * self.q) * c ** 2
        assert chk.min_slack_raw == pytest.approx(expected, rel=1e-12)

    def test_exponential_variant_coefficients(self):
        times = self.dt * np.arange(51)
        values = np.zeros(51)
        mu = DelayMeasure.point_mass(0.2)
        chk = check_delay_integral_bound(times, values, self.zeta_zero, mu,
                                         p=2.0, lam=1.0, variant="exponential")
        # at p = 2 the derived and stated coefficients coincide
        assert chk.derived_coeff == pytest.approx(chk.stated_coeff, rel=1e-14)

    def test_p4_coefficients_differ_and_both_reported(self):
        times = self.dt * np.arange(51)
        values = np.zeros(51)
        mu = DelayMeasure.point_mass(0.2)
        chk = check_delay_integral_bound(times, values, self.zeta_zero, mu,
                                         p=4.0, lam=1.0, variant="plain")
        assert chk.derived_coeff == pytest.approx(moment(mu, 4.0) / 4.0, rel=1e-14)
        assert chk.stated_coeff == pytest.approx(moment(mu, 2.0) / 2.0, rel=1e-14)
        assert chk.derived_coeff != chk.stated_coeff

    def test_lambda_precondition(self):
        times = self.dt * np.arange(11)
        with pytest.raises(MeasureError, match="lam"):
            check_delay_integral_bound(times, np.ones(11), self.zeta_one,
                                       DelayMeasure.point_mass(0.0), p=2.0,
                                       lam=2.0, variant="exponential")

    def test_class_requirement(self):
        times = self.dt * np.arange(11)
        mu = DelayMeasure.exponential(1.5)  # not in N_2
        with pytest.raises(MeasureError, match="N_2"):
            check_delay_integral_bound(times, np.ones(11), self.zeta_one, mu)

    def test_random_trajectory_mixed_measure(self):
        rng = np.random.default_rng(7)
        times = self.dt * np.arange(201)
        values = np.concatenate([[1.0], 1.0 + 0.3 * np.cumsum(
            rng.standard_normal(200)) * np.sqrt(self.dt)])
        mu = DelayMeasure(atoms=((0.5, 0.4),), densities=((3.0, 0.6),))
        for variant in ("plain", "exponential"):
            chk = check_delay_integral_bound(times, values, self.zeta_one, mu,
                                             p=2.0, lam=1.0, variant=variant)
            assert chk.holds, f"{variant}: slack {chk.min_slack}"
