import dataclasses

import numpy as np
import pytest

from gsfde.coefficients import (CertificateError, CoefficientSet,
                                DissipativityCertificate, LinearFunctional,
                                build_linear_coefficients, sample_segment_pair,
                                truncate, verify_certificate,
                                verify_global_conditions)
from gsfde.measures import DelayMeasure, integrate_segment
from gsfde.phase_space import HistorySegment, TailModel, from_initial_data

ATOM1 = DelayMeasure.point_mass(1.0, name="mu1")
ATOM_HALF = DelayMeasure.point_mass(0.5, name="mu2")
DENS3 = DelayMeasure.exponential(3.0, name="mu3")


def build_default(**kw):
    args = dict(a_g=1.2, b_g=0.2, mu_g=ATOM1, a_h=0.3, b_h=0.1, mu_h=ATOM_HALF,
                b_gamma=0.05, mu_gamma=ATOM1)
    args.update(kw)
    return build_linear_coefficients(**args)


class TestEvaluate:
    def test_offset_on_zero_history(self):
        cs = build_default(c0_g=0.7)
        zero = from_initial_data({"kind": "constant", "value": 0.0}, q=1.0)
        assert cs.drift.evaluate(zero)[0] == pytest.approx(0.7)
        assert cs.drift.offset()[0] == 0.7

    def test_pure_head_term(self):
        f = LinearFunctional(1.0, 0.0, 0.0, ATOM1)
        seg = from_initial_data({"kind": "constant", "value": 2.0}, q=1.0)
        assert f.evaluate(seg)[0] == pytest.approx(-2.0)

    def test_head_plus_delay_on_constant(self):
        f = LinearFunctional(2.0, 0.5, 0.0, ATOM1)
        c = 1.3
        seg = from_initial_data({"kind": "constant", "value": c}, q=1.0)
        expected = (-2.0 + 0.5) * c
        by_hand = -2.0 * c + 0.5 * integrate_segment(ATOM1, seg, 1)[0]
        assert f.evaluate(seg)[0] == pytest.approx(expected, rel=1e-12)
        assert f.evaluate(seg)[0] == pytest.approx(by_hand, rel=1e-14)

    def test_dimension_mismatch(self):
        f = LinearFunctional(1.0, 0.0, 0.0, ATOM1, dim=2)
        seg = from_initial_data({"kind": "constant", "value": 1.0}, q=1.0)
        with pytest.raises(CertificateError):
            f.evaluate(seg)


class TestBuildCertificate:
    def test_plain_young_split(self):
        cs = build_default(a_g=2.0, b_g=1.0)
        cert = cs.certificate
        assert cert.lam1 == pytest.approx(1.5)
        assert cert.lam2 == pytest.approx(0.5)

    def test_diffusion_constant(self):
        cs = build_default(b_gamma=0.3)
        assert cs.certificate.lam5 == pytest.approx(0.09)

    def test_pure_mean_reversion(self):
        cs = build_default(b_g=0.0)
        assert cs.certificate.lam2 == 0.0
        assert cs.certificate.lam1 == pytest.approx(1.2)

    def test_uncertifiable_drift(self):
        with pytest.raises(CertificateError, match="uncertifiable drift"):
            build_default(a_g=0.5, b_g=1.0)
        with pytest.raises(CertificateError, match="uncertifiable drift"):
            build_default(a_g=0.5, b_g=1.0)  # lam1 == 0 also rejected

    def test_qv_drift_may_degenerate_to_zero(self):
        cs = build_default(a_h=0.05, b_h=0.1)
        assert cs.certificate.lam3 == pytest.approx(0.0)
        with pytest.raises(CertificateError, match="uncertifiable qv-drift"):
            build_default(a_h=0.04, b_h=0.1)

    def test_weighted_young_split(self):
        cs = build_default(a_g=2.0, b_g=1.0, young_weight_g=2.0)
        assert cs.certificate.lam1 == pytest.approx(1.0)
        assert cs.certificate.lam2 == pytest.approx(0.25)

    def test_diffusion_head_term_rejected(self):
        cs = build_default()
        bad = LinearFunctional(0.5, 0.0, 0.0, ATOM1)
        with pytest.raises(CertificateError, match="head"):
            CoefficientSet(cs.drift, cs.qv_drift, bad, cs.certificate)


class TestVerifyCertificate:
    def test_sound_atom_set(self):
        cs = build_default()
        rep = verify_certificate(cs, n_trials=800, seed=1)
        assert rep.passed
        assert max(rep.max_violation) <= 1e-8

    def test_sound_density_set_within_budget(self):
        cs = build_default(mu_g=DENS3, mu_h=DENS3, mu_gamma=DENS3)
        rep = verify_certificate(cs, n_trials=300, seed=2)
        assert rep.passed  # per-trial quadrature budget covers the excess
        assert max(rep.max_violation) < 1e-4

    def test_broken_certificate_rejected(self):
        cs = build_default()
        inflated = dataclasses.replace(cs.certificate,
                                       lam1=2.0 * cs.certificate.lam1)
        broken = CoefficientSet(cs.drift, cs.qv_drift, cs.diffusion, inflated)
        rep = verify_certificate(broken, n_trials=800, seed=3)
        assert not rep.passed
        assert rep.max_violation[0] > 1e-3

    def test_equal_pair_gives_zero(self):
        cs = build_default()
        seg = from_initial_data({"kind": "constant", "value": 2.0}, q=1.0)
        d0 = seg.head - seg.head
        assert float(d0 @ d0) == 0.0
        dg = cs.drift.evaluate(seg) - cs.drift.evaluate(seg)
        assert float(dg @ dg) == 0.0


class TestGlobalConditions:
    def test_zero_coefficients(self):
        cs = build_default(a_g=1.0, b_g=0.0, a_h=0.0, b_h=0.0, b_gamma=0.0,
                           c0_g=0.0)
        # drift head term only: L = a_g^2 = 1, attained by a head spike
        rep = verify_global_conditions(cs, n_trials=400, seed=4)
        assert rep.lipschitz_L <= 1.0 + 1e-9
        assert rep.lipschitz_L >= 0.999

    def test_growth_bounded_by_offsets(self):
        cs = build_default(a_g=1.0, b_g=0.0, a_h=0.0, b_h=0.0, b_gamma=0.0,
                           c0_h=0.5)
        rep = verify_global_conditions(cs, n_trials=200, seed=5)
        assert rep.growth_K <= max(1.0, 0.25) + 1e-9

    def test_delay_atom_weight_inversion(self):
        # pure delay diffusion with an atom at lag 1: L = e^{2q} b^2 exactly,
        # attained by a spike at the atom lag
        b = 0.4
        cs = build_default(a_g=1.0, b_g=0.0, a_h=0.0, b_h=0.0, b_gamma=b,
                           mu_gamma=ATOM1)
        rep = verify_global_conditions(cs, n_trials=1500, seed=6)
        expected = np.exp(2.0) * b ** 2
        assert rep.lipschitz_L == pytest.approx(expected, rel=1e-9)


class TestTruncation:
    def test_identity_on_ball(self):
        cs = build_default()
        tr = truncate(cs, level=100.0)
        seg = from_initial_data({"kind": "constant", "value": 3.0}, q=1.0)
        for f, g in zip(cs.evaluate(seg), tr.evaluate(seg)):
            np.testing.assert_array_equal(f, g)

    def test_rescaled_outside_ball(self):
        cs = build_default()
        m = 1.0
        tr = truncate(cs, m)
        seg = from_initial_data({"kind": "constant", "value": 2.0}, q=1.0)
        norm = seg.norm()
        assert norm == pytest.approx(2.0)
        inner = cs.drift.evaluate(seg.scaled(m / norm))
        outer = tr.drift.evaluate(seg)
        np.testing.assert_allclose(outer, inner, rtol=1e-14)

    def test_homogeneous_linear_halves(self):
        cs = build_default(c0_g=0.0)
        m = 1.0
        tr = truncate(cs, m)
        seg = from_initial_data({"kind": "constant", "value": 2.0}, q=1.0)
        np.testing.assert_allclose(tr.drift.evaluate(seg),
                                   cs.drift.evaluate(seg) / 2.0, rtol=1e-12)

    def test_bounded_on_unbounded_inputs(self):
        cs = build_default()
        tr = truncate(cs, 1.0)
        vals = []
        for c in (1.0, 10.0, 1e3, 1e6):
            seg = from_initial_data({"kind": "constant", "value": c}, q=1.0)
            vals.append(abs(tr.drift.evaluate(seg)[0]))
        assert max(vals) <= max(vals[0], 2.0)  # clipped to the ball's sup

    def test_level_positive(self):
        with pytest.raises(CertificateError):
            truncate(build_default(), 0.0)


class TestPairSampler:
    def test_pairs_share_grid_and_tail_family(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            psi, phi = sample_segment_pair(rng, q=1.0, spike_lags=(1.0,))
            delta = psi - phi  # must not raise
            assert delta.grid_step == psi.grid_step
            assert psi.norm() <= 10.0 + 1e-9
