import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsfde.phase_space import (HistorySegment, InitialDataError, SegmentError,
                               TailModel, check_segment_norm_bound, evolve_segment,
                               from_initial_data, rolling_norms, segment_norm)

from conftest import dense_sup_oracle


def make_segment(q=1.0, dt=1e-3, horizon=2.0, fn=lambda a: 1.0, tail=None, dim=1):
    n = int(round(horizon / dt)) + 1
    alphas = -dt * np.arange(n - 1, -1, -1)
    buf = np.array([np.atleast_1d(fn(a)) for a in alphas], dtype=float)
    return HistorySegment(q, dt, buf, tail)


class TestSegmentNorm:
    def test_constant_segment_norm_is_magnitude(self):
        seg = from_initial_data({"kind": "constant", "value": 3.0}, q=1.0)
        assert segment_norm(seg) == pytest.approx(3.0, abs=0)

    def test_zero_segment(self):
        seg = from_initial_data({"kind": "constant", "value": 0.0}, q=2.0)
        assert segment_norm(seg) == 0.0

    def test_growing_history_with_matching_tail(self):
        # e^{2a} * e^{-a} peaks at a = 0 with value 1; the tail decays under
        # the weight even though the raw history grows into the past.
        q = 2.0
        seg = make_segment(q=q, dt=1e-3, horizon=5.0,
                           fn=lambda a: np.exp(-a),
                           tail=TailModel.exp_decay(1.0, -1.0))
        oracle = dense_sup_oracle(lambda a: np.exp(-a), q, depth=40.0)
        assert segment_norm(seg) == pytest.approx(1.0, abs=1e-6)
        assert segment_norm(seg) == pytest.approx(oracle, abs=1e-6)

    def test_exp_decay_initial_data_norm_one(self):
        for q in (0.5, 1.0, 3.0):
            seg = from_initial_data({"kind": "exp_decay", "value": 1.0, "rate": 1.0},
                                    q=q)
            oracle = dense_sup_oracle(lambda a: np.exp(a), q)
            assert segment_norm(seg) == pytest.approx(1.0, rel=1e-12)
            assert oracle == pytest.approx(1.0, rel=1e-9)

    def test_tail_below_weight_capacity_rejected(self):
        with pytest.raises(SegmentError):
            make_segment(q=1.0, tail=TailModel.exp_decay(1.0, -2.0))

    def test_empty_buffer_rejected(self):
        with pytest.raises(SegmentError):
            HistorySegment(1.0, 1e-3, np.empty((0, 1)))

    def test_vector_valued_norm(self):
        v = np.array([3.0, 4.0])
        seg = from_initial_data({"kind": "constant", "value": v}, q=1.0, dim=2)
        assert segment_norm(seg) == pytest.approx(5.0)


class TestFromInitialData:
    def test_bad_rate_rejected(self):
        with pytest.raises(InitialDataError):
            from_initial_data({"kind": "exp_decay", "value": 1.0, "rate": -0.5}, q=1.0)
        with pytest.raises(InitialDataError):
            from_initial_data({"kind": "exp_decay", "value": 1.0, "rate": 0.0}, q=1.0)

    def test_unknown_kind(self):
        with pytest.raises(InitialDataError):
            from_initial_data({"kind": "spline"}, q=1.0)

    def test_samples_with_tail(self):
        seg = from_initial_data({"kind": "samples", "samples": [0.5, 1.0, 2.0],
                                 "tail": {"kind": "constant", "value": 0.5}},
                                q=1.0, grid_step=0.1)
        assert seg.n_samples == 3
        assert segment_norm(seg) == pytest.approx(2.0)


class TestEvolve:
    def test_constant_evolve_is_shift(self):
        seg = from_initial_data({"kind": "constant", "value": 2.0}, q=1.0)
        out = evolve_segment(seg, 2.0)
        assert out.t_anchor == pytest.approx(seg.t_anchor + seg.grid_step)
        assert segment_norm(out) == pytest.approx(2.0)
        # tail absorbed the departing sample: window did not grow
        assert out.n_samples == seg.n_samples

    def test_zero_segment_gains_head(self):
        seg = from_initial_data({"kind": "constant", "value": 0.0}, q=1.0)
        out = evolve_segment(seg, 5.0)
        assert segment_norm(out) == pytest.approx(5.0)

    def test_mismatched_sample_grows_window(self):
        seg = make_segment(q=1.0, dt=0.1, horizon=0.5, fn=lambda a: 1.0 + a,
                           tail=TailModel.zero(1))
        out = seg.evolve(7.0)
        assert out.n_samples == seg.n_samples + 1  # nothing silently dropped

    def test_evolve_norm_matches_recomputation(self):
        rng = np.random.default_rng(5)
        seg = make_segment(q=1.0, dt=0.05, horizon=1.0,
                           fn=lambda a: np.cos(3 * a),
                           tail=TailModel.constant(np.cos(3.0), 1))
        values = rng.standard_normal(40)
        for v in values:
            seg = seg.evolve(v)
            mags = np.linalg.norm(seg.buffer, axis=1)
            direct = max(float(np.max(np.exp(seg.q * seg.alphas()) * mags)),
                         seg.tail.weighted_sup(seg.q, seg.t_buf))
            assert segment_norm(seg) == pytest.approx(direct, rel=1e-14)


class TestSegmentAlgebraProperties:
    @given(st.floats(-5.0, 5.0))
    @settings(max_examples=30, deadline=None)
    def test_scaling_homogeneity(self, a):
        seg = make_segment(q=1.0, dt=0.02, horizon=0.4,
                           fn=lambda al: np.sin(5 * al) + 0.5,
                           tail=TailModel.constant(0.5, 1))
        assert segment_norm(a * seg) == pytest.approx(abs(a) * segment_norm(seg),
                                                      rel=1e-12, abs=1e-300)

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_triangle_inequality(self, s):
        rng = np.random.default_rng(s)
        tail_rate = float(rng.uniform(0.2, 2.0))

        def rand_seg():
            n = 21
            buf = rng.standard_normal((n, 1))
            return HistorySegment(1.0, 0.05, buf,
                                  TailModel.exp_decay(rng.uniform(-1, 1), tail_rate))

        s1, s2 = rand_seg(), rand_seg()
        assert segment_norm(s1 + s2) <= segment_norm(s1) + segment_norm(s2) + 1e-12

    def test_incompatible_tails_rejected(self):
        a = make_segment(tail=TailModel.exp_decay(1.0, 1.0))
        b = make_segment(tail=TailModel.exp_decay(1.0, 2.0))
        with pytest.raises(SegmentError):
            _ = a + b

    def test_fading_contraction_under_zero_head(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            buf = rng.standard_normal((30, 1))
            seg = HistorySegment(0.7, 0.05, buf, TailModel.zero(1))
            out = seg.evolve(0.0)
            limit = max(segment_norm(seg) * np.exp(-0.7 * 0.05),
                        seg.tail.weighted_sup(0.7, seg.t_buf))
            assert segment_norm(out) <= limit + 1e-14


class TestNormBoundCheck:
    def test_zero_trajectory_zero_history(self):
        zeta = from_initial_data({"kind": "constant", "value": 0.0}, q=1.0,
                                 grid_step=0.01)
        times = np.arange(0, 51) * 0.01
        values = np.zeros(51)
        chk = check_segment_norm_bound(times, values, zeta, p=2.0, lam=1.0)
        assert chk.holds
        assert chk.min_slack == pytest.approx(0.0, abs=1e-15)

    def test_constant_trajectory(self):
        c = 1.7
        zeta = from_initial_data({"kind": "constant", "value": c}, q=1.0,
                                 grid_step=0.01)
        times = np.arange(0, 101) * 0.01
        values = np.full(101, c)
        chk = check_segment_norm_bound(times, values, zeta, p=2.0, lam=1.0)
        assert chk.holds
        # LHS stays |c|^2 while the RHS adds the decayed history term
        assert chk.min_slack >= 0.0

    def test_lambda_precondition(self):
        zeta = from_initial_data({"kind": "constant", "value": 1.0}, q=1.0,
                                 grid_step=0.01)
        with pytest.raises(SegmentError):
            check_segment_norm_bound([0.0, 0.01], [1.0, 1.0], zeta, p=2.0, lam=2.0)

    def test_rolling_norms_match_segment_evolution(self):
        # The O(1) contraction recursion must equal the evolve/norm path.
        rng = np.random.default_rng(3)
        q, dt = 0.8, 0.05
        zeta = from_initial_data({"kind": "exp_decay", "value": 1.3, "rate": 0.5},
                                 q=q, grid_step=dt, horizon=1.0)
        values = [zeta.head]
        seg = zeta
        norms = [segment_norm(seg)]
        for _ in range(60):
            v = rng.standard_normal()
            seg = seg.evolve(v)
            values.append(np.atleast_1d(v))
            norms.append(segment_norm(seg))
        times = dt * np.arange(61)
        rolled = rolling_norms(times, np.array(values), zeta)
        np.testing.assert_allclose(rolled, norms, rtol=1e-12)
