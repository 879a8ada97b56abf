"""Explicit Euler-Maruyama integration of the delay SDE under a scenario.

One step advances X by g(X_t) dt + h(X_t) sigma_n^2 dt + gamma(X_t) dW_n,
where the quadratic-variation differential is integrated as sigma_n^2 dt
(exact under the scenario) and dW_n = sigma_n sqrt(dt) xi_n.

The engine never materializes a growing history buffer.  It advances
rolling state that reproduces the segment operations exactly on the grid:

  * atom lags read a ring buffer of recent values (initial data before 0);
  * each exponential density keeps a trapezoid-consistent moving integral
    D_n plus the decayed closed-form initial-history integral;
  * the segment norm obeys the one-step contraction
    m_n = max(e^{-q dt} m_{n-1}, |X_n|) with m_0 = ||zeta||_q.

Equality with the step/evolve path on HistorySegment objects is exact in
exact arithmetic and is asserted in the test suite.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import CoefficientSet, TruncatedCoefficientSet
from .gbm import Scenario, path_rng
from .measures import DelayMeasure, integrate_segment
from .phase_space import HistorySegment, from_initial_data, default_horizon

__all__ = [
    "SimConfigError",
    "NumericalBlowupError",
    "SimConfig",
    "TrajectoryRecord",
    "step",
    "simulate",
    "simulate_pair",
    "simulate_truncated",
    "batch_statistics",
]


class SimConfigError(ValueError):
    """Raised for inconsistent simulation configurations."""


class NumericalBlowupError(RuntimeError):
    """Raised when a step produces a non-finite state."""

    def __init__(self, step_index: int, message: str = "", record=None):
        super().__init__(message or f"non-finite state at step {step_index}")
        self.step_index = step_index
        self.record = record


@dataclass(frozen=True)
class SimConfig:
    """Everything one run needs besides the scenario and the seed."""

    horizon: float
    dt: float
    coefficients: CoefficientSet | TruncatedCoefficientSet
    initial_data: dict
    q: float = 1.0
    dim: int = 1
    exit_level: float | None = None
    record_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise SimConfigError(f"dt must be positive, got {self.dt}")
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise SimConfigError(
                f"dt={self.dt} does not divide the horizon {self.horizon}")
        if self.q <= 0:
            raise SimConfigError(f"q must be positive, got {self.q}")
        if self.record_stride < 1:
            raise SimConfigError("record stride must be >= 1")
        for mu in self._measures():
            for tau, _ in mu.atoms:
                k = round(tau / self.dt)
                if abs(k * self.dt - tau) > 1e-9:
                    raise SimConfigError(
                        f"atom delay {tau} of {mu.name} is not a multiple of dt={self.dt}")

    def _measures(self):
        cs = self.coefficients
        return (cs.drift.measure, cs.qv_drift.measure, cs.diffusion.measure)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def max_atom_lag(self) -> float:
        return max((m.max_atom_delay() for m in self._measures()), default=0.0)

    def history_horizon(self) -> float:
        return default_horizon(self.q, self.dt, self.max_atom_lag())

    def build_segment(self, spec) -> HistorySegment:
        if isinstance(spec, HistorySegment):
            if abs(spec.grid_step - self.dt) > 1e-15 or spec.q != self.q:
                raise SimConfigError("segment grid/q do not match the configuration")
            return spec
        return from_initial_data(spec, self.q, self.dim, self.dt,
                                 self.history_horizon())

    def zeta(self) -> HistorySegment:
        return self.build_segment(self.initial_data)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Recorded trajectory of one path (at the configured stride)."""

    times: np.ndarray
    states: np.ndarray
    segment_norms: np.ndarray
    scenario_id: str
    seed: int
    theta_m: float | None = None
    exit_level: float | None = None

    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def write_csv(self, path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{i}" for i in range(d)]
                            + ["segment_norm", "scenario_id", "seed"])
            for i, t in enumerate(self.times):
                writer.writerow([f"{t:.10g}"] + [f"{v:.17g}" for v in self.states[i]]
                                + [f"{self.segment_norms[i]:.17g}",
                                   self.scenario_id, self.seed])


def step(seg: HistorySegment, coeffs, sigma: float, dW: float, dt: float) -> np.ndarray:
    """One explicit Euler step from the segment's head.

    Returns seg(0) + g(seg) dt + h(seg) sigma^2 dt + gamma(seg) dW.  The
    reference path for tests; the batch engine reproduces it exactly.
    """
    g, h, gam = coeffs.evaluate(seg)
    x = seg.head + g * dt + h * (sigma ** 2 * dt) + gam * dW
    if not np.all(np.isfinite(x)):
        raise NumericalBlowupError(0, "non-finite state after one step")
    return x


# ---------------------------------------------------------------------------
# Rolling batch state


class _FunctionalState:
    """Rolling evaluation of one affine functional across a path batch."""

    __slots__ = ("a", "b", "c0", "has_c0", "atoms", "densities")

    def __init__(self, func, zeta: HistorySegment, dt: float, n_paths: int):
        inner = getattr(func, "inner", func)
        self.a = inner.a
        self.b = inner.b
        self.c0 = inner.c0
        self.has_c0 = bool(np.any(inner.c0 != 0.0))
        self.atoms = []
        self.densities = []
        dim = zeta.dim
        if self.b != 0.0:
            for tau, w in inner.measure.atoms:
                self.atoms.append((int(round(tau / dt)), w))
            for rho, w in inner.measure.densities:
                i_zeta = _zeta_density_integral(zeta, rho, w)
                self.densities.append({
                    "decay": np.exp(-rho * dt),
                    "wrho": w * rho,
                    "z": 1.0,
                    "i_zeta": i_zeta,
                    "D": np.zeros((n_paths, dim)),
                })

    def integral(self, n_prev: int, ring, ring_len: int, zeta_table) -> np.ndarray | float:
        """Delay integral of the running segment whose head index is n_prev."""
        if self.b == 0.0:
            return 0.0
        total = None
        for k, w in self.atoms:
            m = n_prev - k
            v = ring[m % ring_len] if m >= 0 else zeta_table[-m][None, :]
            term = w * v
            total = term if total is None else total + term
        for d in self.densities:
            term = d["z"] * d["i_zeta"][None, :] + d["D"]
            total = term if total is None else total + term
        return total

    def advance_densities(self, x_prev, x_new, dt: float) -> None:
        for d in self.densities:
            dec = d["decay"]
            d["D"] = dec * d["D"] + (0.5 * dt * d["wrho"]) * (dec * x_prev + x_new)
            d["z"] *= dec


def _zeta_density_integral(zeta: HistorySegment, rho: float, w: float) -> np.ndarray:
    """Vector integral of zeta against w rho e^{rho alpha} (buffer + tail)."""
    unit = DelayMeasure(densities=((rho, 1.0),), name="unit")
    return w * integrate_segment(unit, zeta, 1)


class _TrajBatch:
    """Rolling state of one trajectory family over a batch of paths."""

    def __init__(self, config: SimConfig, coeffs, zeta: HistorySegment, n_paths: int):
        self.dt = config.dt
        self.q = config.q
        self.n_paths = n_paths
        dim = zeta.dim
        self.X = np.tile(zeta.head, (n_paths, 1))
        self.norm = np.full(n_paths, zeta.norm())
        self.sup_hist = np.full(n_paths, zeta.sup_abs())
        mags0 = float(np.linalg.norm(zeta.head))
        self.sup_path = np.full(n_paths, mags0)
        self.decay_q = np.exp(-config.q * config.dt)
        self.level = getattr(coeffs, "level", None)
        self.f_g = _FunctionalState(coeffs.drift, zeta, config.dt, n_paths)
        self.f_h = _FunctionalState(coeffs.qv_drift, zeta, config.dt, n_paths)
        self.f_gam = _FunctionalState(coeffs.diffusion, zeta, config.dt, n_paths)
        lags = [k for f in (self.f_g, self.f_h, self.f_gam) for k, _ in f.atoms]
        self.ring_len = max(lags, default=0) + 1
        self.ring = np.empty((self.ring_len, n_paths, dim))
        self.ring[0] = self.X
        self.zeta_table = np.stack(
            [zeta.value_at(-j * config.dt) for j in range(self.ring_len)])

    def mags(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->i", self.X, self.X))

    def _functional_value(self, f: _FunctionalState, n_prev: int, scale) -> np.ndarray:
        val = 0.0
        if f.a != 0.0:
            val = -f.a * self.X
        if f.b != 0.0:
            integral = f.integral(n_prev, self.ring, self.ring_len, self.zeta_table)
            val = val + f.b * integral
        if scale is not None and not np.isscalar(val):
            val = val * scale[:, None]
        if f.has_c0:
            val = val + f.c0[None, :]
        return val

    def advance(self, n: int, qv_dt, dW) -> None:
        """Advance from index n-1 to n.

        ``qv_dt`` is sigma_n^2 dt (scalar or per-path); ``dW`` the per-path
        driving increments.
        """
        n_prev = n - 1
        scale = None
        if self.level is not None:
            # Clipping to the m-ball rescales the homogeneous part only.
            scale = np.minimum(1.0, self.level / np.maximum(self.norm, 1e-300))
        g = self._functional_value(self.f_g, n_prev, scale)
        h = self._functional_value(self.f_h, n_prev, scale)
        gam = self._functional_value(self.f_gam, n_prev, scale)
        qv = qv_dt if np.isscalar(qv_dt) else np.asarray(qv_dt)[:, None]
        x_prev = self.X
        x_new = x_prev + g * self.dt
        if not np.isscalar(h) or h != 0.0:
            x_new = x_new + h * qv
        if not np.isscalar(gam) or gam != 0.0:
            x_new = x_new + gam * dW[:, None]
        m = np.sqrt(np.einsum("ij,ij->i", x_new, x_new))
        if not np.isfinite(float(m.sum())):
            bad = int(np.argwhere(~np.isfinite(x_new))[0][0])
            raise NumericalBlowupError(n, f"non-finite state in path {bad} at step {n}")
        for f in (self.f_g, self.f_h, self.f_gam):
            f.advance_densities(x_prev, x_new, self.dt)
        self.X = x_new
        self.ring[n % self.ring_len] = x_new
        self.norm = np.maximum(self.decay_q * self.norm, m)
        self.sup_hist = np.maximum(self.sup_hist, m)
        self.sup_path = np.maximum(self.sup_path, m)


def _checkpoint_indices(checkpoints, dt: float, n_steps: int) -> list:
    out = []
    for t in checkpoints:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)) or not (0 <= k <= n_steps):
            raise SimConfigError(f"checkpoint {t} is not on the simulation grid")
        out.append(k)
    return out


_STATS = ("x2", "norm2", "sup2", "pathsup", "diff2", "diffnorm2")


NOISE_BLOCK = 1000


def batch_statistics(config: SimConfig, scenario: Scenario, seed: int,
                     n_paths: int, checkpoints: Sequence[float],
                     stats: Sequence[str] = ("x2", "norm2"),
                     scenario_index: int = 0, xi_spec=None,
                     chunk: int | None = None) -> dict:
    """Per-path statistics at checkpoint times, vectorized across paths.

    Statistics: ``x2`` = |X(t)|^2, ``norm2`` = ||X_t||_q^2, ``sup2`` =
    sup_{-inf < s <= t} |X(s)|^2, ``pathsup`` = max_{0 <= s <= t} |X(s)|,
    and for coupled pairs (``xi_spec`` given) ``diff2`` = |X(t)-Y(t)|^2 and
    ``diffnorm2`` = ||X_t - Y_t||_q^2.  Noise (and any random control draws)
    come from per-(scenario, path) streams and are shared within each pair,
    so results are independent of the chunking.
    """
    for s in stats:
        if s not in _STATS:
            raise SimConfigError(f"unknown statistic {s!r}")
    if abs(scenario.dt - config.dt) > 1e-15:
        raise SimConfigError("scenario mesh and simulation mesh differ")
    n_steps = config.n_steps
    idx = _checkpoint_indices(checkpoints, config.dt, n_steps)
    zeta = config.zeta()
    xi_seg = config.build_segment(xi_spec) if xi_spec is not None else None
    need_pair = any(s in ("diff2", "diffnorm2") for s in stats)
    if need_pair and xi_seg is None:
        raise SimConfigError("pair statistics need a second initial datum")
    out = {s: np.empty((n_paths, len(idx))) for s in stats}
    sqdt = np.sqrt(config.dt)
    ctl = scenario.control
    # ~2500 paths keeps the per-step working set inside cache.
    chunk = chunk or max(1, min(n_paths, 2500))
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        c = hi - lo
        gens = [path_rng(seed, scenario_index, lo + i) for i in range(c)]
        draw_gens = None
        if ctl.needs_draws:
            draw_gens = [path_rng(seed, scenario_index, lo + i, stream=1)
                         for i in range(c)]
        states = [_TrajBatch(config, config.coefficients, zeta, c)]
        diffnorm = None
        if xi_seg is not None:
            states.append(_TrajBatch(config, config.coefficients, xi_seg, c))
            diffnorm = np.full(c, (zeta - xi_seg).norm())
        pos: dict = {}
        for j, k in enumerate(idx):
            pos.setdefault(k, []).append(j)

        def record(k: int) -> None:
            a = states[0]
            for j in pos[k]:
                if "x2" in out:
                    out["x2"][lo:hi, j] = np.einsum("ij,ij->i", a.X, a.X)
                if "norm2" in out:
                    out["norm2"][lo:hi, j] = a.norm ** 2
                if "sup2" in out:
                    out["sup2"][lo:hi, j] = a.sup_hist ** 2
                if "pathsup" in out:
                    out["pathsup"][lo:hi, j] = a.sup_path
                if need_pair:
                    dvec = states[0].X - states[1].X
                    if "diff2" in out:
                        out["diff2"][lo:hi, j] = np.einsum("ij,ij->i", dvec, dvec)
                    if "diffnorm2" in out:
                        out["diffnorm2"][lo:hi, j] = diffnorm ** 2

        if 0 in pos:
            record(0)
        decay_q = states[0].decay_q
        const_sigma = ctl.kind == "constant"
        noise = np.empty((c, 0))
        draws = None
        block_lo = 0
        dW_block = None
        for n in range(1, n_steps + 1):
            j = n - 1 - block_lo
            if n - 1 - block_lo >= noise.shape[1]:
                block_lo = n - 1
                nb = min(NOISE_BLOCK, n_steps - block_lo)
                noise = np.stack([g.standard_normal(nb) for g in gens])
                if draw_gens is not None:
                    draws = np.stack([g.random(nb) for g in draw_gens])
                dW_block = (ctl.value * sqdt) * noise if const_sigma else None
                j = 0
            if const_sigma:
                qv_dt = ctl.value ** 2 * config.dt
                dW = dW_block[:, j]
            else:
                sigma = ctl.sigma(n - 1, config.dt, scenario.band,
                                  state_mag=(states[0].mags()
                                             if ctl.state_dependent else None),
                                  draws=None if draws is None else draws[:, j])
                sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (c,))
                qv_dt = sigma ** 2 * config.dt
                dW = sigma * sqdt * noise[:, j]
            for st in states:
                st.advance(n, qv_dt, dW)
            if diffnorm is not None:
                dvec = states[0].X - states[1].X
                diffnorm = np.maximum(decay_q * diffnorm,
                                      np.sqrt(np.einsum("ij,ij->i", dvec, dvec)))
            if n in pos:
                record(n)
    return out


def _single_run(config: SimConfig, coeff_list, zeta_list, scenario: Scenario,
                seed: int, scenario_index: int, path_index: int):
    """One path (possibly several coupled trajectories); full stride records."""
    n_steps = config.n_steps
    stride = config.record_stride
    rng_noise = path_rng(seed, scenario_index, path_index).standard_normal(n_steps)
    draws = None
    if scenario.control.needs_draws:
        draws = path_rng(seed, scenario_index, path_index, stream=1).random(n_steps)
    states = [_TrajBatch(config, cf, z, 1) for cf, z in zip(coeff_list, zeta_list)]
    rec_t = [[0.0] for _ in states]
    rec_x = [[st.X[0].copy()] for st in states]
    rec_norm = [[float(st.norm[0])] for st in states]
    theta = [None for _ in states]
    level = config.exit_level
    if level is not None:
        for si, st in enumerate(states):
            if float(st.mags()[0]) > level:
                theta[si] = 0.0
    halted = all(t is not None for t in theta) if level is not None else False
    sqdt = np.sqrt(config.dt)
    n = 0
    while n < n_steps and not halted:
        n += 1
        sigma = scenario.control.sigma(n - 1, config.dt, scenario.band,
                                       state_mag=states[0].mags(),
                                       draws=None if draws is None else draws[n - 1:n])
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (1,))
        qv_dt = sigma ** 2 * config.dt
        dW = sigma * sqdt * rng_noise[n - 1]
        try:
            for st in states:
                st.advance(n, qv_dt, dW)
        except NumericalBlowupError as err:
            partial = _make_record(config, scenario, seed, rec_t[0], rec_x[0],
                                   rec_norm[0], theta[0])
            raise NumericalBlowupError(n, str(err), partial) from None
        on_stride = (n % stride == 0) or (n == n_steps)
        for si, st in enumerate(states):
            crossed = (level is not None and theta[si] is None
                       and float(st.mags()[0]) > level)
            if crossed:
                theta[si] = n * config.dt
            if on_stride or crossed:
                rec_t[si].append(n * config.dt)
                rec_x[si].append(st.X[0].copy())
                rec_norm[si].append(float(st.norm[0]))
        if level is not None:
            halted = all(t is not None for t in theta)
    return [
        _make_record(config, scenario, seed, rec_t[i], rec_x[i], rec_norm[i], theta[i])
        for i in range(len(states))
    ]


def _make_record(config, scenario, seed, ts, xs, norms, theta) -> TrajectoryRecord:
    return TrajectoryRecord(np.asarray(ts), np.stack(xs), np.asarray(norms),
                            scenario.name, seed, theta, config.exit_level)


def simulate(config: SimConfig, scenario: Scenario, seed: int,
             scenario_index: int = 0, path_index: int = 0) -> TrajectoryRecord:
    """Integrate one path from the configured initial data.

    Fully determined by (config, scenario, seed, indices).  If an exit
    level m is configured, the run records the first grid time with
    |X(t)| > m as theta_m and halts there.
    """
    zeta = config.zeta()
    return _single_run(config, [config.coefficients], [zeta], scenario, seed,
                       scenario_index, path_index)[0]


def simulate_pair(config: SimConfig, zeta_spec, xi_spec, scenario: Scenario,
                  seed: int, scenario_index: int = 0, path_index: int = 0):
    """Two trajectories driven by identical noise, differing only in data.

    The increments (and any random control draws) are shared, which is the
    coupling under which the convergence estimates are checked.
    """
    zeta = config.build_segment(zeta_spec)
    xi = config.build_segment(xi_spec)
    recs = _single_run(config, [config.coefficients, config.coefficients],
                       [zeta, xi], scenario, seed, scenario_index, path_index)
    return recs[0], recs[1]


def simulate_truncated(config: SimConfig, level: float, scenario: Scenario,
                       seed: int, scenario_index: int = 0, path_index: int = 0):
    """Same noise through untruncated and m-ball-clipped coefficients.

    Returns (plain, truncated) records for agreement comparison; on the
    m-ball the clipped run is the identity, so the records coincide until
    the segment norm first leaves the ball.
    """
    from .coefficients import truncate

    zeta = config.zeta()
    base = config.coefficients
    if isinstance(base, TruncatedCoefficientSet):
        raise SimConfigError("configuration already carries truncated coefficients")
    recs = _single_run(config, [base, truncate(base, level)], [zeta, zeta],
                       scenario, seed, scenario_index, path_index)
    return recs[0], recs[1]
