"""Delay measures on (-infty, 0]: atoms plus exponential densities.

A measure is a probability mixture of point masses at lags -tau and
densities w * rho * e^{rho*alpha} d(alpha).  This family has closed-form
exponential moments and closed-form integrals against every tail model, so
the constants the bound engine consumes carry no quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .phase_space import HistorySegment, SegmentError

__all__ = [
    "MeasureError",
    "DelayMeasure",
    "moment",
    "integrate_segment",
    "check_delay_integral_bound",
    "DelayIntegralCheck",
]

MASS_TOL = 1e-12

# Quadrature budget for the trajectory inequality checks (relative).
LEMMA_TOL = 1e-6

# Nearest-grid atom lookups are only allowed off-grid on meshes at least
# this fine; on coarser meshes the atom must sit exactly on the grid.
ATOM_GRID_LIMIT = 1e-3 + 1e-12


class MeasureError(ValueError):
    """Raised for invalid measures or out-of-class moment requests."""


@dataclass(frozen=True)
class DelayMeasure:
    """Probability measure mu on (-infty, 0].

    ``atoms``     -- sequence of (tau, w): mass w at alpha = -tau, tau >= 0.
    ``densities`` -- sequence of (rho, w): density w * rho * e^{rho*alpha}.

    Total mass must be 1 to within 1e-12.  Membership in the class N_m
    requires every density rate rho > m (atoms always qualify).
    """

    atoms: tuple = ()
    densities: tuple = ()
    name: str = "mu"

    def __post_init__(self):
        atoms = tuple((float(t), float(w)) for t, w in self.atoms)
        densities = tuple((float(r), float(w)) for r, w in self.densities)
        for i, (tau, w) in enumerate(atoms):
            if tau < 0:
                raise MeasureError(f"{self.name}: atom #{i} has negative delay {tau}")
            if w <= 0:
                raise MeasureError(f"{self.name}: atom #{i} has non-positive weight {w}")
        for i, (rho, w) in enumerate(densities):
            if rho <= 0:
                raise MeasureError(f"{self.name}: density #{i} has non-positive rate {rho}")
            if w <= 0:
                raise MeasureError(f"{self.name}: density #{i} has non-positive weight {w}")
        mass = sum(w for _, w in atoms) + sum(w for _, w in densities)
        if abs(mass - 1.0) > MASS_TOL:
            raise MeasureError(
                f"{self.name}: total mass {mass!r} differs from 1 by more than {MASS_TOL}"
            )
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "densities", densities)

    @staticmethod
    def point_mass(tau: float = 0.0, name: str = "mu") -> "DelayMeasure":
        return DelayMeasure(atoms=((tau, 1.0),), name=name)

    @staticmethod
    def exponential(rho: float, name: str = "mu") -> "DelayMeasure":
        return DelayMeasure(densities=((rho, 1.0),), name=name)

    def in_class(self, m: float) -> bool:
        """True iff mu lies in N_m (finite moment of order m)."""
        return all(rho > m for rho, _ in self.densities)

    def max_atom_delay(self) -> float:
        return max((tau for tau, _ in self.atoms), default=0.0)


def moment(mu: DelayMeasure, m: float) -> float:
    """Exponential moment mu^(m) = integral of e^{-m*alpha} d mu.

    Closed form: sum_atoms w e^{m tau} + sum_densities w rho / (rho - m).
    Raises when some density rate rho <= m (mu is then outside N_m).
    """
    if m < 0:
        raise MeasureError(f"moment order must be >= 0, got {m}")
    total = 0.0
    for tau, w in mu.atoms:
        total += w * np.exp(m * tau)
    for i, (rho, w) in enumerate(mu.densities):
        if rho <= m:
            raise MeasureError(
                f"{mu.name}: density #{i} rate {rho} <= {m}; measure not in N_{m:g}"
            )
        total += w * rho / (rho - m)
    return float(total)


def _tail_density_integral(seg: HistorySegment, rho: float, w: float,
                           power: float) -> float | np.ndarray:
    """Integral of the tail against w*rho*e^{rho*alpha} beyond -t_buf.

    power == 1 returns the vector integral of tail(alpha); power p >= 1
    returns the scalar integral of |tail(alpha)|^p.
    """
    tail = seg.tail
    T = seg.t_buf
    if tail.kind == "zero":
        return np.zeros(seg.dim) if power == 1 else 0.0
    if power == 1:
        s = rho + tail.rate
        if s <= 0:
            raise MeasureError(
                f"density rate {rho} too slow for tail rate {tail.rate}: divergent integral"
            )
        return w * rho * tail.coeff * np.exp(-s * T) / s
    s = rho + power * tail.rate
    if s <= 0:
        raise MeasureError(
            f"density rate {rho} too slow for |tail|^{power}: divergent integral"
        )
    mag = float(np.linalg.norm(tail.coeff))
    return w * rho * mag ** power * np.exp(-s * T) / s


def _atom_value(seg: HistorySegment, tau: float) -> np.ndarray:
    """Segment value at lag tau via nearest-grid lookup or the tail."""
    dt = seg.grid_step
    k = int(round(tau / dt))
    if abs(k * dt - tau) > 1e-9 and dt > ATOM_GRID_LIMIT:
        raise MeasureError(
            f"atom delay {tau} is off-grid and the grid step {dt} is too coarse "
            "for nearest-point lookup"
        )
    if k < seg.n_samples:
        return seg.buffer[seg.n_samples - 1 - k]
    return seg.tail.value_at(-tau)


def integrate_segment(mu: DelayMeasure, seg: HistorySegment, power: int = 1):
    """Integral of the segment against mu.

    power=1 -> the vector integral of seg(alpha) mu(d alpha) (shape (d,));
    power=2 -> the scalar integral of |seg(alpha)|^2 mu(d alpha).

    Atoms are evaluated by nearest-grid lookup on the buffer (tail closed
    form beyond it); densities by trapezoid quadrature on the buffer plus
    the closed-form tail integral.
    """
    if power not in (1, 2):
        raise MeasureError(f"power must be 1 or 2, got {power}")
    alphas = seg.alphas()
    if power == 1:
        out = np.zeros(seg.dim)
        for tau, w in mu.atoms:
            out = out + w * _atom_value(seg, tau)
        for rho, w in mu.densities:
            kernel = (w * rho) * np.exp(rho * alphas)
            out = out + np.trapezoid(kernel[:, None] * seg.buffer, dx=seg.grid_step, axis=0)
            out = out + _tail_density_integral(seg, rho, w, 1)
        return out
    total = 0.0
    sq = np.sum(seg.buffer * seg.buffer, axis=1)
    for tau, w in mu.atoms:
        v = _atom_value(seg, tau)
        total += w * float(v @ v)
    for rho, w in mu.densities:
        kernel = (w * rho) * np.exp(rho * alphas)
        total += float(np.trapezoid(kernel * sq, dx=seg.grid_step))
        total += _tail_density_integral(seg, rho, w, 2)
    return float(total)


def _initial_power_integrals(zeta: HistorySegment, mu: DelayMeasure, p: float):
    """Per-density integrals of |zeta|^p against w*rho*e^{rho*beta} d beta."""
    alphas = zeta.alphas()
    mags_p = np.linalg.norm(zeta.buffer, axis=1) ** p
    out = []
    for rho, w in mu.densities:
        kernel = (w * rho) * np.exp(rho * alphas)
        val = float(np.trapezoid(kernel * mags_p, dx=zeta.grid_step))
        val += _tail_density_integral(zeta, rho, w, p)
        out.append(val)
    return out


def _zeta_lookup_table(zeta: HistorySegment, n_lags: int) -> np.ndarray:
    """|zeta(-j*dt)| for j = 0..n_lags (grid exact, tail beyond buffer)."""
    vals = np.empty(n_lags + 1)
    for j in range(n_lags + 1):
        vals[j] = np.linalg.norm(zeta.value_at(-j * zeta.grid_step))
    return vals


def _cumtrapz(y: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros_like(y)
    if len(y) > 1:
        out[1:] = np.cumsum(0.5 * dx * (y[1:] + y[:-1]))
    return out


@dataclass(frozen=True)
class DelayIntegralCheck:
    """Outcome of the time-integrated delay-average inequality check.

    The asserted right-hand side uses the derivation's coefficients
    (mu^(pq)/pq for the plain variant, mu^(pq)/(pq-lam) for the exponential
    one).  The printed-statement coefficients (mu^(2q)/2q resp.
    mu^(pq)/(2q-lam)) are evaluated and reported alongside but not asserted;
    the two coincide at p = 2.
    """

    holds: bool
    min_slack: float
    min_slack_raw: float
    argmin_time: float
    variant: str
    stated_min_slack: float
    derived_coeff: float
    stated_coeff: float

    def __bool__(self) -> bool:
        return self.holds


def check_delay_integral_bound(times, values, zeta: HistorySegment,
                               mu: DelayMeasure, p: float = 2.0,
                               lam: float | None = None,
                               variant: str = "plain") -> DelayIntegralCheck:
    """Check the cumulative delay-integral bound along a trajectory.

    plain:       int_0^t int |X(s+a)|^p mu(da) ds
                   <= C ||zeta||_q^p + int_0^t |X(s)|^p ds
    exponential: int_0^t e^{lam s} int |X(s+a)|^p mu(da) ds
                   <= C ||zeta||_q^p + mu^(pq) int_0^t e^{lam s} |X(s)|^p ds

    with C the derivation coefficient described on
    :class:`DelayIntegralCheck`.  Both sides share the same trapezoid rule,
    and the check passes when the normalized slack stays above -1e-6.
    """
    q = zeta.q
    if lam is None:
        lam = 0.5 * p * q
    if variant not in ("plain", "exponential"):
        raise MeasureError(f"unknown variant {variant!r}")
    if not lam < p * q:
        raise MeasureError(f"decay rate lam={lam} must be below p*q={p * q}")
    if not mu.in_class(p * q):
        raise MeasureError(f"{mu.name} is not in N_{p * q:g}")
    times = np.asarray(times, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if abs(times[0]) > 1e-12:
        raise MeasureError("trajectory must start at t=0")
    dt = zeta.grid_step
    if len(times) > 1 and not np.allclose(np.diff(times), dt, rtol=0, atol=1e-9 * max(dt, 1.0)):
        raise MeasureError("trajectory grid must match the segment grid step")
    n = len(times)
    mags_p = np.linalg.norm(vals, axis=1) ** p

    # Inner integrals I(t_k) = int |X(t_k + a)|^p mu(da).
    inner = np.zeros(n)
    for tau, w in mu.atoms:
        k = int(round(tau / dt))
        if abs(k * dt - tau) > 1e-9 and dt > ATOM_GRID_LIMIT:
            raise MeasureError(
                f"atom delay {tau} is off-grid and the grid step {dt} is too coarse"
            )
        lagged = np.empty(n)
        if k > 0:
            table = _zeta_lookup_table(zeta, k)
            j = np.arange(min(k, n))
            lagged[:k][: len(j)] = table[k - j] ** p
        lagged[k:] = mags_p[: max(n - k, 0)]
        inner += w * lagged
    init_ints = _initial_power_integrals(zeta, mu, p)
    for (rho, w), i0 in zip(mu.densities, init_ints):
        decay = np.exp(-rho * dt)
        part = np.empty(n)
        d = 0.0
        z = i0
        part[0] = z
        f_prev = w * rho * mags_p[0]
        for k in range(1, n):
            f_k = w * rho * mags_p[k]
            d = decay * d + 0.5 * dt * (decay * f_prev + f_k)
            z *= decay
            part[k] = z + d
            f_prev = f_k
        inner += part

    zeta_norm_p = zeta.norm() ** p
    if variant == "plain":
        lhs = _cumtrapz(inner, dt)
        time_term = _cumtrapz(mags_p, dt)
        derived_coeff = moment(mu, p * q) / (p * q)
        stated_coeff = moment(mu, 2.0 * q) / (2.0 * q)
        rhs = derived_coeff * zeta_norm_p + time_term
        rhs_stated = stated_coeff * zeta_norm_p + time_term
    else:
        expw = np.exp(lam * times)
        lhs = _cumtrapz(expw * inner, dt)
        m_pq = moment(mu, p * q)
        time_term = m_pq * _cumtrapz(expw * mags_p, dt)
        derived_coeff = m_pq / (p * q - lam)
        if 2.0 * q - lam > 0:
            stated_coeff = m_pq / (2.0 * q - lam)
        else:
            stated_coeff = float("inf")
        rhs = derived_coeff * zeta_norm_p + time_term
        rhs_stated = stated_coeff * zeta_norm_p + time_term

    scale = np.maximum(1.0, np.abs(rhs))
    slacks = (rhs - lhs) / scale
    i = int(np.argmin(slacks))
    raw = float(np.min(rhs - lhs))
    stated = float(np.min((rhs_stated - lhs) / np.maximum(1.0, np.abs(rhs_stated))))
    return DelayIntegralCheck(bool(slacks[i] >= -LEMMA_TOL), float(slacks[i]), raw,
                              float(times[i]), variant, stated,
                              float(derived_coeff), float(stated_coeff))
