"""Affine coefficient functionals on history segments, with certificates.

Each functional has the form F(psi) = -a psi(0) + b (integral of psi d mu)
+ c0 with a >= 0.  For this family the one-sided dissipativity and
delay-Lipschitz constants are analytic consequences of Young's and Jensen's
inequalities, so the constants consumed by the bound engine are exact
rather than estimated:

    [psi(0)-phi(0)]' (F(psi)-F(phi))
        <= -(a - |b| beta / 2) |psi(0)-phi(0)|^2
           + (|b| / (2 beta)) int |psi-phi|^2 d mu        (any beta > 0)

    |b int (psi-phi) d mu|^2 <= b^2 int |psi-phi|^2 d mu   (mass-1 Jensen)

The diffusion functional carries no head term (a = 0), which is what makes
its squared increment certifiable by a pure delay integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .measures import DelayMeasure, integrate_segment, moment
from .phase_space import HistorySegment, TailModel, _as_vector

__all__ = [
    "CertificateError",
    "LinearFunctional",
    "DissipativityCertificate",
    "CoefficientSet",
    "TruncatedCoefficientSet",
    "build_linear_coefficients",
    "verify_certificate",
    "verify_global_conditions",
    "truncate",
    "sample_segment",
    "sample_segment_pair",
    "CertificateReport",
    "GlobalConditionsReport",
]


class CertificateError(ValueError):
    """Raised when a parameterization cannot be certified."""


@dataclass(frozen=True)
class LinearFunctional:
    """F(psi) = -a psi(0) + b int psi d mu + c0, mapping C_q -> R^d."""

    a: float
    b: float
    c0: np.ndarray
    measure: DelayMeasure
    dim: int = 1

    def __post_init__(self):
        if self.a < 0:
            raise CertificateError(f"head coefficient must be >= 0, got {self.a}")
        object.__setattr__(self, "c0", _as_vector(self.c0, self.dim))

    def evaluate(self, seg: HistorySegment) -> np.ndarray:
        if seg.dim != self.dim:
            raise CertificateError(
                f"segment dimension {seg.dim} does not match functional dimension {self.dim}"
            )
        out = self.c0.copy()
        if self.a != 0.0:
            out = out - self.a * seg.head
        if self.b != 0.0:
            out = out + self.b * integrate_segment(self.measure, seg, 1)
        return out

    def offset(self) -> np.ndarray:
        """F(0), the value on the zero history (all constants use this)."""
        return self.c0

    def __call__(self, seg: HistorySegment) -> np.ndarray:
        return self.evaluate(seg)


@dataclass(frozen=True)
class DissipativityCertificate:
    """Analytic constants certifying the dissipativity/Lipschitz conditions.

    lam1, lam2 certify the drift; lam3, lam4 the quadratic-variation drift;
    lam5 the diffusion.  The Young split weights record how lam1/lam2 (and
    lam3/lam4) traded off; weight 1 reproduces the plain a - |b|/2 split.
    """

    lam1: float
    lam2: float
    lam3: float
    lam4: float
    lam5: float
    mu1: DelayMeasure
    mu2: DelayMeasure
    mu3: DelayMeasure
    young_weight_g: float = 1.0
    young_weight_h: float = 1.0

    def lambdas(self) -> tuple:
        return (self.lam1, self.lam2, self.lam3, self.lam4, self.lam5)

    def moments(self, order: float) -> tuple:
        return (moment(self.mu1, order), moment(self.mu2, order), moment(self.mu3, order))


@dataclass(frozen=True)
class CoefficientSet:
    """Drift, quadratic-variation drift, and diffusion with a certificate."""

    drift: LinearFunctional
    qv_drift: LinearFunctional
    diffusion: LinearFunctional
    certificate: DissipativityCertificate

    def __post_init__(self):
        if self.diffusion.a != 0.0:
            raise CertificateError(
                "diffusion must not depend on the head value: its squared "
                "increment is certified by a pure delay integral"
            )

    @property
    def dim(self) -> int:
        return self.drift.dim

    def offsets(self) -> tuple:
        return (self.drift.offset(), self.qv_drift.offset(), self.diffusion.offset())

    def offset_sq(self) -> tuple:
        g0, h0, c0 = self.offsets()
        return (float(g0 @ g0), float(h0 @ h0), float(c0 @ c0))

    def evaluate(self, seg: HistorySegment) -> tuple:
        return (self.drift.evaluate(seg), self.qv_drift.evaluate(seg),
                self.diffusion.evaluate(seg))


def build_linear_coefficients(a_g: float, b_g: float, mu_g: DelayMeasure,
                              a_h: float, b_h: float, mu_h: DelayMeasure,
                              b_gamma: float, mu_gamma: DelayMeasure,
                              c0_g=0.0, c0_h=0.0, c0_gamma=0.0, dim: int = 1,
                              young_weight_g: float = 1.0,
                              young_weight_h: float = 1.0) -> CoefficientSet:
    """Build an affine coefficient set together with its certificate.

    The certificate constants are lam1 = a_g - |b_g| beta_g / 2,
    lam2 = |b_g| / (2 beta_g) (same shape for the h pair) and
    lam5 = b_gamma^2.  The drift must stay strictly dissipative
    (lam1 > 0); lam3 may degenerate to 0 but not below.
    """
    if young_weight_g <= 0 or young_weight_h <= 0:
        raise CertificateError("Young split weights must be positive")
    lam1 = a_g - abs(b_g) * young_weight_g / 2.0
    lam2 = abs(b_g) / (2.0 * young_weight_g) if b_g != 0.0 else 0.0
    lam3 = a_h - abs(b_h) * young_weight_h / 2.0
    lam4 = abs(b_h) / (2.0 * young_weight_h) if b_h != 0.0 else 0.0
    lam5 = b_gamma ** 2
    if lam1 <= 0:
        raise CertificateError(
            f"uncertifiable drift: a_g={a_g} with b_g={b_g} (weight "
            f"{young_weight_g}) gives lam1={lam1} <= 0"
        )
    if lam3 < 0:
        raise CertificateError(
            f"uncertifiable qv-drift: a_h={a_h} with b_h={b_h} gives lam3={lam3} < 0"
        )
    cert = DissipativityCertificate(lam1, lam2, lam3, lam4, lam5,
                                    mu_g, mu_h, mu_gamma,
                                    young_weight_g, young_weight_h)
    return CoefficientSet(
        LinearFunctional(a_g, b_g, c0_g, mu_g, dim),
        LinearFunctional(a_h, b_h, c0_h, mu_h, dim),
        LinearFunctional(0.0, b_gamma, c0_gamma, mu_gamma, dim),
        cert,
    )


# ---------------------------------------------------------------------------
# Random segment sampling for numeric verification


def sample_segment(rng: np.random.Generator, q: float, dim: int = 1,
                   grid_step: float = 1e-3, horizon: float = 2.0,
                   norm_cap: float = 10.0, tail_kind: str | None = None,
                   tail_rate: float | None = None) -> HistorySegment:
    """One random segment: constant + exponential component + grid noise.

    The buffer mixes a constant level, a decaying exponential, and white
    grid noise; the tail is drawn from the closed family.  The result is
    rescaled to a norm uniform on (0, norm_cap].
    """
    n = int(round(horizon / grid_step)) + 1
    alphas = -grid_step * np.arange(n - 1, -1, -1)
    c_const = rng.uniform(-1.0, 1.0, size=dim)
    c_exp = rng.uniform(-1.0, 1.0, size=dim)
    r_exp = rng.uniform(0.2, 2.0)
    noise = 0.3 * rng.standard_normal((n, dim))
    buf = c_const[None, :] + c_exp[None, :] * np.exp(r_exp * alphas)[:, None] + noise
    if tail_kind is None:
        tail_kind = rng.choice(["zero", "constant", "exp"])
    if tail_kind == "zero":
        tail = TailModel.zero(dim)
    elif tail_kind == "constant":
        tail = TailModel.constant(rng.uniform(-1.0, 1.0, size=dim), dim)
    else:
        rate = tail_rate if tail_rate is not None else rng.uniform(0.2, 2.0)
        tail = TailModel.exp_decay(rng.uniform(-1.0, 1.0, size=dim), rate, dim)
    seg = HistorySegment(q, grid_step, buf, tail)
    norm = seg.norm()
    if norm > 0:
        seg = seg.scaled(norm_cap * rng.uniform(0.05, 1.0) / norm)
    return seg


def sample_segment_pair(rng: np.random.Generator, q: float, dim: int = 1,
                        grid_step: float = 1e-3, horizon: float = 2.0,
                        norm_cap: float = 10.0, spike_lags: Sequence[float] = ()):
    """A pair (psi, phi) sharing grid and tail family.

    About a quarter of the draws differ by a pure spike at a lag of
    interest (head, a supplied delay, or a random grid point), which is
    what makes the worst-case ratios of the Lipschitz sweeps attainable.
    """
    tail_kind = str(rng.choice(["zero", "constant", "exp"]))
    tail_rate = float(rng.uniform(0.2, 2.0))
    phi = sample_segment(rng, q, dim, grid_step, horizon, norm_cap,
                         tail_kind, tail_rate)
    if rng.random() < 0.25:
        lags = list(spike_lags) + [0.0, float(rng.uniform(0.0, horizon))]
        lag = float(lags[rng.integers(len(lags))])
        k = int(round(lag / grid_step))
        k = min(k, phi.n_samples - 1)
        direction = rng.standard_normal(dim)
        direction /= max(np.linalg.norm(direction), 1e-12)
        buf = phi.buffer.copy()
        buf[phi.n_samples - 1 - k] += rng.uniform(0.5, 5.0) * direction
        psi = HistorySegment(q, grid_step, buf, phi.tail)
    else:
        psi = sample_segment(rng, q, dim, grid_step, horizon, norm_cap,
                             tail_kind, tail_rate)
    return psi, phi


def _verification_horizon(cs: CoefficientSet, q: float) -> float:
    lag = max(cs.certificate.mu1.max_atom_delay(),
              cs.certificate.mu2.max_atom_delay(),
              cs.certificate.mu3.max_atom_delay())
    return max(1.25 * lag, 2.0 / q, 1.0)


def _atom_lags(cs: CoefficientSet) -> tuple:
    lags = []
    for mu in (cs.certificate.mu1, cs.certificate.mu2, cs.certificate.mu3):
        lags.extend(tau for tau, _ in mu.atoms)
    return tuple(lags)


def _quad_mass_excess(mu: DelayMeasure, grid_step: float, horizon: float) -> float:
    """How far the buffer trapezoid + closed tail overshoot unit mass.

    Atoms are exact; only densities carry quadrature error.  This feeds the
    per-trial violation budget: Jensen's inequality is the one step of the
    certificate that discretization can break, by exactly this excess.
    """
    excess = 0.0
    n = int(round(horizon / grid_step)) + 1
    alphas = -grid_step * np.arange(n - 1, -1, -1)
    for rho, w in mu.densities:
        disc = float(np.trapezoid(w * rho * np.exp(rho * alphas), dx=grid_step))
        disc += w * np.exp(-rho * horizon)
        excess += max(0.0, disc - w)
    return excess


@dataclass(frozen=True)
class CertificateReport:
    """Worst violations of the three certified conditions over random pairs."""

    passed: bool
    max_violation: tuple
    max_excess: float
    tolerance: float
    n_trials: int

    def __bool__(self) -> bool:
        return self.passed


def verify_certificate(cs: CoefficientSet, n_trials: int = 1000,
                       seed: int = 0, tolerance: float = 1e-8,
                       grid_step: float = 1e-3, norm_cap: float = 10.0,
                       q: float = 1.0) -> CertificateReport:
    """Numerically stress the certificate on random segment pairs.

    Evaluates LHS - RHS of the three conditions on ``n_trials`` random
    pairs from the parametric family and reports the worst violation per
    condition.  Passing means every violation stays below the tolerance
    plus the per-trial quadrature budget (zero for atom-only measures).
    The conditions themselves do not involve q; it only shapes the
    sampled segments' norms.
    """
    rng = np.random.default_rng(seed)
    cert = cs.certificate
    horizon = _verification_horizon(cs, q)
    lags = _atom_lags(cs)
    excess = (
        _quad_mass_excess(cert.mu1, grid_step, horizon),
        _quad_mass_excess(cert.mu2, grid_step, horizon),
        _quad_mass_excess(cert.mu3, grid_step, horizon),
    )
    worst = [-np.inf, -np.inf, -np.inf]
    worst_excess = -np.inf
    for _ in range(n_trials):
        psi, phi = sample_segment_pair(rng, q, cs.dim, grid_step,
                                       horizon, norm_cap, lags)
        delta = psi - phi
        d0 = psi.head - phi.head
        d0_sq = float(d0 @ d0)
        dg = cs.drift.evaluate(psi) - cs.drift.evaluate(phi)
        dh = cs.qv_drift.evaluate(psi) - cs.qv_drift.evaluate(phi)
        dgam = cs.diffusion.evaluate(psi) - cs.diffusion.evaluate(phi)
        j1 = integrate_segment(cert.mu1, delta, 2)
        j2 = integrate_segment(cert.mu2, delta, 2)
        j3 = integrate_segment(cert.mu3, delta, 2)
        v1 = float(d0 @ dg) - (-cert.lam1 * d0_sq + cert.lam2 * j1)
        v2 = float(d0 @ dh) - (-cert.lam3 * d0_sq + cert.lam4 * j2)
        v3 = float(dgam @ dgam) - cert.lam5 * j3
        budgets = (cert.lam2 * excess[0] * j1,
                   cert.lam4 * excess[1] * j2,
                   cert.lam5 * excess[2] * j3)
        for i, (v, bud) in enumerate(zip((v1, v2, v3), budgets)):
            worst[i] = max(worst[i], v)
            worst_excess = max(worst_excess, v - bud)
    passed = worst_excess <= tolerance
    return CertificateReport(bool(passed), tuple(worst), float(worst_excess),
                             tolerance, n_trials)


@dataclass(frozen=True)
class GlobalConditionsReport:
    """Empirical witnesses for the global Lipschitz and growth conditions."""

    lipschitz_L: float
    growth_K: float
    n_trials: int


def verify_global_conditions(cs: CoefficientSet, n_trials: int = 1000,
                             seed: int = 0, grid_step: float = 1e-3,
                             norm_cap: float = 10.0,
                             q: float = 1.0) -> GlobalConditionsReport:
    """Estimate the smallest L and K witnessing the global conditions.

    L bounds max(|dg|^2, |dh|^2, |dgamma|^2) / ||psi-phi||_q^2 over pairs;
    K bounds max(|g|^2, |h|^2, |gamma|^2) / (1 + ||phi||_q^2) over single
    segments.  Both exist for the affine family.
    """
    rng = np.random.default_rng(seed)
    horizon = _verification_horizon(cs, q)
    lags = _atom_lags(cs)
    L = 0.0
    K = 0.0
    for _ in range(n_trials):
        psi, phi = sample_segment_pair(rng, q, cs.dim, grid_step, horizon,
                                       norm_cap, lags)
        dn = (psi - phi).norm()
        if dn > 1e-9:
            worst = max(float(np.sum(x * x)) for x in (
                cs.drift.evaluate(psi) - cs.drift.evaluate(phi),
                cs.qv_drift.evaluate(psi) - cs.qv_drift.evaluate(phi),
                cs.diffusion.evaluate(psi) - cs.diffusion.evaluate(phi)))
            L = max(L, worst / dn ** 2)
        g, h, gam = cs.evaluate(phi)
        growth = max(float(g @ g), float(h @ h), float(gam @ gam))
        K = max(K, growth / (1.0 + phi.norm() ** 2))
    return GlobalConditionsReport(float(L), float(K), n_trials)


class TruncatedFunctional:
    """Evaluates the inner functional on the segment clipped to an m-ball.

    Identity whenever ||phi||_q <= level; otherwise the argument is rescaled
    to the ball's boundary, (level / ||phi||_q) * phi.
    """

    __slots__ = ("inner", "level")

    def __init__(self, inner: LinearFunctional, level: float):
        if level <= 0:
            raise CertificateError(f"truncation level must be positive, got {level}")
        self.inner = inner
        self.level = float(level)

    @property
    def dim(self) -> int:
        return self.inner.dim

    @property
    def measure(self) -> DelayMeasure:
        return self.inner.measure

    def offset(self) -> np.ndarray:
        return self.inner.offset()

    def evaluate(self, seg: HistorySegment) -> np.ndarray:
        norm = seg.norm()
        if norm <= self.level:
            return self.inner.evaluate(seg)
        return self.inner.evaluate(seg.scaled(self.level / norm))

    __call__ = evaluate


@dataclass(frozen=True)
class TruncatedCoefficientSet:
    """Coefficient set with every functional clipped to the same m-ball."""

    drift: TruncatedFunctional
    qv_drift: TruncatedFunctional
    diffusion: TruncatedFunctional
    certificate: DissipativityCertificate
    level: float
    base: CoefficientSet

    @property
    def dim(self) -> int:
        return self.base.dim

    def offsets(self) -> tuple:
        return self.base.offsets()

    def offset_sq(self) -> tuple:
        return self.base.offset_sq()

    def evaluate(self, seg: HistorySegment) -> tuple:
        return (self.drift.evaluate(seg), self.qv_drift.evaluate(seg),
                self.diffusion.evaluate(seg))


def truncate(cs: CoefficientSet, level: float) -> TruncatedCoefficientSet:
    """Clip all three functionals to the ball ||phi||_q <= level."""
    return TruncatedCoefficientSet(
        TruncatedFunctional(cs.drift, level),
        TruncatedFunctional(cs.qv_drift, level),
        TruncatedFunctional(cs.diffusion, level),
        cs.certificate, float(level), cs,
    )
