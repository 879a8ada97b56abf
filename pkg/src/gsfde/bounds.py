"""Closed-form evaluation of the moment-bound constants and their windows.

Every formula here is evaluated exactly as printed in its source estimate;
nothing is optimized or reconciled.  Inputs are the certificate constants
lam1..lam5, the 2q-order exponential moments of the three delay measures,
the auxiliary constants (k1, k2, k3 = k2^2, the horizon T for T-dependent
constants, and the epsilon triple), and the initial data summaries
||zeta||_q^2 and |X(0)|^2.

The auxiliary k1, k2 are not pinned by the theory (only their existence
is); defaults are k1 = sigma_hi^2 and k2 = 2 sigma_hi, both overridable,
and every report prints the values actually used.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .coefficients import CoefficientSet, DissipativityCertificate

__all__ = [
    "InfeasibleError",
    "InfeasibleEpsilonError",
    "AuxConstants",
    "FeasibilityWindow",
    "feasibility",
    "choose_lambda",
    "lambda_scan",
    "mean_square_constants",
    "pair_convergence_constant",
    "map_bound_constants",
    "map_convergence_constant",
    "growth_constants",
    "nonexplosion_constants",
    "BoundReport",
    "build_report",
]

EPS_SURPLUS_FRACTION = 0.05
LAMBDA_FRACTION = 0.9


class InfeasibleError(ValueError):
    """A strict feasibility condition fails; carries the condition name."""

    def __init__(self, condition: str, message: str):
        super().__init__(message)
        self.condition = condition


class InfeasibleEpsilonError(InfeasibleError):
    """The epsilon triple violates the residual positivity requirement."""


@dataclass(frozen=True)
class AuxConstants:
    """Free constants of the estimates: k1, k2 (k3 = k2^2), horizon, epsilons.

    ``lam`` fixes the decay rate when given; otherwise each theorem uses
    LAMBDA_FRACTION of its own window top.  ``eps/eps1/eps2`` likewise
    default per theorem to EPS_SURPLUS_FRACTION of the surplus left after
    lam is chosen, halved until the residual positivity holds.
    """

    k1: float
    k2: float
    T: float = 1.0
    eps: float | None = None
    eps1: float | None = None
    eps2: float | None = None
    p: float = 2.0
    lam: float | None = None

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise InfeasibleError("aux", f"k1={self.k1}, k2={self.k2} must be positive")
        if self.T <= 0:
            raise InfeasibleError("aux", f"horizon T={self.T} must be positive")
        for name, e in (("eps", self.eps), ("eps1", self.eps1), ("eps2", self.eps2)):
            if e is not None and not (0.0 < e < 1.0):
                raise InfeasibleError("aux", f"{name}={e} must lie in (0,1)")

    @property
    def k3(self) -> float:
        return self.k2 ** 2

    @staticmethod
    def for_band(sigma_hi: float, T: float = 1.0, **kw) -> "AuxConstants":
        """Defaults k1 = sigma_hi^2 and k2 = 2 sigma_hi."""
        return AuxConstants(k1=sigma_hi ** 2, k2=2.0 * sigma_hi, T=T, **kw)


@dataclass(frozen=True)
class FeasibilityWindow:
    """Outcome of one strict feasibility inequality."""

    name: str
    feasible: bool
    surplus: float
    window_top: float
    reason: str = ""

    def require(self) -> "FeasibilityWindow":
        if not self.feasible:
            raise InfeasibleError(self.name, self.reason or
                                  f"{self.name}: condition fails (surplus {self.surplus:g})")
        return self


def _measure_class_check(cert: DissipativityCertificate, q: float) -> str:
    for mu in (cert.mu1, cert.mu2, cert.mu3):
        if not mu.in_class(2.0 * q):
            return (f"measure {mu.name} is not in N_{2 * q:g}: "
                    "some density rate is too slow")
    return ""


def feasibility(cert: DissipativityCertificate, aux: AuxConstants, q: float) -> dict:
    """Evaluate each estimate's strict inequality exactly as printed.

    Returns windows keyed by ``ms_bound`` (shared with pair convergence),
    ``map_bound`` and ``map_convergence``.  The window top is
    min(surplus, 2q); infeasibility carries the violated condition text.
    """
    reason = _measure_class_check(cert, q)
    l1, l2, l3, l4, l5 = cert.lambdas()
    k1, k3 = aux.k1, aux.k3
    if reason:
        out = {}
        for name in ("ms_bound", "map_bound", "map_convergence"):
            out[name] = FeasibilityWindow(name, False, float("nan"), 0.0, reason)
        return out
    m1, m2, m3 = cert.moments(2.0 * q)
    surpluses = {
        "ms_bound": 2 * l1 + 2 * k1 * l3 - 2 * l2 * m1 - 2 * k1 * l4 * m2 - k1 * l5 * m3,
        "map_bound": (2 * l1 - 2 * l2 * m1 - 1 - 2 * k1 * l4 * m2 + 2 * k1 * l3
                      - k1 - 2 * (k1 * m2 + 2 * k3 * m3) * l5),
        "map_convergence": (2 * l1 - 2 * l2 * m1 + 2 * k1 * l3 - 2 * k1 * l4 * m2
                            - (k1 + 2 * k3) * m3 * l5),
    }
    conditions = {
        "ms_bound": ("2*lam1 > 2*lam2*mu1^(2q) + 2*k1*lam4*mu2^(2q)"
                     " + k1*lam5*mu3^(2q) - 2*k1*lam3"),
        "map_bound": ("2*lam1 > 2*lam2*mu1^(2q) + 1 + 2*k1*lam4*mu2^(2q)"
                      " - 2*k1*lam3 + k1 + 2*(k1*mu2^(2q)+2*k3*mu3^(2q))*lam5"),
        "map_convergence": ("2*lam1 > 2*lam2*mu1^(2q) - 2*k1*lam3"
                            " + 2*k1*lam4*mu2^(2q) + (k1+2*k3)*mu3^(2q)*lam5"),
    }
    out = {}
    for name, s in surpluses.items():
        ok = s > 0.0
        top = min(s, 2.0 * q) if ok else 0.0
        why = "" if ok else (f"{name}: {conditions[name]} fails "
                             f"(margin {s:g} <= 0)")
        out[name] = FeasibilityWindow(name, ok, float(s), float(top), why)
    return out


def choose_lambda(window: FeasibilityWindow, aux: AuxConstants, q: float) -> float:
    """Decay rate for one estimate: the configured lam, or 0.9 x window top."""
    window.require()
    if aux.lam is not None:
        if not (0.0 < aux.lam < window.window_top):
            raise InfeasibleError(window.name,
                                  f"lam={aux.lam} outside the window (0, {window.window_top:g})")
        return float(aux.lam)
    return LAMBDA_FRACTION * window.window_top


def lambda_scan(window: FeasibilityWindow, n: int = 10) -> np.ndarray:
    """Evenly spaced candidate decay rates strictly inside the window."""
    window.require()
    return window.window_top * np.arange(1, n + 1) / (n + 1)


def _epsilon_triple(cert, aux: AuxConstants, q: float, lam: float,
                    window: FeasibilityWindow):
    """The epsilon triple plus its residual; auto-shrunk if not supplied."""
    l1, l2, l3, l4, l5 = cert.lambdas()
    m1, m2, m3 = cert.moments(2.0 * q)
    k1 = aux.k1

    def residual(e, e1, e2):
        return (2 * l1 - e - lam - k1 * e1 + 2 * k1 * l3 - 2 * l2 * m1
                - 2 * k1 * l4 * m2 - k1 * l5 * m3 / (1.0 - e2))

    explicit = all(e is not None for e in (aux.eps, aux.eps1, aux.eps2))
    if explicit:
        r = residual(aux.eps, aux.eps1, aux.eps2)
        if r <= 0:
            raise InfeasibleEpsilonError(
                "ms_bound_epsilon",
                f"epsilon triple ({aux.eps}, {aux.eps1}, {aux.eps2}) violates "
                f"residual positivity (residual {r:g})")
        return aux.eps, aux.eps1, aux.eps2, r
    e = EPS_SURPLUS_FRACTION * max(window.window_top - lam, 0.0)
    e = min(e, 0.5) if e > 0 else 1e-4
    for _ in range(80):
        r = residual(e, e, e)
        if r > 0 and e < 1.0:
            return e, e, e, r
        e *= 0.5
    raise InfeasibleEpsilonError(
        "ms_bound_epsilon",
        "no epsilon triple satisfies residual positivity for "
        f"lam={lam:g} (window top {window.window_top:g})")


def mean_square_constants(cert: DissipativityCertificate, aux: AuxConstants,
                          q: float, zeta_norm_sq: float, x0_sq: float,
                          offsets_sq: tuple, window: FeasibilityWindow,
                          lam: float | None = None):
    """The (K4, K5) pair of the second-moment estimate K4 + K5 e^{-lam t}.

    K4 = (1/lam)((1/eps)|g(0)|^2 + (k1/eps1)|h(0)|^2 + (k1/eps2)|gamma(0)|^2)
    K5 = E|X(0)|^2 + [2 lam2 mu1 + 2 k1 lam4 mu2] / (2q-lam) * E||zeta||^2
         + k1 lam5 mu3 / ((2q-lam)(1-eps2)) * E||zeta||^2
    """
    if lam is None:
        lam = choose_lambda(window, aux, q)
    if not lam < 2.0 * q:
        raise InfeasibleError("ms_bound", f"lam={lam} >= 2q={2 * q}")
    e, e1, e2, _ = _epsilon_triple(cert, aux, q, lam, window)
    g0, h0, c0 = offsets_sq
    k1 = aux.k1
    K4 = (1.0 / lam) * (g0 / e + k1 * h0 / e1 + k1 * c0 / e2)
    _, l2, _, l4, l5 = cert.lambdas()
    m1, m2, m3 = cert.moments(2.0 * q)
    K5 = (x0_sq
          + (2 * l2 * m1 / (2 * q - lam)) * zeta_norm_sq
          + (2 * k1 * l4 * m2 / (2 * q - lam)) * zeta_norm_sq
          + (k1 * l5 * m3 / ((2 * q - lam) * (1.0 - e2))) * zeta_norm_sq)
    return float(K4), float(K5), float(lam), (float(e), float(e1), float(e2))


def pair_convergence_constant(cert: DissipativityCertificate, aux: AuxConstants,
                              q: float, lam: float) -> float:
    """K6 = 1 + (2 lam2 mu1 + 2 k1 lam4 mu2 + k1 lam5 mu3) / (2q - lam)."""
    if not lam < 2.0 * q:
        raise InfeasibleError("pair_convergence", f"lam={lam} >= 2q={2 * q}")
    _, l2, _, l4, l5 = cert.lambdas()
    m1, m2, m3 = cert.moments(2.0 * q)
    k1 = aux.k1
    return float(1.0 + (2 * l2 * m1 + 2 * k1 * l4 * m2 + k1 * l5 * m3) / (2 * q - lam))


def map_bound_constants(cert: DissipativityCertificate, aux: AuxConstants,
                        q: float, offsets_sq: tuple, lam: float):
    """K7 = (2/lam)(|g0|^2 + k1 |h0|^2 + 2(k1+2k3)|gamma0|^2);
    K8 = 3 + (4/(2q-lam))[lam2 mu1 + k1(lam4+lam5) mu2 + 2 k3 lam5 mu3]."""
    if not lam < 2.0 * q:
        raise InfeasibleError("map_bound", f"lam={lam} >= 2q={2 * q}")
    g0, h0, c0 = offsets_sq
    k1, k3 = aux.k1, aux.k3
    K7 = (2.0 / lam) * (g0 + k1 * h0 + 2.0 * (k1 + 2.0 * k3) * c0)
    _, l2, _, l4, l5 = cert.lambdas()
    m1, m2, m3 = cert.moments(2.0 * q)
    K8 = 3.0 + (4.0 / (2 * q - lam)) * (l2 * m1 + k1 * (l4 + l5) * m2
                                        + 2.0 * k3 * l5 * m3)
    return float(K7), float(K8)


def map_convergence_constant(cert: DissipativityCertificate, aux: AuxConstants,
                             q: float, lam: float) -> float:
    """K9 = 1 + (4/(2q-lam))[lam2 mu1 + k1(2 lam4 mu2 + lam5 mu3) + k3 lam5 mu3]."""
    if not lam < 2.0 * q:
        raise InfeasibleError("map_convergence", f"lam={lam} >= 2q={2 * q}")
    _, l2, _, l4, l5 = cert.lambdas()
    m1, m2, m3 = cert.moments(2.0 * q)
    k1, k3 = aux.k1, aux.k3
    K9 = 1.0 + (4.0 / (2 * q - lam)) * (l2 * m1 + k1 * (2 * l4 * m2 + l5 * m3)
                                        + k3 * l5 * m3)
    return float(K9)


def growth_constants(cert: DissipativityCertificate, aux: AuxConstants,
                     q: float, zeta_norm_sq: float, offsets_sq: tuple):
    """(Khat, L1, L2, M) of the running-sup growth and exponential estimates.

    Khat = 2[|g0|^2 + k1(|h0|^2 + 2|c0|^2) + 4 k3 |c0|^2] T
    L1   = Khat + (2/q)[q + lam2 mu1 + k1(lam5 mu3 + mu2) + 2 k3 lam5 mu3] E||zeta||^2
    L2   = 2[2 lam2 - 2 lam1 + 1 + k1(2 lam5 - 2 lam3 + 3) + 4 k3 lam5]
    M    = L2 / 2 identically.
    """
    g0, h0, c0 = offsets_sq
    k1, k3 = aux.k1, aux.k3
    Khat = 2.0 * (g0 + k1 * (h0 + 2.0 * c0) + 4.0 * k3 * c0) * aux.T
    l1, l2, l3, l4, l5 = cert.lambdas()
    m1, m2, m3 = cert.moments(2.0 * q)
    L1 = Khat + (2.0 / q) * (q + l2 * m1 + k1 * (l5 * m3 + m2)
                             + 2.0 * k3 * l5 * m3) * zeta_norm_sq
    M = 2 * l2 - 2 * l1 + 1.0 + k1 * (2 * l5 - 2 * l3 + 3.0) + 4.0 * k3 * l5
    L2 = 2.0 * M
    assert L2 == 2.0 * M
    return float(Khat), float(L1), float(L2), float(M)


def nonexplosion_constants(cert: DissipativityCertificate, aux: AuxConstants,
                           q: float, zeta_norm_sq: float, x0_sq: float,
                           offsets_sq: tuple):
    """(K1, K2, K3) of the exit-capacity bound (K2/m^2) e^{K3 T}.

    K1 = E|X(0)|^2 + [|g0|^2 + k1 |h0|^2 + 2 k1 |c0|^2] T
    K2 = K1 + (1/q)[lam2 mu1 + k1 lam4 mu2 + k1 lam5 mu3] E||zeta||^2
    K3 = k1 + 1 - 2 lam1 + 2 lam2 - 2 k1 lam3 + 2 k1 lam4 + 2 k1 lam5
    """
    g0, h0, c0 = offsets_sq
    k1 = aux.k1
    K1 = x0_sq + (g0 + k1 * h0 + 2.0 * k1 * c0) * aux.T
    l1, l2, l3, l4, l5 = cert.lambdas()
    m1, m2, m3 = cert.moments(2.0 * q)
    K2 = K1 + (1.0 / q) * (l2 * m1 + k1 * l4 * m2 + k1 * l5 * m3) * zeta_norm_sq
    K3 = k1 + 1.0 - 2 * l1 + 2 * l2 - 2 * k1 * l3 + 2 * k1 * l4 + 2 * k1 * l5
    return float(K1), float(K2), float(K3)


def exit_capacity_bound(K2: float, K3: float, m: float, T: float) -> float:
    """(1/m^2) K2 e^{K3 T}, the printed non-explosion capacity bound."""
    return K2 * np.exp(K3 * T) / m ** 2


@dataclass(frozen=True)
class BoundReport:
    """Every constant, feasibility flag, and chosen decay rate in one place."""

    q: float
    aux: AuxConstants
    lambdas: tuple
    moments_2q: tuple
    offsets_sq: tuple
    zeta_norm_sq: float
    x0_sq: float
    windows: dict
    chosen_lam: dict
    K1: float = float("nan")
    K2: float = float("nan")
    K3: float = float("nan")
    K4: float = float("nan")
    K5: float = float("nan")
    K6: float = float("nan")
    K7: float = float("nan")
    K8: float = float("nan")
    K9: float = float("nan")
    Khat: float = float("nan")
    L1: float = float("nan")
    L2: float = float("nan")
    M: float = float("nan")
    eps_triple: tuple = (float("nan"),) * 3

    def to_text(self) -> str:
        l1, l2, l3, l4, l5 = self.lambdas
        m1, m2, m3 = self.moments_2q
        lines = [
            "bound report",
            "============",
            f"q = {self.q:g}   p = {self.aux.p:g}",
            (f"certificate: lam1={l1:.6g} lam2={l2:.6g} lam3={l3:.6g} "
             f"lam4={l4:.6g} lam5={l5:.6g}"),
            f"moments (order 2q): mu1={m1:.6g} mu2={m2:.6g} mu3={m3:.6g}",
            (f"aux: k1={self.aux.k1:g} k2={self.aux.k2:g} k3={self.aux.k3:g} "
             f"T={self.aux.T:g}"),
            (f"initial data: ||zeta||^2={self.zeta_norm_sq:.6g} "
             f"|X(0)|^2={self.x0_sq:.6g} (head of zeta; the two moments are "
             "redundant inputs by construction)"),
            "",
        ]
        for name, w in self.windows.items():
            state = "feasible" if w.feasible else "INFEASIBLE"
            lam = self.chosen_lam.get(name)
            lam_txt = f", lam={lam:.6g}" if lam is not None else ""
            lines.append(f"{name:16s} {state:10s} surplus={w.surplus:.6g} "
                         f"window=(0, {w.window_top:.6g}){lam_txt}")
            if not w.feasible:
                lines.append(f"    violated: {w.reason}")
        lines += [
            "",
            f"K1={self.K1:.6g}  K2={self.K2:.6g}  K3={self.K3:.6g}",
            f"K4={self.K4:.6g}  K5={self.K5:.6g}  (eps={self.eps_triple[0]:.3g}, "
            f"eps1={self.eps_triple[1]:.3g}, eps2={self.eps_triple[2]:.3g})",
            f"K6={self.K6:.6g}",
            f"K7={self.K7:.6g}  K8={self.K8:.6g}",
            f"K9={self.K9:.6g}  (stated with a hatted decay symbol; evaluated "
            "with the same lam as its window)",
            f"Khat={self.Khat:.6g}  L1={self.L1:.6g}  L2={self.L2:.6g}  "
            f"M={self.M:.6g}  (L2 = 2M identically)",
        ]
        return "\n".join(lines)


def build_report(cs: CoefficientSet, aux: AuxConstants, q: float,
                 zeta_norm_sq: float, x0_sq: float) -> BoundReport:
    """Assemble every constant for one parameterization.

    Constants whose window is infeasible stay NaN; their flags and violated
    conditions are still reported.
    """
    cert = cs.certificate
    offsets_sq = cs.offset_sq()
    windows = feasibility(cert, aux, q)
    chosen = {}
    vals = {}
    K1, K2, K3 = nonexplosion_constants(cert, aux, q, zeta_norm_sq, x0_sq, offsets_sq)
    Khat, L1, L2, M = growth_constants(cert, aux, q, zeta_norm_sq, offsets_sq)
    vals.update(K1=K1, K2=K2, K3=K3, Khat=Khat, L1=L1, L2=L2, M=M)
    eps_triple = (float("nan"),) * 3
    if windows["ms_bound"].feasible:
        K4, K5, lam, eps_triple = mean_square_constants(
            cert, aux, q, zeta_norm_sq, x0_sq, offsets_sq, windows["ms_bound"])
        K6 = pair_convergence_constant(cert, aux, q, lam)
        chosen["ms_bound"] = lam
        chosen["pair_convergence"] = lam
        vals.update(K4=K4, K5=K5, K6=K6)
    if windows["map_bound"].feasible:
        lam = choose_lambda(windows["map_bound"], aux, q)
        K7, K8 = map_bound_constants(cert, aux, q, offsets_sq, lam)
        chosen["map_bound"] = lam
        vals.update(K7=K7, K8=K8)
    if windows["map_convergence"].feasible:
        lam = choose_lambda(windows["map_convergence"], aux, q)
        K9 = map_convergence_constant(cert, aux, q, lam)
        chosen["map_convergence"] = lam
        vals.update(K9=K9)
    return BoundReport(q=q, aux=aux, lambdas=cert.lambdas(),
                       moments_2q=cert.moments(2.0 * q), offsets_sq=offsets_sq,
                       zeta_norm_sq=zeta_norm_sq, x0_sq=x0_sq,
                       windows=windows, chosen_lam=chosen,
                       eps_triple=eps_triple, **vals)
