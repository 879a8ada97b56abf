"""Scalar G-Brownian motion realized as a family of volatility scenarios.

Uncertain volatility is represented by adapted controls sigma(t) taking
values in a band [sigma_lo, sigma_hi]; each control induces a classical
diffusion measure, and the sublinear expectation / capacity are estimated
as suprema of Monte Carlo means over a finite scenario family.  A finite
family yields a certified lower estimate of the true supremum, which is the
conservative direction when checking upper bounds.

Reproducibility contract: one Philox stream per (scenario, path) pair,
derived from the master seed by a splittable counter scheme, so results are
bit-identical for a fixed seed regardless of batching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ScenarioError",
    "VolatilityBand",
    "VolatilityControl",
    "Scenario",
    "GPath",
    "scenario_grid",
    "path_rng",
    "sample_path",
    "sublinear_expectation",
    "capacity_estimate",
    "check_markov_inequality",
    "SublinearEstimate",
    "CapacityEstimate",
    "MarkovCheck",
]


class ScenarioError(ValueError):
    """Raised for invalid bands, controls, or sampling requests."""


@dataclass(frozen=True)
class VolatilityBand:
    """Volatility uncertainty interval [sigma_lo, sigma_hi]."""

    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        if not (0.0 <= self.sigma_lo <= self.sigma_hi):
            raise ScenarioError(
                f"need 0 <= sigma_lo <= sigma_hi, got [{self.sigma_lo}, {self.sigma_hi}]"
            )

    def contains(self, sigma) -> bool:
        s = np.asarray(sigma)
        return bool(np.all(s >= self.sigma_lo - 1e-15) and np.all(s <= self.sigma_hi + 1e-15))


@dataclass(frozen=True)
class VolatilityControl:
    """Per-step volatility rule; every produced value lies in the band.

    kinds:
      constant  -- sigma_n = value
      periodic  -- cycles through ``values``, switching every ``period`` time
      threshold -- sigma_n = above if |state| > threshold else below
      random    -- per-step uniform draw in the band (seed-fixed stream)
    """

    kind: str = "constant"
    value: float = 0.0
    values: tuple = ()
    period: float = 1.0
    threshold: float = 1.0
    below: float = 0.0
    above: float = 0.0

    def validate(self, band: VolatilityBand) -> None:
        if self.kind == "constant":
            ok = band.contains(self.value)
        elif self.kind == "periodic":
            ok = len(self.values) > 0 and band.contains(np.asarray(self.values))
            if self.period <= 0:
                raise ScenarioError("periodic control needs a positive period")
        elif self.kind == "threshold":
            ok = band.contains(self.below) and band.contains(self.above)
        elif self.kind == "random":
            ok = True
        else:
            raise ScenarioError(f"unknown control kind {self.kind!r}")
        if not ok:
            raise ScenarioError(f"control {self} leaves the band {band}")

    @property
    def state_dependent(self) -> bool:
        return self.kind == "threshold"

    @property
    def needs_draws(self) -> bool:
        return self.kind == "random"

    def sigma(self, step: int, dt: float, band: VolatilityBand,
              state_mag=None, draws=None):
        """Volatility for one step; vectorized over paths via state/draws."""
        if self.kind == "constant":
            return self.value
        if self.kind == "periodic":
            idx = int(step * dt / self.period) % len(self.values)
            return self.values[idx]
        if self.kind == "threshold":
            return np.where(np.asarray(state_mag) > self.threshold, self.above, self.below)
        # random: draws are U(0,1) from the control stream
        return band.sigma_lo + (band.sigma_hi - band.sigma_lo) * draws


@dataclass(frozen=True)
class Scenario:
    """One admissible probability measure: a mesh plus a volatility control."""

    name: str
    band: VolatilityBand
    dt: float
    control: VolatilityControl

    def __post_init__(self):
        if self.dt <= 0:
            raise ScenarioError(f"mesh step must be positive, got {self.dt}")
        self.control.validate(self.band)

    @staticmethod
    def constant(sigma: float, band: VolatilityBand, dt: float,
                 name: str | None = None) -> "Scenario":
        ctl = VolatilityControl(kind="constant", value=float(sigma))
        return Scenario(name or f"const-{sigma:g}", band, dt, ctl)


def scenario_grid(band: VolatilityBand, dt: float, levels: int = 5) -> tuple:
    """Constant-volatility scenarios on an evenly spaced grid over the band."""
    if levels < 1:
        raise ScenarioError("need at least one grid level")
    if levels == 1 or band.sigma_hi == band.sigma_lo:
        sigmas = [band.sigma_hi]
    else:
        sigmas = list(np.linspace(band.sigma_lo, band.sigma_hi, levels))
    return tuple(Scenario.constant(s, band, dt) for s in sigmas)


def path_rng(seed: int, scenario_index: int = 0, path_index: int = 0,
             stream: int = 0) -> np.random.Generator:
    """Philox generator for one (scenario, path) pair under a master seed."""
    ss = np.random.SeedSequence(int(seed),
                                spawn_key=(int(scenario_index), int(path_index), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GPath:
    """One sampled path of (B, <B>) under a scenario.

    increments hold Delta B_n = sigma_n sqrt(dt) xi_n and the quadratic
    variation increments sigma_n^2 dt; B and qv are the cumulative processes
    with B(0) = <B>(0) = 0.
    """

    dt: float
    sigmas: np.ndarray
    increments: np.ndarray
    qv_increments: np.ndarray
    B: np.ndarray
    qv: np.ndarray
    scenario_name: str = ""
    seed: int | None = None

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.B))

    def value(self, t: float) -> float:
        return float(self.B[int(round(t / self.dt))])

    def qv_value(self, t: float) -> float:
        return float(self.qv[int(round(t / self.dt))])

    def band_violation(self, band: VolatilityBand) -> float:
        """Worst violation of sigma_lo^2 dt <= Delta<B> <= sigma_hi^2 dt (0 if none)."""
        lo = band.sigma_lo ** 2 * self.dt
        hi = band.sigma_hi ** 2 * self.dt
        return float(max(np.max(lo - self.qv_increments, initial=0.0),
                         np.max(self.qv_increments - hi, initial=0.0)))


def _n_steps(horizon: float, dt: float) -> int:
    n = round(horizon / dt)
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ScenarioError(f"mesh step {dt} does not divide the horizon {horizon}")
    return int(n)


def sample_path(scenario: Scenario, horizon: float, seed: int,
                scenario_index: int = 0, path_index: int = 0) -> GPath:
    """Sample one (B, <B>) path on [0, horizon] under the scenario.

    Deterministic in (scenario, horizon, seed, indices).  The per-step
    conditional increment variance is sigma_n^2 dt, always inside the band.
    """
    n = _n_steps(horizon, scenario.dt)
    rng = path_rng(seed, scenario_index, path_index, stream=0)
    xi = rng.standard_normal(n)
    draws = None
    if scenario.control.needs_draws:
        draws = path_rng(seed, scenario_index, path_index, stream=1).random(n)
    ctl = scenario.control
    if ctl.state_dependent:
        sigmas = np.empty(n)
        b = 0.0
        for k in range(n):
            s = float(ctl.sigma(k, scenario.dt, scenario.band, state_mag=abs(b)))
            sigmas[k] = s
            b += s * np.sqrt(scenario.dt) * xi[k]
    else:
        if ctl.kind == "constant":
            sigmas = np.full(n, ctl.value)
        elif ctl.kind == "periodic":
            idx = (np.arange(n) * scenario.dt / ctl.period).astype(int) % len(ctl.values)
            sigmas = np.asarray(ctl.values, dtype=float)[idx]
        else:
            sigmas = ctl.sigma(0, scenario.dt, scenario.band, draws=draws)
    dB = sigmas * np.sqrt(scenario.dt) * xi
    dqv = sigmas ** 2 * scenario.dt
    B = np.concatenate([[0.0], np.cumsum(dB)])
    qv = np.concatenate([[0.0], np.cumsum(dqv)])
    return GPath(scenario.dt, sigmas, dB, dqv, B, qv, scenario.name, seed)


@dataclass(frozen=True)
class SublinearEstimate:
    """Scenario-sup Monte Carlo estimate of a sublinear expectation."""

    estimate: float
    se: float
    scenario_names: tuple
    means: np.ndarray
    ses: np.ndarray
    argmax: int
    n_paths: int

    def __float__(self) -> float:
        return self.estimate


def _scenario_means(functional: Callable[[GPath], float], scenarios: Sequence[Scenario],
                    horizon: float, n_paths: int, seed: int):
    means = np.empty(len(scenarios))
    ses = np.empty(len(scenarios))
    for si, sc in enumerate(scenarios):
        vals = np.empty(n_paths)
        for pi in range(n_paths):
            vals[pi] = functional(sample_path(sc, horizon, seed, si, pi))
        means[si] = vals.mean()
        ses[si] = vals.std(ddof=1) / np.sqrt(n_paths)
    return means, ses


def sublinear_expectation(functional: Callable[[GPath], float],
                          scenarios: Sequence[Scenario], horizon: float,
                          n_paths: int, seed: int) -> SublinearEstimate:
    """Max over scenarios of the Monte Carlo mean of a path functional.

    A finite scenario family makes this a lower estimate of the true
    sublinear expectation; the per-scenario breakdown is reported so the
    attaining scenario is visible.
    """
    if len(scenarios) == 0:
        raise ScenarioError("scenario set must be non-empty")
    if n_paths < 2:
        raise ScenarioError(f"insufficient sample: n_paths={n_paths} < 2")
    means, ses = _scenario_means(functional, scenarios, horizon, n_paths, seed)
    k = int(np.argmax(means))
    return SublinearEstimate(float(means[k]), float(ses[k]),
                             tuple(s.name for s in scenarios), means, ses, k, n_paths)


@dataclass(frozen=True)
class CapacityEstimate:
    """Scenario-sup empirical frequency of a path event."""

    estimate: float
    se: float
    scenario_names: tuple
    freqs: np.ndarray
    ses: np.ndarray
    argmax: int
    n_paths: int

    def __float__(self) -> float:
        return self.estimate


def capacity_estimate(event: Callable[[GPath], bool], scenarios: Sequence[Scenario],
                      horizon: float, n_paths: int, seed: int) -> CapacityEstimate:
    """Max over scenarios of the empirical probability of a path event."""
    if len(scenarios) == 0:
        raise ScenarioError("scenario set must be non-empty")
    if n_paths < 2:
        raise ScenarioError(f"insufficient sample: n_paths={n_paths} < 2")
    freqs = np.empty(len(scenarios))
    ses = np.empty(len(scenarios))
    for si, sc in enumerate(scenarios):
        hits = 0
        for pi in range(n_paths):
            hits += bool(event(sample_path(sc, horizon, seed, si, pi)))
        p = hits / n_paths
        freqs[si] = p
        ses[si] = np.sqrt(max(p * (1.0 - p), 0.0) / n_paths)
    k = int(np.argmax(freqs))
    return CapacityEstimate(float(freqs[k]), float(ses[k]),
                            tuple(s.name for s in scenarios), freqs, ses, k, n_paths)


@dataclass(frozen=True)
class MarkovCheck:
    """Capacity-vs-moment inequality check, in the printed delta form.

    ``bound`` is E|X|^p / delta as printed; ``bound_delta_p`` is the
    E|X|^p / delta^p variant, reported for comparison but not asserted.
    """

    holds: bool
    slack: float
    capacity: float
    moment_estimate: float
    bound: float
    bound_delta_p: float
    combined_se: float

    def __bool__(self) -> bool:
        return self.holds


def check_markov_inequality(variable: Callable[[GPath], float], p: float, delta: float,
                            scenarios: Sequence[Scenario], horizon: float,
                            n_paths: int, seed: int) -> MarkovCheck:
    """Verify capacity(|X| > delta) <= E|X|^p / delta + 3 SE.

    The same seed drives both estimates so the comparison is between
    coupled estimators.
    """
    if delta <= 0:
        raise ScenarioError(f"delta must be positive, got {delta}")
    cap = capacity_estimate(lambda path: abs(variable(path)) > delta,
                            scenarios, horizon, n_paths, seed)
    mom = sublinear_expectation(lambda path: abs(variable(path)) ** p,
                                scenarios, horizon, n_paths, seed)
    bound = mom.estimate / delta
    bound_p = mom.estimate / delta ** p
    combined = cap.se + mom.se / delta
    slack = bound + 3.0 * combined - cap.estimate
    return MarkovCheck(bool(slack >= 0.0), float(slack), cap.estimate,
                       mom.estimate, float(bound), float(bound_p), float(combined))
