"""Experiment configuration: YAML schema, validation, object builders.

Sections: ``space``, ``measures``, ``coefficients``, ``scenarios``,
``aux_constants``, ``initial_data``, ``experiments`` plus a top-level
``seed``.  Validation errors name the offending section/field.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from .bounds import AuxConstants, BoundReport, build_report
from .coefficients import CoefficientSet, build_linear_coefficients
from .gbm import Scenario, VolatilityBand, VolatilityControl, scenario_grid
from .integrator import SimConfig
from .measures import DelayMeasure
from .phase_space import HistorySegment, from_initial_data

__all__ = ["ConfigError", "RunSetup", "load_config", "load_setup", "bundled_config_path"]


class ConfigError(ValueError):
    """Configuration problem; the message names the offending field."""


def _get(d: dict, key: str, path: str, default=None, required: bool = False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}: missing required field '{key}'")
        return default
    return d[key]


def _number(d: dict, key: str, path: str, default=None, required: bool = False):
    v = _get(d, key, path, default, required)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    return float(v)


def bundled_config_path(name: str = "default.yaml") -> Path:
    return Path(importlib.resources.files("gsfde").joinpath("configs", name))


def load_config(path=None) -> dict:
    """Read a YAML config (the bundled default when path is None)."""
    p = Path(path) if path is not None else bundled_config_path()
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    with open(p) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"{p}: YAML parse error: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return raw


def _build_measure(name: str, spec: dict) -> DelayMeasure:
    path = f"measures.{name}"
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected a mapping with atoms/densities")
    atoms = []
    for i, a in enumerate(_get(spec, "atoms", path, [])):
        atoms.append((_number(a, "tau", f"{path}.atoms[{i}]", required=True),
                      _number(a, "w", f"{path}.atoms[{i}]", required=True)))
    densities = []
    for i, dns in enumerate(_get(spec, "densities", path, [])):
        densities.append((_number(dns, "rho", f"{path}.densities[{i}]", required=True),
                          _number(dns, "w", f"{path}.densities[{i}]", required=True)))
    try:
        return DelayMeasure(tuple(atoms), tuple(densities), name=name)
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from None


def _build_scenarios(spec: dict, dt: float):
    path = "scenarios"
    lo = _number(spec, "sigma_lo", path, required=True)
    hi = _number(spec, "sigma_hi", path, required=True)
    try:
        band = VolatilityBand(lo, hi)
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from None
    levels = int(_number(spec, "grid_levels", path, 5))
    scenarios = list(scenario_grid(band, dt, levels))
    for i, extra in enumerate(_get(spec, "extra", path, [])):
        p = f"{path}.extra[{i}]"
        kind = _get(extra, "kind", p, required=True)
        try:
            if kind == "periodic":
                ctl = VolatilityControl(kind="periodic",
                                        values=tuple(extra.get("values", (lo, hi))),
                                        period=float(extra.get("period", 1.0)))
            elif kind == "threshold":
                ctl = VolatilityControl(kind="threshold",
                                        threshold=float(extra.get("threshold", 1.0)),
                                        below=float(extra.get("below", lo)),
                                        above=float(extra.get("above", hi)))
            elif kind == "random":
                ctl = VolatilityControl(kind="random")
            elif kind == "constant":
                ctl = VolatilityControl(kind="constant",
                                        value=float(extra.get("value", hi)))
            else:
                raise ConfigError(f"{p}.kind: unknown control kind {kind!r}")
            scenarios.append(Scenario(extra.get("name", f"{kind}-{i}"), band, dt, ctl))
        except ValueError as err:
            raise ConfigError(f"{p}: {err}") from None
    return band, tuple(scenarios)


_EXPERIMENT_NAMES = ("ms_bound", "pair_convergence", "map_bound", "map_convergence",
                     "l2_estimate", "lyapunov", "markov", "lemmas", "truncation",
                     "nonexplosion")


@dataclass
class RunSetup:
    """All objects one experiment run needs, built from a config mapping."""

    raw: dict
    seed: int
    dim: int
    q: float
    dt: float
    measures: dict
    coefficients: CoefficientSet
    band: VolatilityBand
    scenarios: tuple
    aux: AuxConstants
    zeta_spec: dict
    xi_spec: dict
    checkpoints: tuple
    n_paths: int
    experiments: dict

    @cached_property
    def bound_report(self) -> BoundReport:
        zeta = self.zeta_segment()
        x0 = zeta.head
        return build_report(self.coefficients, self.aux, self.q,
                            zeta.norm() ** 2, float(x0 @ x0))

    def zeta_segment(self) -> HistorySegment:
        return self.sim_config(self.dt).build_segment(self.zeta_spec)

    def xi_segment(self) -> HistorySegment:
        return self.sim_config(self.dt).build_segment(self.xi_spec)

    def sim_config(self, horizon: float, exit_level=None, stride: int = 1) -> SimConfig:
        return SimConfig(horizon=horizon, dt=self.dt, coefficients=self.coefficients,
                         initial_data=self.zeta_spec, q=self.q, dim=self.dim,
                         exit_level=exit_level, record_stride=stride)

    def experiment(self, name: str) -> dict:
        if name not in _EXPERIMENT_NAMES:
            raise ConfigError(f"experiments.{name}: unknown experiment")
        return self.experiments.get(name, {})

    def enabled(self, name: str) -> bool:
        spec = self.experiment(name)
        return bool(spec.get("enabled", True))

    def opt(self, name: str, key: str, default):
        v = self.experiment(name).get(key, default)
        return v


def load_setup(path=None, seed=None, n_paths=None) -> RunSetup:
    """Parse and validate a config file into a ready-to-run setup."""
    raw = load_config(path)
    space = _get(raw, "space", "config", {}, required=True)
    dim = int(_number(space, "dim", "space", 1))
    q = _number(space, "q", "space", required=True)
    dt = _number(space, "dt", "space", required=True)
    if q <= 0 or dt <= 0:
        raise ConfigError("space: q and dt must be positive")

    measures_spec = _get(raw, "measures", "config", {}, required=True)
    measures = {name: _build_measure(name, spec) for name, spec in measures_spec.items()}

    co = _get(raw, "coefficients", "config", {}, required=True)

    def functional(section: str, need_a: bool):
        spec = _get(co, section, "coefficients", {}, required=True)
        path = f"coefficients.{section}"
        mname = _get(spec, "measure", path, required=True)
        if mname not in measures:
            raise ConfigError(f"{path}.measure: unknown measure {mname!r}")
        a = _number(spec, "a", path, 0.0) if need_a else 0.0
        b = _number(spec, "b", path, 0.0)
        c0 = _get(spec, "c0", path, 0.0)
        w = _number(spec, "young_weight", path, 1.0)
        return a, b, c0, measures[mname], w

    a_g, b_g, c0_g, mu_g, w_g = functional("drift", True)
    a_h, b_h, c0_h, mu_h, w_h = functional("qv_drift", True)
    _, b_gam, c0_gam, mu_gam, _ = functional("diffusion", False)
    try:
        coefficients = build_linear_coefficients(
            a_g, b_g, mu_g, a_h, b_h, mu_h, b_gam, mu_gam,
            c0_g=c0_g, c0_h=c0_h, c0_gamma=c0_gam, dim=dim,
            young_weight_g=w_g, young_weight_h=w_h)
    except ValueError as err:
        raise ConfigError(f"coefficients: {err}") from None

    band, scenarios = _build_scenarios(_get(raw, "scenarios", "config", {}, required=True), dt)

    aux_spec = _get(raw, "aux_constants", "config", {})
    exps = _get(raw, "experiments", "config", {})
    checkpoints = tuple(_get(exps, "checkpoints", "experiments", (0.5, 1.0, 2.0, 5.0, 10.0)))
    horizon_max = max(max(checkpoints),
                      float(_get(exps, "lyapunov", "experiments", {}).get("horizon", 20.0)))
    k1 = _number(aux_spec, "k1", "aux_constants")
    k2 = _number(aux_spec, "k2", "aux_constants")
    try:
        aux = AuxConstants(
            k1=k1 if k1 is not None else band.sigma_hi ** 2,
            k2=k2 if k2 is not None else 2.0 * band.sigma_hi,
            T=horizon_max,
            eps=_number(aux_spec, "eps", "aux_constants"),
            eps1=_number(aux_spec, "eps1", "aux_constants"),
            eps2=_number(aux_spec, "eps2", "aux_constants"),
            lam=_number(aux_spec, "lambda", "aux_constants"),
        )
    except ValueError as err:
        raise ConfigError(f"aux_constants: {err}") from None

    init = _get(raw, "initial_data", "config", {}, required=True)
    zeta_spec = _get(init, "zeta", "initial_data", required=True)
    xi_spec = _get(init, "xi", "initial_data", {"kind": "constant", "value": 0.0})

    exp_map = {}
    for name in _EXPERIMENT_NAMES:
        spec = _get(exps, name, "experiments", {})
        if spec is None:
            spec = {}
        if not isinstance(spec, dict):
            raise ConfigError(f"experiments.{name}: expected a mapping")
        exp_map[name] = spec

    setup = RunSetup(
        raw=raw,
        seed=int(seed if seed is not None else _get(raw, "seed", "config", 20250801)),
        dim=dim, q=q, dt=dt,
        measures=measures, coefficients=coefficients,
        band=band, scenarios=scenarios, aux=aux,
        zeta_spec=zeta_spec, xi_spec=xi_spec,
        checkpoints=checkpoints,
        n_paths=int(n_paths if n_paths is not None
                    else _get(exps, "n_paths", "experiments", 10000)),
        experiments=exp_map,
    )
    # Fail early on grid mismatches (atom alignment, checkpoint placement).
    setup.sim_config(max(checkpoints))
    for t in checkpoints:
        if abs(round(t / dt) * dt - t) > 1e-9:
            raise ConfigError(f"experiments.checkpoints: {t} is not on the dt={dt} grid")
    return setup
