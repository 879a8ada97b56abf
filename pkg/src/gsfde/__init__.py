"""Scenario-robust simulation of delay SDEs with volatility uncertainty.

The package realizes stochastic functional differential equations with
infinite fading memory, driven by a scalar process whose volatility is only
known to lie in a band, and verifies the associated moment bounds and
pathwise inequalities at desk scale:

  phase_space   history segments and the weighted sup-norm
  measures      delay measures (atoms + exponential densities), moments
  gbm           volatility scenarios, paths of (B, <B>), sup estimators
  coefficients  certified affine functionals and their truncations
  integrator    Euler-Maruyama engine (single paths and path batches)
  bounds        closed-form constants, feasibility windows
  harness       named experiments with Monte Carlo verdicts
  config / cli  YAML configuration and the command-line front end
"""

from .phase_space import (HistorySegment, TailModel, from_initial_data,
                          segment_norm, evolve_segment, check_segment_norm_bound)
from .measures import DelayMeasure, moment, integrate_segment, check_delay_integral_bound
from .gbm import (VolatilityBand, VolatilityControl, Scenario, GPath, scenario_grid,
                  sample_path, sublinear_expectation, capacity_estimate,
                  check_markov_inequality)
from .coefficients import (LinearFunctional, CoefficientSet, DissipativityCertificate,
                           build_linear_coefficients, verify_certificate,
                           verify_global_conditions, truncate)
from .integrator import (SimConfig, TrajectoryRecord, step, simulate, simulate_pair,
                         simulate_truncated, batch_statistics, NumericalBlowupError)
from .bounds import AuxConstants, BoundReport, build_report, feasibility, InfeasibleError
from .config import RunSetup, load_setup, load_config
from .harness import run_all, run_one, EXPERIMENTS

__version__ = "0.1.0"
