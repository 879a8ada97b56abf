import numpy as np
import pytest
import yaml

from gsfde.config import load_setup


TINY_CONFIG = {
    "seed": 777,
    "space": {"dim": 1, "q": 1.0, "dt": 0.01},
    "measures": {
        "mu1": {"atoms": [{"tau": 0.5, "w": 1.0}]},
        "mu2": {"atoms": [{"tau": 0.5, "w": 1.0}]},
        "mu3": {"atoms": [{"tau": 0.5, "w": 1.0}]},
    },
    "coefficients": {
        "drift": {"a": 1.2, "b": 0.2, "c0": 0.0, "measure": "mu1",
                  "young_weight": 1.6487212707001282},
        "qv_drift": {"a": 0.3, "b": 0.0, "c0": 0.0, "measure": "mu2"},
        "diffusion": {"b": 0.05, "c0": 0.0, "measure": "mu3"},
    },
    "scenarios": {"sigma_lo": 0.3, "sigma_hi": 0.6, "grid_levels": 2},
    "aux_constants": {"k2": 0.2},
    "initial_data": {"zeta": {"kind": "constant", "value": 1.0},
                     "xi": {"kind": "constant", "value": 0.0}},
    "experiments": {
        "checkpoints": [0.5, 1.0, 2.0],
        "n_paths": 300,
        "lyapunov": {"horizon": 4.0, "n_paths": 100},
        "nonexplosion": {"levels": [2, 4], "horizon": 2.0},
        "lemmas": {"n_trajectories": 6, "horizon": 1.0},
        "truncation": {"n_seeds": 5, "horizon": 0.5},
        "markov": {"n_paths": 2000, "dt": 0.02},
        "l2_estimate": {"n_paths": 200},
    },
}


@pytest.fixture(scope="session")
def tiny_config_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY_CONFIG))
    return p


@pytest.fixture(scope="session")
def tiny_setup(tiny_config_path):
    return load_setup(tiny_config_path)


@pytest.fixture(scope="session")
def default_setup():
    return load_setup()


def dense_sup_oracle(fn, q, depth=80.0, step=1e-4):
    """Brute-force sup of e^{q a}|fn(a)| on a deep dense grid."""
    alphas = -np.arange(0.0, depth, step)
    vals = np.array([np.linalg.norm(np.atleast_1d(fn(a))) for a in alphas])
    return float(np.max(np.exp(q * alphas) * vals))
