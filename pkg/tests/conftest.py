import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_config_dict():
    """A tiny experiment that runs in seconds: 3 x 3 x 3 lattice at 10 cm."""
    return {
        "room": {"dims": [4.0, 6.0, 3.0], "rt60": 0.2},
        "grid": {"origin": [1.8, 2.2, 1.1], "extent": [0.2, 0.2, 0.2], "spacing": 0.1},
        "measurement": {"mode": "analytic", "seed": 3},
        "model": {
            "kind": "dnn",
            "dnn": {"hidden": [16, 16], "max_epochs": 3, "batch_size": 8, "min_steps_per_epoch": 0},
            "affine": {"n_regions": 2},
        },
        "eval": {"n_eval_poses": 6, "n_dev_poses": 4},
        "sweep": {"models": ["linear"], "factors": [1, 2], "snrs": [20.0, 10.0], "repeats": 3},
    }


# One line per acceptance criterion, collected by tests/test_acceptance.py.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
