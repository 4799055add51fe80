import math

import pytest

from recoilfree.hilbert import ModelConfig
from recoilfree.pepr import OptimizerHyperparams, optimize

ACCEPTANCE_LINES = []

ENSEMBLE_SEEDS = tuple(range(8))
DESK_HYPER = OptimizerHyperparams(alpha_dr=0.3, alpha_tw=0.3, n_it=20_000)


def record(number, title, ok, detail):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def run_ensemble(omega_max, area, gamma_z=0.0, seeds=ENSEMBLE_SEEDS, hyper=DESK_HYPER):
    config = ModelConfig(omega_max=omega_max, gamma_z=gamma_z)
    t_f = area * math.pi / omega_max
    return config, [optimize(config, t_f, hyper.replace(seed=s)) for s in seeds]


@pytest.fixture(scope="session")
def fast_ensemble():
    """Best-of-8 optimization in the fast regime, shared by several tests."""
    return run_ensemble(38.83, 3.0)
