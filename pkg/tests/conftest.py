from pathlib import Path

import numpy as np
import pytest

from mfgdual.config import gaussbump_1d, uniform_1d
from mfgdual.experiments import execute
from mfgdual.grid import SpaceTimeGrid
from mfgdual.model import CouplingSpec, DiffusionSpec, HamiltonianSpec, ModelSpec

DATA = Path(__file__).parent / "data"


def make_model(grid: SpaceTimeGrid, diffusion=None, m0=None, phiT=None, r=2.0, q=2.0):
    m0 = np.ones(grid.space_shape) if m0 is None else m0
    phiT = np.zeros(grid.space_shape) if phiT is None else phiT
    return ModelSpec(HamiltonianSpec(r), CouplingSpec(q), diffusion or DiffusionSpec.zero(), grid.T, m0, phiT)


def bump(grid: SpaceTimeGrid, kappa=2.0):
    x = grid.coords()
    m = np.exp(kappa * sum(np.cos(2 * np.pi * (xi - 0.5)) for xi in x))
    m = np.broadcast_to(m, grid.space_shape)
    return m / m.mean()


@pytest.fixture(scope="session")
def uniform_run():
    return execute(uniform_1d())


@pytest.fixture(scope="session")
def gaussbump_run():
    return execute(gaussbump_1d())


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one summary line per acceptance criterion; printed at the end of the run."""
    holder = {}
    yield holder
    rep = getattr(request.node, "rep_call", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    ACCEPTANCE_LINES.append(f"criterion {holder.get('id', '?')}: {status}  {holder.get('detail', '')}")


@pytest.hookimpl(hookwrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
