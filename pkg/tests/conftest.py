import numpy as np
import pytest

from pournet import synthsim
from pournet.data import fit_calibration, label_recording


@pytest.fixture(scope="session")
def short_scenario():
    geom = synthsim.TRAIN_GEOMETRIES[1]
    return synthsim.make_scenario(geom, 11, "short-c2", fill_to=0.6, initial_fill=0.0,
                                  rate=0.04)


@pytest.fixture(scope="session")
def recording(short_scenario):
    return synthsim.simulate_pour(short_scenario)


@pytest.fixture(scope="session")
def calibration(short_scenario):
    g = short_scenario.geometry
    return fit_calibration(synthsim.calibration_samples(g, seed=2), 3, g.name, g.height)


@pytest.fixture(scope="session")
def labeled_recording(recording, calibration):
    return label_recording(recording, calibration)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict = {}


@pytest.fixture
def report(capsys):
    """Record and echo one PASS/FAIL line for an acceptance criterion."""

    def emit(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        with capsys.disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
