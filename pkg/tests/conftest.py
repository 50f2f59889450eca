import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qkd810 import kernels
from qkd810._jit import HAVE_NUMBA
from qkd810.fiber import CalibrationTargets, calibrate_fiber, design_single_mode_fiber, solve_modes
from qkd810.scenario import bundled, load_scenario

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])


@pytest.fixture(scope="session")
def telecom():
    return calibrate_fiber(CalibrationTargets())


@pytest.fixture(scope="session")
def sm800():
    return design_single_mode_fiber()


@pytest.fixture(scope="session")
def telecom_modes_810(telecom):
    return solve_modes(telecom, 810.0)


@pytest.fixture(scope="session")
def bundled_fibers():
    sc = load_scenario(bundled("symmetric-2-2-spatial"))
    return sc.arm_a.fiber, sc.arm_a.spatial_filter.target_fiber


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def criterion(capsys):
    """Record one acceptance criterion's outcome and print it as a single line."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
