import numpy as np
import pytest

from fusiondet.calib_geometry import CameraIntrinsics, Extrinsics


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_intr():
    return CameraIntrinsics(100.0, 100.0, 160.0, 48.0, 320, 96)


@pytest.fixture
def distorted_intr():
    return CameraIntrinsics(180.0, 175.0, 160.0, 48.0, 320, 96, skew=0.3,
                            kappa=(0.1, -0.01, 0.001, 0.0005, -0.0005))


@pytest.fixture
def identity_ext():
    return Extrinsics()


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[n]
        line = f"[{'PASS' if passed else 'FAIL'}] {n:2d}. {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
