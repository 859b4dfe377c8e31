import numpy as np
import pytest

from bbcalib.simulator import HOLOLENS, NoiseModel, generate_single_point_session, make_ground_truth

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rigid_gt():
    return make_ground_truth("rigid", seed=3)


@pytest.fixture
def noiseless_session(rigid_gt):
    return generate_single_point_session(rigid_gt, HOLOLENS, NoiseModel.noiseless(seed=3))


@pytest.fixture
def record_acceptance():
    def record(n: int, passed: bool, detail: str = ""):
        ACCEPTANCE[n] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
