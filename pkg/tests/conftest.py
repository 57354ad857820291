import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from disclosure_mfg.grid import Grid1D
from disclosure_mfg.model import (
    Constant,
    ConstantMajor,
    GaussianBump,
    GaussianInitial,
    LinearProfile,
    QuadraticMajor,
    SaturatingProfile,
    Tanh,
    TrackingMajor,
    ZeroProfile,
    make_model,
)

settings.register_profile("repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"


@pytest.fixture
def small_grid():
    return Grid1D(x_max=4.0, n_x=41, horizon=1.0, n_t=40)


def zero_model(prior=(0.5, 0.5)):
    I = len(prior)
    return make_model([Constant(1.0)] * I, [ZeroProfile()] * I, [ZeroProfile()] * I, [ConstantMajor(0.0)] * I, prior)


def quadratic_model(prior=(0.5, 0.5), centers=(0.0, 1.0), slope=1.0, tilt=0.5):
    I = len(prior)
    terminal = [LinearProfile(slope, Tanh(amp=tilt * (-1) ** (i + 1))) for i in range(I)]
    return make_model(
        [Constant(1.0)] * I,
        [LinearProfile(slope)] * I,
        terminal,
        [QuadraticMajor(c, 1.0) for c in centers],
        prior,
    )


def congestion_model(prior=(0.5, 0.5)):
    return make_model(
        [Constant(1.0), GaussianBump(1.0, 0.5)],
        [SaturatingProfile(1.0, 0.5, 1.0)] * 2,
        [LinearProfile(1.0, Tanh(amp=-1.0)), LinearProfile(1.0, Tanh(amp=1.0))],
        [TrackingMajor(1.0, 0.5, 2.0, 0.4), TrackingMajor(1.0, -0.5, 2.0, 0.0)],
        prior,
        control_set=(-1.0, 1.0),
        initial=GaussianInitial(0.0, 0.5),
    )


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("tests.test_acceptance")
    if acceptance is None or not acceptance.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(acceptance.VERDICTS):
        terminalreporter.write_line(acceptance.VERDICTS[k])
