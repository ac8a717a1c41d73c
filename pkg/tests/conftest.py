import numpy as np
import pytest

from ccqsim.params import DriveSet, Envelope, SystemParams, mhz


@pytest.fixture
def ideal_params():
    return SystemParams(chi1=mhz(0.5), chi2=mhz(0.5), kappa1=mhz(1.5), kappa2=mhz(1.5))


@pytest.fixture
def ideal_drives():
    return DriveSet(direct_a=Envelope(amplitude=mhz(1.16), ramp=0.9, hold=0.7))


@pytest.fixture
def lossy_params():
    return SystemParams(chi1=mhz(1.2), chi2=mhz(1.0), kappa1=mhz(18), kappa2=mhz(16),
                        gamma1=mhz(0.9), gamma2=mhz(0.8), delta1=mhz(0.3),
                        delta2=mhz(-0.4), eta_l=0.7, eta_m=0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


def record_criterion(number, name, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
