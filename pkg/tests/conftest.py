import math

import pytest

from resetband import designkit as dk
from resetband.shaping import ShapingSpec, build_bandpassed_cglp, build_shaping_filter

# band [1, 10] rad/s, w_r = 0.5 rad/s, gamma = 0.2; the filter is solved on the
# full phase so that its realized phase crosses zero twice on each side
NOTCH_EXAMPLE = dict(omega_l=1.0, omega_h=10.0, psi_f=math.radians(-57.34), method="full",
            omega_r=0.5, gamma=0.2, crone_N=6)


@pytest.fixture(scope="session")
def notch_filter():
    spec = ShapingSpec(NOTCH_EXAMPLE["omega_l"], NOTCH_EXAMPLE["omega_h"], NOTCH_EXAMPLE["psi_f"], method=NOTCH_EXAMPLE["method"])
    return build_shaping_filter(spec, N_crone=NOTCH_EXAMPLE["crone_N"])


@pytest.fixture(scope="session")
def notch_element(notch_filter):
    return build_bandpassed_cglp(notch_filter, NOTCH_EXAMPLE["omega_r"], NOTCH_EXAMPLE["gamma"])


@pytest.fixture(scope="session")
def table_designs():
    return {k: dk.build_controller(s) for k, s in dk.example_specs().items()}


@pytest.fixture(scope="session")
def tracking_report(table_designs):
    cases = [c for c in dk.standard_cases(sweep=[])
             if c.name in ("sine_5hz", "sweep_21hz", "sweep_22hz", "sweep_23hz", "multisine")]
    return dk.run_tracking_suite(table_designs, cases, workers=4)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    def record(k: int, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        ACCEPTANCE[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
