import os
import tempfile

# keep the basis cache out of the user's home during tests
os.environ.setdefault("NEMATIC2D_CACHE", tempfile.mkdtemp(prefix="nematic2d-cache-"))

import numpy as np
import pytest

from nematic2d.fields import BOX, PERIODIC, GridSpec

TWO_PI = 2.0 * np.pi


@pytest.fixture
def torus64():
    return GridSpec(PERIODIC, TWO_PI, TWO_PI, 64, 64)


@pytest.fixture
def box64():
    return GridSpec(BOX, np.pi, np.pi, 64, 64)


def observed_orders(errors):
    return [float(np.log2(a / b)) for a, b in zip(errors, errors[1:])]


# acceptance criteria register here and are echoed in the terminal summary
ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
