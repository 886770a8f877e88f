import numpy as np
import pytest

from todaflow.lattice import FlaschkaState


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_flaschka(rng, n, scale=0.5):
    a = scale * rng.standard_normal(n)
    b = 0.5 * np.exp(0.5 * scale * rng.standard_normal(n - 1))
    return FlaschkaState(a, b)


_VERDICTS = []


@pytest.fixture
def verdict():
    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _VERDICTS.append(line)
        print("\n" + line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
