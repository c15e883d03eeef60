import numpy as np
import pytest

# acceptance criteria report their verdicts here; printed in the terminal summary
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number!s:>3}: {'PASS' if passed else 'FAIL'}  {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n!s:>3}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def e1():
    from ergokit import example_e1
    return example_e1(1.0, 1.0)


@pytest.fixture
def close():
    return lambda a, b, tol: np.allclose(a, b, rtol=0, atol=tol)
