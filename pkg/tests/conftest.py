import numpy as np
import pytest

from difpath.numerics import RngStream
from difpath.schedule import linear_schedule


@pytest.fixture(scope="session")
def sched():
    return linear_schedule()


@pytest.fixture
def rng():
    return RngStream(1234)


def fd_check(loss_fn, params, h=1e-6):
    """Max norm-relative error between analytic and central-difference gradients, per tensor.

    ``loss_fn()`` returns ``(loss, grads)`` and reads ``params`` in place.
    """
    _, grads = loss_fn()
    worst = {}
    for name, p in params.items():
        num = np.zeros_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss_fn()[0]
            flat[i] = old - h
            lm = loss_fn()[0]
            flat[i] = old
            nflat[i] = (lp - lm) / (2 * h)
        g = grads[name]
        denom = max(np.linalg.norm(num), np.linalg.norm(g), 1e-12)
        worst[name] = float(np.linalg.norm(num - g) / denom)
    return worst


# one line per acceptance criterion, echoed again at the end of the session
ACCEPTANCE_LINES = {}


@pytest.fixture
def verdict(capsys):
    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.setdefault(n, []).append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        for line in ACCEPTANCE_LINES[n]:
            terminalreporter.write_line(line)
