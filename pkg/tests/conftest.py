import numpy as np
import pytest

from wanda import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    """Run a test once per kernel backend by swapping the active module."""
    monkeypatch.setattr(kernels, "_active", kernels.get_backend(request.param))
    return request.param


def naive_matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def random_spd(rng, n, shift=1.0):
    b = rng.standard_normal((n, n))
    return b.T @ b + shift * np.eye(n)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l[1:].split(":")[0].split()[0])):
            terminalreporter.write_line(line)
