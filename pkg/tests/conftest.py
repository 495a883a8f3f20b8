import numpy as np
import pytest


def toy_detection_set(m=8, n=3, p=16, seed=0):
    """Tiny separable set: a 5-sample sine burst marks the positive labels."""
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=0.05, size=(m, n, p, 3))
    y = np.zeros((m, n, p), dtype=np.uint8)
    for i in range(m):
        start = int(rng.integers(2, p - 7))
        burst = np.sin(np.arange(5) * 1.3 + rng.uniform(0, 6))[None, :, None]
        x[i, :, start : start + 5] += 1.5 * burst
        y[i, :, start : start + 5] = 1
    return x.astype(np.float32), y


@pytest.fixture
def toy_set():
    return toy_detection_set()


_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        request.config.stash.setdefault(_LINES, []).append(line)
        with capsys.disabled():
            print(f"\n[acceptance] {line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
