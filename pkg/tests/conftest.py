import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny():
    """Tiny synthetic dataset and its generator state."""
    from diffmsin.data import build_dataset, preset
    return build_dataset(preset("tiny", seed=3))


def central_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar f at x (x is perturbed in place and restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# one PASS/FAIL line per acceptance criterion, printed after the run
VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(name: str, passed: bool, detail: str) -> bool:
        VERDICTS.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        print(VERDICTS[-1])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
