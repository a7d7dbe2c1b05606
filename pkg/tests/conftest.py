import numpy as np
import pytest
from hypothesis import strategies as st

from rootopt.data import Dataset


def random_dataset(seed: int, n: int = 60, p: int = 2, trial_frac: float = 0.5) -> Dataset:
    """Small valid dataset with both arms present and effect heterogeneity in X0."""
    rng = np.random.default_rng(seed)
    while True:
        x = rng.normal(size=(n, p))
        s = (rng.random(n) < trial_frac).astype(int)
        t = (rng.random(n) < 0.5).astype(float)
        trial = s == 1
        if trial.sum() >= 4 and (~trial).sum() >= 1 and 0 < t[trial].sum() < trial.sum():
            break
    y = t * (1 + x[:, 0] ** 2) + rng.normal(size=n)
    t[~trial] = np.nan
    y[~trial] = np.nan
    return Dataset.from_arrays(x, s, t, y)


def tiny_dataset() -> Dataset:
    """Two trial rows ({T=1,Y=2}, {T=0,Y=1}) and two target rows."""
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    return Dataset.from_arrays(x, [1, 1, 0, 0], [1, 0, np.nan, np.nan], [2, 1, np.nan, np.nan])


seeds = st.integers(min_value=0, max_value=2**31 - 1)


@pytest.fixture
def small():
    return random_dataset(0)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(k, ok, detail)`` prints and records one acceptance line."""

    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
