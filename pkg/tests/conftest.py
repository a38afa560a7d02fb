import numpy as np
import pytest

from panel_ensemble.panel import MaskedPanel, Panel

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def noise_panel(n, T, seed=0, scale=1.0) -> Panel:
    return Panel(scale * np.random.default_rng(seed).standard_normal((n, T)))


def constant_masked(n, T, c=3.5, target=None) -> MaskedPanel:
    target = target or (n - 1, T - 1)
    return MaskedPanel.single(np.full((n, T), c), target)


def rank_one(n, T, seed=0) -> np.ndarray:
    g = np.random.default_rng(seed)
    return np.outer(g.uniform(0.5, 2.0, n), g.uniform(0.5, 2.0, T))
