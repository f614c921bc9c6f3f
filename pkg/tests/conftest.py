"""Shared fixtures and the acceptance-criteria summary hook."""

import numpy as np
import pytest

from unsupcp.data import Dataset, SyntheticConfig

ACCEPTANCE_LINES = []


def record_criterion(num: int, ok: bool, detail: str) -> None:
    """Log one acceptance criterion verdict; reprinted after the run."""
    line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def three_class_mixture() -> SyntheticConfig:
    """Equilateral 3-class mixture in the plane, unit covariance."""
    r = 1.45
    means = r * np.array([[1.0, 0.0], [-0.5, np.sqrt(3) / 2], [-0.5, -np.sqrt(3) / 2]])
    return SyntheticConfig(class_means=means, cov_scale=1.0, priors=np.full(3, 1 / 3))


@pytest.fixture
def toy_labeled() -> Dataset:
    """Linearly separable 2-class toy set (4 points on a line)."""
    X = np.array([[-2.0, 0.0], [-1.0, 0.5], [1.0, -0.5], [2.0, 0.0]])
    return Dataset(instances=X, labels=np.array([1, 1, 2, 2]), num_classes=2)
