import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from lutnet.data import find_mnist

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

MNIST_DIR = os.environ.get("MNIST_DIR", "/root/data/mnist")


@pytest.fixture(scope="session")
def mnist_dir():
    if find_mnist(MNIST_DIR) is None:
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}; run scripts/fetch_mnist.sh")
    return Path(MNIST_DIR)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance(request):
    """``acceptance(n, ok, detail)`` logs a PASS/FAIL line for criterion ``n`` and asserts ``ok``."""
    lines = request.config.acceptance_lines

    def record(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        lines.append(line)
        print(line, flush=True)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
