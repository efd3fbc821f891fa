"""Shared fixtures and the acceptance-criteria summary printer."""

from __future__ import annotations

import numpy as np
import pytest

from pcjscc.data import toy_dataset
from pcjscc.model import ModelConfig, TransmissionModel

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} | {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    """A model small enough to train a few steps in well under a second."""
    return ModelConfig(points=64, tokens=4, dim=8, depth=1, heads=2, ffn_hidden=16, keep_tokens=4,
                       snr_hidden=8, head_hidden=8, seed_dim=4)


@pytest.fixture
def tiny_model(tiny_config):
    return TransmissionModel(tiny_config, seed=0)


@pytest.fixture(scope="session")
def tiny_data(tiny_config):
    return toy_dataset(12, tiny_config.points, seed=3)
