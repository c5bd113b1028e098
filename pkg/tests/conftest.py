"""Shared pytest setup: repository root on sys.path, slow marker, fixtures"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from synth import QPSK, PrbsSpec, map_symbols, prbs_generate  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo acceptance runs")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def prbs7_qpsk_frame():
    """One period of PRBS7 mapped to QPSK: 127 symbols"""
    bits = prbs_generate(PrbsSpec(7), 127 * QPSK.bits_per_symbol)
    return map_symbols(bits, QPSK)
