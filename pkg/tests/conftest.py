"""Shared fixtures for Tier 1, Tier 2 and Tier 3 tests."""

import sys
import importlib

import numpy as np
import pytest

from spectral_core import TorusGrid, random_field


SEED = 0x5EED


# ---------------------------------------------------------------------------
# Grids and random data
# ---------------------------------------------------------------------------

@pytest.fixture()
def rng():
    """A fresh generator seeded like the lab default."""
    return np.random.default_rng(SEED)


@pytest.fixture()
def make_grid():
    """Factory for ``TorusGrid`` values: ``make_grid(bandlimit, dimension=1)``."""
    def _make(bandlimit=8, dimension=1):
        return TorusGrid(dimension, bandlimit)
    return _make


@pytest.fixture()
def line(make_grid):
    """The circle with bandlimit 16."""
    return make_grid(16)


@pytest.fixture()
def make_field(rng):
    """Random complex field on a grid, optionally damped by ``(1+|j|^2)^(-decay/2)``."""
    def _make(grid, decay=0.0, real=False):
        f = random_field(grid, rng, decay)
        return (f + f.conjugate()) * 0.5 if real else f
    return _make


# ---------------------------------------------------------------------------
# Command-line module
# ---------------------------------------------------------------------------

@pytest.fixture()
def lab(monkeypatch):
    """Import ``formsum_lab`` with fresh module-level settings.

    The seed override in the environment is cleared so runs use the
    scenario seed unless a test sets it explicitly.
    """
    monkeypatch.delenv("FORMSUM_LAB_SEED", raising=False)
    sys.modules.pop("formsum_lab", None)
    import formsum_lab
    importlib.reload(formsum_lab)

    yield formsum_lab

    sys.modules.pop("formsum_lab", None)


@pytest.fixture()
def out_dir(tmp_path):
    """Output directory for run artifacts (created by the run itself)."""
    return tmp_path / "out"
