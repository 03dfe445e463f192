"""Shared fixtures: small grids, probes and one representative parameter
vector per family. Representative values keep every frequency inside the
side-64 sampling band so the same vectors also serve full-scale checks."""

import numpy as np
import pytest

from qcrbench import Family, ParamVector, ProbeConfig, make_grid

REP_THETAS = {
    Family.SINGLE_LINEAR: [0.05, 0.7, 1.2],
    Family.DOUBLE_LINEAR: [0.6, 0.03, 0.4, -0.5, 0.055, 2.1, 0.8],
    Family.TRIPLE_LINEAR: [0.4, 0.35, 0.025, 0.2, -0.4, 0.045, 1.4, 0.9, 0.06, -2.0, 0.3],
    Family.RADIAL_LINEAR: [0.5, 0.04, 0.3, 0.05, 1.0, -0.7],
    Family.DOUBLE_RADIAL: [0.55, 0.04, 0.5, 0.05, -0.9, 5.0, -7.0],
}


def rep_theta(family: Family) -> ParamVector:
    return ParamVector(family, np.asarray(REP_THETAS[family], dtype=np.float64))


# Frequencies separated by factors of two or more: Fisher matrices stay well
# conditioned on small grids and the parameter point is cleanly identifiable,
# which is what inversion-chain and recovery tests need. Near-coincident
# frequencies (REP_THETAS) exercise the refusal paths instead.
SEPARATED_THETAS = {
    Family.SINGLE_LINEAR: [0.7, 0.7, 1.2],
    Family.DOUBLE_LINEAR: [0.6, 0.5, 0.4, -0.5, 1.3, 2.1, 0.8],
    Family.TRIPLE_LINEAR: [0.4, 0.35, 0.3, 0.2, -0.4, 0.9, 1.4, 0.9, 1.8, -2.0, 0.3],
    Family.RADIAL_LINEAR: [0.5, 0.6, 0.3, 0.8, 1.0, -0.7],
    Family.DOUBLE_RADIAL: [0.55, 0.5, 0.5, 0.9, -0.9, 1.0, -2.0],
}


def separated_theta(family: Family) -> ParamVector:
    return ParamVector(family, np.asarray(SEPARATED_THETAS[family], dtype=np.float64))


@pytest.fixture
def grid8():
    return make_grid(8)


@pytest.fixture
def grid16():
    return make_grid(16)


@pytest.fixture
def probe8(grid8):
    """side 8, N_bar 6400: a fully transmitting pixel averages 100 counts."""
    return ProbeConfig(grid=grid8, n_bar=6400.0)
