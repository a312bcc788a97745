"""Shared fixtures: the four-area test case used throughout the suite."""

import numpy as np
import pytest

from gridmarket import (
    ClosedLoopSystem,
    GradientController,
    InternalModelController,
    PhysicalParams,
    QuadraticWelfare,
    ring,
)


@pytest.fixture
def ring4():
    return ring(4)


@pytest.fixture
def phys4(ring4):
    """Four identical areas on a ring: M = Gamma = I, A = 2I."""
    return PhysicalParams(ring4, np.ones(4), 2.0 * np.ones(4), np.ones(4))


@pytest.fixture
def welfare_pre():
    """Pre-event welfare: Qg = diag(1..4), Qd = I, c = 0, b = (1, 1.25, 1.5, 1.75)."""
    return QuadraticWelfare.diagonal([1, 2, 3, 4], [1, 1, 1, 1],
                                     [0, 0, 0, 0], [1, 1.25, 1.5, 1.75])


@pytest.fixture
def welfare_post():
    """Post-event welfare: b_4 raised to 2."""
    return QuadraticWelfare.diagonal([1, 2, 3, 4], [1, 1, 1, 1],
                                     [0, 0, 0, 0], [1, 1.25, 1.5, 2])


@pytest.fixture
def im_system(phys4, welfare_pre, ring4):
    return ClosedLoopSystem(phys4, InternalModelController(welfare_pre, ring4))


@pytest.fixture
def gr_system(phys4, welfare_pre, ring4):
    return ClosedLoopSystem(phys4, GradientController(welfare_pre, ring4))
