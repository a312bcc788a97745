import numpy as np
import pytest

from gridmarket import (
    InternalModelController,
    QuadraticWelfare,
    optimal_dispatch,
    quartic_welfare,
    ring,
)

LAMBDA_PRE = 66.0 / 73.0


@pytest.fixture
def controller(welfare_pre, ring4):
    return InternalModelController(welfare_pre, ring4)


def test_refuses_convex_welfare(ring4):
    w = quartic_welfare([1, 2, 3, 4], [1, 1, 1, 1], [0, 0, 0, 0], [1, 1.25, 1.5, 1.75])
    with pytest.raises(TypeError, match="quadratic"):
        InternalModelController(w, ring4)


def test_size_mismatch(ring4):
    w = QuadraticWelfare(np.eye(3), np.eye(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError, match="areas"):
        InternalModelController(w, ring4)


def test_consensus_prices_are_stationary(controller):
    zero = np.zeros(4)
    for alpha in (0.0, 1.0, -2.5):
        dlam = controller.rhs(alpha * np.ones(4), zero, zero)
        assert np.max(np.abs(dlam)) < 1e-14


def test_rhs_ring_laplacian_action(controller):
    # -L lam for lam = e_1 on the 4-ring
    lam = np.array([1.0, 0.0, 0.0, 0.0])
    dlam = controller.rhs(lam, np.zeros(4), np.zeros(4))
    assert np.array_equal(dlam, np.array([-2.0, 1.0, 0.0, 1.0]))


def test_rhs_zero_at_equilibrium(controller):
    lam = LAMBDA_PRE * np.ones(4)
    dlam = controller.rhs(lam, np.zeros(4), np.zeros(4))
    assert np.max(np.abs(dlam)) < 1e-15


def test_nonconsensus_prices_move(controller):
    rng = np.random.RandomState(2)
    for _ in range(10):
        lam = rng.normal(size=4)
        lam -= lam.mean()  # zero-mean disagreement
        if np.max(np.abs(lam)) < 1e-3:
            continue
        dlam = controller.rhs(lam + 0.9, np.zeros(4), np.zeros(4))
        assert np.max(np.abs(dlam)) > 1e-6


def test_output_zero_marginal_profit(controller, welfare_pre):
    ug, _ = controller.output(welfare_pre.c.copy())
    assert np.max(np.abs(ug)) < 1e-15


def test_output_zero_marginal_surplus(controller, welfare_pre):
    _, ud = controller.output(welfare_pre.b.copy())
    assert np.max(np.abs(ud)) < 1e-15


def test_output_at_common_price_is_optimal(controller, welfare_pre):
    d = optimal_dispatch(welfare_pre)
    ug, ud = controller.output(LAMBDA_PRE * np.ones(4))
    assert np.allclose(ug, d.ug, atol=1e-12)
    assert np.allclose(ud, d.ud, atol=1e-12)
    assert np.allclose(ug, [0.90410959, 0.45205479, 0.30136986, 0.22602740], atol=1e-8)
    assert np.allclose(ud, [0.09589041, 0.34589041, 0.59589041, 0.84589041], atol=1e-8)


def test_output_affine_slopes(controller, welfare_pre):
    # two-point differences recover the columns of Qg^-1 and -Qd^-1
    qg_inv = np.linalg.inv(welfare_pre.qg)
    qd_inv = np.linalg.inv(welfare_pre.qd)
    rng = np.random.RandomState(3)
    lam = rng.normal(size=4)
    ug0, ud0 = controller.output(lam)
    for i in range(4):
        e = np.zeros(4)
        e[i] = 1.0
        ug1, ud1 = controller.output(lam + e)
        assert np.max(np.abs((ug1 - ug0) - qg_inv[:, i])) < 1e-13
        assert np.max(np.abs((ud1 - ud0) + qd_inv[:, i])) < 1e-13


def test_hamiltonian(controller):
    lam = np.array([1.0, 2.0, -1.0, 0.5])
    assert controller.hamiltonian(lam) == 0.5 * float(lam @ lam)


def test_price_disagreement_dissipates(controller):
    rng = np.random.RandomState(4)
    lam_bar = LAMBDA_PRE * np.ones(4)
    for _ in range(20):
        lam = lam_bar + rng.normal(scale=0.3, size=4)
        assert controller.dissipation_rate(lam, lam_bar) <= 0.0


def test_pack_unpack_roundtrip(controller):
    lam = np.array([0.1, 0.2, 0.3, 0.4])
    state = controller.unpack(lam)
    assert np.array_equal(controller.pack(state), lam)
    assert controller.state_labels() == ["lam_1", "lam_2", "lam_3", "lam_4"]
