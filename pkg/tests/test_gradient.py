import numpy as np
import pytest

from gridmarket import (
    ConvexWelfare,
    GradientController,
    GradientControllerState,
    TimeConstants,
    kkt_residual,
    min_norm_flow,
    optimal_dispatch,
    rk4,
    ring,
)


@pytest.fixture
def controller(welfare_pre, ring4):
    return GradientController(welfare_pre, ring4)


def kkt_state(welfare, comm):
    d = optimal_dispatch(welfare)
    v = min_norm_flow(comm, d.ug - d.ud)
    return np.concatenate((d.ug, d.ud, v, d.lam))


def test_time_constants_validation():
    with pytest.raises(ValueError, match="positive"):
        TimeConstants(np.array([1.0, -1.0]), np.ones(2), np.ones(1), np.ones(2))
    with pytest.raises(ValueError, match="vector"):
        TimeConstants(np.eye(2), np.ones(2), np.ones(1), np.ones(2))


def test_tau_shape_check(welfare_pre, ring4):
    bad = TimeConstants(np.ones(4), np.ones(4), np.ones(3), np.ones(4))
    with pytest.raises(ValueError, match="tau_v"):
        GradientController(welfare_pre, ring4, bad)


def test_structure_matrix_skew(controller):
    j = controller.structure_matrix()
    assert np.array_equal(j, -j.T)


def test_rhs_zero_at_kkt_point(controller, welfare_pre, ring4):
    z = kkt_state(welfare_pre, ring4)
    dz = controller.rhs(z, np.zeros(4), np.zeros(4))
    assert np.max(np.abs(dz)) < 1e-12


def test_rhs_moves_off_kkt(controller, welfare_pre, ring4):
    z = kkt_state(welfare_pre, ring4)
    z[0] += 0.01  # perturb ug_1
    dz = controller.rhs(z, np.zeros(4), np.zeros(4))
    assert np.max(np.abs(dz)) > 1e-3


def test_price_difference_flow_on_ring(controller):
    # lam = e_1: only the two edges at node 0 carry price differences
    z = np.zeros(controller.state_size)
    z[12:] = np.array([1.0, 0.0, 0.0, 0.0])
    dz = controller.rhs(z, np.zeros(4), np.zeros(4))
    dv = dz[8:12]
    assert np.array_equal(dv, np.array([-1.0, 0.0, 0.0, 1.0]))


def test_price_difference_flow_scales_with_tau(welfare_pre, ring4):
    tau = TimeConstants(np.ones(4), np.ones(4), 2.0 * np.ones(4), np.ones(4))
    ctrl = GradientController(welfare_pre, ring4, tau)
    z = np.zeros(ctrl.state_size)
    z[12:] = np.array([1.0, 0.0, 0.0, 0.0])
    dv = ctrl.rhs(z, np.zeros(4), np.zeros(4))[8:12]
    assert np.array_equal(dv, np.array([-0.5, 0.0, 0.0, 0.5]))


def test_output_is_state_slice(controller):
    rng = np.random.RandomState(1)
    z = rng.normal(size=controller.state_size)
    ug, ud = controller.output(z)
    assert np.array_equal(ug, z[:4])
    assert np.array_equal(ud, z[4:8])


def test_controller_hamiltonian(controller, welfare_pre, ring4):
    assert controller.hamiltonian(np.zeros(16)) == 0.0
    # tau = I, all co-energy entries 1, n = 4, m_c = 4: 1/2 * 16 = 8
    assert controller.hamiltonian(np.ones(16)) == 8.0
    doubled = GradientController(
        welfare_pre, ring4,
        TimeConstants(2 * np.ones(4), 2 * np.ones(4), 2 * np.ones(4), 2 * np.ones(4)))
    z = np.random.RandomState(2).normal(size=16)
    assert doubled.hamiltonian(z) == pytest.approx(2.0 * controller.hamiltonian(z), rel=1e-15)


def test_energy_conserved_under_pure_skew_flow(ring4):
    # no dissipation (zero gradients), no port input: the storage is
    # constant along the skew flow up to integrator error
    w = ConvexWelfare(4, lambda u: np.zeros_like(u), lambda u: np.zeros_like(u))
    ctrl = GradientController(w, ring4)
    rng = np.random.RandomState(3)
    z = rng.normal(size=ctrl.state_size)
    h0 = ctrl.hamiltonian(z)
    dt = 1e-3
    f = lambda state: ctrl.rhs(state, np.zeros(4), np.zeros(4))
    for _ in range(1000):
        z = rk4(f, z, dt)
    assert abs(ctrl.hamiltonian(z) - h0) < 1e-10


def test_v_integrates_constant_price_differences(controller):
    # with lam frozen, dv = -tau_v^-1 Dc.T lam is constant, so v moves
    # linearly with that slope
    lam = np.array([1.3, 0.2, -0.4, 0.9])
    kappa = controller.comm.incidence().T @ lam
    z = np.zeros(controller.state_size)
    z[12:] = lam

    def frozen(zz):
        dz = controller.rhs(zz, np.zeros(4), np.zeros(4))
        dz[:8] = 0.0
        dz[12:] = 0.0  # hold everything but v
        return dz

    zt = z.copy()
    dt, steps = 1e-2, 500
    for _ in range(steps):
        zt = rk4(frozen, zt, dt)
    expected_v = -dt * steps * kappa  # tau_v = I
    assert np.max(np.abs(zt[8:12] - expected_v)) < 1e-12


def test_stationarity_matches_kkt(controller, welfare_pre, ring4):
    rng = np.random.RandomState(4)
    z_opt = kkt_state(welfare_pre, ring4)
    for _ in range(10):
        z = z_opt + rng.normal(scale=0.1, size=16)
        dz = controller.rhs(z, np.zeros(4), np.zeros(4))
        res = kkt_residual(welfare_pre, ring4, z[:4], z[4:8], z[8:12], z[12:])
        # the vector field is the (tau-scaled) KKT residual map
        assert np.max(np.abs(dz)) <= res + 1e-12
        assert np.max(np.abs(dz)) > 0.0


def test_pack_unpack_roundtrip(controller):
    state = GradientControllerState(np.arange(4.0), np.arange(4.0) + 4,
                                    np.arange(4.0) + 8, np.arange(4.0) + 12)
    z = controller.pack(state)
    assert np.array_equal(z, np.arange(16.0))
    back = controller.unpack(z)
    assert np.array_equal(back.v, state.v)
    labels = controller.state_labels()
    assert labels[0] == "ug_1" and labels[8] == "v_1" and labels[12] == "lam_1"


def test_dissipation_rate_nonpositive(controller, welfare_pre, ring4):
    rng = np.random.RandomState(5)
    z_bar = kkt_state(welfare_pre, ring4)
    for _ in range(20):
        z = z_bar + rng.normal(scale=0.5, size=16)
        assert controller.dissipation_rate(z, z_bar) <= 1e-14
