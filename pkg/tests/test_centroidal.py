import numpy as np
import pytest

import oracles as O
from hopperflip import centroidal as C
from hopperflip import model as M


@pytest.fixture(scope="module")
def robot():
    return M.default_model()


def counter_rotation_state(robot) -> M.GeneralizedState:
    """Planar state where fast knee motion cancels the base rotation's
    angular momentum: base spins, whole-body momentum vanishes."""
    st = M.GeneralizedState([0, 0, 1.5], [1, 0, 0, 0], np.zeros(6),
                            [1.2, -0.5, 0.0], [0.0, 0.0, 0.0])
    st.qdot[0] = -8.0
    a = C.cmm(robot, st)  # rows [p; L]; L_y is row 4
    u0 = st.generalized_velocity()
    omega_y = -float(a[4, :] @ u0) / float(a[4, 1])
    st.base_twist[1] = omega_y
    if omega_y < 0:  # make the base spin positive about the flip axis
        st.qdot[0] = 8.0
        u0 = st.generalized_velocity()
        u0[1] = 0.0
        st.base_twist[1] = -float(a[4, :] @ u0) / float(a[4, 1])
    return st


class TestCentroidalState:
    def test_matches_per_link_oracle(self, robot):
        rng = np.random.default_rng(0)
        for _ in range(100):
            st = O.random_state(rng)
            cs = C.centroidal_state(robot, st)
            com, p, L, icom = O.momenta(robot, st)
            np.testing.assert_allclose(cs.com, com, atol=1e-12)
            np.testing.assert_allclose(cs.p_com, p, atol=1e-10)
            np.testing.assert_allclose(cs.L_com, L, atol=1e-10)
            np.testing.assert_allclose(cs.I_com, icom, atol=1e-10)

    def test_internal_identities(self, robot):
        rng = np.random.default_rng(1)
        for _ in range(100):
            st = O.random_state(rng)
            cs = C.centroidal_state(robot, st)
            scale = max(np.linalg.norm(cs.L_com), 1.0)
            assert np.linalg.norm(cs.I_com @ cs.w_com - cs.L_com) < 1e-9 * scale
            assert np.linalg.norm(cs.p_com - robot.total_mass * cs.v_com) < 1e-9

    def test_single_rigid_body_reduction(self, robot):
        # joints locked, whole robot rotating about its own COM at omega
        rng = np.random.default_rng(2)
        for _ in range(20):
            st = O.random_state(rng)
            st.qdot[:] = 0.0
            omega = rng.uniform(-3, 3, size=3)
            com = O.com_position(robot, st)
            st.base_twist[0:3] = omega
            st.base_twist[3:6] = np.cross(omega, st.base_position - com)
            cs = C.centroidal_state(robot, st)
            np.testing.assert_allclose(cs.w_com, omega, atol=1e-12)

    def test_static_pose_zero_momenta(self, robot):
        st = M.GeneralizedState([0.3, -0.2, 0.7], [1, 0, 0, 0], np.zeros(6),
                                [0.8, -0.4, 0.2], np.zeros(3))
        cs = C.centroidal_state(robot, st)
        np.testing.assert_allclose(cs.p_com, 0.0, atol=1e-15)
        np.testing.assert_allclose(cs.L_com, 0.0, atol=1e-15)
        np.testing.assert_allclose(cs.w_com, 0.0, atol=1e-15)

    def test_counter_rotation_cancels_momentum(self, robot):
        st = counter_rotation_state(robot)
        com, p, L, icom = O.momenta(robot, st)  # independent verification
        assert np.linalg.norm(L) < 1e-9
        assert abs(st.base_twist[1]) > 0.5
        cs = C.centroidal_state(robot, st)
        assert np.linalg.norm(cs.w_com) < 1e-9

    def test_icom_eigenvalues_bounded_below_by_link_moment(self, robot):
        floor = min(np.linalg.eigvalsh(l.inertia)[0] for l in robot.links)
        rng = np.random.default_rng(3)
        for _ in range(50):
            cs = C.centroidal_state(robot, O.random_state(rng))
            assert np.linalg.eigvalsh(cs.I_com)[0] >= floor

    def test_icom_continuous_in_configuration(self, robot):
        st = M.GeneralizedState([0, 0, 1.0], [1, 0, 0, 0], np.zeros(6),
                                [0.5, -0.2, 0.1], np.zeros(3))
        base = C.centroidal_state(robot, st).I_com
        st2 = st.copy()
        st2.q = st.q + 1e-7
        assert np.abs(C.centroidal_state(robot, st2).I_com - base).max() < 1e-5


class TestCmm:
    def test_consistency_with_per_link_summation(self, robot):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            st = O.random_state(rng)
            h = C.cmm(robot, st) @ st.generalized_velocity()
            cs = C.centroidal_state(robot, st)
            ref = np.concatenate([cs.p_com, cs.L_com])
            assert np.abs(h - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())

    def test_zero_velocity_zero_momentum(self, robot):
        rng = np.random.default_rng(5)
        st = O.random_state(rng)
        st.base_twist[:] = 0.0
        st.qdot[:] = 0.0
        np.testing.assert_allclose(C.cmm(robot, st) @ st.generalized_velocity(), 0.0)

    def test_pure_translation(self, robot):
        rng = np.random.default_rng(6)
        st = O.random_state(rng)
        st.base_twist[:] = 0.0
        st.qdot[:] = 0.0
        st.base_twist[3:6] = [0.7, -0.3, 1.1]
        h = C.cmm(robot, st) @ st.generalized_velocity()
        np.testing.assert_allclose(h[0:3], robot.total_mass * st.base_twist[3:6], atol=1e-10)
        np.testing.assert_allclose(h[3:6], 0.0, atol=1e-10)

    def test_blockdiag_decoupling(self, robot):
        # base-linear columns carry mass only into the linear rows; momenta
        # referred to the COM leave the angular rows untouched
        rng = np.random.default_rng(7)
        a = C.cmm(robot, O.random_state(rng))
        np.testing.assert_allclose(a[0:3, 3:6], robot.total_mass * np.eye(3), atol=1e-10)
        np.testing.assert_allclose(a[3:6, 3:6], 0.0, atol=1e-10)


class TestFlightInvariants:
    def test_momentum_constant_while_inertia_and_cav_vary(self, robot):
        st = M.GeneralizedState([0, 0, 2.5], [1, 0, 0, 0],
                                [0.0, 2.0, 0.0, 0.0, 0.0, 2.0],
                                [0.4, -0.3, 0.0], [2.5, -1.0, 0.0])
        s = st
        cs0 = C.centroidal_state(robot, s)
        l_prev = cs0.L_com
        pitch_inertia = [float(robot.gravity[1] * 0)]  # placeholder start
        pitch_inertia = [cs0.I_com[1, 1]]
        cav = [cs0.w_com[1]]
        for _ in range(150):
            s, recs = M.step(robot, s, np.zeros(3), 0.002)
            assert not any(r.active for r in recs)
            cs = C.centroidal_state(robot, s)
            assert np.abs(cs.L_com - l_prev).max() < 1e-8
            l_prev = cs.L_com
            pitch_inertia.append(cs.I_com[1, 1])
            cav.append(cs.w_com[1])
        # the configuration moves, so the locked inertia and CAV must move too
        assert np.ptp(pitch_inertia) > 1e-3
        assert np.ptp(cav) > 1e-2
        # folding the leg speeds the body up: CAV tracks L / I(t) exactly
        cs = C.centroidal_state(robot, s)
        np.testing.assert_allclose(cs.w_com, np.linalg.solve(cs.I_com, cs0.L_com), atol=1e-6)
