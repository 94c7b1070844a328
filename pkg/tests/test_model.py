import dataclasses

import numpy as np
import pytest

import oracles as O
from hopperflip import model as M


@pytest.fixture(scope="module")
def robot():
    return M.default_model()


def upright_stance(z=0.84):
    return M.GeneralizedState([0, 0, z], [1, 0, 0, 0], np.zeros(6), np.zeros(3), np.zeros(3))


def tumble_state():
    return M.GeneralizedState([0, 0, 2.0], [1, 0, 0, 0],
                              [0.0, 1.5, 0.0, 0.3, 0.0, 1.5],
                              [0.5, -0.3, 0.1], [1.0, -0.5, 0.2])


class TestMassMatrix:
    def test_matches_per_link_jacobian_sum(self, robot):
        rng = np.random.default_rng(0)
        for _ in range(50):
            st = O.random_state(rng)
            mm = M.mass_matrix(robot, st)
            ref = O.mass_matrix_bruteforce(robot, st)
            np.testing.assert_allclose(mm, ref, atol=1e-11)

    def test_locked_base_block_is_whole_robot_rigid_inertia(self, robot):
        rng = np.random.default_rng(1)
        st = O.random_state(rng)
        mm = M.mass_matrix(robot, st)
        ref = O.locked_spatial_inertia_at_base(robot, st)
        np.testing.assert_allclose(mm[0:6, 0:6], ref, atol=1e-11)

    def test_symmetric_positive_definite_at_random_states(self, robot):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            st = O.random_state(rng)
            mm = M.mass_matrix(robot, st)
            assert np.abs(mm - mm.T).max() < 1e-12
            assert np.linalg.eigvalsh(mm)[0] > 0.0


class TestBiasForces:
    def test_rest_upright_gravity_wrench(self, robot):
        c = M.bias_forces(robot, upright_stance())
        assert c[5] == pytest.approx(robot.total_mass * 9.81, abs=1e-9)
        np.testing.assert_allclose(np.delete(c, 5), 0.0, atol=1e-9)

    def test_zero_gravity_zero_velocity_gives_zero(self, robot):
        m0 = dataclasses.replace(robot, gravity=np.zeros(3))
        rng = np.random.default_rng(3)
        st = O.random_state(rng)
        st.base_twist[:] = 0.0
        st.qdot[:] = 0.0
        np.testing.assert_allclose(M.bias_forces(m0, st), 0.0, atol=1e-12)

    def test_joint_rows_match_kinetic_energy_finite_differences(self, robot):
        # Euler-Lagrange identity in the (true) joint coordinates:
        # c_j = (Mdot u)_j - dT/dq_j, gravity removed.
        m0 = dataclasses.replace(robot, gravity=np.zeros(3))
        rng = np.random.default_rng(4)
        eps = 1e-6
        for _ in range(5):
            st = O.random_state(rng)
            u = st.generalized_velocity()
            c = M.bias_forces(m0, st)

            def ke(state):
                return 0.5 * u @ M.mass_matrix(m0, state) @ u

            def advance(state, e):
                from scipy.spatial.transform import Rotation
                s2 = state.copy()
                rot = Rotation.from_rotvec(u[0:3] * e) * Rotation.from_quat(
                    np.roll(state.base_orientation, -1))
                s2.base_orientation = np.roll(rot.as_quat(), 1)
                s2.base_position = state.base_position + u[3:6] * e
                s2.q = state.q + u[6:9] * e
                return s2

            mdot = (M.mass_matrix(m0, advance(st, eps))
                    - M.mass_matrix(m0, advance(st, -eps))) / (2 * eps)
            for j in range(3):
                sp, sm = st.copy(), st.copy()
                sp.q = st.q.copy()
                sm.q = st.q.copy()
                sp.q[j] += eps
                sm.q[j] -= eps
                dtdq = (ke(sp) - ke(sm)) / (2 * eps)
                assert c[6 + j] == pytest.approx((mdot @ u)[6 + j] - dtdq, abs=1e-5)

    def test_all_rows_match_newton_euler_virtual_work(self, robot):
        rng = np.random.default_rng(5)
        for _ in range(5):
            st = O.random_state(rng)
            ref = O.bias_virtual_work(robot, st)
            np.testing.assert_allclose(M.bias_forces(robot, st), ref, atol=2e-5)


class TestContacts:
    def test_airborne_corners_inactive(self, robot):
        st = M.GeneralizedState([0, 0, 2.0], [1, 0, 0, 0], np.zeros(6), np.zeros(3), np.zeros(3))
        recs = M.contact_resolve(robot, st, 0.7, 0.002)
        assert len(recs) == 4
        for r in recs:
            assert not r.active
            assert r.normal_impulse == 0.0
            assert np.all(r.tangential_impulse == 0.0)

    def test_static_stance_supports_weight(self, robot):
        s = upright_stance()
        for _ in range(500):
            s, recs = M.step(robot, s, np.zeros(3), 0.002)
        total = sum(r.normal_impulse for r in recs) / 0.002
        assert total == pytest.approx(robot.total_mass * 9.81, rel=0.02)

    def test_sliding_corner_saturates_friction_cone(self, robot):
        st = upright_stance(z=0.8395)  # ~1 mm penetration
        st.base_twist[3] = 1.0
        recs = M.contact_resolve(robot, st, 0.8, 0.002)
        active = [r for r in recs if r.active]
        assert active
        for r in active:
            lt = np.linalg.norm(r.tangential_impulse)
            assert lt == pytest.approx(0.8 * r.normal_impulse, rel=1e-6)

    def test_friction_cone_never_exceeded(self, robot):
        rng = np.random.default_rng(6)
        for _ in range(200):
            st = O.random_state(rng)
            st.base_position[2] = rng.uniform(0.2, 0.9)
            recs = M.contact_resolve(robot, st, 0.6, 0.002)
            for r in recs:
                assert np.linalg.norm(r.tangential_impulse) <= 0.6 * r.normal_impulse + 1e-9

    def test_jacobian_matches_finite_differences(self, robot):
        rng = np.random.default_rng(7)
        st = O.random_state(rng)
        st.base_position[2] = 0.4
        recs = M.contact_resolve(robot, st, 0.7, 0.002)
        for k, rec in enumerate(recs):
            ref = O.foot_point_jacobian_fd(robot, st, robot.foot_corners[k])
            np.testing.assert_allclose(rec.jacobian, ref, atol=1e-8)


class TestStep:
    def test_ballistic_energy_drift(self, robot):
        st = tumble_state()
        e0 = O.total_energy(robot, st)
        s = st
        for _ in range(250):
            s, _ = M.step(robot, s, np.zeros(3), 0.002)
        assert abs(O.total_energy(robot, s) - e0) < 1e-3

    def test_ballistic_momentum_conservation(self, robot):
        st = tumble_state()
        s = st
        _, p_prev, l_prev, _ = O.momenta(robot, st)
        expect = robot.total_mass * robot.gravity * 0.002
        for _ in range(250):
            s, recs = M.step(robot, s, np.zeros(3), 0.002)
            assert not any(r.active for r in recs)
            _, p, l, _ = O.momenta(robot, s)
            assert np.abs(l - l_prev).max() < 1e-8           # per-step CAM drift
            assert np.abs(p - p_prev - expect).max() < 1e-10 * np.linalg.norm(expect)
            p_prev, l_prev = p, l

    def test_contact_impulse_balances_momentum_change(self, robot):
        # Newton's third law bookkeeping: the robot's momentum change equals
        # gravity plus the reported ground impulses, so the ground sees the
        # exact opposite of what the records say.
        s = upright_stance(z=0.86)  # small drop so contacts fire
        for _ in range(100):
            _, p_before, _, _ = O.momenta(robot, s)
            s, recs = M.step(robot, s, np.zeros(3), 0.002)
            _, p_after, _, _ = O.momenta(robot, s)
            impulse = sum(r.impulse() for r in recs)
            expected = robot.total_mass * robot.gravity * 0.002 + impulse
            np.testing.assert_allclose(p_after - p_before, expected, atol=1e-9)

    def test_rest_on_ground_holds_pose(self, robot):
        s = upright_stance()
        q0 = s.q.copy()
        for _ in range(500):
            s, _ = M.step(robot, s, np.zeros(3), 0.002)
        assert np.abs(s.q - q0).max() < 1e-3

    def test_quaternion_stays_unit(self, robot):
        s = tumble_state()
        for _ in range(200):
            s, _ = M.step(robot, s, np.zeros(3), 0.002)
            assert abs(np.linalg.norm(s.base_orientation) - 1.0) < 1e-9

    def test_nonfinite_torque_rejected(self, robot):
        with pytest.raises(ValueError):
            M.step(robot, upright_stance(), np.array([np.nan, 0, 0]), 0.002)

    def test_diverged_integration_reported(self, robot):
        st = M.GeneralizedState([0, 0, 1.0], [1, 0, 0, 0],
                                [1e200, 0, 0, 0, 0, 0], np.zeros(3), np.zeros(3))
        with pytest.raises(M.SimulationDivergedError):
            M.step(robot, st, np.zeros(3), 0.002)


class TestModelTypes:
    def test_total_mass(self, robot):
        assert robot.total_mass == pytest.approx(12.45)

    def test_joint_limits_match_published_values(self, robot):
        np.testing.assert_allclose(robot.joint_pos_lo, [-0.4, -0.873, -0.4])
        np.testing.assert_allclose(robot.joint_pos_hi, [2.15, 0.698, 0.4])
        np.testing.assert_allclose(robot.joint_vel_limit, [8.0, 12.0, 12.0])

    def test_link_invariants_enforced(self):
        with pytest.raises(ValueError):
            M.LinkParams(-1.0, np.zeros(3), np.eye(3), 0.3)
        with pytest.raises(ValueError):
            M.LinkParams(1.0, np.zeros(3), np.diag([1.0, 1.0, -0.1]), 0.3)
        with pytest.raises(ValueError):
            # triangle inequality: Izz > Ixx + Iyy is unphysical
            M.LinkParams(1.0, np.zeros(3), np.diag([0.1, 0.1, 0.5]), 0.3)

    def test_json_roundtrip(self, robot, tmp_path):
        path = tmp_path / "model.json"
        M.save_model(robot, path)
        loaded = M.load_model(path)
        assert loaded.total_mass == pytest.approx(robot.total_mass)
        np.testing.assert_allclose(loaded.links[0].inertia, robot.links[0].inertia)
        np.testing.assert_allclose(loaded.foot_corners, robot.foot_corners)
        st = tumble_state()
        np.testing.assert_allclose(M.mass_matrix(loaded, st), M.mass_matrix(robot, st))

    def test_json_overrides_apply(self, robot, tmp_path):
        doc = M.model_to_dict(robot)
        doc["links"]["thigh"]["mass"] = 8.0
        import json
        path = tmp_path / "model.json"
        path.write_text(json.dumps(doc))
        loaded = M.load_model(str(path))
        assert loaded.total_mass == pytest.approx(8.0 + 3.89 + 0.96)
