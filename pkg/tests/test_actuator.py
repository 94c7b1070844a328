import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hopperflip.actuator import (DEFAULT_ENVELOPES, DEFAULT_GAINS, MorEnvelope,
                                 PdGains, box_clip, joint_friction, mor_clip,
                                 pd_torque)

KNEE = MorEnvelope(tau_cur=45.0, omega_max=12.0, beta=5.625)


class TestPdTorque:
    def test_zero_error_zero_rate(self):
        g = PdGains(kp=[100, 60, 60], kd=[2, 1, 1])
        q = np.array([0.3, -0.2, 0.1])
        np.testing.assert_allclose(pd_torque(g, q, q, np.zeros(3)), 0.0)

    def test_direct_evaluation(self):
        g = PdGains(kp=[100.0] * 3, kd=[2.0] * 3)
        tau = pd_torque(g, np.array([0.1, 0.1, 0.1]), np.zeros(3), np.ones(3))
        np.testing.assert_allclose(tau, 8.0)

    def test_zero_gains(self):
        g = PdGains(kp=np.zeros(3), kd=np.zeros(3))
        tau = pd_torque(g, np.array([5, -3, 2.0]), np.array([1, 1, 1.0]), np.ones(3) * 7)
        np.testing.assert_allclose(tau, 0.0)

    def test_negative_gains_rejected(self):
        with pytest.raises(ValueError):
            PdGains(kp=[-1, 0, 0], kd=[0, 0, 0])


class TestMorClip:
    def test_interior_point_unchanged(self):
        assert mor_clip(KNEE, 30.0, 0.0) == 30.0

    def test_zero_drive_torque_at_top_speed(self):
        assert mor_clip(KNEE, 20.0, 12.0) == 0.0

    def test_braking_keeps_current_limit(self):
        assert mor_clip(KNEE, -40.0, 12.0) == -40.0
        assert KNEE.lower(12.0) == -45.0

    def test_degenerate_envelope_rejected(self):
        with pytest.raises(ValueError):
            MorEnvelope(tau_cur=45.0, omega_max=2.0, beta=1.0)

    @settings(max_examples=300, deadline=None)
    @given(tau=st.floats(-200, 200), omega=st.floats(-30, 30))
    def test_containment_and_idempotence(self, tau, omega):
        out = mor_clip(KNEE, tau, omega)
        assert KNEE.lower(omega) - 1e-12 <= out <= KNEE.upper(omega) + 1e-12
        assert mor_clip(KNEE, out, omega) == out

    @settings(max_examples=200, deadline=None)
    @given(tau=st.floats(-200, 200), omega=st.floats(-30, 30))
    def test_envelope_symmetry(self, tau, omega):
        assert mor_clip(KNEE, -tau, -omega) == pytest.approx(-mor_clip(KNEE, tau, omega))

    def test_vectorized(self):
        rng = np.random.default_rng(0)
        tau = rng.uniform(-100, 100, size=10_000)
        omega = rng.uniform(-20, 20, size=10_000)
        out = mor_clip(KNEE, tau, omega)
        assert np.all(out <= KNEE.upper(omega) + 1e-12)
        assert np.all(out >= KNEE.lower(omega) - 1e-12)

    def test_defaults_are_valid_trapezoids(self):
        for env in DEFAULT_ENVELOPES:
            assert env.beta * env.omega_max >= env.tau_cur


class TestBoxClip:
    def test_reduces_to_static_box_below_speed_limit(self):
        rng = np.random.default_rng(1)
        tau = rng.uniform(-100, 100, size=1000)
        omega = rng.uniform(-7.9, 7.9, size=1000)
        out = box_clip(tau, omega, 45.0, 8.0)
        np.testing.assert_allclose(out, np.clip(tau, -45.0, 45.0))

    def test_no_drive_past_speed_limit(self):
        assert box_clip(30.0, 9.0, 45.0, 8.0) == 0.0
        assert box_clip(-30.0, 9.0, 45.0, 8.0) == -30.0  # braking allowed


class TestJointFriction:
    def test_zero_rate_passthrough(self):
        tau = np.array([3.0, -2.0, 0.5])
        np.testing.assert_allclose(joint_friction(tau, np.zeros(3), [0.7, 1.0, 1.0]), tau)

    def test_direct_evaluation(self):
        out = joint_friction(np.array([10.0, 0, 0]), np.array([5.0, 0, 0]), [0.7, 1.0, 1.0])
        assert out[0] == pytest.approx(9.3, abs=1e-6)

    def test_sign_symmetry(self):
        qd = np.array([2.0, -3.0, 0.4])
        up = joint_friction(np.zeros(3), qd, [0.7, 1.0, 1.0])
        dn = joint_friction(np.zeros(3), -qd, [0.7, 1.0, 1.0])
        np.testing.assert_allclose(up, -dn)

    def test_magnitude_never_exceeds_coulomb(self):
        rng = np.random.default_rng(2)
        qd = rng.uniform(-20, 20, size=(100, 3))
        for row in qd:
            drop = np.abs(joint_friction(np.zeros(3), row, [0.7, 1.0, 1.0]))
            assert np.all(drop <= np.array([0.7, 1.0, 1.0]) + 1e-12)

    def test_negative_coulomb_rejected(self):
        with pytest.raises(ValueError):
            joint_friction(np.zeros(3), np.zeros(3), [-0.1, 0, 0])


def test_default_gains_shape():
    assert DEFAULT_GAINS.kp.shape == (3,)
    assert DEFAULT_GAINS.kd.shape == (3,)
