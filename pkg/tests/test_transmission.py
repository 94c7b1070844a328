import math

import numpy as np
import pytest

import oracles as O
from hopperflip import model as M
from hopperflip.model import ContactRecord
from hopperflip.transmission import (LoadAccumulator, accumulate_and_finalize,
                                     instantaneous_load, load_barrier,
                                     overload_termination)


def _record(jacobian, impulse, active=True):
    return ContactRecord(point=np.zeros(3), normal_impulse=float(impulse[2]),
                         tangential_impulse=np.asarray(impulse[0:2], dtype=float),
                         jacobian=np.asarray(jacobian, dtype=float), active=active)


class TestInstantaneousLoad:
    def test_no_contacts_zero(self):
        assert np.all(instantaneous_load([], 0.002) == 0.0)
        rec = _record(np.zeros((3, 9)), [1.0, 1.0, 1.0], active=False)
        assert np.all(instantaneous_load([rec], 0.002) == 0.0)

    def test_identity_jacobian_case(self):
        jac = np.zeros((3, 9))
        jac[:, 6:9] = np.eye(3)
        rec = _record(jac, [0.02, 0.0, 0.0])
        np.testing.assert_allclose(instantaneous_load([rec], 0.002), [10.0, 0.0, 0.0])

    def test_linearity_over_contacts(self):
        rng = np.random.default_rng(0)
        recs = [_record(rng.normal(size=(3, 9)), rng.normal(size=3) * 0.05)
                for _ in range(2)]
        total = instantaneous_load(recs, 0.002)
        parts = sum(instantaneous_load([r], 0.002) for r in recs)
        np.testing.assert_allclose(total, parts, atol=1e-12)

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        recs = [_record(rng.normal(size=(3, 9)), rng.normal(size=3) * 0.05)
                for _ in range(4)]
        a = instantaneous_load(recs, 0.002)
        b = instantaneous_load(list(reversed(recs)), 0.002)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_virtual_work_oracle_identity(self):
        # J^T lambda against work of the contact force under unit generalized
        # velocities, with finite-difference point Jacobians
        robot = M.default_model()
        rng = np.random.default_rng(2)
        st = O.random_state(rng)
        st.base_position[2] = 0.35
        recs = M.contact_resolve(robot, st, 0.7, 0.002)
        assert any(r.active for r in recs)
        via_pkg = instantaneous_load(recs, 0.002)
        work = np.zeros(9)
        for k, rec in enumerate(recs):
            if not rec.active:
                continue
            jac_fd = O.foot_point_jacobian_fd(robot, st, robot.foot_corners[k])
            force = rec.impulse() / 0.002
            work += jac_fd.T @ force
        scale = max(1.0, np.abs(work[6:9]).max())
        assert np.abs(via_pkg - work[6:9]).max() < 1e-6 * scale

    def test_dt_validation(self):
        with pytest.raises(ValueError):
            instantaneous_load([], 0.0)


class TestAccumulator:
    def test_constant_load(self):
        tau = accumulate_and_finalize([np.array([10.0, 0, 0])] * 10)
        np.testing.assert_allclose(tau, [10.0, 0, 0])

    def test_alternating_signs_average_absolutely(self):
        seq = [np.array([10.0, 0, 0]) * (-1) ** i for i in range(10)]
        np.testing.assert_allclose(accumulate_and_finalize(seq), [10.0, 0, 0])

    def test_all_zero(self):
        np.testing.assert_allclose(accumulate_and_finalize([np.zeros(3)] * 10), 0.0)

    def test_substep_order_invariance(self):
        rng = np.random.default_rng(3)
        seq = [rng.normal(size=3) for _ in range(10)]
        a = accumulate_and_finalize(seq)
        b = accumulate_and_finalize(list(reversed(seq)))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_premature_finalize_rejected(self):
        acc = LoadAccumulator(10)
        acc.add(np.ones(3))
        with pytest.raises(RuntimeError):
            acc.finalize()

    def test_overfill_rejected(self):
        acc = LoadAccumulator(1)
        acc.add(np.ones(3))
        with pytest.raises(RuntimeError):
            acc.add(np.ones(3))


class TestLoadBarrier:
    def test_zero_load_value(self):
        assert load_barrier(np.zeros(3)) == pytest.approx(6 * math.log(30.0), abs=1e-9)

    def test_monotone_toward_bound(self):
        assert load_barrier(np.array([29.5, 0, 0])) < load_barrier(np.zeros(3))

    def test_overload_strongly_negative(self):
        assert load_barrier(np.array([60.0, 0, 0])) < -300.0


class TestOverloadTermination:
    def test_below_threshold_never_terminates(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            assert not overload_termination(np.array([44.9, 0, 0]), 45.0, rng)

    def test_exactly_at_threshold_is_safe(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            assert not overload_termination(np.array([45.0, 45.0, 45.0]), 45.0, rng)

    def test_bernoulli_rate(self):
        rng = np.random.default_rng(6)
        n = 10_000
        hits = sum(overload_termination(np.array([46.0, 0, 0]), 45.0, rng)
                   for _ in range(n))
        assert 0.48 <= hits / n <= 0.52

    def test_negative_overload_counts(self):
        rng = np.random.default_rng(7)
        hits = sum(overload_termination(np.array([-50.0, 0, 0]), 45.0, rng)
                   for _ in range(2000))
        assert hits > 800

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            overload_termination(np.zeros(3), 0.0, np.random.default_rng(0))
