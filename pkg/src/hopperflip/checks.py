"""Built-in verification suites: dynamics conservation laws, centroidal
identities, barrier smoothness, operating-region containment, advantage
estimation against brute force, and network gradient checks.

Each suite returns (name, passed, detail) tuples; the CLI ``check`` command
prints one line per result and fails the process if any check fails.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as _k
from .actuator import MorEnvelope, box_clip, mor_clip
from .centroidal import centroidal_state, cmm
from .learn import LearnConfig, Agent, gae
from .model import GeneralizedState, contact_resolve, default_model, mass_matrix, step
from .nets import Mlp
from .rewards import relaxed_log_barrier
from .transmission import accumulate_and_finalize, instantaneous_load, overload_termination

Result = tuple[str, bool, str]


def _random_state(rng, airborne=False) -> GeneralizedState:
    quat = rng.normal(size=4)
    quat /= np.linalg.norm(quat)
    z = rng.uniform(1.5, 2.5) if airborne else rng.uniform(0.3, 1.0)
    return GeneralizedState(
        base_position=np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), z]),
        base_orientation=quat,
        base_twist=rng.uniform(-2, 2, size=6),
        q=rng.uniform([-0.4, -0.873, -0.4], [2.15, 0.698, 0.4]),
        qdot=rng.uniform(-4, 4, size=3))


def _energy_and_momenta(model, state):
    """Per-link total energy and centroidal momenta (direct summation)."""
    (masses, jattach, jaxis, com_local, inertia_local, *_r) = model.packed()
    r, p, s, a, c, iw = _k.fk(state.base_position, state.base_orientation, state.q,
                              jattach, jaxis, com_local, inertia_local)
    u = state.generalized_velocity()
    w = [u[0:3]]
    for j in range(3):
        w.append(w[-1] + a[j] * u[6 + j])
    energy = 0.0
    for i in range(4):
        if masses[i] == 0.0:
            continue
        vci = u[3:6] + np.cross(u[0:3], c[i] - p[0])
        for j in range(min(i, 3)):  # only ancestor joints move this body
            vci = vci + u[6 + j] * np.cross(a[j], c[i] - s[j])
        energy += 0.5 * masses[i] * float(vci @ vci)
        energy += 0.5 * float(w[i] @ iw[i] @ w[i])
        energy -= masses[i] * float(model.gravity @ c[i])
    com, pmom, lmom, icom, mtot = _k.centroidal_sums(masses, c, iw, p[0], s, a, u)
    return energy, pmom, lmom


def dynamics_suite(n_states: int = 1000, seed: int = 0) -> list[Result]:
    model = default_model()
    rng = np.random.default_rng(seed)
    out = []

    worst_asym, min_eig = 0.0, np.inf
    for _ in range(n_states):
        mm = mass_matrix(model, _random_state(rng))
        worst_asym = max(worst_asym, float(np.abs(mm - mm.T).max()))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(mm)[0]))
    out.append(("mass matrix symmetric", worst_asym < 1e-12,
                f"max asymmetry {worst_asym:.2e} over {n_states} states"))
    out.append(("mass matrix positive definite", min_eig > 0.0,
                f"min eigenvalue {min_eig:.3e}"))

    st = GeneralizedState([0, 0, 2.0], [1, 0, 0, 0], [0.0, 1.5, 0.0, 0.3, 0.0, 1.5],
                          [0.5, -0.3, 0.1], [1.0, -0.5, 0.2])
    e0, p_prev, l_prev = _energy_and_momenta(model, st)
    s = st
    worst_l, worst_p, worst_quat = 0.0, 0.0, 0.0
    dp_expected = model.total_mass * model.gravity * 0.002
    contact_seen = False
    for _ in range(250):
        s, recs = step(model, s, np.zeros(3), 0.002)
        contact_seen = contact_seen or any(r.active for r in recs)
        e, pm, lm = _energy_and_momenta(model, s)
        worst_l = max(worst_l, float(np.abs(lm - l_prev).max()))
        worst_p = max(worst_p, float(np.abs(pm - p_prev - dp_expected).max()
                                     / np.linalg.norm(dp_expected)))
        worst_quat = max(worst_quat, abs(float(np.linalg.norm(s.base_orientation)) - 1.0))
        p_prev, l_prev = pm, lm
    e1, *_ = _energy_and_momenta(model, s)
    out.append(("flight stays ballistic", not contact_seen, "no contact during drop"))
    out.append(("ballistic energy drift < 1e-3 J / 0.5 s", abs(e1 - e0) < 1e-3,
                f"drift {abs(e1 - e0):.2e} J"))
    out.append(("flight angular momentum drift < 1e-8 per step", worst_l < 1e-8,
                f"max per-step drift {worst_l:.2e}"))
    out.append(("flight linear momentum step = m g dt (1e-10 rel)", worst_p < 1e-10,
                f"max rel deviation {worst_p:.2e}"))
    out.append(("unit quaternion after every step", worst_quat < 1e-9,
                f"max norm error {worst_quat:.2e}"))

    s = GeneralizedState([0, 0, 0.84], [1, 0, 0, 0], np.zeros(6), np.zeros(3), np.zeros(3))
    for _ in range(500):
        s, recs = step(model, s, np.zeros(3), 0.002)
    support = sum(r.normal_impulse for r in recs) / 0.002
    weight = model.total_mass * 9.81
    out.append(("settled stance supports the weight (2%)",
                abs(support - weight) / weight < 0.02,
                f"support {support:.2f} N vs weight {weight:.2f} N"))
    return out


def cmm_suite(n_states: int = 1000, seed: int = 1) -> list[Result]:
    model = default_model()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_states):
        st = _random_state(rng)
        h = cmm(model, st) @ st.generalized_velocity()
        cs = centroidal_state(model, st)
        ref = np.concatenate([cs.p_com, cs.L_com])
        worst = max(worst, float(np.abs(h - ref).max() / max(1.0, np.abs(ref).max())))
    results = [("CMM matches per-link momentum summation (1e-9 rel)", worst < 1e-9,
                f"max rel deviation {worst:.2e} over {n_states} states")]

    worst_rigid = 0.0
    for _ in range(50):
        st = _random_state(rng)
        st.qdot[:] = 0.0
        omega = rng.uniform(-3, 3, size=3)
        cs0 = centroidal_state(model, st)
        st.base_twist[0:3] = omega
        st.base_twist[3:6] = np.cross(omega, st.base_position - cs0.com)
        cs = centroidal_state(model, st)
        worst_rigid = max(worst_rigid, float(np.abs(cs.w_com - omega).max()))
    results.append(("locked joints reduce to rigid-body rotation", worst_rigid < 1e-12,
                    f"max |w_com - omega| = {worst_rigid:.2e}"))
    return results


def barrier_suite(barrier=relaxed_log_barrier) -> list[Result]:
    out = []
    golden = barrier(0.0, -30.0, 30.0, 1.0)
    out.append(("barrier golden value b(0;-30,30,1) = 2 ln 30",
                abs(golden - 2.0 * math.log(30.0)) < 1e-12,
                f"value {golden:.12f}"))
    lower = barrier(-30.0, -30.0, 30.0, 1.0) - math.log(60.0)
    out.append(("barrier lower-branch f(0) = -1.5", abs(lower + 1.5) < 1e-9,
                f"f(0) = {lower:.9f}"))
    worst_jump, worst_slope = 0.0, 0.0
    for delta in (0.08, 1.0, 2.0):
        for x0 in (-30.0 + delta, 30.0 - delta):  # branch switch locations
            # a branch discontinuity of size J shows up as ~J in the second
            # difference; smooth curvature contributes only O(eps^2)
            eps = 1e-7
            jump = abs(barrier(x0 + eps, -30, 30, delta)
                       + barrier(x0 - eps, -30, 30, delta)
                       - 2.0 * barrier(x0, -30, 30, delta))
            worst_jump = max(worst_jump, jump)
    xs = np.linspace(-34.0, 34.0, 171)
    eps = 1e-6
    for x in xs:
        d1 = (barrier(x + eps, -30, 30, 1.0) - barrier(x - eps, -30, 30, 1.0)) / (2 * eps)
        zl, zh = x + 30.0, 30.0 - x
        ana = (1.0 / zl if zl >= 1.0 else -(zl - 2.0)) - (1.0 / zh if zh >= 1.0 else -(zh - 2.0))
        worst_slope = max(worst_slope, abs(d1 - ana))
    out.append(("barrier continuous at the branch switch", worst_jump < 1e-6,
                f"max jump {worst_jump:.2e}"))
    out.append(("barrier C1 (finite differences, 1e-6)", worst_slope < 1e-6,
                f"max slope error {worst_slope:.2e}"))
    return out


def mor_suite(n_samples: int = 1_000_000, seed: int = 2) -> list[Result]:
    env = MorEnvelope(tau_cur=45.0, omega_max=12.0, beta=5.625)
    rng = np.random.default_rng(seed)
    tau = rng.uniform(-200, 200, size=n_samples)
    omega = rng.uniform(-30, 30, size=n_samples)
    clipped = mor_clip(env, tau, omega)
    contained = bool(np.all(clipped <= env.upper(omega) + 1e-12)
                     and np.all(clipped >= env.lower(omega) - 1e-12))
    idem = float(np.abs(mor_clip(env, clipped, omega) - clipped).max())
    sym = float(np.abs(mor_clip(env, -tau, -omega) + clipped).max())
    inside = np.abs(omega) <= 8.0
    box = box_clip(tau[inside], omega[inside], env.tau_cur, 8.0)
    box_ok = float(np.abs(box - np.clip(tau[inside], -45, 45)).max())
    return [
        ("clipped torque contained in envelope", contained, f"{n_samples} samples"),
        ("clip idempotent", idem == 0.0, f"max change on re-clip {idem:.2e}"),
        ("envelope symmetric under sign flip", sym == 0.0, f"max asymmetry {sym:.2e}"),
        ("box mode reduces to static limits", box_ok == 0.0,
         f"max deviation {box_ok:.2e}"),
    ]


def transmission_suite(seed: int = 3) -> list[Result]:
    model = default_model()
    rng = np.random.default_rng(seed)
    out = []

    # virtual-work identity with finite-difference point Jacobians
    worst = 0.0
    tried = 0
    while tried < 5:
        st = _random_state(rng)
        st.base_position[2] = rng.uniform(0.25, 0.4)
        recs = contact_resolve(model, st, 0.7, 0.002)
        if not any(r.active for r in recs):
            continue
        tried += 1
        via_pkg = instantaneous_load(recs, 0.002)
        work = np.zeros(3)
        for k, rec in enumerate(recs):
            if not rec.active:
                continue
            jac_fd = _fd_point_jacobian(model, st, model.foot_corners[k])
            work += (jac_fd.T @ (rec.impulse() / 0.002))[6:9]
        scale = max(1.0, float(np.abs(work).max()))
        worst = max(worst, float(np.abs(via_pkg - work).max()) / scale)
    out.append(("J^T lambda matches virtual work (finite differences)",
                worst < 1e-6, f"max rel deviation {worst:.2e}"))

    seq = [np.array([10.0, -3.0, 1.0]) * (-1) ** i for i in range(10)]
    avg = accumulate_and_finalize(seq)
    out.append(("interval average uses absolute loads",
                bool(np.allclose(avg, [10.0, 3.0, 1.0])), f"tau_load {avg}"))

    n = 10_000
    hits = sum(overload_termination(np.array([50.0, 0, 0]), 45.0, rng) for _ in range(n))
    rate = hits / n
    out.append(("overload termination is a fair coin (0.50 +- 0.02)",
                0.48 <= rate <= 0.52, f"rate {rate:.4f} over {n} draws"))
    quiet = sum(overload_termination(np.array([44.0, 0, 0]), 45.0, rng)
                for _ in range(1000))
    out.append(("below threshold never terminates", quiet == 0, f"{quiet} fires"))
    return out


def _fd_point_jacobian(model, state, corner_local, eps: float = 1e-6) -> np.ndarray:
    (masses, jattach, jaxis, com_local, inertia_local, *_r) = model.packed()

    def corner_world(pos, quat, qj):
        r, p, *_ = _k.fk(pos, quat, qj, jattach, jaxis, com_local, inertia_local)
        return p[3] + r[3] @ corner_local

    jac = np.zeros((3, 9))
    for k in range(9):
        dpos_p, dpos_m = state.base_position.copy(), state.base_position.copy()
        dq_p, dq_m = state.q.copy(), state.q.copy()
        quat_p = quat_m = state.base_orientation
        if k < 3:
            axis = np.zeros(3)
            axis[k] = 1.0
            quat_p = _quat_left_rotate(state.base_orientation, axis * eps)
            quat_m = _quat_left_rotate(state.base_orientation, -axis * eps)
        elif k < 6:
            dpos_p[k - 3] += eps
            dpos_m[k - 3] -= eps
        else:
            dq_p[k - 6] += eps
            dq_m[k - 6] -= eps
        jac[:, k] = (corner_world(dpos_p, quat_p, dq_p)
                     - corner_world(dpos_m, quat_m, dq_m)) / (2 * eps)
    return jac


def _quat_left_rotate(quat, rotvec):
    angle = np.linalg.norm(rotvec)
    if angle < 1e-300:
        return quat.copy()
    axis = rotvec / angle
    dq = np.array([math.cos(angle / 2), *(math.sin(angle / 2) * axis)])
    w, x, y, z = dq
    ow, ox, oy, oz = quat
    return np.array([
        w * ow - x * ox - y * oy - z * oz,
        w * ox + x * ow + y * oz - z * oy,
        w * oy - x * oz + y * ow + z * ox,
        w * oz + x * oy - y * ox + z * ow])


def gae_suite(seed: int = 4) -> list[Result]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        t_len = 20
        rewards = rng.normal(size=(t_len, 1))
        values = rng.normal(size=(t_len + 1, 1))
        dones = (rng.random(size=(t_len, 1)) < 0.15).astype(float)
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.5, 1.0)
        adv, ret = gae(rewards, values, dones, gamma, lam)
        # brute force: summed discounted TD residuals, cut at episode ends
        ref = np.zeros_like(adv)
        for t in range(t_len):
            acc, disc = 0.0, 1.0
            for l_ in range(t, t_len):
                alive = 1.0 - dones[l_, 0]
                delta = rewards[l_, 0] + gamma * values[l_ + 1, 0] * alive - values[l_, 0]
                acc += disc * delta
                if dones[l_, 0]:
                    break
                disc *= gamma * lam
            ref[t, 0] = acc
        worst = max(worst, float(np.abs(adv - ref).max()))
    return [("advantage estimation matches brute force (1e-10)", worst < 1e-10,
             f"max deviation {worst:.2e}")]


def gradcheck_suite(seed: int = 5) -> list[Result]:
    rng = np.random.default_rng(seed)
    out = []
    worst = 0.0
    for sizes in ([5, 8, 7, 2], [6, 16, 1]):
        net = Mlp(sizes, rng, out_gain=0.7)
        x = rng.normal(size=(4, sizes[0]))
        coef = rng.normal(size=(4, sizes[-1]))
        y, cache = net.forward(x)
        gw, gb, gx = net.backward(cache, coef)
        worst = max(worst, _fd_check(net, x, coef, gw, gb))
    out.append(("dense net gradients match finite differences (1e-4 rel)",
                worst < 1e-4, f"max rel error {worst:.2e}"))

    agent = Agent(LearnConfig(hidden_policy=(16, 8), hidden_critic=(16, 8),
                              hidden_estimator=(16,)), rng)
    obs = rng.normal(size=(3, agent.policy.obs_dim))
    actions = rng.normal(size=(3, 3))
    mean, cache = agent.policy.forward(obs)
    logp = agent.policy.log_prob(actions, mean)
    dmu, dls = agent.policy.log_prob_grads(actions, mean)
    gw, gb, _ = agent.policy.net.backward(cache, dmu)
    worst_pi = _fd_check(agent.policy.net, obs, None, gw, gb,
                         loss=lambda: float(agent.policy.log_prob(
                             actions, agent.policy.forward(obs)[0]).sum()))
    eps = 1e-6
    ls_fd = np.zeros(3)
    for k in range(3):
        agent.policy.log_std[k] += eps
        up = float(agent.policy.log_prob(actions, mean).sum())
        agent.policy.log_std[k] -= 2 * eps
        dn = float(agent.policy.log_prob(actions, mean).sum())
        agent.policy.log_std[k] += eps
        ls_fd[k] = (up - dn) / (2 * eps)
    worst_ls = float(np.abs(dls.sum(axis=0) - ls_fd).max()
                     / max(1.0, np.abs(ls_fd).max()))
    out.append(("policy log-prob gradients match finite differences",
                max(worst_pi, worst_ls) < 1e-4,
                f"net {worst_pi:.2e}, log_std {worst_ls:.2e}"))
    return out


def _fd_check(net: Mlp, x, coef, gw, gb, loss=None, eps: float = 1e-6) -> float:
    if loss is None:
        def loss():
            return float((net.forward(x)[0] * coef).sum())
    worst = 0.0
    for arrs, grads in ((net.weights, gw), (net.biases, gb)):
        for arr, grad in zip(arrs, grads):
            flat = arr.ravel()
            idx = np.linspace(0, flat.size - 1, min(16, flat.size)).astype(int)
            for i in idx:
                old = flat[i]
                flat[i] = old + eps
                up = loss()
                flat[i] = old - eps
                dn = loss()
                flat[i] = old
                fd = (up - dn) / (2 * eps)
                scale = max(1.0, abs(fd))
                worst = max(worst, abs(grad.ravel()[i] - fd) / scale)
    return worst


ALL_SUITES = [
    ("dynamics", dynamics_suite),
    ("centroidal", cmm_suite),
    ("barrier", barrier_suite),
    ("operating-region", mor_suite),
    ("transmission", transmission_suite),
    ("advantage-estimation", gae_suite),
    ("gradients", gradcheck_suite),
]


def run_all(printer=print) -> bool:
    ok = True
    for suite_name, suite in ALL_SUITES:
        for name, passed, detail in suite():
            ok = ok and passed
            printer(f"[{'PASS' if passed else 'FAIL'}] {suite_name}: {name} ({detail})")
    return ok
