"""Numerical core for the hopper dynamics.

Everything in this file operates on plain float64 ndarrays so the functions
can be compiled with numba; small fixed-size products are written as explicit
loops because BLAS dispatch dominates at these sizes. Set
HOPPERFLIP_PURE_PYTHON=1 to skip JIT (slow, useful for debugging).

Conventions:
  - quaternions are wxyz, body-to-world
  - generalized velocity u (9,) = [base angular (world), base linear (world),
    joint rates]
  - 6D spatial vectors are [angular; linear], referenced at the world origin
    ("Plucker coordinates at O"); momentum about the origin is h_O = I_O @ V
  - internal bodies are 0=thigh (floating base), 1=calf, 2=massless ankle
    carrier, 3=foot; joint j connects body j to body j+1
"""

from __future__ import annotations

import os

import numpy as np

if os.environ.get("HOPPERFLIP_PURE_PYTHON"):
    def njit(*args, **kwargs):  # noqa: D103 - decorator shim
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
else:
    from numba import njit


@njit(cache=True)
def _matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for l in range(k):
            ail = a[i, l]
            if ail == 0.0:
                continue
            for j in range(n):
                out[i, j] += ail * b[l, j]
    return out


@njit(cache=True)
def _matvec(a, v):
    m, k = a.shape
    out = np.zeros(m)
    for i in range(m):
        s = 0.0
        for l in range(k):
            s += a[i, l] * v[l]
        out[i] = s
    return out


@njit(cache=True)
def _matvec_t(a, v):
    # a.T @ v
    m, k = a.shape
    out = np.zeros(k)
    for i in range(m):
        vi = v[i]
        for l in range(k):
            out[l] += a[i, l] * vi
    return out


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _cholesky_solve(a, b):
    """Solve a @ x = b for SPD a; b is (n, m)."""
    n = a.shape[0]
    m = b.shape[1]
    lo = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= lo[i, k] * lo[j, k]
            if i == j:
                lo[i, i] = np.sqrt(s)
            else:
                lo[i, j] = s / lo[j, j]
    x = np.empty((n, m))
    for c in range(m):
        for i in range(n):
            s = b[i, c]
            for k in range(i):
                s -= lo[i, k] * x[k, c]
            x[i, c] = s / lo[i, i]
        for i in range(n - 1, -1, -1):
            s = x[i, c]
            for k in range(i + 1, n):
                s -= lo[k, i] * x[k, c]
            x[i, c] = s / lo[i, i]
    return x


@njit(cache=True)
def _skew(v):
    out = np.zeros((3, 3))
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    return out


@njit(cache=True)
def quat_to_rot(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out = np.empty((3, 3))
    out[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[0, 1] = 2.0 * (x * y - z * w)
    out[0, 2] = 2.0 * (x * z + y * w)
    out[1, 0] = 2.0 * (x * y + z * w)
    out[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[1, 2] = 2.0 * (y * z - x * w)
    out[2, 0] = 2.0 * (x * z - y * w)
    out[2, 1] = 2.0 * (y * z + x * w)
    out[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


@njit(cache=True)
def _rot_axis_angle(axis, angle):
    # Rodrigues; axis must be unit length.
    k = _skew(axis)
    kk = _matmul(k, k)
    sa = np.sin(angle)
    ca = 1.0 - np.cos(angle)
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = (1.0 if i == j else 0.0) + sa * k[i, j] + ca * kk[i, j]
    return out


@njit(cache=True)
def quat_integrate(q, omega_world, dt):
    """Advance a body-to-world quaternion by a world-frame angular velocity."""
    wn = np.sqrt(omega_world[0] ** 2 + omega_world[1] ** 2 + omega_world[2] ** 2)
    th = wn * dt
    dq = np.empty(4)
    if th < 1e-12:
        dq[0] = 1.0
        dq[1] = 0.5 * omega_world[0] * dt
        dq[2] = 0.5 * omega_world[1] * dt
        dq[3] = 0.5 * omega_world[2] * dt
    else:
        half = 0.5 * th
        s = np.sin(half) / wn
        dq[0] = np.cos(half)
        dq[1] = s * omega_world[0]
        dq[2] = s * omega_world[1]
        dq[3] = s * omega_world[2]
    # world-frame rate -> left multiply
    out = np.empty(4)
    out[0] = dq[0] * q[0] - dq[1] * q[1] - dq[2] * q[2] - dq[3] * q[3]
    out[1] = dq[0] * q[1] + dq[1] * q[0] + dq[2] * q[3] - dq[3] * q[2]
    out[2] = dq[0] * q[2] - dq[1] * q[3] + dq[2] * q[0] + dq[3] * q[1]
    out[3] = dq[0] * q[3] + dq[1] * q[2] - dq[2] * q[1] + dq[3] * q[0]
    n = np.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
    return out / n


@njit(cache=True)
def fk(pos, quat, qj, jattach, jaxis, com_local, inertia_local):
    """Forward kinematics for the 4-body chain.

    Returns body rotations R (4,3,3), body origins p (4,3), world joint
    anchors s (3,3), world joint axes a (3,3), world COMs c (4,3) and world
    COM inertias iw (4,3,3).
    """
    r = np.empty((4, 3, 3))
    p = np.empty((4, 3))
    s = np.empty((3, 3))
    a = np.empty((3, 3))
    c = np.empty((4, 3))
    iw = np.empty((4, 3, 3))
    r[0] = quat_to_rot(quat)
    p[0] = pos
    for j in range(3):
        s[j] = p[j] + _matvec(r[j], jattach[j])
        a[j] = _matvec(r[j], jaxis[j])
        r[j + 1] = _matmul(r[j], _rot_axis_angle(jaxis[j], qj[j]))
        p[j + 1] = s[j]
    for i in range(4):
        c[i] = p[i] + _matvec(r[i], com_local[i])
        tmp = _matmul(r[i], inertia_local[i])
        for row in range(3):
            for col in range(3):
                v = 0.0
                for k in range(3):
                    v += tmp[row, k] * r[i, col, k]
                iw[i, row, col] = v
    return r, p, s, a, c, iw


@njit(cache=True)
def _phi_columns(p0, s, a):
    """Motion subspace columns in origin coordinates, one per generalized speed."""
    phi = np.zeros((6, 9))
    for k in range(3):
        phi[k, k] = 1.0
        phi[3 + k, 3 + k] = 1.0
    # v at origin contributed by base angular rate: p0 x e_k
    phi[4, 0] = p0[2]
    phi[5, 0] = -p0[1]
    phi[3, 1] = -p0[2]
    phi[5, 1] = p0[0]
    phi[3, 2] = p0[1]
    phi[4, 2] = -p0[0]
    for j in range(3):
        sxa = _cross(s[j], a[j])
        for k in range(3):
            phi[k, 6 + j] = a[j, k]
            phi[3 + k, 6 + j] = sxa[k]
    return phi


@njit(cache=True)
def _spatial_inertias_origin(masses, c, iw):
    io = np.zeros((4, 6, 6))
    for i in range(4):
        m = masses[i]
        if m == 0.0:
            continue
        ci = c[i]
        ch = _skew(ci)
        cc = ci[0] * ci[0] + ci[1] * ci[1] + ci[2] * ci[2]
        for r_ in range(3):
            for q_ in range(3):
                io[i, r_, q_] = iw[i, r_, q_] + m * ((cc if r_ == q_ else 0.0) - ci[r_] * ci[q_])
                io[i, r_, 3 + q_] = m * ch[r_, q_]
                io[i, 3 + r_, q_] = -m * ch[r_, q_]
        io[i, 3, 3] = m
        io[i, 4, 4] = m
        io[i, 5, 5] = m
    return io


@njit(cache=True)
def _composites(io):
    ic = np.empty((4, 6, 6))
    ic[3] = io[3]
    ic[2] = io[2] + ic[3]
    ic[1] = io[1] + ic[2]
    ic[0] = io[0] + ic[1]
    return ic


@njit(cache=True)
def crba(phi, ic):
    """Composite-rigid-body mass matrix in the [base twist; joint rates] coords."""
    m = np.zeros((9, 9))
    tmp = _matmul(ic[0], phi[:, 0:6].copy())
    for i in range(6):
        for j in range(6):
            s = 0.0
            for k in range(6):
                s += phi[k, i] * tmp[k, j]
            m[i, j] = s
    for j in range(3):
        fj = np.zeros(6)
        for r_ in range(6):
            s = 0.0
            for k in range(6):
                s += ic[j + 1, r_, k] * phi[k, 6 + j]
            fj[r_] = s
        for k in range(6):
            s = 0.0
            for r_ in range(6):
                s += phi[r_, k] * fj[r_]
            m[k, 6 + j] = s
            m[6 + j, k] = s
        for i in range(j + 1):
            s = 0.0
            for r_ in range(6):
                s += phi[r_, 6 + i] * fj[r_]
            m[6 + i, 6 + j] = s
            m[6 + j, 6 + i] = s
    return m


@njit(cache=True)
def _crm_apply(v, m):
    # motion cross product: v x m
    out = np.empty(6)
    out[0:3] = _cross(v[0:3], m[0:3])
    out[3:6] = _cross(v[3:6], m[0:3]) + _cross(v[0:3], m[3:6])
    return out


@njit(cache=True)
def _crf_apply(v, f):
    # force cross product: v x* f
    out = np.empty(6)
    out[0:3] = _cross(v[0:3], f[0:3]) + _cross(v[3:6], f[3:6])
    out[3:6] = _cross(v[0:3], f[3:6])
    return out


@njit(cache=True)
def rnea_bias(phi, io, u, gravity):
    """Coriolis/centrifugal plus gravity bias such that M du + c = tau_gen."""
    vb = np.empty((4, 6))
    for r_ in range(6):
        s = 0.0
        for k in range(6):
            s += phi[r_, k] * u[k]
        vb[0, r_] = s
    for j in range(3):
        for r_ in range(6):
            vb[j + 1, r_] = vb[j, r_] + phi[r_, 6 + j] * u[6 + j]

    ab = np.empty((4, 6))
    ab[0, 0:3] = 0.0
    # fictitious base acceleration replaces gravity; the second term is the
    # rate of the origin-referenced base columns (they depend on base position)
    ab[0, 3:6] = -gravity + _cross(u[3:6], u[0:3])
    for j in range(3):
        sq = phi[:, 6 + j].copy() * u[6 + j]
        ab[j + 1] = ab[j] + _crm_apply(vb[j], sq)

    fb = np.empty((4, 6))
    for i in range(4):
        hi = _matvec(io[i], vb[i])
        fb[i] = _matvec(io[i], ab[i]) + _crf_apply(vb[i], hi)

    fc = np.empty((4, 6))
    fc[3] = fb[3]
    fc[2] = fb[2] + fc[3]
    fc[1] = fb[1] + fc[2]
    fc[0] = fb[0] + fc[1]

    c = np.empty(9)
    for k in range(6):
        s = 0.0
        for r_ in range(6):
            s += phi[r_, k] * fc[0, r_]
        c[k] = s
    for j in range(3):
        s = 0.0
        for r_ in range(6):
            s += phi[r_, 6 + j] * fc[j + 1, r_]
        c[6 + j] = s
    return c


@njit(cache=True)
def point_velocity(x, p0, s, a, u):
    """World velocity of a point fixed on the foot body."""
    v = u[3:6] + _cross(u[0:3], x - p0)
    for j in range(3):
        v += u[6 + j] * _cross(a[j], x - s[j])
    return v


@njit(cache=True)
def point_jacobian(x, p0, s, a):
    jac = np.zeros((3, 9))
    r0 = x - p0
    jac[0, 1] = r0[2]
    jac[0, 2] = -r0[1]
    jac[1, 0] = -r0[2]
    jac[1, 2] = r0[0]
    jac[2, 0] = r0[1]
    jac[2, 1] = -r0[0]
    jac[0, 3] = 1.0
    jac[1, 4] = 1.0
    jac[2, 5] = 1.0
    for j in range(3):
        col = _cross(a[j], x - s[j])
        jac[0, 6 + j] = col[0]
        jac[1, 6 + j] = col[1]
        jac[2, 6 + j] = col[2]
    return jac


@njit(cache=True)
def _contact_eval(r, p, s, a, u, corners, stiffness, damping, mu, v_slip):
    active = np.zeros(4)
    force = np.zeros((4, 3))
    point = np.zeros((4, 3))
    jac = np.zeros((4, 3, 9))
    pen = np.zeros(4)
    slope = np.zeros((4, 2))  # [tangential, normal] force-velocity slopes
    for k in range(4):
        x = p[3] + _matvec(r[3], corners[k])
        point[k] = x
        jac[k] = point_jacobian(x, p[0], s, a)
        d = -x[2]
        if d <= 0.0:
            continue
        active[k] = 1.0
        pen[k] = d
        v = point_velocity(x, p[0], s, a, u)
        fn = stiffness * d + damping * (-v[2])
        if fn < 0.0:
            fn = 0.0
        vt = np.sqrt(v[0] * v[0] + v[1] * v[1])
        th = np.tanh(vt / v_slip)
        if vt > 1e-12 and fn > 0.0:
            ft = -mu * fn * th / vt
            force[k, 0] = ft * v[0]
            force[k, 1] = ft * v[1]
        force[k, 2] = fn
        if fn > 0.0:
            slope[k, 0] = mu * fn * (1.0 - th * th) / v_slip
            slope[k, 1] = damping
    return active, force, point, jac, pen, slope


@njit(cache=True)
def contacts(pos, quat, qj, u, jattach, jaxis, com_local, inertia_local,
             corners, stiffness, damping, mu, v_slip):
    """Compliant plane contact at the four foot corners.

    Normal: spring-damper on penetration, clamped to be non-adhesive.
    Tangential: Coulomb friction with a smooth tanh saturation of the slip
    direction so the cone bound is never exceeded.
    """
    r, p, s, a, c, iw = fk(pos, quat, qj, jattach, jaxis, com_local, inertia_local)
    active, force, point, jac, pen, _slope = _contact_eval(
        r, p, s, a, u, corners, stiffness, damping, mu, v_slip)
    return active, force, point, jac, pen


@njit(cache=True)
def cmm_from_composite(ic, phi, com):
    """Centroidal momentum matrix, rows [linear momentum; angular about COM].

    Base columns see the whole-robot composite; joint column j only moves the
    subtree hanging off that joint, so it sees the subtree composite.
    """
    ao = np.empty((6, 9))
    for col in range(9):
        blk = 0 if col < 6 else col - 5
        for r_ in range(6):
            s = 0.0
            for k in range(6):
                s += ic[blk, r_, k] * phi[k, col]
            ao[r_, col] = s
    out = np.empty((6, 9))
    for col in range(9):
        px = ao[3, col]
        py = ao[4, col]
        pz = ao[5, col]
        out[0, col] = px
        out[1, col] = py
        out[2, col] = pz
        out[3, col] = ao[0, col] - (com[1] * pz - com[2] * py)
        out[4, col] = ao[1, col] - (com[2] * px - com[0] * pz)
        out[5, col] = ao[2, col] - (com[0] * py - com[1] * px)
    return out


@njit(cache=True)
def centroidal_sums(masses, c, iw, p0, s, a, u):
    """Per-link momentum summation: COM, linear/angular momentum, locked inertia."""
    mtot = 0.0
    com = np.zeros(3)
    for i in range(4):
        mtot += masses[i]
        com += masses[i] * c[i]
    com /= mtot

    w = np.empty((4, 3))
    w[0] = u[0:3]
    for j in range(3):
        w[j + 1] = w[j] + a[j] * u[6 + j]

    pmom = np.zeros(3)
    lmom = np.zeros(3)
    icom = np.zeros((3, 3))
    for i in range(4):
        if masses[i] == 0.0:
            continue
        vci = u[3:6] + _cross(u[0:3], c[i] - p0)
        for j in range(3):
            if i >= j + 1:
                vci += u[6 + j] * _cross(a[j], c[i] - s[j])
        pmom += masses[i] * vci
        rrel = c[i] - com
        lmom += _matvec(iw[i], w[i]) + masses[i] * _cross(rrel, vci)
        rr = rrel[0] ** 2 + rrel[1] ** 2 + rrel[2] ** 2
        for r_ in range(3):
            for q_ in range(3):
                icom[r_, q_] += iw[i, r_, q_] + masses[i] * ((rr if r_ == q_ else 0.0) - rrel[r_] * rrel[q_])
    return com, pmom, lmom, icom, mtot


@njit(cache=True)
def step_kernel(pos, quat, qj, u, tau_joint, dt,
                masses, jattach, jaxis, com_local, inertia_local,
                corners, stiffness, damping, mu, v_slip, gravity,
                joint_damping):
    """One integration step with a 6D momentum-consistency correction.

    Velocity update: explicit impulse integration of M du = (tau_gen + J^T F
    - c) dt at the old configuration. Pose update: trapezoidal in the old/new
    velocities (removes the secular free-fall energy bias a pure symplectic
    Euler position rule would have). The velocity is then corrected (minimal
    M-norm change) so the centroidal momentum at the returned state matches
    the impulse bookkeeping exactly; the correction is within the
    integrator's own O(dt^2) error and makes flight-phase momentum
    conservation hold to solver precision.

    ``joint_damping`` (3,) is the viscous joint-rate coefficient handled
    implicitly: the explicit -kd*qd part must already be inside
    ``tau_joint``; here only dt*kd lands on the joint diagonal of M, which
    keeps light-foot stance stable at this timestep. Joint torques are
    internal forces, so the momentum bookkeeping is unaffected.
    """
    r, p, s, a, c, iw = fk(pos, quat, qj, jattach, jaxis, com_local, inertia_local)
    io = _spatial_inertias_origin(masses, c, iw)
    ic = _composites(io)
    phi = _phi_columns(p[0], s, a)
    mm = crba(phi, ic)
    bias = rnea_bias(phi, io, u, gravity)

    active, force, point, jac, pen, slope = _contact_eval(
        r, p, s, a, u, corners, stiffness, damping, mu, v_slip)

    tau_gen = np.zeros(9)
    tau_gen[6:9] = tau_joint
    com_old, pmom, lmom, icom, mtot = centroidal_sums(masses, c, iw, p[0], s, a, u)
    for k in range(4):
        if active[k] == 0.0:
            continue
        tau_gen += _matvec_t(jac[k], force[k])
        # contact damping and the friction regularization slope are explicit-
        # unstable on the light foot at this timestep; linearize them in the
        # new velocity by folding dt * J^T D J into the solve matrix
        for row in range(3):
            dcoef = dt * slope[k, 0 if row < 2 else 1]
            if dcoef == 0.0:
                continue
            for i in range(9):
                ji = dcoef * jac[k, row, i]
                if ji == 0.0:
                    continue
                for jj in range(9):
                    mm[i, jj] += ji * jac[k, row, jj]

    for j in range(3):
        mm[6 + j, 6 + j] += dt * joint_damping[j]
    rhs = np.empty((9, 1))
    for i in range(9):
        rhs[i, 0] = tau_gen[i] - bias[i]
    qdd = _cholesky_solve(mm, rhs)[:, 0]
    u_half = u + dt * qdd

    # the implicitly integrated damping changed the force that actually
    # acted; report that force and keep the momentum bookkeeping consistent
    # with it (tangential part re-clamped into the friction cone)
    du = u_half - u
    fsum = np.zeros(3)
    msum = np.zeros(3)
    for k in range(4):
        if active[k] == 0.0:
            continue
        dv = _matvec(jac[k], du)
        fx = force[k, 0] - slope[k, 0] * dv[0]
        fy = force[k, 1] - slope[k, 0] * dv[1]
        fn = force[k, 2] - slope[k, 1] * dv[2]
        if fn < 0.0:
            fn = 0.0
        ft = np.sqrt(fx * fx + fy * fy)
        cap = mu * fn
        if ft > cap:
            scale_t = cap / ft if ft > 0.0 else 0.0
            fx *= scale_t
            fy *= scale_t
        force[k, 0] = fx
        force[k, 1] = fy
        force[k, 2] = fn
        fsum += force[k]
        msum += _cross(point[k] - com_old, force[k])

    # trapezoidal pose update (forces stay explicit)
    u_mid = 0.5 * (u + u_half)
    pos_new = pos + dt * u_mid[3:6]
    quat_new = quat_integrate(quat, u_mid[0:3], dt)
    qj_new = qj + dt * u_mid[6:9]

    # momentum targets from the impulses as reported
    h_target = np.empty(6)
    h_target[0:3] = pmom + dt * (mtot * gravity + fsum)
    h_target[3:6] = lmom + dt * msum

    r2, p2, s2, a2, c2, iw2 = fk(pos_new, quat_new, qj_new, jattach, jaxis,
                                 com_local, inertia_local)
    io2 = _spatial_inertias_origin(masses, c2, iw2)
    ic2 = _composites(io2)
    phi2 = _phi_columns(p2[0], s2, a2)
    com_new = np.zeros(3)
    for i in range(4):
        com_new += masses[i] * c2[i]
    com_new /= mtot
    ag = cmm_from_composite(ic2, phi2, com_new)

    defect = h_target - _matvec(ag, u_half)
    x = _cholesky_solve(mm, ag.T.copy())          # (9,6)
    kk = _matmul(ag, x)                           # (6,6) SPD
    dd = np.empty((6, 1))
    for i in range(6):
        dd[i, 0] = defect[i]
    lam = _cholesky_solve(kk, dd)[:, 0]
    u_new = u_half + _matvec(x, lam)

    return pos_new, quat_new, qj_new, u_new, active, force, point, jac, pen
