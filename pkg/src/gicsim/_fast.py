"""Numba kernels for the simulation hot path.

Raw-array implementations of the kinematics/dynamics/contact math used by
the public modules. Everything here operates on plain float64 arrays in the
(linear, angular) twist convention; the dataclass-facing wrappers live in
:mod:`gicsim.dynamics` and :mod:`gicsim.environment`.

The per-step cost matters: the transfer study integrates millions of steps,
so the inner loops are written with explicit scalar arithmetic instead of
vectorized numpy to keep allocations out of the loop.
"""

import numpy as np
from numba import njit

# controller kinds used by sim_chunk
KIND_GIC = 0
KIND_CIC = 1

# sim_chunk status codes
OK = 0
BLOWUP = 1

# trace row layout (one row per physics step, state measured before the step)
TRACE_EG = 0          # 0:6   GCEV
TRACE_EC = 6          # 6:12  Cartesian error vector
TRACE_FB = 12         # 12:18 feedback wrench (body for GIC, spatial for CIC)
TRACE_FEXT = 18       # 18:24 external contact wrench, body frame
TRACE_REWARD = 24
TRACE_ZOFF = 25       # hole-frame axial offset of the peg tip
TRACE_DP = 26         # hole-frame radial offset of the peg tip
TRACE_PSI = 27
TRACE_SUCCESS = 28
TRACE_QDMAX = 29      # inf-norm of qdot after the step
TRACE_P = 30          # 30:33 tip position, world frame
TRACE_QUAT = 33       # 33:37 orientation quaternion (w, x, y, z), w >= 0
TRACE_WIDTH = 37


@njit(cache=True)
def rot_exp_into(wx, wy, wz, R):
    """R = exp(hat([wx, wy, wz])); (1-cos)/t^2 via sinc^2(t/2)/2 so tiny
    angles stay exact."""
    th2 = wx * wx + wy * wy + wz * wz
    th = np.sqrt(th2)
    if th < 1e-9:
        a = 1.0 - th2 / 6.0
        s = 1.0 - th2 / 24.0
    else:
        a = np.sin(th) / th
        s = np.sin(0.5 * th) / (0.5 * th)
    b = 0.5 * s * s
    R[0, 0] = 1.0 + b * (-wy * wy - wz * wz)
    R[0, 1] = -a * wz + b * wx * wy
    R[0, 2] = a * wy + b * wx * wz
    R[1, 0] = a * wz + b * wx * wy
    R[1, 1] = 1.0 + b * (-wx * wx - wz * wz)
    R[1, 2] = -a * wx + b * wy * wz
    R[2, 0] = -a * wy + b * wx * wz
    R[2, 1] = a * wx + b * wy * wz
    R[2, 2] = 1.0 + b * (-wx * wx - wy * wy)


@njit(cache=True)
def se3_exp_into(vx, vy, vz, wx, wy, wz, R, p):
    """(R, p) = exp(hat([v; w])); translation via the left Jacobian of SO(3)."""
    rot_exp_into(wx, wy, wz, R)
    th2 = wx * wx + wy * wy + wz * wz
    th = np.sqrt(th2)
    if th < 1e-9:
        s = 1.0 - th2 / 24.0
    else:
        s = np.sin(0.5 * th) / (0.5 * th)
    c1 = 0.5 * s * s
    if th < 1e-4:
        c2 = 1.0 / 6.0 - th2 / 120.0
    else:
        c2 = (th - np.sin(th)) / (th2 * th)
    # V = I + c1*hat(w) + c2*hat(w)^2 ; p = V @ v
    cx = wy * vz - wz * vy
    cy = wz * vx - wx * vz
    cz = wx * vy - wy * vx
    ccx = wy * cz - wz * cy
    ccy = wz * cx - wx * cz
    ccz = wx * cy - wy * cx
    p[0] = vx + c1 * cx + c2 * ccx
    p[1] = vy + c1 * cy + c2 * ccy
    p[2] = vz + c1 * cz + c2 * ccz


@njit(cache=True)
def fk_prefix(twists, q, preR, prep):
    """Prefix products: preR[i], prep[i] = exp(xi_1 q_1) ... exp(xi_i q_i)."""
    n = q.shape[0]
    preR[0, 0, 0] = 1.0; preR[0, 0, 1] = 0.0; preR[0, 0, 2] = 0.0
    preR[0, 1, 0] = 0.0; preR[0, 1, 1] = 1.0; preR[0, 1, 2] = 0.0
    preR[0, 2, 0] = 0.0; preR[0, 2, 1] = 0.0; preR[0, 2, 2] = 1.0
    prep[0, 0] = 0.0; prep[0, 1] = 0.0; prep[0, 2] = 0.0
    Ri = np.empty((3, 3))
    pi = np.empty(3)
    for i in range(n):
        qi = q[i]
        se3_exp_into(twists[i, 0] * qi, twists[i, 1] * qi, twists[i, 2] * qi,
                     twists[i, 3] * qi, twists[i, 4] * qi, twists[i, 5] * qi,
                     Ri, pi)
        for r in range(3):
            prep[i + 1, r] = (preR[i, r, 0] * pi[0] + preR[i, r, 1] * pi[1]
                              + preR[i, r, 2] * pi[2] + prep[i, r])
            for c in range(3):
                preR[i + 1, r, c] = (preR[i, r, 0] * Ri[0, c]
                                     + preR[i, r, 1] * Ri[1, c]
                                     + preR[i, r, 2] * Ri[2, c])


@njit(cache=True)
def fk_raw(twists, g0R, g0p, q):
    """End-effector pose of the exponential-product chain."""
    n = q.shape[0]
    preR = np.empty((n + 1, 3, 3))
    prep = np.empty((n + 1, 3))
    fk_prefix(twists, q, preR, prep)
    R = np.empty((3, 3))
    p = np.empty(3)
    for r in range(3):
        p[r] = (preR[n, r, 0] * g0p[0] + preR[n, r, 1] * g0p[1]
                + preR[n, r, 2] * g0p[2] + prep[n, r])
        for c in range(3):
            R[r, c] = (preR[n, r, 0] * g0R[0, c] + preR[n, r, 1] * g0R[1, c]
                       + preR[n, r, 2] * g0R[2, c])
    return R, p


@njit(cache=True)
def spatial_jacobian_into(twists, preR, prep, Js):
    """Column j: Ad of the prefix up to joint j applied to twist j."""
    n = Js.shape[1]
    for j in range(n):
        R = preR[j]
        p = prep[j]
        wx = R[0, 0] * twists[j, 3] + R[0, 1] * twists[j, 4] + R[0, 2] * twists[j, 5]
        wy = R[1, 0] * twists[j, 3] + R[1, 1] * twists[j, 4] + R[1, 2] * twists[j, 5]
        wz = R[2, 0] * twists[j, 3] + R[2, 1] * twists[j, 4] + R[2, 2] * twists[j, 5]
        vx = R[0, 0] * twists[j, 0] + R[0, 1] * twists[j, 1] + R[0, 2] * twists[j, 2]
        vy = R[1, 0] * twists[j, 0] + R[1, 1] * twists[j, 1] + R[1, 2] * twists[j, 2]
        vz = R[2, 0] * twists[j, 0] + R[2, 1] * twists[j, 1] + R[2, 2] * twists[j, 2]
        Js[0, j] = vx + p[1] * wz - p[2] * wy
        Js[1, j] = vy + p[2] * wx - p[0] * wz
        Js[2, j] = vz + p[0] * wy - p[1] * wx
        Js[3, j] = wx
        Js[4, j] = wy
        Js[5, j] = wz


@njit(cache=True)
def body_jacobian_into(Js, R, p, Jb):
    """Jb col j: v_b = R^T (v + w x p), w_b = R^T w."""
    n = Js.shape[1]
    for j in range(n):
        ax = Js[0, j] + Js[4, j] * p[2] - Js[5, j] * p[1]
        ay = Js[1, j] + Js[5, j] * p[0] - Js[3, j] * p[2]
        az = Js[2, j] + Js[3, j] * p[1] - Js[4, j] * p[0]
        Jb[0, j] = R[0, 0] * ax + R[1, 0] * ay + R[2, 0] * az
        Jb[1, j] = R[0, 1] * ax + R[1, 1] * ay + R[2, 1] * az
        Jb[2, j] = R[0, 2] * ax + R[1, 2] * ay + R[2, 2] * az
        Jb[3, j] = R[0, 0] * Js[3, j] + R[1, 0] * Js[4, j] + R[2, 0] * Js[5, j]
        Jb[4, j] = R[0, 1] * Js[3, j] + R[1, 1] * Js[4, j] + R[2, 1] * Js[5, j]
        Jb[5, j] = R[0, 2] * Js[3, j] + R[1, 2] * Js[4, j] + R[2, 2] * Js[5, j]


@njit(cache=True)
def mass_into(twists, masses, coms, inertias, q, preR, prep, Js, M):
    """M(q) = sum_i J_ci^T [m I, 0; 0, R_i I_i R_i^T] J_ci over world-frame
    COM Jacobians; fills M, using preR/prep/Js as workspace."""
    n = q.shape[0]
    fk_prefix(twists, q, preR, prep)
    spatial_jacobian_into(twists, preR, prep, Js)
    for a in range(n):
        for b in range(n):
            M[a, b] = 0.0
    W = np.empty((3, 3))
    u = np.empty((3, n))
    y = np.empty((3, n))
    for i in range(n):
        Ri = preR[i + 1]
        # world COM of link i
        cx = Ri[0, 0] * coms[i, 0] + Ri[0, 1] * coms[i, 1] + Ri[0, 2] * coms[i, 2] + prep[i + 1, 0]
        cy = Ri[1, 0] * coms[i, 0] + Ri[1, 1] * coms[i, 1] + Ri[1, 2] * coms[i, 2] + prep[i + 1, 1]
        cz = Ri[2, 0] * coms[i, 0] + Ri[2, 1] * coms[i, 1] + Ri[2, 2] * coms[i, 2] + prep[i + 1, 2]
        # W = Ri I_i Ri^T (world-frame rotational inertia)
        for r in range(3):
            t0 = Ri[r, 0] * inertias[i, 0, 0] + Ri[r, 1] * inertias[i, 1, 0] + Ri[r, 2] * inertias[i, 2, 0]
            t1 = Ri[r, 0] * inertias[i, 0, 1] + Ri[r, 1] * inertias[i, 1, 1] + Ri[r, 2] * inertias[i, 2, 1]
            t2 = Ri[r, 0] * inertias[i, 0, 2] + Ri[r, 1] * inertias[i, 1, 2] + Ri[r, 2] * inertias[i, 2, 2]
            for c in range(3):
                W[r, c] = t0 * Ri[c, 0] + t1 * Ri[c, 1] + t2 * Ri[c, 2]
        mi = masses[i]
        for j in range(i + 1):
            # linear velocity of the COM per unit qdot_j, world frame
            u[0, j] = Js[0, j] + Js[4, j] * cz - Js[5, j] * cy
            u[1, j] = Js[1, j] + Js[5, j] * cx - Js[3, j] * cz
            u[2, j] = Js[2, j] + Js[3, j] * cy - Js[4, j] * cx
            y[0, j] = W[0, 0] * Js[3, j] + W[0, 1] * Js[4, j] + W[0, 2] * Js[5, j]
            y[1, j] = W[1, 0] * Js[3, j] + W[1, 1] * Js[4, j] + W[1, 2] * Js[5, j]
            y[2, j] = W[2, 0] * Js[3, j] + W[2, 1] * Js[4, j] + W[2, 2] * Js[5, j]
        for a in range(i + 1):
            for b in range(a, i + 1):
                val = mi * (u[0, a] * u[0, b] + u[1, a] * u[1, b] + u[2, a] * u[2, b])
                val += Js[3, a] * y[0, b] + Js[4, a] * y[1, b] + Js[5, a] * y[2, b]
                M[a, b] += val
                if a != b:
                    M[b, a] += val
    return M


@njit(cache=True)
def mass_raw(twists, masses, coms, inertias, q):
    n = q.shape[0]
    preR = np.empty((n + 1, 3, 3))
    prep = np.empty((n + 1, 3))
    Js = np.empty((6, n))
    M = np.empty((n, n))
    mass_into(twists, masses, coms, inertias, q, preR, prep, Js, M)
    return M


@njit(cache=True)
def gravity_into(twists, masses, coms, gravity, q, preR, prep, Js, G):
    """G(q) = d/dq of potential; uses suffix sums of link masses and moments."""
    n = q.shape[0]
    fk_prefix(twists, q, preR, prep)
    spatial_jacobian_into(twists, preR, prep, Js)
    # suffix sums over links: total mass and mass-weighted COM beyond joint j
    msum = 0.0
    mcx = 0.0
    mcy = 0.0
    mcz = 0.0
    for j in range(n - 1, -1, -1):
        i = j
        Ri = preR[i + 1]
        cx = Ri[0, 0] * coms[i, 0] + Ri[0, 1] * coms[i, 1] + Ri[0, 2] * coms[i, 2] + prep[i + 1, 0]
        cy = Ri[1, 0] * coms[i, 0] + Ri[1, 1] * coms[i, 1] + Ri[1, 2] * coms[i, 2] + prep[i + 1, 1]
        cz = Ri[2, 0] * coms[i, 0] + Ri[2, 1] * coms[i, 1] + Ri[2, 2] * coms[i, 2] + prep[i + 1, 2]
        msum += masses[i]
        mcx += masses[i] * cx
        mcy += masses[i] * cy
        mcz += masses[i] * cz
        # velocity of the aggregated weighted COM per unit qdot_j:
        # m*v = msum * v_j + w_j x (m*c)
        vx = msum * Js[0, j] + Js[4, j] * mcz - Js[5, j] * mcy
        vy = msum * Js[1, j] + Js[5, j] * mcx - Js[3, j] * mcz
        vz = msum * Js[2, j] + Js[3, j] * mcy - Js[4, j] * mcx
        G[j] = -(gravity[0] * vx + gravity[1] * vy + gravity[2] * vz)
    return G


@njit(cache=True)
def gravity_raw(twists, masses, coms, gravity, q):
    n = q.shape[0]
    preR = np.empty((n + 1, 3, 3))
    prep = np.empty((n + 1, 3))
    Js = np.empty((6, n))
    G = np.empty(n)
    gravity_into(twists, masses, coms, gravity, q, preR, prep, Js, G)
    return G


@njit(cache=True)
def coriolis_raw(twists, masses, coms, inertias, q, qd, h):
    """Christoffel-form C(q, qd) from central finite differences of M."""
    n = q.shape[0]
    preR = np.empty((n + 1, 3, 3))
    prep = np.empty((n + 1, 3))
    Js = np.empty((6, n))
    dM = np.empty((n, n, n))
    Mp = np.empty((n, n))
    Mm = np.empty((n, n))
    qk = q.copy()
    for k in range(n):
        qk[k] = q[k] + h
        mass_into(twists, masses, coms, inertias, qk, preR, prep, Js, Mp)
        qk[k] = q[k] - h
        mass_into(twists, masses, coms, inertias, qk, preR, prep, Js, Mm)
        qk[k] = q[k]
        inv2h = 0.5 / h
        for a in range(n):
            for b in range(n):
                dM[k, a, b] = (Mp[a, b] - Mm[a, b]) * inv2h
    C = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += (dM[k, i, j] + dM[j, i, k] - dM[i, j, k]) * qd[k]
            C[i, j] = 0.5 * acc
    return C


# ---------------------------------------------------------------------------
# error vectors, elastic wrench, contact (raw forms)


@njit(cache=True)
def gcev_into(R, p, Rd, pd, out):
    dx = p[0] - pd[0]
    dy = p[1] - pd[1]
    dz = p[2] - pd[2]
    out[0] = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
    out[1] = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
    out[2] = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
    # A = Rd^T R; e_R = vee(A - A^T)
    a01 = Rd[0, 0] * R[0, 1] + Rd[1, 0] * R[1, 1] + Rd[2, 0] * R[2, 1]
    a02 = Rd[0, 0] * R[0, 2] + Rd[1, 0] * R[1, 2] + Rd[2, 0] * R[2, 2]
    a10 = Rd[0, 1] * R[0, 0] + Rd[1, 1] * R[1, 0] + Rd[2, 1] * R[2, 0]
    a12 = Rd[0, 1] * R[0, 2] + Rd[1, 1] * R[1, 2] + Rd[2, 1] * R[2, 2]
    a20 = Rd[0, 2] * R[0, 0] + Rd[1, 2] * R[1, 0] + Rd[2, 2] * R[2, 0]
    a21 = Rd[0, 2] * R[0, 1] + Rd[1, 2] * R[1, 1] + Rd[2, 2] * R[2, 1]
    out[3] = a21 - a12
    out[4] = a02 - a20
    out[5] = a10 - a01
    return out


@njit(cache=True)
def cartesian_into(R, p, Rd, pd, out):
    out[0] = p[0] - pd[0]
    out[1] = p[1] - pd[1]
    out[2] = p[2] - pd[2]
    ex = 0.0
    ey = 0.0
    ez = 0.0
    for i in range(3):
        ex += Rd[1, i] * R[2, i] - Rd[2, i] * R[1, i]
        ey += Rd[2, i] * R[0, i] - Rd[0, i] * R[2, i]
        ez += Rd[0, i] * R[1, i] - Rd[1, i] * R[0, i]
    out[3] = ex
    out[4] = ey
    out[5] = ez
    return out


@njit(cache=True)
def elastic_into(R, p, Rd, pd, kp, kr, out):
    """f_p = R^T Rd Kp Rd^T (p - pd); f_R = vee(Kr Rd^T R - R^T Rd Kr)."""
    dx = p[0] - pd[0]
    dy = p[1] - pd[1]
    dz = p[2] - pd[2]
    s0 = kp[0] * (Rd[0, 0] * dx + Rd[1, 0] * dy + Rd[2, 0] * dz)
    s1 = kp[1] * (Rd[0, 1] * dx + Rd[1, 1] * dy + Rd[2, 1] * dz)
    s2 = kp[2] * (Rd[0, 2] * dx + Rd[1, 2] * dy + Rd[2, 2] * dz)
    wx = Rd[0, 0] * s0 + Rd[0, 1] * s1 + Rd[0, 2] * s2
    wy = Rd[1, 0] * s0 + Rd[1, 1] * s1 + Rd[1, 2] * s2
    wz = Rd[2, 0] * s0 + Rd[2, 1] * s1 + Rd[2, 2] * s2
    out[0] = R[0, 0] * wx + R[1, 0] * wy + R[2, 0] * wz
    out[1] = R[0, 1] * wx + R[1, 1] * wy + R[2, 1] * wz
    out[2] = R[0, 2] * wx + R[1, 2] * wy + R[2, 2] * wz
    # A = Rd^T R; B = Kr A - A^T Kr; out[3:] = vee(B)
    a01 = Rd[0, 0] * R[0, 1] + Rd[1, 0] * R[1, 1] + Rd[2, 0] * R[2, 1]
    a02 = Rd[0, 0] * R[0, 2] + Rd[1, 0] * R[1, 2] + Rd[2, 0] * R[2, 2]
    a10 = Rd[0, 1] * R[0, 0] + Rd[1, 1] * R[1, 0] + Rd[2, 1] * R[2, 0]
    a12 = Rd[0, 1] * R[0, 2] + Rd[1, 1] * R[1, 2] + Rd[2, 1] * R[2, 2]
    a20 = Rd[0, 2] * R[0, 0] + Rd[1, 2] * R[1, 0] + Rd[2, 2] * R[2, 0]
    a21 = Rd[0, 2] * R[0, 1] + Rd[1, 2] * R[1, 1] + Rd[2, 2] * R[2, 1]
    out[3] = kr[1] * a21 - kr[2] * a12
    out[4] = kr[2] * a02 - kr[0] * a20
    out[5] = kr[0] * a10 - kr[1] * a01
    return out


@njit(cache=True)
def psi_raw(R, p, Rd, pd):
    tr = (Rd[0, 0] * R[0, 0] + Rd[1, 0] * R[1, 0] + Rd[2, 0] * R[2, 0]
          + Rd[0, 1] * R[0, 1] + Rd[1, 1] * R[1, 1] + Rd[2, 1] * R[2, 1]
          + Rd[0, 2] * R[0, 2] + Rd[1, 2] * R[1, 2] + Rd[2, 2] * R[2, 2])
    dx = p[0] - pd[0]
    dy = p[1] - pd[1]
    dz = p[2] - pd[2]
    return 3.0 - tr + 0.5 * (dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def contact_into(R, p, vb, Rd, pd, hole_radius, peg_radius, hole_depth,
                 surface_extent, kn, dn, kt, mu, pts, anchors, out):
    """Penalty contact between the sampled peg cylinder and the hole geometry.

    Sample points (body frame) are tested against the top surface, the bore
    wall, and the bore bottom in the hole frame; the exit face with minimum
    penetration wins. Friction is a tangential spring against a per-point
    anchor (hole frame) capped at mu times the normal force; the anchor drags
    when the cap is exceeded, giving true stick-slip. ``anchors`` is the
    (n_pts, 4) [active, x, y, z] state, updated in place. Returns the
    body-frame wrench on the peg; out[6] is the maximum penetration.
    """
    for i in range(7):
        out[i] = 0.0
    fx_w = 0.0
    fy_w = 0.0
    fz_w = 0.0
    tx_w = 0.0
    ty_w = 0.0
    tz_w = 0.0
    npts = pts.shape[0]
    for k in range(npts):
        sx = pts[k, 0]
        sy = pts[k, 1]
        sz = pts[k, 2]
        # world position of the sample point
        xw = R[0, 0] * sx + R[0, 1] * sy + R[0, 2] * sz + p[0]
        yw = R[1, 0] * sx + R[1, 1] * sy + R[1, 2] * sz + p[1]
        zw = R[2, 0] * sx + R[2, 1] * sy + R[2, 2] * sz + p[2]
        # hole-frame position
        hx = Rd[0, 0] * (xw - pd[0]) + Rd[1, 0] * (yw - pd[1]) + Rd[2, 0] * (zw - pd[2])
        hy = Rd[0, 1] * (xw - pd[0]) + Rd[1, 1] * (yw - pd[1]) + Rd[2, 1] * (zw - pd[2])
        hz = Rd[0, 2] * (xw - pd[0]) + Rd[1, 2] * (yw - pd[1]) + Rd[2, 2] * (zw - pd[2])
        in_contact = False
        nx = 0.0
        ny = 0.0
        nz = 1.0
        pen = -1.0
        if hz < hole_depth - 1e-12:
            r2 = hx * hx + hy * hy
            r = np.sqrt(r2)
            if r >= hole_radius:
                if r <= surface_extent:
                    pen_top = hole_depth - hz
                    pen_wall = r - hole_radius
                    if hz > 0.0 and pen_wall < pen_top:
                        pen = pen_wall
                        nx = -hx / r
                        ny = -hy / r
                        nz = 0.0
                    else:
                        pen = pen_top
                    in_contact = True
            else:
                if hz < 0.0:
                    pen = -hz
                    in_contact = True
        if not in_contact:
            anchors[k, 0] = 0.0
            continue
        # point velocity: body velocity of the point, expressed in hole frame
        vpx = vb[0] + vb[4] * sz - vb[5] * sy
        vpy = vb[1] + vb[5] * sx - vb[3] * sz
        vpz = vb[2] + vb[3] * sy - vb[4] * sx
        vxw = R[0, 0] * vpx + R[0, 1] * vpy + R[0, 2] * vpz
        vyw = R[1, 0] * vpx + R[1, 1] * vpy + R[1, 2] * vpz
        vzw = R[2, 0] * vpx + R[2, 1] * vpy + R[2, 2] * vpz
        vxh = Rd[0, 0] * vxw + Rd[1, 0] * vyw + Rd[2, 0] * vzw
        vyh = Rd[0, 1] * vxw + Rd[1, 1] * vyw + Rd[2, 1] * vzw
        vzh = Rd[0, 2] * vxw + Rd[1, 2] * vyw + Rd[2, 2] * vzw
        vn = nx * vxh + ny * vyh + nz * vzh
        pen_rate = -vn
        fn = kn * pen
        if pen_rate > 0.0:
            fn += dn * pen_rate
        fhx = fn * nx
        fhy = fn * ny
        fhz = fn * nz
        # tangential anchor spring, Coulomb-capped with anchor dragging
        if anchors[k, 0] == 0.0:
            anchors[k, 0] = 1.0
            anchors[k, 1] = hx
            anchors[k, 2] = hy
            anchors[k, 3] = hz
        else:
            dx = hx - anchors[k, 1]
            dy = hy - anchors[k, 2]
            dz = hz - anchors[k, 3]
            dn_ = dx * nx + dy * ny + dz * nz
            dx -= dn_ * nx
            dy -= dn_ * ny
            dz -= dn_ * nz
            stretch = np.sqrt(dx * dx + dy * dy + dz * dz)
            if stretch > 1e-12:
                ft = kt * stretch
                cap = mu * fn
                if ft > cap:
                    scale = cap / ft
                    dx *= scale
                    dy *= scale
                    dz *= scale
                    ft = cap
                fhx -= kt * dx
                fhy -= kt * dy
                fhz -= kt * dz
            # anchor sits at the (possibly dragged) stretch-free offset
            anchors[k, 1] = hx - dx
            anchors[k, 2] = hy - dy
            anchors[k, 3] = hz - dz
        # back to world
        fxw = Rd[0, 0] * fhx + Rd[0, 1] * fhy + Rd[0, 2] * fhz
        fyw = Rd[1, 0] * fhx + Rd[1, 1] * fhy + Rd[1, 2] * fhz
        fzw = Rd[2, 0] * fhx + Rd[2, 1] * fhy + Rd[2, 2] * fhz
        fx_w += fxw
        fy_w += fyw
        fz_w += fzw
        # torque about the end-effector origin
        rx = xw - p[0]
        ry = yw - p[1]
        rz = zw - p[2]
        tx_w += ry * fzw - rz * fyw
        ty_w += rz * fxw - rx * fzw
        tz_w += rx * fyw - ry * fxw
        if pen > out[6]:
            out[6] = pen
    # express in body frame
    out[0] = R[0, 0] * fx_w + R[1, 0] * fy_w + R[2, 0] * fz_w
    out[1] = R[0, 1] * fx_w + R[1, 1] * fy_w + R[2, 1] * fz_w
    out[2] = R[0, 2] * fx_w + R[1, 2] * fy_w + R[2, 2] * fz_w
    out[3] = R[0, 0] * tx_w + R[1, 0] * ty_w + R[2, 0] * tz_w
    out[4] = R[0, 1] * tx_w + R[1, 1] * ty_w + R[2, 1] * tz_w
    out[5] = R[0, 2] * tx_w + R[1, 2] * ty_w + R[2, 2] * tz_w
    return out


@njit(cache=True)
def quat_into(R, out):
    """Unit quaternion (w, x, y, z) of R with w >= 0."""
    t = R[0, 0] + R[1, 1] + R[2, 2]
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        out[0] = 0.25 * s
        out[1] = (R[2, 1] - R[1, 2]) / s
        out[2] = (R[0, 2] - R[2, 0]) / s
        out[3] = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        out[0] = (R[2, 1] - R[1, 2]) / s
        out[1] = 0.25 * s
        out[2] = (R[0, 1] + R[1, 0]) / s
        out[3] = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        out[0] = (R[0, 2] - R[2, 0]) / s
        out[1] = (R[0, 1] + R[1, 0]) / s
        out[2] = 0.25 * s
        out[3] = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        out[0] = (R[1, 0] - R[0, 1]) / s
        out[1] = (R[0, 2] + R[2, 0]) / s
        out[2] = (R[1, 2] + R[2, 1]) / s
        out[3] = 0.25 * s
    nrm = np.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
    sign = 1.0
    if out[0] < 0.0:
        sign = -1.0
    for i in range(4):
        out[i] = sign * out[i] / nrm


@njit(cache=True)
def reward_terms(psi, z_off, d_p, f_ez):
    """r1 + r2 + r3 of the insertion reward."""
    r = -0.1 * psi
    if z_off < 0.026:
        r += 120.0
    elif z_off < 0.04:
        r += 0.04 - z_off
    if d_p > 0.002:
        r -= 0.005 * abs(f_ez)
    return r


@njit(cache=True)
def success_raw(z_off, d_p, lateral_bound):
    return (z_off < 0.026) and (d_p < lateral_bound)


@njit(cache=True)
def sim_chunk(twists, g0R, g0p, masses, coms, inertias, gravity,
              Rd, pd, hole_radius, peg_radius, hole_depth, surface_extent,
              lateral_bound, kn, dn, kt, mu, pts, anchors,
              kind, kgain, kdamp, fd_step,
              q, qd, dt, nsteps, trace):
    """Advance nsteps physics steps under fixed impedance gains.

    kgain stacks (kp diag, kr diag); kdamp is the damping diagonal. q, qd and
    the friction anchors are updated in place. Per-step measurements (taken
    before each step) go into trace rows; returns a status code (OK or
    BLOWUP).
    """
    n = q.shape[0]
    preR = np.empty((n + 1, 3, 3))
    prep = np.empty((n + 1, 3))
    Js = np.empty((6, n))
    Jb = np.empty((6, n))
    M = np.empty((n, n))
    G = np.empty(n)
    e_g = np.empty(6)
    e_c = np.empty(6)
    fG = np.empty(6)
    w_fb = np.empty(6)
    cw = np.empty(7)
    vb = np.empty(6)
    vs = np.empty(6)
    quat = np.empty(4)
    rhs = np.empty(n)
    kp = kgain[:3]
    kr = kgain[3:]
    for s in range(nsteps):
        fk_prefix(twists, q, preR, prep)
        R = np.empty((3, 3))
        p = np.empty(3)
        for r in range(3):
            p[r] = (preR[n, r, 0] * g0p[0] + preR[n, r, 1] * g0p[1]
                    + preR[n, r, 2] * g0p[2] + prep[n, r])
            for c in range(3):
                R[r, c] = (preR[n, r, 0] * g0R[0, c] + preR[n, r, 1] * g0R[1, c]
                           + preR[n, r, 2] * g0R[2, c])
        spatial_jacobian_into(twists, preR, prep, Js)
        body_jacobian_into(Js, R, p, Jb)
        for i in range(6):
            av = 0.0
            bv = 0.0
            for j in range(n):
                av += Jb[i, j] * qd[j]
                bv += Js[i, j] * qd[j]
            vb[i] = av
            vs[i] = bv
        gcev_into(R, p, Rd, pd, e_g)
        cartesian_into(R, p, Rd, pd, e_c)
        elastic_into(R, p, Rd, pd, kp, kr, fG)
        contact_into(R, p, vb, Rd, pd, hole_radius, peg_radius, hole_depth,
                     surface_extent, kn, dn, kt, mu, pts, anchors, cw)
        gravity_into(twists, masses, coms, gravity, q, preR, prep, Js, G)
        # feedback wrench and joint torque (gravity folded through J^T so the
        # compensation cancels the plant gravity exactly)
        if kind == KIND_GIC:
            for i in range(6):
                w_fb[i] = -fG[i] - kdamp[i] * vb[i]
            for j in range(n):
                acc = G[j]
                for i in range(6):
                    acc += Jb[i, j] * (w_fb[i] + cw[i])
                rhs[j] = acc
        else:
            for i in range(6):
                w_fb[i] = -kgain[i] * e_c[i] - kdamp[i] * vs[i]
            for j in range(n):
                acc = G[j]
                for i in range(6):
                    acc += Js[i, j] * w_fb[i] + Jb[i, j] * cw[i]
                rhs[j] = acc
        # equations of motion
        mass_into(twists, masses, coms, inertias, q, preR, prep, Js, M)
        C = coriolis_raw(twists, masses, coms, inertias, q, qd, fd_step)
        for j in range(n):
            acc = rhs[j] - G[j]
            for k2 in range(n):
                acc -= C[j, k2] * qd[k2]
            rhs[j] = acc
        qdd = np.linalg.solve(M, rhs)
        qdmax = 0.0
        for j in range(n):
            qd[j] = qd[j] + dt * qdd[j]
            q[j] = q[j] + dt * qd[j]
            a = abs(qd[j])
            if a > qdmax:
                qdmax = a
        # hole-frame tip offsets for reward/success
        hx = Rd[0, 0] * (p[0] - pd[0]) + Rd[1, 0] * (p[1] - pd[1]) + Rd[2, 0] * (p[2] - pd[2])
        hy = Rd[0, 1] * (p[0] - pd[0]) + Rd[1, 1] * (p[1] - pd[1]) + Rd[2, 1] * (p[2] - pd[2])
        hz = Rd[0, 2] * (p[0] - pd[0]) + Rd[1, 2] * (p[1] - pd[1]) + Rd[2, 2] * (p[2] - pd[2])
        d_p = np.sqrt(hx * hx + hy * hy)
        psi = psi_raw(R, p, Rd, pd)
        row = trace[s]
        for i in range(6):
            row[TRACE_EG + i] = e_g[i]
            row[TRACE_EC + i] = e_c[i]
            row[TRACE_FB + i] = w_fb[i]
            row[TRACE_FEXT + i] = cw[i]
        row[TRACE_REWARD] = reward_terms(psi, hz, d_p, cw[2])
        row[TRACE_ZOFF] = hz
        row[TRACE_DP] = d_p
        row[TRACE_PSI] = psi
        row[TRACE_SUCCESS] = 1.0 if success_raw(hz, d_p, lateral_bound) else 0.0
        row[TRACE_QDMAX] = qdmax
        row[TRACE_P] = p[0]
        row[TRACE_P + 1] = p[1]
        row[TRACE_P + 2] = p[2]
        quat_into(R, quat)
        for i in range(4):
            row[TRACE_QUAT + i] = quat[i]
        if qdmax > 1e4:
            return BLOWUP
    return OK


@njit(cache=True)
def measure_errors(twists, g0R, g0p, Rd, pd, q):
    """GCEV and Cartesian error of the current configuration."""
    R, p = fk_raw(twists, g0R, g0p, q)
    e_g = np.empty(6)
    e_c = np.empty(6)
    gcev_into(R, p, Rd, pd, e_g)
    cartesian_into(R, p, Rd, pd, e_c)
    return e_g, e_c
