# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels (native backend).

Same contract as gaitlab._kernels.reference. The control-tick hot path
(activation, muscle geometry and force, the semi-implicit contact solve)
runs as C loops over a packed per-model handle cached on the model.
Cold helpers (curves, FK, landmarks, energy) are re-exported from the
reference module: they run once per episode or only in analysis code,
and a single definition cannot drift.

Numerics: the velocity solve uses a Cholesky factorization (the system
matrix is symmetric positive definite by construction: mass matrix plus
nonnegative diagonal damping minus dt * J^T B J with diagonal B <= 0),
where the reference uses a general LU solve. Together with differing
summation order this makes results agree to roundoff per substep, not
bit for bit. Nonfinite state falls through to the same divergence guard
as the reference.
"""

import numpy as np

from libc.math cimport cos, exp, fabs, isfinite, pow, sin, sqrt, M_E

from gaitlab._kernels.reference import (
    AF, FLEN, KLEN, GAMMA, E0, PAS_C, W_CAP, FT_CAP, QD_LIMIT,
    CON_DEPTH_CAP, CON_AMP_CAP,
    active_force_length, passive_force_length, force_velocity,
    tendon_force_length, activation_step, kinematics, landmarks,
    toe_positions, static_vertical_grf, mechanical_energy,
    muscle_geometry, muscle_force, joint_moments, limit_forces,
    contact_force,
)

BACKEND_NAME = "native"

# C copies of the shared constants (the python names above are re-exports)
cdef double C_AF = AF
cdef double C_FLEN = FLEN
cdef double C_KLEN = KLEN
cdef double C_GAMMA = GAMMA
cdef double C_E0 = E0
cdef double C_PAS_C = PAS_C
cdef double C_W_CAP = W_CAP
cdef double C_FT_CAP = FT_CAP
cdef double C_QD_LIMIT = QD_LIMIT
cdef double C_DEPTH_CAP = CON_DEPTH_CAP
cdef double C_AMP_CAP = CON_AMP_CAP


cdef inline double _clip(double x, double lo, double hi) noexcept:
    # NaN passes through, matching np.clip
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline double _max0(double a, double b) noexcept:
    return a if a > b else b


cdef inline double _min0(double a, double b) noexcept:
    return a if a < b else b


cdef inline double _afl(double ln) noexcept:
    return exp(-((ln - 1.0) * (ln - 1.0)) / C_GAMMA)


cdef inline double _pfl(double ln) noexcept:
    cdef double x = ln - 1.0
    if x < 0.0:
        x = 0.0
    return C_PAS_C * (exp(4.0 * x) - 1.0 - 4.0 * x)


cdef inline double _fvel(double w) noexcept:
    if w < 0.0:
        if w <= -1.0:
            return 0.0
        return (1.0 + w) / (1.0 - w / C_AF)
    return 1.0 + (C_FLEN - 1.0) * C_KLEN * w / (C_KLEN * w + 1.0)


cdef inline double _tfl(double s) noexcept:
    if s <= 0.0:
        return 0.0
    if s <= C_E0:
        return (s / C_E0) * (s / C_E0)
    return 1.0 + (2.0 / C_E0) * (s - C_E0)


cdef inline double _stop(double z) noexcept:
    if z <= 0.0:
        return 0.0
    if z > 1.0:
        return (M_E - 2.0) + (M_E - 1.0) * (z - 1.0)
    return exp(z) - 1.0 - z


def _cf(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


def _cf2(a, width):
    return np.ascontiguousarray(
        np.asarray(a, dtype=np.float64).reshape(-1, width))


def _ci(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.int32))


def _cu(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.uint8))


cdef class Handle:
    """Packed C view of a model plus per-handle scratch buffers.

    Entry points hold the GIL and the compiled loops contain no
    interpreter calls, so the scratch cannot be entered concurrently.
    The packed arrays alias the model's own buffers where those are
    already contiguous float64, so in-place model edits stay visible;
    rebinding a model attribute to a new array needs a fresh handle
    (the model clears its handle cache when it relocks DoFs).
    """

    cdef readonly int nseg, njnt, nq, nmus, nsph, npair
    cdef double gravity, con_k, con_p, con_c, con_mu, con_vreg, margin
    cdef double[::1] seg_mass, seg_inertia, jnt_sign, jnt_lo, jnt_hi
    cdef double[::1] jnt_k, jnt_d, jnt_visc, sph_r
    cdef double[:, ::1] seg_com, jnt_anchor, sph_pos
    cdef int[::1] seg_parent, seg_joint, sph_seg, sph_foot
    cdef unsigned char[:, ::1] anc
    cdef unsigned char[::1] locked, mus_rigid
    cdef double[::1] mus_fmax, mus_lopt, mus_lslack, mus_h, mus_vmax
    cdef double[::1] mus_tau_act, mus_tau_deact, mus_beta
    cdef double[::1] mus_lmin, mus_lmax, mus_L0
    # moment arms in muscle-major pair form: muscle m owns pairs
    # arm_ptr[m]..arm_ptr[m+1); all-zero rows are dropped (exact zeros
    # contribute nothing to any sum, so results are unchanged)
    cdef int[::1] arm_ptr, arm_jix
    cdef double[:, ::1] arm_c

    # scratch: kinematics
    cdef double[:, ::1] orig, vel, acc0, jointw, com, acc0c
    cdef double[::1] phi, omega
    # scratch: dynamics
    cdef double[:, :, ::1] Jv
    cdef double[:, ::1] Jw, Mm, Am
    cdef double[::1] hvec, rhs, qd2, tauj, taulim, damp
    # scratch: contacts
    cdef double[:, :, ::1] conJ
    cdef double[::1] con_a1, con_b00, con_b11
    cdef int[::1] con_sph
    cdef unsigned char[::1] con_keep
    # scratch: muscles
    cdef double[::1] th, over, rpair, tau_mus
    cdef double[::1] f_tendon, f_active, vmus, wmus, lnmus, flmus
    # scratch: per-tick outputs
    cdef double[:, ::1] grf_s
    cdef double[::1] tau_net_s, tauj_in

    def __cinit__(self, model):
        cdef int m, j, n, nm

        self.nseg = model.nseg
        self.njnt = model.njnt
        self.nq = model.nq
        self.nmus = model.nmus
        self.nsph = model.nsph
        self.gravity = model.gravity
        self.con_k = model.con_k
        self.con_p = model.con_p
        self.con_c = model.con_c
        self.con_mu = model.con_mu
        self.con_vreg = model.con_vreg
        self.margin = model.jnt_margin

        self.seg_mass = _cf(model.seg_mass)
        self.seg_inertia = _cf(model.seg_inertia)
        self.seg_com = _cf2(model.seg_com, 2)
        self.seg_parent = _ci(model.seg_parent)
        self.seg_joint = _ci(model.seg_joint)
        self.jnt_anchor = _cf2(model.jnt_anchor, 2)
        self.jnt_sign = _cf(model.jnt_sign)
        self.jnt_lo = _cf(model.jnt_lo)
        self.jnt_hi = _cf(model.jnt_hi)
        self.jnt_k = _cf(model.jnt_k)
        self.jnt_d = _cf(model.jnt_d)
        self.jnt_visc = _cf(model.jnt_visc)
        self.anc = _cu(model.anc).reshape(self.nseg, self.njnt)
        self.locked = _cu(model.locked)
        self.sph_seg = _ci(model.sph_seg)
        self.sph_foot = _ci(model.sph_foot)
        self.sph_pos = _cf2(model.sph_pos, 2)
        self.sph_r = _cf(model.sph_r)

        self.mus_fmax = _cf(model.mus_fmax)
        self.mus_lopt = _cf(model.mus_lopt)
        self.mus_lslack = _cf(model.mus_lslack)
        self.mus_h = _cf(model.mus_h)
        self.mus_vmax = _cf(model.mus_vmax)
        self.mus_tau_act = _cf(model.mus_tau_act)
        self.mus_tau_deact = _cf(model.mus_tau_deact)
        self.mus_beta = _cf(model.mus_beta)
        self.mus_lmin = _cf(model.mus_lmin)
        self.mus_lmax = _cf(model.mus_lmax)
        self.mus_L0 = _cf(model.mus_L0)
        self.mus_rigid = _cu(model.mus_rigid)

        arm = np.asarray(model.mus_arm, dtype=np.float64)
        ptr = [0]
        jix = []
        rows = []
        for m in range(self.nmus):
            for j in range(self.njnt):
                if np.any(arm[m, j, :] != 0.0):
                    jix.append(j)
                    rows.append(arm[m, j, :])
            ptr.append(len(jix))
        self.npair = len(jix)
        self.arm_ptr = _ci(ptr)
        self.arm_jix = _ci(jix)
        self.arm_c = _cf2(np.asarray(rows) if rows else np.zeros((0, 4)), 4)

        n = self.nq
        self.orig = _cf2(np.zeros((self.nseg, 2)), 2)
        self.vel = _cf2(np.zeros((self.nseg, 2)), 2)
        self.acc0 = _cf2(np.zeros((self.nseg, 2)), 2)
        self.jointw = _cf2(np.zeros((max(self.njnt, 1), 2)), 2)
        self.com = _cf2(np.zeros((self.nseg, 2)), 2)
        self.acc0c = _cf2(np.zeros((self.nseg, 2)), 2)
        self.phi = _cf(np.zeros(self.nseg))
        self.omega = _cf(np.zeros(self.nseg))

        self.Jv = np.zeros((self.nseg, 2, n))
        self.Jw = _cf2(np.zeros((self.nseg, n)), n)
        self.Mm = _cf2(np.zeros((n, n)), n)
        self.Am = _cf2(np.zeros((n, n)), n)
        self.hvec = _cf(np.zeros(n))
        self.rhs = _cf(np.zeros(n))
        self.qd2 = _cf(np.zeros(n))
        self.tauj = _cf(np.zeros(max(self.njnt, 1)))
        self.taulim = _cf(np.zeros(max(self.njnt, 1)))
        self.damp = _cf(np.zeros(max(self.njnt, 1)))

        self.conJ = np.zeros((max(self.nsph, 1), 2, n))
        self.con_a1 = _cf(np.zeros(max(self.nsph, 1)))
        self.con_b00 = _cf(np.zeros(max(self.nsph, 1)))
        self.con_b11 = _cf(np.zeros(max(self.nsph, 1)))
        self.con_sph = _ci(np.zeros(max(self.nsph, 1), dtype=np.int32))
        self.con_keep = _cu(np.zeros(max(self.nsph, 1), dtype=np.uint8))

        nm = max(self.nmus, 1)
        self.th = _cf(np.zeros(max(self.njnt, 1)))
        self.over = _cf(np.zeros(max(self.njnt, 1)))
        self.rpair = _cf(np.zeros(max(self.npair, 1)))
        self.tau_mus = _cf(np.zeros(max(self.njnt, 1)))
        self.f_tendon = _cf(np.zeros(nm))
        self.f_active = _cf(np.zeros(nm))
        self.vmus = _cf(np.zeros(nm))
        self.wmus = _cf(np.zeros(nm))
        self.lnmus = _cf(np.zeros(nm))
        self.flmus = _cf(np.zeros(nm))

        self.grf_s = _cf2(np.zeros((2, 2)), 2)
        self.tau_net_s = _cf(np.zeros(max(self.njnt, 1)))
        self.tauj_in = _cf(np.zeros(max(self.njnt, 1)))


cdef void _fk(Handle H, double[::1] q, double[::1] qd) noexcept:
    cdef int s, p, j
    cdef double ca, sa, ax, ay, rx, ry, wx, wy, sgn, o2, rcx, rcy
    H.orig[0, 0] = q[0]
    H.orig[0, 1] = q[1]
    H.phi[0] = q[2]
    H.vel[0, 0] = qd[0]
    H.vel[0, 1] = qd[1]
    H.omega[0] = qd[2]
    H.acc0[0, 0] = 0.0
    H.acc0[0, 1] = 0.0
    for s in range(1, H.nseg):
        p = H.seg_parent[s]
        j = H.seg_joint[s]
        ca = cos(H.phi[p])
        sa = sin(H.phi[p])
        ax = H.jnt_anchor[j, 0]
        ay = H.jnt_anchor[j, 1]
        rx = ca * ax - sa * ay
        ry = sa * ax + ca * ay
        wx = H.orig[p, 0] + rx
        wy = H.orig[p, 1] + ry
        H.jointw[j, 0] = wx
        H.jointw[j, 1] = wy
        H.vel[s, 0] = H.vel[p, 0] + H.omega[p] * (-ry)
        H.vel[s, 1] = H.vel[p, 1] + H.omega[p] * rx
        o2 = H.omega[p] * H.omega[p]
        H.acc0[s, 0] = H.acc0[p, 0] - o2 * rx
        H.acc0[s, 1] = H.acc0[p, 1] - o2 * ry
        sgn = H.jnt_sign[j]
        H.phi[s] = H.phi[p] + sgn * q[3 + j]
        H.omega[s] = H.omega[p] + sgn * qd[3 + j]
        H.orig[s, 0] = wx
        H.orig[s, 1] = wy
    for s in range(H.nseg):
        ca = cos(H.phi[s])
        sa = sin(H.phi[s])
        rcx = ca * H.seg_com[s, 0] - sa * H.seg_com[s, 1]
        rcy = sa * H.seg_com[s, 0] + ca * H.seg_com[s, 1]
        H.com[s, 0] = H.orig[s, 0] + rcx
        H.com[s, 1] = H.orig[s, 1] + rcy
        o2 = H.omega[s] * H.omega[s]
        H.acc0c[s, 0] = H.acc0[s, 0] - o2 * rcx
        H.acc0c[s, 1] = H.acc0[s, 1] - o2 * rcy


cdef void _mass_bias(Handle H) noexcept:
    cdef int s, j, k, l, n = H.nq
    cdef double ms, Is, fx, fy, sgn, v
    for s in range(H.nseg):
        for k in range(n):
            H.Jv[s, 0, k] = 0.0
            H.Jv[s, 1, k] = 0.0
            H.Jw[s, k] = 0.0
        H.Jv[s, 0, 0] = 1.0
        H.Jv[s, 1, 1] = 1.0
        H.Jv[s, 0, 2] = -(H.com[s, 1] - H.orig[0, 1])
        H.Jv[s, 1, 2] = H.com[s, 0] - H.orig[0, 0]
        H.Jw[s, 2] = 1.0
        for j in range(H.njnt):
            if H.anc[s, j]:
                sgn = H.jnt_sign[j]
                H.Jv[s, 0, 3 + j] = sgn * (-(H.com[s, 1] - H.jointw[j, 1]))
                H.Jv[s, 1, 3 + j] = sgn * (H.com[s, 0] - H.jointw[j, 0])
                H.Jw[s, 3 + j] = sgn
    for k in range(n):
        H.hvec[k] = 0.0
        for l in range(n):
            H.Mm[k, l] = 0.0
    for s in range(H.nseg):
        ms = H.seg_mass[s]
        Is = H.seg_inertia[s]
        for k in range(n):
            for l in range(k, n):
                v = (ms * (H.Jv[s, 0, k] * H.Jv[s, 0, l]
                           + H.Jv[s, 1, k] * H.Jv[s, 1, l])
                     + Is * H.Jw[s, k] * H.Jw[s, l])
                H.Mm[k, l] += v
                if l != k:
                    H.Mm[l, k] += v
        fx = H.acc0c[s, 0] * ms
        fy = (H.acc0c[s, 1] + H.gravity) * ms
        for k in range(n):
            H.hvec[k] += H.Jv[s, 0, k] * fx + H.Jv[s, 1, k] * fy


cdef void _limits(Handle H, double[::1] q) noexcept:
    cdef int j
    cdef double th, z_hi, z_lo, e, m = H.margin
    for j in range(H.njnt):
        th = q[3 + j]
        z_hi = (th - (H.jnt_hi[j] - m)) / m
        z_lo = ((H.jnt_lo[j] + m) - th) / m
        H.taulim[j] = H.jnt_k[j] * m * (_stop(z_lo) - _stop(z_hi))
        e = z_hi if z_hi > z_lo else z_lo
        H.damp[j] = H.jnt_visc[j] + H.jnt_d[j] * _clip(e, 0.0, 5.0)


cdef int _gather(Handle H) noexcept:
    cdef int i, s, j, k, nc = 0
    cdef double ca, sa, lx, ly, rcx, rcy, cx, cy, depth, ptx, pty
    cdef double rptx, rpty, vptx, vpty, d, kdp, amp, sgn
    for i in range(H.nsph):
        s = H.sph_seg[i]
        ca = cos(H.phi[s])
        sa = sin(H.phi[s])
        lx = H.sph_pos[i, 0]
        ly = H.sph_pos[i, 1]
        rcx = ca * lx - sa * ly
        rcy = sa * lx + ca * ly
        cx = H.orig[s, 0] + rcx
        cy = H.orig[s, 1] + rcy
        depth = H.sph_r[i] - cy
        if depth <= 0.0:
            continue
        ptx = cx
        pty = cy - H.sph_r[i]
        rptx = ptx - H.orig[s, 0]
        rpty = pty - H.orig[s, 1]
        vptx = H.vel[s, 0] + H.omega[s] * (-rpty)
        vpty = H.vel[s, 1] + H.omega[s] * rptx
        d = depth if depth < C_DEPTH_CAP else C_DEPTH_CAP
        kdp = H.con_k * pow(d, H.con_p)
        amp = _min0(_max0(1.0 - H.con_c * vpty, 0.0), C_AMP_CAP)
        H.con_a1[nc] = kdp
        H.con_b11[nc] = -kdp * H.con_c
        H.con_b00[nc] = -H.con_mu * kdp * amp / _max0(fabs(vptx), H.con_vreg)
        for k in range(H.nq):
            H.conJ[nc, 0, k] = 0.0
            H.conJ[nc, 1, k] = 0.0
        H.conJ[nc, 0, 0] = 1.0
        H.conJ[nc, 1, 1] = 1.0
        H.conJ[nc, 0, 2] = -(pty - H.orig[0, 1])
        H.conJ[nc, 1, 2] = ptx - H.orig[0, 0]
        for j in range(H.njnt):
            if H.anc[s, j]:
                sgn = H.jnt_sign[j]
                H.conJ[nc, 0, 3 + j] = sgn * (-(pty - H.jointw[j, 1]))
                H.conJ[nc, 1, 3 + j] = sgn * (ptx - H.jointw[j, 0])
        H.con_sph[nc] = i
        H.con_keep[nc] = 1
        nc += 1
    return nc


cdef void _chol_solve(double[:, ::1] A, double[::1] b, double[::1] x,
                      int n) noexcept:
    # in-place lower Cholesky, then forward/back substitution; a
    # nonfinite or non-PD matrix yields NaN in x, which the caller's
    # divergence guard catches
    cdef int i, j, k
    cdef double s, inv
    for k in range(n):
        s = A[k, k]
        for j in range(k):
            s -= A[k, j] * A[k, j]
        s = sqrt(s)
        A[k, k] = s
        inv = 1.0 / s
        for i in range(k + 1, n):
            s = A[i, k]
            for j in range(k):
                s -= A[i, j] * A[k, j]
            A[i, k] = s * inv
    for i in range(n):
        s = b[i]
        for j in range(i):
            s -= A[i, j] * x[j]
        x[i] = s / A[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= A[j, i] * x[j]
        x[i] = s / A[i, i]


cdef void _assemble_solve(Handle H, double[::1] qd, double dt, int ncon,
                          bint use_keep) noexcept:
    cdef int k, l, j, c, n = H.nq
    cdef double b00, b11, a1, j0k, j1k, qk
    for k in range(n):
        for l in range(n):
            H.Am[k, l] = H.Mm[k, l]
    for j in range(H.njnt):
        H.Am[3 + j, 3 + j] += dt * H.damp[j]
    for k in range(n):
        qk = 0.0
        for l in range(n):
            qk += H.Mm[k, l] * qd[l]
        if k >= 3:
            qk += dt * (H.tauj[k - 3] - H.hvec[k])
        else:
            qk += dt * (0.0 - H.hvec[k])
        H.rhs[k] = qk
    for c in range(ncon):
        if use_keep and not H.con_keep[c]:
            continue
        b00 = H.con_b00[c]
        b11 = H.con_b11[c]
        a1 = H.con_a1[c]
        for k in range(n):
            j0k = H.conJ[c, 0, k]
            j1k = H.conJ[c, 1, k]
            H.rhs[k] += dt * a1 * j1k
            for l in range(n):
                H.Am[k, l] -= dt * (b00 * j0k * H.conJ[c, 0, l]
                                    + b11 * j1k * H.conJ[c, 1, l])
    for k in range(n):
        if H.locked[k]:
            for l in range(n):
                H.Am[k, l] = 0.0
                H.Am[l, k] = 0.0
            H.Am[k, k] = 1.0
            H.rhs[k] = 0.0
    _chol_solve(H.Am, H.rhs, H.qd2, n)


cdef bint _tick(Handle H, double[::1] q, double[::1] qd, double[::1] tau_jnt,
                double dt) noexcept:
    """One semi-implicit substep, in place on q and qd. Fills grf_s and
    tau_net_s. Returns the divergence flag."""
    cdef int j, k, c, ncon, ndrop, foot
    cdef double fn, f0, f1
    cdef bint diverged = 0

    _fk(H, q, qd)
    _mass_bias(H)
    _limits(H, q)
    for j in range(H.njnt):
        H.tauj[j] = tau_jnt[j] + H.taulim[j]
        # reported moments use the pre-step velocity, as in the reference
        H.tau_net_s[j] = H.tauj[j] - H.damp[j] * qd[3 + j]
    ncon = _gather(H)

    _assemble_solve(H, qd, dt, ncon, 0)
    if ncon > 0:
        # unilateral contact: drop spheres whose post-step normal force
        # went negative and re-solve once
        ndrop = 0
        for c in range(ncon):
            fn = H.con_a1[c]
            for k in range(H.nq):
                fn += H.con_b11[c] * H.conJ[c, 1, k] * H.qd2[k]
            if fn > 0.0:
                H.con_keep[c] = 1
            else:
                H.con_keep[c] = 0
                ndrop += 1
        if ndrop > 0:
            _assemble_solve(H, qd, dt, ncon, 1)

    H.grf_s[0, 0] = 0.0
    H.grf_s[0, 1] = 0.0
    H.grf_s[1, 0] = 0.0
    H.grf_s[1, 1] = 0.0
    for c in range(ncon):
        if not H.con_keep[c]:
            continue
        f0 = 0.0
        f1 = H.con_a1[c]
        for k in range(H.nq):
            f0 += H.con_b00[c] * H.conJ[c, 0, k] * H.qd2[k]
            f1 += H.con_b11[c] * H.conJ[c, 1, k] * H.qd2[k]
        if f1 < 0.0:
            f1 = 0.0
        foot = H.sph_foot[H.con_sph[c]]
        H.grf_s[foot, 0] += f0
        H.grf_s[foot, 1] += f1

    for k in range(H.nq):
        q[k] += dt * H.qd2[k]
        qd[k] = H.qd2[k]
        if not isfinite(q[k]) or not isfinite(qd[k]) \
                or fabs(qd[k]) >= C_QD_LIMIT:
            diverged = 1
    return diverged


cdef void _muscle_tick(Handle H, double[::1] q, double[::1] qd,
                       double[::1] act, double[::1] lm, double[::1] exc,
                       double dt) noexcept:
    """Activation step, MTU geometry, damped-equilibrium force solve and
    joint moments, all at the current (pre-substep) state. Leaves the
    per-muscle diagnostics in the handle scratch."""
    cdef int m, j, p, p0, p1
    cdef double tau, t, t2, t3, c0, c1, c2, c3, r, poly, overs, rdot
    cdef double L, Ldot, lopt, beta, lmv, cosa, ln, fl, fp, A
    cdef double lt, strain, ftil, cc, bc, be, disc, w, proj, fv
    cdef double f_act, f_fib

    for m in range(H.nmus):
        tau = H.mus_tau_act[m] if exc[m] >= act[m] else H.mus_tau_deact[m]
        act[m] = _clip(act[m] + dt * (exc[m] - act[m]) / tau, 0.0, 1.0)

    for j in range(H.njnt):
        # polynomial arms are held constant beyond the joint range plus
        # a small skirt; the length integral continues linearly there
        t = _clip(q[3 + j], H.jnt_lo[j] - 0.2, H.jnt_hi[j] + 0.2)
        H.th[j] = t
        H.over[j] = q[3 + j] - t
        H.tau_mus[j] = 0.0

    for m in range(H.nmus):
        p0 = H.arm_ptr[m]
        p1 = H.arm_ptr[m + 1]
        poly = 0.0
        overs = 0.0
        rdot = 0.0
        for p in range(p0, p1):
            j = H.arm_jix[p]
            t = H.th[j]
            t2 = t * t
            t3 = t2 * t
            c0 = H.arm_c[p, 0]
            c1 = H.arm_c[p, 1]
            c2 = H.arm_c[p, 2]
            c3 = H.arm_c[p, 3]
            r = c0 + c1 * t + c2 * t2 + c3 * t3
            H.rpair[p] = r
            poly += c0 * t + c1 * (t2 / 2.0) + c2 * (t3 / 3.0) \
                + c3 * (t3 * t / 4.0)
            overs += r * H.over[j]
            rdot += r * qd[3 + j]
        L = H.mus_L0[m] - poly - overs
        Ldot = -rdot

        lopt = H.mus_lopt[m]
        beta = H.mus_beta[m]
        lmv = lm[m]
        cosa = sqrt(_max0(1.0 - (H.mus_h[m] / lmv) * (H.mus_h[m] / lmv),
                          1e-6))
        ln = lmv / lopt
        fl = _afl(ln)
        fp = _pfl(ln)
        A = act[m] * fl

        lt = L - lmv * cosa
        strain = (lt - H.mus_lslack[m]) / (H.mus_lslack[m]
                                           if H.mus_lslack[m] > 0.0 else 1.0)
        ftil = _min0(_tfl(strain), C_FT_CAP)
        if H.mus_lslack[m] <= 0.0:
            ftil = 0.0
        cc = ftil / cosa - fp

        if cc < -beta:
            # slack branch: fiber shortens against damping only
            w = cc / beta
        elif cc <= A:
            # concentric: (beta/AF) w^2 - (A + beta + cc/AF) w + (cc - A) = 0
            bc = A + beta + cc / C_AF
            disc = _max0(bc * bc - 4.0 * (beta / C_AF) * (cc - A), 0.0)
            w = _clip((bc - sqrt(disc)) / (2.0 * (beta / C_AF)), -1.0, 0.0)
        else:
            # eccentric: beta K w^2 + (A K FLEN + beta - cc K) w + (A - cc) = 0
            be = A * C_KLEN * C_FLEN + beta - cc * C_KLEN
            disc = _max0(be * be - 4.0 * (beta * C_KLEN) * (A - cc), 0.0)
            w = _clip((-be + sqrt(disc)) / (2.0 * (beta * C_KLEN)),
                      0.0, C_W_CAP)

        if H.mus_rigid[m]:
            # rigid tendon: fiber state fixed by the path
            proj = _max0(L - H.mus_lslack[m], 1e-6)
            lmv = _clip(sqrt(proj * proj + H.mus_h[m] * H.mus_h[m]),
                        H.mus_lmin[m], H.mus_lmax[m])
            cosa = sqrt(_max0(1.0 - (H.mus_h[m] / lmv) * (H.mus_h[m] / lmv),
                              1e-6))
            w = _clip((Ldot / cosa) / (H.mus_vmax[m] * lopt), -1.0, C_W_CAP)
            ln = lmv / lopt
            fl = _afl(ln)
            fp = _pfl(ln)
            A = act[m] * fl

        fv = _fvel(w)
        f_act = H.mus_fmax[m] * A * fv
        f_fib = f_act + H.mus_fmax[m] * (fp + beta * w)
        if H.mus_rigid[m]:
            H.f_tendon[m] = _max0(f_fib, 0.0) * cosa
        else:
            H.f_tendon[m] = H.mus_fmax[m] * ftil
        H.f_active[m] = f_act
        H.vmus[m] = w * H.mus_vmax[m] * lopt
        H.wmus[m] = w
        H.lnmus[m] = ln
        H.flmus[m] = fl

        for p in range(p0, p1):
            H.tau_mus[H.arm_jix[p]] += H.f_tendon[m] * H.rpair[p]


cdef Handle _handle(model):
    cache = model._handles
    h = cache.get("native")
    if not isinstance(h, Handle):
        h = Handle(model)
        cache["native"] = h
    return <Handle> h


def make_handle(model):
    """Packed C view of the model, cached on the model."""
    return _handle(model)


def substep(model, q, qd, tau_joint, dt):
    """One semi-implicit Euler tick with prescribed per-joint torques.

    Same contract as the reference backend: passive limit torques, joint
    tissue damping and contact are added internally; damping terms act
    on the post-step velocity. Returns (q, qd, grf(2, 2), tau_net,
    diverged).
    """
    cdef Handle H = _handle(model)
    q2 = np.array(q, dtype=np.float64)
    qd2 = np.array(qd, dtype=np.float64)
    tau = np.ascontiguousarray(np.asarray(tau_joint, dtype=np.float64))
    cdef double[::1] qv = q2
    cdef double[::1] qdv = qd2
    cdef double[::1] tv = tau
    cdef bint div = _tick(H, qv, qdv, tv, dt)
    grf = np.asarray(H.grf_s).copy()
    tau_net = np.asarray(H.tau_net_s)[:H.njnt].copy()
    return q2, qd2, grf, tau_net, bool(div)


def step_control(model, q, qd, act, lm, exc, tau_exo, nsub, dt):
    """One control tick: nsub physics substeps under held excitations
    and exo torques. Muscle activation and fiber dynamics advance at the
    physics rate.

    Returns (q, qd, act, lm, diag) where diag carries per-substep muscle
    state for the metabolics probe and final-substep dynamics outputs.
    """
    cdef Handle H = _handle(model)
    cdef int nm = H.nmus
    cdef int njnt = H.njnt
    cdef int i, j, m
    cdef int nsub_c = nsub
    cdef double dt_c = dt
    cdef bint div = 0
    cdef bint diverged = 0

    q2 = np.array(q, dtype=np.float64)
    qd2 = np.array(qd, dtype=np.float64)
    act2 = np.array(act, dtype=np.float64)
    lm2 = np.array(lm, dtype=np.float64)
    exc2 = np.ascontiguousarray(np.asarray(exc, dtype=np.float64))
    tau_full = np.ascontiguousarray(np.asarray(tau_exo, dtype=np.float64))

    act_sub = np.zeros((nsub_c, nm))
    ln_sub = np.zeros((nsub_c, nm))
    vn_sub = np.zeros((nsub_c, nm))
    f_active_sub = np.zeros((nsub_c, nm))
    f_tendon_sub = np.zeros((nsub_c, nm))
    fl_sub = np.zeros((nsub_c, nm))
    tau_mus_out = np.zeros(njnt)
    tau_net_out = np.zeros(njnt)
    grf_out = np.zeros((2, 2))

    cdef double[::1] qv = q2
    cdef double[::1] qdv = qd2
    cdef double[::1] actv = act2
    cdef double[::1] lmv = lm2
    cdef double[::1] excv = exc2
    cdef double[::1] tauv = tau_full
    cdef double[:, ::1] act_s = act_sub
    cdef double[:, ::1] ln_s = ln_sub
    cdef double[:, ::1] vn_s = vn_sub
    cdef double[:, ::1] fa_s = f_active_sub
    cdef double[:, ::1] ft_s = f_tendon_sub
    cdef double[:, ::1] fl_s = fl_sub
    cdef double[::1] tm_o = tau_mus_out
    cdef double[::1] tn_o = tau_net_out
    cdef double[:, ::1] grf_o = grf_out

    for i in range(nsub_c):
        _muscle_tick(H, qv, qdv, actv, lmv, excv, dt_c)
        for j in range(njnt):
            H.tauj_in[j] = H.tau_mus[j] + tauv[j]
        div = _tick(H, qv, qdv, H.tauj_in, dt_c)
        for m in range(nm):
            lmv[m] = _clip(lmv[m] + dt_c * H.vmus[m],
                           H.mus_lmin[m], H.mus_lmax[m])
            act_s[i, m] = actv[m]
            ln_s[i, m] = H.lnmus[m]
            vn_s[i, m] = H.wmus[m] * H.mus_vmax[m]
            fa_s[i, m] = H.f_active[m]
            ft_s[i, m] = H.f_tendon[m]
            fl_s[i, m] = H.flmus[m]
        if i == nsub_c - 1:
            for j in range(njnt):
                tm_o[j] = H.tau_mus[j]
                tn_o[j] = H.tau_net_s[j]
            grf_o[0, 0] = H.grf_s[0, 0]
            grf_o[0, 1] = H.grf_s[0, 1]
            grf_o[1, 0] = H.grf_s[1, 0]
            grf_o[1, 1] = H.grf_s[1, 1]
        if div:
            diverged = 1
            break

    diag = dict(
        act_sub=act_sub,
        ln_sub=ln_sub,
        vn_sub=vn_sub,
        f_active_sub=f_active_sub,
        f_tendon_sub=f_tendon_sub,
        fl_sub=fl_sub,
        tau_mus=tau_mus_out,
        tau_net=tau_net_out,
        grf=grf_out,
        diverged=bool(diverged),
    )
    return q2, qd2, act2, lm2, diag
