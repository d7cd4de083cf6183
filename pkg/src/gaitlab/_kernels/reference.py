"""Pure-numpy simulation kernels (reference backend).

The compiled backend (gaitlab._kernels.native) implements the same
functions; this module is the behavioural contract and the fallback
when the extension is unavailable. All functions are stateless: the
caller owns q, qd, activations and fiber lengths.

Conventions: x forward, y up, angles CCW. Generalized coordinates
q = [root_x, root_y, root_pitch, joint angles...]. Anatomical joint
angles map to world rotations through the per-joint sign.
"""

import numpy as np

BACKEND_NAME = "python"

# Hill curve constants, shared verbatim with the compiled backend.
AF = 0.41          # force-velocity curvature (concentric)
FLEN = 1.5         # eccentric force asymptote
KLEN = 2.0 * (1.0 + 1.0 / AF) / (FLEN - 1.0)   # C1 match at v = 0
GAMMA = 0.45       # active force-length Gaussian width
E0 = 0.049         # tendon strain at maximal isometric force
# passive force-length: c * (exp(4(l-1)) - 1 - 4(l-1)), unit force at l = 1.6
PAS_C = 1.0 / (np.exp(2.4) - 3.4)
W_CAP = 3.0        # guard on normalized fiber velocity (units of vmax)
FT_CAP = 3.0       # tendon force ceiling (x fmax); far beyond gait loads

QD_LIMIT = 1e3     # divergence guard on generalized velocities

# Contact saturation. Gait penetration stays within a few mm; these caps only
# engage in tangled post-fall states and keep impact impulses bounded there.
CON_DEPTH_CAP = 0.05   # m, depth used in the force law
CON_AMP_CAP = 4.0      # ceiling on Hunt-Crossley damping amplification


def active_force_length(ln):
    """Normalized active force-length curve (wide Gaussian)."""
    ln = np.asarray(ln, dtype=float)
    return np.exp(-((ln - 1.0) ** 2) / GAMMA)


def passive_force_length(ln):
    """Normalized passive fiber force; zero below optimal length."""
    ln = np.asarray(ln, dtype=float)
    x = np.maximum(ln - 1.0, 0.0)
    return PAS_C * (np.exp(4.0 * x) - 1.0 - 4.0 * x)


def force_velocity(w):
    """Normalized force-velocity curve, w = fiber velocity / vmax (<0 shortening)."""
    w = np.asarray(w, dtype=float)
    con = np.clip(w, -1.0, 0.0)
    fcon = (1.0 + con) / (1.0 - con / AF)
    ecc = np.maximum(w, 0.0)
    fecc = 1.0 + (FLEN - 1.0) * KLEN * ecc / (KLEN * ecc + 1.0)
    return np.where(w < 0.0, np.where(w <= -1.0, 0.0, fcon), fecc)


def tendon_force_length(strain):
    """Normalized tendon force: quadratic toe to E0, then linear (C1)."""
    s = np.asarray(strain, dtype=float)
    toe = (np.maximum(s, 0.0) / E0) ** 2
    lin = 1.0 + (2.0 / E0) * (s - E0)
    return np.where(s <= E0, np.where(s <= 0.0, 0.0, toe), lin)


def activation_step(act, exc, dt, tau_act, tau_deact):
    """One explicit Euler step of first-order activation dynamics."""
    act = np.asarray(act, dtype=float)
    exc = np.asarray(exc, dtype=float)
    tau = np.where(exc >= act, tau_act, tau_deact)
    return np.clip(act + dt * (exc - act) / tau, 0.0, 1.0)


def make_handle(model):
    """Backend-specific prepared form of a model (identity here)."""
    return model


# ---------------------------------------------------------------------------
# kinematics and dynamics


def _perp(v):
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def kinematics(model, q, qd):
    """FK sweep. Returns dict with segment origins, orientations,
    velocities, mass centers, zero-qdd accelerations, and world joint
    anchors (used for Jacobians)."""
    nseg, njnt = model.nseg, model.njnt
    orig = np.zeros((nseg, 2))
    phi = np.zeros(nseg)
    vel = np.zeros((nseg, 2))
    omega = np.zeros(nseg)
    acc0 = np.zeros((nseg, 2))      # origin acceleration with qdd = 0
    jointw = np.zeros((njnt, 2))

    orig[0] = q[:2]
    phi[0] = q[2]
    vel[0] = qd[:2]
    omega[0] = qd[2]

    for s in range(1, nseg):
        p = model.seg_parent[s]
        j = model.seg_joint[s]
        ca, sa = np.cos(phi[p]), np.sin(phi[p])
        ax, ay = model.jnt_anchor[j]
        r = np.array([ca * ax - sa * ay, sa * ax + ca * ay])
        w = orig[p] + r
        jointw[j] = w
        vel[s] = vel[p] + omega[p] * np.array([-r[1], r[0]])
        acc0[s] = acc0[p] - omega[p] ** 2 * r
        sgn = model.jnt_sign[j]
        phi[s] = phi[p] + sgn * q[3 + j]
        omega[s] = omega[p] + sgn * qd[3 + j]
        orig[s] = w

    ca, sa = np.cos(phi), np.sin(phi)
    cl = model.seg_com
    rc = np.stack([ca * cl[:, 0] - sa * cl[:, 1], sa * cl[:, 0] + ca * cl[:, 1]], axis=1)
    com = orig + rc
    comv = vel + omega[:, None] * _perp(rc)
    acc0c = acc0 - (omega**2)[:, None] * rc

    return dict(orig=orig, phi=phi, vel=vel, omega=omega, com=com,
                comv=comv, acc0c=acc0c, jointw=jointw)


def _point_jacobian(model, kin, seg, point):
    """Velocity Jacobian (2, nq) of a world-frame point on a segment."""
    J = np.zeros((2, model.nq))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    J[:, 2] = _perp(point - kin["orig"][0])
    for j in range(model.njnt):
        if model.anc[seg, j]:
            J[:, 3 + j] = model.jnt_sign[j] * _perp(point - kin["jointw"][j])
    return J


def _mass_bias(model, kin):
    """Joint-space mass matrix and bias vector (Coriolis + gravity)."""
    nq = model.nq
    Jv = np.zeros((model.nseg, 2, nq))
    Jw = np.zeros((model.nseg, nq))
    com = kin["com"]
    Jv[:, 0, 0] = 1.0
    Jv[:, 1, 1] = 1.0
    Jv[:, :, 2] = _perp(com - kin["orig"][0])
    Jw[:, 2] = 1.0
    for j in range(model.njnt):
        rows = model.anc[:, j].astype(bool)
        Jv[rows, :, 3 + j] = model.jnt_sign[j] * _perp(com[rows] - kin["jointw"][j])
        Jw[rows, 3 + j] = model.jnt_sign[j]

    m = model.seg_mass
    M = np.einsum("sak,sal,s->kl", Jv, Jv, m)
    M += np.einsum("sk,sl,s->kl", Jw, Jw, model.seg_inertia)
    # with qdd = 0 the angular accelerations vanish exactly (planar chain),
    # so the bias reduces to the linear terms plus gravity
    g = np.array([0.0, -model.gravity])
    h = np.einsum("sak,sa->k", Jv, (kin["acc0c"] - g) * m[:, None])
    return M, h


def _stop_shape(z):
    """Smooth stop profile: exponential toe inside the margin band
    (0 < z <= 1), C1 linear beyond so the slope stays bounded."""
    zz = np.clip(z, 0.0, 1.0)
    f = np.exp(zz) - 1.0 - zz
    lin = (np.e - 2.0) + (np.e - 1.0) * (z - 1.0)
    return np.where(z > 1.0, lin, np.where(z > 0.0, f, 0.0))


def limit_forces(model, q):
    """Passive joint-limit springs.

    Returns (tau_spring, engagement): the spring torque pushing back
    into the range, and a 0..1 engagement factor per joint that scales
    the limit damping (applied implicitly in the velocity solve).
    """
    th = q[3:]
    m = model.jnt_margin
    z_hi = (th - (model.jnt_hi - m)) / m
    z_lo = ((model.jnt_lo + m) - th) / m
    tau = model.jnt_k * m * (_stop_shape(z_lo) - _stop_shape(z_hi))
    # damping keeps growing with penetration (capped) so a fast limb
    # slamming a stop sheds energy instead of slingshotting back
    engage = np.clip(np.maximum(z_hi, z_lo), 0.0, 5.0)
    return tau, engage


def contact_force(depth, depth_rate, slip_velocity, k, p, c, mu, vreg):
    """Hunt-Crossley normal force plus regularized Coulomb friction.

    Returns (tangential, normal). Zero when not penetrating.
    """
    if depth <= 0.0:
        return 0.0, 0.0
    fn = k * depth**p * (1.0 + c * depth_rate)
    if fn < 0.0:
        fn = 0.0
    s = slip_velocity / vreg
    if s > 1.0:
        s = 1.0
    elif s < -1.0:
        s = -1.0
    return -mu * fn * s, fn


def _gather_contacts(model, kin):
    """Active contact spheres as affine force laws F(u) = a + B u in the
    contact-point velocity u. The velocity-dependent parts (Hunt-Crossley
    damping, friction) are integrated implicitly for stability at stiff
    contact; the spring part stays explicit in the penetration depth.
    """
    contacts = []
    for i in range(model.nsph):
        s = model.sph_seg[i]
        ca, sa = np.cos(kin["phi"][s]), np.sin(kin["phi"][s])
        lx, ly = model.sph_pos[i]
        rc = np.array([ca * lx - sa * ly, sa * lx + ca * ly])
        center = kin["orig"][s] + rc
        depth = model.sph_r[i] - center[1]
        if depth <= 0.0:
            continue
        pt = center - np.array([0.0, model.sph_r[i]])
        rpt = pt - kin["orig"][s]
        vpt = kin["vel"][s] + kin["omega"][s] * np.array([-rpt[1], rpt[0]])
        kdp = model.con_k * min(depth, CON_DEPTH_CAP) ** model.con_p
        a = np.zeros(2)
        B = np.zeros((2, 2))
        a[1] = kdp
        B[1, 1] = -kdp * model.con_c
        # Friction as an implicit damper sized to the Coulomb bound at the
        # current slip speed: force <= mu * fn_est, slip sign cannot flip
        # within a step (no chatter), B stays diagonal so the velocity
        # solve is positive definite for any contact state. Inside the
        # regularization band the slope pins the point (stiction).
        amp = min(max(1.0 - model.con_c * vpt[1], 0.0), CON_AMP_CAP)
        B[0, 0] = -model.con_mu * kdp * amp / max(abs(vpt[0]), model.con_vreg)
        J = _point_jacobian(model, kin, s, pt)
        contacts.append((i, J, a, B))
    return contacts


def substep(model, q, qd, tau_joint, dt):
    """One semi-implicit Euler tick with prescribed per-joint torques.

    tau_joint are actuator torques (muscle + exo); passive limit torques,
    joint tissue damping, and contact are added internally. The velocity
    update solves (M + dt*D - dt*J'BJ) v' = M v + dt*(Q - h + J'a), i.e.
    damping terms act on the post-step velocity. Returns (q, qd,
    grf(2,2), tau_net, diverged).
    """
    kin = kinematics(model, q, qd)
    M, h = _mass_bias(model, kin)

    tau_lim, engage = limit_forces(model, q)
    damp = model.jnt_visc + model.jnt_d * engage
    Q = np.zeros(model.nq)
    Q[3:] = tau_joint + tau_lim
    contacts = _gather_contacts(model, kin)
    locked = model.locked.astype(bool)

    def solve(active):
        A = M.copy()
        A[3:, 3:] += np.diag(dt * damp)
        rhs = M @ qd + dt * (Q - h)
        for (_, J, a, B) in active:
            A -= dt * (J.T @ B @ J)
            rhs += dt * (J.T @ a)
        if locked.any():
            A[locked, :] = 0.0
            A[:, locked] = 0.0
            A[locked, locked] = 1.0
            rhs[locked] = 0.0
        return np.linalg.solve(A, rhs)

    qd2 = solve(contacts)
    # unilateral contact: drop spheres whose post-step normal force went
    # negative (fast separation) and re-solve once
    if contacts:
        keep = [c for c in contacts if (c[2] + c[3] @ (c[1] @ qd2))[1] > 0.0]
        if len(keep) != len(contacts):
            contacts = keep
            qd2 = solve(contacts)

    grf = np.zeros((2, 2))
    for (i, J, a, B) in contacts:
        F = a + B @ (J @ qd2)
        F[1] = max(F[1], 0.0)
        grf[model.sph_foot[i]] += F

    q2 = q + dt * qd2
    # reported moments use the pre-step velocity so an added torque shows
    # up one-to-one in the record (the solve itself damps the new velocity)
    tau_net = tau_joint + tau_lim - damp * qd[3:]

    diverged = not (np.all(np.isfinite(q2)) and np.all(np.isfinite(qd2))
                    and np.max(np.abs(qd2)) < QD_LIMIT)
    return q2, qd2, grf, tau_net, diverged


# ---------------------------------------------------------------------------
# muscles


def muscle_geometry(model, q, qd):
    """MTU lengths and lengthening rates from polynomial moment arms.

    The polynomials are only trusted inside the joint range (plus a
    small skirt); beyond it the arm is held constant and the length
    integral continues linearly, so leverage stays bounded however far
    a flailing joint travels.
    """
    skirt = 0.2
    lo = model.jnt_lo - skirt
    hi = model.jnt_hi + skirt
    th = np.clip(q[3:], lo, hi)
    over = q[3:] - th
    thd = qd[3:]
    # antiderivative of r(theta): c0 t + c1 t^2/2 + c2 t^3/3 + c3 t^4/4
    tp = np.stack([th, th**2 / 2.0, th**3 / 3.0, th**4 / 4.0], axis=1)
    rp = np.stack([np.ones_like(th), th, th**2, th**3], axis=1)
    r = np.einsum("mjc,jc->mj", model.mus_arm, rp)
    L = (model.mus_L0 - np.einsum("mjc,jc->m", model.mus_arm, tp)
         - (r * over).sum(axis=1))
    Ldot = -(r * thd).sum(axis=1)
    return L, Ldot, r


def muscle_force(model, act, lm, L, Ldot):
    """Damped-equilibrium MTU force solve (analytic, per muscle).

    Returns dict with tendon force (N), active fiber force along the
    fiber (N), fiber velocity (m/s), normalized quantities for
    diagnostics, and the force-length multiplier.
    """
    lopt = model.mus_lopt
    beta = model.mus_beta
    cosa = np.sqrt(np.maximum(1.0 - (model.mus_h / lm) ** 2, 1e-6))
    ln = lm / lopt
    fl = active_force_length(ln)
    fp = passive_force_length(ln)
    A = act * fl

    rigid = model.mus_rigid.astype(bool)
    lt = L - lm * cosa
    strain = (lt - model.mus_lslack) / np.where(model.mus_lslack > 0.0,
                                                model.mus_lslack, 1.0)
    # the cap only matters when a flailing limb overstretches the path;
    # physiological gait stays near or below the isometric load
    ftil = np.minimum(tendon_force_length(strain), FT_CAP)
    ftil = np.where(model.mus_lslack > 0.0, ftil, 0.0)

    cc = ftil / cosa - fp

    # slack branch: fiber shortens against damping only
    w_slack = cc / beta
    # concentric: (beta/AF) w^2 - (A + beta + cc/AF) w + (cc - A) = 0
    a2c = beta / AF
    bc = A + beta + cc / AF
    disc_c = np.maximum(bc * bc - 4.0 * a2c * (cc - A), 0.0)
    w_con = (bc - np.sqrt(disc_c)) / (2.0 * a2c)
    # eccentric: beta K w^2 + (A K FLEN + beta - cc K) w + (A - cc) = 0
    a2e = beta * KLEN
    be = A * KLEN * FLEN + beta - cc * KLEN
    disc_e = np.maximum(be * be - 4.0 * a2e * (A - cc), 0.0)
    w_ecc = (-be + np.sqrt(disc_e)) / (2.0 * a2e)

    w = np.where(cc < -beta, w_slack,
                 np.where(cc <= A, np.clip(w_con, -1.0, 0.0),
                          np.clip(w_ecc, 0.0, W_CAP)))

    if rigid.any():
        # rigid tendon: fiber state fixed by the path, force read off curves;
        # constant-height pennation gives lm^2 = (L - lslack)^2 + h^2
        proj = np.maximum(L - model.mus_lslack, 1e-6)
        lm_r = np.clip(np.sqrt(proj**2 + model.mus_h**2),
                       model.mus_lmin, model.mus_lmax)
        cosa_r = np.sqrt(np.maximum(1.0 - (model.mus_h / lm_r) ** 2, 1e-6))
        w_r = (Ldot / cosa_r) / (model.mus_vmax * lopt)
        lm = np.where(rigid, lm_r, lm)
        cosa = np.where(rigid, cosa_r, cosa)
        ln = lm / lopt
        fl = np.where(rigid, active_force_length(ln), fl)
        fp = np.where(rigid, passive_force_length(ln), fp)
        A = act * fl
        w = np.where(rigid, np.clip(w_r, -1.0, W_CAP), w)

    fv = force_velocity(w)
    f_active = model.mus_fmax * A * fv
    f_fiber = f_active + model.mus_fmax * (fp + beta * w)
    f_tendon = np.where(rigid, np.maximum(f_fiber, 0.0) * cosa,
                        model.mus_fmax * ftil)
    vm = w * model.mus_vmax * lopt

    return dict(f_tendon=f_tendon, f_active=f_active, vm=vm,
                w=w, ln=ln, fl=fl, fp=fp, cosa=cosa, fv=fv)


def joint_moments(model, f_tendon, r):
    """Map tendon forces through moment arms to joint torques."""
    return (f_tendon[:, None] * r).sum(axis=0)


def step_control(model, q, qd, act, lm, exc, tau_exo, nsub, dt):
    """One control tick: nsub physics substeps under held excitations
    and exo torques. Muscle activation and fiber dynamics advance at the
    physics rate.

    Returns (q, qd, act, lm, diag) where diag carries per-substep muscle
    state for the metabolics probe and final-substep dynamics outputs.
    """
    nm = model.nmus
    diag = dict(
        act_sub=np.zeros((nsub, nm)),
        ln_sub=np.zeros((nsub, nm)),
        vn_sub=np.zeros((nsub, nm)),        # fiber velocity, lopt/s
        f_active_sub=np.zeros((nsub, nm)),
        f_tendon_sub=np.zeros((nsub, nm)),
        fl_sub=np.zeros((nsub, nm)),
        tau_mus=np.zeros(model.njnt),
        tau_net=np.zeros(model.njnt),
        grf=np.zeros((2, 2)),
        diverged=False,
    )
    q = q.copy()
    qd = qd.copy()
    act = act.copy()
    lm = lm.copy()
    tau_full = np.asarray(tau_exo, dtype=float)

    for i in range(nsub):
        act = activation_step(act, exc, dt, model.mus_tau_act,
                              model.mus_tau_deact)
        L, Ldot, r = muscle_geometry(model, q, qd)
        mf = muscle_force(model, act, lm, L, Ldot)
        tau_mus = joint_moments(model, mf["f_tendon"], r)

        q, qd, grf, tau_net, diverged = substep(
            model, q, qd, tau_mus + tau_full, dt)

        lm = np.clip(lm + dt * mf["vm"], model.mus_lmin, model.mus_lmax)

        diag["act_sub"][i] = act
        diag["ln_sub"][i] = mf["ln"]
        diag["vn_sub"][i] = mf["w"] * model.mus_vmax
        diag["f_active_sub"][i] = mf["f_active"]
        diag["f_tendon_sub"][i] = mf["f_tendon"]
        diag["fl_sub"][i] = mf["fl"]
        if i == nsub - 1:
            diag["tau_mus"] = tau_mus
            diag["tau_net"] = tau_net
            diag["grf"] = grf
        if diverged:
            diag["diverged"] = True
            break

    return q, qd, act, lm, diag


# ---------------------------------------------------------------------------
# helpers used by reset, tests, and the observation builder


def landmarks(model, q, qd):
    """World positions and velocities of the tracking landmarks.

    Returns (pos, vel): rows are [foot_l, foot_r, head]; foot landmarks
    are the ankle joint centers.
    """
    kin = kinematics(model, q, qd)
    pos = np.zeros((3, 2))
    vel = np.zeros((3, 2))
    for row in range(2):
        s = model.lmk_seg[row]
        pos[row] = kin["orig"][s]
        vel[row] = kin["vel"][s]
    ca, sa = np.cos(q[2]), np.sin(q[2])
    hx, hy = model.head_local
    rh = np.array([ca * hx - sa * hy, sa * hx + ca * hy])
    pos[2] = q[:2] + rh
    vel[2] = qd[:2] + qd[2] * np.array([-rh[1], rh[0]])
    return pos, vel


def toe_positions(model, q):
    """World centers of the toe spheres (max-x sphere per foot)."""
    kin = kinematics(model, q, np.zeros_like(q))
    out = np.zeros((2, 2))
    best = np.full(2, -np.inf)
    for i in range(model.nsph):
        s = model.sph_seg[i]
        ca, sa = np.cos(kin["phi"][s]), np.sin(kin["phi"][s])
        lx, ly = model.sph_pos[i]
        center = kin["orig"][s] + np.array([ca * lx - sa * ly, sa * lx + ca * ly])
        f = model.sph_foot[i]
        if model.sph_pos[i, 0] > best[f]:
            best[f] = model.sph_pos[i, 0]
            out[f] = center
    return out


def static_vertical_grf(model, q):
    """Total vertical contact force at zero velocity (normal spring only)."""
    kin = kinematics(model, q, np.zeros_like(q))
    total = 0.0
    for i in range(model.nsph):
        s = model.sph_seg[i]
        ca, sa = np.cos(kin["phi"][s]), np.sin(kin["phi"][s])
        lx, ly = model.sph_pos[i]
        cy = kin["orig"][s][1] + sa * lx + ca * ly
        depth = model.sph_r[i] - cy
        if depth > 0.0:
            total += model.con_k * depth**model.con_p
    return total


def mechanical_energy(model, q, qd):
    """Kinetic plus gravitational potential energy (datum: ground plane)."""
    kin = kinematics(model, q, qd)
    ke = 0.5 * np.sum(model.seg_mass * np.sum(kin["comv"] ** 2, axis=1))
    ke += 0.5 * np.sum(model.seg_inertia * kin["omega"] ** 2)
    pe = model.gravity * np.sum(model.seg_mass * kin["com"][:, 1])
    return ke + pe
