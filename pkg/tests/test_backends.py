"""Compiled backend against the numpy reference.

The reference backend is the behavioural contract, so it serves as the
oracle here. Per substep the two implementations agree to roundoff;
they are not bit-identical because summation order differs and the
compiled solve uses a Cholesky factorization where the reference uses
LU. The stiff dynamics (tendon toe, limit stops, contact switching)
amplify that roundoff exponentially, so deterministic trajectory
comparisons stay short; suite-level agreement over long horizons is
covered by running the whole test suite under each backend.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

import gaitlab.env
from gaitlab._kernels import BACKEND, get_backend
from gaitlab._kernels import reference as REF
from gaitlab.env import EnvConfig, GaitEnv
from gaitlab.model import build_model
from gaitlab.refmotion import preprocess, synthetic_gait

from conftest import build_pendulum

NAT = pytest.importorskip(
    "gaitlab._kernels.native",
    reason="compiled backend not built (GAITLAB_SKIP_NATIVE?)",
)

DT = 1.0 / 200.0


def rand_state(model, q0, seed, *, pose=0.15, vel=1.5):
    """Random dynamic state around a settled pose; the spread covers
    airborne, grazing, and deeply penetrating contact."""
    rng = np.random.default_rng(seed)
    q = q0 + rng.normal(0.0, pose, model.nq)
    qd = rng.normal(0.0, vel, model.nq)
    act = rng.uniform(0.0, 1.0, model.nmus)
    lm = model.mus_lopt * rng.uniform(0.7, 1.3, model.nmus)
    exc = rng.uniform(0.0, 1.0, model.nmus)
    tau = rng.normal(0.0, 30.0, model.njnt)
    return q, qd, act, lm, exc, tau


# ---------------------------------------------------------------------------
# backend selection


def test_dispatcher_honors_environment():
    forced = os.environ.get("GAITLAB_BACKEND", "").strip().lower()
    if forced:
        assert BACKEND == forced
    else:
        # native is preferred whenever it imports, and it did above
        assert BACKEND == "native"


def test_get_backend_by_name():
    assert get_backend("python").BACKEND_NAME == "python"
    assert get_backend("native").BACKEND_NAME == "native"
    assert get_backend(None).BACKEND_NAME == BACKEND
    with pytest.raises(ValueError):
        get_backend("fortran")


@pytest.mark.parametrize("forced", ["python", "native"])
def test_environment_variable_forces_backend(forced):
    env = dict(os.environ, GAITLAB_BACKEND=forced)
    out = subprocess.run(
        [sys.executable, "-c",
         "import gaitlab._kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == forced


def test_environment_variable_rejects_unknown():
    env = dict(os.environ, GAITLAB_BACKEND="cuda")
    out = subprocess.run(
        [sys.executable, "-c", "import gaitlab._kernels"],
        env=env, capture_output=True, text=True,
    )
    assert out.returncode != 0
    assert "GAITLAB_BACKEND" in out.stderr


# ---------------------------------------------------------------------------
# handles


def test_handle_is_cached_on_model():
    m = build_model("builtin:walker_75kg", "builtin:muscles_18")
    h1 = NAT.make_handle(m)
    h2 = NAT.make_handle(m)
    assert h1 is h2
    assert m._handles["native"] is h1


def test_relocking_dofs_invalidates_handle():
    m = build_model("builtin:walker_75kg", "builtin:muscles_18")
    h1 = NAT.make_handle(m)
    m.lock_dofs(("knee_l",))
    h2 = NAT.make_handle(m)
    assert h2 is not h1
    q, qd, *_ = REF.step_control(
        m, m.neutral_q, np.zeros(m.nq), np.zeros(m.nmus),
        m.mus_lopt.copy(), np.zeros(m.nmus), np.zeros(m.njnt), 4, DT)
    qn, qdn, *_ = NAT.step_control(
        m, m.neutral_q, np.zeros(m.nq), np.zeros(m.nmus),
        m.mus_lopt.copy(), np.zeros(m.nmus), np.zeros(m.njnt), 4, DT)
    assert qd[4] == 0.0 and qdn[4] == 0.0
    np.testing.assert_allclose(qn, q, atol=1e-12)


def test_cold_helpers_are_single_definitions():
    # curves, FK and diagnostics are re-exports, not copies
    for name in ("active_force_length", "passive_force_length",
                 "force_velocity", "tendon_force_length", "activation_step",
                 "kinematics", "landmarks", "toe_positions",
                 "static_vertical_grf", "mechanical_energy",
                 "muscle_geometry", "muscle_force", "joint_moments",
                 "limit_forces", "contact_force"):
        assert getattr(NAT, name) is getattr(REF, name), name


# ---------------------------------------------------------------------------
# single-substep and single-tick agreement


@pytest.mark.parametrize("seed", range(8))
def test_substep_matches_reference(walker, walker_settled_q, seed):
    q, qd, _, _, _, tau = rand_state(walker, walker_settled_q, seed)
    rq, rqd, rgrf, rtau, rdiv = REF.substep(walker, q, qd, tau, DT)
    nq, nqd, ngrf, ntau, ndiv = NAT.substep(walker, q, qd, tau, DT)
    np.testing.assert_allclose(nq, rq, atol=1e-12)
    np.testing.assert_allclose(nqd, rqd, atol=1e-9)
    np.testing.assert_allclose(ngrf, rgrf, rtol=1e-9, atol=1e-6)
    np.testing.assert_allclose(ntau, rtau, rtol=1e-9, atol=1e-9)
    assert ndiv == rdiv


@pytest.mark.parametrize("seed", range(6))
def test_step_control_matches_reference(walker, walker_settled_q, seed):
    q, qd, act, lm, exc, _ = rand_state(
        walker, walker_settled_q, seed, pose=0.02, vel=0.3)
    tau_exo = np.zeros(walker.njnt)
    r = REF.step_control(walker, q, qd, act, lm, exc, tau_exo, 8, DT)
    n = NAT.step_control(walker, q, qd, act, lm, exc, tau_exo, 8, DT)
    np.testing.assert_allclose(n[0], r[0], atol=1e-10)
    np.testing.assert_allclose(n[1], r[1], atol=1e-8)
    np.testing.assert_allclose(n[2], r[2], atol=1e-13)
    np.testing.assert_allclose(n[3], r[3], atol=1e-11)
    rd, nd = r[4], n[4]
    assert nd["diverged"] == rd["diverged"]
    for key in ("act_sub", "ln_sub", "fl_sub"):
        np.testing.assert_allclose(nd[key], rd[key], atol=1e-9)
    for key in ("vn_sub", "f_active_sub", "f_tendon_sub",
                "tau_mus", "tau_net"):
        np.testing.assert_allclose(nd[key], rd[key], rtol=1e-7, atol=1e-7)
    np.testing.assert_allclose(nd["grf"], rd["grf"], rtol=1e-7, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_short_trajectory_matches_reference(walker, walker_settled_q, seed):
    # three control ticks; beyond that the stiff dynamics amplify the
    # summation-order roundoff past any fixed tolerance
    q, qd, act, lm, exc, _ = rand_state(
        walker, walker_settled_q, seed, pose=0.02, vel=0.3)
    tau_exo = np.zeros(walker.njnt)
    sr = (q.copy(), qd.copy(), act.copy(), lm.copy())
    sn = (q.copy(), qd.copy(), act.copy(), lm.copy())
    for _ in range(3):
        sr = REF.step_control(walker, *sr, exc, tau_exo, 8, DT)[:4]
        sn = NAT.step_control(walker, *sn, exc, tau_exo, 8, DT)[:4]
    np.testing.assert_allclose(sn[0], sr[0], atol=1e-8)
    np.testing.assert_allclose(sn[1], sr[1], atol=1e-6)
    np.testing.assert_allclose(sn[3], sr[3], atol=1e-9)


def test_airborne_tick_matches_reference(walker, walker_settled_q):
    # no contact: the solve is smooth, agreement stays near roundoff
    q = walker_settled_q.copy()
    q[1] += 2.0
    qd = np.zeros(walker.nq)
    act = np.full(walker.nmus, 0.05)
    lm = walker.mus_lopt.copy()
    exc = np.full(walker.nmus, 0.1)
    tau_exo = np.zeros(walker.njnt)
    r = REF.step_control(walker, q, qd, act, lm, exc, tau_exo, 8, DT)
    n = NAT.step_control(walker, q, qd, act, lm, exc, tau_exo, 8, DT)
    np.testing.assert_allclose(n[0], r[0], atol=1e-11)
    np.testing.assert_allclose(n[1], r[1], atol=1e-9)
    assert float(np.asarray(n[4]["grf"]).sum()) == 0.0


def test_divergence_flag_matches(walker, walker_settled_q):
    qd = np.zeros(walker.nq)
    qd[0] = 1e9
    rq, rqd, _, _, rdiv = REF.substep(
        walker, walker_settled_q, qd, np.zeros(walker.njnt), DT)
    nq, nqd, _, _, ndiv = NAT.substep(
        walker, walker_settled_q, qd, np.zeros(walker.njnt), DT)
    assert rdiv and ndiv
    r = REF.step_control(
        walker, walker_settled_q, qd, np.zeros(walker.nmus),
        walker.mus_lopt.copy(), np.zeros(walker.nmus),
        np.zeros(walker.njnt), 8, DT)
    n = NAT.step_control(
        walker, walker_settled_q, qd, np.zeros(walker.nmus),
        walker.mus_lopt.copy(), np.zeros(walker.nmus),
        np.zeros(walker.njnt), 8, DT)
    assert r[4]["diverged"] and n[4]["diverged"]
    # both bail at the same substep, leaving identical zero diag tails
    assert np.array_equal(np.asarray(r[4]["act_sub"]) == 0.0,
                          np.asarray(n[4]["act_sub"]) == 0.0)


# ---------------------------------------------------------------------------
# statelessness and input safety


def test_native_does_not_mutate_inputs(walker, walker_settled_q):
    q, qd, act, lm, exc, tau = rand_state(walker, walker_settled_q, 11)
    keep = [x.copy() for x in (q, qd, act, lm, exc, tau)]
    NAT.step_control(walker, q, qd, act, lm, exc, tau[: walker.njnt], 8, DT)
    NAT.substep(walker, q, qd, tau[: walker.njnt], DT)
    for a, b in zip((q, qd, act, lm, exc, tau), keep):
        assert np.array_equal(a, b)


def test_interleaved_models_stay_independent(walker, walker_settled_q):
    # scratch lives on the per-model handle; interleaving calls across
    # models must reproduce the sequential results bit for bit
    other = build_model("builtin:walker_75kg", "builtin:muscles_18",
                        device="builtin:device_hip")
    oq = other.neutral_q.copy()
    q, qd, act, lm, exc, _ = rand_state(
        walker, walker_settled_q, 5, pose=0.02, vel=0.3)
    tau_exo = np.zeros(walker.njnt)

    seq = []
    s = (q.copy(), qd.copy(), act.copy(), lm.copy())
    for _ in range(3):
        s = NAT.step_control(walker, *s, exc, tau_exo, 8, DT)[:4]
        seq.append([x.copy() for x in s])

    s = (q.copy(), qd.copy(), act.copy(), lm.copy())
    o = (oq, np.zeros(other.nq), np.full(other.nmus, 0.3),
         other.mus_lopt.copy())
    mixed = []
    for _ in range(3):
        o = NAT.step_control(other, *o, np.full(other.nmus, 0.4),
                             np.zeros(other.njnt), 8, DT)[:4]
        s = NAT.step_control(walker, *s, exc, tau_exo, 8, DT)[:4]
        mixed.append([x.copy() for x in s])

    for a, b in zip(seq, mixed):
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


# ---------------------------------------------------------------------------
# non-walker models


def test_pendulum_consistency():
    m = build_pendulum(2)
    rng = np.random.default_rng(7)
    q = np.zeros(m.nq)
    q[3:] = rng.uniform(-1.0, 1.0, m.njnt)
    qd = np.zeros(m.nq)
    qd[3:] = rng.normal(0.0, 2.0, m.njnt)
    tau = rng.normal(0.0, 1.0, m.njnt)
    for _ in range(40):
        rq, rqd, _, rtau, _ = REF.substep(m, q, qd, tau, DT)
        nq, nqd, _, ntau, _ = NAT.substep(m, q, qd, tau, DT)
        np.testing.assert_allclose(nq, rq, atol=1e-12)
        np.testing.assert_allclose(nqd, rqd, atol=1e-11)
        np.testing.assert_allclose(ntau, rtau, atol=1e-12)
        q, qd = rq, rqd
    # locked root never moves
    assert np.all(q[:3] == 0.0) and np.all(qd[:3] == 0.0)


def test_muscle_free_step_control():
    m = build_pendulum(1)
    q = np.zeros(m.nq)
    q[3] = 0.4
    r = REF.step_control(m, q, np.zeros(m.nq), np.zeros(0), np.zeros(0),
                         np.zeros(0), np.zeros(m.njnt), 8, DT)
    n = NAT.step_control(m, q, np.zeros(m.nq), np.zeros(0), np.zeros(0),
                         np.zeros(0), np.zeros(m.njnt), 8, DT)
    np.testing.assert_allclose(n[0], r[0], atol=1e-13)
    np.testing.assert_allclose(n[1], r[1], atol=1e-12)
    assert np.asarray(n[4]["act_sub"]).shape == (8, 0)


def test_statue_contact_consistency(statue):
    q = statue.neutral_q.copy()
    q[1] -= 0.004
    qd = np.zeros(statue.nq)
    for _ in range(30):
        rq, rqd, rgrf, _, _ = REF.substep(statue, q, qd,
                                          np.zeros(statue.njnt), DT)
        nq, nqd, ngrf, _, _ = NAT.substep(statue, q, qd,
                                          np.zeros(statue.njnt), DT)
        np.testing.assert_allclose(nq, rq, atol=1e-12)
        np.testing.assert_allclose(nqd, rqd, atol=1e-10)
        np.testing.assert_allclose(ngrf, rgrf, rtol=1e-9, atol=1e-7)
        q, qd = rq, rqd
    assert rgrf[:, 1].sum() > 0.0


# ---------------------------------------------------------------------------
# whole environment across backends


@pytest.fixture(scope="module")
def short_clip(walker):
    return preprocess(synthetic_gait(walker, speed=1.25, cycles=4)).clip


def test_env_rollout_matches_across_backends(walker, short_clip, monkeypatch):
    # the env binds the kernel module at import; swapping it is enough
    # because reset-path helpers are shared single definitions
    cfg = EnvConfig(episode_steps=40)
    rng = np.random.default_rng(21)
    actions = rng.uniform(-1.0, 1.0, (5, 24))

    outs = []
    for impl in (REF, NAT):
        monkeypatch.setattr(gaitlab.env, "_K", impl)
        env = GaitEnv(walker, short_clip, cfg)
        obs0, _ = env.reset(seed=4, start_time=0.3, clip_index=0)
        traj = [obs0]
        rewards = []
        flags = []
        for a in actions:
            obs, rew, term, trunc, _ = env.step(a)
            traj.append(obs)
            rewards.append(rew)
            flags.append((term, trunc))
        outs.append((traj, rewards, flags))
    monkeypatch.undo()

    (tr, rr, fr), (tn, rn, fn_) = outs
    assert fr == fn_
    np.testing.assert_array_equal(tr[0], tn[0])  # reset path is shared
    for a, b in zip(tr[1:], tn[1:]):
        np.testing.assert_allclose(b, a, atol=1e-6)
    np.testing.assert_allclose(rn, rr, atol=1e-7)
