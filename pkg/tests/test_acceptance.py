"""Acceptance gate: one test per shipping criterion.

Each test restates the contract checks at their stated tolerances and
prints a single summary line with the measured numbers; the per-module
test files hold the exhaustive variants. The training smoke is marked
'smoke' (deselect with -m "not smoke" during development; a full run
takes roughly twenty minutes on a desktop CPU).
"""

import math
import time

import numpy as np
import pytest
import torch

from gaitlab import dynamics, metabolics, reward
from gaitlab.env import EnvConfig, GaitEnv
from gaitlab.metrics import (
    JOINTS,
    symmetry_rmse,
    tracking_metrics,
)
from gaitlab.model import build_model
from gaitlab.muscles import activation_step, active_force_length, mtu_force
from gaitlab.refmotion import (
    cycle_normalize,
    events_from_clip,
    mirror_clip,
    preprocess,
    synthetic_gait,
    to_overground,
    zero_lag_lowpass,
)
import gaitlab.refmotion as refmotion
from gaitlab.trainer import (
    TrainerConfig,
    actor_loss,
    critic_loss,
    evaluate,
    preset,
    soft_update,
    train,
)

from conftest import build_pendulum
from test_metabolics import make_spec, oracle_rates, rates_for
from test_metrics import (
    T_LONG,
    joint_waves,
    make_clip,
    make_trace,
    oracle_ref_curve_deg,
    oracle_rmse,
    shifted,
    trace_from_clip,
)
from test_trainer import fd_grad, make_batch, make_nets

PHYS_DT = 1.0 / 200.0


def _line(name, detail):
    print(f"acceptance {name}: PASS ({detail})")


# ---------------------------------------------------------------------------


def test_reward_suite():
    cfg = reward.preset("base")
    # perfect tracking scores exactly one under the base weights
    b = reward.evaluate(cfg, pos_sq=0.0, vel_sq=0.0, root_sq=0.0,
                        ee_sq=0.0, torq_sq=0.0, effort=0.0,
                        excitation=np.zeros(18),
                        prev_excitation=np.zeros(18))
    assert abs(b.composite - 1.0) < 1e-12
    # hand examples: single-term values
    assert reward.tracking_term(0.01, cfg.k_pos) == pytest.approx(
        math.exp(-0.02), rel=1e-12)
    assert reward.exo_energy_term([5.0, -5.0], 5.0) == 1.0
    e0 = np.zeros(18)
    e1 = e0.copy()
    e1[0] = 1.0
    assert reward.smoothness_term(e1, e0) == pytest.approx(1.0 / 18.0,
                                                           rel=1e-12)
    # every tracking term strictly decreasing in its deviation sum
    rng = np.random.default_rng(11)
    gains = (cfg.k_pos, cfg.k_vel, cfg.k_root, cfg.k_ee, cfg.k_torq)
    pairs = rng.uniform(0.0, 1.0, size=(1000, 2))
    checked = 0
    for a, c in pairs:
        lo, hi = sorted((a, c))
        if hi - lo < 1e-9:
            continue
        for k in gains:
            assert reward.tracking_term(hi, k) < reward.tracking_term(lo, k)
        checked += 1
    assert checked >= 990
    _line("reward-suite",
          f"perfect composite 1.0 within 1e-12; {checked} random pairs "
          "strictly decreasing in all five tracking terms")


def test_metabolics_oracle():
    g = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        ft = g.uniform(0.0, 1.0)
        s = make_spec(ft=ft, vmax=g.uniform(4.0, 15.0),
                      fmax=g.uniform(200.0, 6000.0),
                      lopt=g.uniform(0.03, 0.2))
        exc, act = g.uniform(0.0, 1.0), g.uniform(0.0, 1.0)
        ln = g.uniform(0.4, 1.7)
        vn = g.uniform(-1.0, 1.0) * s.vmax
        fa = g.uniform(0.0, s.fmax)
        r = rates_for(s, exc, act, ln, vn, fa)
        want = oracle_rates(exc, act, ln, vn, fa, ft, s.vmax, s.lopt, s.mass)
        for got, ref in zip((r.h_am[0], r.h_sl[0], r.w_ce[0], r.edot[0]),
                            want):
            assert got == pytest.approx(ref, rel=1e-9, abs=1e-12)
            if ref != 0.0:
                worst = max(worst, abs(got - ref) / abs(ref))
        assert r.edot[0] >= 0.0
    _line("metabolics-oracle",
          f"100 random states term-by-term within 1e-9 relative "
          f"(worst {worst:.2e}); edot nonnegative throughout")


def test_muscle_dynamics(walker, rng):
    # Euler activation vs the exact first-order response, 1 s at 5 ms
    dt, tau = 0.005, 0.04
    worst = 0.0
    for a0, e in ((0.6, 1.0), (0.4, 0.0), (0.5, 0.9), (0.2, 0.55)):
        a = a0
        for n in range(1, 201):
            a = activation_step(a, e, dt, (tau, tau))
            exact = e - (e - a0) * math.exp(-n * dt / tau)
            worst = max(worst, abs(a - exact))
    assert worst < 0.01
    # active force-length slope vanishes at the optimum
    h = 1e-5
    slope = (active_force_length(1.0 + h) - active_force_length(1.0 - h)) \
        / (2.0 * h)
    assert abs(slope) < 1e-4
    # tendon force nonnegative over 10,000 random walker muscle states
    n = walker.nmus
    for _ in range(10_000 // n):
        act = rng.uniform(0.0, 1.0, n)
        lm = rng.uniform(walker.mus_lmin, walker.mus_lmax)
        L = walker.mus_L0 * rng.uniform(0.8, 1.2, n)
        Ld = rng.uniform(-2.0, 2.0, n) * walker.mus_vmax * walker.mus_lopt
        ft, _ = mtu_force(lm, act, L, Ld, walker)
        assert np.all(ft >= 0.0)
        assert np.all(np.isfinite(ft))
    _line("muscle-dynamics",
          f"activation worst error {worst:.4f} < 0.01; f_L slope at "
          f"optimum {slope:.1e}; tendon force >= 0 on 10,000 states")


def test_dynamics_core(walker, walker_settled_q):
    # passive double pendulum: energy drift < 1% over 10 s of 200 Hz ticks
    m = build_pendulum(2, mass=2.0, length=0.8)
    q0 = m.neutral_q.copy()
    q0[3], q0[4] = 0.5, 0.2
    st = dynamics.initial_state(m, q0)
    e0 = dynamics.mechanical_energy(m, st)
    drift = 0.0
    for _ in range(2000):
        st = dynamics.step_physics(m, st, np.zeros(m.njnt), np.zeros(m.njnt),
                                   PHYS_DT)
        drift = max(drift, abs(dynamics.mechanical_energy(m, st) - e0))
    assert drift < 0.01 * abs(e0)
    # static stance carries the model weight
    grf = dynamics.static_vertical_grf(walker, walker_settled_q)
    assert grf == pytest.approx(walker.weight, rel=0.02)
    # device mass deltas
    base = build_model("builtin:walker_75kg", "builtin:muscles_18")
    hip = build_model("builtin:walker_75kg", "builtin:muscles_18",
                      "builtin:device_hip")
    ankle = build_model("builtin:walker_75kg", "builtin:muscles_18",
                        "builtin:device_ankle")
    assert abs(hip.mass_total - base.mass_total - 2.9) < 1e-9
    assert abs(ankle.mass_total - base.mass_total - 3.9) < 1e-9
    _line("dynamics-core",
          f"pendulum drift {drift / abs(e0):.3%} < 1%; stance GRF "
          f"{grf:.1f} N vs weight {walker.weight:.1f} N within 2%; "
          "device masses +2.9/+3.9 kg within 1e-9")


def test_refmotion_suite(walker):
    clip = synthetic_gait(walker, speed=1.25, cycles=8)
    # mirroring is an involution, bit for bit
    twice = mirror_clip(mirror_clip(clip))
    for f in ("ang", "vel", "mom", "root", "lmk", "contact"):
        assert np.array_equal(getattr(twice, f), getattr(clip, f)), f
    # overground conversion advances positions by exactly v*T
    o = to_overground(clip, 1.2)
    assert o.root[-1, 0] - clip.root[-1, 0] == pytest.approx(
        1.2 * clip.duration, rel=1e-12)
    # zero-lag filter: no phase shift in the passband, -3 dB at cutoff
    rate, cutoff = 100.0, 4.0
    t = np.arange(3000) / rate
    sl = slice(600, -600)
    x = np.sin(2 * np.pi * 1.0 * t)
    y = zero_lag_lowpass(x, rate, cutoff)
    corr = np.correlate(y[sl], x[sl], mode="full")
    assert int(np.argmax(corr)) == len(x[sl]) - 1       # peak at lag zero
    xc = np.sin(2 * np.pi * cutoff * t)
    yc = zero_lag_lowpass(xc, rate, cutoff)
    amp = np.sqrt(2.0 * np.mean(yc[sl] ** 2))
    gain_db = 20.0 * np.log10(amp)
    assert -3.5 <= gain_db <= -2.5
    # gait-event recovery is exact on the synthetic generator
    ev = events_from_clip(clip)
    for side in range(2):
        assert np.all(np.diff(ev.strikes[side]) == 110)
    # cycle normalization reconstructs the generating waveform
    b = preprocess(clip)
    mean, _ = cycle_normalize(b.clip.ang[:, 1], b.events.strikes[0],
                              n_cycles=6, n_points=100)
    phase = np.arange(100) / 100.0
    (hip, _, _), _ = refmotion._leg_angles(phase, hip_amp=0.52)
    rms = np.sqrt(np.mean((mean - hip) ** 2))
    assert rms < 0.01 * np.sqrt(np.mean(hip ** 2))
    _line("refmotion-suite",
          f"mirror involution bit-exact; overground shift v*T within "
          f"1e-12; cutoff gain {gain_db:.2f} dB in [-3.5, -2.5]; strike "
          f"spacing exactly 110 frames; cycle reconstruction "
          f"{rms / np.sqrt(np.mean(hip ** 2)):.3%} RMS")


def test_env_contract(walker):
    bundle = preprocess(synthetic_gait(walker, speed=1.25, cycles=8))
    clip = bundle.clip
    # termination fires at the first deviation beyond 0.4 m, never earlier
    worst_pre = 0.0
    for seed, policy in ((14, "zero"), (3, "random"), (8, "random")):
        env = GaitEnv(walker, clip, EnvConfig())
        env.reset(seed=seed, start_time=0.5)
        rng = np.random.default_rng(seed)
        terminated = False
        devs = []
        for _ in range(250):
            a = np.zeros(24) if policy == "zero" else rng.uniform(-1, 1, 24)
            _, _, term, trunc, info = env.step(a)
            devs.append(info["root_deviation"])
            if term:
                terminated = True
                break
            assert not trunc
        assert terminated
        assert devs[-1] > 0.4
        assert all(d <= 0.4 for d in devs[:-1])
        worst_pre = max(worst_pre, max(devs[:-1], default=0.0))
    # truncation at exactly 250 steps once termination is out of reach
    env = GaitEnv(walker, clip, EnvConfig(termination_radius_m=50.0))
    env.reset(seed=0)
    for k in range(1, 251):
        _, _, term, trunc, info = env.step(np.zeros(24))
        assert not term
        assert trunc == (k == 250)
    assert info["steps"] == 250
    # exo rate clip and filter caps over 1,000 random control steps
    hip = build_model("builtin:walker_75kg", "builtin:muscles_18",
                      "builtin:device_hip")
    hclip = preprocess(synthetic_gait(hip, speed=1.25, cycles=8)).clip
    env = GaitEnv(hip, hclip, EnvConfig(reward_phase="finetune"))
    tau_max = np.asarray(hip.exo_tau_max, dtype=float)
    rng = np.random.default_rng(2)
    steps = 0
    prev_cmd = np.zeros(6)
    env.reset(seed=2)
    while steps < 1000:
        _, _, term, trunc, info = env.step(rng.uniform(-1, 1, 24))
        cmd = np.asarray(info["exo_torque_cmd"], dtype=float)
        filt = np.asarray(info["exo_torque"], dtype=float)
        assert np.all(np.abs(cmd) <= tau_max + 1e-12)
        assert np.all(np.abs(filt) <= tau_max + 1e-12)
        assert np.all(np.abs(cmd - prev_cmd) <= tau_max + 1e-9)
        prev_cmd = cmd
        steps += 1
        if term or trunc:
            env.reset(seed=2 + steps)
            prev_cmd = np.zeros(6)
    # weakness caps excitation under the 5% preset
    caps = {"soleus_l": 0.05, "soleus_r": 0.05,
            "gastrocnemius_l": 0.05, "gastrocnemius_r": 0.05}
    env = GaitEnv(walker, clip, EnvConfig(weakness=caps))
    idx = [walker.muscle_index(n) for n in caps]
    rng = np.random.default_rng(4)
    env.reset(seed=4)
    peak = 0.0
    for k in range(500):
        _, _, term, trunc, info = env.step(rng.uniform(-1, 1, 24))
        exc = np.asarray(info["excitation"], dtype=float)
        peak = max(peak, float(exc[idx].max()))
        assert np.all(exc[idx] <= 0.05 + 1e-12)
        if term or trunc:
            env.reset(seed=100 + k)
    _line("env-contract",
          f"termination first-crossing only (worst pre-crossing deviation "
          f"{worst_pre:.3f} m); truncation at step 250 exactly; exo caps "
          f"held over 1000 random steps; weak-muscle excitation peak "
          f"{peak:.4f} <= 0.05 + 1e-12")


def test_trainer_correctness(walker):
    # finite-difference gradient agreement, critic and actor
    actor, critic, target = make_nets()
    batch = make_batch()
    eps_c = torch.as_tensor(np.random.default_rng(5).normal(size=(8, 3)))
    eps_a = torch.as_tensor(np.random.default_rng(6).normal(size=(8, 3)))

    def closs():
        return critic_loss(critic, target, actor, batch, 0.95, 0.1,
                           eps=eps_c)

    def aloss():
        return actor_loss(actor, critic, batch, 0.1, eps=eps_a)[0]

    worst = 0.0
    for net, loss_fn in ((critic, closs), (actor, aloss)):
        loss = loss_fn()
        net.zero_grad()
        loss.backward()
        rng = np.random.default_rng(0)
        params = list(net.parameters())
        for _ in range(12):
            p = params[rng.integers(len(params))]
            i = int(rng.integers(p.numel()))
            g_fd = fd_grad(loss_fn, p, i)
            g_ad = float(p.grad.view(-1)[i])
            rel = abs(g_fd - g_ad) / max(abs(g_fd), abs(g_ad), 1e-8)
            worst = max(worst, rel)
            assert rel <= 1e-4
    # soft-update arithmetic
    _, critic2, target2 = make_nets(seed=9)
    before = {k: v.numpy().copy() for k, v in target2.state_dict().items()}
    online = {k: v.numpy().copy() for k, v in critic2.state_dict().items()}
    soft_update(target2, critic2, 0.02)
    for k, v in target2.state_dict().items():
        np.testing.assert_allclose(
            v.numpy(), 0.02 * online[k] + 0.98 * before[k],
            rtol=0.0, atol=1e-12)
    # seeded single-collector training is bit-reproducible
    clip = preprocess(synthetic_gait(walker, speed=1.25, cycles=8)).clip
    cfg = TrainerConfig(hidden=(16, 16), batch_size=16, n_envs=1,
                        total_steps=120, learning_starts=20,
                        replay_capacity=500, train_freq=4, grad_steps=2,
                        log_every=40, seed=5)
    env_cfg = EnvConfig(episode_steps=20)

    def factory():
        return GaitEnv(walker, clip, env_cfg)

    ckpt1, rows1 = train(factory, cfg)
    ckpt2, rows2 = train(factory, cfg)
    assert rows1 == rows2
    assert sorted(ckpt1.arrays) == sorted(ckpt2.arrays)
    for k in ckpt1.arrays:
        np.testing.assert_array_equal(ckpt1.arrays[k], ckpt2.arrays[k],
                                      err_msg=k)
    _line("trainer-correctness",
          f"worst FD gradient mismatch {worst:.2e} <= 1e-4; soft update "
          "within 1e-12; seeded 120-step run bit-reproducible")


def test_metrics_suite():
    clip = make_clip()
    # self-comparison is exact
    tm = tracking_metrics(trace_from_clip(clip), clip)
    for j in JOINTS:
        assert tm.angle_rmse_deg[j] == 0.0
        assert tm.angle_r2[j] == 1.0
        assert tm.moment_rmse_nm_per_kg[j] == 0.0
        assert tm.moment_r2[j] == 1.0
    assert tm.grf_rmse_bw == 0.0
    # constant offset: RMSE equals the offset, R^2 drops by var ratio
    tr = make_trace(ang6=clip.ang[:, 1:7] + np.radians(2.0),
                    mom_nm=clip.mom * clip.subject_mass)
    tm2 = tracking_metrics(tr, clip)
    for idx, j in enumerate(JOINTS):
        ref = oracle_ref_curve_deg(clip, 1 + idx)
        assert tm2.angle_rmse_deg[j] == pytest.approx(2.0, rel=1e-9)
        assert tm2.angle_r2[j] == pytest.approx(1.0 - 4.0 / np.var(ref),
                                                rel=1e-9)
    # flat line scores R^2 = 0 with RMSE equal to the reference RMS
    flat = make_trace(ang6=np.zeros((T_LONG, 6)),
                      mom_nm=clip.mom * clip.subject_mass)
    tm3 = tracking_metrics(flat, clip)
    for idx, j in enumerate(JOINTS):
        ref = oracle_ref_curve_deg(clip, 1 + idx)
        assert abs(tm3.angle_r2[j]) < 1e-9
        assert tm3.angle_rmse_deg[j] == pytest.approx(
            oracle_rmse(np.zeros_like(ref), ref), rel=1e-9)
    # bilateral symmetry: a 3 degree offset reads back exactly
    sym = symmetry_rmse(make_trace(
        ang6=shifted(joint_waves(T_LONG), np.radians(3.0))))
    assert abs(sym - 3.0) < 1e-12
    _line("metrics-suite",
          "self-comparison RMSE 0 / R^2 1 bitwise; offset and flat-line "
          f"closed forms within 1e-9; symmetry offset error "
          f"{abs(sym - 3.0):.1e} < 1e-12")


# ---------------------------------------------------------------------------


@pytest.mark.smoke
def test_training_smoke(walker):
    """Desk-scale end-to-end run: base training must beat the measured
    random-policy return at least twofold inside the wall-time budget,
    then an exo fine-tune must complete with live exo reward terms."""
    bundle = preprocess(synthetic_gait(walker, speed=1.25, cycles=12))
    clips = [bundle.clip, bundle.mirrored]
    env_cfg = EnvConfig()

    def factory():
        return GaitEnv(build_model("builtin:walker_75kg",
                                   "builtin:muscles_18"), clips, env_cfg)

    # random-policy baseline, 20 episodes
    env = factory()
    rng = np.random.default_rng(0)
    rets = []
    lens = []
    for ep in range(20):
        env.reset(seed=1000 + ep)
        total, n, done = 0.0, 0, False
        while not done:
            _, r, term, trunc, _ = env.step(rng.uniform(-1.0, 1.0, 24))
            total += r
            n += 1
            done = term or trunc
        rets.append(total)
        lens.append(n)
    baseline = float(np.mean(rets))
    base_len = float(np.mean(lens))

    t0 = time.monotonic()
    ckpt, rows = train(factory, preset("desk"), phase="base")
    wall = time.monotonic() - t0
    assert wall < 1800.0

    traces, summary = evaluate(ckpt, factory(), 20, deterministic=True,
                               seed=123)
    trained = summary["mean_return"]
    assert trained >= 2.0 * baseline
    # the literal bound is weak when the random baseline is negative
    # (smoothness penalties dominate flailing); require a real gait too
    assert trained > 0.0
    assert summary["mean_length"] > base_len

    # entropy auto-tuning: the 10k-step moving average of the logged
    # policy entropy moves toward the -dim(A) target over the run
    target = -24.0
    ent = np.array([r["entropy"] for r in rows if np.isfinite(r["entropy"])])
    k = max(1, int(round(10_000 / preset("desk").log_every)))
    ma = np.convolve(ent, np.ones(k) / k, mode="valid")
    assert abs(ma[-1] - target) < abs(ma[0] - target)
    assert all(r["alpha"] > 0.0 for r in rows)

    # follow-on exo fine-tune
    hip = build_model("builtin:walker_75kg", "builtin:muscles_18",
                      "builtin:device_hip")
    hip_bundle = preprocess(synthetic_gait(hip, speed=1.25, cycles=12))
    hip_clips = [hip_bundle.clip, hip_bundle.mirrored]
    hip_cfg = EnvConfig(reward_phase="finetune")

    def hip_factory():
        return GaitEnv(build_model("builtin:walker_75kg",
                                   "builtin:muscles_18",
                                   "builtin:device_hip"), hip_clips, hip_cfg)

    ckpt2, rows2 = train(hip_factory, preset("desk-finetune"),
                         phase="exo-finetune", init=ckpt)
    assert ckpt2.total_steps == preset("desk-finetune").total_steps
    r_exo = [r["r_exo"] for r in rows2 if np.isfinite(r["r_exo"])]
    assert any(v != 0.0 for v in r_exo)
    tau_cap = float(np.max(hip.exo_tau_max))
    torq = [r["exo_torque_abs"] for r in rows2
            if np.isfinite(r["exo_torque_abs"])]
    assert torq and all(v < tau_cap for v in torq)
    _line("training-smoke",
          f"desk 200k steps in {wall / 60.0:.1f} min; trained return "
          f"{trained:.1f} vs random {baseline:.1f} (>= 2x, positive, "
          f"longer episodes: {summary['mean_length']:.0f} vs "
          f"{base_len:.0f} steps); entropy moving average "
          f"{ma[0]:.1f} -> {ma[-1]:.1f} toward {target}; fine-tune "
          f"50k steps with nonzero r_exo and mean |torque| "
          f"{max(torq):.1f} N*m < {tau_cap:.1f}")
