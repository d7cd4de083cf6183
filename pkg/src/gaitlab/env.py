"""Gait imitation environment.

Episode lifecycle, observation assembly, action decoding, and the
muscle weakness mask. The walker tracks an overground reference clip;
reference time wraps cyclically so short clips support arbitrarily
long episodes.

The action vector is [muscle excitations | exo torque commands] with
one exo channel per internal joint regardless of the attached device,
so policies keep the same shape across base training and device
fine-tuning. Channels for unassisted joints (torque cap 0) produce no
torque, and the base reward phase clamps all exo output to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gaitlab import metabolics, reward
from gaitlab._kernels import impl as _K
from gaitlab.dynamics import settle_root_height
from gaitlab.errors import ConfigError
from gaitlab.model import Model
from gaitlab.muscles import equilibrium_fiber_lengths
from gaitlab.refmotion import ClipFrame, ReferenceClip

RESET_ACTIVATION = 0.05

WEAKNESS_PRESETS = {
    "plantarflexor-weak-left": {"soleus_l": 0.05, "gastrocnemius_l": 0.05},
    "hipflexor-weak-left": {"iliopsoas_l": 0.05},
}


@dataclass(frozen=True)
class EnvConfig:
    """Episode and decoding parameters (model and clip are passed
    separately to GaitEnv)."""

    control_rate_hz: float = 25.0
    physics_rate_hz: float = 200.0
    episode_steps: int = 250
    termination_radius_m: float = 0.4
    future_steps: int = 5
    reward_phase: str = "base"
    weakness: dict | None = None    # muscle name -> max excitation

    def __post_init__(self):
        if self.control_rate_hz <= 0.0 or self.physics_rate_hz <= 0.0:
            raise ConfigError("rates must be positive")
        ratio = self.physics_rate_hz / self.control_rate_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(
                "physics rate must be an integer multiple of the control rate")
        if self.episode_steps < 1:
            raise ConfigError("episode_steps must be at least 1")
        if self.termination_radius_m <= 0.0:
            raise ConfigError("termination radius must be positive")
        if self.future_steps < 1:
            raise ConfigError("future_steps must be at least 1")
        if self.weakness:
            for name, cap in self.weakness.items():
                if not 0.0 < float(cap) <= 1.0:
                    raise ConfigError(
                        f"weakness cap for '{name}' must be in (0, 1]")
        reward.preset(self.reward_phase)    # validates the tag

    @property
    def substeps(self):
        return int(round(self.physics_rate_hz / self.control_rate_hz))

    @property
    def control_dt(self):
        return 1.0 / self.control_rate_hz

    @property
    def physics_dt(self):
        return 1.0 / self.physics_rate_hz

    @classmethod
    def from_run(cls, data: dict) -> "EnvConfig":
        """Build from a parsed run-configuration mapping."""
        weakness = data.get("weakness") or None
        if weakness is not None:
            weakness = {str(k): float(v) for k, v in weakness.items()}
        return cls(
            control_rate_hz=float(data.get("control_rate_hz", 25.0)),
            physics_rate_hz=float(data.get("physics_rate_hz", 200.0)),
            episode_steps=int(data.get("episode_steps", 250)),
            termination_radius_m=float(data.get("termination_radius_m", 0.4)),
            future_steps=int(data.get("future_reference_steps", 5)),
            reward_phase=str(data.get("reward", "base")),
            weakness=weakness,
        )


def observation_size(model: Model, future_steps=5):
    """3 entries per muscle + 4 GRF + angles + 6 linear velocities +
    future reference deltas (future_steps per angle channel)."""
    nang = 1 + model.njnt
    return 3 * model.nmus + 4 + nang + 6 + future_steps * nang


def assemble_observation(model, q, qd, act, norm_fiber_len, tendon_force,
                         grf, ref, t, control_dt, future_steps):
    """Fixed-layout observation vector.

    Layout for the default walker (106 entries):
      [  0: 18)  normalized fiber lengths
      [ 18: 36)  tendon forces / fmax
      [ 36: 54)  activations (muscle state, unmodified)
      [ 54: 58)  per-foot GRF (tangential, normal) / body weight
      [ 58: 65)  root pitch + joint angles, rad
      [ 65: 71)  root and per-foot linear velocities, m/s
      [ 71:106)  reference angles k control steps ahead minus current
                 angles, k = 1..future_steps

    ref is anything with a sample(t) -> ClipFrame method; the env passes
    its cyclic clip view so lookups past the clip end wrap.
    """
    ang = q[2:]
    _, lmk_vel = _K.landmarks(model, q, qd)
    parts = [
        np.asarray(norm_fiber_len, dtype=float),
        np.asarray(tendon_force, dtype=float) / model.mus_fmax,
        np.asarray(act, dtype=float),
        np.asarray(grf, dtype=float).ravel() / model.weight,
        ang,
        np.concatenate([qd[:2], lmk_vel[0], lmk_vel[1]]),
    ]
    for k in range(1, future_steps + 1):
        parts.append(ref.sample(t + k * control_dt).ang - ang)
    return np.concatenate(parts)


class _CyclicRef:
    """Cyclic view of a reference clip.

    Sample times wrap at the clip duration; each lap adds the clip's
    net forward travel to the x channels (root and landmarks), so a
    periodic clip extends to an indefinitely long walk. Angle, velocity,
    and moment channels repeat as-is.
    """

    def __init__(self, clip: ReferenceClip):
        if clip.duration <= 0.0:
            raise ConfigError("reference clip must span at least two frames")
        self.clip = clip
        self.period = clip.duration
        self.drift = float(clip.root[-1, 0] - clip.root[0, 0])

    def sample(self, t) -> ClipFrame:
        laps = math.floor(t / self.period)
        local = min(max(t - laps * self.period, 0.0), self.period)
        f = self.clip.sample(local)
        if laps:
            shift = np.array([laps * self.drift, 0.0])
            f = ClipFrame(ang=f.ang, vel=f.vel, mom=f.mom,
                          root=f.root + shift, lmk=f.lmk + shift)
        return f


def _mask_entries(model: Model, mask):
    """Resolve a weakness mask (mapping or preset name) to index/cap pairs."""
    if isinstance(mask, str):
        if mask not in WEAKNESS_PRESETS:
            raise ConfigError(f"unknown weakness preset '{mask}'")
        mask = WEAKNESS_PRESETS[mask]
    out = []
    for name, cap in mask.items():
        cap = float(cap)
        if not 0.0 < cap <= 1.0:
            raise ConfigError(f"weakness cap for '{name}' must be in (0, 1]")
        out.append((model.muscle_index(name), cap))
    return out


class GaitEnv:
    """Muscle-driven walker imitating a reference clip.

    Standard episodic interface: reset(seed) -> (obs, info) and
    step(action) -> (obs, reward, terminated, truncated, info). The
    scalar reward is the weighted composite; the per-term breakdown
    rides in info["reward_terms"].

    Each instance owns all of its mutable state; run several instances
    for parallel collection.
    """

    def __init__(self, model: Model, clips, config: EnvConfig = EnvConfig()):
        if isinstance(clips, ReferenceClip):
            clips = [clips]
        if not clips:
            raise ConfigError("at least one reference clip is required")
        self.model = model
        self.config = config
        self._refs = [_CyclicRef(c) for c in clips]
        self._reward_cfg = reward.preset(config.reward_phase)
        self._caps = np.ones(model.nmus)
        if config.weakness:
            self.apply_weakness(config.weakness)
        # exact ZOH discretization of the first-order output filter
        self._alpha = 1.0 - np.exp(
            -2.0 * np.pi * model.exo_cutoff_hz * config.control_dt)
        self._assist = model.exo_tau_max > 0.0
        self._rng = np.random.default_rng()
        self._ref = None
        self._done = True
        self._last_obs = None

    # -- public surface -----------------------------------------------------

    @property
    def observation_size(self):
        return observation_size(self.model, self.config.future_steps)

    @property
    def action_size(self):
        return self.model.nmus + self.model.njnt

    @property
    def time(self):
        return self._t

    @property
    def steps(self):
        return self._steps

    @property
    def weakness_caps(self):
        return self._caps.copy()

    @property
    def reference_speed(self):
        """Nominal speed (m/s) of the active episode's reference clip."""
        if self._ref is None:
            raise RuntimeError("no active episode; call reset()")
        return self._ref.clip.speed

    def spec(self):
        """Interface descriptor consumed by the trainer and bindings."""
        return {
            "observation_size": self.observation_size,
            "action_size": self.action_size,
            "n_muscles": self.model.nmus,
            "n_exo": self.model.njnt,
            "control_rate_hz": self.config.control_rate_hz,
            "episode_steps": self.config.episode_steps,
            "reward_phase": self.config.reward_phase,
            "backend": _K.BACKEND_NAME,
        }

    def state(self):
        """(q, qd, activations, fiber lengths) copies of the current state."""
        return (self._q.copy(), self._qd.copy(),
                self._act.copy(), self._lm.copy())

    def apply_weakness(self, mask):
        """Cap subsequent excitations per muscle.

        mask is a {muscle name: cap} mapping or a preset name; muscles
        not named keep their current cap. Commands below the cap pass
        through unchanged (clamp, not rescale).
        """
        for idx, cap in _mask_entries(self.model, mask):
            self._caps[idx] = cap

    def reset(self, seed=None, *, start_time=None, clip_index=None):
        """Start a new episode from a reference state.

        The start time is sampled uniformly over the clip unless given.
        The root is shifted vertically (bisection, 1 N tolerance) so
        static ground force balances weight; muscles start at
        activation 0.05 with equilibrium fiber lengths.
        """
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        if clip_index is None:
            clip_index = int(self._rng.integers(len(self._refs)))
        ref = self._refs[clip_index]
        if start_time is None:
            start_time = float(self._rng.uniform(0.0, ref.period))

        frame = ref.sample(start_time)
        m = self.model
        q = np.zeros(m.nq)
        q[:2] = frame.root
        q[2:] = frame.ang
        qd = np.zeros(m.nq)
        h = 0.5 / ref.clip.rate
        qd[:2] = (ref.sample(start_time + h).root
                  - ref.sample(start_time - h).root) / (2.0 * h)
        qd[2:] = frame.vel

        q = settle_root_height(m, q, tol=1.0, span=0.1)

        act = np.full(m.nmus, RESET_ACTIVATION)
        L, Ldot, _ = _K.muscle_geometry(m, q, qd)
        lm = equilibrium_fiber_lengths(m, RESET_ACTIVATION, L)

        self._ref = ref
        self._q, self._qd, self._act, self._lm = q, qd, act, lm
        self._t = start_time
        self._steps = 0
        self._done = False
        self._exo_pre = np.zeros(m.njnt)
        self._exo_filt = np.zeros(m.njnt)
        self._prev_exc = None    # first step reads zero smoothness

        mf = _K.muscle_force(m, act, lm, L, Ldot)
        obs = assemble_observation(
            m, q, qd, act, mf["ln"], mf["f_tendon"], self._static_grf(q),
            ref, start_time, self.config.control_dt, self.config.future_steps)
        self._last_obs = obs
        info = {
            "time": start_time,
            "clip_index": clip_index,
            "root_shift": float(q[1] - frame.root[1]),
        }
        return obs, info

    def step(self, action):
        if self._done:
            raise RuntimeError("episode finished; call reset()")
        m, cfg = self.model, self.config
        a = np.asarray(action, dtype=float)
        if a.shape != (self.action_size,):
            raise ValueError(
                f"action shape {a.shape}, expected ({self.action_size},)")
        if not np.all(np.isfinite(a)):
            raise ValueError("action must be finite")

        exc_policy = 0.5 * (np.clip(a[:m.nmus], -1.0, 1.0) + 1.0)
        exc = np.minimum(exc_policy, self._caps)

        # exo pipeline: scale to the torque cap, rate-clip against the
        # previous command, then first-order low-pass
        if cfg.reward_phase == "base":
            cmd = np.zeros(m.njnt)
        else:
            cmd = np.clip(a[m.nmus:], -1.0, 1.0) * m.exo_tau_max
        self._exo_pre = np.clip(cmd, self._exo_pre - m.exo_tau_max,
                                self._exo_pre + m.exo_tau_max)
        self._exo_filt = (self._exo_filt
                          + self._alpha * (self._exo_pre - self._exo_filt))

        q, qd, act, lm, diag = _K.step_control(
            m, self._q, self._qd, self._act, self._lm, exc,
            self._exo_filt, cfg.substeps, cfg.physics_dt)
        self._steps += 1
        t = self._t + cfg.control_dt

        if diag["diverged"]:
            self._done = True
            zero = reward.RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0,
                                          0.0, 0.0, 0.0, 0.0)
            info = {"time": t, "steps": self._steps, "diverged": True,
                    "reward_terms": zero}
            return self._last_obs, 0.0, True, False, info

        self._q, self._qd, self._act, self._lm = q, qd, act, lm
        self._t = t

        frame = self._ref.sample(t)
        ang_err = frame.ang - q[2:]
        vel_err = frame.vel - qd[2:]
        root_err = frame.root - q[:2]
        lmk_pos, _ = _K.landmarks(m, q, qd)
        torq_err = frame.mom * m.mass_total - diag["tau_net"]

        # one probe call over the whole (substep, muscle) batch; the
        # effort term is the substep mean of whole-body watts
        sub = metabolics.muscle_energy_rate(
            metabolics.ProbeState(
                excitation=exc,
                activation=diag["act_sub"],
                norm_fiber_length=diag["ln_sub"],
                norm_fiber_velocity=diag["vn_sub"],
                active_force=diag["f_active_sub"]),
            m)
        effort = float(np.mean(sub.edot @ sub.mass))
        rates = metabolics.MetabolicRates(
            h_am=sub.h_am.mean(axis=0), h_sl=sub.h_sl.mean(axis=0),
            w_ce=sub.w_ce.mean(axis=0), edot=sub.edot.mean(axis=0),
            mass=sub.mass)

        exo_args = {}
        if cfg.reward_phase != "base" and self._assist.any():
            # normalize per joint so mixed-cap devices average fairly
            ratio = (np.abs(self._exo_filt[self._assist])
                     / m.exo_tau_max[self._assist])
            exo_args = dict(exo_torques=ratio, exo_tau_max=1.0)

        prev = exc_policy if self._prev_exc is None else self._prev_exc
        breakdown = reward.evaluate(
            self._reward_cfg,
            pos_sq=float(ang_err @ ang_err),
            vel_sq=float(vel_err @ vel_err),
            root_sq=float(root_err @ root_err),
            ee_sq=float(np.sum((frame.lmk - lmk_pos) ** 2)),
            torq_sq=float(torq_err @ torq_err),
            effort=effort,
            excitation=exc_policy,
            prev_excitation=prev,
            **exo_args)
        self._prev_exc = exc_policy

        deviation = float(np.hypot(root_err[0], root_err[1]))
        terminated = deviation > cfg.termination_radius_m
        truncated = self._steps >= cfg.episode_steps
        self._done = terminated or truncated

        obs = assemble_observation(
            m, q, qd, act, diag["ln_sub"][-1], diag["f_tendon_sub"][-1],
            diag["grf"], self._ref, t, cfg.control_dt, cfg.future_steps)
        self._last_obs = obs
        info = {
            "time": t,
            "steps": self._steps,
            "reward_terms": breakdown,
            "root_deviation": deviation,
            "excitation": exc.copy(),
            "exo_torque": self._exo_filt.copy(),
            "exo_torque_cmd": self._exo_pre.copy(),
            "grf": diag["grf"].copy(),
            "tau_net": diag["tau_net"].copy(),
            "metabolic_rates": rates,
        }
        return obs, breakdown.composite, terminated, truncated, info

    # -- internals ----------------------------------------------------------

    def _static_grf(self, q):
        """Per-foot (tangential, normal) spring force at zero velocity,
        for the initial observation before any dynamics step."""
        m = self.model
        kin = _K.kinematics(m, q, np.zeros(m.nq))
        out = np.zeros((2, 2))
        for i in range(m.nsph):
            s = m.sph_seg[i]
            ca, sa = np.cos(kin["phi"][s]), np.sin(kin["phi"][s])
            lx, ly = m.sph_pos[i]
            cy = kin["orig"][s][1] + sa * lx + ca * ly
            depth = m.sph_r[i] - cy
            if depth > 0.0:
                out[m.sph_foot[i], 1] += m.con_k * depth ** m.con_p
        return out
