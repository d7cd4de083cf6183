"""Episode traces: per-control-step recordings of a rollout.

An EpisodeTrace is the unit of evaluation output. It stores one row per
control step (struct-of-arrays, float64 throughout): the full dynamic
state, the excitations and exo torques actually applied, the reward
breakdown, and the per-muscle metabolic rates. Everything downstream
(gait metrics, figure exports, audits) is a deterministic function of a
trace plus a reference clip, so the trace has to be complete and
self-describing -- metadata pins the environment fingerprint, reference
speed, training phase, device, and any weakness mask.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from gaitlab._kernels import impl as _K
from gaitlab.dynamics import ModelState
from gaitlab.errors import DataError
from gaitlab.metabolics import MetabolicRates
from gaitlab.reward import RewardBreakdown

__all__ = [
    "TRACE_FORMAT", "REWARD_FIELDS", "config_fingerprint", "TraceMeta",
    "EpisodeTrace", "TraceRecorder", "save_trace", "load_trace",
]

TRACE_FORMAT = "gaitlab-trace/1"

# column order of EpisodeTrace.reward_terms
REWARD_FIELDS = ("r_pos", "r_vel", "r_root", "r_ee", "r_torq",
                 "r_eff", "r_smt", "r_exo", "composite")

# per-step arrays, in serialization order; muscle_mass is the one
# constant channel (per-muscle masses used for aggregation)
_STEP_ARRAYS = ("time", "q", "qd", "grf", "landmarks", "joint_moments",
                "excitation", "activation", "exo_torque", "reward_terms",
                "h_am", "h_sl", "w_ce", "edot")


def config_fingerprint(spec):
    """Short stable digest of an environment interface descriptor.

    The backend tag is dropped before hashing: both kernels implement
    the same numerical contract, and a policy trained against one must
    evaluate against the other without tripping fingerprint checks.
    """
    data = {k: v for k, v in dict(spec).items() if k != "backend"}
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TraceMeta:
    """What the episode was: enough to refuse apples-to-oranges
    comparisons downstream."""

    fingerprint: str
    speed_mps: float
    phase: str              # reward phase the policy ran under
    device: str             # exo device kind ("none" when unassisted)
    weakness: dict          # muscle name -> excitation cap; {} if none
    control_dt: float

    def to_json(self):
        return {"format": TRACE_FORMAT, "fingerprint": self.fingerprint,
                "speed_mps": self.speed_mps, "phase": self.phase,
                "device": self.device, "weakness": dict(self.weakness),
                "control_dt": self.control_dt}

    @classmethod
    def from_json(cls, data):
        if data.get("format") != TRACE_FORMAT:
            raise DataError("not a gaitlab-trace/1 bundle")
        return cls(fingerprint=str(data["fingerprint"]),
                   speed_mps=float(data["speed_mps"]),
                   phase=str(data["phase"]),
                   device=str(data["device"]),
                   weakness={str(k): float(v)
                             for k, v in data["weakness"].items()},
                   control_dt=float(data["control_dt"]))


@dataclass
class EpisodeTrace:
    """One episode, one row per control step.

    Shapes for T steps: time (T,), q/qd (T, nq), grf (T, 2, 2) per foot
    x (tangential, normal), landmarks (T, 3, 2) rows [foot_l, foot_r,
    head], joint_moments and exo_torque (T, njnt) in N*m, excitation
    and activation (T, nmus), reward_terms (T, 9) columns REWARD_FIELDS,
    metabolic channels (T, nmus) in W/kg-muscle, muscle_mass (nmus,).
    """

    meta: TraceMeta
    time: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    grf: np.ndarray
    landmarks: np.ndarray
    joint_moments: np.ndarray
    excitation: np.ndarray
    activation: np.ndarray
    exo_torque: np.ndarray
    reward_terms: np.ndarray
    h_am: np.ndarray
    h_sl: np.ndarray
    w_ce: np.ndarray
    edot: np.ndarray
    muscle_mass: np.ndarray

    def __post_init__(self):
        n = len(self.time)
        if n < 1:
            raise DataError("empty trace")
        for name in _STEP_ARRAYS:
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.shape[0] != n:
                raise DataError(
                    f"channel '{name}' has {arr.shape[0]} rows, expected {n}")
        self.muscle_mass = np.asarray(self.muscle_mass, dtype=float)
        if self.edot.shape[1:] != self.muscle_mass.shape:
            raise DataError("muscle_mass does not match the rate channels")
        dt = self.meta.control_dt
        diffs = np.diff(self.time)
        if n > 1 and not np.all(np.abs(diffs - dt) < 1e-9 * max(1.0, dt)):
            raise DataError("time grid is not uniform at the control period")
        if not np.all(np.isfinite(self.time)) or (n > 1 and diffs.min() <= 0):
            raise DataError("time channel must be finite and increasing")

    def __len__(self):
        return len(self.time)

    @property
    def duration(self):
        """Episode span in seconds (one control period per row)."""
        return len(self) * self.meta.control_dt

    def state(self, i) -> ModelState:
        """Reconstruct the dynamic state snapshot at step i."""
        return ModelState(q=self.q[i].copy(), qd=self.qd[i].copy(),
                          grf=self.grf[i].copy(),
                          landmarks=self.landmarks[i].copy(),
                          joint_moments=self.joint_moments[i].copy(),
                          time=float(self.time[i]))

    def reward(self, i) -> RewardBreakdown:
        return RewardBreakdown(*(float(v) for v in self.reward_terms[i]))

    def rates(self, i) -> MetabolicRates:
        return MetabolicRates(h_am=self.h_am[i].copy(),
                              h_sl=self.h_sl[i].copy(),
                              w_ce=self.w_ce[i].copy(),
                              edot=self.edot[i].copy(),
                              mass=self.muscle_mass.copy())

    @property
    def composite(self):
        """Per-step weighted reward (copy)."""
        return self.reward_terms[:, -1].copy()

    def episode_return(self):
        """Undiscounted sum of the composite reward."""
        return float(self.reward_terms[:, -1].sum())

    def with_meta(self, **changes) -> "EpisodeTrace":
        return replace(self, meta=replace(self.meta, **changes))


class TraceRecorder:
    """Accumulates rows during a rollout; construct after reset() so the
    metadata reflects the active episode.

    record(info) takes the info dict returned by GaitEnv.step and reads
    the post-step state off the environment. A step flagged diverged is
    not recorded (the env keeps the last valid state and the episode
    ends there), so a finished trace never holds non-finite rows.
    """

    def __init__(self, env):
        spec = env.spec()
        model = env.model
        caps = env.weakness_caps
        weak = {model.mus_names[i]: float(caps[i])
                for i in np.flatnonzero(caps < 1.0)}
        self._env = env
        self._meta = TraceMeta(
            fingerprint=config_fingerprint(spec),
            speed_mps=float(env.reference_speed),
            phase=str(spec["reward_phase"]),
            device=str(model.device.kind),
            weakness=weak,
            control_dt=float(env.config.control_dt))
        self._rows = []

    @property
    def meta(self):
        return self._meta

    def record(self, info):
        """Append one step; returns False (and records nothing) on a
        diverged step."""
        if info.get("diverged"):
            return False
        env = self._env
        q, qd, act, _ = env.state()
        lmk, _ = _K.landmarks(env.model, q, qd)
        rt = info["reward_terms"]
        mr = info["metabolic_rates"]
        self._rows.append((
            float(info["time"]), q, qd, info["grf"], lmk, info["tau_net"],
            info["excitation"], act, info["exo_torque"],
            np.array([getattr(rt, f) for f in REWARD_FIELDS]),
            mr.h_am, mr.h_sl, mr.w_ce, mr.edot))
        return True

    def __len__(self):
        return len(self._rows)

    def finish(self) -> EpisodeTrace:
        if not self._rows:
            raise DataError("no steps recorded")
        cols = [np.asarray(c, dtype=float) for c in zip(*self._rows)]
        return EpisodeTrace(self._meta, *cols,
                            muscle_mass=self._env.model.mus_mass.copy())


def save_trace(trace: EpisodeTrace, path):
    """Write one trace as a compressed self-describing bundle."""
    arrays = {name: getattr(trace, name) for name in _STEP_ARRAYS}
    arrays["muscle_mass"] = trace.muscle_mass
    np.savez_compressed(path, meta=json.dumps(trace.meta.to_json()), **arrays)


def load_trace(path) -> EpisodeTrace:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = TraceMeta.from_json(json.loads(str(z["meta"])))
            arrays = {name: z[name] for name in _STEP_ARRAYS}
            arrays["muscle_mass"] = z["muscle_mass"]
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read trace bundle: {exc}") from None
    return EpisodeTrace(meta, **arrays)
