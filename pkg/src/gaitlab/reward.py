"""Eight-term imitation reward.

Five exponential tracking terms (joint angles incl. root pitch, joint
velocities, root position, end effectors, net joint moments) plus three
penalties: metabolic effort in watts, excitation smoothness, and
exoskeleton torque usage. Two shipped profiles: `base` for imitation
training, `finetune` for device/weakness adaptation (softer tracking
gains, 10x effort penalty, exo term active).

Everything here is pure and stateless; the environment assembles the
deviation sums and calls evaluate() once per control step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from gaitlab.errors import ConfigError

__all__ = [
    "RewardConfig", "RewardBreakdown", "preset", "tracking_term",
    "effort_term", "smoothness_term", "exo_energy_term", "composite",
    "evaluate",
]


@dataclass(frozen=True)
class RewardConfig:
    """Gains (negative, inside the exponentials) and unsigned weights.

    Penalty weights are stored positive and applied subtractively in
    the composite.
    """

    phase: str
    k_pos: float
    k_vel: float
    k_root: float
    k_ee: float
    k_torq: float
    w_pos: float
    w_vel: float
    w_root: float
    w_ee: float
    w_torq: float
    w_eff: float
    w_smt: float
    w_exo: float

    def __post_init__(self):
        if self.phase not in ("base", "finetune"):
            raise ConfigError(f"unknown reward phase '{self.phase}'")
        for n in ("k_pos", "k_vel", "k_root", "k_ee", "k_torq"):
            if getattr(self, n) >= 0:
                raise ConfigError(f"{n} must be negative")
        for n in ("w_pos", "w_vel", "w_root", "w_ee", "w_torq",
                  "w_eff", "w_smt", "w_exo"):
            if getattr(self, n) < 0:
                raise ConfigError(f"{n} must be nonnegative (stored unsigned)")
        if self.phase == "base" and self.w_exo != 0.0:
            raise ConfigError("base phase has no exo term")


_BASE = RewardConfig(
    phase="base",
    k_pos=-2.0, k_vel=-0.05, k_root=-500.0, k_ee=-80.0, k_torq=-2.0,
    w_pos=0.25, w_vel=0.1, w_root=0.15, w_ee=0.25, w_torq=0.25,
    w_eff=3e-5, w_smt=1.0, w_exo=0.0)

# softer tracking gains so assistance may bend the kinematics; effort
# penalty up 10x; root gain unchanged (drift is never acceptable)
_FINETUNE = replace(
    _BASE, phase="finetune",
    k_pos=-0.4, k_vel=-0.01, k_ee=-16.0, k_torq=-0.4,
    w_eff=3e-4, w_exo=0.2)

_PRESETS = {"base": _BASE, "finetune": _FINETUNE}


def preset(name):
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown reward preset '{name}'") from None


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-term values plus the weighted composite for one control step.

    Tracking terms live in (0, 1]; r_eff is in watts; r_smt and r_exo
    are unitless penalties (r_exo in [0, 1]).
    """

    r_pos: float
    r_vel: float
    r_root: float
    r_ee: float
    r_torq: float
    r_eff: float
    r_smt: float
    r_exo: float
    composite: float


def tracking_term(sq_sum, k):
    """exp(k * sq_sum) for a squared-deviation sum and a negative gain."""
    if sq_sum < 0.0:
        raise ValueError("squared-deviation sum cannot be negative")
    return math.exp(k * sq_sum)


def effort_term(rates):
    """Whole-body muscle power in watts (no basal component).

    Accepts a MetabolicRates, a sequence of them (averaged, e.g. the
    substeps of one control interval), or a plain precomputed number.
    """
    if isinstance(rates, (int, float)):
        return float(rates)
    if hasattr(rates, "total_watts"):
        return rates.total_watts
    vals = [r.total_watts for r in rates]
    if not vals:
        raise ValueError("no metabolic rates to average")
    return float(np.mean(vals))


def smoothness_term(exc, exc_prev):
    """Mean squared excitation change between consecutive control steps."""
    e0 = np.asarray(exc, dtype=float)
    e1 = np.asarray(exc_prev, dtype=float)
    if e0.shape != e1.shape or e0.ndim != 1 or e0.size == 0:
        raise ValueError("excitation vectors must be equal-length and 1-d")
    return float(np.mean((e0 - e1) ** 2))


def exo_energy_term(exo_torques, tau_max):
    """Mean |torque| over all actuators as a fraction of the cap.

    exo_torques holds one entry per actuated side (and per joint for
    multi-joint devices); the (1/2) sum over left/right of |tau|/tau_max
    is exactly this mean, extended by averaging across joints.
    """
    if tau_max <= 0.0:
        raise ValueError("torque cap must be positive")
    t = np.asarray(exo_torques, dtype=float)
    if t.size == 0:
        raise ValueError("no exo torques given")
    return float(np.mean(np.abs(t))) / float(tau_max)


def composite(b, cfg):
    """Weighted combination: tracking terms add, penalties subtract."""
    return (cfg.w_pos * b.r_pos + cfg.w_vel * b.r_vel
            + cfg.w_root * b.r_root + cfg.w_ee * b.r_ee
            + cfg.w_torq * b.r_torq
            - cfg.w_eff * b.r_eff - cfg.w_smt * b.r_smt
            - cfg.w_exo * b.r_exo)


def evaluate(cfg, *, pos_sq, vel_sq, root_sq, ee_sq, torq_sq,
             effort, excitation, prev_excitation,
             exo_torques=None, exo_tau_max=None):
    """Assemble the full breakdown for one control step.

    The five *_sq arguments are squared-deviation sums against the
    reference; effort is anything effort_term() accepts. exo_torques is
    None outside device runs (the term then reads 0).
    """
    if exo_torques is None:
        r_exo = 0.0
    else:
        r_exo = exo_energy_term(exo_torques, exo_tau_max)
    b = RewardBreakdown(
        r_pos=tracking_term(pos_sq, cfg.k_pos),
        r_vel=tracking_term(vel_sq, cfg.k_vel),
        r_root=tracking_term(root_sq, cfg.k_root),
        r_ee=tracking_term(ee_sq, cfg.k_ee),
        r_torq=tracking_term(torq_sq, cfg.k_torq),
        r_eff=effort_term(effort),
        r_smt=smoothness_term(excitation, prev_excitation),
        r_exo=r_exo,
        composite=0.0)
    return replace(b, composite=composite(b, cfg))
