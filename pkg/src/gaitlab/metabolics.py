"""Muscle metabolic probe.

Per-muscle energy rate split into activation/maintenance heat,
shortening/lengthening heat, and contractile-element work, with the
heat coefficients weighted by fiber composition (Umberger-style).
Rates are per kilogram of muscle; the gross aggregate weights by
muscle mass and adds the whole-body resting rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gaitlab.model import Model
from gaitlab.muscles import active_force_length

__all__ = [
    "BASAL_RATE_W_PER_KG", "AEROBIC_SCALE", "ProbeState", "MetabolicRates",
    "muscle_energy_rate", "gross_metabolic_cost",
]

BASAL_RATE_W_PER_KG = 1.2   # whole-body resting rate; gross cost only
AEROBIC_SCALE = 1.5         # steady locomotion is primarily aerobic


@dataclass
class ProbeState:
    """Minimal per-muscle inputs for the probe (arrays over muscles).

    A full MuscleState works anywhere a ProbeState does; this exists so
    recorded per-substep arrays can be fed directly without rebuilding
    tendon quantities the probe never reads.
    """

    excitation: np.ndarray
    activation: np.ndarray
    norm_fiber_length: np.ndarray
    norm_fiber_velocity: np.ndarray     # lopt/s, negative while shortening
    active_force: np.ndarray            # N, along the fiber


@dataclass
class MetabolicRates:
    """Per-muscle rates in W/kg-muscle.

    edot is the clamped total; the raw parts are kept so audits can see
    where the energy went. mass carries the per-muscle masses used for
    aggregation.
    """

    h_am: np.ndarray
    h_sl: np.ndarray
    w_ce: np.ndarray
    edot: np.ndarray
    mass: np.ndarray

    @property
    def total_watts(self):
        """Whole-body muscle power draw in W (no basal term)."""
        return float(self.edot @ self.mass)


def _params(spec):
    if isinstance(spec, Model):
        return spec.mus_ft, spec.mus_vmax, spec.mus_lopt, spec.mus_mass
    return (np.atleast_1d(float(spec.fast_twitch_ratio)),
            np.atleast_1d(float(spec.vmax)),
            np.atleast_1d(float(spec.lopt)),
            np.atleast_1d(float(spec.mass)))


def muscle_energy_rate(state, spec):
    """Metabolic rate components for each muscle, W/kg-muscle.

    spec is a Model (vector form) or a single MuscleSpec. The
    excitation/activation composite charges rising excitation
    immediately and averages on the way down. Above optimal length the
    maintenance and velocity terms are discounted by the force-length
    curve (40% of maintenance is length-independent). The total is
    clamped at zero: a muscle cannot bank absorbed energy.
    """
    ft, vmax, lopt, mass = _params(spec)
    exc = np.asarray(state.excitation, dtype=float)
    act = np.asarray(state.activation, dtype=float)
    ln = np.asarray(state.norm_fiber_length, dtype=float)
    vn = np.asarray(state.norm_fiber_velocity, dtype=float)
    fa = np.asarray(state.active_force, dtype=float)

    A = np.where(exc > act, exc, 0.5 * (exc + act))
    f_iso = active_force_length(ln)
    long_side = ln > 1.0

    am = (128.0 * ft + 25.0) * A**0.6 * AEROBIC_SCALE
    h_am = np.where(long_side, am * (0.4 + 0.6 * f_iso), am)

    alpha_st = 250.0 / vmax     # slow-twitch shortening coef, 100/(vmax/2.5)
    alpha_ft = 153.0 / vmax
    shortening = -(alpha_st * (1.0 - ft) + alpha_ft * ft) * vn * A**2
    lengthening = 4.0 * alpha_st * vn * A
    h_sl = np.where(vn <= 0.0, shortening, lengthening) * AEROBIC_SCALE
    h_sl = np.where(long_side, h_sl * f_iso, h_sl)

    w_ce = -fa * vn * lopt / mass

    edot = np.maximum(h_am + h_sl + w_ce, 0.0)
    return MetabolicRates(h_am=h_am, h_sl=h_sl, w_ce=w_ce, edot=edot,
                          mass=mass)


def gross_metabolic_cost(edot, muscle_mass, total_mass,
                         basal=BASAL_RATE_W_PER_KG):
    """Whole-body gross metabolic rate, W per kg of body mass.

    edot is a nonempty (time, muscle) array of clamped per-muscle rates
    in W/kg-muscle. Rows are time-averaged, weighted by muscle mass, and
    the resting rate is added on top.
    """
    edot = np.asarray(edot, dtype=float)
    if edot.ndim != 2 or edot.shape[0] == 0:
        raise ValueError("need a nonempty (time, muscle) rate trace")
    mm = np.asarray(muscle_mass, dtype=float)
    if mm.shape != (edot.shape[1],):
        raise ValueError("muscle mass vector does not match the trace")
    return basal + float(edot.mean(axis=0) @ mm) / float(total_mass)
