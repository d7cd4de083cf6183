"""Muscle-tendon unit layer: activation dynamics, Hill curves, the
damped-equilibrium force solve, and moment-arm mapping.

Vectorized over muscles; the environment drives the same kernels
through the fast path, this module is the public per-call interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gaitlab._kernels import impl as _K
from gaitlab._kernels.reference import (  # canonical curve definitions
    AF,
    E0,
    FLEN,
    GAMMA,
    KLEN,
    active_force_length,
    force_velocity,
    passive_force_length,
    tendon_force_length,
)
from gaitlab.errors import ConvergenceError
from gaitlab.model import Model, MuscleSpec, load_muscles  # noqa: F401

__all__ = [
    "MuscleState", "activation_step", "mtu_force", "joint_moments",
    "equilibrium_fiber_length", "equilibrium_fiber_lengths",
    "active_force_length",
    "passive_force_length", "force_velocity", "tendon_force_length",
    "AF", "E0", "FLEN", "GAMMA", "KLEN", "MuscleSpec", "load_muscles",
]


@dataclass
class MuscleState:
    """Per-muscle state and per-tick outputs (arrays over all muscles).

    norm_fiber_velocity is in optimal fiber lengths per second, negative
    while shortening. active_force is the contractile force along the
    fiber; tendon_force is what reaches the skeleton.
    """

    excitation: np.ndarray
    activation: np.ndarray
    fiber_length: np.ndarray            # m
    norm_fiber_length: np.ndarray
    norm_fiber_velocity: np.ndarray     # lopt/s
    tendon_force: np.ndarray            # N
    active_force: np.ndarray            # N

    def validate(self):
        for name in ("excitation", "activation"):
            v = getattr(self, name)
            if np.any(v < 0.0) or np.any(v > 1.0):
                raise ValueError(f"{name} outside [0, 1]")
        if np.any(self.tendon_force < -1e-9):
            raise ValueError("negative tendon force")
        return self


def activation_step(activation, excitation, dt, spec):
    """Advance first-order activation dynamics one explicit Euler step.

    spec may be a MuscleSpec, a Model (vector form), or a (tau_act,
    tau_deact) pair. The faster time constant applies when excitation
    exceeds activation.
    """
    if isinstance(spec, MuscleSpec):
        ta, td = spec.tau_act, spec.tau_deact
    elif isinstance(spec, Model):
        ta, td = spec.mus_tau_act, spec.mus_tau_deact
    else:
        ta, td = spec
    return _K.activation_step(np.asarray(activation, dtype=float),
                              np.asarray(excitation, dtype=float),
                              dt, ta, td)


def _single_model(spec: MuscleSpec):
    """A minimal array view over one MuscleSpec for the kernel calls."""

    class _M:
        pass

    m = _M()
    m.mus_fmax = np.array([spec.fmax])
    m.mus_lopt = np.array([spec.lopt])
    m.mus_lslack = np.array([spec.lslack])
    m.mus_h = np.array([spec.pennation_height])
    m.mus_vmax = np.array([spec.vmax])
    m.mus_beta = np.array([spec.damping])
    m.mus_lmin = np.array([spec.min_fiber_length])
    m.mus_lmax = np.array([spec.max_fiber_length])
    m.mus_rigid = np.array([1 if spec.rigid_tendon else 0], dtype=np.uint8)
    return m


def mtu_force(fiber_length, activation, mtu_length, mtu_velocity, spec):
    """Damped-equilibrium MTU force for one muscle or a whole model.

    Returns (tendon_force, MuscleState). For rigid-tendon specs the
    fiber state comes from the path directly and mtu_velocity drives the
    force-velocity curve; for elastic tendons the fiber velocity is the
    analytic equilibrium solution and fiber_length is the caller-owned
    state (integrate with the returned norm_fiber_velocity).
    """
    single = isinstance(spec, MuscleSpec)
    m = _single_model(spec) if single else spec
    act = np.atleast_1d(np.asarray(activation, dtype=float))
    lm = np.atleast_1d(np.asarray(fiber_length, dtype=float))
    L = np.atleast_1d(np.asarray(mtu_length, dtype=float))
    Ld = np.atleast_1d(np.asarray(mtu_velocity, dtype=float))
    out = _K.muscle_force(m, act, lm, L, Ld)
    state = MuscleState(
        excitation=act.copy(),        # caller tracks excitation separately
        activation=act,
        fiber_length=out["ln"] * m.mus_lopt,
        norm_fiber_length=out["ln"],
        norm_fiber_velocity=out["w"] * m.mus_vmax,
        tendon_force=out["f_tendon"],
        active_force=out["f_active"],
    )
    if single:
        return float(out["f_tendon"][0]), state
    return out["f_tendon"], state


def joint_moments(model: Model, tendon_forces, q):
    """Joint torques produced by the given tendon forces at pose q."""
    _, _, r = _K.muscle_geometry(model, np.asarray(q, dtype=float),
                                 np.zeros(model.nq))
    return _K.joint_moments(model, np.asarray(tendon_forces, dtype=float), r)


def mtu_geometry(model: Model, q, qd=None):
    """MTU lengths, lengthening rates, and instantaneous moment arms."""
    qd = np.zeros(model.nq) if qd is None else np.asarray(qd, dtype=float)
    return _K.muscle_geometry(model, np.asarray(q, dtype=float), qd)


def equilibrium_fiber_length(spec: MuscleSpec, activation, mtu_length,
                             tol=1e-10):
    """Static fiber length where tendon and fiber forces balance.

    Bisection on the force imbalance; used to initialize fiber states.
    Raises ConvergenceError if no balance exists in the fiber range.
    """
    a = float(activation)
    L = float(mtu_length)
    h = spec.pennation_height

    def imbalance(lm):
        cosa = np.sqrt(max(1.0 - (h / lm) ** 2, 1e-6))
        strain = (L - lm * cosa - spec.lslack) / spec.lslack
        ln = lm / spec.lopt
        ft = float(tendon_force_length(strain))
        ff = (a * float(active_force_length(ln)) +
              float(passive_force_length(ln))) * cosa
        return ft - ff

    lo, hi = spec.min_fiber_length, spec.max_fiber_length
    flo, fhi = imbalance(lo), imbalance(hi)
    if flo <= 0.0:
        # tendon slack even at the shortest fiber: rest at slack length
        proj = max(L - spec.lslack, 1e-6)
        return float(np.clip(np.sqrt(proj**2 + h**2), lo, hi))
    if fhi >= 0.0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = imbalance(mid)
        if abs(fm) <= tol or hi - lo < 1e-14:
            return mid
        if fm > 0.0:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"fiber equilibrium failed for '{spec.name}'")


def equilibrium_fiber_lengths(model: Model, activation, mtu_lengths,
                              tol=1e-10):
    """equilibrium_fiber_length over all of a model's muscles at once.

    Lockstep bisection: each lane follows the scalar solver's midpoint
    sequence exactly (converged lanes freeze, the rest keep halving),
    so results match the scalar routine bit for bit. Episode resets
    call this once instead of one scalar solve per muscle.
    """
    a = np.broadcast_to(np.asarray(activation, dtype=float), (model.nmus,))
    L = np.asarray(mtu_lengths, dtype=float)
    h, lslack, lopt = model.mus_h, model.mus_lslack, model.mus_lopt

    def imbalance(lm):
        cosa = np.sqrt(np.maximum(1.0 - (h / lm) ** 2, 1e-6))
        strain = (L - lm * cosa - lslack) / lslack
        ln = lm / lopt
        ff = (a * active_force_length(ln) + passive_force_length(ln)) * cosa
        return tendon_force_length(strain) - ff

    lo, hi = model.mus_lmin.copy(), model.mus_lmax.copy()
    flo, fhi = imbalance(lo), imbalance(hi)

    out = np.empty(model.nmus)
    slack = flo <= 0.0      # tendon slack even at the shortest fiber
    if slack.any():
        proj = np.maximum(L - lslack, 1e-6)
        out[slack] = np.clip(np.sqrt(proj**2 + h**2), lo, hi)[slack]
    top = ~slack & (fhi >= 0.0)
    out[top] = hi[top]

    live = ~(slack | top)
    for _ in range(200):
        if not live.any():
            return out
        mid = 0.5 * (lo + hi)
        fm = imbalance(mid)
        done = live & ((np.abs(fm) <= tol) | (hi - lo < 1e-14))
        out[done] = mid[done]
        live &= ~done
        up = live & (fm > 0.0)
        lo[up] = mid[up]
        dn = live & (fm <= 0.0)
        hi[dn] = mid[dn]
    if live.any():
        name = model.mus_names[int(np.argmax(live))]
        raise ConvergenceError(f"fiber equilibrium failed for '{name}'")
    return out
