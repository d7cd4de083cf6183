"""Rigid-body dynamics layer: model state, torque-level stepping, contact.

This wraps the selected simulation backend with a typed state object.
The muscle-coupled fast path used by the environment lives in
gaitlab.env; this module is the torque-in / state-out interface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gaitlab._kernels import impl as _K
from gaitlab.errors import SimulationDiverged
from gaitlab.model import Model, build_model  # noqa: F401  (public re-export)


@dataclass
class ModelState:
    """Full dynamic state plus the per-step outputs downstream code reads.

    grf is per-foot [left, right] x (tangential, normal); landmarks are
    rows [foot_l, foot_r, head]; joint_moments are the net internal
    torques (actuation plus passive limits) applied on the last tick.
    """

    q: np.ndarray
    qd: np.ndarray
    grf: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    landmarks: np.ndarray = field(default_factory=lambda: np.zeros((3, 2)))
    joint_moments: np.ndarray = field(default_factory=lambda: np.zeros(6))
    time: float = 0.0

    def validate(self, model: Model):
        """Check internal consistency; raises on violation."""
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise SimulationDiverged("non-finite state")
        if np.any(self.grf[:, 1] < -1e-9):
            raise ValueError("negative normal GRF")
        pos, _ = _K.landmarks(model, self.q, self.qd)
        if not np.allclose(pos, self.landmarks, atol=1e-9):
            raise ValueError("landmarks inconsistent with forward kinematics")
        return self


def initial_state(model: Model, q=None, qd=None) -> ModelState:
    """State at a given pose (default: neutral standing), zero velocity."""
    q = model.neutral_q.copy() if q is None else np.asarray(q, dtype=float).copy()
    qd = np.zeros(model.nq) if qd is None else np.asarray(qd, dtype=float).copy()
    pos, _ = _K.landmarks(model, q, qd)
    return ModelState(q=q, qd=qd, landmarks=pos,
                      joint_moments=np.zeros(model.njnt))


def step_physics(model: Model, state: ModelState, muscle_torques,
                 exo_torques, dt: float) -> ModelState:
    """Advance one physics tick under prescribed joint torques.

    Raises SimulationDiverged when the state leaves the representable
    range.
    """
    tau = np.asarray(muscle_torques, dtype=float) + np.asarray(exo_torques,
                                                               dtype=float)
    q, qd, grf, tau_net, diverged = _K.substep(model, state.q, state.qd,
                                               tau, dt)
    if diverged:
        raise SimulationDiverged(
            f"state blew up at t={state.time + dt:.4f}s")
    pos, _ = _K.landmarks(model, q, qd)
    return ModelState(q=q, qd=qd, grf=grf, landmarks=pos,
                      joint_moments=tau_net, time=state.time + dt)


def contact_force(depth, depth_rate, slip_velocity, model: Model):
    """Ground reaction at one contact point; returns (tangential, normal)."""
    return _K.contact_force(depth, depth_rate, slip_velocity, model.con_k,
                            model.con_p, model.con_c, model.con_mu,
                            model.con_vreg)


def mechanical_energy(model: Model, state: ModelState) -> float:
    """Kinetic plus gravitational potential energy of the whole model."""
    return _K.mechanical_energy(model, state.q, state.qd)


def static_vertical_grf(model: Model, q) -> float:
    """Total vertical ground force at zero velocity (used by reset)."""
    return _K.static_vertical_grf(model, np.asarray(q, dtype=float))


def settle_root_height(model: Model, q, tol=1.0, span=0.1):
    """Vertical root offset that balances static contact force and weight.

    Bisects the root height over +-span meters until the net vertical
    ground force matches model weight within tol newtons. Returns the
    adjusted q. Raises ConvergenceError when no offset in the span
    achieves balance.
    """
    from gaitlab.errors import ConvergenceError

    q = np.asarray(q, dtype=float).copy()
    w = model.weight

    def excess(dy):
        qq = q.copy()
        qq[1] += dy
        return static_vertical_grf(model, qq) - w

    lo, hi = -span, span
    flo, fhi = excess(lo), excess(hi)
    if flo < 0.0 or fhi > 0.0:
        raise ConvergenceError(
            f"no vertical offset within +-{span} m balances weight "
            f"(force excess {flo:.1f} N at -{span}, {fhi:.1f} N at +{span})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = excess(mid)
        if abs(fm) <= tol:
            q[1] += mid
            return q
        if fm > 0.0:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError("root height bisection did not converge")
