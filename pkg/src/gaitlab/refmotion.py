"""Reference-motion ingestion and preprocessing.

Clips are columnar CSV plus a JSON sidecar (rate, mass, left/right
pairing). The pipeline: estimate treadmill belt speed from stance-phase
toe travel, add it back to all global positions, low-pass the moment
channels, duplicate-and-mirror, and segment on heel contact. A synthetic
planar gait generator ships as the default desk-scale reference so the
stack runs without any external dataset.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt

from gaitlab._kernels import impl as _K
from gaitlab.errors import DataError

__all__ = [
    "ReferenceClip", "GaitEvents", "ClipFrame", "BeltSpeed",
    "load_clip", "save_clip", "synthetic_gait",
    "estimate_belt_speed", "belt_speed_from_clip", "to_overground",
    "mirror_clip", "zero_lag_lowpass", "detect_gait_events",
    "events_from_clip", "cycle_normalize", "preprocess", "ProcessedBundle",
]

CLIP_FORMAT = "gaitlab-clip/1"

ANG_CHANNELS = ("root_pitch", "hip_l", "knee_l", "ankle_l",
                "hip_r", "knee_r", "ankle_r")
MOM_CHANNELS = ("hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r")
LMK_CHANNELS = ("foot_l", "foot_r", "head")

# left<->right permutations for the fixed channel layout
_ANG_SWAP = (0, 4, 5, 6, 1, 2, 3)
_MOM_SWAP = (3, 4, 5, 0, 1, 2)
_LMK_SWAP = (1, 0, 2)

# two-pass Butterworth: each pass takes sqrt of the magnitude response,
# so the per-pass corner is pushed out to keep -3 dB at the nominal cutoff
_DUAL_PASS_CORRECTION = (2.0**0.5 - 1.0) ** -0.25


@dataclass
class ReferenceClip:
    """Uniformly sampled reference gait, immutable by convention.

    Angles/velocities cover root pitch plus the six internal joints;
    moments cover the internal joints only and are stored subject-mass
    normalized (N*m/kg). Landmarks are global (foot_l, foot_r, head).
    """

    rate: float                 # Hz
    ang: np.ndarray             # (n, 7) rad
    vel: np.ndarray             # (n, 7) rad/s
    mom: np.ndarray             # (n, 6) N*m/kg
    root: np.ndarray            # (n, 2) m, global pelvis position
    lmk: np.ndarray             # (n, 3, 2) m, global landmark positions
    contact: np.ndarray | None  # (n, 2) bool, per-foot stance flags
    speed: float                # m/s nominal gait speed label
    subject_mass: float         # kg
    mirrored: bool = False

    @property
    def nframes(self):
        return self.ang.shape[0]

    @property
    def duration(self):
        return (self.nframes - 1) / self.rate

    @property
    def times(self):
        return np.arange(self.nframes) / self.rate

    def validate(self, vel_tol=0.05):
        n = self.nframes
        if n < 2:
            raise DataError("clip needs at least two frames")
        if self.rate <= 0:
            raise DataError("sample rate must be positive")
        shapes = {"ang": (n, 7), "vel": (n, 7), "mom": (n, 6),
                  "root": (n, 2), "lmk": (n, 3, 2)}
        for name, want in shapes.items():
            a = getattr(self, name)
            if a.shape != want:
                raise DataError(f"{name} channel shape {a.shape}, want {want}")
            if not np.all(np.isfinite(a)):
                raise DataError(f"nonfinite values in {name} channel")
        if self.contact is not None and self.contact.shape != (n, 2):
            raise DataError("contact flags must be (nframes, 2)")
        if self.speed < 0 or self.subject_mass <= 0:
            raise DataError("bad speed or subject mass metadata")
        # velocity channels must be derivatives of the angle channels
        cd = np.gradient(self.ang, 1.0 / self.rate, axis=0)
        err = float(np.sqrt(np.mean((self.vel - cd) ** 2)))
        ref = max(float(np.sqrt(np.mean(self.vel**2))), 1e-9)
        if err > vel_tol * ref:
            raise DataError(
                f"velocity channels disagree with angle derivatives "
                f"({err / ref:.1%} RMS, cap {vel_tol:.0%})")
        return self

    def sample(self, t):
        """Linear interpolation of every channel at time(s) t.

        Scalar t gives per-frame shapes; an array t adds a leading axis.
        Times outside [0, duration] are rejected.
        """
        tq = np.asarray(t, dtype=float)
        if np.any(tq < -1e-12) or np.any(tq > self.duration + 1e-12):
            raise ValueError(f"sample time outside clip [0, {self.duration:.3f}]")
        x = np.clip(tq * self.rate, 0.0, self.nframes - 1)
        i0 = np.minimum(x.astype(int), self.nframes - 2)
        w = (x - i0)[..., None]

        def lerp(a):
            flat = a.reshape(self.nframes, -1)
            out = flat[i0] * (1.0 - w) + flat[i0 + 1] * w
            return out.reshape(tq.shape + a.shape[1:])

        return ClipFrame(ang=lerp(self.ang), vel=lerp(self.vel),
                         mom=lerp(self.mom), root=lerp(self.root),
                         lmk=lerp(self.lmk))


@dataclass
class ClipFrame:
    """One interpolated reference sample (or a batch of them)."""

    ang: np.ndarray
    vel: np.ndarray
    mom: np.ndarray
    root: np.ndarray
    lmk: np.ndarray


@dataclass
class GaitEvents:
    """Heel-strike and toe-off frame indices, one array per side."""

    strikes: tuple
    offs: tuple

    def validate(self):
        for side in range(len(self.strikes)):
            hs, to = self.strikes[side], self.offs[side]
            for a in (hs, to):
                if len(a) > 1 and np.any(np.diff(a) <= 0):
                    raise DataError(f"side {side}: event indices not increasing")
            # strikes and offs must interleave
            merged = sorted([(i, 0) for i in hs] + [(i, 1) for i in to])
            kinds = [k for _, k in merged]
            if any(a == b for a, b in zip(kinds, kinds[1:])):
                raise DataError(f"side {side}: strike/off ordering broken")
        return self

    def n_cycles(self, side):
        return max(len(self.strikes[side]) - 1, 0)

    def sides_without_cycles(self):
        return [s for s in range(len(self.strikes)) if self.n_cycles(s) == 0]

    def mirrored(self):
        return GaitEvents(strikes=self.strikes[::-1], offs=self.offs[::-1])

    def to_dict(self):
        return {"strikes": [list(map(int, a)) for a in self.strikes],
                "offs": [list(map(int, a)) for a in self.offs]}

    @staticmethod
    def from_dict(d):
        return GaitEvents(
            strikes=tuple(np.asarray(a, dtype=int) for a in d["strikes"]),
            offs=tuple(np.asarray(a, dtype=int) for a in d["offs"]))


# ---------------------------------------------------------------------------
# clip file format


def _columns(with_contact):
    cols = ["time"]
    cols += [f"ang_{c}" for c in ANG_CHANNELS]
    cols += [f"vel_{c}" for c in ANG_CHANNELS]
    cols += [f"mom_{c}" for c in MOM_CHANNELS]
    cols += ["root_x", "root_y"]
    for c in LMK_CHANNELS:
        cols += [f"lmk_{c}_x", f"lmk_{c}_y"]
    if with_contact:
        cols += ["contact_l", "contact_r"]
    return cols


def _standard_pairs(with_contact):
    pairs = [[f"{k}_{j}_l", f"{k}_{j}_r"]
             for k in ("ang", "vel") for j in ("hip", "knee", "ankle")]
    pairs += [[f"mom_{j}_l", f"mom_{j}_r"] for j in ("hip", "knee", "ankle")]
    pairs += [["lmk_foot_l", "lmk_foot_r"]]
    if with_contact:
        pairs += [["contact_l", "contact_r"]]
    return pairs


def save_clip(clip, path):
    """Write CSV + JSON sidecar; %.17g keeps round trips bit-exact."""
    path = Path(path)
    has_contact = clip.contact is not None
    cols = _columns(has_contact)
    blocks = [clip.times[:, None], clip.ang, clip.vel, clip.mom, clip.root,
              clip.lmk.reshape(clip.nframes, 6)]
    if has_contact:
        blocks.append(clip.contact.astype(float))
    table = np.hstack(blocks)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in table:
            w.writerow([f"{v:.17g}" for v in row])
    side = {"format": CLIP_FORMAT, "rate_hz": clip.rate,
            "speed_mps": clip.speed, "subject_mass_kg": clip.subject_mass,
            "mirrored": clip.mirrored,
            "units": {"ang": "rad", "vel": "rad/s", "mom": "N*m/kg",
                      "root": "m", "lmk": "m"},
            "pairs": _standard_pairs(has_contact)}
    path.with_suffix(".json").write_text(json.dumps(side, indent=1))
    return path


def load_clip(path):
    """Load a CSV + sidecar clip bundle and validate it."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise DataError(f"missing sidecar {sidecar.name}")
    meta = json.loads(sidecar.read_text())
    if meta.get("format") != CLIP_FORMAT:
        raise DataError(f"unknown clip format tag {meta.get('format')!r}")

    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) < 3:
        raise DataError("clip table too short")
    header, body = rows[0], rows[1:]
    idx = {name: i for i, name in enumerate(header)}
    has_contact = "contact_l" in idx
    for name in _columns(has_contact):
        if name not in idx:
            raise DataError(f"clip table missing column '{name}'")

    # lateral channels must be declared as left/right pairs in the sidecar
    declared = {tuple(p) for p in meta.get("pairs", [])}
    for pair in _standard_pairs(has_contact):
        if tuple(pair) not in declared:
            raise DataError(f"unpaired lateral channel '{pair[0]}'")

    table = np.array([[float(v) for v in row] for row in body])
    col = lambda name: table[:, idx[name]]   # noqa: E731

    rate = float(meta["rate_hz"])
    t = col("time")
    if np.max(np.abs(np.diff(t) - 1.0 / rate)) > 1e-9:
        raise DataError("frame timestamps are not uniform at the stated rate")

    n = table.shape[0]
    ang = np.stack([col(f"ang_{c}") for c in ANG_CHANNELS], axis=1)
    vel = np.stack([col(f"vel_{c}") for c in ANG_CHANNELS], axis=1)
    mom = np.stack([col(f"mom_{c}") for c in MOM_CHANNELS], axis=1)
    root = np.stack([col("root_x"), col("root_y")], axis=1)
    lmk = np.stack([np.stack([col(f"lmk_{c}_x"), col(f"lmk_{c}_y")], axis=1)
                    for c in LMK_CHANNELS], axis=1)
    contact = None
    if has_contact:
        contact = np.stack([col("contact_l"), col("contact_r")],
                           axis=1) > 0.5
    assert lmk.shape == (n, 3, 2)
    clip = ReferenceClip(
        rate=rate, ang=ang, vel=vel, mom=mom, root=root, lmk=lmk,
        contact=contact, speed=float(meta["speed_mps"]),
        subject_mass=float(meta["subject_mass_kg"]),
        mirrored=bool(meta.get("mirrored", False)))
    return clip.validate()


# ---------------------------------------------------------------------------
# preprocessing transforms


@dataclass
class BeltSpeed:
    """Duration-weighted overall belt speed and per-interval detail."""

    speed: float
    intervals: list      # (first_frame, last_frame, speed) per stance


def estimate_belt_speed(toe_x, stance, rate, min_frames=5):
    """Belt speed from backward toe travel during stance.

    Each stance interval of at least min_frames contributes its mean
    backward velocity, weighted by duration.
    """
    toe_x = np.asarray(toe_x, dtype=float)
    stance = np.asarray(stance, dtype=bool)
    if toe_x.shape != stance.shape or toe_x.ndim != 1:
        raise DataError("toe trajectory and stance mask must match 1-d")
    edges = np.diff(stance.astype(int))
    starts = list(np.nonzero(edges == 1)[0] + 1)
    stops = list(np.nonzero(edges == -1)[0])
    if stance[0]:
        starts.insert(0, 0)
    if stance[-1]:
        stops.append(len(stance) - 1)

    intervals = []
    for i0, i1 in zip(starts, stops):
        if i1 - i0 + 1 < min_frames:
            continue
        v = -(toe_x[i1] - toe_x[i0]) * rate / (i1 - i0)
        intervals.append((int(i0), int(i1), float(v)))
    if not intervals:
        raise DataError("no stance interval long enough for belt estimation")
    durs = np.array([i1 - i0 for i0, i1, _ in intervals], dtype=float)
    vels = np.array([v for _, _, v in intervals])
    return BeltSpeed(speed=float(durs @ vels / durs.sum()),
                     intervals=intervals)


def _stance_masks(clip, margin=0.01):
    """Per-side stance masks: contact flags when present, else feet
    within margin of their lowest height."""
    if clip.contact is not None:
        return clip.contact[:, 0], clip.contact[:, 1]
    h = clip.lmk[:, :2, 1]
    return tuple(h[:, s] < h[:, s].min() + margin for s in range(2))


def belt_speed_from_clip(clip):
    """Pooled belt-speed estimate over both feet's stance intervals."""
    masks = _stance_masks(clip)
    intervals = []
    for side in range(2):
        est = estimate_belt_speed(clip.lmk[:, side, 0], masks[side], clip.rate)
        intervals += est.intervals
    durs = np.array([i1 - i0 for i0, i1, _ in intervals], dtype=float)
    vels = np.array([v for _, _, v in intervals])
    return BeltSpeed(speed=float(durs @ vels / durs.sum()),
                     intervals=sorted(intervals))


def to_overground(clip, belt_speed):
    """Add belt_speed * t to every global position channel.

    Joint-space channels (angles, velocities, moments) and contact flags
    pass through bit-identical.
    """
    if belt_speed < 0:
        raise DataError("belt speed cannot be negative")
    shift = belt_speed * clip.times
    root = clip.root.copy()
    root[:, 0] += shift
    lmk = clip.lmk.copy()
    lmk[:, :, 0] += shift[:, None]
    return replace(clip, root=root, lmk=lmk)


def mirror_clip(clip):
    """Swap left and right channels; the planar model needs no sign flips."""
    return replace(
        clip,
        ang=clip.ang[:, _ANG_SWAP].copy(),
        vel=clip.vel[:, _ANG_SWAP].copy(),
        mom=clip.mom[:, _MOM_SWAP].copy(),
        lmk=clip.lmk[:, _LMK_SWAP].copy(),
        contact=None if clip.contact is None else clip.contact[:, ::-1].copy(),
        mirrored=not clip.mirrored)


def zero_lag_lowpass(x, rate, cutoff, axis=0):
    """Fourth-order-equivalent zero-lag Butterworth low-pass.

    A second-order filter run forward and backward squares the magnitude
    response and cancels the phase; the design corner is widened by
    (sqrt(2)-1)^(-1/4) so the dual-pass -3 dB point lands on the nominal
    cutoff. Edges use reflective padding.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    if n <= 24:
        raise DataError(f"signal too short to filter ({n} frames)")
    wn = cutoff * _DUAL_PASS_CORRECTION / (rate / 2.0)
    if not 0.0 < wn < 1.0:
        raise DataError(f"cutoff {cutoff} Hz too close to Nyquist at {rate} Hz")
    b, a = butter(2, wn)
    return filtfilt(b, a, x, axis=axis, padtype="even")


def detect_gait_events(signal, rate, threshold, debounce=0.05):
    """Threshold-crossing gait events on a stance-intensity channel.

    signal is (n,) for one side or (n, sides); stance is signal >=
    threshold (vertical GRF convention; use events_from_clip for
    foot-height clips). A crossing registers only if the signal dwells
    on the new side for the debounce window, so isolated noise blips
    shorter than that neither fire events nor flip the tracked state.
    """
    sig = np.asarray(signal, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    if threshold <= 0:
        raise DataError("threshold must be positive")
    gap = int(round(debounce * rate))
    n = sig.shape[0]
    strikes, offs = [], []
    for s in range(sig.shape[1]):
        above = sig[:, s] >= threshold
        hs, to = [], []
        state = above[0]
        for i in range(1, n):
            if above[i] == state:
                continue
            if not np.all(above[i:min(i + gap, n)] == above[i]):
                continue   # blip shorter than the dwell window
            (hs if above[i] else to).append(i)
            state = above[i]
        strikes.append(np.array(hs, dtype=int))
        offs.append(np.array(to, dtype=int))
    return GaitEvents(strikes=tuple(strikes), offs=tuple(offs)).validate()


def events_from_clip(clip, threshold_frac=0.05, margin=0.01):
    """Heel-strike/toe-off events for both feet of a clip.

    Contact flags are used when stored (as a 0/1 square wave); otherwise
    stance is inferred from foot landmarks dipping within margin of
    their lowest height. threshold_frac is kept for GRF-bearing callers
    and applies when flags hold forces rather than booleans.
    """
    if clip.contact is not None:
        return detect_gait_events(clip.contact.astype(float), clip.rate, 0.5)
    h = clip.lmk[:, :2, 1]
    sig = (h.min(axis=0)[None, :] + margin) - h
    return detect_gait_events(sig, clip.rate, margin / 2)


def cycle_normalize(signal, strikes, n_cycles=10, n_points=100):
    """Resample strike-to-strike cycles to n_points and average.

    signal is (n,) or (n, k) frame-aligned data; strikes the heel-strike
    indices of one side. The phase grid covers [0, 1) of each stride --
    the next heel strike is the first point of the following cycle, not
    the last point of this one. Returns (mean, std) over the first
    n_cycles.
    """
    sig = np.asarray(signal, dtype=float)
    strikes = np.asarray(strikes, dtype=int)
    have = len(strikes) - 1
    if have < n_cycles:
        raise DataError(f"found {have} complete cycles, need {n_cycles}")
    flat = sig.reshape(sig.shape[0], -1)
    frames = np.arange(sig.shape[0], dtype=float)
    phase = np.arange(n_points) / n_points
    out = np.empty((n_cycles, n_points, flat.shape[1]))
    for c in range(n_cycles):
        xi = strikes[c] + phase * (strikes[c + 1] - strikes[c])
        for k in range(flat.shape[1]):
            out[c, :, k] = np.interp(xi, frames, flat[:, k])
    mean = out.mean(axis=0).reshape((n_points,) + sig.shape[1:])
    std = out.std(axis=0).reshape((n_points,) + sig.shape[1:])
    return mean, std


# ---------------------------------------------------------------------------
# synthetic reference gait


def _bump(phase, center, width):
    """Periodic Gaussian bump of unit height on phase in [0, 1)."""
    d = (phase - center + 0.5) % 1.0 - 0.5
    return np.exp(-0.5 * (d / width) ** 2)


def _bump_d(phase, center, width):
    d = (phase - center + 0.5) % 1.0 - 0.5
    return -d / width**2 * np.exp(-0.5 * (d / width) ** 2)


_STANCE_FRAC = 0.62


def _leg_angles(phase, hip_amp):
    """Joint trajectories and phase derivatives for one leg.

    Heel strike at phase 0. Conventions: hip flexion +, knee flexion +,
    ankle dorsiflexion +.
    """
    two_pi = 2.0 * np.pi
    hip = 0.07 + hip_amp * np.cos(two_pi * phase + 0.35)
    d_hip = -hip_amp * two_pi * np.sin(two_pi * phase + 0.35)

    knee_terms = ((0.18, 0.15, 0.10), (1.00, 0.72, 0.11))
    knee = 0.04 + sum(a * _bump(phase, c, w) for a, c, w in knee_terms)
    d_knee = sum(a * _bump_d(phase, c, w) for a, c, w in knee_terms)

    ank_terms = ((0.10, 0.35, 0.18), (-0.38, 0.58, 0.07), (-0.06, 0.05, 0.05))
    ankle = sum(a * _bump(phase, c, w) for a, c, w in ank_terms)
    d_ankle = sum(a * _bump_d(phase, c, w) for a, c, w in ank_terms)
    return (hip, knee, ankle), (d_hip, d_knee, d_ankle)


def _leg_moments(phase):
    """Mass-normalized joint moment shapes for one leg, N*m/kg."""
    hip = (0.55 * _bump(phase, 0.08, 0.10) - 0.60 * _bump(phase, 0.42, 0.12)
           + 0.25 * _bump(phase, 0.75, 0.15))
    knee = (0.45 * _bump(phase, 0.12, 0.08) - 0.20 * _bump(phase, 0.48, 0.10)
            - 0.25 * _bump(phase, 0.95, 0.07))
    ankle = (-1.35 * _bump(phase, 0.45, 0.14) - 0.25 * _bump(phase, 0.15, 0.10))
    return hip, knee, ankle


def _min_sphere_height(model, q):
    """Lowest contact-sphere bottom over both feet for a root at y = 0."""
    kin = _K.kinematics(model, q, np.zeros_like(q))
    lo = np.inf
    for i in range(model.nsph):
        s = model.sph_seg[i]
        ca, sa = np.cos(kin["phi"][s]), np.sin(kin["phi"][s])
        lx, ly = model.sph_pos[i]
        cy = kin["orig"][s][1] + sa * lx + ca * ly
        lo = min(lo, cy - model.sph_r[i])
    return lo


def synthetic_gait(model, speed=1.25, cycles=20, rate=100.0, treadmill=True):
    """Parameterized sinusoid-and-bump planar gait, self-consistent.

    Landmarks come from the model's forward kinematics; root height
    rides the filtered contact constraint (the lowest foot sphere grazes
    the ground); stance flags follow the phase plan. treadmill=True
    keeps the pelvis near the origin with the feet sweeping backward, as
    captured on an instrumented treadmill; the preprocessing pipeline
    recovers the belt speed and converts to overground.
    """
    if cycles < 2:
        raise DataError("need at least two gait cycles")
    stride_t = 1.1 * (1.25 / speed) ** 0.45
    nframes = int(round(cycles * stride_t * rate)) + 1
    t = np.arange(nframes) / rate
    # the epsilon keeps the phase wrap on the exact frame when the stride
    # is a whole number of frames (division otherwise lands 1 ulp short)
    ph_l = ((t + 1e-12) / stride_t) % 1.0
    ph_r = (ph_l + 0.5) % 1.0

    # hip amplitude sized so stance-phase foot sweep roughly covers the
    # per-stride travel at the labeled speed (knee flexion eats some of
    # the sweep, hence the overshoot factor)
    hip_amp = min(0.52 * (speed * stride_t) / 1.375, 0.60)

    (hl, kl, al), (dhl, dkl, dal) = _leg_angles(ph_l, hip_amp)
    (hr, kr, ar), (dhr, dkr, dar) = _leg_angles(ph_r, hip_amp)

    two_pi = 2.0 * np.pi
    pitch = -0.06 + 0.04 * np.sin(2.0 * two_pi * t / stride_t)
    d_pitch = 0.04 * 2.0 * two_pi / stride_t * np.cos(2.0 * two_pi * t / stride_t)

    ang = np.stack([pitch, hl, kl, al, hr, kr, ar], axis=1)
    vel = np.stack([d_pitch] + [d / stride_t for d in (dhl, dkl, dal,
                                                       dhr, dkr, dar)], axis=1)

    mhl, mkl, mal = _leg_moments(ph_l)
    mhr, mkr, mar = _leg_moments(ph_r)
    mom = np.stack([mhl, mkl, mal, mhr, mkr, mar], axis=1)

    root = np.zeros((nframes, 2))
    if treadmill:
        root[:, 0] = 0.015 * np.sin(2.0 * two_pi * t / stride_t)
    else:
        root[:, 0] = speed * t

    # root height from the contact constraint, then smoothed so the kink
    # where the minimum switches feet does not enter the reference
    q = np.zeros(9)
    raw_y = np.empty(nframes)
    for i in range(nframes):
        q[0] = 0.0
        q[1] = 0.0
        q[2:] = (pitch[i], hl[i], kl[i], al[i], hr[i], kr[i], ar[i])
        raw_y[i] = -_min_sphere_height(model, q)
    root[:, 1] = zero_lag_lowpass(raw_y, rate, 6.0)

    lmk = np.empty((nframes, 3, 2))
    for i in range(nframes):
        q[:2] = root[i]
        q[2:] = ang[i]
        pos, _ = _K.landmarks(model, q, np.zeros(9))
        lmk[i] = pos

    contact = np.stack([ph_l < _STANCE_FRAC, ph_r < _STANCE_FRAC], axis=1)

    clip = ReferenceClip(
        rate=rate, ang=ang, vel=vel, mom=mom, root=root, lmk=lmk,
        contact=contact, speed=speed, subject_mass=model.mass_total,
        mirrored=False)
    return clip.validate()


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class ProcessedBundle:
    """Output of the preprocessing chain: the overground clip, its
    mirror, heel-contact events for both, and the belt estimate."""

    clip: ReferenceClip
    mirrored: ReferenceClip
    events: GaitEvents
    events_mirrored: GaitEvents
    belt: BeltSpeed


def preprocess(clip, cutoff=4.0):
    """Belt speed -> overground -> moment filtering -> mirror -> events."""
    belt = belt_speed_from_clip(clip)
    over = to_overground(clip, max(belt.speed, 0.0))
    over = replace(over, mom=zero_lag_lowpass(over.mom, over.rate, cutoff))
    over.validate()
    events = events_from_clip(over)
    mirrored = mirror_clip(over)
    return ProcessedBundle(clip=over, mirrored=mirrored, events=events,
                           events_mirrored=events.mirrored(), belt=belt)
