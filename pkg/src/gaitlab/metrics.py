"""Cycle-averaged gait metrics and plot-ready report export.

Everything here is a pure function of (trace, clip): heel strikes are
detected from the recorded vertical GRF on the trace side and from the
stance flags (or foot height) on the clip side, strides are resampled
to a fixed phase grid, and errors are computed between cycle-averaged
curves. Stride selection drops the first SETTLE_CYCLES strides as
settling transient and then uses at most MAX_CYCLES; shorter traces use
whatever survives and the count is reported rather than padded.

Conventions, fixed across the module:
  - all tracked channels are phase-locked to left heel strikes, except
    bilateral comparisons, where each side is aligned by its own strikes;
  - joint moments are low-passed at MOMENT_CUTOFF_HZ (zero lag) on both
    the simulated and the reference signal before any comparison;
  - R^2 is the coefficient of determination against the reference
    curve's mean, the dominant gait-analysis convention;
  - GRF is the summed vertical component in units of body weight; the
    clip carries no force plate channel, so the reference is the
    whole-body Newton reconstruction m*(g + y_ddot)/m*g from the pelvis
    trajectory (exact for a point-mass proxy, close enough for the
    stride-averaged comparison this module makes);
  - moments, powers, and exo torques are normalized by model mass.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from gaitlab.errors import ConfigError, DataError
from gaitlab.metabolics import BASAL_RATE_W_PER_KG, gross_metabolic_cost
from gaitlab.refmotion import (
    cycle_normalize,
    detect_gait_events,
    events_from_clip,
    zero_lag_lowpass,
)

__all__ = [
    "JOINTS", "BASE_JOINTS", "CYCLE_POINTS", "SETTLE_CYCLES", "MAX_CYCLES",
    "MOMENT_CUTOFF_HZ", "GRAVITY", "TrackingMetrics", "TorqueProfiles",
    "GaitReport", "tracking_metrics", "symmetry_rmse",
    "extract_torque_profiles", "report",
]

REPORT_FORMAT = "gaitlab-report/1"

# trace/clip joint column order (q[:, 3:9], clip.ang[:, 1:7], moments)
JOINTS = ("hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r")
BASE_JOINTS = ("hip", "knee", "ankle")
SIDES = ("left", "right")

CYCLE_POINTS = 100
SETTLE_CYCLES = 2
MAX_CYCLES = 10
MOMENT_CUTOFF_HZ = 4.0
GRAVITY = 9.81            # matches the skeleton default; clips carry no g

# stance threshold as a fraction of the peak vertical GRF; relative so
# traces need no mass metadata just to find their own footfalls
_STANCE_FRAC = 0.05

_UNITS = {"deg", "N*m/kg", "BW"}
_UNIT_SLUG = {"deg": "deg", "N*m/kg": "nm_per_kg", "BW": "bw"}


# ---------------------------------------------------------------------------
# stride segmentation


def _trace_events(trace):
    fz = trace.grf[:, :, 1]
    peak = float(fz.max())
    if peak <= 0.0:
        raise DataError("no foot loading in trace; cannot detect gait cycles")
    rate = 1.0 / trace.meta.control_dt
    return detect_gait_events(fz, rate, _STANCE_FRAC * peak)


def _pick_strikes(strikes):
    """Settling-drop plus cap: skip the first SETTLE_CYCLES strides when
    the recording affords it, then keep at most MAX_CYCLES."""
    have = len(strikes) - 1
    if have < 1:
        raise DataError(
            f"insufficient gait cycles (found {have}, need at least 1)")
    kept = strikes[min(SETTLE_CYCLES, have - 1):]
    return kept, min(MAX_CYCLES, len(kept) - 1)


def _avg(signal, strikes, n_points):
    kept, n = _pick_strikes(strikes)
    mean, std = cycle_normalize(signal, kept, n_cycles=n, n_points=n_points)
    return mean, std, n


def _rmse(sim, ref):
    return float(np.sqrt(np.mean((np.asarray(sim) - np.asarray(ref)) ** 2)))


def _r2(sim, ref):
    ss_res = float(np.sum((sim - ref) ** 2))
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("reference curve constant over the cycle; "
                        "R^2 is undefined")
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# tracking metrics


@dataclass
class TrackingMetrics:
    """Per-joint tracking errors between a trace and its reference clip."""

    n_points: int
    n_cycles: int             # strides averaged on the trace side
    n_cycles_ref: int
    angle_rmse_deg: dict
    angle_r2: dict
    moment_rmse_nm_per_kg: dict
    moment_r2: dict
    grf_rmse_bw: float
    curves: dict              # channel name -> (n_points,) array
    units: dict               # channel name -> unit tag


def _sim_curves(trace, mass, n_points):
    ev = _trace_events(trace)
    strikes = ev.strikes[0]
    rate = 1.0 / trace.meta.control_dt
    ang = np.degrees(trace.q[:, 3:9])
    mom = zero_lag_lowpass(trace.joint_moments / mass, rate, MOMENT_CUTOFF_HZ)
    grf = trace.grf[:, :, 1].sum(axis=1) / (mass * GRAVITY)
    am, asd, n = _avg(ang, strikes, n_points)
    mm, msd, _ = _avg(mom, strikes, n_points)
    gm, gsd, _ = _avg(grf, strikes, n_points)
    return {"ang_mean": am, "ang_std": asd, "mom_mean": mm, "mom_std": msd,
            "grf_mean": gm, "grf_std": gsd, "n_cycles": n}


def _ref_curves(clip, n_points):
    strikes = events_from_clip(clip).strikes[0]
    ang = np.degrees(clip.ang[:, 1:7])
    mom = zero_lag_lowpass(clip.mom, clip.rate, MOMENT_CUTOFF_HZ)
    dt = 1.0 / clip.rate
    ddy = np.gradient(np.gradient(clip.root[:, 1], dt), dt)
    grf = 1.0 + ddy / GRAVITY     # whole-body vertical Newton, in BW
    am, asd, n = _avg(ang, strikes, n_points)
    mm, msd, _ = _avg(mom, strikes, n_points)
    gm, gsd, _ = _avg(grf, strikes, n_points)
    return {"ang_mean": am, "ang_std": asd, "mom_mean": mm, "mom_std": msd,
            "grf_mean": gm, "grf_std": gsd, "n_cycles": n}


def _curve_table(sim, ref):
    curves, units = {}, {}
    for idx, j in enumerate(JOINTS):
        for part, src in (("sim", sim), ("ref", ref)):
            curves[f"{j}_angle_{part}_mean"] = src["ang_mean"][:, idx]
            curves[f"{j}_angle_{part}_spread"] = src["ang_std"][:, idx]
            curves[f"{j}_moment_{part}_mean"] = src["mom_mean"][:, idx]
            curves[f"{j}_moment_{part}_spread"] = src["mom_std"][:, idx]
    for part, src in (("sim", sim), ("ref", ref)):
        curves[f"grf_{part}_mean"] = src["grf_mean"]
        curves[f"grf_{part}_spread"] = src["grf_std"]
    for name in curves:
        units[name] = ("deg" if "angle" in name
                       else "N*m/kg" if "moment" in name else "BW")
    return curves, units


def _tracking_from_curves(sim, ref, n_points):
    a_rmse, a_r2, m_rmse, m_r2 = {}, {}, {}, {}
    for idx, j in enumerate(JOINTS):
        a_rmse[j] = _rmse(sim["ang_mean"][:, idx], ref["ang_mean"][:, idx])
        a_r2[j] = _r2(sim["ang_mean"][:, idx], ref["ang_mean"][:, idx])
        m_rmse[j] = _rmse(sim["mom_mean"][:, idx], ref["mom_mean"][:, idx])
        m_r2[j] = _r2(sim["mom_mean"][:, idx], ref["mom_mean"][:, idx])
    curves, units = _curve_table(sim, ref)
    return TrackingMetrics(
        n_points=n_points, n_cycles=sim["n_cycles"],
        n_cycles_ref=ref["n_cycles"],
        angle_rmse_deg=a_rmse, angle_r2=a_r2,
        moment_rmse_nm_per_kg=m_rmse, moment_r2=m_r2,
        grf_rmse_bw=_rmse(sim["grf_mean"], ref["grf_mean"]),
        curves=curves, units=units)


def tracking_metrics(trace, clip, n_points=CYCLE_POINTS):
    """Cycle-averaged tracking errors of a trace against a reference clip.

    Angles in deg, moments mass-normalized to N*m/kg (both signals
    low-passed first), GRF in body weights. Uses the post-settling
    strides of each signal; the counts used are reported.
    """
    sim = _sim_curves(trace, clip.subject_mass, n_points)
    ref = _ref_curves(clip, n_points)
    return _tracking_from_curves(sim, ref, n_points)


# ---------------------------------------------------------------------------
# bilateral symmetry


def _side_curves(trace, joints, n_points):
    """Per-joint left/right cycle averages, each side aligned by its own
    heel strikes. Returns ({joint: {left_mean, left_std, ...}}, n_l, n_r)."""
    ev = _trace_events(trace)
    picked = []
    for s, side in enumerate(SIDES):
        if len(ev.strikes[s]) < 2:
            raise DataError(f"missing {side}-side heel strikes; "
                            "need at least one full cycle")
        picked.append(_pick_strikes(ev.strikes[s]))
    ang = np.degrees(trace.q[:, 3:9])
    out = {}
    for j in joints:
        idx = BASE_JOINTS.index(j)
        cols = {}
        for s, side in enumerate(SIDES):
            kept, n = picked[s]
            mean, std = cycle_normalize(ang[:, 3 * s + idx], kept,
                                        n_cycles=n, n_points=n_points)
            cols[f"{side}_mean"] = mean
            cols[f"{side}_std"] = std
        out[j] = cols
    return out, picked[0][1], picked[1][1]


def _check_joint_set(joints):
    joints = tuple(joints)
    bad = [j for j in joints if j not in BASE_JOINTS]
    if bad or not joints:
        raise ConfigError(f"unknown joint set {joints}; "
                          f"pick from {BASE_JOINTS}")
    return joints


def symmetry_rmse(trace, joints=BASE_JOINTS, n_points=CYCLE_POINTS):
    """RMSE (deg) between left and right cycle-averaged joint angles.

    Each side is phase-aligned by its own heel strikes, so a time lag
    between the legs does not register as asymmetry; only shape and
    offset differences do. Pooled over the joint set.
    """
    joints = _check_joint_set(joints)
    curves, _, _ = _side_curves(trace, joints, n_points)
    diffs = [curves[j]["left_mean"] - curves[j]["right_mean"]
             for j in joints]
    return float(np.sqrt(np.mean(np.square(diffs))))


# ---------------------------------------------------------------------------
# exo torque profiles


@dataclass
class TorqueProfiles:
    """Cycle- and mass-normalized assistive torque per joint and side."""

    mass_kg: float
    n_points: int
    n_cycles: dict        # side -> strides averaged
    curves: dict          # joint -> (n_points,) N*m/kg
    spreads: dict
    peak: dict            # side -> {joint, value_nm_per_kg, pct_cycle}
    affected_side: str | None
    peak_ratio: float | None


def _affected_side(weakness):
    tags = {name.rsplit("_", 1)[-1] for name in weakness}
    if tags == {"l"}:
        return "left"
    if tags == {"r"}:
        return "right"
    return None       # unimpaired, bilateral, or unparseable: no ratio


def _side_peak(curves, side):
    best = None
    for j in JOINTS[:3] if side == "left" else JOINTS[3:]:
        k = int(np.argmax(np.abs(curves[j])))
        cand = (abs(float(curves[j][k])), j, k)
        if best is None or cand[0] > best[0]:
            best = cand
    _, j, k = best
    return {"joint": j, "value_nm_per_kg": float(curves[j][k]),
            "pct_cycle": k * (100.0 / len(curves[j]))}


def extract_torque_profiles(trace, mass, n_points=CYCLE_POINTS):
    """Assistive torque over the gait cycle, per joint, in N*m/kg.

    Each joint is aligned by its own side's heel strikes. Reports the
    signed peak and its timing per side, and the affected/non-affected
    peak magnitude ratio when the weakness mask names a single side.
    """
    if trace.meta.device == "none":
        raise DataError("trace carries no exo device; no torque to profile")
    if mass <= 0:
        raise ConfigError("model mass must be positive (kg)")
    ev = _trace_events(trace)
    curves, spreads, n_cycles = {}, {}, {}
    for s, side in enumerate(SIDES):
        if len(ev.strikes[s]) < 2:
            raise DataError(f"missing {side}-side heel strikes; "
                            "need at least one full cycle")
        kept, n = _pick_strikes(ev.strikes[s])
        n_cycles[side] = n
        mean, std = cycle_normalize(trace.exo_torque[:, 3 * s:3 * s + 3],
                                    kept, n_cycles=n, n_points=n_points)
        for k, j in enumerate(JOINTS[3 * s:3 * s + 3]):
            curves[j] = mean[:, k] / mass
            spreads[j] = std[:, k] / mass
    peak = {side: _side_peak(curves, side) for side in SIDES}
    affected = _affected_side(trace.meta.weakness)
    ratio = None
    if affected is not None:
        other = "right" if affected == "left" else "left"
        lo = abs(peak[other]["value_nm_per_kg"])
        if lo > 0.0:
            ratio = abs(peak[affected]["value_nm_per_kg"]) / lo
    return TorqueProfiles(mass_kg=float(mass), n_points=n_points,
                          n_cycles=n_cycles, curves=curves, spreads=spreads,
                          peak=peak, affected_side=affected, peak_ratio=ratio)


# ---------------------------------------------------------------------------
# report bundles


@dataclass
class GaitReport:
    """One condition's evaluation summary, ready for export."""

    fingerprint: str
    n_traces: int
    n_points: int
    n_cycles: int             # strides pooled across traces
    n_cycles_ref: int
    phase: str
    device: str
    weakness: dict
    speed_mps: float
    model_mass_kg: float
    angle_rmse_deg: dict
    angle_r2: dict
    moment_rmse_nm_per_kg: dict
    moment_r2: dict
    grf_rmse_bw: float
    symmetry_rmse_deg: float
    symmetry_per_joint_deg: dict
    gross_metabolic_w_per_kg: float
    gross_metabolic_std_w_per_kg: float
    basal_rate_w_per_kg: float
    curves: dict
    units: dict
    exo: dict | None

    def validate(self):
        for d in (self.angle_r2, self.moment_r2):
            for j, v in d.items():
                if v > 1.0:
                    raise DataError(f"R^2 > 1 for {j}: {v}")
        rmses = ([self.grf_rmse_bw, self.symmetry_rmse_deg]
                 + list(self.angle_rmse_deg.values())
                 + list(self.moment_rmse_nm_per_kg.values())
                 + list(self.symmetry_per_joint_deg.values()))
        if any(v < 0.0 for v in rmses):
            raise DataError("negative RMSE in report")
        if set(self.units) != set(self.curves):
            raise DataError("unit tags do not cover the exported curves")
        for name, arr in self.curves.items():
            if len(arr) != self.n_points:
                raise DataError(f"curve {name} has {len(arr)} points, "
                                f"configured {self.n_points}")
            if self.units[name] not in _UNITS:
                raise DataError(f"unknown unit tag on {name}")
        if self.exo is not None:
            for side in SIDES:
                pct = self.exo["peak"][side]["pct_cycle"]
                if not 0.0 <= pct < 100.0:
                    raise DataError(f"exo peak timing out of range: {pct}")
        return self

    def to_json(self):
        data = asdict(self)
        data["curves"] = {k: [float(x) for x in v]
                          for k, v in self.curves.items()}
        if self.exo is not None:
            data["exo"] = dict(self.exo)
            data["exo"]["curves"] = {k: [float(x) for x in v]
                                     for k, v in self.exo["curves"].items()}
            data["exo"]["spreads"] = {k: [float(x) for x in v]
                                      for k, v in self.exo["spreads"].items()}
        data["format"] = REPORT_FORMAT
        return data


def _pool(means, stds):
    """Equal-weight pooling across traces: mean of means; spread by the
    law of total variance (within-trace + between-trace)."""
    m = np.stack(means)
    s = np.stack(stds)
    return m.mean(axis=0), np.sqrt((s ** 2).mean(axis=0) + m.var(axis=0))


def _pool_sims(sims):
    out = {"n_cycles": int(sum(s["n_cycles"] for s in sims))}
    for ch in ("ang", "mom", "grf"):
        mean, std = _pool([s[f"{ch}_mean"] for s in sims],
                          [s[f"{ch}_std"] for s in sims])
        out[f"{ch}_mean"], out[f"{ch}_std"] = mean, std
    return out


def _audit_units(rep, trace, clip, n_points):
    """Normalization audit on one trace: averaging and unit scaling must
    commute (linearity), tying every exported unit to the model mass."""
    mass = clip.subject_mass
    strikes = _trace_events(trace).strikes[0]
    rate = 1.0 / trace.meta.control_dt
    raw_mom, _, _ = _avg(zero_lag_lowpass(trace.joint_moments, rate,
                                          MOMENT_CUTOFF_HZ), strikes, n_points)
    per_kg, _, _ = _avg(zero_lag_lowpass(trace.joint_moments / mass, rate,
                                         MOMENT_CUTOFF_HZ), strikes, n_points)
    checks = [("N*m/kg", raw_mom / mass, per_kg)]
    raw_grf, _, _ = _avg(trace.grf[:, :, 1].sum(axis=1), strikes, n_points)
    bw, _, _ = _avg(trace.grf[:, :, 1].sum(axis=1) / (mass * GRAVITY),
                    strikes, n_points)
    checks.append(("BW", raw_grf / (mass * GRAVITY), bw))
    raw_ang, _, _ = _avg(trace.q[:, 3:9], strikes, n_points)
    deg, _, _ = _avg(np.degrees(trace.q[:, 3:9]), strikes, n_points)
    checks.append(("deg", np.degrees(raw_ang), deg))
    for unit, a, b in checks:
        if not np.allclose(a, b, rtol=1e-9, atol=1e-12):
            raise DataError(f"unit audit failed for {unit}")
    gross = gross_metabolic_cost(trace.edot, trace.muscle_mass, mass)
    if not np.isfinite(gross) or gross < BASAL_RATE_W_PER_KG:
        raise DataError("unit audit failed for W/kg")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x))


def _phase_col(n_points):
    return [k * (100.0 / n_points) for k in range(n_points)]


def report(traces, clip, out_dir, n_points=CYCLE_POINTS):
    """Evaluate a set of traces against one clip and export the bundle.

    Writes report.json plus one CSV per figure family (tracking curves,
    metabolic cost, torque profiles when a device is worn, left/right
    deviations, symmetry and energy summaries) into out_dir. All
    validation happens before anything touches the filesystem.
    """
    traces = list(traces)
    if not traces:
        raise DataError("empty trace set; nothing to report")
    fps = {t.meta.fingerprint for t in traces}
    if len(fps) > 1:
        raise DataError(f"mixed config fingerprints in trace set: "
                        f"{sorted(fps)}")
    conds = {(t.meta.device, tuple(sorted(t.meta.weakness.items())))
             for t in traces}
    if len(conds) > 1:
        raise DataError("mixed conditions (device/weakness) in trace set")
    meta = traces[0].meta
    mass = clip.subject_mass

    ref = _ref_curves(clip, n_points)
    sims = [_sim_curves(t, mass, n_points) for t in traces]
    tm = _tracking_from_curves(_pool_sims(sims), ref, n_points)

    side_sets = [_side_curves(t, BASE_JOINTS, n_points)[0] for t in traces]
    side_pool, diffs = {}, []
    for j in BASE_JOINTS:
        cols = {}
        for side in SIDES:
            mean, std = _pool([s[j][f"{side}_mean"] for s in side_sets],
                              [s[j][f"{side}_std"] for s in side_sets])
            cols[f"{side}_mean"], cols[f"{side}_std"] = mean, std
        side_pool[j] = cols
        diffs.append(cols["left_mean"] - cols["right_mean"])
    sym_per_joint = {j: _rmse(side_pool[j]["left_mean"],
                              side_pool[j]["right_mean"])
                     for j in BASE_JOINTS}
    sym = float(np.sqrt(np.mean(np.square(diffs))))

    gross = [gross_metabolic_cost(t.edot, t.muscle_mass, mass)
             for t in traces]
    gross_mean = float(np.mean(gross))
    gross_std = float(np.std(gross))

    exo = None
    if meta.device != "none":
        profs = [extract_torque_profiles(t, mass, n_points) for t in traces]
        curves, spreads = {}, {}
        for j in JOINTS:
            mean, std = _pool([p.curves[j] for p in profs],
                              [p.spreads[j] for p in profs])
            curves[j], spreads[j] = mean, std
        peak = {side: _side_peak(curves, side) for side in SIDES}
        affected = _affected_side(meta.weakness)
        ratio = None
        if affected is not None:
            other = "right" if affected == "left" else "left"
            lo = abs(peak[other]["value_nm_per_kg"])
            if lo > 0.0:
                ratio = abs(peak[affected]["value_nm_per_kg"]) / lo
        exo = {"curves": curves, "spreads": spreads, "peak": peak,
               "affected_side": affected, "peak_ratio": ratio,
               "unit": "N*m/kg"}

    rep = GaitReport(
        fingerprint=meta.fingerprint, n_traces=len(traces),
        n_points=n_points, n_cycles=tm.n_cycles,
        n_cycles_ref=tm.n_cycles_ref, phase=meta.phase, device=meta.device,
        weakness=dict(meta.weakness), speed_mps=meta.speed_mps,
        model_mass_kg=float(mass),
        angle_rmse_deg=tm.angle_rmse_deg, angle_r2=tm.angle_r2,
        moment_rmse_nm_per_kg=tm.moment_rmse_nm_per_kg,
        moment_r2=tm.moment_r2, grf_rmse_bw=tm.grf_rmse_bw,
        symmetry_rmse_deg=sym, symmetry_per_joint_deg=sym_per_joint,
        gross_metabolic_w_per_kg=gross_mean,
        gross_metabolic_std_w_per_kg=gross_std,
        basal_rate_w_per_kg=BASAL_RATE_W_PER_KG,
        curves=tm.curves, units=tm.units, exo=exo).validate()
    _audit_units(rep, traces[0], clip, n_points)

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _export(rep, gross, side_pool, out)
    except OSError as exc:
        raise DataError(f"output path not writable: {exc}") from exc
    return rep


def _export(rep, gross, side_pool, out):
    phase = _phase_col(rep.n_points)

    names = sorted(rep.curves)
    header = ["phase_pct"] + [f"{n}_{_UNIT_SLUG[rep.units[n]]}"
                              for n in names]
    rows = [[_fmt(phase[k])] + [_fmt(rep.curves[n][k]) for n in names]
            for k in range(rep.n_points)]
    _write_csv(out / "fig2_tracking.csv", header, rows)

    rows = [[str(i), _fmt(v)] for i, v in enumerate(gross)]
    rows += [["mean", _fmt(rep.gross_metabolic_w_per_kg)],
             ["std", _fmt(rep.gross_metabolic_std_w_per_kg)]]
    _write_csv(out / "fig4_metabolics.csv",
               ["trace", "gross_w_per_kg"], rows)

    fig5 = out / "fig5_torque_profiles.csv"
    if rep.exo is not None:
        header = ["phase_pct"]
        for j in JOINTS:
            header += [f"exo_{j}_mean_nm_per_kg", f"exo_{j}_spread_nm_per_kg"]
        rows = []
        for k in range(rep.n_points):
            row = [_fmt(phase[k])]
            for j in JOINTS:
                row += [_fmt(rep.exo["curves"][j][k]),
                        _fmt(rep.exo["spreads"][j][k])]
            rows.append(row)
        _write_csv(fig5, header, rows)
    else:
        fig5.unlink(missing_ok=True)   # never leave a stale profile behind

    header = ["phase_pct"]
    for j in BASE_JOINTS:
        header += [f"{j}_left_mean_deg", f"{j}_right_mean_deg",
                   f"{j}_gap_deg"]
    rows = []
    for k in range(rep.n_points):
        row = [_fmt(phase[k])]
        for j in BASE_JOINTS:
            left = side_pool[j]["left_mean"][k]
            right = side_pool[j]["right_mean"][k]
            row += [_fmt(left), _fmt(right), _fmt(left - right)]
        rows.append(row)
    _write_csv(out / "fig6_impaired_deviations.csv", header, rows)

    rows = [["symmetry_rmse", _fmt(rep.symmetry_rmse_deg), "deg"]]
    rows += [[f"symmetry_{j}", _fmt(v), "deg"]
             for j, v in rep.symmetry_per_joint_deg.items()]
    rows += [["gross_metabolic_mean", _fmt(rep.gross_metabolic_w_per_kg),
              "W/kg"],
             ["gross_metabolic_std", _fmt(rep.gross_metabolic_std_w_per_kg),
              "W/kg"],
             ["net_metabolic_mean",
              _fmt(rep.gross_metabolic_w_per_kg - rep.basal_rate_w_per_kg),
              "W/kg"],
             ["basal_rate", _fmt(rep.basal_rate_w_per_kg), "W/kg"]]
    if rep.exo is not None:
        for side in SIDES:
            pk = rep.exo["peak"][side]
            rows.append([f"exo_peak_{side}", _fmt(pk["value_nm_per_kg"]),
                         "N*m/kg"])
            rows.append([f"exo_peak_{side}_timing", _fmt(pk["pct_cycle"]),
                         "%cycle"])
        if rep.exo["peak_ratio"] is not None:
            rows.append(["exo_peak_ratio", _fmt(rep.exo["peak_ratio"]), "-"])
    _write_csv(out / "fig7_symmetry_energy.csv",
               ["metric", "value", "unit"], rows)

    payload = json.dumps(rep.to_json(), sort_keys=True, indent=2)
    (out / "report.json").write_text(payload + "\n")
