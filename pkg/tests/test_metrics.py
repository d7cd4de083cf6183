"""Cycle-averaged gait metrics, symmetry, torque profiles, report export.

The synthetic traces here are built on integer-aligned stride grids
(every stride spans exactly 100 control frames, strike indices >= 128)
so the phase resampler lands exactly on stored samples and the
closed-form oracles hold to machine precision.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitlab.errors import ConfigError, DataError
from gaitlab.metabolics import gross_metabolic_cost
from gaitlab.metrics import (
    BASE_JOINTS,
    CYCLE_POINTS,
    JOINTS,
    GaitReport,
    extract_torque_profiles,
    report,
    symmetry_rmse,
    tracking_metrics,
)
from gaitlab.refmotion import ReferenceClip
from gaitlab.trace import EpisodeTrace, TraceMeta

RATE = 25.0
DT = 1.0 / RATE
SPAN = 100          # frames per stride
T_LONG = 1301       # 12 complete strides per side
G = 9.81
NMUS = 18


# ---------------------------------------------------------------------------
# closed-form oracles


def oracle_rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def oracle_r2(sim, ref):
    sim, ref = np.asarray(sim), np.asarray(ref)
    ss_res = float(np.sum((sim - ref) ** 2))
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    return 1.0 - ss_res / ss_tot


def oracle_ref_curve_deg(clip, col):
    # strides are 100 frames with identical content; after the two
    # settling strides the averaging window starts at frame 300
    return np.degrees(clip.ang[300:400, col])


# ---------------------------------------------------------------------------
# synthetic gait builders


def phase(T):
    return (np.arange(T) % SPAN) / SPAN


def stance_masks(T):
    left = (np.arange(T) % SPAN) < SPAN // 2
    return left, ~left


def joint_waves(T, amp_deg=10.0):
    ph = phase(T)
    cols = [np.radians(amp_deg) * np.sin(2 * np.pi * ph + 0.7 * j)
            for j in range(6)]
    return np.column_stack(cols)


def moment_waves(T):
    ph = phase(T)
    cols = [0.8 * np.sin(2 * np.pi * ph + 0.3 + 0.5 * j) for j in range(6)]
    return np.column_stack(cols)


def make_clip(T=T_LONG, mass=64.0, ang6=None, mom=None):
    if ang6 is None:
        ang6 = joint_waves(T)
    if mom is None:
        mom = moment_waves(T)
    ang = np.column_stack([np.zeros(T), ang6])
    left, right = stance_masks(T)
    return ReferenceClip(
        rate=RATE,
        ang=ang,
        vel=np.gradient(ang, DT, axis=0),
        mom=np.asarray(mom, dtype=float),
        root=np.column_stack([np.zeros(T), np.ones(T)]),
        lmk=np.zeros((T, 3, 2)),
        contact=np.column_stack([left, right]),
        speed=1.25,
        subject_mass=float(mass),
    )


def make_trace(T=T_LONG, mass=64.0, ang6=None, mom_nm=None, exo=None,
               device="none", weakness=None, edot=None, muscle_mass=None,
               fingerprint="a" * 16, grf=None):
    if ang6 is None:
        ang6 = joint_waves(T)
    if mom_nm is None:
        mom_nm = moment_waves(T) * mass
    if grf is None:
        left, right = stance_masks(T)
        grf = np.zeros((T, 2, 2))
        grf[:, 0, 1] = mass * G * left
        grf[:, 1, 1] = mass * G * right
    q = np.zeros((T, 9))
    q[:, 3:9] = ang6
    meta = TraceMeta(fingerprint=fingerprint, speed_mps=1.25, phase="base",
                     device=device, weakness=dict(weakness or {}),
                     control_dt=DT)
    return EpisodeTrace(
        meta=meta,
        time=np.arange(T) * DT,
        q=q,
        qd=np.zeros((T, 9)),
        grf=grf,
        landmarks=np.zeros((T, 3, 2)),
        joint_moments=np.asarray(mom_nm, dtype=float),
        excitation=np.zeros((T, NMUS)),
        activation=np.zeros((T, NMUS)),
        exo_torque=np.zeros((T, 6)) if exo is None else np.asarray(exo, float),
        reward_terms=np.zeros((T, 9)),
        h_am=np.zeros((T, NMUS)),
        h_sl=np.zeros((T, NMUS)),
        w_ce=np.zeros((T, NMUS)),
        edot=np.zeros((T, NMUS)) if edot is None else np.asarray(edot, float),
        muscle_mass=(np.linspace(0.1, 0.9, NMUS) if muscle_mass is None
                     else np.asarray(muscle_mass, float)),
    )


def trace_from_clip(clip, **kw):
    return make_trace(T=clip.nframes, mass=clip.subject_mass,
                      ang6=clip.ang[:, 1:7].copy(),
                      mom_nm=clip.mom * clip.subject_mass, **kw)


# ---------------------------------------------------------------------------
# tracking metrics


def test_self_comparison_is_exact():
    clip = make_clip()
    tm = tracking_metrics(trace_from_clip(clip), clip)
    for j in JOINTS:
        assert tm.angle_rmse_deg[j] == 0.0
        assert tm.angle_r2[j] == 1.0
        assert tm.moment_rmse_nm_per_kg[j] == 0.0
        assert tm.moment_r2[j] == 1.0
    assert tm.grf_rmse_bw == 0.0
    assert tm.n_cycles == 10
    assert tm.n_cycles_ref == 10


def test_constant_angle_offset_closed_form():
    clip = make_clip()
    tr = make_trace(ang6=clip.ang[:, 1:7] + np.radians(2.0),
                    mom_nm=clip.mom * clip.subject_mass)
    tm = tracking_metrics(tr, clip)
    for idx, j in enumerate(JOINTS):
        ref = oracle_ref_curve_deg(clip, 1 + idx)
        assert tm.angle_rmse_deg[j] == pytest.approx(2.0, rel=1e-9)
        assert tm.angle_r2[j] == pytest.approx(1.0 - 4.0 / np.var(ref),
                                               rel=1e-9)


def test_flat_simulation_r2_zero():
    clip = make_clip()
    tr = make_trace(ang6=np.zeros((T_LONG, 6)),
                    mom_nm=clip.mom * clip.subject_mass)
    tm = tracking_metrics(tr, clip)
    for idx, j in enumerate(JOINTS):
        ref = oracle_ref_curve_deg(clip, 1 + idx)
        assert abs(tm.angle_r2[j]) < 1e-9
        assert tm.angle_rmse_deg[j] == pytest.approx(
            oracle_rmse(np.zeros_like(ref), ref), rel=1e-9)


def test_moment_offset_survives_filtering():
    # the low-pass is linear with unit DC gain, so a constant offset
    # between otherwise identical signals passes straight through
    clip = make_clip()
    tr = make_trace(ang6=clip.ang[:, 1:7].copy(),
                    mom_nm=(clip.mom + 0.1) * clip.subject_mass)
    tm = tracking_metrics(tr, clip)
    for j in JOINTS:
        assert tm.moment_rmse_nm_per_kg[j] == pytest.approx(0.1, rel=1e-9)
        assert tm.moment_r2[j] <= 1.0


def test_filter_applies_to_both_moment_signals():
    # contaminate both signals with an identical 8 Hz wiggle: identical
    # pipelines keep RMSE at exactly zero, while the exported curve must
    # differ from the raw cycle average because the wiggle is filtered out
    T = T_LONG
    t = np.arange(T) * DT
    mom = moment_waves(T)
    mom[:, 0] += 0.5 * np.sin(2 * np.pi * 8.0 * t)
    clip = make_clip(mom=mom)
    tm = tracking_metrics(trace_from_clip(clip), clip)
    assert tm.moment_rmse_nm_per_kg["hip_l"] == 0.0
    raw_curve = mom[300:400, 0]
    filt_curve = tm.curves["hip_l_moment_sim_mean"]
    assert np.max(np.abs(filt_curve - raw_curve)) > 0.05


def test_insufficient_cycles_errors():
    clip = make_clip()
    with pytest.raises(DataError, match="cycle"):
        tracking_metrics(make_trace(T=150), clip)
    with pytest.raises(DataError, match="loading"):
        tracking_metrics(make_trace(grf=np.zeros((T_LONG, 2, 2))), clip)


def test_short_trace_uses_available_cycles():
    clip = make_clip(T=501)
    tm = tracking_metrics(trace_from_clip(clip), clip)
    assert tm.n_cycles == 2
    assert tm.n_cycles_ref == 2
    for j in JOINTS:
        assert tm.angle_rmse_deg[j] == 0.0
        assert tm.angle_r2[j] == 1.0


def test_settling_strides_are_skipped():
    clip = make_clip()
    ang = clip.ang[:, 1:7].copy()
    ang[100:300] += 0.5   # corrupt the first two strides only
    tm = tracking_metrics(make_trace(ang6=ang,
                                     mom_nm=clip.mom * clip.subject_mass),
                          clip)
    for j in JOINTS:
        assert tm.angle_rmse_deg[j] == 0.0


def test_curves_carry_configured_point_count():
    clip = make_clip()
    tm = tracking_metrics(trace_from_clip(clip), clip, n_points=50)
    assert tm.n_points == 50
    for arr in tm.curves.values():
        assert arr.shape == (50,)
    assert tm.angle_rmse_deg["hip_l"] == 0.0
    assert tm.grf_rmse_bw == 0.0


def test_curve_units_are_tagged():
    clip = make_clip()
    tm = tracking_metrics(trace_from_clip(clip), clip)
    assert set(tm.units) == set(tm.curves)
    for name, unit in tm.units.items():
        if "angle" in name:
            assert unit == "deg"
        elif "moment" in name:
            assert unit == "N*m/kg"
        else:
            assert unit == "BW"


# ---------------------------------------------------------------------------
# bilateral symmetry


def shifted(col6, offset_rad=0.0):
    """Right columns become the left signal delayed half a stride."""
    out = col6.copy()
    for j in range(3):
        out[:, 3 + j] = np.roll(col6[:, j], SPAN // 2) + offset_rad
    return out


def test_symmetry_zero_for_mirror_symmetric_gait():
    tr = make_trace(ang6=shifted(joint_waves(T_LONG)))
    assert symmetry_rmse(tr) == 0.0


def test_symmetry_constant_offset_is_exact():
    tr = make_trace(ang6=shifted(joint_waves(T_LONG), np.radians(3.0)))
    assert abs(symmetry_rmse(tr) - 3.0) < 1e-12
    assert abs(symmetry_rmse(tr, joints=("hip",)) - 3.0) < 1e-12


def test_symmetry_pools_rmse_across_joints():
    ang = shifted(joint_waves(T_LONG))
    ang[:, 3] += np.radians(3.0)   # hip_r only
    tr = make_trace(ang6=ang)
    assert symmetry_rmse(tr, joints=("hip", "knee")) == pytest.approx(
        3.0 / np.sqrt(2.0), rel=1e-12)
    assert symmetry_rmse(tr) == pytest.approx(np.sqrt(3.0), rel=1e-12)


def test_symmetry_swap_invariant():
    ang = shifted(joint_waves(T_LONG))
    ang[:, 3] += np.radians(3.0)
    tr = make_trace(ang6=ang)
    mirrored = ang[:, [3, 4, 5, 0, 1, 2]]
    left, right = stance_masks(T_LONG)
    grf = np.zeros((T_LONG, 2, 2))
    grf[:, 0, 1] = 64.0 * G * right   # feet swap with the legs
    grf[:, 1, 1] = 64.0 * G * left
    tr_m = make_trace(ang6=mirrored, grf=grf)
    assert symmetry_rmse(tr_m) == symmetry_rmse(tr)


def test_symmetry_missing_side_errors():
    grf = np.zeros((T_LONG, 2, 2))
    left, _ = stance_masks(T_LONG)
    grf[:, 0, 1] = 64.0 * G * left
    tr = make_trace(grf=grf)
    with pytest.raises(DataError, match="right"):
        symmetry_rmse(tr)


def test_symmetry_rejects_unknown_joint():
    tr = make_trace()
    with pytest.raises(ConfigError, match="joint"):
        symmetry_rmse(tr, joints=("toe",))


@settings(max_examples=25, deadline=None)
@given(off=st.floats(min_value=0.5, max_value=20.0))
def test_symmetry_recovers_any_constant_offset(off):
    tr = make_trace(ang6=shifted(joint_waves(T_LONG), np.radians(off)))
    assert symmetry_rmse(tr) == pytest.approx(off, rel=1e-9)


# ---------------------------------------------------------------------------
# exo torque profiles


def half_sine(T, peak, side):
    off = 0 if side == "left" else SPAN // 2
    ph = ((np.arange(T) - off) % SPAN) / SPAN
    return peak * np.sin(np.pi * ph)


def test_torque_profile_half_sine_normalization():
    T = T_LONG
    exo = np.zeros((T, 6))
    exo[:, 2] = half_sine(T, 30.0, "left")      # ankle_l
    exo[:, 5] = half_sine(T, 18.75, "right")    # ankle_r
    tr = make_trace(mass=75.0, exo=exo, device="ankle",
                    weakness={"soleus_l": 0.5})
    prof = extract_torque_profiles(tr, 75.0)
    assert abs(prof.peak["left"]["value_nm_per_kg"] - 0.4) < 1e-12
    assert prof.peak["left"]["pct_cycle"] == 50.0
    assert prof.peak["left"]["joint"] == "ankle_l"
    assert abs(prof.peak["right"]["value_nm_per_kg"] - 0.25) < 1e-12
    assert prof.peak["right"]["pct_cycle"] == 50.0
    assert prof.affected_side == "left"
    assert prof.peak_ratio == pytest.approx(1.6, rel=1e-9)
    assert abs(prof.curves["ankle_l"][50] - 0.4) < 1e-12


def test_torque_profile_zero_torque():
    tr = make_trace(device="hip")
    prof = extract_torque_profiles(tr, 64.0)
    for j in JOINTS:
        assert np.all(prof.curves[j] == 0.0)
    assert prof.peak["left"]["value_nm_per_kg"] == 0.0
    assert prof.peak["right"]["value_nm_per_kg"] == 0.0
    assert prof.peak_ratio is None


def test_torque_profile_signed_peak():
    T = T_LONG
    ph = phase(T)
    exo = np.zeros((T, 6))
    exo[:, 0] = -20.0 * np.exp(-((ph - 0.3) / 0.05) ** 2)   # hip_l dip
    tr = make_trace(mass=75.0, exo=exo, device="hip")
    prof = extract_torque_profiles(tr, 75.0)
    assert prof.peak["left"]["value_nm_per_kg"] == pytest.approx(
        -20.0 / 75.0, rel=1e-9)
    assert prof.peak["left"]["pct_cycle"] == 30.0
    assert prof.peak["left"]["joint"] == "hip_l"


def test_torque_profile_requires_device():
    tr = make_trace(device="none")
    with pytest.raises(DataError, match="device"):
        extract_torque_profiles(tr, 64.0)
    with pytest.raises(ConfigError, match="mass"):
        extract_torque_profiles(make_trace(device="hip"), 0.0)


# ---------------------------------------------------------------------------
# report bundles


def exo_traces(clip, n=2):
    T = clip.nframes
    exo = np.zeros((T, 6))
    exo[:, 2] = half_sine(T, 30.0, "left")
    exo[:, 5] = half_sine(T, 18.75, "right")
    rng = np.random.default_rng(7)
    out = []
    for _ in range(n):
        out.append(make_trace(
            T=T, mass=clip.subject_mass, ang6=clip.ang[:, 1:7].copy(),
            mom_nm=clip.mom * clip.subject_mass, exo=exo, device="ankle",
            weakness={"soleus_l": 0.5},
            edot=rng.uniform(1.0, 30.0, size=(T, NMUS))))
    return out


FIGS = ("fig2_tracking.csv", "fig4_metabolics.csv", "fig5_torque_profiles.csv",
        "fig6_impaired_deviations.csv", "fig7_symmetry_energy.csv")


def test_report_bundle_files_and_units(tmp_path):
    clip = make_clip()
    rep = report(exo_traces(clip), clip, tmp_path / "out")
    assert isinstance(rep, GaitReport)
    assert (tmp_path / "out" / "report.json").exists()
    for f in FIGS:
        assert (tmp_path / "out" / f).exists()
    data = json.loads((tmp_path / "out" / "report.json").read_text())
    assert data["format"] == "gaitlab-report/1"
    assert set(data["units"]) == set(data["curves"])
    for name, arr in rep.curves.items():
        assert len(arr) == CYCLE_POINTS, name
    for j in JOINTS:
        assert rep.angle_r2[j] <= 1.0
        assert rep.angle_rmse_deg[j] >= 0.0
    assert rep.n_traces == 2
    assert rep.n_cycles == 20
    assert rep.model_mass_kg == clip.subject_mass
    assert rep.exo is not None
    assert rep.exo["peak"]["left"]["joint"] == "ankle_l"


def test_report_matches_single_trace_metrics(tmp_path):
    clip = make_clip()
    tr = exo_traces(clip, n=1)[0]
    rep = report([tr], clip, tmp_path / "out")
    tm = tracking_metrics(tr, clip)
    assert rep.angle_rmse_deg == tm.angle_rmse_deg
    assert rep.angle_r2 == tm.angle_r2
    assert rep.moment_rmse_nm_per_kg == tm.moment_rmse_nm_per_kg
    assert rep.grf_rmse_bw == tm.grf_rmse_bw
    assert rep.symmetry_rmse_deg == symmetry_rmse(tr)


def test_report_is_deterministic(tmp_path):
    clip = make_clip()
    traces = exo_traces(clip)
    report(traces, clip, tmp_path / "a")
    report(traces, clip, tmp_path / "b")
    for name in ("report.json",) + FIGS:
        assert ((tmp_path / "a" / name).read_bytes()
                == (tmp_path / "b" / name).read_bytes()), name


def test_report_empty_set_errors_atomically(tmp_path):
    clip = make_clip()
    out = tmp_path / "out"
    with pytest.raises(DataError, match="empty"):
        report([], clip, out)
    assert not out.exists()


def test_report_mixed_fingerprints_error(tmp_path):
    clip = make_clip()
    t1, t2 = exo_traces(clip)
    t2 = t2.with_meta(fingerprint="b" * 16)
    out = tmp_path / "out"
    with pytest.raises(DataError, match="fingerprint"):
        report([t1, t2], clip, out)
    assert not out.exists()


def test_report_unwritable_path_errors(tmp_path):
    clip = make_clip()
    blocker = tmp_path / "taken"
    blocker.write_text("file, not a directory")
    with pytest.raises(DataError, match="writ"):
        report(exo_traces(clip, n=1), clip, blocker)


def test_report_gross_cost_matches_metabolics(tmp_path):
    clip = make_clip()
    tr = exo_traces(clip, n=1)[0]
    rep = report([tr], clip, tmp_path / "out")
    want = gross_metabolic_cost(tr.edot, tr.muscle_mass, clip.subject_mass)
    assert abs(rep.gross_metabolic_w_per_kg - want) < 1e-12


def test_report_no_device_skips_torque_figure(tmp_path):
    clip = make_clip()
    tr = trace_from_clip(clip)
    rep = report([tr], clip, tmp_path / "out")
    assert rep.exo is None
    assert not (tmp_path / "out" / "fig5_torque_profiles.csv").exists()
    for f in FIGS[:2] + FIGS[3:]:
        assert (tmp_path / "out" / f).exists()


def test_report_validates_invariants():
    clip = make_clip()
    tr = trace_from_clip(clip)
    tm = tracking_metrics(tr, clip)
    assert set(BASE_JOINTS) == {"hip", "knee", "ankle"}
    # every tracked channel appears for both signals with mean and spread
    for j in JOINTS:
        for part in ("sim", "ref"):
            for stat in ("mean", "spread"):
                assert f"{j}_angle_{part}_{stat}" in tm.curves
                assert f"{j}_moment_{part}_{stat}" in tm.curves
    assert "grf_sim_mean" in tm.curves and "grf_ref_mean" in tm.curves


@settings(max_examples=15, deadline=None)
@given(scale=st.floats(min_value=0.1, max_value=3.0))
def test_tracking_bounds_hold_under_scaling(scale):
    clip = make_clip()
    tr = make_trace(ang6=clip.ang[:, 1:7] * scale,
                    mom_nm=clip.mom * clip.subject_mass)
    tm = tracking_metrics(tr, clip)
    for j in JOINTS:
        assert tm.angle_rmse_deg[j] >= 0.0
        assert tm.angle_r2[j] <= 1.0
