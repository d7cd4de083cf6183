"""Command-line entry point: preprocess clips, train, evaluate, report.

A run configuration (YAML, format gaitlab-run/1) names the skeleton,
muscle set, device, reference clip source, episode parameters, and
trainer settings; the subcommands assemble the rest. Exit codes: 0 on
success, 2 for configuration problems (bad flags, unknown run, phase or
checkpoint mismatches), 3 for data problems (unreadable bundles, traces
without gait cycles, diverged rollouts).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from gaitlab.env import EnvConfig, GaitEnv
from gaitlab.errors import (
    CheckpointError,
    ConfigError,
    ConvergenceError,
    DataError,
    SimulationDiverged,
    TrainingError,
)
from gaitlab.metrics import JOINTS, extract_torque_profiles, report
from gaitlab.metrics import _pool as _pool_curves, _side_peak
from gaitlab.model import build_model
from gaitlab.refmotion import load_clip, preprocess, save_clip, synthetic_gait
from gaitlab.trace import load_trace, save_trace
from gaitlab.trainer import PolicyCheckpoint, TrainerConfig, evaluate, preset, train

RUN_FORMAT = "gaitlab-run/1"
_PRESET_CHOICES = ("base", "finetune", "desk")


# ---------------------------------------------------------------------------
# run-configuration assembly


def _load_run(source):
    """Resolve a run configuration: a YAML path, or a builtin name."""
    path = Path(source)
    if path.exists():
        data = yaml.safe_load(path.read_text())
        base = path.resolve().parent
    else:
        try:
            ref = resources.files("gaitlab.configs").joinpath(
                str(source) + ".yaml")
            data = yaml.safe_load(ref.read_text())
        except (FileNotFoundError, ModuleNotFoundError):
            raise ConfigError(
                f"unknown run configuration '{source}': not a file and "
                "not a builtin run") from None
        base = None
    if not isinstance(data, dict) or data.get("format") != RUN_FORMAT:
        raise ConfigError(f"'{source}' is not a {RUN_FORMAT} configuration")
    return data, base


def _build_model(run):
    return build_model(run["skeleton"], run["muscles"], run.get("device"))


def _build_bundle(run, base, model):
    """Reference motion for a run: synthesized or loaded, then pushed
    through the preprocessing chain (overground + filtered + mirrored)."""
    src = run.get("clip", "synthetic")
    if src == "synthetic":
        clip = synthetic_gait(model,
                              speed=float(run.get("clip_speed_mps", 1.25)),
                              cycles=int(run.get("clip_cycles", 12)))
    else:
        p = Path(src)
        if base is not None and not p.is_absolute():
            p = base / p
        clip = load_clip(p)
    return preprocess(clip)


def _trainer_config(run, args) -> TrainerConfig:
    section = dict(run.get("trainer") or {})
    name = args.preset or section.pop("preset", "desk")
    section.pop("preset", None)
    cfg = preset(name)
    known = {f.name for f in dataclasses.fields(TrainerConfig)}
    bad = sorted(set(section) - known)
    if bad:
        raise ConfigError(f"unknown trainer keys in run config: {bad}")
    if section:
        cfg = dataclasses.replace(cfg, **section)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _phase(run):
    """Training phase from the run's reward profile and impairment."""
    if str(run.get("reward", "base")) == "base":
        return "base"
    if run.get("weakness"):
        return "weakness-finetune"
    return "exo-finetune"


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args):
    run, base = _load_run(args.config)
    model = _build_model(run)
    bundle = _build_bundle(run, base, model)
    out = _ensure_dir(args.out)
    save_clip(bundle.clip, out / "clip_overground.csv")
    save_clip(bundle.mirrored, out / "clip_mirrored.csv")
    payload = {"format": RUN_FORMAT, "run": run.get("name", "?"),
               "belt_speed_mps": bundle.belt.speed,
               "belt_intervals": [[int(a), int(b), float(v)]
                                  for a, b, v in bundle.belt.intervals],
               "events": bundle.events.to_dict(),
               "events_mirrored": bundle.events_mirrored.to_dict()}
    (out / "events.json").write_text(json.dumps(payload, sort_keys=True,
                                                indent=2) + "\n")
    print(f"preprocessed '{run.get('name', '?')}': "
          f"{bundle.clip.nframes} frames at {bundle.clip.rate:g} Hz, "
          f"belt {bundle.belt.speed:.3f} m/s")
    return 0


def cmd_train(args):
    run, base = _load_run(args.config)
    model = _build_model(run)
    bundle = _build_bundle(run, base, model)
    clips = [bundle.clip, bundle.mirrored]   # mirror doubles the data
    env_cfg = EnvConfig.from_run(run)

    def factory():
        return GaitEnv(_build_model(run), clips, env_cfg)

    cfg = _trainer_config(run, args)
    phase = _phase(run)
    init = PolicyCheckpoint.load(args.init) if args.init else None
    out = _ensure_dir(args.out)
    ckpt, rows = train(factory, cfg, phase=phase, init=init, out_dir=out)
    ckpt.save(out / "policy.glpc")
    tail = rows[-1] if rows else {}
    ret = tail.get("ep_return", float("nan"))
    print(f"trained {phase}: {ckpt.total_steps} steps, "
          f"{int(tail.get('updates', 0))} updates, "
          f"window return {ret:.3f}; policy.glpc + metrics.csv in {out}")
    return 0


def cmd_evaluate(args):
    run, base = _load_run(args.config)
    model = _build_model(run)
    bundle = _build_bundle(run, base, model)
    env = GaitEnv(model, [bundle.clip], EnvConfig.from_run(run))
    ckpt = PolicyCheckpoint.load(args.checkpoint)
    traces, summary = evaluate(ckpt, env, args.episodes,
                               deterministic=not args.stochastic,
                               seed=args.seed if args.seed is not None else 0)
    out = _ensure_dir(args.out)
    for k, tr in enumerate(traces):
        save_trace(tr, out / f"trace_{k:03d}.npz")
    mean = summary["mean_return"]
    print(f"evaluated {summary['episodes']} episodes: "
          f"mean return {mean:.3f}, mean length {summary['mean_length']:.1f}"
          if mean is not None else "evaluated 0 episodes")
    return 0


def cmd_report(args):
    run, base = _load_run(args.config)
    model = _build_model(run)
    bundle = _build_bundle(run, base, model)
    traces = [load_trace(p) for p in args.traces]
    rep = report(traces, bundle.clip, args.out)
    ang = np.mean(list(rep.angle_rmse_deg.values()))
    print(f"report on {rep.n_traces} trace(s), {rep.n_cycles} strides: "
          f"angle RMSE {ang:.2f} deg, GRF RMSE {rep.grf_rmse_bw:.3f} BW, "
          f"symmetry {rep.symmetry_rmse_deg:.2f} deg, "
          f"gross {rep.gross_metabolic_w_per_kg:.2f} W/kg -> {args.out}")
    return 0


def cmd_export_profiles(args):
    run, base = _load_run(args.config)
    model = _build_model(run)
    bundle = _build_bundle(run, base, model)
    mass = bundle.clip.subject_mass
    profs = [extract_torque_profiles(load_trace(p), mass)
             for p in args.traces]
    curves, spreads = {}, {}
    for j in JOINTS:
        curves[j], spreads[j] = _pool_curves([p.curves[j] for p in profs],
                                             [p.spreads[j] for p in profs])
    n_points = profs[0].n_points
    out = _ensure_dir(args.out)
    header = ["phase_pct"]
    for j in JOINTS:
        header += [f"exo_{j}_mean_nm_per_kg", f"exo_{j}_spread_nm_per_kg"]
    rows = []
    for k in range(n_points):
        row = [repr(k * (100.0 / n_points))]
        for j in JOINTS:
            row += [repr(float(curves[j][k])), repr(float(spreads[j][k]))]
        rows.append(",".join(row))
    (out / "torque_profiles.csv").write_text(
        ",".join(header) + "\n" + "\n".join(rows) + "\n")
    peak = {side: _side_peak(curves, side) for side in ("left", "right")}
    affected = profs[0].affected_side
    ratio = None
    if affected is not None:
        other = "right" if affected == "left" else "left"
        lo = abs(peak[other]["value_nm_per_kg"])
        if lo > 0.0:
            ratio = abs(peak[affected]["value_nm_per_kg"]) / lo
    summary = {"format": RUN_FORMAT, "mass_kg": mass,
               "n_traces": len(profs), "unit": "N*m/kg",
               "peak": peak, "affected_side": affected, "peak_ratio": ratio}
    (out / "profiles.json").write_text(json.dumps(summary, sort_keys=True,
                                                  indent=2) + "\n")
    print(f"exported torque profiles for {len(profs)} trace(s) -> {out}")
    return 0


def _ensure_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"output path not writable: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned "
                                         "64-bit integer")
    return value


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="base_walk", metavar="FILE",
                        help="run configuration: YAML path or builtin name "
                             "(default: base_walk)")
    common.add_argument("--seed", type=_u64, default=None,
                        help="override the run's seed")
    common.add_argument("--out", required=True, metavar="DIR",
                        help="output directory")
    common.add_argument("--preset", choices=_PRESET_CHOICES, default=None,
                        help="override the trainer preset")

    p = argparse.ArgumentParser(
        prog="gaitlab",
        description="Muscle-driven gait imitation: preprocess reference "
                    "clips, train and evaluate policies, export reports.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", parents=[common],
                        help="filter and retarget the run's reference clip")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", parents=[common],
                        help="train a policy for the run's phase")
    sp.add_argument("--init", metavar="CKPT",
                    help="checkpoint to fine-tune from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", parents=[common],
                        help="roll a checkpoint and record traces")
    sp.add_argument("checkpoint", help="policy checkpoint file")
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--stochastic", action="store_true",
                    help="sample actions instead of taking the mean")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", parents=[common],
                        help="gait metrics and figure exports for traces")
    sp.add_argument("traces", nargs="+", help="trace bundles (.npz)")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("export-profiles", parents=[common],
                        help="cycle-averaged exo torque profiles")
    sp.add_argument("traces", nargs="+", help="trace bundles (.npz)")
    sp.set_defaults(func=cmd_export_profiles)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, SimulationDiverged, TrainingError,
            ConvergenceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
