"""Throughput comparison between the kernel backends.

Times the hot control-tick kernel on its own and a full environment
step (observation assembly, reward, metabolics included). Run from the
repository root:

    python3 benchmarks/bench_backends.py [--ticks 2000] [--episode-steps 200]

The environment rows answer the question that matters for training:
how many control steps per second one collector can produce.
"""

import argparse
import statistics
import time

import numpy as np

import gaitlab.env
from gaitlab._kernels import get_backend
from gaitlab.dynamics import settle_root_height
from gaitlab.env import EnvConfig, GaitEnv
from gaitlab.model import build_model
from gaitlab.refmotion import preprocess, synthetic_gait


def time_kernel(impl, model, q0, ticks):
    exc = np.full(model.nmus, 0.1)
    tau_exo = np.zeros(model.njnt)
    state = (q0.copy(), np.zeros(model.nq),
             np.full(model.nmus, 0.05), model.mus_lopt.copy())
    impl.step_control(model, *state, exc, tau_exo, 8, 0.005)  # warm
    best = []
    for _ in range(3):
        s = state
        t0 = time.perf_counter()
        for _ in range(ticks):
            s = impl.step_control(model, *s, exc, tau_exo, 8, 0.005)[:4]
        best.append((time.perf_counter() - t0) / ticks)
    return min(best)


def time_env(impl, model, clip, steps):
    gaitlab.env._K = impl
    env = GaitEnv(model, clip, EnvConfig(episode_steps=10_000))
    rng = np.random.default_rng(0)
    env.reset(seed=0, start_time=0.0, clip_index=0)
    action = np.zeros(env.action_size)
    env.step(action)  # warm
    best = []
    for _ in range(3):
        env.reset(seed=0, start_time=0.0, clip_index=0)
        t0 = time.perf_counter()
        n = 0
        for _ in range(steps):
            a = rng.uniform(-0.4, 0.4, env.action_size)
            _, _, term, trunc, _ = env.step(a)
            n += 1
            if term or trunc:
                env.reset(seed=0, start_time=0.0, clip_index=0)
        best.append((time.perf_counter() - t0) / n)
    return min(best)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ticks", type=int, default=2000,
                    help="control ticks per kernel timing pass")
    ap.add_argument("--episode-steps", type=int, default=200,
                    help="env steps per environment timing pass")
    args = ap.parse_args()

    model = build_model("builtin:walker_75kg", "builtin:muscles_18")
    q0 = settle_root_height(model, model.neutral_q)
    clip = preprocess(synthetic_gait(model, speed=1.25, cycles=4)).clip

    backends = []
    for name in ("python", "native"):
        try:
            backends.append((name, get_backend(name)))
        except ImportError:
            print(f"{name:>8}: unavailable")

    rows = []
    for name, impl in backends:
        ticks = args.ticks if name == "native" else max(args.ticks // 20, 50)
        tk = time_kernel(impl, model, q0, ticks)
        te = time_env(impl, model, clip, args.episode_steps)
        rows.append((name, tk, te))

    print(f"{'backend':>8} {'kernel us/tick':>15} {'kernel steps/s':>15} "
          f"{'env us/step':>12} {'env steps/s':>12}")
    for name, tk, te in rows:
        print(f"{name:>8} {tk * 1e6:>15.1f} {1.0 / tk:>15,.0f} "
              f"{te * 1e6:>12.1f} {1.0 / te:>12,.0f}")
    if len(rows) == 2:
        print(f"\nkernel speedup: {rows[0][1] / rows[1][1]:.1f}x, "
              f"env speedup: {rows[0][2] / rows[1][2]:.1f}x")


if __name__ == "__main__":
    main()
