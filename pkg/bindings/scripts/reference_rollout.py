"""Generate a reference rollout for the binding fidelity tests.

    python3 scripts/reference_rollout.py RUN_CONFIG N SEED

Drives the native in-process environment with N uniform random actions
(rng seeded with SEED; episode k resets with seed SEED + k) and prints
the full trajectory as JSON: actions, every observation, per-step
rewards and term breakdowns, and episodic returns. repr-based float
serialization round-trips bit-exactly through JSON, so the binding
test can demand exact agreement, not just the 1e-12 contract.
"""

import json
import sys

import numpy as np

from gaitlab.envserver import build_env
from gaitlab.trace import REWARD_FIELDS, config_fingerprint


def main(argv):
    source, n, seed = argv[0], int(argv[1]), int(argv[2])
    env = build_env(source)
    rng = np.random.default_rng(seed)
    actions = rng.uniform(-1.0, 1.0, (n, env.action_size))

    episode = 0
    obs, _ = env.reset(seed=seed + episode)
    out = {
        "config": source,
        "n": n,
        "seed": seed,
        "spec": {
            "obs_dim": env.observation_size,
            "act_dim": env.action_size,
            "episode_steps": env.config.episode_steps,
            "fingerprint": config_fingerprint(env.spec()),
        },
        "actions": actions.tolist(),
        "initial_observation": obs.tolist(),
        "steps": [],
        "resets": [],
        "episode_returns": [],
    }

    ret = 0.0
    for i in range(n):
        obs, reward, term, trunc, info = env.step(actions[i])
        ret += reward
        out["steps"].append({
            "reward": reward,
            "terminated": term,
            "truncated": trunc,
            "steps": info["steps"],
            "observation": obs.tolist(),
            "reward_terms": {
                f: getattr(info["reward_terms"], f) for f in REWARD_FIELDS
            },
        })
        if (term or trunc) and i < n - 1:
            out["episode_returns"].append(ret)
            ret = 0.0
            episode += 1
            obs, _ = env.reset(seed=seed + episode)
            out["resets"].append({
                "after_step": i,
                "seed": seed + episode,
                "observation": obs.tolist(),
            })
    out["episode_returns"].append(ret)

    json.dump(out, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
