"""Maximum-entropy actor-critic training harness.

Tanh-squashed Gaussian policy, twin action-value networks, a replay
ring, and N serial collectors feeding one learner. The paper-scale
profile ([512, 512, 256] nets, 96 envs, 600M/150M steps) is kept in the
presets as documentation of what the full runs used; the desk profiles
are what actually fits on a workstation CPU.

Reproducibility notes: train() pins torch to one thread (the nets are
far too small to gain from threading, and a fixed summation order makes
same-seed runs bit-identical) and draws every stochastic choice from
generators derived from the config seed. Checkpoints are self-contained
binary bundles; save -> load -> save is bit-identical.
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from gaitlab.errors import CheckpointError, ConfigError, TrainingError
from gaitlab.trace import REWARD_FIELDS, TraceRecorder, config_fingerprint

__all__ = [
    "TrainerConfig", "Transition", "ReplayBuffer", "Collector",
    "Actor", "TwinCritic", "PolicyCheckpoint",
    "preset", "train", "evaluate", "random_policy_baseline",
    "critic_loss", "actor_loss", "soft_update", "lr_at",
    "LOG_COLUMNS", "CHECKPOINT_FORMAT",
]

CHECKPOINT_FORMAT = "gaitlab-policy/1"
_MAGIC = b"GLPC\x00\x01"

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0

PHASES = ("base", "exo-finetune", "weakness-finetune")

LOG_COLUMNS = ("steps", "updates", "episodes", "ep_return", "ep_length",
               *REWARD_FIELDS, "exo_torque_abs",
               "critic_loss", "actor_loss", "alpha", "entropy", "lr")


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters; defaults are the published full-scale profile.

    lr decays linearly with collected env steps, reaching lr * lr_floor
    at total_steps (the published schedule names no endpoint; a floor
    keeps the optimizer alive at the end). train_freq counts aggregate
    steps across all collectors unless train_freq_per_env is set -- the
    per-env reading is plausible too, so it stays available.
    """

    hidden: tuple = (512, 512, 256)
    batch_size: int = 256
    lr: float = 3e-4
    lr_floor: float = 0.1               # fraction of lr kept at total_steps
    tau: float = 0.02                   # soft-update coefficient
    entropy_coef: float | str = "auto"  # positive float for fixed mode
    gamma: float = 0.95
    train_freq: int = 4
    train_freq_per_env: bool = False
    grad_steps: int = 4
    target_interval: int = 1
    total_steps: int = 600_000_000
    n_envs: int = 96
    replay_capacity: int = 1_000_000
    learning_starts: int = 10_000
    log_every: int = 1_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden sizes must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("discount must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("soft-update coefficient must lie in (0, 1]")
        if self.batch_size > self.replay_capacity:
            raise ConfigError("batch size exceeds replay capacity")
        for n in ("batch_size", "train_freq", "grad_steps", "target_interval",
                  "total_steps", "n_envs", "replay_capacity", "log_every"):
            if getattr(self, n) < 1:
                raise ConfigError(f"{n} must be at least 1")
        if self.learning_starts < 0:
            raise ConfigError("learning_starts cannot be negative")
        if self.lr < 0.0 or not 0.0 < self.lr_floor <= 1.0:
            raise ConfigError("bad learning-rate schedule")
        if self.entropy_coef != "auto" and float(self.entropy_coef) < 0.0:
            raise ConfigError("fixed entropy coefficient must be >= 0")


_PAPER = TrainerConfig()

# the 600M/150M-step, 96-env profile is not reproducible on a desk;
# these are the sizes the examples and acceptance runs actually use
_PRESETS = {
    "base": _PAPER,
    "finetune": replace(_PAPER, total_steps=150_000_000),
    "desk": replace(_PAPER, hidden=(64, 64), n_envs=4, total_steps=200_000,
                    replay_capacity=200_000, learning_starts=5_000),
    "desk-finetune": replace(_PAPER, hidden=(64, 64), n_envs=4,
                             total_steps=50_000, replay_capacity=100_000,
                             learning_starts=1_000),
}


def preset(name) -> TrainerConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown trainer preset '{name}'") from None


def lr_at(step, cfg: TrainerConfig):
    """Linear decay from cfg.lr, hitting the floor at total_steps."""
    frac = min(max(step / cfg.total_steps, 0.0), 1.0)
    return cfg.lr * (1.0 - (1.0 - cfg.lr_floor) * frac)


# -- replay -----------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    """One env step. Only `terminated` kills the bootstrap: a truncated
    episode would have continued, so its value target keeps the tail."""

    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminated: bool
    truncated: bool


class ReplayBuffer:
    """Fixed-capacity ring with uniform with-replacement sampling.

    Learner-owned: collectors hand transitions over through the queue
    and never touch the buffer. Storage is float32 (halves the
    footprint; the nets are float32 anyway).
    """

    def __init__(self, capacity, obs_dim, act_dim, seed=0):
        if capacity < 1:
            raise ConfigError("replay capacity must be at least 1")
        self.capacity = int(capacity)
        self._obs = np.zeros((capacity, obs_dim), np.float32)
        self._act = np.zeros((capacity, act_dim), np.float32)
        self._rew = np.zeros(capacity, np.float32)
        self._next = np.zeros((capacity, obs_dim), np.float32)
        self._term = np.zeros(capacity, np.float32)
        self._trunc = np.zeros(capacity, bool)
        self._rng = np.random.default_rng(seed)
        self._n = 0
        self._head = 0

    def __len__(self):
        return self._n

    def push(self, tr: Transition):
        i = self._head
        self._obs[i] = tr.obs
        self._act[i] = tr.action
        self._rew[i] = tr.reward
        self._next[i] = tr.next_obs
        self._term[i] = float(tr.terminated)
        self._trunc[i] = tr.truncated
        self._head = (i + 1) % self.capacity
        self._n = min(self._n + 1, self.capacity)

    def sample(self, batch, rng=None):
        """Uniform minibatch as torch tensors; rng defaults to the
        buffer's own seeded stream."""
        if self._n == 0:
            raise TrainingError("sampling from an empty replay buffer")
        r = self._rng if rng is None else rng
        idx = r.integers(0, self._n, size=int(batch))
        return {
            "obs": torch.from_numpy(self._obs[idx]),
            "action": torch.from_numpy(self._act[idx]),
            "reward": torch.from_numpy(self._rew[idx]),
            "next_obs": torch.from_numpy(self._next[idx]),
            "terminated": torch.from_numpy(self._term[idx]),
        }


# -- networks ---------------------------------------------------------------

def _mlp(in_dim, hidden, out_dim, dtype):
    layers, last = [], in_dim
    for h in hidden:
        layers += [nn.Linear(last, h, dtype=dtype), nn.ReLU()]
        last = h
    layers.append(nn.Linear(last, out_dim, dtype=dtype))
    return nn.Sequential(*layers)


class Actor(nn.Module):
    """Tanh-squashed conditional Gaussian policy."""

    def __init__(self, obs_dim, act_dim, hidden, dtype=torch.float32):
        super().__init__()
        layers, last = [], obs_dim
        for h in hidden:
            layers += [nn.Linear(last, h, dtype=dtype), nn.ReLU()]
            last = h
        self.trunk = nn.Sequential(*layers)
        self.mu = nn.Linear(last, act_dim, dtype=dtype)
        self.log_std = nn.Linear(last, act_dim, dtype=dtype)

    def dist_params(self, obs):
        z = self.trunk(obs)
        return self.mu(z), self.log_std(z).clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, obs, eps=None, generator=None):
        """Reparameterized draw -> (action in (-1,1)^d, log-density).

        eps overrides the standard-normal noise; frozen-noise probes
        (gradient checks) rely on that. log(1 - tanh(x)^2) is evaluated
        as 2(log 2 - x - softplus(-2x)), which stays finite where the
        naive form underflows.
        """
        mu, log_std = self.dist_params(obs)
        std = log_std.exp()
        if eps is None:
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        x = mu + std * eps
        action = torch.tanh(x)
        logp = (-0.5 * eps.square() - log_std
                - 0.5 * math.log(2.0 * math.pi)).sum(-1)
        logp = logp - (2.0 * (math.log(2.0) - x
                              - F.softplus(-2.0 * x))).sum(-1)
        return action, logp

    def act(self, obs, deterministic=False, generator=None):
        """Single-observation numpy convenience for collectors/eval."""
        dtype = self.mu.weight.dtype
        with torch.no_grad():
            t = torch.as_tensor(np.asarray(obs), dtype=dtype).unsqueeze(0)
            if deterministic:
                mu, _ = self.dist_params(t)
                a = torch.tanh(mu)
            else:
                a, _ = self.sample(t, generator=generator)
        return np.asarray(a.squeeze(0), dtype=float)


class TwinCritic(nn.Module):
    """Two independent action-value heads; targets take their minimum."""

    def __init__(self, obs_dim, act_dim, hidden, dtype=torch.float32):
        super().__init__()
        self.q1 = _mlp(obs_dim + act_dim, hidden, 1, dtype)
        self.q2 = _mlp(obs_dim + act_dim, hidden, 1, dtype)

    def forward(self, obs, action):
        x = torch.cat([obs, action], dim=-1)
        return self.q1(x).squeeze(-1), self.q2(x).squeeze(-1)


# -- losses (standalone so gradient probes can call them verbatim) ----------

def critic_loss(critic, target_critic, actor, batch, gamma, alpha,
                eps=None, generator=None):
    """Twin MSE against the entropy-regularized bootstrap target.

    terminated kills the tail; truncated rows keep it (they carry
    terminated = 0 in the batch).
    """
    with torch.no_grad():
        a2, logp2 = actor.sample(batch["next_obs"], eps=eps,
                                 generator=generator)
        t1, t2 = target_critic(batch["next_obs"], a2)
        backup = batch["reward"] + gamma * (1.0 - batch["terminated"]) * (
            torch.minimum(t1, t2) - alpha * logp2)
    q1, q2 = critic(batch["obs"], batch["action"])
    return F.mse_loss(q1, backup) + F.mse_loss(q2, backup)


def actor_loss(actor, critic, batch, alpha, eps=None, generator=None):
    """Reparameterized policy objective; returns (loss, log-probs)."""
    a, logp = actor.sample(batch["obs"], eps=eps, generator=generator)
    q1, q2 = critic(batch["obs"], a)
    return (alpha * logp - torch.minimum(q1, q2)).mean(), logp


def soft_update(target, online, rho):
    """target <- rho * online + (1 - rho) * target, parameter-wise.

    Written in delta form (tp += rho * (p - tp)) so a target that
    already equals its online net stays bit-identical instead of
    accumulating blend roundoff.
    """
    with torch.no_grad():
        for tp, p in zip(target.parameters(), online.parameters()):
            tp.add_(p - tp, alpha=rho)


# -- collection -------------------------------------------------------------

class Collector:
    """Owns one environment plus its episode bookkeeping.

    step() applies an action, appends the Transition to the shared
    queue, and returns an episode-stats dict when the episode just
    ended (None otherwise). Resets after the first draw from the env's
    own seeded stream, so the construction seed fixes the trajectory.
    """

    def __init__(self, env, queue, seed):
        self.env = env
        self.queue = queue
        self.obs, _ = env.reset(seed=int(seed))
        self._assist = env.model.exo_tau_max > 0.0
        self._zero()

    def _zero(self):
        self._ret = 0.0
        self._len = 0
        self._terms = np.zeros(len(REWARD_FIELDS))
        self._exo = 0.0

    def step(self, action):
        obs2, rew, term, trunc, info = self.env.step(action)
        self.queue.append(Transition(self.obs, np.asarray(action, float),
                                     float(rew), obs2, bool(term),
                                     bool(trunc)))
        self._ret += rew
        self._len += 1
        rt = info["reward_terms"]
        self._terms += [getattr(rt, f) for f in REWARD_FIELDS]
        tq = info.get("exo_torque")
        if tq is not None and self._assist.any():
            self._exo += float(np.mean(np.abs(tq[self._assist])))
        if term or trunc:
            stats = {"return": self._ret, "length": self._len,
                     "terms": self._terms / self._len,
                     "exo_abs": self._exo / self._len}
            self.obs, _ = self.env.reset()
            self._zero()
            return stats
        self.obs = obs2
        return None


def random_policy_baseline(env, episodes=20, seed=0):
    """Mean undiscounted return of uniform random actions.

    Measured, not assumed: improvement claims are anchored to the same
    env build and episode settings the trained policy sees.
    """
    rng = np.random.default_rng(seed)
    totals = []
    for k in range(episodes):
        env.reset(seed=int(seed) * 131 + k)
        total, done = 0.0, False
        while not done:
            a = rng.uniform(-1.0, 1.0, env.action_size)
            _, rew, term, trunc, _ = env.step(a)
            total += rew
            done = term or trunc
        totals.append(total)
    return float(np.mean(totals))


# -- checkpoints ------------------------------------------------------------

@dataclass
class PolicyCheckpoint:
    """Everything needed to resume or evaluate: network and optimizer
    arrays, entropy coefficient, fingerprints, RNG states, step count.

    Serialized as magic + length-prefixed JSON header + raw
    little-endian array blobs in header order; no timestamps, so
    save -> load -> save round-trips bit-identically.
    """

    phase: str
    total_steps: int
    env_fingerprint: str
    config: dict                 # TrainerConfig as a plain mapping
    obs_dim: int
    act_dim: int
    entropy_coef: float          # current alpha value
    arrays: dict = field(default_factory=dict)   # name -> np.ndarray
    rng: dict = field(default_factory=dict)      # json-able state blobs

    @property
    def config_fingerprint(self):
        return config_fingerprint(self.config)

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(**self.config)

    def build_actor(self, dtype=torch.float32) -> Actor:
        actor = Actor(self.obs_dim, self.act_dim,
                      tuple(self.config["hidden"]), dtype=dtype)
        state = {k[len("actor."):]: torch.from_numpy(v.copy()).to(dtype)
                 for k, v in self.arrays.items() if k.startswith("actor.")}
        actor.load_state_dict(state)
        return actor

    def build_critics(self, dtype=torch.float32):
        nets = []
        for tag in ("critic.", "target."):
            net = TwinCritic(self.obs_dim, self.act_dim,
                             tuple(self.config["hidden"]), dtype=dtype)
            state = {k[len(tag):]: torch.from_numpy(v.copy()).to(dtype)
                     for k, v in self.arrays.items() if k.startswith(tag)}
            net.load_state_dict(state)
            nets.append(net)
        return nets

    def save(self, path):
        names = sorted(self.arrays)
        header = {
            "format": CHECKPOINT_FORMAT,
            "meta": {
                "phase": self.phase,
                "total_steps": int(self.total_steps),
                "env_fingerprint": self.env_fingerprint,
                "config": self.config,
                "obs_dim": int(self.obs_dim),
                "act_dim": int(self.act_dim),
                "entropy_coef": float(self.entropy_coef),
                "rng": self.rng,
            },
            "arrays": [{"name": n,
                        "dtype": self.arrays[n].dtype.name,
                        "shape": list(self.arrays[n].shape)}
                       for n in names],
        }
        blob = json.dumps(header, sort_keys=True,
                          separators=(",", ":")).encode()
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(len(blob).to_bytes(8, "little"))
            f.write(blob)
            for n in names:
                f.write(np.ascontiguousarray(self.arrays[n]).tobytes())

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as f:
                if f.read(len(_MAGIC)) != _MAGIC:
                    raise CheckpointError(f"{path}: not a policy checkpoint")
                hlen = int.from_bytes(f.read(8), "little")
                header = json.loads(f.read(hlen))
                if header.get("format") != CHECKPOINT_FORMAT:
                    raise CheckpointError(f"{path}: unsupported format")
                arrays = {}
                for spec in header["arrays"]:
                    dt = np.dtype(spec["dtype"])
                    shape = tuple(spec["shape"])
                    raw = f.read(dt.itemsize * int(np.prod(shape, dtype=int)))
                    arrays[spec["name"]] = np.frombuffer(
                        raw, dtype=dt).reshape(shape).copy()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint: {exc}") from None
        meta = header["meta"]
        cfg = dict(meta["config"])
        return cls(phase=meta["phase"], total_steps=meta["total_steps"],
                   env_fingerprint=meta["env_fingerprint"], config=cfg,
                   obs_dim=meta["obs_dim"], act_dim=meta["act_dim"],
                   entropy_coef=meta["entropy_coef"], arrays=arrays,
                   rng=meta["rng"])


def _net_arrays(prefix, net):
    return {f"{prefix}.{k}": v.detach().numpy().copy()
            for k, v in net.state_dict().items()}


def _opt_arrays(prefix, opt):
    """Flatten optimizer state keyed by parameter order; Adam keeps
    step/exp_avg/exp_avg_sq per parameter."""
    out = {}
    state = opt.state_dict()["state"]
    for pidx, entries in state.items():
        for key, val in entries.items():
            if isinstance(val, torch.Tensor):
                arr = val.detach().numpy().copy()
            else:
                arr = np.asarray(val)
            out[f"{prefix}.{pidx}.{key}"] = arr
    return out


def _restore_opt(prefix, opt, arrays):
    sd = opt.state_dict()
    state = {}
    names = [k for k in arrays if k.startswith(prefix + ".")]
    for k in names:
        _, pidx, key = k.rsplit(".", 2)
        entry = state.setdefault(int(pidx), {})
        arr = arrays[k]
        entry[key] = torch.tensor(float(arr)) if arr.ndim == 0 \
            else torch.from_numpy(arr.copy())
    if state:
        sd["state"] = state
        opt.load_state_dict(sd)


# -- training ---------------------------------------------------------------

def _check_phase(phase, env, init):
    spec = env.spec()
    device = env.model.device.kind
    weak = bool(np.any(env.weakness_caps < 1.0))
    if phase == "base":
        if spec["reward_phase"] != "base":
            raise ConfigError("base phase runs the base reward profile")
        if device != "none":
            raise ConfigError("base phase trains the bare model; "
                              f"env carries device '{device}'")
        if weak:
            raise ConfigError("base phase trains the unimpaired model")
    elif phase == "exo-finetune":
        if init is None:
            raise ConfigError("exo-finetune requires an init checkpoint")
        if device == "none":
            raise ConfigError("exo-finetune needs an exo device on the model")
        if spec["reward_phase"] != "finetune":
            raise ConfigError("exo-finetune runs the finetune reward profile")
    elif phase == "weakness-finetune":
        if init is None:
            raise ConfigError("weakness-finetune requires an init checkpoint")
        if not weak:
            raise ConfigError(
                "weakness-finetune needs at least one capped muscle")
        if spec["reward_phase"] != "finetune":
            raise ConfigError(
                "weakness-finetune runs the finetune reward profile")
    else:
        raise ConfigError(f"unknown phase '{phase}' (choose from {PHASES})")


def _append_csv(path, rows):
    """Append-only metrics log; header goes in only when the file is
    new. No timestamps: same seed must give an identical file."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a") as f:
        if fresh:
            f.write(",".join(LOG_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(repr(row[c]) if isinstance(row[c], float)
                             else str(row[c]) for c in LOG_COLUMNS) + "\n")


def _seed_int(seq):
    return int(seq.generate_state(1, np.uint32)[0])


def train(env_factory, config: TrainerConfig, phase="base", init=None,
          out_dir=None, optimizer=None):
    """Run one training phase; returns (PolicyCheckpoint, metrics rows).

    env_factory() must build a fresh env configured for the phase (the
    reward profile and any device/weakness live on the env; this
    function only refuses mismatches). init is required for the
    fine-tune phases and optional warm-start otherwise. out_dir, when
    given, receives an append-only metrics.csv. optimizer defaults to
    Adam; any (params, lr=...) -> torch optimizer works.
    """
    cfg = config
    make_opt = torch.optim.Adam if optimizer is None else optimizer
    torch.set_num_threads(1)    # fixed summation order; nets too small to thread

    envs = [env_factory() for _ in range(cfg.n_envs)]
    spec0 = envs[0].spec()
    env_fp = config_fingerprint(spec0)
    for e in envs[1:]:
        if config_fingerprint(e.spec()) != env_fp:
            raise ConfigError("env factory produced mismatched environments")
    _check_phase(phase, envs[0], init)
    obs_dim, act_dim = spec0["observation_size"], spec0["action_size"]

    if init is not None:
        if (init.obs_dim, init.act_dim) != (obs_dim, act_dim):
            raise CheckpointError(
                f"checkpoint interface ({init.obs_dim}, {init.act_dim}) does "
                f"not match the environment ({obs_dim}, {act_dim})")
        if tuple(init.config["hidden"]) != cfg.hidden:
            raise CheckpointError("checkpoint network sizes do not match "
                                  "the requested config")

    ss = np.random.SeedSequence(cfg.seed)
    s_torch, s_buf, s_act, s_warm, *s_envs = ss.spawn(4 + cfg.n_envs)
    torch.manual_seed(_seed_int(s_torch))

    actor = Actor(obs_dim, act_dim, cfg.hidden)
    critic = TwinCritic(obs_dim, act_dim, cfg.hidden)
    target = TwinCritic(obs_dim, act_dim, cfg.hidden)
    target.load_state_dict(critic.state_dict())
    target.requires_grad_(False)

    auto_alpha = cfg.entropy_coef == "auto"
    if auto_alpha:
        init_alpha = init.entropy_coef if init is not None else 1.0
        log_alpha = torch.tensor(math.log(max(init_alpha, 1e-8)),
                                 requires_grad=True)
    else:
        log_alpha = None
        alpha = float(cfg.entropy_coef)
    target_entropy = -float(act_dim)

    opt_actor = make_opt(actor.parameters(), lr=cfg.lr)
    opt_critic = make_opt(critic.parameters(), lr=cfg.lr)
    opt_alpha = make_opt([log_alpha], lr=cfg.lr) if auto_alpha else None

    if init is not None:
        actor.load_state_dict({k[len("actor."):]: torch.from_numpy(v.copy())
                               for k, v in init.arrays.items()
                               if k.startswith("actor.")})
        critic.load_state_dict({k[len("critic."):]: torch.from_numpy(v.copy())
                                for k, v in init.arrays.items()
                                if k.startswith("critic.")})
        target.load_state_dict({k[len("target."):]: torch.from_numpy(v.copy())
                                for k, v in init.arrays.items()
                                if k.startswith("target.")})
        _restore_opt("opt_actor", opt_actor, init.arrays)
        _restore_opt("opt_critic", opt_critic, init.arrays)
        if auto_alpha:
            _restore_opt("opt_alpha", opt_alpha, init.arrays)

    gen_act = torch.Generator()
    gen_act.manual_seed(_seed_int(s_act))
    rng_warm = np.random.default_rng(_seed_int(s_warm))

    queue = deque()
    buffer = ReplayBuffer(cfg.replay_capacity, obs_dim, act_dim,
                          seed=_seed_int(s_buf))
    collectors = [Collector(env, queue, seed=_seed_int(si))
                  for env, si in zip(envs, s_envs)]

    burst_every = cfg.train_freq * (cfg.n_envs if cfg.train_freq_per_env
                                    else 1)
    steps = updates = 0
    last = {"critic_loss": math.nan, "actor_loss": math.nan,
            "entropy": math.nan, "lr": lr_at(0, cfg)}
    win_ret, win_len, win_exo = [], [], []
    win_terms = []
    rows = []
    csv_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "metrics.csv")

    while steps < cfg.total_steps:
        coll = collectors[steps % cfg.n_envs]
        if steps < cfg.learning_starts:
            a = rng_warm.uniform(-1.0, 1.0, act_dim)
        else:
            a = actor.act(coll.obs, deterministic=False, generator=gen_act)
        stats = coll.step(a)
        steps += 1
        if stats is not None:
            win_ret.append(stats["return"])
            win_len.append(stats["length"])
            win_terms.append(stats["terms"])
            win_exo.append(stats["exo_abs"])
        while queue:                      # learner drains; sole buffer writer
            buffer.push(queue.popleft())

        if (steps >= cfg.learning_starts and steps % burst_every == 0
                and len(buffer) >= cfg.batch_size):
            lr_now = lr_at(steps, cfg)
            for opt in filter(None, (opt_actor, opt_critic, opt_alpha)):
                for g in opt.param_groups:
                    g["lr"] = lr_now
            for _ in range(cfg.grad_steps):
                batch = buffer.sample(cfg.batch_size)
                if auto_alpha:
                    alpha = float(log_alpha.detach().exp())
                closs = critic_loss(critic, target, actor, batch,
                                    cfg.gamma, alpha, generator=gen_act)
                opt_critic.zero_grad()
                closs.backward()
                opt_critic.step()
                aloss, logp = actor_loss(actor, critic, batch, alpha,
                                         generator=gen_act)
                opt_actor.zero_grad()
                aloss.backward()
                opt_actor.step()
                el = 0.0
                if auto_alpha:
                    entloss = -(log_alpha
                                * (logp.detach() + target_entropy)).mean()
                    opt_alpha.zero_grad()
                    entloss.backward()
                    opt_alpha.step()
                    el = float(entloss.detach())
                updates += 1
                if updates % cfg.target_interval == 0:
                    soft_update(target, critic, cfg.tau)
                cl, al = float(closs.detach()), float(aloss.detach())
                if not (math.isfinite(cl) and math.isfinite(al)
                        and math.isfinite(el)):
                    raise TrainingError(
                        "non-finite loss: "
                        f"critic={cl} actor={al} entropy={el} alpha={alpha} "
                        f"steps={steps} updates={updates} lr={lr_now} "
                        f"buffer={len(buffer)}")
                last.update(critic_loss=cl, actor_loss=al,
                            entropy=float(-logp.detach().mean()), lr=lr_now)

        if steps % cfg.log_every == 0 or steps == cfg.total_steps:
            terms = (np.mean(win_terms, axis=0) if win_terms
                     else np.full(len(REWARD_FIELDS), math.nan))
            row = {"steps": steps, "updates": updates,
                   "episodes": len(win_ret),
                   "ep_return": float(np.mean(win_ret)) if win_ret
                   else math.nan,
                   "ep_length": float(np.mean(win_len)) if win_len
                   else math.nan,
                   **{f: float(t) for f, t in zip(REWARD_FIELDS, terms)},
                   "exo_torque_abs": float(np.mean(win_exo)) if win_exo
                   else math.nan,
                   "critic_loss": last["critic_loss"],
                   "actor_loss": last["actor_loss"],
                   "alpha": float(alpha) if not auto_alpha
                   else float(log_alpha.detach().exp()),
                   "entropy": last["entropy"],
                   "lr": last["lr"]}
            rows.append(row)
            if csv_path is not None:
                _append_csv(csv_path, [row])
            win_ret, win_len, win_exo, win_terms = [], [], [], []

    arrays = {}
    arrays.update(_net_arrays("actor", actor))
    arrays.update(_net_arrays("critic", critic))
    arrays.update(_net_arrays("target", target))
    arrays.update(_opt_arrays("opt_actor", opt_actor))
    arrays.update(_opt_arrays("opt_critic", opt_critic))
    if auto_alpha:
        arrays["log_alpha"] = log_alpha.detach().numpy().copy()
        arrays.update(_opt_arrays("opt_alpha", opt_alpha))
    arrays["rng.torch_actions"] = gen_act.get_state().numpy().copy()
    arrays["rng.torch_global"] = torch.get_rng_state().numpy().copy()

    ckpt = PolicyCheckpoint(
        phase=phase,
        total_steps=steps + (init.total_steps if init is not None else 0),
        env_fingerprint=env_fp,
        config={**asdict(cfg), "hidden": list(cfg.hidden)},
        obs_dim=obs_dim,
        act_dim=act_dim,
        entropy_coef=float(alpha) if not auto_alpha
        else float(log_alpha.detach().exp()),
        arrays=arrays,
        rng={"warmup": rng_warm.bit_generator.state,
             "buffer": buffer._rng.bit_generator.state})
    return ckpt, rows


# -- evaluation -------------------------------------------------------------

def evaluate(checkpoint: PolicyCheckpoint, env, episodes,
             deterministic=True, seed=0):
    """Roll the checkpointed policy for n episodes; returns (traces,
    summary). Mean action when deterministic, seeded draws otherwise.

    The env must match the checkpoint's fingerprint: metrics computed
    against the wrong environment would be quietly meaningless.
    """
    if episodes < 0:
        raise ConfigError("episode count cannot be negative")
    fp = config_fingerprint(env.spec())
    if fp != checkpoint.env_fingerprint:
        raise CheckpointError(
            f"environment fingerprint {fp} does not match the checkpoint's "
            f"{checkpoint.env_fingerprint}")
    actor = checkpoint.build_actor()
    traces, returns, lengths = [], [], []
    for k in range(int(episodes)):
        obs, _ = env.reset(seed=int(seed) + k)
        gen = torch.Generator()
        gen.manual_seed(int(seed) * 9973 + k)
        rec = TraceRecorder(env)
        done = False
        while not done:
            a = actor.act(obs, deterministic=deterministic, generator=gen)
            obs, _, term, trunc, info = env.step(a)
            rec.record(info)
            done = term or trunc
        tr = rec.finish()
        traces.append(tr)
        returns.append(tr.episode_return())
        lengths.append(len(tr))
    summary = {
        "episodes": int(episodes),
        "returns": returns,
        "mean_return": float(np.mean(returns)) if returns else None,
        "mean_length": float(np.mean(lengths)) if lengths else None,
    }
    return traces, summary
