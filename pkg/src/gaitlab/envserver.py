"""Stdio bridge exposing a single walker environment to other languages.

    python3 -m gaitlab.envserver RUN_CONFIG

builds the canonical evaluation environment for a run configuration
(YAML path or builtin name, same resolution as the CLI) and serves it
over stdin/stdout with a length-prefixed binary protocol. One process
is one environment instance: clients that want vectorization spawn
several processes. The process never reads anything but protocol
frames from stdin and never writes anything but protocol frames to
stdout, so any runtime warnings land on stderr where they belong.

Wire format, all integers little-endian, all floats IEEE-754 binary64:

    frame   := u32 length, then `length` payload bytes
    payload := u8 opcode, then the body below

Client -> server opcodes:

    0x01 RESET  body: u8 has_seed, u64 seed (ignored when has_seed=0)
    0x02 STEP   body: f64[act_dim] action
    0x03 CLOSE  body: empty; server exits 0 (EOF on stdin does the same)

Server -> client opcodes:

    0x81 SPEC   sent once at startup:
                u32 obs_dim, u32 act_dim, f64 action_low, f64 action_high,
                u32 episode_steps, u32 n_reward_terms, utf-8 fingerprint
    0x82 STATE  reset response: f64[obs_dim] observation
    0x83 STEPR  step response: f64[obs_dim] observation, f64 reward,
                u8 terminated, u8 truncated, u8 clipped,
                f64[n_reward_terms] reward terms in REWARD_FIELDS order,
                u32 episode step count
    0xEE ERROR  u32 code, utf-8 message. Code 2 is a configuration
                problem (bad run config; fatal, process exits 2), 3 a
                data problem (fatal, exits 3), 1 a protocol misuse
                (step before reset, step after the episode finished,
                malformed body); code 1 keeps serving so the client
                can recover with a RESET.

Actions outside [action_low, action_high] are clipped component-wise
and reported via the STEPR clipped flag; non-finite actions are a
code-1 error. The protocol is strict request/response: one frame in,
one frame out, no pipelining.
"""

import struct
import sys

import numpy as np

from gaitlab.cli import _build_bundle, _build_model, _load_run
from gaitlab.env import EnvConfig, GaitEnv
from gaitlab.errors import CheckpointError, ConfigError, DataError
from gaitlab.trace import REWARD_FIELDS, config_fingerprint

REQ_RESET = 0x01
REQ_STEP = 0x02
REQ_CLOSE = 0x03
RSP_SPEC = 0x81
RSP_STATE = 0x82
RSP_STEPR = 0x83
RSP_ERROR = 0xEE

ERR_PROTOCOL = 1
ERR_CONFIG = 2
ERR_DATA = 3

ACTION_LOW, ACTION_HIGH = -1.0, 1.0


def _write_frame(out, opcode, body=b""):
    out.write(struct.pack("<IB", 1 + len(body), opcode))
    out.write(body)
    out.flush()


def _write_error(out, code, message):
    msg = str(message).encode("utf-8")
    _write_frame(out, RSP_ERROR, struct.pack("<I", code) + msg)


def _read_frame(inp):
    """One (opcode, body) request, or None on a clean EOF."""
    head = inp.read(4)
    if len(head) == 0:
        return None
    if len(head) < 4:
        raise EOFError("truncated frame header")
    (length,) = struct.unpack("<I", head)
    if length < 1:
        raise EOFError("empty frame")
    payload = inp.read(length)
    if len(payload) < length:
        raise EOFError("truncated frame payload")
    return payload[0], payload[1:]


def _spec_body(env):
    fp = config_fingerprint(env.spec()).encode("utf-8")
    return struct.pack(
        "<IIddII", env.observation_size, env.action_size,
        ACTION_LOW, ACTION_HIGH, env.config.episode_steps,
        len(REWARD_FIELDS)) + fp


def _stepr_body(obs, reward, terminated, truncated, clipped, terms, steps):
    return (np.ascontiguousarray(obs, dtype=np.float64).tobytes()
            + struct.pack("<dBBB", reward, terminated, truncated, clipped)
            + np.asarray(terms, dtype=np.float64).tobytes()
            + struct.pack("<I", steps))


def build_env(source):
    """The canonical single-clip evaluation environment for a run."""
    run, base = _load_run(source)
    model = _build_model(run)
    bundle = _build_bundle(run, base, model)
    return GaitEnv(model, [bundle.clip], EnvConfig.from_run(run))


def serve(source, inp, out):
    """Protocol loop; returns the process exit code."""
    try:
        env = build_env(source)
    except (ConfigError, CheckpointError) as e:
        _write_error(out, ERR_CONFIG, e)
        return 2
    except DataError as e:
        _write_error(out, ERR_DATA, e)
        return 3
    _write_frame(out, RSP_SPEC, _spec_body(env))

    act_dim = env.action_size
    while True:
        try:
            req = _read_frame(inp)
        except EOFError as e:
            print(f"envserver: {e}", file=sys.stderr)
            return 3
        if req is None:
            return 0
        opcode, body = req

        if opcode == REQ_CLOSE:
            return 0

        if opcode == REQ_RESET:
            if len(body) != 9:
                _write_error(out, ERR_PROTOCOL,
                             f"RESET body must be 9 bytes, got {len(body)}")
                continue
            has_seed, seed = struct.unpack("<BQ", body)
            obs, _ = env.reset(seed=seed if has_seed else None)
            _write_frame(out, RSP_STATE,
                         np.ascontiguousarray(obs, np.float64).tobytes())
            continue

        if opcode == REQ_STEP:
            if len(body) != 8 * act_dim:
                _write_error(out, ERR_PROTOCOL,
                             f"STEP body must be {8 * act_dim} bytes for "
                             f"{act_dim} actions, got {len(body)}")
                continue
            action = np.frombuffer(body, dtype="<f8")
            if not np.all(np.isfinite(action)):
                _write_error(out, ERR_PROTOCOL, "action must be finite")
                continue
            clipped = bool(np.any(action < ACTION_LOW)
                           or np.any(action > ACTION_HIGH))
            try:
                obs, reward, term, trunc, info = env.step(
                    np.clip(action, ACTION_LOW, ACTION_HIGH))
            except RuntimeError as e:
                _write_error(out, ERR_PROTOCOL, e)
                continue
            terms = [getattr(info["reward_terms"], f) for f in REWARD_FIELDS]
            _write_frame(out, RSP_STEPR, _stepr_body(
                obs, reward, term, trunc, clipped, terms, info["steps"]))
            continue

        _write_error(out, ERR_PROTOCOL, f"unknown opcode 0x{opcode:02x}")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python3 -m gaitlab.envserver RUN_CONFIG",
              file=sys.stderr)
        return 2
    return serve(argv[0], sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    sys.exit(main())
