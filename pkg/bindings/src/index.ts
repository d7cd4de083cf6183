/**
 * Node.js bindings for the gaitlab walker environment.
 *
 * Each BoundEnv owns one `python3 -m gaitlab.envserver <config>`
 * subprocess: one process per environment instance, vectorize by
 * making several. All numeric payloads cross the pipe as contiguous
 * little-endian float64 buffers (layout documented in the envserver
 * module), so observations and rewards seen here are bit-identical
 * to the native environment's.
 *
 * The protocol is strict request/response; a BoundEnv accepts one
 * in-flight call at a time and is meant to be driven from a single
 * logical task. Protocol misuse (stepping a finished episode, stepping
 * before reset) rejects that one call and the environment stays
 * usable after a reset().
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { endianness } from "node:os";

const REQ_RESET = 0x01;
const REQ_STEP = 0x02;
const REQ_CLOSE = 0x03;
const RSP_SPEC = 0x81;
const RSP_STATE = 0x82;
const RSP_STEPR = 0x83;
const RSP_ERROR = 0xee;

export const REWARD_FIELDS = [
  "r_pos",
  "r_vel",
  "r_root",
  "r_ee",
  "r_torq",
  "r_eff",
  "r_smt",
  "r_exo",
  "composite",
] as const;

export type RewardBreakdown = Record<(typeof REWARD_FIELDS)[number], number>;

export interface EnvSpec {
  obsDim: number;
  actDim: number;
  actionLow: number;
  actionHigh: number;
  episodeSteps: number;
  fingerprint: string;
}

export interface StepInfo {
  /** true when the sent action had components outside the bounds */
  clipped: boolean;
  /** steps taken in the current episode, this one included */
  steps: number;
  rewardTerms: RewardBreakdown;
}

export interface StepResult {
  observation: Float64Array;
  reward: number;
  terminated: boolean;
  truncated: boolean;
  info: StepInfo;
}

export interface MakeOptions {
  /** interpreter running the environment server (default "python3") */
  python?: string;
  /** extra environment variables for the server process */
  env?: Record<string, string>;
}

/** An ERROR frame from the server. Code 1 is recoverable protocol
 * misuse; 2 and 3 are fatal configuration and data failures. */
export class EnvServerError extends Error {
  constructor(
    readonly code: number,
    message: string,
  ) {
    super(message);
    this.name = "EnvServerError";
  }
}

interface Pending {
  resolve: (frame: { op: number; body: Buffer }) => void;
  reject: (err: Error) => void;
}

function f64slice(buf: Buffer, off: number, n: number): Float64Array {
  const out = new Float64Array(n);
  new Uint8Array(out.buffer).set(buf.subarray(off, off + 8 * n));
  return out;
}

/** Spawn an environment server for a run configuration (a YAML path
 * or a builtin run name) and wait for its interface description. */
export async function make(
  config: string,
  opts: MakeOptions = {},
): Promise<BoundEnv> {
  if (endianness() !== "LE") {
    throw new Error("wire format is little-endian; big-endian host unsupported");
  }
  const python = opts.python ?? process.env.GAITLAB_PYTHON ?? "python3";
  const proc = spawn(python, ["-m", "gaitlab.envserver", config], {
    stdio: ["pipe", "pipe", "pipe"],
    env: { ...process.env, ...opts.env },
  });
  const env = new BoundEnv(proc, config);
  const { op, body } = await env.request(null);
  if (op !== RSP_SPEC) {
    throw new Error(`expected SPEC frame, got opcode 0x${op.toString(16)}`);
  }
  env.spec = {
    obsDim: body.readUInt32LE(0),
    actDim: body.readUInt32LE(4),
    actionLow: body.readDoubleLE(8),
    actionHigh: body.readDoubleLE(16),
    episodeSteps: body.readUInt32LE(24),
    fingerprint: body.subarray(28 + 4).toString("utf8"),
  };
  env.nTerms = body.readUInt32LE(28);
  return env;
}

export class BoundEnv {
  spec!: EnvSpec;
  nTerms = 0;

  private buf: Buffer = Buffer.alloc(0);
  private pending: Pending | null = null;
  private closed = false;
  private exitErr: Error | null = null;
  private stderrTail = "";

  constructor(
    private readonly proc: ChildProcessWithoutNullStreams,
    readonly config: string,
  ) {
    proc.stdout.on("data", (chunk: Buffer) => this.onData(chunk));
    proc.stderr.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString()).slice(-8192);
    });
    proc.on("error", (err) => this.fail(new Error(`server spawn failed: ${err.message}`)));
    proc.on("exit", (code) => {
      this.closed = true;
      if (this.pending) {
        this.fail(
          new Error(
            `environment server exited with code ${code}: ${this.stderrTail.trim()}`,
          ),
        );
      }
    });
  }

  /** Start an episode; omit the seed for the server's own stream. */
  async reset(seed?: number | bigint): Promise<Float64Array> {
    const body = Buffer.alloc(10);
    body.writeUInt8(REQ_RESET, 0);
    if (seed !== undefined) {
      const s = BigInt(seed);
      if (s < 0n || s >= 1n << 64n) {
        throw new RangeError(`seed must be in [0, 2^64), got ${seed}`);
      }
      body.writeUInt8(1, 1);
      body.writeBigUInt64LE(s, 2);
    }
    const { op, body: rsp } = await this.request(body);
    this.expect(op, RSP_STATE);
    return f64slice(rsp, 0, this.spec.obsDim);
  }

  async step(action: ArrayLike<number>): Promise<StepResult> {
    const n = this.spec.actDim;
    if (action.length !== n) {
      throw new RangeError(`action length ${action.length}, expected ${n}`);
    }
    const body = Buffer.alloc(1 + 8 * n);
    body.writeUInt8(REQ_STEP, 0);
    for (let i = 0; i < n; i++) {
      body.writeDoubleLE(action[i], 1 + 8 * i);
    }
    const { op, body: rsp } = await this.request(body);
    this.expect(op, RSP_STEPR);

    const obsBytes = 8 * this.spec.obsDim;
    const observation = f64slice(rsp, 0, this.spec.obsDim);
    const reward = rsp.readDoubleLE(obsBytes);
    const terminated = rsp.readUInt8(obsBytes + 8) !== 0;
    const truncated = rsp.readUInt8(obsBytes + 9) !== 0;
    const clipped = rsp.readUInt8(obsBytes + 10) !== 0;
    const terms = f64slice(rsp, obsBytes + 11, this.nTerms);
    const steps = rsp.readUInt32LE(obsBytes + 11 + 8 * this.nTerms);
    const rewardTerms = Object.fromEntries(
      REWARD_FIELDS.map((f, i) => [f, terms[i]]),
    ) as RewardBreakdown;
    return {
      observation,
      reward,
      terminated,
      truncated,
      info: { clipped, steps, rewardTerms },
    };
  }

  /** Shut the server down; safe to call more than once. */
  async close(): Promise<void> {
    if (this.closed) {
      return;
    }
    this.closed = true;
    const frame = Buffer.alloc(5);
    frame.writeUInt32LE(1, 0);
    frame.writeUInt8(REQ_CLOSE, 4);
    this.proc.stdin.write(frame);
    this.proc.stdin.end();
    await new Promise<void>((resolve) => {
      this.proc.once("exit", () => resolve());
      setTimeout(() => {
        this.proc.kill();
        resolve();
      }, 10_000).unref();
    });
  }

  /** One request/response exchange; body null just waits for a frame
   * (startup SPEC). Exposed for make(); not part of the public API. */
  request(body: Buffer | null): Promise<{ op: number; body: Buffer }> {
    if (this.pending) {
      return Promise.reject(new Error("a request is already in flight"));
    }
    if (this.closed || this.exitErr) {
      return Promise.reject(this.exitErr ?? new Error("environment is closed"));
    }
    return new Promise((resolve, reject) => {
      this.pending = { resolve, reject };
      if (body) {
        const frame = Buffer.alloc(4 + body.length);
        frame.writeUInt32LE(body.length, 0);
        body.copy(frame, 4);
        this.proc.stdin.write(frame);
      }
    });
  }

  private onData(chunk: Buffer): void {
    this.buf = this.buf.length === 0 ? chunk : Buffer.concat([this.buf, chunk]);
    while (this.buf.length >= 4) {
      const len = this.buf.readUInt32LE(0);
      if (this.buf.length < 4 + len) {
        return;
      }
      const op = this.buf.readUInt8(4);
      const body = this.buf.subarray(5, 4 + len);
      this.buf = this.buf.subarray(4 + len);
      const pending = this.pending;
      this.pending = null;
      if (!pending) {
        this.fail(new Error(`unsolicited frame 0x${op.toString(16)}`));
        return;
      }
      if (op === RSP_ERROR) {
        pending.reject(
          new EnvServerError(body.readUInt32LE(0), body.subarray(4).toString("utf8")),
        );
      } else {
        pending.resolve({ op, body: Buffer.from(body) });
      }
    }
  }

  private expect(op: number, want: number): void {
    if (op !== want) {
      throw new Error(`protocol desync: opcode 0x${op.toString(16)}`);
    }
  }

  private fail(err: Error): void {
    this.exitErr = err;
    const pending = this.pending;
    this.pending = null;
    pending?.reject(err);
  }
}
