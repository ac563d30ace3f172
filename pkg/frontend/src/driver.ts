// Headless scripted driver: plays a protocol against a live service with
// a deterministic policy, validates its own stream, and reports score
// parity with the server.  Runs under node; `--realtime` drives the loop
// on actual timers so tick jitter can be measured.

import { EventEmitter } from "./emitter.js";
import { createSession, getSummary, postEvents } from "./net.js";
import {
  advanceTick,
  handleKey,
  startSession,
  type ClientGameState,
  type Key,
} from "./state.js";
import { splitmix64 } from "./splitmix.js";
import { validateEvent, type GameEvent } from "./types.js";

export type PolicyName = "long" | "short" | "alternate" | "idle";

/** Desired key for the current tick, or null to stay idle. */
export function policyKey(policy: PolicyName, state: ClientGameState): Key | null {
  if (policy === "idle" && state.episodeIndex >= 2) return null;
  if (state.location.kind === "vestibule") {
    if (policy === "short") return "ArrowUp";
    if (policy === "long" || policy === "idle") return "ArrowDown";
    // alternate: deterministic per-episode mixture of outcomes
    const draw = Number(splitmix64(state.config.tau_sampler.seed ^ 0x5a5a, state.episodeIndex) % 4n);
    return draw === 0 ? "ArrowUp" : "ArrowDown";
  }
  if (policy === "alternate") {
    const draw = Number(splitmix64(state.config.tau_sampler.seed ^ 0x5a5a, state.episodeIndex) % 4n);
    const defectAt = 2 + (draw % 3);
    if (draw >= 2 && state.location.state === Math.min(defectAt, state.tau)) return "ArrowUp";
  }
  return "ArrowLeft";
}

export type DriverResult = {
  sessionId: string;
  clientScore: number;
  serverScore: number;
  scoreMatch: boolean;
  episodes: number;
  eventsSent: number;
  schemaErrors: string[];
  medianJitterMs: number | null;
  idleWarningTick: number | null;
  rejectedReason: string | null;
  summary: Record<string, unknown>;
};

export async function runDriver(options: {
  base: string;
  protocol: string;
  seed: number;
  policy: PolicyName;
  rho?: number;
  maxTicks?: number;
  realtime?: boolean;
}): Promise<DriverResult> {
  const { session_id, config } = await createSession(
    options.base,
    options.protocol,
    options.seed,
    options.rho,
  );
  const emitter = new EventEmitter((events) => postEvents(options.base, session_id, events));
  const schemaErrors: string[] = [];
  const sent: GameEvent[] = [];
  let idleWarningTick: number | null = null;

  const record = (events: readonly GameEvent[]) => {
    for (const event of events) {
      const problem = validateEvent(event);
      if (problem) schemaErrors.push(`${event.kind}@${event.tick}: ${problem}`);
      if (event.kind === "IDLE_WARNING" && idleWarningTick === null) idleWarningTick = event.ms;
      sent.push(event);
    }
    emitter.enqueue(events);
  };

  let result = startSession(config);
  let state = result.state;
  record(result.events);

  const maxTicks = options.maxTicks ?? Math.ceil(
    config.phases.reduce((a, p) => a + p.duration_s * 1000, 0) / config.tick_ms,
  ) + 2;
  const tickWalls: number[] = [];

  if (options.realtime) {
    const startedAt = Date.now();
    await new Promise<void>((resolve) => {
      const timer = setInterval(async () => {
        const wallMs = Date.now() - startedAt;
        tickWalls.push(wallMs);
        const key = policyKey(options.policy, state);
        if (key) state = handleKey(state, key).state;
        const out = advanceTick(state, wallMs);
        state = out.state;
        record(out.events);
        await emitter.flush();
        if (state.over || state.gameTick >= maxTicks) {
          clearInterval(timer);
          resolve();
        }
      }, config.tick_ms);
    });
  } else {
    while (!state.over && state.gameTick < maxTicks) {
      const key = policyKey(options.policy, state);
      if (key) state = handleKey(state, key).state;
      const out = advanceTick(state);
      state = out.state;
      record(out.events);
      if (state.gameTick % 64 === 0) await emitter.flush();
    }
  }
  await emitter.flush();

  const summary = await getSummary(options.base, session_id);
  const serverScore = Number(summary["score"] ?? NaN);
  let medianJitterMs: number | null = null;
  if (tickWalls.length > 2) {
    const deltas = tickWalls.slice(1).map((w, i) => Math.abs(w - tickWalls[i] - config.tick_ms));
    deltas.sort((a, b) => a - b);
    medianJitterMs = deltas[Math.floor(deltas.length / 2)];
  }
  return {
    sessionId: session_id,
    clientScore: state.score,
    serverScore,
    scoreMatch: Math.abs(state.score - serverScore) < 1e-9,
    episodes: state.episodeIndex,
    eventsSent: sent.length,
    schemaErrors,
    medianJitterMs,
    idleWarningTick,
    rejectedReason: state.overReason,
    summary,
  };
}

function parseArgs(argv: string[]): Record<string, string> {
  const out: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    if (argv[i].startsWith("--")) {
      const key = argv[i].slice(2);
      const value = i + 1 < argv.length && !argv[i + 1].startsWith("--") ? argv[++i] : "true";
      out[key] = value;
    }
  }
  return out;
}

const isMain = process.argv[1]?.endsWith("driver.js") || process.argv[1]?.endsWith("driver.ts");
if (isMain) {
  const args = parseArgs(process.argv.slice(2));
  runDriver({
    base: args.base ?? "http://127.0.0.1:8000",
    protocol: args.protocol ?? "EXP1",
    seed: Number(args.seed ?? 1),
    policy: (args.policy ?? "alternate") as PolicyName,
    rho: args.rho ? Number(args.rho) : undefined,
    maxTicks: args["max-ticks"] ? Number(args["max-ticks"]) : undefined,
    realtime: args.realtime === "true",
  })
    .then((result) => {
      console.log(JSON.stringify(result, null, 2));
      process.exit(result.scoreMatch && result.schemaErrors.length === 0 ? 0 : 1);
    })
    .catch((error) => {
      console.error(String(error));
      process.exit(2);
    });
}
