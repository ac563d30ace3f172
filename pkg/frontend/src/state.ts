// Pure game state machine.  Keys are latched and applied on the next
// game-clock tick; every state change that the service cares about is
// returned as a wire event, so scripted play and browser play share one
// code path and replay to identical scores.

import { sampleTau } from "./splitmix.js";
import type { GameEvent, SessionConfig } from "./types.js";

export type Key = "ArrowUp" | "ArrowDown" | "ArrowLeft";

export type Location =
  | { kind: "vestibule" }
  | { kind: "long"; state: number }; // decision-chain state, 2..tau

export type Flash = Readonly<{ points: number; ttl: number }>;

export type ClientGameState = Readonly<{
  config: SessionConfig;
  gameTick: number;
  seq: number; // wire `tick`: strictly increasing event sequence
  ms: number;
  episodeIndex: number;
  phaseEpisodes: readonly number[];
  phase: number;
  tau: number;
  condition: string;
  location: Location;
  strokes: number; // keystrokes toward the pending action
  bonusCollected: number;
  score: number;
  latched: Key | null;
  pendingStart: boolean;
  idleMs: number;
  warned: boolean;
  defocusCount: number;
  over: boolean;
  overReason: string | null;
  flashes: readonly Flash[];
  sounds: readonly string[];
}>;

export type TickResult = Readonly<{ state: ClientGameState; events: readonly GameEvent[] }>;

function totalMs(config: SessionConfig): number {
  return config.phases.reduce((acc, p) => acc + p.duration_s * 1000, 0);
}

function phaseAt(config: SessionConfig, ms: number): number {
  let start = 0;
  for (let i = 0; i < config.phases.length; i++) {
    const end = start + config.phases[i].duration_s * 1000;
    if (ms < end) return i;
    start = end;
  }
  return config.phases.length - 1;
}

function scheduleFor(config: SessionConfig, condition: string, tau: number): Map<number, number> {
  const out = new Map<number, number>();
  const entries = config.schedules[condition]?.[String(tau)] ?? [];
  for (const { position, points } of entries) out.set(position, (out.get(position) ?? 0) + points);
  return out;
}

function scheduleTotal(config: SessionConfig, condition: string, tau: number): number {
  let total = 0;
  for (const points of scheduleFor(config, condition, tau).values()) total += points;
  return total;
}

export function startSession(config: SessionConfig): TickResult {
  const base: ClientGameState = {
    config,
    gameTick: 0,
    seq: 0,
    ms: 0,
    episodeIndex: 0,
    phaseEpisodes: config.phases.map(() => 0),
    phase: 0,
    tau: 0,
    condition: "none",
    location: { kind: "vestibule" },
    strokes: 0,
    bonusCollected: 0,
    score: 0,
    latched: null,
    pendingStart: true,
    idleMs: 0,
    warned: false,
    defocusCount: 0,
    over: false,
    overReason: null,
    flashes: [],
    sounds: [],
  };
  return beginEpisode(base, 0);
}

function emit(
  state: ClientGameState,
  kind: GameEvent["kind"],
  payload: Record<string, unknown>,
  ms?: number,
): [ClientGameState, GameEvent] {
  const event: GameEvent = {
    session: state.config.session_id,
    tick: state.seq,
    ms: ms ?? state.ms,
    kind,
    payload,
  };
  return [{ ...state, seq: state.seq + 1 }, event];
}

function beginEpisode(state: ClientGameState, ms: number): TickResult {
  const phase = phaseAt(state.config, ms);
  const rotation = state.config.phases[phase].conditions;
  const count = state.phaseEpisodes[phase];
  const condition = rotation.length ? rotation[count % rotation.length] : "none";
  const tau = sampleTau(state.config.queue_lengths, state.config.tau_sampler.seed, state.episodeIndex);
  const phaseEpisodes = state.phaseEpisodes.map((c, i) => (i === phase ? c + 1 : c));
  let next: ClientGameState = {
    ...state,
    phase,
    condition,
    tau,
    phaseEpisodes,
    location: { kind: "vestibule" },
    strokes: 0,
    bonusCollected: 0,
    pendingStart: false,
  };
  let event: GameEvent;
  [next, event] = emit(next, "EPISODE_START", {
    tau,
    condition,
    rho: state.config.rho,
    episode: state.episodeIndex,
    phase,
  }, ms);
  return { state: next, events: [event] };
}

/** Latch a key press; it takes effect on the next tick.  Returns whether
 * the key is meaningful in the current location (ignored keys leave the
 * state unchanged apart from the idle clock, but are still reported so
 * the caller can log them). */
export function handleKey(state: ClientGameState, key: Key): { state: ClientGameState; ignored: boolean } {
  if (state.over) return { state, ignored: true };
  const inVestibule = state.location.kind === "vestibule";
  const meaningful = inVestibule
    ? key === "ArrowUp" || key === "ArrowDown"
    : key === "ArrowLeft" || key === "ArrowUp";
  if (!meaningful) return { state, ignored: true };
  return { state: { ...state, latched: key }, ignored: false };
}

export function handleDefocus(state: ClientGameState): TickResult {
  if (state.over) return { state, events: [] };
  let next = { ...state, defocusCount: state.defocusCount + 1 };
  let event: GameEvent;
  [next, event] = emit(next, "DEFOCUS", { count: next.defocusCount });
  const events = [event];
  if (next.defocusCount >= 2) {
    let rejected: GameEvent;
    [next, rejected] = emit(next, "REJECTED", { reason: "defocus" });
    next = { ...next, over: true, overReason: "defocus" };
    events.push(rejected);
  }
  return { state: next, events };
}

/** Advance the game clock one tick, applying the latched key.
 * `wallMs` lets a real-time loop stamp observed time; scripted play uses
 * the exact game clock. */
export function advanceTick(state: ClientGameState, wallMs?: number): TickResult {
  if (state.over) return { state, events: [] };
  const gameTick = state.gameTick + 1;
  const ms = wallMs ?? gameTick * state.config.tick_ms;
  let next: ClientGameState = {
    ...state,
    gameTick,
    ms,
    flashes: state.flashes
      .filter((f) => f.ttl > 1)
      .map((f) => ({ points: f.points, ttl: f.ttl - 1 })),
    sounds: [],
  };
  const events: GameEvent[] = [];

  if (ms >= totalMs(next.config)) {
    return { state: { ...next, over: true, overReason: "time" }, events };
  }

  if (next.pendingStart) {
    const started = beginEpisode(next, ms);
    next = started.state;
    events.push(...started.events);
  }

  const key = next.latched;
  next = { ...next, latched: null };

  if (key === null) {
    const idleMs = next.idleMs + next.config.tick_ms;
    next = { ...next, idleMs };
    if (idleMs >= next.config.idle_reject_s * 1000) {
      let event: GameEvent;
      [next, event] = emit(next, "REJECTED", { reason: "idle", gap_ms: idleMs });
      events.push(event);
      return { state: { ...next, over: true, overReason: "idle" }, events };
    }
    if (idleMs >= next.config.idle_warn_s * 1000 && !next.warned) {
      let event: GameEvent;
      [next, event] = emit(next, "IDLE_WARNING", { gap_ms: idleMs });
      events.push(event);
      next = { ...next, warned: true };
    }
    return { state: next, events };
  }
  next = { ...next, idleMs: 0, warned: false };

  const k = next.config.keystrokes_per_advance;
  const schedule = scheduleFor(next.config, next.condition, next.tau);

  const award = (position: number) => {
    const points = schedule.get(position);
    if (!points) return;
    let event: GameEvent;
    [next, event] = emit(next, "BONUS_AWARDED", { position, points, tau: next.tau });
    events.push(event);
    next = {
      ...next,
      score: next.score + points,
      bonusCollected: next.bonusCollected + points,
      flashes: [...next.flashes, { points, ttl: 2 }],
      sounds: [...next.sounds, points >= 75 ? "bonus-75" : "bonus-50"],
    };
  };

  const serve = (points: number, position: number, queue: "short" | "long") => {
    let event: GameEvent;
    [next, event] = emit(next, "SERVED", { points, tau: next.tau, position, queue });
    events.push(event);
    next = {
      ...next,
      score: next.score + points,
      flashes: [...next.flashes, { points, ttl: 2 }],
      sounds: [...next.sounds, "register"],
      location: { kind: "vestibule" },
      strokes: 0,
      episodeIndex: next.episodeIndex + 1,
      pendingStart: true,
    };
  };

  if (next.location.kind === "vestibule") {
    const strokes = next.strokes + 1;
    if (strokes < k) {
      next = { ...next, strokes };
      return { state: next, events };
    }
    next = { ...next, strokes: 0 };
    if (key === "ArrowUp") {
      let event: GameEvent;
      [next, event] = emit(next, "QUEUE_SELECT", { queue: "short", tau: next.tau });
      events.push(event);
      serve(next.config.mu_ss, 1, "short");
    } else if (key === "ArrowDown") {
      let event: GameEvent;
      [next, event] = emit(next, "QUEUE_SELECT", { queue: "long", tau: next.tau });
      events.push(event);
      next = { ...next, location: { kind: "long", state: 2 } };
      award(1);
    }
    return { state: next, events };
  }

  // In the long queue.
  const chainState = next.location.state;
  if (key === "ArrowUp") {
    let event: GameEvent;
    [next, event] = emit(next, "DEFECT", { position: chainState, tau: next.tau });
    events.push(event);
    serve(next.config.mu_ss, chainState, "short");
    return { state: next, events };
  }
  // ArrowLeft: one advance keystroke.
  const strokes = next.strokes + 1;
  let event: GameEvent;
  [next, event] = emit(next, "ADVANCE_KEY", { position: chainState, stroke: strokes, tau: next.tau });
  events.push(event);
  if (strokes < k) {
    next = { ...next, strokes };
    return { state: next, events };
  }
  next = { ...next, strokes: 0 };
  if (chainState === next.tau) {
    const points = next.config.mu_ss * next.tau * next.config.rho - scheduleTotal(next.config, next.condition, next.tau);
    serve(points, next.tau, "long");
  } else {
    award(chainState);
    next = { ...next, location: { kind: "long", state: chainState + 1 } };
  }
  return { state: next, events };
}
