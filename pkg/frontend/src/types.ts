// Wire types shared with the session service (JSONL schema v1).

export const SCHEMA_VERSION = 1;

export type EventKind =
  | "EPISODE_START"
  | "QUEUE_SELECT"
  | "ADVANCE_KEY"
  | "DEFECT"
  | "SERVED"
  | "BONUS_AWARDED"
  | "IDLE_WARNING"
  | "DEFOCUS"
  | "REJECTED";

export const EVENT_KINDS: readonly EventKind[] = [
  "EPISODE_START",
  "QUEUE_SELECT",
  "ADVANCE_KEY",
  "DEFECT",
  "SERVED",
  "BONUS_AWARDED",
  "IDLE_WARNING",
  "DEFOCUS",
  "REJECTED",
];

export type GameEvent = Readonly<{
  session: string;
  tick: number; // strictly increasing per-session sequence number
  ms: number; // session clock, non-decreasing
  kind: EventKind;
  payload: Record<string, unknown>;
}>;

export type PhaseConfig = Readonly<{
  duration_s: number;
  conditions: readonly string[];
}>;

export type BonusEntry = Readonly<{ position: number; points: number }>;

export type SessionConfig = Readonly<{
  schema_version: number;
  session_id: string;
  protocol: string;
  rho: number;
  tick_ms: number;
  keystrokes_per_advance: number;
  queue_lengths: readonly number[];
  mu_ss: number;
  phases: readonly PhaseConfig[];
  schedules: Readonly<Record<string, Record<string, readonly BonusEntry[]>>>;
  tau_sampler: Readonly<{ algo: string; seed: number }>;
  idle_warn_s: number;
  idle_reject_s: number;
}>;

export function validateEvent(event: GameEvent): string | null {
  if (!EVENT_KINDS.includes(event.kind)) return `unknown kind ${event.kind}`;
  if (!Number.isInteger(event.tick) || event.tick < 0) return "tick must be a non-negative integer";
  if (!Number.isFinite(event.ms) || event.ms < 0) return "ms must be non-negative";
  if (typeof event.session !== "string" || !event.session) return "missing session id";
  return null;
}

/** One JSONL line in the service's byte-stable field order. */
export function eventToLine(event: GameEvent): string {
  const payload: Record<string, unknown> = {};
  for (const key of Object.keys(event.payload).sort()) payload[key] = event.payload[key];
  return JSON.stringify({
    v: SCHEMA_VERSION,
    session: event.session,
    tick: event.tick,
    ms: event.ms,
    kind: event.kind,
    payload,
  });
}
