// HTTP client for the session service.

import type { GameEvent, SessionConfig } from "./types.js";

export type CreateSessionResponse = Readonly<{ session_id: string; config: SessionConfig }>;

async function asJson(response: Response): Promise<unknown> {
  const body = await response.json();
  if (!response.ok) {
    const message = (body as { error?: { message?: string } })?.error?.message ?? response.statusText;
    throw new Error(`service error ${response.status}: ${message}`);
  }
  return body;
}

export async function createSession(
  base: string,
  protocol: string,
  seed: number,
  rho?: number,
): Promise<CreateSessionResponse> {
  const response = await fetch(`${base}/sessions`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(rho === undefined ? { protocol, seed } : { protocol, seed, rho }),
  });
  return (await asJson(response)) as CreateSessionResponse;
}

export async function postEvents(base: string, sessionId: string, events: readonly GameEvent[]): Promise<void> {
  const response = await fetch(`${base}/sessions/${sessionId}/events`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(events.map(({ tick, ms, kind, payload }) => ({ tick, ms, kind, payload }))),
  });
  await asJson(response);
}

export async function getSummary(base: string, sessionId: string): Promise<Record<string, unknown>> {
  const response = await fetch(`${base}/sessions/${sessionId}/summary`);
  return (await asJson(response)) as Record<string, unknown>;
}
