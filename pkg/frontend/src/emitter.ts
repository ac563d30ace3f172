// Tick-ordered event emission with retry and a bounded offline buffer.
// Events are appended in tick order and flushed in batches; a failed
// flush keeps the batch at the front so the server never sees a gap or
// a duplicate tick index.

import type { GameEvent } from "./types.js";

export type PostEvents = (events: readonly GameEvent[]) => Promise<void>;

export class EventEmitter {
  private buffer: GameEvent[] = [];
  private inFlight = false;
  private lastQueuedTick = -1;
  aborted = false;

  constructor(
    private readonly post: PostEvents,
    private readonly limit = 5000,
    private readonly backoffMs = 500,
    private readonly sleep: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {}

  get pending(): number {
    return this.buffer.length;
  }

  enqueue(events: readonly GameEvent[]): void {
    if (this.aborted) return;
    for (const event of events) {
      if (event.tick <= this.lastQueuedTick) {
        throw new Error(`event tick ${event.tick} out of order`);
      }
      this.lastQueuedTick = event.tick;
      this.buffer.push(event);
    }
    if (this.buffer.length > this.limit) {
      // Offline buffer overflow: the session is unrecoverable.
      this.aborted = true;
      this.buffer = [];
    }
  }

  /** Flush everything queued; retries with backoff until it drains. */
  async flush(maxAttempts = 5): Promise<boolean> {
    if (this.inFlight || this.aborted) return false;
    this.inFlight = true;
    try {
      let attempt = 0;
      while (this.buffer.length > 0) {
        const batch = this.buffer.slice();
        try {
          await this.post(batch);
          this.buffer.splice(0, batch.length);
          attempt = 0;
        } catch {
          attempt += 1;
          if (attempt >= maxAttempts) return false;
          await this.sleep(this.backoffMs * 2 ** (attempt - 1));
        }
      }
      return true;
    } finally {
      this.inFlight = false;
    }
  }
}
