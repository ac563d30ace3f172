// Browser wiring: one interval timer drives the tick loop; keydown
// events latch input; state changes stream to the service in order.

import { EventEmitter } from "./emitter.js";
import { createSession, getSummary, postEvents } from "./net.js";
import { draw } from "./render.js";
import { htmlAudioPlayer, type SoundPlayer } from "./sounds.js";
import { advanceTick, handleDefocus, handleKey, startSession, type ClientGameState, type Key } from "./state.js";

export type GameOptions = Readonly<{
  base: string;
  protocol: string;
  seed: number;
  rho?: number;
  canvas: HTMLCanvasElement;
  sounds?: SoundPlayer;
}>;

export async function runGame(options: GameOptions): Promise<void> {
  const { session_id, config } = await createSession(
    options.base,
    options.protocol,
    options.seed,
    options.rho,
  );
  const ctx = options.canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  const play = options.sounds ?? htmlAudioPlayer(document);
  const emitter = new EventEmitter((events) => postEvents(options.base, session_id, events));

  let result = startSession(config);
  let state: ClientGameState = result.state;
  emitter.enqueue(result.events);
  const startedAt = performance.now();

  const onKey = (event: KeyboardEvent) => {
    if (event.key === "ArrowUp" || event.key === "ArrowDown" || event.key === "ArrowLeft") {
      event.preventDefault();
      const out = handleKey(state, event.key as Key);
      if (out.ignored) console.debug(`[input] ignored ${event.key}`);
      state = out.state;
    }
  };
  const onBlur = () => {
    const out = handleDefocus(state);
    state = out.state;
    emitter.enqueue(out.events);
    void emitter.flush();
  };
  window.addEventListener("keydown", onKey);
  window.addEventListener("blur", onBlur);

  await new Promise<void>((resolve) => {
    const timer = setInterval(() => {
      const wallMs = Math.round(performance.now() - startedAt);
      const out = advanceTick(state, wallMs);
      state = out.state;
      for (const sound of state.sounds) play(sound as Parameters<SoundPlayer>[0]);
      emitter.enqueue(out.events);
      void emitter.flush();
      draw(ctx, state);
      if (state.over || emitter.aborted) {
        clearInterval(timer);
        resolve();
      }
    }, config.tick_ms);
  });

  window.removeEventListener("keydown", onKey);
  window.removeEventListener("blur", onBlur);
  await emitter.flush();
  const summary = await getSummary(options.base, session_id);
  console.info("session summary", summary);
}
