// Plain 2D-canvas view: two queues advancing right to left, the vestibule
// on the right, points displayed left of each queue, bonus markers under
// their cells, point flashes, and the remaining-time countdown.

import type { ClientGameState } from "./state.js";

const CELL = 42;
const GAP = 6;

function queuePoints(state: ClientGameState): { short: number; long: number } {
  const { config, condition, tau } = state;
  const entries = config.schedules[condition]?.[String(tau)] ?? [];
  const scheduled = entries.reduce((acc, e) => acc + e.points, 0);
  return { short: config.mu_ss, long: config.mu_ss * tau * config.rho - scheduled };
}

export function draw(ctx: CanvasRenderingContext2D, state: ClientGameState): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = "#f7f4ec";
  ctx.fillRect(0, 0, width, height);
  ctx.font = "14px sans-serif";
  ctx.fillStyle = "#222";

  const remaining = Math.max(
    0,
    Math.round(
      (state.config.phases.reduce((a, p) => a + p.duration_s * 1000, 0) - state.ms) / 1000,
    ),
  );
  ctx.fillText(`score ${state.score}`, 16, 24);
  ctx.fillText(`time left ${remaining}s`, 16, 44);
  ctx.fillText(`episode ${state.episodeIndex + 1}  (tau=${state.tau}, ${state.condition})`, 16, 64);

  const points = queuePoints(state);
  const shortY = 110;
  const longY = 210;
  const vestX = width - CELL - 24;

  // Short queue: one position next to the service desk.
  ctx.fillText(String(points.short), 16, shortY + CELL / 2 + 5);
  drawCell(ctx, 70, shortY, "#cbd5ff");
  // Long queue: tau positions, front (chain state tau) at the left.
  ctx.fillText(String(points.long), 16, longY + CELL / 2 + 5);
  const entries = state.config.schedules[state.condition]?.[String(state.tau)] ?? [];
  const bonusAt = new Map<number, number>();
  for (const e of entries) bonusAt.set(e.position, (bonusAt.get(e.position) ?? 0) + e.points);
  for (let chain = state.tau; chain >= 2; chain--) {
    const x = 70 + (state.tau - chain) * (CELL + GAP);
    drawCell(ctx, x, longY, "#d8ecd0");
    const bonus = bonusAt.get(chain - 1); // awarded when advancing out of chain-1
    if (bonus) {
      ctx.fillStyle = "#9a6b00";
      ctx.fillText(`+${bonus}`, x + 6, longY + CELL + 16);
      ctx.fillStyle = "#222";
    }
  }

  // Vestibule and the player icon.
  drawCell(ctx, vestX, (shortY + longY) / 2, "#eee0c0");
  ctx.fillStyle = "#c0392b";
  if (state.location.kind === "vestibule") {
    drawStickFigure(ctx, vestX + CELL / 2, (shortY + longY) / 2 + CELL / 2);
  } else {
    const x = 70 + (state.tau - state.location.state) * (CELL + GAP);
    drawStickFigure(ctx, x + CELL / 2, longY + CELL / 2);
  }
  ctx.fillStyle = "#222";

  let flashY = 84;
  for (const flash of state.flashes) {
    ctx.fillStyle = "#b8860b";
    ctx.fillText(`+${flash.points}`, width / 2, flashY);
    flashY += 18;
  }
  ctx.fillStyle = "#222";
  if (state.idleMs >= state.config.idle_warn_s * 1000) {
    ctx.fillStyle = "#a00";
    ctx.fillText("keep playing or the session will be rejected!", 16, height - 16);
    ctx.fillStyle = "#222";
  }
  if (state.over) {
    ctx.fillStyle = "#a00";
    ctx.fillText(`session over (${state.overReason})`, width / 2 - 60, height / 2);
  }
}

function drawCell(ctx: CanvasRenderingContext2D, x: number, y: number, fill: string): void {
  ctx.fillStyle = fill;
  ctx.fillRect(x, y, CELL, CELL);
  ctx.strokeStyle = "#555";
  ctx.strokeRect(x, y, CELL, CELL);
}

function drawStickFigure(ctx: CanvasRenderingContext2D, cx: number, cy: number): void {
  ctx.beginPath();
  ctx.arc(cx, cy - 10, 5, 0, Math.PI * 2);
  ctx.moveTo(cx, cy - 5);
  ctx.lineTo(cx, cy + 6);
  ctx.moveTo(cx - 6, cy);
  ctx.lineTo(cx + 6, cy);
  ctx.moveTo(cx, cy + 6);
  ctx.lineTo(cx - 5, cy + 14);
  ctx.moveTo(cx, cy + 6);
  ctx.lineTo(cx + 5, cy + 14);
  ctx.strokeStyle = ctx.fillStyle as string;
  ctx.lineWidth = 2;
  ctx.stroke();
}
