"""Game event log: wire schema, deterministic samplers, and a synthetic
player that turns solved thresholds into realistic session logs.

One JSONL line per event with fixed field order
``{"v": 1, "session": ..., "tick": ..., "ms": ..., "kind": ..., "payload": {...}}``
where ``tick`` is a strictly increasing per-session sequence number and
``ms`` is game-clock time (several events may share an ms when they land
on the same game tick).  Payload keys are sorted, so identical inputs
serialize byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .params import AgentParams

SCHEMA_VERSION = 1

EPISODE_START = "EPISODE_START"
QUEUE_SELECT = "QUEUE_SELECT"
ADVANCE_KEY = "ADVANCE_KEY"
DEFECT = "DEFECT"
SERVED = "SERVED"
BONUS_AWARDED = "BONUS_AWARDED"
IDLE_WARNING = "IDLE_WARNING"
DEFOCUS = "DEFOCUS"
REJECTED = "REJECTED"

EVENT_KINDS = (
    EPISODE_START,
    QUEUE_SELECT,
    ADVANCE_KEY,
    DEFECT,
    SERVED,
    BONUS_AWARDED,
    IDLE_WARNING,
    DEFOCUS,
    REJECTED,
)


@dataclass(frozen=True)
class GameEvent:
    session: str
    tick: int
    ms: int
    kind: str
    payload: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.tick < 0 or self.ms < 0:
            raise ValueError("tick and ms must be non-negative")


def event_to_line(event: GameEvent) -> str:
    doc = {
        "v": SCHEMA_VERSION,
        "session": event.session,
        "tick": event.tick,
        "ms": event.ms,
        "kind": event.kind,
        "payload": dict(sorted(event.payload.items())),
    }
    return json.dumps(doc, separators=(",", ":"))


def parse_line(line: str) -> GameEvent:
    doc = json.loads(line)
    if doc.get("v") != SCHEMA_VERSION:
        raise ValueError(f"unsupported log schema version {doc.get('v')!r}")
    return GameEvent(
        session=doc["session"],
        tick=int(doc["tick"]),
        ms=int(doc["ms"]),
        kind=doc["kind"],
        payload=doc.get("payload", {}),
    )


def write_jsonl(events: Iterable[GameEvent], target: str | Path | IO[str]) -> int:
    own = isinstance(target, (str, Path))
    fh = open(target, "w", encoding="utf-8") if own else target
    count = 0
    try:
        for event in events:
            fh.write(event_to_line(event))
            fh.write("\n")
            count += 1
    finally:
        if own:
            fh.close()
    return count


def read_jsonl(source: str | Path | IO[str]) -> Iterator[GameEvent]:
    own = isinstance(source, (str, Path))
    fh = open(source, "r", encoding="utf-8") if own else source
    try:
        for line in fh:
            line = line.strip()
            if line:
                yield parse_line(line)
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# Deterministic cross-language samplers
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(seed: int, index: int) -> int:
    """Value of the SplitMix64 stream for ``seed`` at position ``index``.

    Mirrored by the browser client, so both sides draw identical queue
    lengths from the session seed.
    """
    z = (seed + (index + 1) * _GAMMA) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def sample_tau(lengths: Sequence[int], seed: int, episode_index: int) -> int:
    """Uniform queue-length draw for one episode, stable across languages."""
    return lengths[splitmix64(seed, episode_index) % len(lengths)]


def condition_rotation(conditions: Sequence[str], seed: int) -> tuple[str, ...]:
    """Counterbalanced starting order: rotate by a seed-derived offset."""
    k = len(conditions)
    if k == 0:
        return ()
    offset = splitmix64(seed ^ 0x5EEDC0DE, 0) % k
    return tuple(conditions[(offset + i) % k] for i in range(k))


# ---------------------------------------------------------------------------
# Synthetic player
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeOutcome:
    """Ground truth for one synthetic episode, mirroring the trim rule."""

    index: int
    tau: int
    condition: str
    phase: int
    defect_step: int | None  # 1..tau, None means served at the front
    start_ms: int
    end_ms: int
    points: float
    bonuses: float
    kept: bool


def episode_within_window(start_ms: int, end_ms: int, phase_start_ms: int, phase_end_ms: int, trim_ms: int = 30_000) -> bool:
    """Shared trim rule: an episode counts only when it lies entirely
    inside the phase with the first and last trim_ms seconds removed."""
    return start_ms >= phase_start_ms + trim_ms and end_ms <= phase_end_ms - trim_ms


def synthesize_session(
    protocol,
    agent: AgentParams,
    session: str,
    seed: int,
    *,
    rho: float | None = None,
    q_solver: str = "grid",
    grid_points: int = 2001,
    threshold_cache: dict | None = None,
) -> tuple[list[GameEvent], list[EpisodeOutcome]]:
    """Play a full session of the protocol with a threshold-following agent.

    Returns the event log plus per-episode ground truth whose ``kept``
    flag applies the same head/tail trim the analysis uses, so log-derived
    hazard counts must match the outcomes exactly.
    """
    from .solver import default_grid, normal_form, solve_nf

    rho = float(rho if rho is not None else protocol.rho_arms[0])
    if rho not in protocol.rho_arms:
        raise ValueError(f"rho {rho} not offered by protocol {protocol.id}")
    cache = threshold_cache if threshold_cache is not None else {}

    def thresholds_for(condition: str, tau: int) -> np.ndarray:
        key = (condition, tau, rho, agent)
        if key not in cache:
            task = protocol.task_for(condition, tau, rho)
            nf = normal_form(task, agent)
            sol = solve_nf(nf, solver=q_solver, grid=default_grid(nf, points=grid_points))
            cache[key] = sol.thresholds
        return cache[key]

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB1A5)))
    k = protocol.keystrokes_per_advance
    tick_ms = protocol.tick_ms
    bounds = protocol.phase_bounds_ms()
    session_end_ms = bounds[-1][1]

    events: list[GameEvent] = []
    outcomes: list[EpisodeOutcome] = []
    seq = 0
    game_tick = 0
    episode_index = 0
    rotations = [condition_rotation(phase.conditions, seed + 17 * i) for i, phase in enumerate(protocol.phases)]
    per_phase_count = [0] * len(protocol.phases)

    def emit(kind: str, payload: dict) -> None:
        nonlocal seq
        events.append(
            GameEvent(session=session, tick=seq, ms=game_tick * tick_ms, kind=kind, payload=payload)
        )
        seq += 1

    while game_tick * tick_ms < session_end_ms:
        start_ms = game_tick * tick_ms
        phase = next(
            (i for i, (lo, hi) in enumerate(bounds) if lo <= start_ms < hi), len(bounds) - 1
        )
        conditions = rotations[phase]
        condition = conditions[per_phase_count[phase] % len(conditions)] if conditions else "none"
        per_phase_count[phase] += 1
        tau = sample_tau(protocol.queue_lengths, seed, episode_index)
        thresholds = thresholds_for(condition, tau)
        amounts = protocol.schedule_amounts(condition, tau)

        w = agent.sigma1 * rng.standard_normal()
        defect_step = None
        for t in range(1, tau + 1):
            if w < thresholds[t - 1]:
                defect_step = t
                break
            if t < tau:
                w += agent.sigma * rng.standard_normal()

        emit(
            EPISODE_START,
            {"tau": tau, "condition": condition, "rho": rho, "episode": episode_index, "phase": phase},
        )
        bonuses = 0.0
        if defect_step == 1:
            game_tick += k
            emit(QUEUE_SELECT, {"queue": "short", "tau": tau})
            emit(SERVED, {"points": 100.0, "tau": tau, "position": 1, "queue": "short"})
            points = 100.0
        else:
            game_tick += k
            emit(QUEUE_SELECT, {"queue": "long", "tau": tau})
            if amounts[0] > 0:
                bonuses += amounts[0]
                emit(BONUS_AWARDED, {"position": 1, "points": amounts[0], "tau": tau})
            final_state = defect_step if defect_step is not None else tau
            state = 2
            while state < final_state:
                for stroke in range(1, k + 1):
                    emit(ADVANCE_KEY, {"position": state, "stroke": stroke, "tau": tau})
                    game_tick += 1
                if amounts[state - 1] > 0:
                    bonuses += amounts[state - 1]
                    emit(BONUS_AWARDED, {"position": state, "points": amounts[state - 1], "tau": tau})
                state += 1
            if defect_step is None:
                for stroke in range(1, k + 1):
                    emit(ADVANCE_KEY, {"position": tau, "stroke": stroke, "tau": tau})
                    game_tick += 1
                points = 100.0 * tau * rho - protocol.schedule_total(condition, tau)
                emit(SERVED, {"points": points, "tau": tau, "position": tau, "queue": "long"})
            else:
                game_tick += 1
                emit(DEFECT, {"position": defect_step, "tau": tau})
                points = 100.0
                emit(SERVED, {"points": points, "tau": tau, "position": defect_step, "queue": "short"})
        end_ms = game_tick * tick_ms
        phase_lo, phase_hi = bounds[phase]
        outcomes.append(
            EpisodeOutcome(
                index=episode_index,
                tau=tau,
                condition=condition,
                phase=phase,
                defect_step=defect_step,
                start_ms=start_ms,
                end_ms=end_ms,
                points=points,
                bonuses=bonuses,
                kept=episode_within_window(start_ms, end_ms, phase_lo, phase_hi),
            )
        )
        episode_index += 1
        game_tick += 1  # back to the vestibule

    return events, outcomes
