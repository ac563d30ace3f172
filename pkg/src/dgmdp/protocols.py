"""Experiment protocol registry for the queue-waiting game.

Each protocol fixes the game clock, the keystroke rule, the offered
queue lengths, the reward-rate ratio arms, the phase plan, and any bonus
schedules per condition and queue length.  Bonus totals are always
subtracted from the long-queue reward so a full traversal earns
100 * tau * rho points no matter the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .params import Structure, TaskParams

ScheduleMap = Mapping[str, Mapping[int, tuple[tuple[int, float], ...]]]


@dataclass(frozen=True)
class Phase:
    duration_s: int
    conditions: tuple[str, ...]


@dataclass(frozen=True)
class ExperimentProtocol:
    id: str
    rho_arms: tuple[float, ...]
    tick_ms: int
    queue_lengths: tuple[int, ...]
    keystrokes_per_advance: int
    phases: tuple[Phase, ...]
    schedules: ScheduleMap = field(default_factory=dict)
    mu_ss: float = 100.0

    def __post_init__(self) -> None:
        if self.tick_ms not in (1000, 2000):
            raise ValueError("tick must be 1000 or 2000 ms")
        if self.keystrokes_per_advance not in (1, 2):
            raise ValueError("keystrokes per advance must be 1 or 2")
        if not self.queue_lengths or any(t < 2 for t in self.queue_lengths):
            raise ValueError("queue lengths must all be >= 2")
        for condition, by_tau in self.schedules.items():
            for tau, entries in by_tau.items():
                for pos, pts in entries:
                    if not 1 <= pos <= tau - 1:
                        raise ValueError(
                            f"{self.id}/{condition}: bonus position {pos} outside 1..{tau - 1}"
                        )
                    if pts <= 0:
                        raise ValueError("bonus points must be positive")

    @property
    def conditions(self) -> tuple[str, ...]:
        seen: list[str] = []
        for phase in self.phases:
            for c in phase.conditions:
                if c not in seen:
                    seen.append(c)
        return tuple(seen)

    def schedule_entries(self, condition: str, tau: int) -> tuple[tuple[int, float], ...]:
        return tuple(self.schedules.get(condition, {}).get(tau, ()))

    def schedule_amounts(self, condition: str, tau: int) -> tuple[float, ...]:
        amounts = [0.0] * (tau - 1)
        for pos, pts in self.schedule_entries(condition, tau):
            amounts[pos - 1] += pts
        return tuple(amounts)

    def schedule_total(self, condition: str, tau: int) -> float:
        return sum(pts for _, pts in self.schedule_entries(condition, tau))

    def ll_reward(self, condition: str, tau: int, rho: float) -> float:
        return self.mu_ss * tau * rho - self.schedule_total(condition, tau)

    def task_for(self, condition: str, tau: int, rho: float) -> TaskParams:
        if tau not in self.queue_lengths:
            raise ValueError(f"tau {tau} not offered by {self.id}")
        return TaskParams(
            tau=tau,
            mu_ss=self.mu_ss,
            mu_ll=self.ll_reward(condition, tau, rho),
            intermediate=self.schedule_amounts(condition, tau),
            structure=Structure.ITERATED_PROXY,
        )

    def phase_bounds_ms(self) -> tuple[tuple[int, int], ...]:
        bounds = []
        start = 0
        for phase in self.phases:
            end = start + phase.duration_s * 1000
            bounds.append((start, end))
            start = end
        return tuple(bounds)

    def total_duration_s(self) -> int:
        return sum(p.duration_s for p in self.phases)


_SIX_LENGTHS = (4, 6, 8, 10, 12, 14)
_THREE_LENGTHS = (6, 10, 14)


def _four_unit_schedule(positions: tuple[int, ...]) -> tuple[tuple[int, float], ...]:
    return tuple((p, 50.0) for p in positions)


# Early/late placements: four 50-point bonuses on distinct steps in the
# first or last half of the queue, at the extremes the rate-cap allows.
_EARLY = {tau: _four_unit_schedule((1, 2, 3, 4)) for tau in _THREE_LENGTHS}
_LATE = {tau: _four_unit_schedule(tuple(range(tau - 4, tau))) for tau in _THREE_LENGTHS}

# A small scattering of 50- and 75-point bonuses along the queue.
_MIXED = {
    tau: ((max(1, tau // 3), 50.0), (max(2, (2 * tau) // 3), 75.0)) for tau in _SIX_LENGTHS
}

PROTOCOLS: dict[str, ExperimentProtocol] = {
    "EXP1": ExperimentProtocol(
        id="EXP1",
        rho_arms=(1.25, 1.50),
        tick_ms=2000,
        queue_lengths=_SIX_LENGTHS,
        keystrokes_per_advance=1,
        phases=(Phase(300, ("none",)),),
    ),
    "EXP2": ExperimentProtocol(
        id="EXP2",
        rho_arms=(1.50,),
        tick_ms=1000,
        queue_lengths=_SIX_LENGTHS,
        keystrokes_per_advance=2,
        phases=(Phase(300, ("none",)),),
    ),
    "EXP3": ExperimentProtocol(
        id="EXP3",
        rho_arms=(1.50,),
        tick_ms=1000,
        queue_lengths=_SIX_LENGTHS,
        keystrokes_per_advance=2,
        phases=(Phase(300, ("bonus",)),),
        schedules={"bonus": _MIXED},
    ),
    "EXP4": ExperimentProtocol(
        id="EXP4",
        rho_arms=(1.50,),
        tick_ms=1000,
        queue_lengths=_THREE_LENGTHS,
        keystrokes_per_advance=2,
        phases=(Phase(300, ("none", "early", "late")),),
        schedules={"early": _EARLY, "late": _LATE},
    ),
    "EXP5": ExperimentProtocol(
        id="EXP5",
        rho_arms=(1.50,),
        tick_ms=1000,
        queue_lengths=_THREE_LENGTHS,
        keystrokes_per_advance=2,
        phases=(Phase(240, ("none",)), Phase(420, ("early", "late"))),
        schedules={"early": _EARLY, "late": _LATE},
    ),
}


def get_protocol(protocol_id: str) -> ExperimentProtocol:
    try:
        return PROTOCOLS[protocol_id.upper()]
    except KeyError:
        raise ValueError(
            f"unknown protocol {protocol_id!r}; registered: {', '.join(sorted(PROTOCOLS))}"
        ) from None
