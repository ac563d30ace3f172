"""Bonus-schedule design: prospect-theory lottery weighting, the
interest-accrual (bank) setting, and the bonus-limit (game) setting.

In the interest setting a saver holds a compounding bank balance and can
cash out at the start of any year; scheduled lotteries paid from the
balance reward staying in.  The designer maximizes the saver's expected
total payout (bank at exit plus bonuses already received), with the
saver's behavior predicted by the bias-walk hazard model on a chain
whose defect value at year t is the current balance plus collected
bonuses.  Lottery bonuses enter the saver's chain inflated by the
prospect-theory overweighting factor while the designer pays actuarial
values.

In the bonus-limit setting up to n_b fixed-size bonuses are placed along
the queue and the long-queue reward is reduced by the same total, so no
defection strategy can beat the short-queue rate and full persistence
always earns rho * mu_ss per step.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import minimize

from .hazard import (
    defection_distribution,
    expected_reward_rate,
    hazard_from_thresholds,
)
from .params import AgentParams, Structure, TaskParams
from .solver import GridSpec, NormalForm, default_grid, solve_grid_nf

CPT_DELTA_GAINS = 0.61  # median curvature of the probability weighting for gains


def prospect_weight(alpha: float, delta: float = CPT_DELTA_GAINS) -> float:
    """Subjective overweighting factor w(p)/p for a 1-in-alpha lottery.

    Uses the cumulative-prospect-theory weighting
    w(p) = p^delta / (p^delta + (1-p)^delta)^(1/delta) at p = 1/alpha.
    A certain payout (alpha = 1) is not reweighted.
    """
    if alpha < 1.0:
        raise ValueError(f"odds denominator must be >= 1, got {alpha}")
    if alpha == 1.0:
        return 1.0
    p = 1.0 / alpha
    num = p**delta
    w = num / (num + (1.0 - p) ** delta) ** (1.0 / delta)
    return w / p


@dataclass(frozen=True)
class LotterySpec:
    """Bonus delivery as a 1-in-alpha lottery with subjective weight factor."""

    alpha: float = 1.0
    weight_factor: float | None = None

    def __post_init__(self) -> None:
        if self.alpha < 1.0:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if self.weight_factor is None:
            object.__setattr__(self, "weight_factor", prospect_weight(self.alpha))
        if self.weight_factor < 1.0:
            raise ValueError(f"weight factor must be >= 1, got {self.weight_factor}")


CERTAIN = LotterySpec(alpha=1.0)


class Setting:
    INTEREST_ACCRUAL = "interest_accrual"
    BONUS_LIMIT = "bonus_limit"


@dataclass(frozen=True)
class BonusSchedule:
    """Bonus amounts per step t = 1..tau-1 under one of the two settings."""

    amounts: tuple[float, ...]
    setting: str = Setting.BONUS_LIMIT

    def __post_init__(self) -> None:
        amounts = tuple(float(x) for x in self.amounts)
        if any(x < 0 for x in amounts):
            raise ValueError("bonus amounts must be >= 0")
        if self.setting not in (Setting.INTEREST_ACCRUAL, Setting.BONUS_LIMIT):
            raise ValueError(f"unknown setting {self.setting!r}")
        object.__setattr__(self, "amounts", amounts)

    @property
    def total(self) -> float:
        return float(sum(self.amounts))

    def positions(self) -> tuple[int, ...]:
        """1-indexed steps with a nonzero bonus (unit multiplicity ignored)."""
        return tuple(i + 1 for i, x in enumerate(self.amounts) if x > 0)

    def to_dict(self) -> dict:
        return {"amounts": list(self.amounts), "setting": self.setting}


def schedule_from_placements(
    placements: Sequence[int], unit: float, tau: int, setting: str = Setting.BONUS_LIMIT
) -> BonusSchedule:
    amounts = [0.0] * (tau - 1)
    for pos in placements:
        if not 1 <= pos <= tau - 1:
            raise ValueError(f"placement {pos} outside 1..{tau - 1}")
        amounts[pos - 1] += unit
    return BonusSchedule(amounts=tuple(amounts), setting=setting)


# ---------------------------------------------------------------------------
# Interest-accrual setting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterestScenario:
    """Initial deposit x compounding at rate r over a tau-year horizon."""

    x: float
    r: float
    tau: int
    lottery: LotterySpec = CERTAIN

    def __post_init__(self) -> None:
        if self.x <= 0:
            raise ValueError("initial deposit must be positive")
        if self.r < 0:
            raise ValueError("interest rate must be >= 0")
        if self.tau < 2:
            raise ValueError("horizon must be at least 2 years")


def bank_path(scenario: InterestScenario, amounts: Sequence[float]) -> np.ndarray:
    """Balance at the start of each year 1..tau; bonuses are paid out of
    the balance before compounding."""
    if len(amounts) != scenario.tau - 1:
        raise ValueError(f"schedule needs {scenario.tau - 1} entries, got {len(amounts)}")
    b = np.empty(scenario.tau)
    b[0] = scenario.x
    for t, mu in enumerate(amounts):
        remaining = b[t] - mu
        if remaining < 0:
            raise ValueError(f"schedule infeasible: bonus {mu} exceeds balance {b[t]} in year {t + 1}")
        b[t + 1] = (1.0 + scenario.r) * remaining
    return b


def interest_normal_form(
    agent: AgentParams,
    scenario: InterestScenario,
    amounts: Sequence[float],
    *,
    defect_includes_collected: bool = False,
) -> tuple[NormalForm, np.ndarray]:
    """Reduced-form chain for the saver: one decision per year 1..tau-1.

    Defecting in year t pays the bank balance; persisting through the
    last decision pays the discounted maturity value.  Year tau itself
    is maturity, not a decision.  ``defect_includes_collected=True``
    switches to the variant where exit values also carry the bonuses
    collected so far (subjectively weighted); that variant lets a
    final-year bonus inflate the persist value at no behavioral cost,
    so low-discounting savers are no longer best served by the empty
    schedule.
    """
    banks = bank_path(scenario, amounts)
    f = scenario.lottery.weight_factor
    mu = np.asarray(amounts, dtype=float)
    subj = f * mu
    collected = np.concatenate([[0.0], np.cumsum(subj)])  # before deciding year t
    if not defect_includes_collected:
        collected = np.zeros_like(collected)
    decisions = scenario.tau - 1
    defect = tuple(banks[t] + collected[t] for t in range(decisions))
    rewards = []
    for t in range(decisions - 1):
        effort = 0.0 if mu[t] > 0 else agent.mu_e
        rewards.append(effort + subj[t])
    maturity = banks[-1] + collected[-1]
    terminal = subj[-1] + agent.gamma * maturity
    nf = NormalForm(
        gamma=agent.gamma,
        sigma=agent.sigma,
        sigma1=agent.sigma1,
        defect=defect,
        rewards=tuple(rewards),
        terminal=float(terminal),
    )
    return nf, banks


def expected_accumulation(
    agent: AgentParams,
    scenario: InterestScenario,
    schedule: BonusSchedule | Sequence[float],
    *,
    q: int = 501,
    grid_points: int = 2001,
    defect_includes_collected: bool = False,
) -> float:
    """Designer's objective: expected payout at exit (bank plus actuarial
    bonuses already received), with exit behavior from the hazard model."""
    amounts = schedule.amounts if isinstance(schedule, BonusSchedule) else tuple(schedule)
    nf, banks = interest_normal_form(
        agent, scenario, amounts, defect_includes_collected=defect_includes_collected
    )
    sol = solve_grid_nf(nf, default_grid(nf, points=grid_points))
    curve = hazard_from_thresholds(sol.thresholds, agent.sigma1, agent.sigma, q)
    dist = defection_distribution(curve)
    mu = np.asarray(amounts, dtype=float)
    paid_before = np.concatenate([[0.0], np.cumsum(mu)])
    decisions = scenario.tau - 1
    payouts = banks[:decisions] + paid_before[:decisions]
    maturity = banks[-1] + paid_before[-1]
    return float(np.dot(dist.p, payouts)) + dist.survival * maturity


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _amounts_from_logits(scenario: InterestScenario, p: np.ndarray) -> tuple[float, ...]:
    """Map unconstrained logits to bonus fractions of the rolling balance."""
    frac = _sigmoid(p)
    amounts = []
    b = scenario.x
    for t in range(scenario.tau - 1):
        mu = frac[t] * b
        amounts.append(mu)
        b = (1.0 + scenario.r) * (b - mu)
    return tuple(amounts)


@dataclass(frozen=True)
class InterestOptimum:
    schedule: BonusSchedule
    value: float
    no_bonus_value: float
    restarts: int
    evaluations: int

    @property
    def improvement(self) -> float:
        return self.value / self.no_bonus_value - 1.0

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "value": self.value,
            "no_bonus_value": self.no_bonus_value,
            "improvement": self.improvement,
        }


def optimize_interest_accrual(
    agent: AgentParams,
    scenario: InterestScenario,
    *,
    restarts: int = 10,
    seed: int = 0,
    q: int = 201,
    grid_points: int = 801,
    final_q: int = 1000,
    final_grid_points: int = 3001,
    maxiter: int = 600,
) -> InterestOptimum:
    """Simplex search over logit bonus fractions, multi-start.

    The all-zero schedule is always feasible and is returned whenever no
    candidate strictly improves on it.
    """
    decisions = scenario.tau - 1
    evaluations = 0

    def objective(p: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        amounts = _amounts_from_logits(scenario, p)
        return -expected_accumulation(agent, scenario, amounts, q=q, grid_points=grid_points)

    logit_small = math.log(0.01 / 0.99)
    starts = [np.full(decisions, logit_small)]
    # Front-loaded start: defection mass concentrates at the first years.
    front = np.full(decisions, logit_small)
    front[0] = math.log(0.5 / 0.5) if decisions else 0.0
    if decisions > 1:
        front[1] = math.log(0.1 / 0.9)
    starts.append(front)
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        starts.append(logit_small + rng.normal(0.0, 2.0, size=decisions))

    best_p, best_val = None, math.inf
    for x0 in starts:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"maxiter": maxiter, "xatol": 1e-4, "fatol": 1e-9 * scenario.x, "adaptive": True},
        )
        if res.fun < best_val:
            best_val, best_p = float(res.fun), np.asarray(res.x)

    zero = (0.0,) * decisions
    no_bonus_value = expected_accumulation(
        agent, scenario, zero, q=final_q, grid_points=final_grid_points
    )
    best_amounts = _amounts_from_logits(scenario, best_p)
    best_value = expected_accumulation(
        agent, scenario, best_amounts, q=final_q, grid_points=final_grid_points
    )
    if best_value <= no_bonus_value * (1.0 + 1e-9):
        schedule = BonusSchedule(zero, setting=Setting.INTEREST_ACCRUAL)
        return InterestOptimum(schedule, no_bonus_value, no_bonus_value, restarts, evaluations)
    schedule = BonusSchedule(best_amounts, setting=Setting.INTEREST_ACCRUAL)
    return InterestOptimum(schedule, best_value, no_bonus_value, restarts, evaluations)


# ---------------------------------------------------------------------------
# Bonus-limit setting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BonusLimitScenario:
    """Up to n_b bonuses of fixed size, funded by reducing the final reward."""

    n_b: int
    unit: float
    mu_ss: float
    rho: float

    def __post_init__(self) -> None:
        if self.n_b < 0:
            raise ValueError("n_b must be >= 0")
        if self.unit <= 0 or self.mu_ss <= 0:
            raise ValueError("unit and mu_ss must be positive")

    def ll_reward(self, tau: int, units_used: int) -> float:
        return self.rho * tau * self.mu_ss - self.unit * units_used

    def task_for(self, tau: int, schedule: BonusSchedule) -> TaskParams:
        units = round(schedule.total / self.unit)
        return TaskParams(
            tau=tau,
            mu_ss=self.mu_ss,
            mu_ll=self.ll_reward(tau, units),
            intermediate=schedule.amounts,
            structure=Structure.ITERATED_PROXY,
        )


@dataclass(frozen=True)
class ScheduleValidation:
    ok: bool
    violation_step: int | None = None
    reason: str | None = None


def validate_schedule(
    schedule: BonusSchedule, scenario: BonusLimitScenario, tau: int
) -> ScheduleValidation:
    """No defection strategy may beat the short-queue rate: for every
    step t, collected bonuses plus the remaining short-queue annuity must
    not exceed tau * mu_ss.  Also enforces the unit/count budget."""
    amounts = schedule.amounts
    if len(amounts) != tau - 1:
        return ScheduleValidation(False, None, f"schedule length {len(amounts)} != tau-1")
    units = 0
    for i, x in enumerate(amounts):
        if x > 0:
            k = x / scenario.unit
            if abs(k - round(k)) > 1e-9:
                return ScheduleValidation(
                    False, i + 1, f"amount {x} at step {i + 1} is not a multiple of {scenario.unit}"
                )
            units += round(k)
    if units > scenario.n_b:
        return ScheduleValidation(False, None, f"{units} units exceed the budget of {scenario.n_b}")
    collected = 0.0
    for t in range(1, tau + 1):
        rate = (collected + (tau - t + 1) * scenario.mu_ss) / tau
        if rate > scenario.mu_ss * (1.0 + 1e-12):
            return ScheduleValidation(False, t, f"defection at step {t} would earn rate {rate:.6g}")
        if t <= tau - 1:
            collected += amounts[t - 1]
    return ScheduleValidation(True)


def iter_placements(tau: int, n_b: int) -> Iterator[tuple[int, ...]]:
    """All multisets of at most n_b placements over steps 1..tau-1,
    smallest first, then lexicographically (the tie-break order)."""
    for k in range(n_b + 1):
        yield from itertools.combinations_with_replacement(range(1, tau), k)


def placement_count(tau: int, n_b: int) -> int:
    return sum(math.comb(tau - 2 + k, k) for k in range(n_b + 1))


@dataclass(frozen=True)
class BonusLimitOptimum:
    schedule: BonusSchedule
    placements: tuple[int, ...]
    rate: float
    no_bonus_rate: float
    evaluated: int
    skipped_invalid: int

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "placements": list(self.placements),
            "rate": self.rate,
            "no_bonus_rate": self.no_bonus_rate,
            "evaluated": self.evaluated,
            "skipped_invalid": self.skipped_invalid,
        }


def optimize_bonus_limit(
    agent: AgentParams,
    scenario: BonusLimitScenario,
    tau: int,
    *,
    q: int = 501,
    solver: str = "grid",
    grid: GridSpec | None = None,
) -> BonusLimitOptimum:
    """Brute-force search over all valid placements of <= n_b unit bonuses.

    Ties favor fewer bonuses, then earlier placements (enumeration order).
    """
    if tau < 2:
        raise ValueError("tau must be >= 2")
    best: tuple[float, tuple[int, ...], BonusSchedule] | None = None
    no_bonus_rate = None
    evaluated = 0
    skipped = 0
    for placements in iter_placements(tau, scenario.n_b):
        schedule = schedule_from_placements(placements, scenario.unit, tau)
        check = validate_schedule(schedule, scenario, tau)
        if not check.ok:
            skipped += 1
            continue
        task = scenario.task_for(tau, schedule)
        rate = expected_reward_rate(task, agent, q=q, solver=solver, grid=grid)
        evaluated += 1
        if not placements:
            no_bonus_rate = rate
        if best is None or rate > best[0]:
            best = (rate, placements, schedule)
    if best is None:
        empty = schedule_from_placements((), scenario.unit, tau)
        return BonusLimitOptimum(empty, (), float("nan"), float("nan"), 0, skipped)
    rate, placements, schedule = best
    return BonusLimitOptimum(schedule, placements, rate, no_bonus_rate, evaluated, skipped)
