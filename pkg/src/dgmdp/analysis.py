"""Experiment pipelines over event logs: population fits, effort refits,
frozen-model checks, group bonus customization, and individual bonus
prediction."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import events as ev
from .fitting import (
    EmpiricalHazard,
    FitTarget,
    episodes_from_events,
    fit_agent,
    hazard_sse,
    median_split,
    predict_and_correlate,
    predicted_session_rate,
    reward_rates,
    targets_from_hazard,
    trim_episodes,
)
from .incentives import BonusLimitScenario, optimize_bonus_limit
from .params import AgentParams
from .protocols import ExperimentProtocol, get_protocol


def _as_episodes(events_or_episodes: Iterable, protocol: ExperimentProtocol):
    items = list(events_or_episodes)
    if items and isinstance(items[0], ev.GameEvent):
        items = episodes_from_events(items)
    return trim_episodes(items, protocol)


def _curve_dict(emp: EmpiricalHazard) -> dict:
    return {
        str(tau): [None if not np.isfinite(x) else float(x) for x in emp.population_hazard(tau)]
        for tau in emp.taus()
    }


def analyze_exp1(
    events_or_episodes: Iterable,
    init: AgentParams | None = None,
    *,
    seed: int = 0,
    restarts: int = 5,
    q: int = 101,
    grid_points: int = 1201,
) -> dict:
    """Population fit of all four parameters across both reward-rate arms."""
    protocol = get_protocol("EXP1")
    episodes = _as_episodes(events_or_episodes, protocol)
    init = init or AgentParams(gamma=0.9, sigma1=60.0, sigma=30.0, mu_e=-30.0)
    targets: list[FitTarget] = []
    curves: dict[str, dict] = {}
    for rho in protocol.rho_arms:
        subset = [e for e in episodes if e.rho == rho]
        if not subset:
            continue
        emp = EmpiricalHazard.from_episodes(subset)
        curves[str(rho)] = _curve_dict(emp)
        targets.extend(targets_from_hazard(emp, protocol, rho, "none"))
    fit = fit_agent(targets, init, restarts=restarts, seed=seed, q=q, grid_points=grid_points)
    return {"experiment": "EXP1", "curves": curves, "fit": fit.to_dict()}


def analyze_exp2(
    events_or_episodes: Iterable,
    baseline: AgentParams,
    *,
    seed: int = 0,
    restarts: int = 5,
    q: int = 101,
    grid_points: int = 1201,
) -> dict:
    """Refit of the effort cost only, other parameters frozen at baseline."""
    protocol = get_protocol("EXP2")
    episodes = _as_episodes(events_or_episodes, protocol)
    emp = EmpiricalHazard.from_episodes(episodes)
    targets = targets_from_hazard(emp, protocol, 1.5, "none")
    fit = fit_agent(
        targets, baseline, free=("mu_e",), restarts=restarts, seed=seed, q=q, grid_points=grid_points
    )
    return {"experiment": "EXP2", "curves": _curve_dict(emp), "fit": fit.to_dict()}


def analyze_exp3(
    events_or_episodes: Iterable,
    params: AgentParams,
    *,
    q: int = 301,
    grid_points: int = 1501,
) -> dict:
    """Zero-free-parameter check of the frozen model on bonus play."""
    protocol = get_protocol("EXP3")
    episodes = _as_episodes(events_or_episodes, protocol)
    emp = EmpiricalHazard.from_episodes(episodes)
    targets = targets_from_hazard(emp, protocol, 1.5, "bonus")
    sse = hazard_sse(params, targets, q=q, grid_points=grid_points)
    cells = sum(int(np.sum(np.isfinite(t.observed))) for t in targets)
    return {
        "experiment": "EXP3",
        "curves": _curve_dict(emp),
        "sse": sse,
        "cells": cells,
        "params": params.to_dict(),
    }


def analyze_exp4(
    events_or_episodes: Iterable,
    baseline: AgentParams,
    *,
    seed: int = 0,
    restarts: int = 4,
    q: int = 101,
    grid_points: int = 1201,
    optimizer_q: int = 501,
) -> dict:
    """Median split on no-bonus rates, per-group discount refit, bonus
    optimization, and predicted versus observed condition rates."""
    protocol = get_protocol("EXP4")
    episodes = _as_episodes(events_or_episodes, protocol)
    none_episodes = [e for e in episodes if e.condition == "none"]
    rates_none = reward_rates(none_episodes)
    if len(rates_none) < 2:
        raise ValueError("EXP4 analysis needs at least two subjects with no-bonus play")
    split = median_split(rates_none)

    scenario = BonusLimitScenario(n_b=4, unit=50.0, mu_ss=100.0, rho=1.5)
    groups: dict[str, dict] = {}
    for name, members in (("weak", split.weak), ("strong", split.strong)):
        if not members:
            continue
        group_none = [e for e in none_episodes if e.subject in members]
        emp = EmpiricalHazard.from_episodes(group_none)
        targets = targets_from_hazard(emp, protocol, 1.5, "none")
        fit = fit_agent(
            targets, baseline, free=("gamma",), restarts=restarts, seed=seed, q=q,
            grid_points=grid_points,
        )
        optima = {
            str(tau): optimize_bonus_limit(fit.params, scenario, tau, q=optimizer_q).to_dict()
            for tau in protocol.queue_lengths
        }
        predicted = {}
        observed = {}
        for condition in ("none", "early", "late"):
            tasks = [protocol.task_for(condition, tau, 1.5) for tau in protocol.queue_lengths]
            predicted[condition] = predicted_session_rate(fit.params, tasks, q=optimizer_q)
            members_eps = [
                e for e in episodes if e.condition == condition and e.subject in members
            ]
            rr = reward_rates(members_eps)
            observed[condition] = float(np.mean(list(rr.values()))) if rr else None
        groups[name] = {
            "members": list(members),
            "gamma": fit.params.gamma,
            "fit": fit.to_dict(),
            "optimal_bonuses": optima,
            "predicted_rates": predicted,
            "observed_rates": observed,
        }
    return {
        "experiment": "EXP4",
        "median": split.median,
        "groups": groups,
    }


def analyze_exp5(
    events_or_episodes: Iterable,
    baseline: AgentParams,
    *,
    n_shuffles: int = 10_000,
    seed: int = 0,
    free: Sequence[str] = ("gamma",),
    restarts: int = 3,
    q: int = 101,
    grid_points: int = 1201,
) -> dict:
    """Per-subject fits on the no-bonus phase predict each subject's
    bonus-phase reward rates; shuffled assignments form the null."""
    protocol = get_protocol("EXP5")
    episodes = _as_episodes(events_or_episodes, protocol)
    phase1 = [e for e in episodes if e.phase == 0 and e.condition == "none"]
    subjects = sorted({e.subject for e in phase1})
    fits: dict[str, AgentParams] = {}
    for subject in subjects:
        own = [e for e in phase1 if e.subject == subject]
        emp = EmpiricalHazard.from_episodes(own)
        targets = [
            t
            for t in targets_from_hazard(emp, protocol, 1.5, "none")
            if np.sum(np.isfinite(t.observed)) >= 1
        ]
        defined = sum(int(np.sum(np.isfinite(t.observed))) for t in targets)
        if defined < 2:
            continue
        fit = fit_agent(
            targets, baseline, free=free, restarts=restarts, seed=seed, q=q,
            grid_points=grid_points,
        )
        fits[subject] = fit.params

    observed: dict[str, dict[str, float]] = {"early": {}, "late": {}}
    for condition in ("early", "late"):
        cond_eps = [e for e in episodes if e.phase == 1 and e.condition == condition]
        for subject, rate in reward_rates(cond_eps).items():
            if subject in fits:
                observed[condition][subject] = rate

    condition_tasks = {
        condition: [protocol.task_for(condition, tau, 1.5) for tau in protocol.queue_lengths]
        for condition in ("early", "late")
    }
    report = predict_and_correlate(
        fits, condition_tasks, observed, n_shuffles=n_shuffles, seed=seed
    )
    return {
        "experiment": "EXP5",
        "n_subjects": len(fits),
        "fits": {s: p.to_dict() for s, p in fits.items()},
        "correlations": report.to_dict(),
    }


ANALYSES = {
    "exp1": analyze_exp1,
    "exp2": analyze_exp2,
    "exp3": analyze_exp3,
    "exp4": analyze_exp4,
    "exp5": analyze_exp5,
}
