"""Fitting the agent model to play data.

Empirical hazard follows the population recipe: per subject, queue
length, and position, the fraction of episodes defecting at that
position; subject proportions are averaged and the hazard is formed from
the averaged defection distribution.  Play inside the first and last
thirty seconds of a phase is discarded.

Agent parameters are recovered by derivative-free simplex least squares
on hazard residuals, with bound-respecting transforms (logit for the
discount factor, log for the bias spreads) and random restarts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import events as ev
from .hazard import expected_reward_rate, hazard_curve
from .params import AgentParams, TaskParams
from .protocols import ExperimentProtocol
from .solver import default_grid, normal_form

TRIM_MS = 30_000


# ---------------------------------------------------------------------------
# Episodes from event logs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GameEpisode:
    subject: str
    tau: int
    condition: str
    phase: int
    rho: float
    defect_step: int | None  # None means served at the front of the long queue
    start_ms: int
    end_ms: int
    points: float
    bonuses: float

    @property
    def actions(self) -> int:
        return self.defect_step if self.defect_step is not None else self.tau

    @property
    def total_points(self) -> float:
        return self.points + self.bonuses


def episodes_from_events(events: Iterable[ev.GameEvent]) -> list[GameEpisode]:
    """Reconstruct per-episode outcomes from an event stream."""
    episodes: list[GameEpisode] = []
    open_by_session: dict[str, dict] = {}
    for event in events:
        state = open_by_session.get(event.session)
        if event.kind == ev.EPISODE_START:
            open_by_session[event.session] = {
                "tau": int(event.payload["tau"]),
                "condition": str(event.payload.get("condition", "none")),
                "phase": int(event.payload.get("phase", 0)),
                "rho": float(event.payload.get("rho", 1.5)),
                "start_ms": event.ms,
                "defect": None,
                "bonuses": 0.0,
                "short": False,
            }
        elif state is None:
            continue
        elif event.kind == ev.QUEUE_SELECT:
            if event.payload.get("queue") == "short":
                state["short"] = True
        elif event.kind == ev.DEFECT:
            state["defect"] = int(event.payload["position"])
        elif event.kind == ev.BONUS_AWARDED:
            state["bonuses"] += float(event.payload.get("points", 0.0))
        elif event.kind == ev.SERVED:
            if state["defect"] is not None:
                defect_step = state["defect"]
            elif state["short"] or event.payload.get("queue") == "short":
                defect_step = 1
            else:
                defect_step = None
            episodes.append(
                GameEpisode(
                    subject=event.session,
                    tau=state["tau"],
                    condition=state["condition"],
                    phase=state["phase"],
                    rho=state["rho"],
                    defect_step=defect_step,
                    start_ms=state["start_ms"],
                    end_ms=event.ms,
                    points=float(event.payload.get("points", 0.0)),
                    bonuses=state["bonuses"],
                )
            )
            open_by_session.pop(event.session, None)
    return episodes


@dataclass(frozen=True)
class HazardFilter:
    conditions: tuple[str, ...] | None = None
    taus: tuple[int, ...] | None = None
    subjects: tuple[str, ...] | None = None
    phases: tuple[int, ...] | None = None
    rho: float | None = None

    def admits(self, episode: GameEpisode) -> bool:
        if self.conditions is not None and episode.condition not in self.conditions:
            return False
        if self.taus is not None and episode.tau not in self.taus:
            return False
        if self.subjects is not None and episode.subject not in self.subjects:
            return False
        if self.phases is not None and episode.phase not in self.phases:
            return False
        if self.rho is not None and episode.rho != self.rho:
            return False
        return True


def trim_episodes(
    episodes: Iterable[GameEpisode],
    protocol: ExperimentProtocol,
    trim_ms: int = TRIM_MS,
) -> list[GameEpisode]:
    """Drop episodes not fully inside their phase minus head/tail margins."""
    bounds = protocol.phase_bounds_ms()
    kept = []
    for episode in episodes:
        lo, hi = bounds[episode.phase]
        if ev.episode_within_window(episode.start_ms, episode.end_ms, lo, hi, trim_ms):
            kept.append(episode)
    return kept


# ---------------------------------------------------------------------------
# Empirical hazard
# ---------------------------------------------------------------------------


@dataclass
class EmpiricalHazard:
    """Defection counts per (subject, queue length, position).

    ``population_hazard`` averages subject defection proportions before
    forming the hazard, so every subject counts equally regardless of
    how many episodes they played.
    """

    defections: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    episodes: dict[tuple[str, int], int] = field(default_factory=dict)
    tags: dict = field(default_factory=dict)

    @classmethod
    def from_episodes(cls, episodes: Iterable[GameEpisode], tags: dict | None = None) -> "EmpiricalHazard":
        out = cls(tags=tags or {})
        for episode in episodes:
            key = (episode.subject, episode.tau)
            if key not in out.defections:
                out.defections[key] = np.zeros(episode.tau, dtype=np.int64)
                out.episodes[key] = 0
            out.episodes[key] += 1
            if episode.defect_step is not None:
                out.defections[key][episode.defect_step - 1] += 1
        return out

    def taus(self) -> tuple[int, ...]:
        return tuple(sorted({tau for _, tau in self.defections}))

    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted({s for s, _ in self.defections}))

    def episode_count(self) -> int:
        return sum(self.episodes.values())

    def subject_proportions(self, subject: str, tau: int) -> np.ndarray:
        key = (subject, tau)
        return self.defections[key] / self.episodes[key]

    def subject_hazard(self, subject: str, tau: int) -> np.ndarray:
        """Defections over at-risk episodes; NaN where nothing was at risk."""
        key = (subject, tau)
        d = self.defections[key].astype(float)
        at_risk = self.episodes[key] - np.concatenate([[0.0], np.cumsum(d)[:-1]])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(at_risk > 0, d / at_risk, np.nan)

    def population_proportions(self, tau: int) -> np.ndarray:
        rows = [
            self.subject_proportions(subject, t)
            for (subject, t) in self.defections
            if t == tau
        ]
        if not rows:
            raise KeyError(f"no episodes with tau={tau}")
        return np.mean(rows, axis=0)

    def population_hazard(self, tau: int) -> np.ndarray:
        p = self.population_proportions(tau)
        survival_in = 1.0 - np.concatenate([[0.0], np.cumsum(p)[:-1]])
        with np.errstate(invalid="ignore", divide="ignore"):
            h = np.where(survival_in > 1e-12, p / survival_in, np.nan)
        return h


def empirical_hazard(
    events_or_episodes: Iterable,
    protocol: ExperimentProtocol,
    filters: HazardFilter | None = None,
    *,
    trim_ms: int = TRIM_MS,
) -> EmpiricalHazard:
    """Event log (or parsed episodes) -> trimmed, filtered hazard counts."""
    items = list(events_or_episodes)
    if items and isinstance(items[0], ev.GameEvent):
        episodes = episodes_from_events(items)
    else:
        episodes = items
    episodes = trim_episodes(episodes, protocol, trim_ms)
    filters = filters or HazardFilter()
    episodes = [e for e in episodes if filters.admits(e)]
    tags = {"protocol": protocol.id, "filters": filters}
    return EmpiricalHazard.from_episodes(episodes, tags)


def reward_rates(episodes: Iterable[GameEpisode]) -> dict[str, float]:
    """Points per action per subject (bonuses included)."""
    points: dict[str, float] = {}
    actions: dict[str, int] = {}
    for episode in episodes:
        points[episode.subject] = points.get(episode.subject, 0.0) + episode.total_points
        actions[episode.subject] = actions.get(episode.subject, 0) + episode.actions
    return {s: points[s] / actions[s] for s in points if actions[s] > 0}


# ---------------------------------------------------------------------------
# Least-squares fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitTarget:
    task: TaskParams
    observed: np.ndarray  # hazard per position, NaN where undefined
    label: str = ""
    weights: np.ndarray | None = None  # optional per-cell weights

    def __post_init__(self) -> None:
        if self.observed.shape != (self.task.tau,):
            raise ValueError(f"observed hazard must have tau={self.task.tau} entries")


def targets_from_hazard(
    emp: EmpiricalHazard,
    protocol: ExperimentProtocol,
    rho: float,
    condition: str,
    *,
    weight_by_at_risk: bool = False,
) -> list[FitTarget]:
    targets = []
    for tau in emp.taus():
        weights = None
        if weight_by_at_risk:
            counts = sum(
                emp.episodes[(s, t)] for (s, t) in emp.episodes if t == tau
            )
            weights = np.full(tau, float(counts))
        targets.append(
            FitTarget(
                task=protocol.task_for(condition, tau, rho),
                observed=emp.population_hazard(tau),
                label=f"{condition}/rho{rho}/tau{tau}",
                weights=weights,
            )
        )
    return targets


FREE_PARAMETERS = ("gamma", "sigma1", "sigma", "mu_e")

_LOGIT_EPS = 1e-9
_LOG_FLOOR = 1e-9


def _to_vector(params: AgentParams, free: Sequence[str]) -> np.ndarray:
    out = []
    for name in free:
        value = getattr(params, name)
        if name == "gamma":
            g = min(max(value, _LOGIT_EPS), 1.0 - _LOGIT_EPS)
            out.append(math.log(g / (1.0 - g)))
        elif name in ("sigma1", "sigma"):
            out.append(math.log(max(value, _LOG_FLOOR)))
        else:
            out.append(value)
    return np.array(out)


def _from_vector(vec: np.ndarray, base: AgentParams, free: Sequence[str]) -> AgentParams:
    updates = {}
    for name, x in zip(free, vec):
        if name == "gamma":
            updates[name] = 1.0 / (1.0 + math.exp(-min(max(x, -60.0), 60.0)))
        elif name in ("sigma1", "sigma"):
            updates[name] = math.exp(min(x, 60.0))
        else:
            updates[name] = float(x)
    return replace(base, **updates)


@dataclass(frozen=True)
class FitResult:
    params: AgentParams
    free: tuple[str, ...]
    sse: float
    restarts: int
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "free": list(self.free),
            "sse": self.sse,
            "restarts": self.restarts,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def hazard_sse(
    params: AgentParams,
    targets: Sequence[FitTarget],
    *,
    q: int = 151,
    grid_points: int = 1201,
) -> float:
    """Summed squared hazard residuals over all defined cells."""
    total = 0.0
    for target in targets:
        nf = normal_form(target.task, params)
        curve = hazard_curve(
            target.task, params, q, grid=default_grid(nf, points=grid_points)
        )
        mask = ~np.isnan(target.observed)
        resid = curve.h[mask] - target.observed[mask]
        if target.weights is not None:
            resid = resid * np.sqrt(target.weights[mask])
        total += float(np.dot(resid, resid))
    return total


def fit_agent(
    targets: Sequence[FitTarget],
    init: AgentParams,
    free: Sequence[str] = FREE_PARAMETERS,
    *,
    restarts: int = 5,
    seed: int = 0,
    q: int = 151,
    grid_points: int = 1201,
    maxiter: int = 400,
) -> FitResult:
    """Simplex least squares over the free parameters, multi-start."""
    free = tuple(free)
    for name in free:
        if name not in FREE_PARAMETERS:
            raise ValueError(f"unknown parameter {name!r}")
    defined = sum(int(np.sum(~np.isnan(t.observed))) for t in targets)
    if not targets or defined < 2:
        raise ValueError("need at least one curve with >= 2 defined positions")

    def objective(vec: np.ndarray) -> float:
        try:
            candidate = _from_vector(vec, init, free)
            return hazard_sse(candidate, targets, q=q, grid_points=grid_points)
        except Exception:
            return 1e30

    if not free:
        return FitResult(
            params=init,
            free=free,
            sse=hazard_sse(init, targets, q=q, grid_points=grid_points),
            restarts=0,
            iterations=0,
            converged=True,
        )

    x0 = _to_vector(init, free)
    scales = {"gamma": 1.2, "sigma1": 0.6, "sigma": 0.6, "mu_e": max(20.0, 0.5 * abs(init.mu_e))}
    rng = np.random.default_rng(seed)
    starts = [x0]
    for _ in range(max(restarts - 1, 0)):
        jitter = np.array([rng.normal(0.0, scales[name]) for name in free])
        starts.append(x0 + jitter)

    best_vec, best_val = None, math.inf
    iterations = 0
    converged = False
    for start in starts:
        res = minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={"maxiter": maxiter, "xatol": 1e-4, "fatol": 1e-10, "adaptive": True},
        )
        iterations += int(res.nit)
        if res.fun < best_val:
            best_val, best_vec = float(res.fun), np.asarray(res.x)
            converged = bool(res.success)
    return FitResult(
        params=_from_vector(best_vec, init, free),
        free=free,
        sse=best_val,
        restarts=len(starts),
        iterations=iterations,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Group and individual analyses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MedianSplit:
    strong: tuple[str, ...]
    weak: tuple[str, ...]
    median: float


def median_split(rates: Mapping[str, float]) -> MedianSplit:
    """Subjects at or above the median rate form the strong group."""
    if len(rates) < 2:
        raise ValueError("median split needs at least two subjects")
    median = float(np.median(list(rates.values())))
    strong = tuple(sorted(s for s, r in rates.items() if r >= median))
    weak = tuple(sorted(s for s, r in rates.items() if r < median))
    return MedianSplit(strong=strong, weak=weak, median=median)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def predicted_session_rate(
    params: AgentParams,
    tasks: Sequence[TaskParams],
    *,
    q: int = 301,
    grid_points: int = 1501,
) -> float:
    """Session-level points per action across uniformly drawn lengths.

    Model episodes always span tau actions, so lengths weight the mix by
    their tau.
    """
    points = 0.0
    actions = 0.0
    for task in tasks:
        nf = normal_form(task, params)
        rate = expected_reward_rate(
            task, params, q=q, grid=default_grid(nf, points=grid_points)
        )
        points += rate * task.tau
        actions += task.tau
    return points / actions


@dataclass(frozen=True)
class ConditionCorrelation:
    condition: str
    r: float
    n_subjects: int
    shuffle_median: float
    shuffle_p99: float
    n_shuffles_at_least: int
    n_shuffles: int

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass(frozen=True)
class CorrelationReport:
    conditions: tuple[ConditionCorrelation, ...]
    difference: ConditionCorrelation | None
    predicted: Mapping[str, Mapping[str, float]]

    def to_dict(self) -> dict:
        return {
            "conditions": [c.to_dict() for c in self.conditions],
            "difference": self.difference.to_dict() if self.difference else None,
            "predicted": {c: dict(v) for c, v in self.predicted.items()},
        }


def _shuffle_null(
    predicted: np.ndarray, observed: np.ndarray, n_shuffles: int, rng: np.random.Generator
) -> np.ndarray:
    null = np.empty(n_shuffles)
    for i in range(n_shuffles):
        null[i] = _pearson(predicted[rng.permutation(predicted.size)], observed)
    return null


def predict_and_correlate(
    fits: Mapping[str, AgentParams],
    condition_tasks: Mapping[str, Sequence[TaskParams]],
    observed: Mapping[str, Mapping[str, float]],
    n_shuffles: int = 10_000,
    seed: int = 0,
    *,
    q: int = 301,
    grid_points: int = 1501,
) -> CorrelationReport:
    """Correlate model-predicted against observed reward rates per
    condition, with a shuffled-assignment null distribution."""
    subjects = sorted(fits)
    if len(subjects) < 3:
        raise ValueError("correlation needs at least three subjects")
    rng = np.random.default_rng(seed)
    predicted: dict[str, dict[str, float]] = {}
    for condition, tasks in condition_tasks.items():
        predicted[condition] = {
            s: predicted_session_rate(fits[s], tasks, q=q, grid_points=grid_points)
            for s in subjects
        }

    reports = []
    per_condition_vectors = {}
    for condition in condition_tasks:
        obs_map = observed.get(condition, {})
        usable = [s for s in subjects if s in obs_map]
        if len(usable) < 3:
            raise ValueError(f"condition {condition!r} has fewer than 3 observed subjects")
        pred = np.array([predicted[condition][s] for s in usable])
        obs = np.array([obs_map[s] for s in usable])
        per_condition_vectors[condition] = (usable, pred, obs)
        r = _pearson(pred, obs)
        null = _shuffle_null(pred, obs, n_shuffles, rng)
        finite = null[~np.isnan(null)]
        reports.append(
            ConditionCorrelation(
                condition=condition,
                r=r,
                n_subjects=len(usable),
                shuffle_median=float(np.median(finite)) if finite.size else float("nan"),
                shuffle_p99=float(np.percentile(finite, 99)) if finite.size else float("nan"),
                n_shuffles_at_least=int(np.sum(finite >= r)) if not math.isnan(r) else n_shuffles,
                n_shuffles=n_shuffles,
            )
        )

    difference = None
    if "early" in per_condition_vectors and "late" in per_condition_vectors:
        subj_e, pred_e, obs_e = per_condition_vectors["early"]
        subj_l, pred_l, obs_l = per_condition_vectors["late"]
        common = [s for s in subj_e if s in subj_l]
        if len(common) >= 3:
            idx_e = [subj_e.index(s) for s in common]
            idx_l = [subj_l.index(s) for s in common]
            dpred = pred_e[idx_e] - pred_l[idx_l]
            dobs = obs_e[idx_e] - obs_l[idx_l]
            r = _pearson(dpred, dobs)
            null = _shuffle_null(dpred, dobs, n_shuffles, rng)
            finite = null[~np.isnan(null)]
            difference = ConditionCorrelation(
                condition="early-minus-late",
                r=r,
                n_subjects=len(common),
                shuffle_median=float(np.median(finite)) if finite.size else float("nan"),
                shuffle_p99=float(np.percentile(finite, 99)) if finite.size else float("nan"),
                n_shuffles_at_least=int(np.sum(finite >= r)) if not math.isnan(r) else n_shuffles,
                n_shuffles=n_shuffles,
            )

    return CorrelationReport(
        conditions=tuple(reports), difference=difference, predicted=predicted
    )
