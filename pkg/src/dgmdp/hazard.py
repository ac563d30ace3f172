"""Behavior prediction: hazard curves, defection distributions, and a
Monte-Carlo simulation oracle.

The hazard at step t is the probability of defecting there given
survival so far, i.e. the conditional mass of the bias posterior below
the step's indifference threshold.  The posterior over bias given
survival is carried as equal-probability quantile samples: truncate at
the threshold, add the increment quantiles (up to q^2 sums), thin back
to q quantiles, repeat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np
from scipy.special import ndtr, ndtri

from .params import AgentParams, Structure, TaskParams
from .solver import (
    GridSpec,
    NormalForm,
    ValueSolution,
    normal_form,
    solve,
)

BIAS_MODELS = ("walk", "iid")


def _midpoint_quantiles(q: int) -> np.ndarray:
    return ndtri((np.arange(q) + 0.5) / q)


@dataclass(frozen=True)
class HazardCurve:
    """Per-step defection probability given survival, t = 1..tau."""

    tau: int
    h: np.ndarray
    stderr: np.ndarray | None = None
    certain_defection_from: int | None = None  # steps forced to 1 by convention
    at_risk: np.ndarray | None = None  # Monte-Carlo only

    def __post_init__(self) -> None:
        if self.h.shape != (self.tau,):
            raise ValueError(f"hazard must have tau={self.tau} entries")
        finite = self.h[np.isfinite(self.h)]
        if np.any((finite < -1e-12) | (finite > 1 + 1e-12)):
            raise ValueError("hazard values must lie in [0, 1]")

    def survival(self) -> float:
        return float(np.prod(1.0 - self.h))

    def to_dict(self) -> dict:
        out = {"tau": self.tau, "h": [float(x) for x in self.h]}
        if self.stderr is not None:
            out["stderr"] = [float(x) for x in self.stderr]
        if self.certain_defection_from is not None:
            out["certain_defection_from"] = self.certain_defection_from
        return out


@dataclass(frozen=True)
class DefectionDistribution:
    """P(D = t) for t = 1..tau plus the mass that reaches the goal."""

    p: np.ndarray
    survival: float

    def __post_init__(self) -> None:
        total = float(np.sum(self.p)) + self.survival
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"defection distribution sums to {total}, not 1")

    @property
    def tau(self) -> int:
        return self.p.size

    def mean_defection_step(self) -> float:
        """Mean of D conditional on defecting; NaN if defection never occurs."""
        mass = float(np.sum(self.p))
        if mass <= 0.0:
            return float("nan")
        steps = np.arange(1, self.tau + 1)
        return float(np.dot(steps, self.p) / mass)

    def to_dict(self) -> dict:
        return {"p": [float(x) for x in self.p], "survival": self.survival}


def defection_distribution(curve: HazardCurve) -> DefectionDistribution:
    if not np.all(np.isfinite(curve.h)):
        raise ValueError(
            "hazard has undefined positions; fill or drop them before "
            "forming a defection distribution"
        )
    h = np.clip(curve.h, 0.0, 1.0)
    alive = np.concatenate([[1.0], np.cumprod(1.0 - h)])
    p = alive[:-1] * h
    return DefectionDistribution(p=p, survival=float(alive[-1]))


# ---------------------------------------------------------------------------
# Analytic hazard via quantile propagation
# ---------------------------------------------------------------------------


def _prior_mass_below(threshold: float, scale: float) -> float:
    """P(W < threshold) for W ~ Gaussian(0, scale^2); point mass at 0 when
    scale = 0 (a tie counts as persisting)."""
    if scale == 0.0:
        return 1.0 if threshold > 0.0 else 0.0
    return float(ndtr(threshold / scale))


def _thin(sorted_values: np.ndarray, q: int) -> np.ndarray:
    idx = np.floor(sorted_values.size * (np.arange(q) + 0.5) / q).astype(int)
    return sorted_values[np.minimum(idx, sorted_values.size - 1)]


def _walk_hazard(thresholds: np.ndarray, sigma1: float, sigma: float, q: int):
    steps = thresholds.size
    h = np.zeros(steps)
    certain_from = None

    h[0] = _prior_mass_below(thresholds[0], sigma1)
    # The survivor posterior at step 1 is a truncated Gaussian with a known
    # cdf, so thin it to q equal-probability quantiles exactly; this keeps
    # the posterior at size q even when survival is a far tail event.
    if sigma1 == 0.0 or h[0] >= 1.0 - 1e-14:
        survivors = np.zeros(q) if h[0] < 1.0 else np.empty(0)
    else:
        u = h[0] + (1.0 - h[0]) * (np.arange(q) + 0.5) / q
        survivors = sigma1 * ndtri(u)
    deltas = sigma * _midpoint_quantiles(q) if sigma > 0.0 else np.zeros(1)

    for t in range(1, steps):
        if survivors.size == 0:
            h[t:] = 1.0
            certain_from = t + 1
            break
        sums = (survivors[:, None] + deltas[None, :]).ravel()
        sums.sort()
        # Mass below threshold from the full product set (resolution 1/q^2);
        # the carried posterior is thinned back to q quantiles afterwards.
        h[t] = float(np.searchsorted(sums, thresholds[t], side="left")) / sums.size
        samples = _thin(sums, q)
        survivors = samples[samples >= thresholds[t]]
    return h, certain_from


def _iid_thresholds(nf: NormalForm) -> np.ndarray:
    """Thresholds when bias is drawn fresh each step: the persist value
    no longer depends on the current bias, so every step's value is the
    exact two-piece max(d_t - w, kappa_t) and the chain solves in closed
    form."""
    sigma, g = nf.sigma, nf.gamma
    steps = nf.steps
    kappa = np.empty(steps)
    thresholds = np.empty(steps)
    kappa[-1] = nf.terminal
    thresholds[-1] = nf.defect[-1] - nf.terminal
    for t in range(steps - 2, -1, -1):
        d_next, k_next = nf.defect[t + 1], kappa[t + 1]
        gap = d_next - k_next
        if sigma == 0.0:
            mean_next = max(d_next, k_next)
        else:
            z = gap / sigma
            pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
            cdf = float(ndtr(z))
            mean_next = d_next * cdf + sigma * pdf + k_next * (1.0 - cdf)
        kappa[t] = nf.rewards[t] + g * mean_next
        thresholds[t] = nf.defect[t] - kappa[t]
    return thresholds


def _iid_hazard(thresholds: np.ndarray, sigma: float) -> np.ndarray:
    return np.array([_prior_mass_below(thr, sigma) for thr in thresholds])


def hazard_from_thresholds(
    thresholds: np.ndarray, sigma1: float, sigma: float, q: int = 1000
) -> HazardCurve:
    """Walk-model hazard for explicit thresholds (any reduced-form chain)."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    h, certain_from = _walk_hazard(np.asarray(thresholds, dtype=float), sigma1, sigma, q)
    return HazardCurve(tau=len(thresholds), h=h, certain_defection_from=certain_from)


def hazard_curve(
    task: TaskParams,
    agent: AgentParams,
    q: int = 1000,
    *,
    solution: ValueSolution | None = None,
    solver: str = "grid",
    grid: GridSpec | None = None,
    bias_model: str = "walk",
) -> HazardCurve:
    """Analytic hazard curve from the solved indifference thresholds."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if bias_model not in BIAS_MODELS:
        raise ValueError(f"bias_model must be one of {BIAS_MODELS}")
    if bias_model == "iid":
        nf = normal_form(task, agent)
        thresholds = _iid_thresholds(nf)
        h = _iid_hazard(thresholds, agent.sigma)
        return HazardCurve(tau=task.tau, h=h)
    if solution is None:
        solution = solve(task, agent, solver=solver, grid=grid)
    return hazard_from_thresholds(solution.thresholds, agent.sigma1, agent.sigma, q)


# ---------------------------------------------------------------------------
# Monte-Carlo oracle
# ---------------------------------------------------------------------------

_CHUNK = 1 << 18


@dataclass(frozen=True)
class SimulationResult:
    hazard: HazardCurve
    defect_steps: np.ndarray  # 1..tau defection step, tau+1 means goal reached

    @property
    def episodes(self) -> int:
        return self.defect_steps.size


def simulate_thresholds(
    thresholds: np.ndarray,
    sigma1: float,
    sigma: float,
    n: int,
    seed: int,
    *,
    bias_model: str = "walk",
) -> np.ndarray:
    """Defection steps (1..T, T+1 = survived) for n sampled bias paths.

    Episode ranges are sharded into fixed-size chunks with seeds derived
    from a single SeedSequence, so shards merge associatively.
    """
    if n < 1:
        raise ValueError("need at least one episode")
    steps = len(thresholds)
    n_chunks = (n + _CHUNK - 1) // _CHUNK
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    defect_steps = np.empty(n, dtype=np.int32)
    offset = 0
    for chunk_seed in children:
        m = min(_CHUNK, n - offset)
        rng = np.random.default_rng(chunk_seed)
        out = np.full(m, steps + 1, dtype=np.int32)
        alive = np.ones(m, dtype=bool)
        if bias_model == "iid":
            for t in range(steps):
                w = sigma * rng.standard_normal(m)
                defected = alive & (w < thresholds[t])
                out[defected] = t + 1
                alive &= ~defected
        else:
            w = sigma1 * rng.standard_normal(m)
            for t in range(steps):
                defected = alive & (w < thresholds[t])
                out[defected] = t + 1
                alive &= ~defected
                if t < steps - 1:
                    w = w + sigma * rng.standard_normal(m)
        defect_steps[offset : offset + m] = out
        offset += m
    return defect_steps


def empirical_curve_from_steps(defect_steps: np.ndarray, steps: int) -> HazardCurve:
    n = defect_steps.size
    counts = np.bincount(defect_steps, minlength=steps + 2)[1 : steps + 1]
    at_risk = n - np.concatenate([[0], np.cumsum(counts)[:-1]])
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.where(at_risk > 0, counts / at_risk, np.nan)
        stderr = np.where(at_risk > 0, np.sqrt(h * (1.0 - h) / np.maximum(at_risk, 1)), np.nan)
    # Positions nothing survived to are undefined, never zero-filled.
    return HazardCurve(
        tau=steps,
        h=h,
        stderr=stderr,
        at_risk=at_risk.astype(np.int64),
    )


def simulate_agent(
    task: TaskParams,
    agent: AgentParams,
    n: int,
    seed: int,
    *,
    solution: ValueSolution | None = None,
    solver: str = "grid",
    grid: GridSpec | None = None,
    bias_model: str = "walk",
) -> SimulationResult:
    """Sample bias walks and defect below threshold; deterministic per seed."""
    if bias_model == "iid":
        thresholds = _iid_thresholds(normal_form(task, agent))
    else:
        if solution is None:
            solution = solve(task, agent, solver=solver, grid=grid)
        thresholds = solution.thresholds
    defect_steps = simulate_thresholds(
        thresholds, agent.sigma1, agent.sigma, n, seed, bias_model=bias_model
    )
    return SimulationResult(
        hazard=empirical_curve_from_steps(defect_steps, task.tau), defect_steps=defect_steps
    )


# ---------------------------------------------------------------------------
# Reward rate
# ---------------------------------------------------------------------------


def rate_from_distribution(task: TaskParams, dist: DefectionDistribution) -> float:
    """Undiscounted expected points per step under the task's accounting.

    ITERATED_PROXY: defecting at t keeps the bonuses already collected
    and pays mu_ss for each of the tau-t+1 remaining steps; reaching the
    goal pays all bonuses plus mu_ll.  Episodes always span tau steps.
    """
    tau = task.tau
    bonuses = np.asarray(task.intermediate, dtype=float)
    collected_before = np.concatenate([[0.0], np.cumsum(bonuses)])  # entering step t
    steps = np.arange(1, tau + 1)
    if task.structure is Structure.ITERATED_PROXY:
        defect_points = collected_before[steps - 1] + (tau - steps + 1) * task.mu_ss
    else:
        defect_points = collected_before[steps - 1] + task.mu_ss
    goal_points = float(np.sum(bonuses)) + task.mu_ll
    expected_points = float(np.dot(dist.p, defect_points)) + dist.survival * goal_points
    return expected_points / tau


def expected_reward_rate(
    task: TaskParams,
    agent: AgentParams,
    schedule=None,
    *,
    q: int = 1000,
    solver: str = "grid",
    grid: GridSpec | None = None,
    bias_model: str = "walk",
) -> float:
    """Expected points per step; ``schedule`` overrides the task bonuses."""
    if schedule is not None:
        amounts = tuple(float(x) for x in schedule)
        if len(amounts) != task.tau - 1:
            raise ValueError(
                f"schedule has {len(amounts)} entries, task needs {task.tau - 1}"
            )
        task = task.with_schedule(amounts)
    curve = hazard_curve(task, agent, q, solver=solver, grid=grid, bias_model=bias_model)
    return rate_from_distribution(task, defection_distribution(curve))
