"""Value-function solvers for the delayed-gratification decision chain.

Two solvers share one reduced form of the problem (per-step defect
intercepts, persist rewards, terminal payout):

* ``solve_grid`` - backward induction on a dense uniform bias grid with
  the conditional expectation taken by discrete Gaussian convolution.
  This is the oracle.
* ``solve_pla`` - the fast piecewise-linear representation: each step's
  value over bias is a falling defect line, one fitted middle segment,
  and a flat steadfast-persistence plateau, with the one-step
  expectation available in closed form from the normal cdf/pdf.

Both produce per-step indifference thresholds ``w*_t``: the agent
defects at step t exactly when its bias W_t falls below ``w*_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import least_squares
from scipy.special import ndtr

from .params import AgentParams, Structure, TaskParams

SQRT_2PI = math.sqrt(2.0 * math.pi)


def _phi(z):
    return np.exp(-0.5 * np.square(z)) / SQRT_2PI


class ThresholdNotBracketedError(RuntimeError):
    """Raised when a grid cannot establish the sign of defect-persist."""


class GridTooCoarseError(ValueError):
    """Raised when a grid spec violates the solver's coverage contract."""


# ---------------------------------------------------------------------------
# Reduced form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalForm:
    """Per-step reward structure consumed by both solvers.

    defect[t-1] is the intercept of the defect line at step t (value of
    defecting with zero bias); rewards[t-1] is the payout collected on
    the persist transition out of step t (effort plus bonus); terminal
    is the payout for persisting at the final step.
    """

    gamma: float
    sigma: float
    sigma1: float
    defect: tuple[float, ...]
    rewards: tuple[float, ...]
    terminal: float

    @property
    def steps(self) -> int:
        return len(self.defect)

    def steadfast(self) -> np.ndarray:
        """Value of persisting at every remaining step, per step."""
        c = np.empty(self.steps)
        c[-1] = self.terminal
        for t in range(self.steps - 2, -1, -1):
            c[t] = self.rewards[t] + self.gamma * c[t + 1]
        return c


def persist_reward(task: TaskParams, agent: AgentParams, t: int) -> float:
    """Reward on the persist transition out of step t (1-indexed, t < tau).

    Effort is charged on persist transitions except those that deliver a
    reward: the terminal serving step and any step paying a bonus.
    """
    bonus = task.intermediate[t - 1]
    effort = 0.0 if bonus != 0.0 else agent.mu_e
    return effort + bonus


def defect_intercepts(task: TaskParams, agent: AgentParams) -> np.ndarray:
    tau, g = task.tau, agent.gamma
    if task.structure is Structure.ONE_SHOT:
        return np.full(tau, float(task.mu_ss))
    # Remaining-step annuity: defecting at t pays mu_ss at steps t..tau.
    n = tau - np.arange(1, tau + 1) + 1
    if g == 0.0:
        return np.full(tau, float(task.mu_ss))
    return task.mu_ss * (1.0 - g**n) / (1.0 - g)


def normal_form(task: TaskParams, agent: AgentParams) -> NormalForm:
    rewards = tuple(persist_reward(task, agent, t) for t in range(1, task.tau))
    return NormalForm(
        gamma=agent.gamma,
        sigma=agent.sigma,
        sigma1=agent.sigma1,
        defect=tuple(defect_intercepts(task, agent)),
        rewards=rewards,
        terminal=float(task.mu_ll),
    )


# ---------------------------------------------------------------------------
# Grid solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Uniform bias grid: [-extent, extent] sampled at ``points`` nodes."""

    extent: float
    points: int = 4001

    def __post_init__(self) -> None:
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise ValueError(f"grid extent must be positive, got {self.extent}")
        if self.points < 3:
            raise ValueError(f"grid needs at least 3 points, got {self.points}")

    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.points)


def default_grid(nf: NormalForm, points: int = 4001) -> GridSpec:
    """Grid covering six standard deviations of the bias walk at every
    step plus the reward scale, so thresholds are normally interior."""
    walk = 6.0 * (nf.sigma1 + nf.sigma * math.sqrt(nf.steps))
    scale = max(
        abs(nf.terminal),
        max(abs(d) for d in nf.defect),
        float(np.max(np.abs(nf.steadfast()))),
    )
    return GridSpec(extent=max(walk, 3.0 * scale, 1.0), points=points)


def _expect_walk_grid(v_next: np.ndarray, h: float, sigma: float) -> np.ndarray:
    """E[v_next(w + sigma*Z)] on a uniform grid with spacing h.

    Linear tails: defect slope -1 on the left, plateau on the right.
    Sub-resolution noise (sigma < h) is treated as deterministic.
    """
    if sigma < h:
        return v_next.copy()
    half = int(math.ceil(8.0 * sigma / h))
    offsets = np.arange(-half, half + 1) * h
    kernel = _phi(offsets / sigma)
    kernel /= kernel.sum()
    left = v_next[0] + h * np.arange(half, 0, -1)
    right = np.full(half, v_next[-1])
    padded = np.concatenate([left, v_next, right])
    return np.convolve(padded, kernel, mode="valid")


def _bisect(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol or (hi - lo) <= 1e-15 * max(1.0, abs(mid)):
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GridValueSolution:
    """Backward-induction solution tabulated on a bias grid."""

    nf: NormalForm
    grid: np.ndarray
    v: np.ndarray  # (steps, points)
    q_defect: np.ndarray
    q_persist: np.ndarray
    thresholds: np.ndarray  # (steps,)
    saturated: np.ndarray  # (steps,) -1 never-defect, +1 always-defect, 0 interior

    @property
    def steps(self) -> int:
        return self.nf.steps

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise ValueError(f"step t={t} outside 1..{self.steps}")

    def defect_value(self, t: int, w):
        self._check_step(t)
        return self.nf.defect[t - 1] - np.asarray(w, dtype=float)

    def persist_value(self, t: int, w):
        self._check_step(t)
        return np.interp(np.asarray(w, dtype=float), self.grid, self.q_persist[t - 1])

    def value(self, t: int, w):
        self._check_step(t)
        return np.interp(np.asarray(w, dtype=float), self.grid, self.v[t - 1])

    def action_values(self, t: int, w) -> tuple[float, float]:
        return self.defect_value(t, w), self.persist_value(t, w)


def _grid_thresholds(
    nf: NormalForm,
    w: np.ndarray,
    q_defect: np.ndarray,
    q_persist: np.ndarray,
    tol_scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    steps = nf.steps
    thresholds = np.empty(steps)
    saturated = np.zeros(steps, dtype=np.int8)
    tol = 1e-9 * max(tol_scale, 1e-300)
    # Terminal comparison is linear in w: solve it exactly.
    kink = nf.defect[-1] - nf.terminal
    thresholds[-1] = float(np.clip(kink, w[0], w[-1]))
    if kink < w[0]:
        saturated[-1] = -1
    elif kink > w[-1]:
        saturated[-1] = 1
    for t in range(steps - 1):
        f = q_defect[t] - q_persist[t]
        if f[0] <= 0.0:  # persist even at the lowest bias: never defects
            thresholds[t] = w[0]
            saturated[t] = -1
            continue
        if f[-1] > 0.0:  # defect even at the highest bias
            thresholds[t] = w[-1]
            saturated[t] = 1
            continue
        idx = int(np.argmax(f <= 0.0))
        if idx == 0:
            raise ThresholdNotBracketedError(f"no bracket for threshold at step {t + 1}")
        d_t = nf.defect[t]
        qp_t = q_persist[t]

        def gap(x, d_t=d_t, qp_t=qp_t):
            return (d_t - x) - float(np.interp(x, w, qp_t))

        thresholds[t] = _bisect(gap, w[idx - 1], w[idx], tol)
    return thresholds, saturated


def solve_grid(
    task: TaskParams,
    agent: AgentParams,
    grid: GridSpec | None = None,
) -> GridValueSolution:
    """Backward induction over a dense bias grid (the exact reference)."""
    return solve_grid_nf(normal_form(task, agent), grid)


def solve_grid_nf(nf: NormalForm, grid: GridSpec | None = None) -> GridValueSolution:
    if grid is None:
        grid = default_grid(nf)
    else:
        needed = 6.0 * (nf.sigma1 + nf.sigma * math.sqrt(nf.steps))
        if grid.extent < needed * (1.0 - 1e-12):
            raise GridTooCoarseError(
                f"grid extent {grid.extent} does not cover +-{needed:.6g} "
                "(six standard deviations of the bias walk)"
            )
    w = grid.axis()
    h = w[1] - w[0]
    steps = nf.steps
    q_defect = np.empty((steps, w.size))
    q_persist = np.empty((steps, w.size))
    v = np.empty((steps, w.size))

    q_defect[-1] = nf.defect[-1] - w
    q_persist[-1] = nf.terminal
    v[-1] = np.maximum(q_defect[-1], q_persist[-1])
    for t in range(steps - 2, -1, -1):
        ev = _expect_walk_grid(v[t + 1], h, nf.sigma)
        q_persist[t] = nf.rewards[t] + nf.gamma * ev
        q_defect[t] = nf.defect[t] - w
        v[t] = np.maximum(q_defect[t], q_persist[t])

    thresholds, saturated = _grid_thresholds(nf, w, q_defect, q_persist, abs(nf.terminal))
    return GridValueSolution(
        nf=nf,
        grid=w,
        v=v,
        q_defect=q_defect,
        q_persist=q_persist,
        thresholds=thresholds,
        saturated=saturated,
    )


# ---------------------------------------------------------------------------
# Piecewise-linear solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PWLStep:
    """One step's value over bias: defect line, middle segment, plateau.

    ``lower``/``upper`` are the bias abscissas where the middle segment
    meets the defect line and the plateau; continuity at both is exact
    by construction when the segment is present.
    """

    slope: float
    intercept: float
    plateau: float
    lower: float
    upper: float
    defect: float
    fallback: bool = False  # segment fit fell back to a secant

    def value(self, w):
        w = np.asarray(w, dtype=float)
        mid = (
            self.intercept + self.slope * w
            if self.upper > self.lower
            else np.full_like(w, self.plateau)
        )
        return np.where(w < self.lower, self.defect - w, np.where(w < self.upper, mid, self.plateau))


def _expect_pwl(step: PWLStep, sigma: float, w):
    """Closed-form E[V(w + sigma*Z)] for a three-piece value function."""
    w = np.asarray(w, dtype=float)
    if sigma == 0.0:
        return step.value(w)
    z_lo = (step.lower - w) / sigma
    z_hi = (step.upper - w) / sigma
    cdf_lo, cdf_hi = ndtr(z_lo), ndtr(z_hi)
    pdf_lo, pdf_hi = _phi(z_lo), _phi(z_hi)
    out = cdf_lo * (step.defect - w) + sigma * pdf_lo
    out += (cdf_hi - cdf_lo) * (step.intercept + step.slope * w)
    out += sigma * step.slope * (pdf_lo - pdf_hi)
    out += (1.0 - cdf_hi) * step.plateau
    return out


@dataclass(frozen=True)
class PWLValueSolution:
    """Piecewise-linear value representation, one PWLStep per step."""

    nf: NormalForm
    pieces: tuple[PWLStep, ...]
    thresholds: np.ndarray
    saturated: np.ndarray

    @property
    def steps(self) -> int:
        return self.nf.steps

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise ValueError(f"step t={t} outside 1..{self.steps}")

    def defect_value(self, t: int, w):
        self._check_step(t)
        return self.nf.defect[t - 1] - np.asarray(w, dtype=float)

    def persist_value(self, t: int, w):
        self._check_step(t)
        if t == self.steps:
            return np.full_like(np.asarray(w, dtype=float), self.nf.terminal)
        if self.nf.sigma == 0.0:
            return self.nf.rewards[t - 1] + self.nf.gamma * self._exact_value(t + 1, w)
        ev = _expect_pwl(self.pieces[t], self.nf.sigma, w)
        return self.nf.rewards[t - 1] + self.nf.gamma * ev

    def _exact_value(self, t: int, w):
        # sigma=0 collapses the expectation, so the chain evaluates exactly.
        if t == self.steps:
            return np.maximum(self.nf.defect[t - 1] - np.asarray(w, dtype=float), self.nf.terminal)
        inner = self.nf.rewards[t - 1] + self.nf.gamma * self._exact_value(t + 1, w)
        return np.maximum(self.nf.defect[t - 1] - np.asarray(w, dtype=float), inner)

    def value(self, t: int, w):
        self._check_step(t)
        if self.nf.sigma == 0.0:
            return self._exact_value(t, w)
        return self.pieces[t - 1].value(w)

    def action_values(self, t: int, w) -> tuple[float, float]:
        return self.defect_value(t, w), self.persist_value(t, w)


def _fit_segment(
    w_fit: np.ndarray,
    target: np.ndarray,
    d: float,
    c: float,
    sigma: float,
) -> tuple[float, float, bool]:
    """Fit the middle segment (slope, intercept) of a three-piece curve
    by nonlinear least squares; fall back to a secant through the data
    if the fit does not converge.

    The residuals stack the raw curve mismatch with a heavier-weighted
    Gaussian-smoothed mismatch: the backup only ever consumes the
    representation through its one-step expectation, so matching the
    smoothed curve is what controls the error that propagates into
    earlier steps, while the raw term keeps the pointwise shape honest.
    """

    lo_clip, hi_clip = -1.0 + 1e-9, -1e-12
    smooth_weight = 3.0

    if sigma > 0.0:
        h = w_fit[1] - w_fit[0]
        half = int(math.ceil(4.0 * sigma / h))
        kernel = _phi(np.arange(-half, half + 1) * h / sigma)
        kernel /= kernel.sum()
        left = target[0] + h * np.arange(half, 0, -1)  # defect slope -1
        right = np.full(half, target[-1])
        smoothed_target = np.convolve(np.concatenate([left, target, right]), kernel, "valid")
    else:
        smoothed_target = target

    def piece_for(params: np.ndarray) -> PWLStep:
        a = float(np.clip(params[0], lo_clip, hi_clip))
        b = float(params[1])
        x_lo = (d - b) / (a + 1.0)
        x_hi = (c - b) / a
        if x_hi <= x_lo:  # segment vanished: two-piece defect/plateau
            x_lo = x_hi = d - c
        return PWLStep(slope=a, intercept=b, plateau=c, lower=x_lo, upper=x_hi, defect=d)

    def residuals(params: np.ndarray) -> np.ndarray:
        piece = piece_for(params)
        raw = piece.value(w_fit) - target
        if sigma == 0.0:
            return raw
        smoothed = _expect_pwl(piece, sigma, w_fit) - smoothed_target
        return np.concatenate([raw, smooth_weight * smoothed])

    i30 = max(1, int(0.3 * (w_fit.size - 1)))
    i70 = min(w_fit.size - 2, int(0.7 * (w_fit.size - 1)))
    if i70 <= i30:
        i30, i70 = 0, w_fit.size - 1
    dw = w_fit[i70] - w_fit[i30]
    a0 = (target[i70] - target[i30]) / dw if dw > 0 else -0.5
    a0 = float(np.clip(a0, lo_clip + 1e-9, hi_clip * 2))
    b0 = float(target[i30] - a0 * w_fit[i30])

    try:
        res = least_squares(
            residuals,
            x0=np.array([a0, b0]),
            method="lm",
            xtol=1e-13,
            ftol=1e-13,
            max_nfev=500,
        )
    except Exception:
        return a0, b0, True
    a = float(np.clip(res.x[0], lo_clip, hi_clip))
    b = float(res.x[1])
    scale = max(1.0, float(np.max(np.abs(target))))
    rms = math.sqrt(float(np.mean(np.square(piece_for(res.x).value(w_fit) - target))))
    if not math.isfinite(rms) or rms > 0.05 * scale:
        return a0, b0, True
    return a, b, False


def _pla_threshold(
    d: float,
    persist: Callable[[np.ndarray], np.ndarray],
    span: float,
    tol: float,
) -> tuple[float, int]:
    def gap(x: float) -> float:
        return (d - x) - float(persist(np.asarray([x]))[0])

    if gap(-span) <= 0.0:
        return -span, -1
    if gap(span) > 0.0:
        return span, 1
    return _bisect(gap, -span, span, tol), 0


def solve_pla(
    task: TaskParams,
    agent: AgentParams,
    *,
    fit_points: int = 101,
) -> PWLValueSolution:
    """Backward induction in the three-piece representation.

    The terminal step is the exact two-piece kink at d_tau - terminal.
    Each earlier step evaluates the one-step expectation in closed form,
    then refits (slope, intercept) of the middle segment over the
    transition region implied by the previous step's boundaries and the
    fresh indifference threshold.
    """
    return solve_pla_nf(normal_form(task, agent), fit_points=fit_points)


def solve_pla_nf(nf: NormalForm, *, fit_points: int = 101) -> PWLValueSolution:
    steps = nf.steps
    sigma = nf.sigma
    c_values = nf.steadfast()
    span = default_grid(nf).extent
    tol = 1e-9 * max(abs(nf.terminal), 1e-300)

    pieces: list[PWLStep] = [None] * steps  # type: ignore[list-item]
    thresholds = np.empty(steps)
    saturated = np.zeros(steps, dtype=np.int8)

    kink = nf.defect[-1] - nf.terminal
    pieces[-1] = PWLStep(
        slope=nf.terminal,
        intercept=nf.terminal,
        plateau=nf.terminal,
        lower=kink,
        upper=kink,
        defect=nf.defect[-1],
    )
    thresholds[-1] = kink
    if kink <= -span:
        saturated[-1] = -1
    elif kink >= span:
        saturated[-1] = 1

    for t in range(steps - 2, -1, -1):
        nxt = pieces[t + 1]
        d_t, c_t = nf.defect[t], float(c_values[t])
        r_t, g = nf.rewards[t], nf.gamma

        def q_persist(w, nxt=nxt, r_t=r_t, g=g):
            return r_t + g * _expect_pwl(nxt, sigma, w)

        w_star, sat = _pla_threshold(d_t, q_persist, span, tol)
        thresholds[t] = w_star
        saturated[t] = sat

        pad = 4.0 * sigma if sigma > 0 else max(1e-6, 1e-6 * abs(d_t - c_t))
        lo = min(nxt.lower, w_star) - pad
        hi = max(nxt.upper, w_star) + pad
        w_fit = np.linspace(lo, hi, fit_points)
        exact_v = np.maximum(d_t - w_fit, q_persist(w_fit))
        a, b, fallback = _fit_segment(w_fit, exact_v, d_t, c_t, sigma)
        x_lo = (d_t - b) / (a + 1.0)
        x_hi = (c_t - b) / a
        if x_hi <= x_lo:
            x_lo = x_hi = d_t - c_t
        pieces[t] = PWLStep(
            slope=a,
            intercept=b,
            plateau=c_t,
            lower=x_lo,
            upper=x_hi,
            defect=d_t,
            fallback=fallback,
        )

    return PWLValueSolution(
        nf=nf, pieces=tuple(pieces), thresholds=thresholds, saturated=saturated
    )


ValueSolution = GridValueSolution | PWLValueSolution


def solve(
    task: TaskParams,
    agent: AgentParams,
    solver: str = "grid",
    grid: GridSpec | None = None,
) -> ValueSolution:
    return solve_nf(normal_form(task, agent), solver=solver, grid=grid)


def solve_nf(
    nf: NormalForm,
    solver: str = "grid",
    grid: GridSpec | None = None,
) -> ValueSolution:
    if solver == "grid":
        return solve_grid_nf(nf, grid)
    if solver == "pla":
        return solve_pla_nf(nf)
    raise ValueError(f"unknown solver {solver!r} (expected 'grid' or 'pla')")


def action_values(
    task: TaskParams,
    agent: AgentParams,
    sol: ValueSolution,
    t: int,
    w: float,
) -> tuple[float, float]:
    """(defect value, persist value) at step t with bias w."""
    expected = normal_form(task, agent)
    if expected != sol.nf:
        raise ValueError("solution was not solved for this task/agent pair")
    qd, qp = sol.action_values(t, w)
    return float(qd), float(qp)


def indifference_thresholds(sol: ValueSolution) -> np.ndarray:
    """Bias values at which defect and persist are equally good, per step."""
    return sol.thresholds.copy()


# ---------------------------------------------------------------------------
# One-shot / iterated equivalence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceReport:
    v_iterated: float
    v_proxy: float
    ratio: float
    expected_ratio: float
    argmax_iterated: str
    argmax_proxy: str

    @property
    def argmax_agrees(self) -> bool:
        return self.argmax_iterated == self.argmax_proxy


def iterated_equivalence_check(task: TaskParams, agent: AgentParams) -> EquivalenceReport:
    """Closed-form check that the finite proxy chain's value equals the
    recurrent task's value scaled by 1 - gamma^tau, with matching argmax.

    Only valid with no bias noise and no intermediate bonuses.
    """
    if agent.sigma != 0.0 or agent.sigma1 != 0.0:
        raise ValueError("equivalence holds only for sigma = sigma1 = 0")
    if any(x != 0.0 for x in task.intermediate):
        raise ValueError("equivalence holds only with zero intermediate bonuses")
    g, tau = agent.gamma, task.tau
    v_ss_rec = task.mu_ss / (1.0 - g)
    v_ll_rec = g ** (tau - 1) * task.mu_ll / (1.0 - g**tau)
    v_iter = max(v_ss_rec, v_ll_rec)
    arg_iter = "persist" if v_ll_rec >= v_ss_rec else "defect"

    v_ss_proxy = task.mu_ss * (1.0 - g**tau) / (1.0 - g)
    v_ll_proxy = g ** (tau - 1) * task.mu_ll
    v_proxy = max(v_ss_proxy, v_ll_proxy)
    arg_proxy = "persist" if v_ll_proxy >= v_ss_proxy else "defect"

    return EquivalenceReport(
        v_iterated=v_iter,
        v_proxy=v_proxy,
        ratio=v_proxy / v_iter,
        expected_ratio=1.0 - g**tau,
        argmax_iterated=arg_iter,
        argmax_proxy=arg_proxy,
    )
