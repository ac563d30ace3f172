"""Task and agent parameter types plus their JSON wire format.

A delayed-gratification decision problem is a finite chain of steps
1..tau.  At each step the decision maker either defects (taking the
smaller-sooner payout, perturbed by a bias random walk) or persists
toward the larger-later payout delivered at step tau.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping


class Structure(str, Enum):
    """Chain semantics for the defect action.

    ONE_SHOT: defecting pays mu_ss once and the episode ends.
    ITERATED_PROXY: defecting at step t locks in mu_ss at every
    remaining step t..tau (the rate-equivalent stand-in for an
    indefinitely repeated task).
    """

    ONE_SHOT = "one_shot"
    ITERATED_PROXY = "iterated_proxy"


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class TaskParams:
    """Environment parameters: horizon, rewards, and per-step bonuses.

    ``intermediate[j]`` is the bonus collected when persisting from step
    j+1 (1-indexed steps 1..tau-1); it defaults to all zeros.
    """

    tau: int
    mu_ss: float
    mu_ll: float
    intermediate: tuple[float, ...] = field(default=())
    structure: Structure = Structure.ONE_SHOT

    def __post_init__(self) -> None:
        if not isinstance(self.tau, int) or self.tau < 1:
            raise ValueError(f"tau must be an integer >= 1, got {self.tau!r}")
        inter = tuple(float(x) for x in self.intermediate)
        if not inter:
            inter = (0.0,) * (self.tau - 1)
        if len(inter) != self.tau - 1:
            raise ValueError(
                f"intermediate must have tau-1={self.tau - 1} entries, got {len(inter)}"
            )
        object.__setattr__(self, "intermediate", inter)
        object.__setattr__(self, "structure", Structure(self.structure))
        _require_finite("mu_ss", self.mu_ss)
        _require_finite("mu_ll", self.mu_ll)
        for j, x in enumerate(inter):
            _require_finite(f"intermediate[{j}]", x)

    def with_schedule(self, amounts) -> "TaskParams":
        """Copy of the task with the per-step bonuses replaced."""
        return replace(self, intermediate=tuple(float(x) for x in amounts))

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau": self.tau,
            "mu_ss": self.mu_ss,
            "mu_ll": self.mu_ll,
            "intermediate": list(self.intermediate),
            "structure": self.structure.value,
        }


@dataclass(frozen=True)
class AgentParams:
    """Decision-maker parameters: discounting, bias spread, effort cost.

    gamma is the per-step exponential discount factor; sigma1 and sigma
    are the standard deviations of the initial bias and its per-step
    increment; mu_e is the effort cost charged on persist transitions
    (typically negative).
    """

    gamma: float
    sigma1: float
    sigma: float
    mu_e: float = 0.0

    def __post_init__(self) -> None:
        for name in ("gamma", "sigma1", "sigma", "mu_e"):
            _require_finite(name, getattr(self, name))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.sigma1 < 0 or self.sigma < 0:
            raise ValueError("sigma1 and sigma must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma": self.gamma,
            "sigma1": self.sigma1,
            "sigma": self.sigma,
            "mu_e": self.mu_e,
        }


TASK_FIELDS = ("tau", "mu_ss", "mu_ll", "intermediate", "structure")
AGENT_FIELDS = ("gamma", "sigma1", "sigma", "mu_e")


def task_from_dict(doc: Mapping[str, Any]) -> TaskParams:
    try:
        tau = int(doc["tau"])
        mu_ss = float(doc["mu_ss"])
        mu_ll = float(doc["mu_ll"])
    except KeyError as exc:
        raise ValueError(f"task document missing field {exc.args[0]!r}") from None
    intermediate = tuple(float(x) for x in doc.get("intermediate", ()))
    structure = doc.get("structure", Structure.ONE_SHOT)
    if isinstance(structure, str):
        structure = Structure(structure.lower())
    return TaskParams(
        tau=tau, mu_ss=mu_ss, mu_ll=mu_ll, intermediate=intermediate, structure=structure
    )


def agent_from_dict(doc: Mapping[str, Any]) -> AgentParams:
    try:
        return AgentParams(
            gamma=float(doc["gamma"]),
            sigma1=float(doc["sigma1"]),
            sigma=float(doc["sigma"]),
            mu_e=float(doc.get("mu_e", 0.0)),
        )
    except KeyError as exc:
        raise ValueError(f"agent document missing field {exc.args[0]!r}") from None


def load_params(path: str | Path) -> dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return doc


def load_task(path: str | Path) -> TaskParams:
    return task_from_dict(load_params(path))


def load_agent(path: str | Path) -> AgentParams:
    return agent_from_dict(load_params(path))
