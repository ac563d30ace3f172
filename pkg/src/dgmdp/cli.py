"""Command-line entry point: solve, hazard, simulate, fit, optimize,
serve, and analyze, all file-driven and reproducible per seed.

Artifacts are plain CSV/JSON; identical inputs and seed produce
byte-identical outputs.  Existing outputs are never overwritten unless
--force is given.  Failures print a machine-readable error JSON on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import events as ev
from .analysis import analyze_exp1, analyze_exp2, analyze_exp3, analyze_exp4, analyze_exp5
from .fitting import (
    EmpiricalHazard,
    episodes_from_events,
    fit_agent,
    targets_from_hazard,
    trim_episodes,
)
from .hazard import hazard_curve, simulate_agent
from .incentives import (
    BonusLimitScenario,
    InterestScenario,
    LotterySpec,
    optimize_bonus_limit,
    optimize_interest_accrual,
)
from .params import AgentParams, TaskParams, agent_from_dict, load_params, task_from_dict
from .protocols import get_protocol
from .service import serve
from .solver import solve


class CliError(Exception):
    pass


def _fail(kind: str, message: str, code: int = 2) -> int:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")
    return code


def _out_path(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not force:
        raise CliError(f"refusing to overwrite {out} (pass --force)")
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(doc, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_task_agent(args) -> tuple[TaskParams, AgentParams]:
    task_doc = load_params(args.task)
    agent_doc = load_params(args.agent) if args.agent else task_doc
    return task_from_dict(task_doc), agent_from_dict(agent_doc)


def _cmd_solve(args) -> int:
    task, agent = _load_task_agent(args)
    out = _out_path(args.out, args.force)
    sol = solve(task, agent, solver=args.solver)
    if args.w_min is None or args.w_max is None:
        extent = 3.0 * (agent.sigma1 + agent.sigma * np.sqrt(task.tau)) + abs(task.mu_ll)
        w_lo, w_hi = -extent, extent
    else:
        w_lo, w_hi = args.w_min, args.w_max
    w = np.linspace(w_lo, w_hi, args.w_points)
    lines = ["t,w,v,q_defect,q_persist"]
    for t in range(1, task.tau + 1):
        v = np.asarray(sol.value(t, w), dtype=float)
        qd = np.asarray(sol.defect_value(t, w), dtype=float)
        qp = np.asarray(sol.persist_value(t, w), dtype=float)
        for i in range(w.size):
            lines.append(f"{t},{w[i]!r},{v[i]!r},{qd[i]!r},{qp[i]!r}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.report:
        report = {
            "solver": args.solver,
            "thresholds": [float(x) for x in sol.thresholds],
            "saturated": [int(x) for x in sol.saturated],
        }
        _dump_json(report, _out_path(args.report, args.force))
    return 0


def _cmd_hazard(args) -> int:
    task, agent = _load_task_agent(args)
    out = _out_path(args.out, args.force)
    if args.mc:
        if args.seed is None:
            raise CliError("--mc needs --seed")
        curve = simulate_agent(
            task, agent, args.mc, args.seed, solver=args.solver, bias_model=args.bias_model
        ).hazard
    else:
        curve = hazard_curve(
            task, agent, args.q, solver=args.solver, bias_model=args.bias_model
        )
    lines = ["t,h_t,stderr"]
    for t in range(task.tau):
        h = curve.h[t]
        h_repr = "" if not np.isfinite(h) else repr(float(h))
        se = ""
        if curve.stderr is not None and np.isfinite(curve.stderr[t]):
            se = repr(float(curve.stderr[t]))
        lines.append(f"{t + 1},{h_repr},{se}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _cmd_simulate(args) -> int:
    if args.seed is None:
        raise CliError("simulate needs --seed")
    protocol = get_protocol(args.protocol)
    agent = agent_from_dict(load_params(args.agent))
    out = _out_path(args.out, args.force)
    cache: dict = {}
    with open(out, "w", encoding="utf-8") as fh:
        for i in range(args.sessions):
            session_id = f"sim-{args.seed}-{i:03d}"
            events, _ = ev.synthesize_session(
                protocol, agent, session_id, seed=args.seed + 7919 * i, rho=args.rho,
                threshold_cache=cache,
            )
            for event in events:
                fh.write(ev.event_to_line(event) + "\n")
    return 0


def _cmd_fit(args) -> int:
    if args.seed is None:
        raise CliError("fit needs --seed")
    protocol = get_protocol(args.protocol)
    events = list(ev.read_jsonl(args.logs))
    episodes = trim_episodes(episodes_from_events(events), protocol)
    rho = args.rho if args.rho is not None else protocol.rho_arms[0]
    episodes = [e for e in episodes if e.rho == rho and e.condition == args.condition]
    emp = EmpiricalHazard.from_episodes(episodes)
    targets = targets_from_hazard(emp, protocol, rho, args.condition)
    init = agent_from_dict(load_params(args.init))
    free = tuple(x for x in args.free.split(",") if x)
    result = fit_agent(
        targets, init, free=free, restarts=args.restarts, seed=args.seed,
        q=args.q, grid_points=args.grid_points,
    )
    _dump_json(result.to_dict(), _out_path(args.out, args.force))
    return 0


def _cmd_optimize(args) -> int:
    if args.seed is None:
        raise CliError("optimize needs --seed")
    agent = agent_from_dict(load_params(args.agent))
    scenario_doc = load_params(args.scenario)
    out = _out_path(args.out, args.force)
    if args.setting == "interest":
        lottery_doc = scenario_doc.get("lottery", {})
        lottery = LotterySpec(
            alpha=float(lottery_doc.get("alpha", 1.0)),
            weight_factor=lottery_doc.get("weight_factor"),
        )
        scenario = InterestScenario(
            x=float(scenario_doc["x"]),
            r=float(scenario_doc["r"]),
            tau=int(scenario_doc["tau"]),
            lottery=lottery,
        )
        optimum = optimize_interest_accrual(agent, scenario, restarts=args.restarts, seed=args.seed)
        _dump_json(optimum.to_dict(), out)
        return 0
    scenario = BonusLimitScenario(
        n_b=int(scenario_doc["n_b"]),
        unit=float(scenario_doc["unit"]),
        mu_ss=float(scenario_doc["mu_ss"]),
        rho=float(scenario_doc["rho"]),
    )
    tau = args.tau if args.tau is not None else int(scenario_doc["tau"])
    optimum = optimize_bonus_limit(agent, scenario, tau, q=args.q)
    _dump_json(optimum.to_dict(), out)
    return 0


def _cmd_serve(args) -> int:
    serve(args.port, protocol_dir=args.protocol_dir, log_dir=args.log_dir)
    return 0


def _cmd_analyze(args) -> int:
    events = list(ev.read_jsonl(args.logs))
    experiment = args.experiment.lower()
    if experiment == "exp1":
        report = analyze_exp1(events, seed=args.seed or 0)
    elif experiment == "exp2":
        baseline = agent_from_dict(load_params(args.baseline))
        report = analyze_exp2(events, baseline, seed=args.seed or 0)
    elif experiment == "exp3":
        params = agent_from_dict(load_params(args.params))
        report = analyze_exp3(events, params)
    elif experiment == "exp4":
        baseline = agent_from_dict(load_params(args.baseline))
        report = analyze_exp4(events, baseline, seed=args.seed or 0)
    elif experiment == "exp5":
        if args.seed is None:
            raise CliError("analyze exp5 needs --seed")
        baseline = agent_from_dict(load_params(args.baseline))
        report = analyze_exp5(
            events, baseline, n_shuffles=args.shuffles, seed=args.seed
        )
    else:
        raise CliError(f"unknown experiment {args.experiment!r}")
    _dump_json(report, _out_path(args.out, args.force))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgmdp",
        description="Delayed-gratification chain: solvers, hazard prediction, fitting, incentives, game service.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="emit value tables as CSV")
    p.add_argument("--task", required=True)
    p.add_argument("--agent")
    p.add_argument("--solver", choices=("grid", "pla"), default="grid")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--w-min", type=float, default=None)
    p.add_argument("--w-max", type=float, default=None)
    p.add_argument("--w-points", type=int, default=241)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("hazard", help="emit a hazard curve as CSV")
    p.add_argument("--task", required=True)
    p.add_argument("--agent")
    p.add_argument("--solver", choices=("grid", "pla"), default="grid")
    p.add_argument("--q", type=int, default=1000)
    p.add_argument("--bias-model", choices=("walk", "iid"), default="walk")
    p.add_argument("--mc", type=int, default=0, help="Monte-Carlo episodes instead of analytic")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_hazard)

    p = sub.add_parser("simulate", help="emit synthetic game logs as JSONL")
    p.add_argument("--protocol", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit agent parameters to logged play")
    p.add_argument("--logs", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--condition", default="none")
    p.add_argument("--init", required=True)
    p.add_argument("--free", default="gamma,sigma1,sigma,mu_e")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--q", type=int, default=101)
    p.add_argument("--grid-points", type=int, default=1201)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("optimize", help="search for a bonus schedule")
    p.add_argument("--setting", choices=("interest", "bonus-limit"), required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--q", type=int, default=501)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("serve", help="run the game service over HTTP")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--protocol-dir")
    p.add_argument("--log-dir")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("analyze", help="run an experiment pipeline over logs")
    p.add_argument("--experiment", required=True, choices=("exp1", "exp2", "exp3", "exp4", "exp5"))
    p.add_argument("--logs", required=True)
    p.add_argument("--baseline", help="baseline fit JSON (exp2/exp4/exp5)")
    p.add_argument("--params", help="frozen params JSON (exp3)")
    p.add_argument("--shuffles", type=int, default=10_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail("usage", str(exc))
    except (ValueError, KeyError, FileNotFoundError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
