#!/usr/bin/env python3
"""Brute-force optimal bonus placements for the weak and strong groups
across the game's queue lengths, plus predicted rates for the canonical
early/late protocol conditions."""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dgmdp import AgentParams
from dgmdp.hazard import expected_reward_rate
from dgmdp.incentives import BonusLimitScenario, optimize_bonus_limit
from dgmdp.protocols import get_protocol


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--q", type=int, default=1000)
    ap.add_argument("--out", default="group_bonus_schedules.json")
    args = ap.parse_args()

    protocol = get_protocol("EXP4")
    scenario = BonusLimitScenario(n_b=4, unit=50.0, mu_ss=100.0, rho=1.5)
    groups = {"weak": 0.875, "strong": 0.999}
    out = {}
    for name, gamma in groups.items():
        agent = AgentParams(gamma=gamma, sigma1=81.3, sigma=21.3, mu_e=-99.7)
        out[name] = {"gamma": gamma, "by_tau": {}}
        for tau in protocol.queue_lengths:
            opt = optimize_bonus_limit(agent, scenario, tau, q=args.q)
            predicted = {
                condition: expected_reward_rate(
                    protocol.task_for(condition, tau, 1.5), agent, q=args.q
                )
                for condition in ("none", "early", "late")
            }
            out[name]["by_tau"][str(tau)] = {
                "optimal_placements": list(opt.placements),
                "optimal_rate": opt.rate,
                "predicted_rates": predicted,
            }
            print(
                f"{name} tau={tau}: optimal={opt.placements} rate={opt.rate:.3f} "
                + " ".join(f"{c}={v:.3f}" for c, v in predicted.items())
            )
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
