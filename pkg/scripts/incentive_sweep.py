#!/usr/bin/env python3
"""Sweep discount factors and lottery weights in the interest-accrual
setting: no-bonus versus optimized expected accumulation.

The full sweep is expensive (one simplex search per cell); --quick cuts
the gamma grid and restarts for a fast look.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dgmdp import AgentParams
from dgmdp.incentives import (
    InterestScenario,
    LotterySpec,
    optimize_interest_accrual,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--x", type=float, default=100.0)
    ap.add_argument("--r", type=float, default=0.1)
    ap.add_argument("--tau", type=int, default=10)
    ap.add_argument("--sigma1", type=float, default=50.0)
    ap.add_argument("--sigma", type=float, default=30.0)
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="incentive_sweep.csv")
    args = ap.parse_args()

    gammas = np.arange(0.55, 0.951, 0.10 if args.quick else 0.05)
    lotteries = [
        ("1:0", LotterySpec(alpha=1.0)),
        ("1:10", LotterySpec(alpha=10.0)),
        ("1:100", LotterySpec(alpha=100.0)),
        ("1:1000", LotterySpec(alpha=1000.0)),
    ]
    restarts = 3 if args.quick else 10

    lines = ["gamma,lottery,weight_factor,no_bonus,optimal,improvement"]
    for gamma in gammas:
        agent = AgentParams(gamma=float(gamma), sigma1=args.sigma1, sigma=args.sigma, mu_e=0.0)
        for label, lottery in lotteries:
            scen = InterestScenario(x=args.x, r=args.r, tau=args.tau, lottery=lottery)
            t0 = time.perf_counter()
            opt = optimize_interest_accrual(agent, scen, restarts=restarts, seed=args.seed)
            lines.append(
                f"{gamma!r},{label},{lottery.weight_factor!r},"
                f"{opt.no_bonus_value!r},{opt.value!r},{opt.improvement!r}"
            )
            print(
                f"gamma={gamma:.2f} {label:7s} no-bonus={opt.no_bonus_value:8.3f} "
                f"optimal={opt.value:8.3f} (+{100 * opt.improvement:5.2f}%) "
                f"[{time.perf_counter() - t0:.0f}s]"
            )
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
