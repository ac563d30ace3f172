"""Acceptance criteria, one test per criterion, each printing a
PASS/FAIL line (run with -s or -rA to see them).

Reference setups:
  * value/hazard chain: tau=8, sigma=.25, sigma1=.50, gamma=.92,
    mu_e = bonuses = 0, mu_ll=2, mu_ss=1
  * interest setting: x=100, r=0.1, tau=10, sigma1=50, sigma=30, mu_e=0
  * game groups: sigma1=81.3, sigma=21.3, mu_e=-99.7, gamma 0.875/0.999
"""

import time

import numpy as np
import pytest

from dgmdp import (
    AgentParams,
    Structure,
    TaskParams,
    iterated_equivalence_check,
    solve_grid,
    solve_pla,
)
from dgmdp.analysis import analyze_exp5
from dgmdp.events import synthesize_session
from dgmdp.fitting import FitTarget, fit_agent
from dgmdp.hazard import expected_reward_rate, hazard_curve, simulate_agent
from dgmdp.incentives import (
    BonusLimitScenario,
    InterestScenario,
    LotterySpec,
    optimize_bonus_limit,
    optimize_interest_accrual,
    prospect_weight,
)
from dgmdp.protocols import get_protocol


def report(name: str, ok: bool, detail: str = "") -> bool:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {name}: {status}" + (f"  [{detail}]" if detail else ""))
    return ok


@pytest.fixture(scope="module")
def chain8():
    return TaskParams(tau=8, mu_ss=1.0, mu_ll=2.0)


@pytest.fixture(scope="module")
def agent8():
    return AgentParams(gamma=0.92, sigma1=0.50, sigma=0.25, mu_e=0.0)


def test_solver_fidelity(chain8, agent8):
    t0 = time.perf_counter()
    grid_sol = solve_grid(chain8, agent8)
    pla_sol = solve_pla(chain8, agent8)
    elapsed = time.perf_counter() - t0
    w = np.linspace(-3.0, 3.0, 1201)
    worst = max(
        float(np.max(np.abs(pla_sol.value(t, w) - grid_sol.value(t, w))))
        for t in range(1, chain8.tau + 1)
    )
    ok = worst <= 0.02 and elapsed < 1.0
    assert report("solver-fidelity", ok, f"max|V_pla-V_grid|={worst:.4f} runtime={elapsed:.2f}s")


def test_hazard_qualitative(chain8, agent8):
    h2 = hazard_curve(chain8, agent8, q=1000).h
    declines = bool(np.all(np.diff(h2[1:]) < 0))
    h3 = hazard_curve(TaskParams(tau=8, mu_ss=1.0, mu_ll=3.0), agent8, q=1000).h
    dominated = bool(np.all(h3 <= h2 + 1e-12))
    chain6 = TaskParams(tau=6, mu_ss=1.0, mu_ll=2.0)
    h6 = hazard_curve(chain6, agent8, q=1000).h
    walk_gap = float(np.max(np.abs(h2[2:] - h6)))
    iid8 = hazard_curve(chain8, agent8, bias_model="iid").h
    iid6 = hazard_curve(chain6, agent8, bias_model="iid").h
    iid_gap = float(np.max(np.abs(iid8[2:] - iid6)))
    ok = declines and dominated and walk_gap > 0.005 and iid_gap < 0.005
    assert report(
        "hazard-qualitative",
        ok,
        f"declines={declines} LL3<=LL2={dominated} walk_gap={walk_gap:.3f} iid_gap={iid_gap:.5f}",
    )


def test_oracle_equivalence(chain8, agent8):
    t0 = time.perf_counter()
    analytic = hazard_curve(chain8, agent8, q=1000)
    sim = simulate_agent(chain8, agent8, 1_000_000, seed=7)
    elapsed = time.perf_counter() - t0
    deviation = float(np.max(np.abs(sim.hazard.h - analytic.h)))
    ok = deviation < 0.01 and elapsed < 30.0
    assert report("oracle-equivalence", ok, f"max_dev={deviation:.5f} runtime={elapsed:.1f}s")


def test_equivalence_theorem():
    rng = np.random.default_rng(2026)
    worst = 0.0
    agree = True
    for _ in range(100):
        gamma = float(rng.uniform(0.0, 0.995))
        tau = int(rng.integers(1, 21))
        mu_ss = float(rng.uniform(0.1, 100.0))
        mu_ll = float(rng.uniform(0.1, 400.0))
        task = TaskParams(tau=tau, mu_ss=mu_ss, mu_ll=mu_ll, structure=Structure.ITERATED_PROXY)
        agent = AgentParams(gamma=gamma, sigma1=0.0, sigma=0.0)
        rep = iterated_equivalence_check(task, agent)
        worst = max(worst, abs(rep.ratio - rep.expected_ratio))
        agree = agree and rep.argmax_agrees
    ok = worst <= 1e-9 and agree
    assert report("equivalence-theorem", ok, f"max|ratio-(1-g^tau)|={worst:.2e} argmax_agree={agree}")


def test_prospect_weights():
    expected = {10: 1.86, 100: 5.50, 1000: 14.40}
    deviations = {a: abs(prospect_weight(a) - v) for a, v in expected.items()}
    ok = all(d <= 0.10 for d in deviations.values())
    assert report(
        "prospect-weights",
        ok,
        " ".join(f"alpha={a}:{prospect_weight(a):.3f}" for a in expected),
    )


def test_interest_accrual_optimization():
    t0 = time.perf_counter()
    base = dict(x=100.0, r=0.1, tau=10)
    patient = AgentParams(gamma=0.95, sigma1=50.0, sigma=30.0, mu_e=0.0)
    impatient = AgentParams(gamma=0.55, sigma1=50.0, sigma=30.0, mu_e=0.0)

    certain = InterestScenario(**base)
    opt_certain = optimize_interest_accrual(impatient, certain, restarts=8, seed=0)
    improvement = opt_certain.improvement
    in_band = 0.05 <= improvement <= 0.15

    opt_patient = optimize_interest_accrual(patient, certain, restarts=8, seed=0)
    patient_zero = all(x == 0.0 for x in opt_patient.schedule.amounts)

    factors = [1.0, 1.86, 5.50, 14.40]
    alphas = [1.0, 10.0, 100.0, 1000.0]
    optima = [opt_certain.value]
    for alpha, factor in zip(alphas[1:], factors[1:]):
        scen = InterestScenario(**base, lottery=LotterySpec(alpha=alpha, weight_factor=factor))
        optima.append(optimize_interest_accrual(impatient, scen, restarts=8, seed=0).value)
    monotone = bool(np.all(np.diff(optima) >= -1e-6 * base["x"]))
    elapsed = time.perf_counter() - t0

    ok = in_band and patient_zero and monotone and elapsed < 300.0
    assert report(
        "interest-accrual",
        ok,
        f"improvement={100*improvement:.2f}% patient_zero={patient_zero} "
        f"optima={[round(v, 2) for v in optima]} runtime={elapsed:.0f}s",
    )


def test_bonus_limit_customization():
    scenario = BonusLimitScenario(n_b=4, unit=50.0, mu_ss=100.0, rho=1.5)
    tau = 10
    early_half = set(range(1, tau // 2 + 1))
    late_half = set(range((tau + 1) // 2, tau))
    results = {}
    for label, gamma in (("weak", 0.875), ("strong", 0.999)):
        agent = AgentParams(gamma=gamma, sigma1=81.3, sigma=21.3, mu_e=-99.7)
        opt = optimize_bonus_limit(agent, scenario, tau, q=1000)
        early = get_protocol("EXP4").task_for("early", tau, 1.5)
        late = get_protocol("EXP4").task_for("late", tau, 1.5)
        results[label] = {
            "opt": opt,
            "rate_early": expected_reward_rate(early, agent, q=1000),
            "rate_late": expected_reward_rate(late, agent, q=1000),
        }

    weak = results["weak"]
    strong = results["strong"]
    weak_placement_ok = sum(1 for p in weak["opt"].placements if p in early_half) >= 3
    strong_placement_ok = sum(1 for p in strong["opt"].placements if p in late_half) >= 3
    weak_beats_none = weak["opt"].rate > weak["opt"].no_bonus_rate
    strong_beats_none = strong["opt"].rate > strong["opt"].no_bonus_rate
    weak_rank = weak["rate_early"] > weak["rate_late"]
    strong_rank = strong["rate_late"] > strong["rate_early"]

    ok = (
        weak_placement_ok
        and strong_placement_ok
        and weak_beats_none
        and strong_beats_none
        and weak_rank
        and strong_rank
    )
    assert report(
        "bonus-limit-customization",
        ok,
        f"weak_opt={weak['opt'].placements} (early>=3: {weak_placement_ok}) "
        f"strong_opt={strong['opt'].placements} (late>=3: {strong_placement_ok}) "
        f"beats_none=({weak_beats_none},{strong_beats_none}) "
        f"weak_early>late={weak_rank} strong_late>early={strong_rank}",
    )


def test_parameter_recovery():
    truth = AgentParams(gamma=0.957, sigma1=81.3, sigma=21.3, mu_e=-52.1)
    targets = []
    for rho in (1.25, 1.50):
        for tau in (4, 6, 8, 10, 12, 14):
            task = TaskParams(
                tau=tau, mu_ss=100.0, mu_ll=100.0 * tau * rho, structure=Structure.ITERATED_PROXY
            )
            sim = simulate_agent(task, truth, 5000, seed=int(100 * rho) + tau)
            targets.append(FitTarget(task=task, observed=sim.hazard.h, label=f"rho{rho}/tau{tau}"))
    init = AgentParams(gamma=0.90, sigma1=60.0, sigma=30.0, mu_e=-30.0)
    fit = fit_agent(targets, init, restarts=6, seed=0, q=101, grid_points=1201, maxiter=600)
    p = fit.params
    gamma_ok = abs(p.gamma - truth.gamma) <= 0.02
    sigma1_ok = abs(p.sigma1 / truth.sigma1 - 1.0) <= 0.20
    sigma_ok = abs(p.sigma / truth.sigma - 1.0) <= 0.20
    mu_e_ok = abs(p.mu_e / truth.mu_e - 1.0) <= 0.20
    ok = gamma_ok and sigma1_ok and sigma_ok and mu_e_ok
    assert report(
        "parameter-recovery",
        ok,
        f"gamma={p.gamma:.4f}({gamma_ok}) sigma1={p.sigma1:.1f}({sigma1_ok}) "
        f"sigma={p.sigma:.2f}({sigma_ok}) mu_e={p.mu_e:.1f}({mu_e_ok})",
    )


def test_individual_prediction_pipeline():
    protocol = get_protocol("EXP5")
    baseline = AgentParams(gamma=0.957, sigma1=81.3, sigma=21.3, mu_e=-52.1)
    rng = np.random.default_rng(77)
    events = []
    cache: dict = {}
    n_subjects = 40
    for i in range(n_subjects):
        gamma = 0.90 + 0.0995 * (i + 0.5) / n_subjects + rng.normal(0.0, 0.002)
        gamma = float(np.clip(gamma, 0.85, 0.9995))
        agent = AgentParams(gamma=gamma, sigma1=81.3, sigma=21.3, mu_e=-52.1)
        session_events, _ = synthesize_session(
            protocol, agent, f"subj-{i:02d}", seed=1000 + i, threshold_cache=cache
        )
        events.extend(session_events)

    result = analyze_exp5(events, baseline, n_shuffles=10_000, seed=3)
    checks = {}
    for cond in result["correlations"]["conditions"]:
        checks[cond["condition"]] = (cond["r"], cond["shuffle_p99"], cond["r"] > cond["shuffle_p99"])
    ok = all(flag for _, _, flag in checks.values()) and len(checks) == 2
    assert report(
        "individual-prediction",
        ok,
        " ".join(f"{c}: r={r:.3f} p99={p99:.3f}" for c, (r, p99, _) in checks.items()),
    )


def test_reward_rate_endpoints():
    task = TaskParams(tau=10, mu_ss=100.0, mu_ll=1500.0, structure=Structure.ITERATED_PROXY)
    short = expected_reward_rate(task, AgentParams(gamma=0.0, sigma1=0.0, sigma=0.0))
    long_ = expected_reward_rate(task, AgentParams(gamma=0.999, sigma1=0.0, sigma=0.0))
    ok = abs(short - 100.0) < 1e-9 and abs(long_ - 150.0) < 1e-9
    assert report("reward-rate-endpoints", ok, f"short={short:.6f} long={long_:.6f}")
