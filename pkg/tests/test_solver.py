import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgmdp import (
    AgentParams,
    GridSpec,
    GridTooCoarseError,
    Structure,
    TaskParams,
    action_values,
    default_grid,
    indifference_thresholds,
    iterated_equivalence_check,
    normal_form,
    solve_grid,
    solve_pla,
)

from conftest import game_task


def test_defect_value_is_ss_minus_bias():
    task = TaskParams(tau=3, mu_ss=1.0, mu_ll=2.0)
    agent = AgentParams(gamma=0.5, sigma1=0.0, sigma=0.0)
    sol = solve_grid(task, agent)
    qd, _ = action_values(task, agent, sol, 1, 0.0)
    assert qd == 1.0
    qd, _ = action_values(task, agent, sol, 2, 0.25)
    assert qd == 0.75


def test_terminal_persist_value_is_ll(chain8_task, chain8_agent):
    sol = solve_grid(chain8_task, chain8_agent)
    for w in (-2.0, 0.0, 3.0):
        _, qp = action_values(chain8_task, chain8_agent, sol, chain8_task.tau, w)
        assert qp == pytest.approx(2.0, abs=1e-12)


def test_persist_value_matches_fine_grid_oracle(chain8_task, chain8_agent):
    base = solve_grid(chain8_task, chain8_agent)
    fine_spec = GridSpec(extent=default_grid(base.nf).extent, points=40001)
    fine = solve_grid(chain8_task, chain8_agent, fine_spec)
    _, qp = action_values(chain8_task, chain8_agent, base, 4, 0.0)
    _, qp_fine = action_values(chain8_task, chain8_agent, fine, 4, 0.0)
    assert qp == pytest.approx(qp_fine, abs=1e-3)


def test_deterministic_myopic_agent_defects_immediately():
    task = TaskParams(tau=3, mu_ss=1.0, mu_ll=2.0)
    agent = AgentParams(gamma=0.0, sigma1=0.0, sigma=0.0)
    sol = solve_grid(task, agent)
    assert sol.value(1, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert sol.thresholds[0] > 0  # defect preferred at w = 0


def test_deterministic_value_closed_form(chain8_task):
    agent = AgentParams(gamma=0.92, sigma1=0.0, sigma=0.0)
    sol = solve_grid(chain8_task, agent)
    expected = max(1.0, 0.92**7 * 2.0)
    assert sol.value(1, 0.0) == pytest.approx(expected, abs=1e-12)


def test_grid_value_asymptotes(chain8_task, chain8_agent):
    sol = solve_grid(chain8_task, chain8_agent)
    w = sol.grid
    for t in range(1, chain8_task.tau + 1):
        v = sol.v[t - 1]
        left = v[:20]
        slope = np.diff(left) / np.diff(w[:20])
        np.testing.assert_allclose(slope, -1.0, atol=1e-9)
        plateau = 0.92 ** (chain8_task.tau - t) * 2.0
        assert v[-1] == pytest.approx(plateau, abs=1e-6)


def test_terminal_grid_value_exact(chain8_task, chain8_agent):
    sol = solve_grid(chain8_task, chain8_agent)
    w = sol.grid
    np.testing.assert_array_equal(sol.v[-1], np.maximum(1.0 - w, 2.0))


def test_pla_terminal_seed(chain8_task, chain8_agent):
    sol = solve_pla(chain8_task, chain8_agent)
    last = sol.pieces[-1]
    assert last.slope == last.intercept == last.plateau == 2.0
    assert last.lower == last.upper == chain8_task.mu_ss - chain8_task.mu_ll


def test_pla_matches_deterministic_closed_form(chain8_task):
    agent = AgentParams(gamma=0.92, sigma1=0.0, sigma=0.0)
    sol = solve_pla(chain8_task, agent)
    expected = max(1.0, 0.92**7 * 2.0)
    assert float(sol.value(1, 0.0)) == pytest.approx(expected, abs=1e-12)


def test_pla_tracks_grid_within_one_percent(chain8_task, chain8_agent):
    grid_sol = solve_grid(chain8_task, chain8_agent)
    pla_sol = solve_pla(chain8_task, chain8_agent)
    w = np.linspace(-3.0, 3.0, 601)
    worst = 0.0
    for t in range(1, chain8_task.tau + 1):
        diff = np.max(np.abs(pla_sol.value(t, w) - grid_sol.value(t, w)))
        worst = max(worst, float(diff))
    assert worst <= 0.01 * chain8_task.mu_ll


def test_pla_segments_continuous(chain8_task, chain8_agent):
    sol = solve_pla(chain8_task, chain8_agent)
    for piece in sol.pieces:
        if piece.upper <= piece.lower:
            continue
        at_lower = piece.intercept + piece.slope * piece.lower
        at_upper = piece.intercept + piece.slope * piece.upper
        assert at_lower == pytest.approx(piece.defect - piece.lower, abs=1e-9)
        assert at_upper == pytest.approx(piece.plateau, abs=1e-9)
        assert not piece.fallback


def test_threshold_terminal():
    task = TaskParams(tau=4, mu_ss=1.0, mu_ll=2.0)
    agent = AgentParams(gamma=0.9, sigma1=0.3, sigma=0.2)
    for sol in (solve_grid(task, agent), solve_pla(task, agent)):
        assert sol.thresholds[-1] == pytest.approx(-1.0, abs=1e-12)


def test_threshold_cross_solver_agreement(chain8_task, chain8_agent):
    thr_grid = indifference_thresholds(solve_grid(chain8_task, chain8_agent))
    thr_pla = indifference_thresholds(solve_pla(chain8_task, chain8_agent))
    np.testing.assert_allclose(thr_grid, thr_pla, atol=1e-3)


def test_threshold_residual_small(chain8_task, chain8_agent):
    sol = solve_grid(chain8_task, chain8_agent)
    for t in range(1, chain8_task.tau + 1):
        qd, qp = sol.action_values(t, float(sol.thresholds[t - 1]))
        assert abs(float(qd) - float(qp)) <= 1e-9 * chain8_task.mu_ll


def test_huge_ll_pushes_thresholds_to_minus_infinity(chain8_agent):
    thresholds = []
    for mu_ll in (1e2, 1e4, 1e6):
        task = TaskParams(tau=5, mu_ss=1.0, mu_ll=mu_ll)
        thresholds.append(solve_grid(task, chain8_agent).thresholds)
    for prev, cur in zip(thresholds, thresholds[1:]):
        assert np.all(cur < prev)
    assert np.all(thresholds[-1] < -1e5)


def test_saturation_flagged_on_narrow_grid(chain8_agent):
    task = TaskParams(tau=5, mu_ss=1.0, mu_ll=1e4)
    sol = solve_grid(task, chain8_agent, GridSpec(extent=10.0, points=501))
    assert np.all(sol.saturated == -1)  # never defects within the grid
    assert np.all(sol.thresholds == -10.0)


def test_grid_too_coarse_rejected(chain8_task, chain8_agent):
    with pytest.raises(GridTooCoarseError):
        solve_grid(chain8_task, chain8_agent, GridSpec(extent=1.0, points=101))


def test_value_dominates_both_actions(chain8_task, chain8_agent):
    sol = solve_grid(chain8_task, chain8_agent)
    assert np.all(sol.v >= sol.q_defect - 1e-12)
    assert np.all(sol.v >= sol.q_persist - 1e-12)


def test_value_plus_bias_nondecreasing(chain8_task, chain8_agent):
    sol = solve_grid(chain8_task, chain8_agent)
    shifted = sol.v + sol.grid[None, :]
    assert np.all(np.diff(shifted, axis=1) >= -1e-9)


@settings(max_examples=20, deadline=None)
@given(
    k=st.floats(min_value=0.05, max_value=50.0),
    gamma=st.floats(min_value=0.0, max_value=0.97),
    structure=st.sampled_from(list(Structure)),
)
def test_scaling_invariance(k, gamma, structure):
    task = TaskParams(tau=5, mu_ss=1.0, mu_ll=2.5, intermediate=(0.0, 0.3, 0.0, 0.1), structure=structure)
    agent = AgentParams(gamma=gamma, sigma1=0.4, sigma=0.3, mu_e=-0.2)
    scaled_task = TaskParams(
        tau=5,
        mu_ss=k * 1.0,
        mu_ll=k * 2.5,
        intermediate=tuple(k * x for x in task.intermediate),
        structure=structure,
    )
    scaled_agent = AgentParams(gamma=gamma, sigma1=k * 0.4, sigma=k * 0.3, mu_e=k * -0.2)
    base_grid = default_grid(normal_form(task, agent), points=1501)
    sol = solve_grid(task, agent, base_grid)
    sol_k = solve_grid(
        scaled_task, scaled_agent, GridSpec(extent=k * base_grid.extent, points=1501)
    )
    np.testing.assert_allclose(sol_k.v, k * sol.v, rtol=1e-9, atol=1e-9 * k)
    np.testing.assert_allclose(sol_k.thresholds, k * sol.thresholds, rtol=1e-7, atol=1e-7 * k)


@settings(max_examples=25, deadline=None)
@given(
    gamma=st.floats(min_value=0.0, max_value=0.99),
    mu_ss=st.floats(min_value=0.1, max_value=50.0),
    mu_ll=st.floats(min_value=0.1, max_value=200.0),
    mu_e=st.floats(min_value=-5.0, max_value=0.0),
    tau=st.integers(min_value=1, max_value=9),
    structure=st.sampled_from(list(Structure)),
)
def test_deterministic_policy_two_forms(gamma, mu_ss, mu_ll, mu_e, tau, structure):
    task = TaskParams(tau=tau, mu_ss=mu_ss, mu_ll=mu_ll, structure=structure)
    agent = AgentParams(gamma=gamma, sigma1=0.0, sigma=0.0, mu_e=mu_e)
    sol = solve_grid(task, agent)
    defect_steps = [t for t in range(1, tau + 1) if sol.thresholds[t - 1] > 0]
    realized = defect_steps[0] if defect_steps else None
    assert realized in (1, None)


def test_iterated_proxy_defect_annuity():
    task = game_task(tau=4)
    agent = AgentParams(gamma=0.5, sigma1=0.0, sigma=0.0)
    sol = solve_grid(task, agent)
    qd, _ = action_values(task, agent, sol, 1, 0.0)
    assert qd == pytest.approx(100.0 * (1 + 0.5 + 0.25 + 0.125), abs=1e-9)
    qd, _ = action_values(task, agent, sol, 4, 0.0)
    assert qd == pytest.approx(100.0, abs=1e-9)


class TestEquivalence:
    def test_small_case(self):
        task = TaskParams(tau=2, mu_ss=1.0, mu_ll=3.0, structure=Structure.ITERATED_PROXY)
        agent = AgentParams(gamma=0.5, sigma1=0.0, sigma=0.0)
        rep = iterated_equivalence_check(task, agent)
        assert rep.ratio == pytest.approx(0.75, abs=1e-12)
        assert rep.argmax_agrees

    def test_closed_form_case(self):
        task = TaskParams(tau=4, mu_ss=100.0, mu_ll=600.0, structure=Structure.ITERATED_PROXY)
        agent = AgentParams(gamma=0.957, sigma1=0.0, sigma=0.0)
        rep = iterated_equivalence_check(task, agent)
        assert rep.ratio == pytest.approx(1.0 - 0.957**4, abs=1e-12)
        assert rep.expected_ratio == pytest.approx(1.0 - 0.957**4, abs=1e-15)

    def test_no_future_value(self):
        task = TaskParams(tau=3, mu_ss=1.0, mu_ll=5.0)
        agent = AgentParams(gamma=0.0, sigma1=0.0, sigma=0.0)
        rep = iterated_equivalence_check(task, agent)
        assert rep.ratio == pytest.approx(1.0, abs=1e-15)
        assert rep.argmax_iterated == rep.argmax_proxy == "defect"

    def test_refuses_noisy_agent(self):
        task = TaskParams(tau=3, mu_ss=1.0, mu_ll=5.0)
        with pytest.raises(ValueError):
            iterated_equivalence_check(task, AgentParams(gamma=0.5, sigma1=0.0, sigma=0.1))

    def test_proxy_solver_matches_closed_form(self):
        task = TaskParams(tau=5, mu_ss=2.0, mu_ll=9.0, structure=Structure.ITERATED_PROXY)
        agent = AgentParams(gamma=0.8, sigma1=0.0, sigma=0.0)
        rep = iterated_equivalence_check(task, agent)
        sol = solve_grid(task, agent)
        assert float(sol.value(1, 0.0)) == pytest.approx(rep.v_proxy, abs=1e-9)


def test_action_values_rejects_mismatched_solution(chain8_task, chain8_agent):
    sol = solve_grid(chain8_task, chain8_agent)
    other = AgentParams(gamma=0.5, sigma1=0.5, sigma=0.25)
    with pytest.raises(ValueError):
        action_values(chain8_task, other, sol, 1, 0.0)
    with pytest.raises(ValueError):
        action_values(chain8_task, chain8_agent, sol, 99, 0.0)
