import math

import numpy as np
import pytest

from qaction.fit import FitResult, equidistant
from qaction.flow import (
    FlowState,
    FlowTrace,
    StepDiagnostics,
    StepRejected,
    assemble_system,
    bootstrap_state,
    default_grid_policy,
    invariant_combination,
    run,
    solve_rates,
    step,
    write_trace_csv,
)
from qaction.model import ActionParams, Domain, PotentialSpec
from qaction.trajectory import SolverError, TimeGrid

HARMONIC = ActionParams(
    mass=1.0, hbar=1.0, potential=PotentialSpec({2: 0.5}), domain=Domain.FULL_LINE
)
STANDARD = ActionParams(mass=1.0, hbar=1.0, potential=PotentialSpec({2: 0.5, -2: 1.0}))


def harmonic_state(beta=1.0):
    # exact normalisation of the euclidean oscillator kernel
    log_norm = 0.5 * math.log(1.0 / (2.0 * math.pi * math.sinh(beta)))
    return FlowState(
        beta=beta,
        params=HARMONIC,
        log_norm=log_norm,
        initial_point=0.2,
        final_points=equidistant(-1.0, 1.5, 8),
    )


def test_flow_state_validation():
    with pytest.raises(ValueError):
        FlowState(beta=0.0, params=HARMONIC, log_norm=0.0, initial_point=0.2,
                  final_points=equidistant(-1.0, 1.5, 8))
    with pytest.raises(ValueError, match="final points"):
        FlowState(beta=1.0, params=HARMONIC, log_norm=0.0, initial_point=0.2,
                  final_points=(1.0, 2.0, 3.0))
    assert harmonic_state().exponents() == [2]


def test_grid_policy():
    policy = default_grid_policy(300)
    grid = policy(2.0)
    assert grid.duration == 2.0
    assert grid.intervals == 300
    with pytest.raises(ValueError):
        default_grid_policy(1)


def test_assemble_requires_matching_hbar():
    other = ActionParams(mass=1.0, hbar=2.0, potential=PotentialSpec({2: 0.5}),
                         domain=Domain.FULL_LINE)
    with pytest.raises(ValueError, match="hbar"):
        assemble_system(harmonic_state(), other, TimeGrid(1.0, intervals=200))


def test_harmonic_action_is_stationary():
    # exact quantum action: every row consistent, only ln Z~ flows
    state = harmonic_state()
    a_mat, rhs = assemble_system(state, HARMONIC, TimeGrid(1.0, intervals=500))
    rates, diag = solve_rates(a_mat, rhs)
    exact_rate = -0.5 / math.tanh(1.0)
    assert rates[0] == pytest.approx(exact_rate, abs=2e-6)
    assert abs(rates[1]) < 1e-5  # mass
    assert abs(rates[2]) < 1e-5  # v_2
    assert diag.residual_norm < 1e-9
    assert diag.deficiency == 0


def test_harmonic_log_norm_evolution():
    state = harmonic_state()
    trace = run(state, HARMONIC, 1.2, dbeta=0.02, grid_policy=default_grid_policy(500))
    last = trace.states[-1]
    assert last.beta == pytest.approx(1.2, abs=1e-12)
    exact_shift = -0.5 * (math.log(math.sinh(1.2)) - math.log(math.sinh(1.0)))
    assert last.log_norm - state.log_norm == pytest.approx(exact_shift, abs=2e-7)
    assert last.params.mass == pytest.approx(1.0, abs=1e-6)
    assert last.params.potential.coefficients[2] == pytest.approx(0.5, abs=1e-6)
    assert [round(s.beta, 10) for s in trace.states] == [
        round(1.0 + 0.02 * i, 10) for i in range(11)
    ]


def test_constant_ansatz_degeneracy_and_invariant():
    # fitted (not exact) parameters: rows disagree, but the gauge direction
    # between ln Z~ and v_0 is exact and the physical rates do not depend on
    # how it is resolved
    state = FlowState(
        beta=0.35,
        params=ActionParams(
            mass=0.99994533,
            hbar=1.0,
            potential=PotentialSpec({0: 1.1676274, 2: 0.4998810, -2: 1.2280919}),
        ),
        log_norm=0.0,
        initial_point=10.0,
        final_points=equidistant(0.2, 7.0, 30),
    )
    a_mat, rhs = assemble_system(state, STANDARD, TimeGrid(0.35, intervals=500))
    r_min, d_min = solve_rates(a_mat, rhs, mode="min_norm")
    r_pin, d_pin = solve_rates(a_mat, rhs, mode="pin_v0")
    assert d_min.deficiency == 1 and d_min.rank == 4
    assert d_pin.deficiency == 0 and d_pin.rank == 4
    exps = state.exponents()
    i_min = invariant_combination(0.35, r_min, exps)
    i_pin = invariant_combination(0.35, r_pin, exps)
    assert abs(i_min - i_pin) < 1e-10
    assert i_min == pytest.approx(1.4316340443, abs=1e-6)
    # physical rates agree; only the split differs
    assert abs(r_min[1] - r_pin[1]) < 1e-10
    for col, k in enumerate(exps):
        if k == 0:
            continue
        assert abs(r_min[2 + col] - r_pin[2 + col]) < 1e-10
    v0_col = 2 + exps.index(0)
    assert r_pin[v0_col] == 0.0
    assert abs(r_min[v0_col]) > 0.1
    with pytest.raises(ValueError):
        invariant_combination(0.35, r_min, [2, -2])


def test_solve_rates_synthetic_diagnostics():
    rng = np.random.default_rng(53)
    for _ in range(5):
        n = 9
        a_mat = np.column_stack([
            -np.ones(n),
            rng.normal(size=n),
            np.full(n, 0.7),  # constant column, parallel to the first
            rng.normal(size=n),
        ])
        rhs = rng.normal(size=n)
        r_min, d_min = solve_rates(a_mat, rhs)
        r_pin, d_pin = solve_rates(a_mat, rhs, mode="pin_v0")
        assert d_min.deficiency == 1 and d_pin.deficiency == 0
        np.testing.assert_allclose(a_mat @ r_min, a_mat @ r_pin, atol=1e-12)
        assert abs(-r_min[0] + 0.7 * r_min[2] - (-r_pin[0])) < 1e-12
    with pytest.raises(ValueError, match="mode"):
        solve_rates(a_mat, rhs, mode="bogus")
    no_const = np.column_stack([-np.ones(4), np.arange(4.0), np.arange(4.0) ** 2])
    with pytest.raises(ValueError, match="constant"):
        solve_rates(no_const, np.zeros(4), mode="pin_v0")


def test_ill_conditioned_system_is_rejected():
    # x^2, x^4, x^6 over a hair-thin window: columns nearly collinear
    narrow = ActionParams(
        mass=1.0,
        hbar=1.0,
        potential=PotentialSpec({2: 0.5, 4: 0.05, 6: 0.005}),
        domain=Domain.FULL_LINE,
    )
    state = FlowState(beta=0.8, params=narrow, log_norm=0.0, initial_point=2.0,
                      final_points=equidistant(2.0, 2.0005, 8))
    with pytest.raises(StepRejected, match="condition"):
        step(state, narrow, 0.01, default_grid_policy(300))
    # halving cannot fix conditioning; run gives up after the retry budget
    with pytest.raises(SolverError, match="rejected"):
        run(state, narrow, 0.9, dbeta=0.01, grid_policy=default_grid_policy(300))


def test_run_endpoint_handling():
    state = harmonic_state()
    trivial = run(state, HARMONIC, state.beta)
    assert trivial.states == [state] and trivial.diagnostics == []
    with pytest.raises(ValueError):
        run(state, HARMONIC, 0.5)
    # a fractional last step lands exactly on beta_end
    trace = run(state, HARMONIC, 1.03, dbeta=0.02, grid_policy=default_grid_policy(300))
    assert trace.states[-1].beta == pytest.approx(1.03, abs=1e-12)
    assert len(trace.diagnostics) == len(trace.states) - 1
    d = trace.diagnostics[0]
    assert d.beta == pytest.approx(1.0) and d.dbeta == pytest.approx(0.02)


def test_bootstrap_state():
    params = ActionParams(mass=1.2, hbar=0.5, potential=PotentialSpec({2: 0.4, -2: 1.1}))
    fit = FitResult(time=1.5, params=params, log_norm=-0.3, relative_error=1e-4,
                    objective=1e-8, converged=True, evaluations=100,
                    grid=TimeGrid(3.0, intervals=300))
    state = bootstrap_state(fit, 0.5, equidistant(1.0, 4.0, 8))
    assert state.beta == pytest.approx(3.0)  # T / hbar
    assert state.params is params
    assert state.log_norm == -0.3
    override = bootstrap_state(fit, 0.5, equidistant(1.0, 4.0, 8), log_norm=0.0)
    assert override.log_norm == 0.0


def test_write_trace_csv(tmp_path):
    s0 = harmonic_state()
    s1 = FlowState(beta=1.1, params=HARMONIC, log_norm=s0.log_norm - 0.07,
                   initial_point=0.2, final_points=s0.final_points)
    diag = StepDiagnostics(beta=1.0, dbeta=0.1, residual_norm=1e-9,
                           condition=12.0, rank=3, deficiency=0)
    trace = FlowTrace(states=[s0, s1], diagnostics=[diag])
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path, header_comment="run=demo")
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "# run=demo"
    assert lines[1] == "beta,mass,v_2,log_norm,residual_norm,condition,rank,deficiency"
    first = lines[2].split(",")
    assert float(first[0]) == 1.0 and first[-2:] == ["-1", "-1"]
    assert math.isnan(float(first[-4]))
    second = lines[3].split(",")
    assert float(second[0]) == 1.1
    assert float(second[-4]) == 1e-9 and second[-2:] == ["3", "0"]
