import math

import numpy as np
import numpy.testing as npt
import pytest

from qaction.model import ActionParams, Domain, PotentialSpec
from qaction.trajectory import (
    SolverError,
    TimeGrid,
    Trajectory,
    action_value,
    conserved_energy_drift,
    neighbour_pair,
    sensitivities,
    solve_bvp,
    time_derivative_fd,
    write_csv,
)

HARMONIC = ActionParams(
    mass=1.0, hbar=1.0, potential=PotentialSpec({2: 0.5}), domain=Domain.FULL_LINE
)
STANDARD = ActionParams(mass=1.0, hbar=1.0, potential=PotentialSpec({2: 0.5, -2: 1.0}))
QUARTIC = ActionParams(
    mass=1.0, hbar=1.0, potential=PotentialSpec({2: 0.5, 4: 0.1}), domain=Domain.FULL_LINE
)


def harmonic_path(grid: TimeGrid) -> np.ndarray:
    t = grid.times()
    T = grid.duration
    return (np.sinh(T - t) + np.sinh(t)) / np.sinh(T)


def test_time_grid_properties():
    grid = TimeGrid(2.0, points_per_unit=250.0)
    assert grid.intervals == 500
    assert grid.n_points == 501
    assert grid.step == pytest.approx(2.0 / 500)
    times = grid.times()
    assert times[0] == 0.0 and times[-1] == pytest.approx(2.0)

    fixed = TimeGrid(0.4, intervals=800)
    assert fixed.intervals == 800
    shrunk = fixed.with_duration(0.1)
    # refinement studies rely on the interval count staying put
    assert shrunk.intervals == 800 and shrunk.duration == 0.1

    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(ValueError):
            TimeGrid(bad)
    with pytest.raises(ValueError):
        TimeGrid(1.0, points_per_unit=0.0)
    with pytest.raises(ValueError):
        TimeGrid(1.0, intervals=0)


def test_harmonic_nodes_match_closed_form():
    errs = {}
    for n in (500, 1000):
        grid = TimeGrid(1.0, intervals=n)
        traj = solve_bvp(HARMONIC, 1.0, 1.0, grid)
        errs[n] = float(np.max(np.abs(traj.positions - harmonic_path(grid))))
    assert errs[1000] <= 1e-8
    # node error is second order in the step
    assert 3.5 <= errs[500] / errs[1000] <= 4.5


def test_harmonic_action_closed_form():
    traj = solve_bvp(HARMONIC, 1.0, 1.0, TimeGrid(1.0, intervals=500))
    exact = (math.cosh(1.0) - 1.0) / math.sinh(1.0)
    assert action_value(HARMONIC, traj) == pytest.approx(exact, abs=1e-6)
    assert traj.step_norm <= 1e-12


def test_constant_path_at_potential_minimum():
    # 0.5 x^2 + 1/x^2 is stationary at x = 2^(1/4); the solver must sit still
    x_min = 2.0**0.25
    traj = solve_bvp(STANDARD, x_min, x_min, TimeGrid(1.7, intervals=300))
    npt.assert_allclose(traj.positions, x_min, rtol=0.0, atol=1e-12)
    v_min = 0.5 * x_min**2 + x_min**-2
    assert action_value(STANDARD, traj) == pytest.approx(1.7 * v_min, rel=1e-12)


def test_time_reversal_symmetry():
    grid = TimeGrid(1.3, intervals=400)
    fwd = solve_bvp(STANDARD, 0.8, 2.5, grid)
    bwd = solve_bvp(STANDARD, 2.5, 0.8, grid)
    npt.assert_allclose(fwd.positions, bwd.positions[::-1], rtol=0.0, atol=1e-11)
    assert action_value(STANDARD, fwd) == pytest.approx(action_value(STANDARD, bwd), rel=1e-12)


def _rebuilt(params: ActionParams, mass=None, coeff=None) -> ActionParams:
    coeffs = dict(params.potential.coefficients)
    if coeff is not None:
        k, value = coeff
        coeffs[k] = value
    return ActionParams(
        mass=params.mass if mass is None else mass,
        hbar=params.hbar,
        potential=PotentialSpec(coeffs),
        domain=params.domain,
    )


def test_sensitivities_match_finite_differences():
    rng = np.random.default_rng(29)
    cases = [HARMONIC, STANDARD, QUARTIC, _rebuilt(HARMONIC, coeff=(0, 0.2))]
    for params in cases:
        for _ in range(3):
            if params.domain is Domain.HALF_LINE:
                a, b = rng.uniform(0.6, 2.5, size=2)
            else:
                a, b = rng.uniform(-1.5, 1.5, size=2)
            t_len = rng.uniform(0.4, 2.0)
            grid = TimeGrid(t_len, intervals=800)
            traj = solve_bvp(params, a, b, grid)
            sens = sensitivities(params, traj, neighbour_pair(params, traj))

            h = 1e-5
            sp = solve_bvp(params, a, b, grid, guess=traj)  # warm-start template
            m_plus = _rebuilt(params, mass=params.mass + h)
            m_minus = _rebuilt(params, mass=params.mass - h)
            fd_mass = (
                action_value(m_plus, solve_bvp(m_plus, a, b, grid, guess=sp))
                - action_value(m_minus, solve_bvp(m_minus, a, b, grid, guess=sp))
            ) / (2.0 * h)
            npt.assert_allclose(sens.d_mass, fd_mass, rtol=1e-6, atol=1e-9)

            for k, c in params.potential.coefficients.items():
                plus = _rebuilt(params, coeff=(k, c + h))
                minus = _rebuilt(params, coeff=(k, c - h))
                fd_c = (
                    action_value(plus, solve_bvp(plus, a, b, grid, guess=sp))
                    - action_value(minus, solve_bvp(minus, a, b, grid, guess=sp))
                ) / (2.0 * h)
                npt.assert_allclose(sens.d_coeff[k], fd_c, rtol=1e-6, atol=1e-9)

            hb = 1e-5 * max(1.0, abs(b))
            fd_x = (
                action_value(params, solve_bvp(params, a, b + hb, grid, guess=sp))
                - action_value(params, solve_bvp(params, a, b - hb, grid, guess=sp))
            ) / (2.0 * hb)
            npt.assert_allclose(sens.d_x, fd_x, rtol=1e-6, atol=1e-9)

            fd_t = time_derivative_fd(params, a, b, grid, guess=traj)
            npt.assert_allclose(sens.d_time, fd_t, rtol=1e-6, atol=1e-9)


def test_second_endpoint_derivative_matches_fd():
    grid = TimeGrid(1.3, intervals=800)
    traj = solve_bvp(STANDARD, 0.8, 2.5, grid)
    sens = sensitivities(STANDARD, traj, neighbour_pair(STANDARD, traj))
    h = 1e-3
    s0 = action_value(STANDARD, traj)
    sp = action_value(STANDARD, solve_bvp(STANDARD, 0.8, 2.5 + h, grid, guess=traj))
    sm = action_value(STANDARD, solve_bvp(STANDARD, 0.8, 2.5 - h, grid, guess=traj))
    fd2 = (sp - 2.0 * s0 + sm) / h**2
    assert sens.d_xx == pytest.approx(fd2, rel=1e-6)


def test_d_coeff_constant_term_equals_duration():
    params = _rebuilt(HARMONIC, coeff=(0, 0.2))
    traj = solve_bvp(params, 0.4, 1.1, TimeGrid(0.9, intervals=200))
    sens = sensitivities(params, traj, neighbour_pair(params, traj))
    assert sens.d_coeff[0] == pytest.approx(0.9, rel=1e-14)


def test_energy_drift_of_exact_and_converged_trajectories():
    # centred velocities leave an O(dt^2) spread even on the exact path
    d500 = conserved_energy_drift(
        HARMONIC, _sampled(harmonic_path, TimeGrid(1.0, intervals=500))
    )
    d2000 = conserved_energy_drift(
        HARMONIC, _sampled(harmonic_path, TimeGrid(1.0, intervals=2000))
    )
    assert d500 <= 2e-7
    assert d2000 <= 1e-8
    assert 14.0 <= d500 / d2000 <= 18.0  # second order: factor 16 per 4x refinement

    fine = solve_bvp(HARMONIC, 1.0, 1.0, TimeGrid(1.0, intervals=8000))
    assert conserved_energy_drift(HARMONIC, fine) <= 1e-8


def _sampled(path_fn, grid: TimeGrid) -> Trajectory:
    x = path_fn(grid)
    return Trajectory(grid, float(x[0]), float(x[-1]), x, 0, 0.0, 0.0)


def test_unconverged_trajectory_has_large_drift():
    grid = TimeGrid(1.0, intervals=400)
    straight = np.linspace(0.8, 2.5, grid.n_points)
    rough = Trajectory(grid, 0.8, 2.5, straight, 0, 1.0, 1.0)
    rough_drift = conserved_energy_drift(STANDARD, rough)
    assert rough_drift > 1e-4
    solved_drift = conserved_energy_drift(STANDARD, solve_bvp(STANDARD, 0.8, 2.5, grid))
    assert solved_drift < 1e-4 and rough_drift / solved_drift > 1e4


def test_warm_start_reuses_solution():
    grid = TimeGrid(1.3, intervals=400)
    cold = solve_bvp(STANDARD, 0.8, 2.5, grid)
    lo, hi = neighbour_pair(STANDARD, cold)
    assert lo.end == pytest.approx(2.5 - 2.5e-3) and hi.end == pytest.approx(2.5 + 2.5e-3)
    assert max(lo.iterations, hi.iterations) <= cold.iterations
    # resampling a coarse solution onto a finer grid must also converge fast
    fine = solve_bvp(STANDARD, 0.8, 2.5, TimeGrid(1.3, intervals=800), guess=cold)
    assert fine.iterations <= cold.iterations


def test_neighbour_validation():
    grid = TimeGrid(1.0, intervals=100)
    traj = solve_bvp(STANDARD, 1.0, 2.0, grid)
    lo, hi = neighbour_pair(STANDARD, traj)
    other = solve_bvp(STANDARD, 1.0, 2.0, TimeGrid(1.0, intervals=120))
    with pytest.raises(ValueError):
        sensitivities(STANDARD, traj, (other, hi))
    with pytest.raises(ValueError):
        sensitivities(STANDARD, traj, (hi, lo))  # endpoints must bracket


def test_solver_validation_and_failure():
    grid = TimeGrid(1.0, intervals=50)
    with pytest.raises(ValueError):
        solve_bvp(STANDARD, -1.0, 2.0, grid)
    with pytest.raises(ValueError):
        solve_bvp(STANDARD, 1.0, 0.0, grid)
    with pytest.raises(ValueError):
        solve_bvp(STANDARD, 1.0, 2.0, grid, guess=np.ones(7))
    hard = ActionParams(
        mass=1.0, hbar=1.0, potential=PotentialSpec({4: 1.0}), domain=Domain.FULL_LINE
    )
    with pytest.raises(SolverError):
        solve_bvp(hard, -2.0, 2.0, TimeGrid(3.0, intervals=200), max_iter=1)


def test_action_is_stationary_under_perturbation():
    grid = TimeGrid(1.3, intervals=800)
    traj = solve_bvp(STANDARD, 0.8, 2.5, grid)
    s0 = action_value(STANDARD, traj)
    bump = np.sin(np.pi * grid.times() / grid.duration)

    def shifted(eps):
        moved = Trajectory(grid, traj.start, traj.end, traj.positions + eps * bump, 0, 0.0, 0.0)
        return action_value(STANDARD, moved) - s0

    d1, d2 = shifted(1e-3), shifted(2e-3)
    assert d1 > 0.0  # minimum, not saddle, for this potential
    assert d2 / d1 == pytest.approx(4.0, abs=0.01)


def test_two_point_grid_is_trivial():
    traj = solve_bvp(STANDARD, 1.0, 2.0, TimeGrid(0.5, intervals=1))
    npt.assert_allclose(traj.positions, [1.0, 2.0])
    assert traj.iterations == 0


def test_write_csv_round_trip(tmp_path):
    traj = solve_bvp(STANDARD, 1.0, 2.0, TimeGrid(0.5, intervals=20))
    path = tmp_path / "traj.csv"
    write_csv(traj, path)
    rows = path.read_text().strip().split("\n")
    assert rows[0] == "t,x"
    assert len(rows) == traj.grid.n_points + 1
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    npt.assert_allclose(data[:, 0], traj.grid.times(), atol=1e-15)
    npt.assert_allclose(data[:, 1], traj.positions, rtol=1e-15)
