"""Euclidean classical trajectories of an action on a uniform time grid.

The discrete equation of motion

    m (x_{i+1} - 2 x_i + x_{i-1}) / dt^2 = hbar^2 V'(x_i)

is the exact stationarity condition of the trapezoid action used by
action_value, so every derivative reported by sensitivities is the exact
partial of the discrete action and matches finite differences of re-solved
problems to truncation error. Times are measured in inverse-temperature
units (duration = T / hbar); with hbar = 1 they coincide with Euclidean time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .model import (
    ActionParams,
    Domain,
    potential_derivative,
    potential_second_derivative,
    potential_value,
)

DEFAULT_TOL = 1e-12
MAX_ITERATIONS = 200


class SolverError(RuntimeError):
    """Raised when the relaxation solver cannot reach its tolerance."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid over [0, duration]; intervals defaults to round(duration * ppu)."""

    duration: float
    points_per_unit: float = 500.0
    intervals: int | None = None

    def __post_init__(self):
        if not (self.duration > 0.0) or not math.isfinite(self.duration):
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.intervals is None:
            if not (self.points_per_unit > 0.0):
                raise ValueError("points_per_unit must be positive")
            object.__setattr__(
                self, "intervals", max(1, int(round(self.duration * self.points_per_unit)))
            )
        elif self.intervals < 1:
            raise ValueError("intervals must be >= 1")

    @property
    def step(self) -> float:
        return self.duration / self.intervals

    @property
    def n_points(self) -> int:
        return self.intervals + 1

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.n_points)

    def with_duration(self, duration: float) -> "TimeGrid":
        """Same interval count, new duration; keeps refinement studies smooth."""
        return TimeGrid(duration, self.points_per_unit, self.intervals)


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    start: float
    end: float
    positions: np.ndarray
    iterations: int
    step_norm: float
    el_residual: float


@dataclass(frozen=True)
class ActionSensitivities:
    """Exact partials of the discrete action at the solved trajectory."""

    d_mass: float
    d_coeff: dict[int, float]
    d_time: float
    d_x: float
    d_xx: float


def _interior_residual(params: ActionParams, x: np.ndarray, step: float) -> np.ndarray:
    m, hbar = params.mass, params.hbar
    lap = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / step**2
    return m * lap - hbar**2 * potential_derivative(params.potential, x[1:-1])


def _newton_step(params: ActionParams, x: np.ndarray, step: float, resid: np.ndarray) -> np.ndarray:
    m, hbar = params.mass, params.hbar
    n_int = len(x) - 2
    band = np.zeros((3, n_int))
    band[0, 1:] = m / step**2
    band[2, :-1] = m / step**2
    band[1, :] = -2.0 * m / step**2 - hbar**2 * potential_second_derivative(
        params.potential, x[1:-1]
    )
    return solve_banded((1, 1), band, -resid, check_finite=False, overwrite_b=True)


def _initial_positions(grid: TimeGrid, start: float, end: float, guess) -> np.ndarray:
    if guess is None:
        return np.linspace(start, end, grid.n_points)
    if isinstance(guess, Trajectory):
        src_t = np.linspace(0.0, 1.0, guess.grid.n_points)
        dst_t = np.linspace(0.0, 1.0, grid.n_points)
        x = np.interp(dst_t, src_t, guess.positions)
    else:
        x = np.asarray(guess, dtype=float).copy()
        if len(x) != grid.n_points:
            raise ValueError(f"guess has {len(x)} points, grid needs {grid.n_points}")
    x[0], x[-1] = start, end
    return x


def solve_bvp(
    params: ActionParams,
    start: float,
    end: float,
    grid: TimeGrid,
    guess=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> Trajectory:
    """Damped Newton relaxation for the two-point boundary problem.

    Convergence is declared when the Newton update falls below tol in the
    max norm; on the half-line every iterate is kept strictly positive by
    step halving. Non-convergence raises SolverError.
    """
    half_line = params.domain is Domain.HALF_LINE
    if half_line and (start <= 0.0 or end <= 0.0):
        raise ValueError("boundary points must be positive on the half-line")
    step = grid.step
    x = _initial_positions(grid, start, end, guess)
    if half_line and np.any(x[1:-1] <= 0.0):
        x[1:-1] = np.abs(x[1:-1]) + 1e-12
    resid = _interior_residual(params, x, step)
    res_norm = float(np.max(np.abs(resid))) if len(resid) else 0.0

    if len(x) == 2:
        return Trajectory(grid, start, end, x, 0, 0.0, 0.0)

    for iteration in range(1, max_iter + 1):
        delta = _newton_step(params, x, step, resid)
        delta_norm = float(np.max(np.abs(delta)))
        scale = 1.0
        while True:
            trial = x[1:-1] + scale * delta
            if half_line and np.any(trial <= 0.0):
                scale *= 0.5
                if scale < 1e-14:
                    raise SolverError(
                        f"step underflow keeping iterate positive (residual {res_norm:.3e})"
                    )
                continue
            x_try = x.copy()
            x_try[1:-1] = trial
            resid_try = _interior_residual(params, x_try, step)
            res_try = float(np.max(np.abs(resid_try)))
            if res_try < res_norm * (1.0 - 1e-4 * scale) or scale * delta_norm <= tol:
                break
            scale *= 0.5
            if scale < 1e-14:
                raise SolverError(
                    f"line search stalled at residual {res_norm:.3e} after {iteration} iterations"
                )
        x, resid, res_norm = x_try, resid_try, res_try
        if scale * delta_norm <= tol:
            return Trajectory(grid, start, end, x, iteration, scale * delta_norm, res_norm)
    raise SolverError(
        f"no convergence in {max_iter} iterations; last residual {res_norm:.3e}, "
        f"last step {delta_norm:.3e}"
    )


def _check_traj(grid_points: int, traj: Trajectory):
    if len(traj.positions) != grid_points:
        raise ValueError("trajectory does not match its grid")


def action_value(params: ActionParams, traj: Trajectory) -> float:
    """Dimensionless trapezoid action of a solved trajectory.

    sum_i dt [ (m / 2 hbar^2) ((x_{i+1}-x_i)/dt)^2 + (V(x_i)+V(x_{i+1}))/2 ].
    """
    _check_traj(traj.grid.n_points, traj)
    step = traj.grid.step
    dx = np.diff(traj.positions)
    kinetic = params.mass * float(np.sum(dx * dx)) / (2.0 * params.hbar**2 * step)
    v = potential_value(params.potential, traj.positions)
    potential = step * float(np.sum(v[:-1] + v[1:])) * 0.5
    return kinetic + potential


def sensitivities(
    params: ActionParams, traj: Trajectory, neighbours: tuple[Trajectory, Trajectory]
) -> ActionSensitivities:
    """Partial derivatives of the action at fixed trajectory.

    Stationarity makes the fixed-trajectory partials equal to total
    derivatives of the solved action. d_xx comes from the endpoint momenta of
    the two neighbour trajectories, which must share the grid and start point
    and bracket the endpoint of traj.
    """
    _check_traj(traj.grid.n_points, traj)
    lower, upper = neighbours
    for nb in (lower, upper):
        if nb.grid.n_points != traj.grid.n_points or not math.isclose(
            nb.grid.duration, traj.grid.duration, rel_tol=1e-12
        ):
            raise ValueError("neighbour trajectories must share the time grid")
        if not math.isclose(nb.start, traj.start, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError("neighbour trajectories must share the start point")
    if not (lower.end < traj.end < upper.end):
        raise ValueError("neighbour endpoints must bracket the trajectory endpoint")

    step = traj.grid.step
    n_int = traj.grid.intervals
    m, hbar = params.mass, params.hbar
    x = traj.positions
    dx = np.diff(x)
    kinetic_sum = float(np.sum(dx * dx))
    v = potential_value(params.potential, x)
    pot_sum = float(np.sum(v[:-1] + v[1:])) * 0.5

    d_mass = kinetic_sum / (2.0 * hbar**2 * step)
    d_coeff = {}
    for k in sorted(params.potential.coefficients):
        if k == 0:
            d_coeff[k] = step * n_int
        else:
            p = x**k
            d_coeff[k] = step * float(np.sum(p[:-1] + p[1:])) * 0.5
    # exact derivative of the discrete action with respect to duration at
    # fixed interval count: minus the mean interval energy
    d_time = (pot_sum - m * kinetic_sum / (2.0 * hbar**2 * step**2)) / n_int
    d_x = _endpoint_momentum(params, traj)
    d_xx = (_endpoint_momentum(params, upper) - _endpoint_momentum(params, lower)) / (
        upper.end - lower.end
    )
    return ActionSensitivities(d_mass=d_mass, d_coeff=d_coeff, d_time=d_time, d_x=d_x, d_xx=d_xx)


def _endpoint_momentum(params: ActionParams, traj: Trajectory) -> float:
    """Exact partial of the discrete action with respect to the endpoint."""
    step = traj.grid.step
    x = traj.positions
    slope = (x[-1] - x[-2]) / step
    return params.mass * slope / params.hbar**2 + 0.5 * step * potential_derivative(
        params.potential, x[-1]
    )


def conserved_energy_drift(params: ActionParams, traj: Trajectory) -> float:
    """Spread (max - min) of the Euclidean energy along the trajectory.

    E_i = (m / 2 hbar^2) v_i^2 - V(x_i) with centred velocities; the drift of
    a converged trajectory vanishes with the square of the grid step.
    """
    _check_traj(traj.grid.n_points, traj)
    if traj.grid.n_points < 3:
        return 0.0
    step = traj.grid.step
    x = traj.positions
    vel = (x[2:] - x[:-2]) / (2.0 * step)
    energy = params.mass * vel**2 / (2.0 * params.hbar**2) - potential_value(
        params.potential, x[1:-1]
    )
    return float(np.max(energy) - np.min(energy))


def time_derivative_fd(
    params: ActionParams,
    start: float,
    end: float,
    grid: TimeGrid,
    delta: float = 1e-4,
    guess=None,
) -> float:
    """Central finite difference of the action over duration +/- delta.

    Re-solves both perturbed problems on grids with the same interval count,
    providing an independent check of the d_time sensitivity.
    """
    plus = solve_bvp(params, start, end, grid.with_duration(grid.duration + delta), guess=guess)
    minus = solve_bvp(params, start, end, grid.with_duration(grid.duration - delta), guess=guess)
    return (action_value(params, plus) - action_value(params, minus)) / (2.0 * delta)


def neighbour_pair(
    params: ActionParams,
    traj: Trajectory,
    offset: float | None = None,
) -> tuple[Trajectory, Trajectory]:
    """Solve the two bracketing problems at end +/- h, warm-started from traj."""
    if offset is None:
        offset = 1e-3 * max(1.0, abs(traj.end))
    lo = solve_bvp(params, traj.start, traj.end - offset, traj.grid, guess=traj)
    hi = solve_bvp(params, traj.start, traj.end + offset, traj.grid, guess=traj)
    return lo, hi


def write_csv(traj: Trajectory, path) -> None:
    """Dump (t, x) rows."""
    times = traj.grid.times()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x\n")
        for t, xv in zip(times, traj.positions):
            fh.write(f"{t:.17g},{xv:.17g}\n")
