"""Global fit of quantum-action parameters to transition-amplitude tables.

A table of amplitudes G(x_f, T; x_i) over a boundary grid is matched by
Z~ exp(-Sigma~), where Sigma~ is the trajectory action of a trial parameter
set. The match runs in the log domain with ln Z~ profiled out in closed form,
leaving a derivative-free simplex search over (mass, coefficients); the
reported relative error goes back to the linear domain,
sum |G - Z~ e^-Sigma| / sum |G|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .analytic import euclidean_log_amplitude, harmonic_log_kernel
from .model import ActionParams, Domain, PotentialSpec, omega
from .oracle import SpectralDecomposition, amplitude
from .trajectory import SolverError, TimeGrid, Trajectory, action_value, solve_bvp

MAX_EVALUATIONS = 50000
SIMPLEX_TOL = 1e-10
_SCALE_FLOOR = 0.01


@dataclass(frozen=True)
class BoundarySet:
    """Initial and final spatial boundary points of the amplitude table."""

    initial: tuple[float, ...]
    final: tuple[float, ...]

    def __post_init__(self):
        initial = tuple(float(v) for v in self.initial)
        final = tuple(float(v) for v in self.final)
        if not initial or not final:
            raise ValueError("boundary sets must be non-empty")
        for vals, name in ((initial, "initial"), (final, "final")):
            if len(set(vals)) != len(vals):
                raise ValueError(f"{name} boundary points must be distinct")
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{name} boundary points must be finite")
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "final", final)

    def require_domain(self, domain: Domain):
        if domain is Domain.HALF_LINE and any(
            v <= 0.0 for v in self.initial + self.final
        ):
            raise ValueError("half-line boundary points must be positive")

    def pairs(self) -> list[tuple[float, float]]:
        return [(a, b) for a in self.initial for b in self.final]


@dataclass(frozen=True)
class AmplitudeTable:
    """Amplitudes (and their logs) for every boundary pair at one time."""

    model: ActionParams
    bounds: BoundarySet
    time: float
    log_entries: np.ndarray
    source: str

    @property
    def entries(self) -> np.ndarray:
        return np.exp(self.log_entries)


def equidistant(lo: float, hi: float, count: int) -> tuple[float, ...]:
    """Endpoint-inclusive uniform points, the layout used by the table configs."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return (0.5 * (lo + hi),)
    return tuple(np.linspace(lo, hi, count))


def build_table(
    model: ActionParams,
    bounds: BoundarySet,
    time: float,
    source: str = "analytic",
    decomposition: SpectralDecomposition | None = None,
) -> AmplitudeTable:
    """Tabulate ln G over the boundary grid from the chosen amplitude source."""
    if not (time > 0.0):
        raise ValueError("time must be positive")
    bounds.require_domain(model.domain)
    logs = np.empty((len(bounds.initial), len(bounds.final)))
    if source == "analytic":
        fill = _analytic_log_amplitude(model)
        for i, a in enumerate(bounds.initial):
            for j, b in enumerate(bounds.final):
                logs[i, j] = fill(a, b, time)
    elif source == "oracle":
        if decomposition is None:
            raise ValueError("oracle source needs a spectral decomposition")
        for i, a in enumerate(bounds.initial):
            for j, b in enumerate(bounds.final):
                val = amplitude(decomposition, a, b, time)
                if val <= 0.0:
                    raise ValueError(
                        f"oracle amplitude at ({a}, {b}, T={time}) fell below the "
                        "roundoff floor; shrink the boundary span or the time"
                    )
                logs[i, j] = math.log(val)
    else:
        raise ValueError(f"unknown amplitude source {source!r}")
    return AmplitudeTable(model=model, bounds=bounds, time=time, log_entries=logs, source=source)


def _analytic_log_amplitude(model: ActionParams):
    nonzero = {k for k, v in model.potential.coefficients.items() if v != 0.0}
    if nonzero <= {2, -2} and model.domain is Domain.HALF_LINE:
        return lambda a, b, t: euclidean_log_amplitude(model, a, b, t)
    if nonzero <= {2} and model.domain is Domain.FULL_LINE:
        w = omega(model)
        return lambda a, b, t: harmonic_log_kernel(model.mass, w, model.hbar, a, b, t)
    raise ValueError(
        "no closed-form amplitude for this model; use the oracle source"
    )


@dataclass(frozen=True)
class FitResult:
    time: float
    params: ActionParams
    log_norm: float
    relative_error: float
    objective: float
    converged: bool
    evaluations: int
    grid: TimeGrid


class _Objective:
    """Profiled log-domain least squares over the boundary pairs."""

    def __init__(
        self,
        table: AmplitudeTable,
        exponents: list[int],
        init: ActionParams,
        grid: TimeGrid,
        cache: dict | None = None,
    ):
        self.table = table
        self.exponents = exponents
        self.grid = grid
        self.hbar = table.model.hbar
        self.domain = table.model.domain
        self.pairs = table.bounds.pairs()
        self.log_g = table.log_entries.ravel()
        self.cache: dict[int, Trajectory] = cache if cache is not None else {}
        coeffs = init.potential.coefficients
        self.center = np.array(
            [init.mass] + [coeffs.get(k, 0.0) for k in exponents], dtype=float
        )
        self.scales = np.maximum(np.abs(self.center), _SCALE_FLOOR)

    def params_from(self, y: np.ndarray) -> ActionParams | None:
        p = self.center + np.asarray(y) * self.scales
        if p[0] <= 0.0 or not np.all(np.isfinite(p)):
            return None
        return ActionParams(
            mass=float(p[0]),
            hbar=self.hbar,
            potential=PotentialSpec({k: float(v) for k, v in zip(self.exponents, p[1:])}),
            domain=self.domain,
        )

    def actions(self, q: ActionParams) -> np.ndarray:
        out = np.empty(len(self.pairs))
        for idx, (a, b) in enumerate(self.pairs):
            traj = solve_bvp(q, a, b, self.grid, guess=self.cache.get(idx))
            self.cache[idx] = traj
            out[idx] = action_value(q, traj)
        return out

    def residuals(self, q: ActionParams) -> tuple[np.ndarray, float]:
        sig = self.actions(q)
        log_norm = float(np.mean(self.log_g + sig))
        return self.log_g + sig - log_norm, log_norm

    def __call__(self, y: np.ndarray) -> float:
        q = self.params_from(y)
        if q is None:
            return math.inf
        try:
            res, _ = self.residuals(q)
        except SolverError:
            return math.inf
        return float(res @ res)


def _initial_simplex(n: int, center: np.ndarray, spread: float) -> np.ndarray:
    simplex = np.tile(center, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] += spread
    return simplex


def fit_at_time(
    table: AmplitudeTable,
    ansatz,
    init: ActionParams,
    grid: TimeGrid,
    max_evaluations: int = MAX_EVALUATIONS,
    cache: dict | None = None,
) -> FitResult:
    """Simplex fit of (mass, v_k for k in ansatz) at one time slice.

    The search works in units of the initial parameter scales, restarts once
    from its own optimum, and flags convergence when the scaled simplex
    diameter falls below 1e-10 within the evaluation budget.
    """
    exponents = sorted(int(k) for k in ansatz)
    if len(set(exponents)) != len(exponents):
        raise ValueError("ansatz exponents must be distinct")
    beta = table.time / table.model.hbar
    if not math.isclose(grid.duration, beta, rel_tol=1e-9):
        raise ValueError(
            f"grid duration {grid.duration} does not match beta = T/hbar = {beta}"
        )
    objective = _Objective(table, exponents, init, grid, cache=cache)
    n = len(objective.center)
    y = np.zeros(n)
    total_evals = 0
    converged = False
    for spread in (0.05, 0.01):
        budget = max_evaluations - total_evals
        if budget <= n + 2:
            break
        res = minimize(
            objective,
            y,
            method="Nelder-Mead",
            options={
                "xatol": SIMPLEX_TOL,
                "fatol": 1e-14,
                "maxfev": budget,
                "initial_simplex": _initial_simplex(n, y, spread),
            },
        )
        y = res.x
        total_evals += res.nfev
        converged = bool(res.status == 0)
    best = objective.params_from(y)
    if best is None:
        raise SolverError("fit wandered into an invalid parameter region")
    residuals, log_norm = objective.residuals(best)
    # residual = ln G - ln(Z~ e^-Sigma), so the model amplitude in the linear
    # domain is exp(ln G - residual)
    g = np.exp(objective.log_g)
    g_model = np.exp(objective.log_g - residuals)
    rel = float(np.sum(np.abs(g - g_model)) / np.sum(np.abs(g)))
    return FitResult(
        time=table.time,
        params=best,
        log_norm=log_norm,
        relative_error=rel,
        objective=float(residuals @ residuals),
        converged=converged,
        evaluations=total_evals,
        grid=grid,
    )


def sweep(
    model: ActionParams,
    bounds: BoundarySet,
    ansatz,
    times,
    grid_policy=None,
    source: str = "analytic",
    decomposition: SpectralDecomposition | None = None,
    init: ActionParams | None = None,
    max_evaluations: int = MAX_EVALUATIONS,
) -> list[FitResult]:
    """Fit every time in sequence, warm-starting each from its predecessor."""
    exponents = sorted(int(k) for k in ansatz)
    if grid_policy is None:
        def grid_policy(t: float) -> TimeGrid:
            return TimeGrid(t / model.hbar, intervals=500)

    if init is None:
        coeffs = {k: model.potential.coefficients.get(k, 0.0) for k in exponents}
        init = ActionParams(
            mass=model.mass,
            hbar=model.hbar,
            potential=PotentialSpec(coeffs),
            domain=model.domain,
        )
    results = []
    cache: dict[int, Trajectory] = {}
    current = init
    for t in times:
        table = build_table(model, bounds, float(t), source=source, decomposition=decomposition)
        result = fit_at_time(
            table,
            exponents,
            current,
            grid_policy(float(t)),
            max_evaluations=max_evaluations,
            cache=cache,
        )
        results.append(result)
        current = result.params
    return results


def parameter_uncertainty(
    result: FitResult, table: AmplitudeTable, fd_step: float = 1e-5
) -> dict[str, float]:
    """Heuristic 1-sigma spreads from the Gauss-Newton Hessian at the optimum.

    Central finite differences of the profiled residual vector build J; the
    covariance estimate is s^2 (J^T J)^-1 with s^2 the residual variance.
    Directions with negligible curvature are reported as infinite.
    """
    exponents = sorted(result.params.potential.coefficients)
    objective = _Objective(table, exponents, result.params, result.grid)
    names = ["mass"] + [f"v_{k}" for k in exponents]
    n = len(objective.center)
    res0, _ = objective.residuals(result.params)
    jac = np.empty((len(res0), n))
    for i in range(n):
        y = np.zeros(n)
        y[i] = fd_step
        plus = objective.params_from(y)
        y[i] = -fd_step
        minus = objective.params_from(y)
        if plus is None or minus is None:
            raise SolverError("uncertainty stencil left the valid parameter region")
        rp, _ = objective.residuals(plus)
        rm, _ = objective.residuals(minus)
        jac[:, i] = (rp - rm) / (2.0 * fd_step * objective.scales[i])
    hess = jac.T @ jac
    dof = max(len(res0) - n - 1, 1)
    variance = float(res0 @ res0) / dof
    sigmas = {}
    evals, evecs = np.linalg.eigh(hess)
    cutoff = max(evals[-1], 0.0) * 1e-13
    inv_diag = np.where(evals > cutoff, 1.0 / np.where(evals > cutoff, evals, 1.0), math.inf)
    for i, name in enumerate(names):
        contributions = evecs[i, :] ** 2 * inv_diag
        total = float(np.sum(contributions))
        sigmas[name] = math.sqrt(variance * total) if math.isfinite(total) else math.inf
    return sigmas


def constant_term(result: FitResult) -> float:
    """Constant potential coefficient with the normalisation folded in.

    At a single time the fit only constrains v_0 - hbar ln Z~ / T: shifting
    v_0 by c and ln Z~ by c T / hbar leaves every residual unchanged, so the
    raw v_0 sits wherever the optimiser left it. This reports the invariant
    combination, i.e. the constant term in the Z~ = 1 convention of the
    plain objective sum |G - exp(-Sigma~)|.
    """
    raw = result.params.potential.coefficients.get(0, 0.0)
    return raw - result.params.hbar * result.log_norm / result.time


def write_results_csv(results: list[FitResult], path, header_comment: str | None = None):
    """One row per fitted time; columns cover every exponent seen in the sweep."""
    exponents = sorted({k for r in results for k in r.params.potential.coefficients})
    cols = ["T", "mass"] + [f"v_{k}" for k in exponents] + [
        "log_norm",
        "relative_error",
        "objective",
        "converged",
        "evaluations",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(cols) + "\n")
        for r in results:
            coeffs = r.params.potential.coefficients
            row = [f"{r.time:.17g}", f"{r.params.mass:.17g}"]
            row += [f"{coeffs.get(k, 0.0):.17g}" for k in exponents]
            row += [
                f"{r.log_norm:.17g}",
                f"{r.relative_error:.17g}",
                f"{r.objective:.17g}",
                str(int(r.converged)),
                str(r.evaluations),
            ]
            fh.write(",".join(row) + "\n")
