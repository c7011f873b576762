"""Grid-diagonalisation oracle for amplitudes, independent of the closed forms.

Parameters
----------
The Hamiltonian H = -(hbar^2 / 2m) d^2/dx^2 + V(x) is discretised with the
standard 3-point Laplacian and Dirichlet ends, diagonalised with a LAPACK
tridiagonal eigensolver, and amplitudes are assembled from the truncated
spectral sum

    G(b, T; a) = sum_n psi_n(b) psi_n(a) exp(-E_n T / hbar).

Eigenvalues converge with the square of the spacing, so a Richardson pair of
decompositions (refine_energies) upgrades the energies to fourth order when
long times demand it. Off-node endpoints are handled by local cubic
interpolation of the eigenvectors.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .model import ActionParams, Domain, potential_value

TRUNCATION_TAIL = 1e-12


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform spatial grid [x_min, x_max] with n_points nodes."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not (self.x_max > self.x_min):
            raise ValueError("x_max must exceed x_min")
        if self.n_points < 100:
            raise ValueError("grid needs at least 100 points to resolve bound states")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, spacing: float) -> "SpatialGrid":
        n = int(round((x_max - x_min) / spacing)) + 1
        return cls(x_min, x_min + (n - 1) * spacing, n)


def default_grid(domain: Domain, spacing: float = 5e-3, extent: float = 12.0) -> SpatialGrid:
    """Half-line grids start one spacing off the singular origin."""
    if domain is Domain.HALF_LINE:
        return SpatialGrid.from_spacing(spacing, extent, spacing)
    return SpatialGrid.from_spacing(-extent, extent, spacing)


@dataclass(frozen=True)
class TridiagonalOperator:
    diagonal: np.ndarray
    off_diagonal: np.ndarray
    grid: SpatialGrid
    hbar: float


@dataclass(frozen=True)
class SpectralDecomposition:
    """Lowest eigenpairs; wavefunctions normalised to sum psi^2 dx = 1."""

    grid: SpatialGrid
    energies: np.ndarray
    wavefunctions: np.ndarray
    hbar: float


def discretize(params: ActionParams, grid: SpatialGrid) -> TridiagonalOperator:
    """Dirichlet 3-point discretisation of the Hamiltonian on the grid."""
    if params.domain is Domain.HALF_LINE and grid.x_min <= 0.0:
        raise ValueError("half-line grids must start at positive x")
    x = grid.nodes()
    v = potential_value(params.potential, x)
    if not np.all(np.isfinite(v)):
        raise ValueError("potential is singular on the grid")
    kin = params.hbar**2 / (2.0 * params.mass * grid.spacing**2)
    diag = 2.0 * kin + v
    off = np.full(grid.n_points - 1, -kin)
    return TridiagonalOperator(diagonal=diag, off_diagonal=off, grid=grid, hbar=params.hbar)


def spectrum(operator: TridiagonalOperator, n_states: int) -> SpectralDecomposition:
    """Lowest n_states eigenpairs of the discretised Hamiltonian."""
    if n_states < 1 or n_states > operator.grid.n_points - 2:
        raise ValueError(f"n_states must be in [1, {operator.grid.n_points - 2}]")
    energies, vectors = eigh_tridiagonal(
        operator.diagonal,
        operator.off_diagonal,
        select="i",
        select_range=(0, n_states - 1),
    )
    vectors = vectors / math.sqrt(operator.grid.spacing)
    return SpectralDecomposition(
        grid=operator.grid,
        energies=energies,
        wavefunctions=vectors,
        hbar=operator.hbar,
    )


def solve_spectrum(
    params: ActionParams, grid: SpatialGrid | None = None, n_states: int = 64
) -> SpectralDecomposition:
    """Convenience wrapper combining discretize and spectrum."""
    if grid is None:
        grid = default_grid(params.domain)
    return spectrum(discretize(params, grid), n_states)


def refine_energies(
    coarse: SpectralDecomposition, fine: SpectralDecomposition
) -> SpectralDecomposition:
    """Richardson-extrapolate energies from a spacing pair h, h/2.

    Returns the fine decomposition with energies (4 E_fine - E_coarse) / 3,
    accurate to fourth order in the fine spacing.
    """
    if not math.isclose(coarse.grid.spacing, 2.0 * fine.grid.spacing, rel_tol=1e-9):
        raise ValueError("refine_energies needs spacings in ratio 2:1")
    n = min(len(coarse.energies), len(fine.energies))
    improved = (4.0 * fine.energies[:n] - coarse.energies[:n]) / 3.0
    return dataclasses.replace(
        fine, energies=improved, wavefunctions=fine.wavefunctions[:, :n]
    )


def _interpolate_states(dec: SpectralDecomposition, point: float) -> np.ndarray:
    """Cubic 4-point Lagrange interpolation of every eigenvector at one point."""
    g = dec.grid
    if not (g.x_min <= point <= g.x_max):
        raise ValueError(f"point {point} outside the oracle grid [{g.x_min}, {g.x_max}]")
    h = g.spacing
    idx = int(math.floor((point - g.x_min) / h))
    i0 = min(max(idx - 1, 0), g.n_points - 4)
    ts = g.x_min + (i0 + np.arange(4)) * h
    w = np.ones(4)
    for i in range(4):
        for j in range(4):
            if i != j:
                w[i] *= (point - ts[j]) / (ts[i] - ts[j])
    return w @ dec.wavefunctions[i0 : i0 + 4, :]


def amplitude(dec: SpectralDecomposition, a: float, b: float, time: float) -> float:
    """Spectral-sum amplitude G(b, time; a).

    Requires the retained states to cover the requested time: the truncation
    tail exp(-(E_last - E_0) * time / hbar) must be below 1e-12.
    """
    if not (time > 0.0):
        raise ValueError("time must be positive")
    gap = float(dec.energies[-1] - dec.energies[0])
    tail = math.exp(-gap * time / dec.hbar)
    if tail > TRUNCATION_TAIL:
        needed = -math.log(TRUNCATION_TAIL) * dec.hbar / time
        raise ValueError(
            f"spectral truncation tail {tail:.2e} exceeds {TRUNCATION_TAIL:.0e}: "
            f"need E_last - E_0 >= {needed:.1f}, have {gap:.1f}; retain more states"
        )
    psi_a = _interpolate_states(dec, a)
    psi_b = _interpolate_states(dec, b)
    weights = np.exp(-(dec.energies - dec.energies[0]) * time / dec.hbar)
    scale = math.exp(-float(dec.energies[0]) * time / dec.hbar)
    return scale * float(np.sum(psi_a * psi_b * weights))


def write_spectrum_csv(dec: SpectralDecomposition, path) -> None:
    """Dump (n, E_n) rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,energy\n")
        for n, e in enumerate(dec.energies):
            fh.write(f"{n},{e:.17g}\n")
