"""Log-gamma and the modified Bessel function I_nu for real order.

The propagator of the inverse-square family needs I_nu at non-integer orders
nu in [0, 10] over arguments spanning z ~ 1e-8 (long times) to z ~ 1e4 (short
times), always to relative accuracy better than 1e-10 and without overflow.
Both regimes are covered by classical expansions:

* ascending power series, DLMF 10.25.2, for small and moderate z;
* the large-argument asymptotic expansion, DLMF 10.40.1, beyond the
  crossover z > max(30, 2 nu^2).

Results are returned in exponentially scaled and logarithmic form so callers
can stay in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

SERIES_RELATIVE_CUTOFF = 1e-17
_MAX_SERIES_TERMS = 20000


@dataclass(frozen=True)
class BesselResult:
    """I_nu(z) in overflow-safe form.

    scaled_value is exp(-z) * I_nu(z); log_value is ln I_nu(z).
    """

    scaled_value: float
    log_value: float


def ln_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0.

    Thin validated wrapper over the C library routine, which is accurate to a
    few ulp over the whole positive axis.
    """
    x = float(x)
    if not (x > 0.0) or not math.isfinite(x):
        raise ValueError(f"ln_gamma requires finite x > 0, got {x}")
    return math.lgamma(x)


def asymptotic_crossover(nu: float) -> float:
    """Argument above which the large-z expansion is used."""
    return max(30.0, 2.0 * nu * nu)


def bessel_i(nu: float, z: float) -> BesselResult:
    """Modified Bessel function I_nu(z) for nu >= 0, z >= 0.

    Branch selection follows asymptotic_crossover(nu); the two branches agree
    to better than 1e-10 at the seam, which the test suite pins down against
    an arbitrary-precision reference.
    """
    nu = float(nu)
    z = float(z)
    if nu < 0.0 or not math.isfinite(nu):
        raise ValueError(f"order must satisfy nu >= 0, got {nu}")
    if z < 0.0 or not math.isfinite(z):
        raise ValueError(f"argument must satisfy z >= 0, got {z}")
    if z == 0.0:
        if nu == 0.0:
            return BesselResult(scaled_value=1.0, log_value=0.0)
        return BesselResult(scaled_value=0.0, log_value=-math.inf)
    if z > asymptotic_crossover(nu):
        log_value = _log_iv_asymptotic(nu, z)
    else:
        log_value = _log_iv_series(nu, z)
    return BesselResult(scaled_value=math.exp(log_value - z), log_value=log_value)


def _log_iv_series(nu: float, z: float) -> float:
    # I_nu(z) = (z/2)^nu / Gamma(nu+1) * sum_k t_k,
    # t_0 = 1, t_{k+1} = t_k * (z^2/4) / ((k+1)(nu+k+1)): all terms positive.
    q = 0.25 * z * z
    term = 1.0
    total = 1.0
    for k in range(_MAX_SERIES_TERMS):
        term *= q / ((k + 1.0) * (nu + k + 1.0))
        total += term
        if term < SERIES_RELATIVE_CUTOFF * total:
            break
    else:
        raise RuntimeError(f"Bessel series failed to converge for nu={nu}, z={z}")
    return nu * math.log(0.5 * z) - math.lgamma(nu + 1.0) + math.log(total)


def _log_iv_asymptotic(nu: float, z: float) -> float:
    # I_nu(z) ~ e^z / sqrt(2 pi z) * sum_k t_k with
    # t_0 = 1, t_k = t_{k-1} * ((2k-1)^2 - 4 nu^2) / (8 k z); truncated at the
    # smallest term, which bounds the error of the divergent tail.
    mu = 4.0 * nu * nu
    term = 1.0
    total = 1.0
    prev = math.inf
    for k in range(1, 200):
        term *= ((2.0 * k - 1.0) ** 2 - mu) / (8.0 * k * z)
        if abs(term) >= prev:
            break
        total += term
        prev = abs(term)
        if abs(term) < SERIES_RELATIVE_CUTOFF * abs(total):
            break
    return z + math.log(total) - 0.5 * math.log(2.0 * math.pi * z)
