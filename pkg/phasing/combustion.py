"""
Start of combustion, burn duration and CA50.

Two formulations live here. The knock integral (soc_full) accumulates the
Arrhenius rate over a crank-resolved compression trace and is what the
virtual engine treats as truth. The closed form (soc_simplified,
ca50_simplified) freezes pressure and temperature at SOI and is what the
controllers invert.
"""
from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import CoefficientDomainError, DomainError, NoIgnitionError
from .gas import ArrayLike, cylinder_volume
from .models import CombustionCoefficients, CompressionTrace, EngineGeometry, GasState, WiebeParams

logger = logging.getLogger(__name__)

PRODUCTION_STEP = 0.1
ORACLE_STEP = 0.01


def egr_affine_term(egr: ArrayLike, coeffs: CombustionCoefficients) -> ArrayLike:
    term = coeffs.c10 * np.asarray(egr, dtype=float) + coeffs.c11
    if np.any(term <= 0):
        raise CoefficientDomainError(f"c10*EGR + c11 must be > 0 (c10={coeffs.c10}, c11={coeffs.c11})")
    return term


def arrhenius_tau(state: GasState, egr: float, phi: float, coeffs: CombustionCoefficients) -> float:
    term = float(egr_affine_term(egr, coeffs))
    return phi**coeffs.c12 * math.exp(-coeffs.c13 * state.pressure**coeffs.c14 / state.temperature) / term


def compression_trace(
    ivc_state: GasState,
    geom: EngineGeometry,
    k_c: float,
    start: float,
    stop: Optional[float] = None,
    step: float = PRODUCTION_STEP,
) -> CompressionTrace:
    """Polytropic P(theta), T(theta) from the IVC state, sampled from `start`."""
    stop = geom.evo if stop is None else stop
    if step <= 0 or stop <= start:
        raise DomainError("compression trace needs step > 0 and stop > start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    theta = start + step * np.arange(count)
    ratio = cylinder_volume(geom, geom.ivc) / cylinder_volume(geom, theta)
    return CompressionTrace(
        crank_angles=theta,
        pressures=ivc_state.pressure * ratio**k_c,
        temperatures=ivc_state.temperature * ratio ** (k_c - 1.0),
    )


def soc_full(
    trace: CompressionTrace,
    soi: float,
    n: float,
    egr: float,
    phi: float,
    coeffs: CombustionCoefficients,
) -> float:
    """Crank angle where the knock integral first reaches one."""
    theta = trace.crank_angles
    if abs(theta[0] - soi) > 1e-9:
        raise DomainError(f"trace starts at {theta[0]!r}, expected SOI {soi!r}")
    if n <= 0 or phi <= 0:
        raise DomainError("n and phi must be > 0")

    term = float(egr_affine_term(egr, coeffs))
    rate = phi**coeffs.c12 * np.exp(-coeffs.c13 * trace.pressures**coeffs.c14 / trace.temperatures) / (term * n)
    accumulated = cumulative_trapezoid(rate, theta, initial=0.0)

    i = int(np.searchsorted(accumulated, 1.0, side="left"))
    if i >= accumulated.size:
        raise NoIgnitionError(
            f"knock integral reached {accumulated[-1]:.4f} by {theta[-1]:.1f} CAD without ignition"
        )
    lo, hi = accumulated[i - 1], accumulated[i]
    return float(theta[i - 1] + (1.0 - lo) / (hi - lo) * (theta[i] - theta[i - 1]))


def ignition_delay(
    p_soi: ArrayLike,
    t_soi: ArrayLike,
    n: ArrayLike,
    egr: ArrayLike,
    phi: ArrayLike,
    coeffs: CombustionCoefficients,
) -> ArrayLike:
    """SOC - SOI with pressure and temperature frozen at SOI."""
    p_soi, t_soi, n, phi = (np.asarray(v, dtype=float) for v in (p_soi, t_soi, n, phi))
    delay = egr_affine_term(egr, coeffs) * n * phi ** (-coeffs.c12) * np.exp(coeffs.c13 * p_soi**coeffs.c14 / t_soi)
    return float(delay) if np.ndim(delay) == 0 else delay


def soc_simplified(
    soi: float,
    soi_state: GasState,
    n: float,
    egr: float,
    phi: float,
    coeffs: CombustionCoefficients,
) -> float:
    return soi + ignition_delay(soi_state.pressure, soi_state.temperature, n, egr, phi, coeffs)


def burn_duration(x_d: ArrayLike, phi: ArrayLike, c15: float, coeffs: CombustionCoefficients) -> ArrayLike:
    x_d, phi = np.asarray(x_d, dtype=float), np.asarray(phi, dtype=float)
    if np.any(x_d < 0) or np.any(phi <= 0) or c15 <= 0:
        raise DomainError("burn_duration needs x_d >= 0, phi > 0 and c15 > 0")
    bd = c15 * (1.0 + x_d) ** coeffs.c16 * phi**coeffs.c17
    return float(bd) if np.ndim(bd) == 0 else bd


def composite_burn_term(x_d: ArrayLike, phi: ArrayLike, coeffs: CombustionCoefficients) -> ArrayLike:
    """CA50 - SOC as folded into c18."""
    term = coeffs.c18 * (1.0 + np.asarray(x_d, dtype=float)) ** coeffs.c16 * np.asarray(phi, dtype=float) ** coeffs.c17
    return float(term) if np.ndim(term) == 0 else term


def wiebe_burn_fraction(theta: ArrayLike, soc: float, bd: float, wiebe: WiebeParams) -> ArrayLike:
    if bd <= 0:
        raise DomainError("burn duration must be > 0")
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < soc):
        raise DomainError("burn fraction is undefined before SOC")
    xb = 1.0 - np.exp(-wiebe.a * ((theta - soc) / bd) ** wiebe.b)
    return float(xb) if np.ndim(xb) == 0 else xb


def ca50_from_wiebe(soc: float, bd: float, wiebe: WiebeParams) -> float:
    if bd < 0:
        raise DomainError("burn duration must be >= 0")
    return soc + wiebe.ca50_factor * bd


def ca50_simplified(
    soi: float,
    egr: float,
    n: float,
    phi: float,
    soi_state: GasState,
    x_d: float,
    coeffs: CombustionCoefficients,
) -> float:
    return soc_simplified(soi, soi_state, n, egr, phi, coeffs) + composite_burn_term(x_d, phi, coeffs)


__all__ = [
    "PRODUCTION_STEP",
    "egr_affine_term",
    "ORACLE_STEP",
    "arrhenius_tau",
    "compression_trace",
    "soc_full",
    "ignition_delay",
    "soc_simplified",
    "burn_duration",
    "composite_burn_term",
    "wiebe_burn_fraction",
    "ca50_from_wiebe",
    "ca50_simplified",
]
