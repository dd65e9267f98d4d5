"""
Intake-side gas properties: EGR from oxygen sensing, per-cylinder IVC
pressure and temperature, residual/dilution fractions, polytropic
compression to SOI and slider-crank cylinder volume.

The model functions accept scalars or numpy arrays so that calibration can
evaluate a whole dataset in one call.
"""
from __future__ import annotations

import logging
import math
from typing import Union

import numpy as np

from .errors import DomainError, IllConditionedSensingError, ModelDomainError
from .models import EngineGeometry, GasState, IntakeCoefficients

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

SENSOR_TOLERANCE = 0.002
_MIN_O2_SPREAD = 1e-6


def egr_fraction(
    x_o2_amb: float,
    x_o2_int: float,
    x_o2_exh: float,
    *,
    tolerance: float = SENSOR_TOLERANCE,
) -> float:
    """EGR fraction from ambient, intake and exhaust oxygen mole fractions."""
    for name, value in (("x_o2_amb", x_o2_amb), ("x_o2_int", x_o2_int), ("x_o2_exh", x_o2_exh)):
        if not (math.isfinite(value) and 0.0 <= value <= 1.0):
            raise DomainError(f"{name} must lie in [0, 1], got {value!r}")

    spread = x_o2_amb - x_o2_exh
    if spread < _MIN_O2_SPREAD:
        raise IllConditionedSensingError(
            f"ambient and exhaust oxygen fractions too close ({x_o2_amb!r} vs {x_o2_exh!r})"
        )
    if x_o2_int > x_o2_amb + tolerance or x_o2_int < x_o2_exh - tolerance:
        raise DomainError(
            f"intake oxygen fraction {x_o2_int!r} outside [{x_o2_exh!r}, {x_o2_amb!r}] beyond sensor tolerance"
        )
    egr = (x_o2_amb - x_o2_int) / spread
    return min(1.0, max(0.0, egr))


def exhaust_oxygen_fraction(phi: ArrayLike, x_o2_amb: float = 0.2095) -> ArrayLike:
    # lean combustion consumes oxygen in proportion to phi
    return x_o2_amb * (1.0 - np.asarray(phi, dtype=float))


def intake_oxygen_fraction(egr: ArrayLike, x_o2_exh: ArrayLike, x_o2_amb: float = 0.2095) -> ArrayLike:
    return x_o2_amb - np.asarray(egr, dtype=float) * (x_o2_amb - np.asarray(x_o2_exh, dtype=float))


def _unwrap(value: ArrayLike) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def _check_finite(result: ArrayLike, what: str, **inputs) -> ArrayLike:
    if not np.all(np.isfinite(result)):
        raise ModelDomainError(f"{what} produced a non-finite value", inputs)
    return result


def t_ivc(
    coeffs: IntakeCoefficients,
    t_im: ArrayLike,
    p_im: ArrayLike,
    phi: ArrayLike,
    n: ArrayLike,
    egr: ArrayLike,
) -> ArrayLike:
    """In-cylinder temperature at IVC, K."""
    t_im, p_im, phi, n, egr = (np.asarray(v, dtype=float) for v in (t_im, p_im, phi, n, egr))
    if np.any(t_im <= 0) or np.any(p_im <= 0) or np.any(phi <= 0) or np.any(n <= 0):
        raise DomainError("t_ivc inputs t_im, p_im, phi, n must be > 0")
    if np.any(egr < 0) or np.any(egr > 1):
        raise DomainError("egr must lie in [0, 1]")

    c = coeffs
    with np.errstate(all="ignore"):
        poly = c.c1 * t_im**2 + c.c2 * t_im + c.c3
        result = poly * phi**c.c4 * n**c.c5 * p_im**c.c7 / (1.0 + egr) ** c.c6
    return _unwrap(_check_finite(result, "t_ivc", t_im=t_im, p_im=p_im, phi=phi, n=n, egr=egr))


def p_ivc(coeffs: IntakeCoefficients, t_im: ArrayLike, n: ArrayLike, p_im: ArrayLike) -> ArrayLike:
    """In-cylinder pressure at IVC, bar."""
    t_im, n, p_im = (np.asarray(v, dtype=float) for v in (t_im, n, p_im))
    if np.any(t_im <= 0) or np.any(n <= 0) or np.any(p_im <= 0):
        raise DomainError("p_ivc inputs must be > 0")
    with np.errstate(all="ignore"):
        result = t_im**coeffs.c8 * n**coeffs.c9 * p_im
    return _unwrap(_check_finite(result, "p_ivc", t_im=t_im, n=n, p_im=p_im))


def residual_fraction(m_r: float, m_air: float, m_fuel: float, m_egr: float) -> float:
    if min(m_r, m_air, m_fuel, m_egr) < 0:
        raise DomainError("masses must be >= 0")
    total = m_air + m_fuel + m_egr
    if total <= 0:
        raise DomainError("charge mass must be > 0")
    return m_r / total


def dilution_fraction(egr: ArrayLike, x_r: ArrayLike) -> ArrayLike:
    return np.asarray(egr, dtype=float) + np.asarray(x_r, dtype=float)


def polytropic_to_soi(ivc_state: GasState, v_ivc: float, v_soi: float, k_c: float) -> GasState:
    if v_ivc <= 0 or v_soi <= 0:
        raise DomainError("volumes must be > 0")
    if k_c <= 1:
        raise DomainError("k_c must be > 1")
    ratio = v_ivc / v_soi
    return GasState(
        pressure=ivc_state.pressure * ratio**k_c,
        temperature=ivc_state.temperature * ratio ** (k_c - 1.0),
        crank_angle=ivc_state.crank_angle,
    )


def polytropic_arrays(
    p_ivc_: ArrayLike, t_ivc_: ArrayLike, v_ivc: ArrayLike, v_soi: ArrayLike, k_c: float
) -> tuple:
    """Vectorised polytropic_to_soi returning (P_SOI, T_SOI) arrays."""
    ratio = np.asarray(v_ivc, dtype=float) / np.asarray(v_soi, dtype=float)
    return np.asarray(p_ivc_) * ratio**k_c, np.asarray(t_ivc_) * ratio ** (k_c - 1.0)


def cylinder_volume(geom: EngineGeometry, theta: ArrayLike) -> ArrayLike:
    """Cylinder volume in litres at crank angle theta (CAD aTDC)."""
    rad = np.deg2rad(np.asarray(theta, dtype=float))
    r = geom.crank_radius
    rod = geom.rod_length
    # piston distance below TDC, mm
    travel = r + rod - r * np.cos(rad) - np.sqrt(rod**2 - (r * np.sin(rad)) ** 2)
    return _unwrap(geom.clearance_volume + geom.piston_area * travel / 1e6)


__all__ = [
    "egr_fraction",
    "exhaust_oxygen_fraction",
    "intake_oxygen_fraction",
    "t_ivc",
    "p_ivc",
    "residual_fraction",
    "dilution_fraction",
    "polytropic_to_soi",
    "polytropic_arrays",
    "cylinder_volume",
]
