import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasing.combustion import (
    ORACLE_STEP,
    arrhenius_tau,
    burn_duration,
    ca50_from_wiebe,
    ca50_simplified,
    composite_burn_term,
    compression_trace,
    egr_affine_term,
    ignition_delay,
    soc_full,
    soc_simplified,
    wiebe_burn_fraction,
)
from phasing.errors import CoefficientDomainError, DomainError, NoIgnitionError
from phasing.gas import cylinder_volume, p_ivc, polytropic_to_soi, t_ivc
from phasing.models import EngineGeometry, GasState, WiebeParams
from utils.coefficients_io import default_path, load_coefficients

ENGINE = load_coefficients()
COMB = ENGINE.combustion
GEOM = EngineGeometry()
WIEBE = WiebeParams()


def _ivc_state(p_im=1.5, t_im=300.0, phi=0.7, n=1200.0, egr=0.25):
    cyl = ENGINE.intake[1]
    return GasState(p_ivc(cyl, t_im, n, p_im), t_ivc(cyl, t_im, p_im, phi, n, egr), GEOM.ivc)


def _soi_state(ivc, soi):
    return polytropic_to_soi(ivc, cylinder_volume(GEOM, GEOM.ivc), cylinder_volume(GEOM, soi), COMB.k_c)


def test_wiebe_ca50_factor():
    assert WIEBE.ca50_factor == pytest.approx((math.log(2) / 6.9078) ** (1 / 1.5))
    assert WIEBE.ca50_factor == pytest.approx(0.2159, abs=1e-3)


def test_wiebe_half_burn_at_ca50():
    soc, bd = 2.0, 40.0
    ca50 = ca50_from_wiebe(soc, bd, WIEBE)
    assert wiebe_burn_fraction(ca50, soc, bd, WIEBE) == pytest.approx(0.5)
    assert wiebe_burn_fraction(soc, soc, bd, WIEBE) == 0.0
    assert wiebe_burn_fraction(soc + bd, soc, bd, WIEBE) == pytest.approx(1 - math.exp(-6.9078))


def test_wiebe_rejects_bad_arguments():
    with pytest.raises(DomainError):
        wiebe_burn_fraction(0.0, 1.0, 40.0, WIEBE)
    with pytest.raises(DomainError):
        wiebe_burn_fraction(5.0, 1.0, 0.0, WIEBE)


def test_composite_term_matches_burn_duration():
    c15 = COMB.burn_scale(WIEBE)
    for x_d, phi in [(0.0, 0.5), (0.3, 0.7), (0.59, 0.9)]:
        bd = burn_duration(x_d, phi, c15, COMB)
        assert composite_burn_term(x_d, phi, COMB) == pytest.approx(WIEBE.ca50_factor * bd, rel=1e-12)


def test_burn_term_at_case_one_point():
    # EGR 0.25 plus residual 0.0568 at phi 0.7
    assert composite_burn_term(0.3068, 0.7, COMB) == pytest.approx(10.78, abs=0.05)


def test_ca50_simplified_is_soc_plus_burn_term():
    soi_state = _soi_state(_ivc_state(), -5.0)
    soc = soc_simplified(-5.0, soi_state, 1200.0, 0.25, 0.7, COMB)
    assert ca50_simplified(-5.0, 0.25, 1200.0, 0.7, soi_state, 0.31, COMB) == pytest.approx(
        soc + composite_burn_term(0.31, 0.7, COMB)
    )


def test_ignition_delay_at_case_one_point():
    soi_state = _soi_state(_ivc_state(), -4.8)
    assert ignition_delay(soi_state.pressure, soi_state.temperature, 1200.0, 0.25, 0.7, COMB) == pytest.approx(
        2.04, abs=0.1
    )


@settings(max_examples=100, deadline=None)
@given(p=st.floats(20.0, 120.0), t=st.floats(700.0, 1300.0), dp=st.floats(1.01, 1.5), dt=st.floats(1.01, 1.2))
def test_ignition_delay_shrinks_with_pressure_and_temperature(p, t, dp, dt):
    base = ignition_delay(p, t, 1350.0, 0.25, 0.7, COMB)
    assert base > 0
    assert ignition_delay(p * dp, t, 1350.0, 0.25, 0.7, COMB) < base
    assert ignition_delay(p, t * dt, 1350.0, 0.25, 0.7, COMB) < base


@pytest.mark.parametrize("name", ["published", "engine"])
def test_coefficient_sets_have_physical_trends(name):
    comb = load_coefficients(default_path(name)).combustion
    delays = [ignition_delay(60.0, 1000.0, 1350.0, egr, 0.7, comb) for egr in (0.0, 0.25, 0.5)]
    assert delays[0] < delays[1] < delays[2]
    burns = [composite_burn_term(x_d, 0.7, comb) for x_d in (0.05, 0.3, 0.55)]
    assert burns[0] < burns[1] < burns[2]


def test_ignition_delay_vectorised():
    p = np.array([40.0, 60.0, 80.0])
    delays = ignition_delay(p, 1000.0, 1350.0, 0.25, 0.7, COMB)
    assert delays.shape == (3,)
    assert np.all(np.diff(delays) < 0)


def test_egr_affine_term_must_stay_positive():
    bad = COMB.with_values(["c10", "c11"], [-1.0, 0.1])
    with pytest.raises(CoefficientDomainError):
        egr_affine_term(0.5, bad)
    assert egr_affine_term(0.0, COMB) == pytest.approx(COMB.c11)


def test_compression_trace_sampling():
    ivc = _ivc_state()
    trace = compression_trace(ivc, GEOM, COMB.k_c, -5.0)
    assert trace.crank_angles[0] == pytest.approx(-5.0)
    assert len(trace) == 1421
    assert trace.crank_angles[-1] == pytest.approx(GEOM.evo)
    assert trace.pressures[0] == pytest.approx(_soi_state(ivc, -5.0).pressure)
    # peak pressure at TDC
    assert trace.crank_angles[int(np.argmax(trace.pressures))] == pytest.approx(0.0, abs=1e-6)


def test_compression_trace_rejects_empty_window():
    with pytest.raises(DomainError):
        compression_trace(_ivc_state(), GEOM, COMB.k_c, 140.0)


@pytest.mark.parametrize("soi", [-10.0, -5.0, 0.0])
def test_knock_integral_close_to_closed_form(soi):
    ivc = _ivc_state()
    trace = compression_trace(ivc, GEOM, COMB.k_c, soi, step=ORACLE_STEP)
    full = soc_full(trace, soi, 1200.0, 0.25, 0.7, COMB)
    simple = soc_simplified(soi, _soi_state(ivc, soi), 1200.0, 0.25, 0.7, COMB)
    assert full > soi
    assert abs(full - simple) <= 0.5


def test_knock_integral_steps_agree():
    ivc = _ivc_state()
    coarse = soc_full(compression_trace(ivc, GEOM, COMB.k_c, -5.0), -5.0, 1200.0, 0.25, 0.7, COMB)
    fine = soc_full(compression_trace(ivc, GEOM, COMB.k_c, -5.0, step=ORACLE_STEP), -5.0, 1200.0, 0.25, 0.7, COMB)
    assert coarse == pytest.approx(fine, abs=0.01)


def test_knock_integral_without_ignition():
    sluggish = COMB.with_values(["c11"], [1e3])
    trace = compression_trace(_ivc_state(), GEOM, COMB.k_c, -5.0)
    with pytest.raises(NoIgnitionError):
        soc_full(trace, -5.0, 1200.0, 0.25, 0.7, sluggish)


def test_knock_integral_requires_trace_at_soi():
    trace = compression_trace(_ivc_state(), GEOM, COMB.k_c, -5.0)
    with pytest.raises(DomainError):
        soc_full(trace, -4.0, 1200.0, 0.25, 0.7, COMB)


def test_frozen_state_delay_is_speed_over_arrhenius_rate():
    state = GasState(60.0, 950.0)
    tau = arrhenius_tau(state, 0.25, 0.7, COMB)
    delay = ignition_delay(state.pressure, state.temperature, 1200.0, 0.25, 0.7, COMB)
    assert delay == pytest.approx(1200.0 / tau, rel=1e-12)
