import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swedg.cases import circular_dam_break_case, dam_break_fields, random_state, state_from, wb_bathymetry, wb_mesh
from swedg.limiting import (
    ElementIndicatorLimiter,
    FCTLimiter,
    FixedBlend,
    InfeasibleBoundsError,
    ModalIndicatorParams,
    NodalBounds,
    WetDryLimiter,
    fv_predictor_bounds,
    modal_energy,
    modal_indicator,
    random_nodal_alpha,
    wet_dry_fallback,
    zalesak_fct,
)
from swedg.mesh import build_cartesian, build_interval
from swedg.operators import legendre_vandermonde, sbp
from swedg.physics import PhysicsParams, desingularize
from swedg.semidiscretization import BlendField, Semidiscretization, StageData, assemble, blend_assemble

P = PhysicsParams(g=9.81)


def _stage(sd, u, dt):
    dg, fv = sd.fluxes(u)
    return StageData(u, 0.0, dt, dg, fv, assemble(dg, sd.mesh), assemble(fv, sd.mesh))


def _dam_state(n=8, N=3):
    mesh = build_cartesian((0, 4, 0, 4), n, n, N, "periodic")
    H, v1, v2, b = dam_break_fields(mesh.coords[..., 0], mesh.coords[..., 1])
    h = H - b
    return mesh, state_from(h, h * v1, h * v2), b


# --- bounds ---------------------------------------------------------------------------


def test_bounds_uniform_state():
    mesh = build_cartesian((0, 1, 0, 1), 3, 3, 3)
    u = state_from(np.full(mesh.jac.shape, 0.7), 0.0, 0.0)
    b = np.zeros(mesh.jac.shape)
    sd = Semidiscretization(mesh, b, P)
    st_ = _stage(sd, u, 1e-3)
    bnd = fv_predictor_bounds(u, b, mesh, 1e-3, st_.rhs_fv)
    np.testing.assert_array_equal(bnd.H_min, 0.7)
    np.testing.assert_array_equal(bnd.H_max, 0.7)


def test_bounds_lake_at_rest_collapse():
    mesh = wb_mesh(3)
    b = wb_bathymetry(mesh.coords[..., 0], mesh.coords[..., 1])
    u = state_from(0.45 - b, 0.0, 0.0)
    sd = Semidiscretization(mesh, b, P)
    bnd = fv_predictor_bounds(u, b, mesh, 1e-2, _stage(sd, u, 1e-2).rhs_fv)
    assert np.abs(bnd.H_min - 0.45).max() <= 1e-13
    assert np.abs(bnd.H_max - 0.45).max() <= 1e-13


def test_bounds_two_node_step():
    mesh = build_interval(0.0, 1.0, 1, 1)
    b = np.zeros(mesh.jac.shape)
    u = np.zeros(mesh.jac.shape + (3,))
    u[0, 0, :, 0] = 2.0
    u[0, 1, :, 0] = 4.0
    sd = Semidiscretization(mesh, b, P)
    dt = 1e-9
    bnd = fv_predictor_bounds(u, b, mesh, dt, _stage(sd, u, dt).rhs_fv)
    np.testing.assert_allclose(bnd.H_min, 2.0, atol=1e-6)
    np.testing.assert_allclose(bnd.H_max, 4.0, atol=1e-6)


def test_bounds_need_positive_dt():
    mesh = build_interval(0.0, 1.0, 2, 2)
    u, b = random_state(mesh, np.random.default_rng(0))
    with pytest.raises(ValueError):
        fv_predictor_bounds(u, b, mesh, 0.0, np.zeros_like(u))


# --- Zalesak FCT --------------------------------------------------------------------


def test_fct_keeps_bounds_on_dam_break_stage():
    mesh, u, b = _dam_state()
    sd = Semidiscretization(mesh, b, P)
    dt = 2e-3
    st_ = _stage(sd, u, dt)
    bnd = fv_predictor_bounds(u, b, mesh, dt, st_.rhs_fv)
    alpha = zalesak_fct(st_.dg, st_.fv, bnd, u, b, dt, mesh, st_.rhs_dg)
    alpha.validate()
    H = u[..., 0] + b + dt * blend_assemble(st_.dg, st_.fv, alpha, mesh)[..., 0]
    eps = 1e-12 * (1 + np.abs(H))
    assert np.all(H >= bnd.H_min - eps) and np.all(H <= bnd.H_max + eps)
    # the unlimited update would overshoot
    H_dg = u[..., 0] + b + dt * st_.rhs_dg[..., 0]
    assert np.any(H_dg > bnd.H_max + eps) or np.any(H_dg < bnd.H_min - eps)
    assert alpha.a1.max() > 0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_fct_monotone_envelope(seed):
    mesh, u, b = _dam_state()
    sd = Semidiscretization(mesh, b, P)
    dt = 2e-3
    st_ = _stage(sd, u, dt)
    bnd = fv_predictor_bounds(u, b, mesh, dt, st_.rhs_fv)
    alpha = zalesak_fct(st_.dg, st_.fv, bnd, u, b, dt, mesh)
    rng = np.random.default_rng(seed)
    bigger = BlendField(alpha.a1 + rng.random(alpha.a1.shape) * (1 - alpha.a1),
                        alpha.a2 + rng.random(alpha.a2.shape) * (1 - alpha.a2))
    H = u[..., 0] + b + dt * blend_assemble(st_.dg, st_.fv, bigger, mesh)[..., 0]
    eps = 1e-12 * (1 + np.abs(H))
    assert np.all(H >= bnd.H_min - eps) and np.all(H <= bnd.H_max + eps)


def _linear_profile():
    mesh = build_cartesian((0, 1, 0, 1), 4, 4, 3, "slip-wall")
    u = state_from(1.0 + 0.1 * mesh.coords[..., 0], 0.0, 0.0)
    return mesh, u, np.zeros(mesh.jac.shape)


def test_fct_zero_alpha_away_from_extrema():
    # the predictor smears the extrema at the walls; interior elements need no correction
    mesh, u, b = _linear_profile()
    sd = Semidiscretization(mesh, b, P)
    alpha = FCTLimiter().blend(sd, _stage(sd, u, 1e-4))
    x_mid = np.abs(mesh.coords[..., 0].mean(axis=(1, 2)) - 0.5) < 0.25
    assert x_mid.sum() == 8
    assert np.all(alpha.a1[x_mid] == 0) and np.all(alpha.a2[x_mid] == 0)


def test_fct_leaves_unlimited_elements_bit_identical():
    mesh, u, b = _linear_profile()
    lim = FCTLimiter()
    plain = Semidiscretization(mesh, b, P)(u, 0.0)
    sd = Semidiscretization(mesh, b, P, limiter=lim)
    limited = sd(u, 0.0, 1e-4)
    untouched = (sd.last_alpha.a1.reshape(16, -1).max(axis=1) == 0) & (sd.last_alpha.a2.reshape(16, -1).max(axis=1) == 0)
    assert untouched.any() and not untouched.all()
    np.testing.assert_array_equal(limited[untouched], plain[untouched])


def test_fct_infeasible_bounds():
    mesh, u, b = _dam_state(4, 2)
    st_ = _stage(Semidiscretization(mesh, b, P), u, 1e-3)
    H = u[..., 0] + b
    bad = NodalBounds(H + 1.0, H + 2.0, H)
    with pytest.raises(InfeasibleBoundsError):
        zalesak_fct(st_.dg, st_.fv, bad, u, b, 1e-3, mesh)


def test_fct_needs_dt():
    mesh, u, b = _dam_state(4, 2)
    sd = Semidiscretization(mesh, b, P, limiter=FCTLimiter())
    with pytest.raises(ValueError):
        sd(u, 0.0)


def test_fct_dam_break_twenty_steps_within_bounds():
    case = circular_dam_break_case("new", t_end=2.0, n_per_side=8, N=3)
    case.controls = type(case.controls)(t_end=2.0, cfl=0.4, max_steps=20)
    res, _ = case.run()
    stats = case.limiter.stats
    assert res.steps == 20
    assert stats.checks == 20 * 3 * case.mesh.jac.size
    assert stats.violations == 0


def test_fct_lake_at_rest_any_alpha():
    mesh = wb_mesh(3)
    b = wb_bathymetry(mesh.coords[..., 0], mesh.coords[..., 1])
    u = state_from(0.45 - b, 0.0, 0.0)
    rhs = Semidiscretization(mesh, b, P, limiter=FCTLimiter())(u, 0.0, 1e-3)
    assert np.abs(rhs).max() <= 1e-12


# --- modal indicator ----------------------------------------------------------------


def _from_modes(coeffs, N):
    V = legendre_vandermonde(sbp(N).nodes, N)
    return (V @ coeffs @ V.T)[None]


@pytest.mark.parametrize("N", [2, 3, 4])
def test_modal_indicator_examples(N):
    ops = sbp(N)
    prm = ModalIndicatorParams()
    assert modal_indicator(np.full((1, N + 1, N + 1), 0.3), ops, prm)[0] == 0.0
    top = np.zeros((N + 1, N + 1))
    top[N, 0] = 1.0
    assert modal_indicator(_from_modes(top, N), ops, prm)[0] == prm.alpha_max
    T = prm.threshold(N)
    half = np.zeros((N + 1, N + 1))
    half[0, 0] = np.sqrt(1 - T)
    half[N, 0] = np.sqrt(T)
    h = _from_modes(half, N)
    assert modal_energy(h, ops)[0] == pytest.approx(T, rel=1e-12)
    assert abs(modal_indicator(h, ops, prm)[0] - prm.alpha_max / 2) <= 1e-12


def test_modal_indicator_range_and_smoothing():
    mesh = build_cartesian((0, 1, 0, 1), 4, 4, 3, "periodic")
    h = np.random.default_rng(0).random(mesh.jac.shape)
    a = modal_indicator(h, mesh.ops, mesh=mesh)
    assert np.all((a >= 0) & (a <= 0.5))
    smooth = np.ones(mesh.jac.shape)
    smooth[5] = h[5]
    a = modal_indicator(smooth, mesh.ops, mesh=mesh)
    nb = mesh.neighbor[5]
    assert np.all(a[nb] == 0.5 * a[5]) and a[5] > 0


def test_element_limiter_is_elementwise():
    mesh, u, b = _dam_state(4, 3)
    sd = Semidiscretization(mesh, b, P)
    alpha = ElementIndicatorLimiter().blend(sd, _stage(sd, u, 1e-3))
    assert np.all(np.ptp(alpha.a1.reshape(mesh.n_elements, -1), axis=1) == 0)


# --- wet/dry ------------------------------------------------------------------------


def test_wet_dry_fallback_examples():
    p = PhysicsParams()
    u = state_from(np.full((3, 4, 4), 0.02), 0.0, 0.0)
    assert not wet_dry_fallback(u, p).any()
    u[1, 2, 3, 0] = 5e-5
    np.testing.assert_array_equal(wet_dry_fallback(u, p), [False, True, False])


def test_dry_element_goes_fully_fv():
    mesh = build_cartesian((0, 1, 0, 1), 2, 2, 3, "slip-wall")
    u = state_from(np.full(mesh.jac.shape, 0.5), 0.01, 0.0)
    u[3, ..., 0] = 0.0
    u[3, ..., 1] = 1e-3
    sd = Semidiscretization(mesh, np.zeros(mesh.jac.shape), P)
    alpha = WetDryLimiter().blend(sd, _stage(sd, u, 1e-3))
    assert np.all(alpha.a1[3] == 1) and np.all(alpha.a2[3] == 1)
    assert np.all(alpha.a1[:3] == 0)
    assert np.all(desingularize(u[3], P)[..., 1:] == 0)
    wet = state_from(np.full(mesh.jac.shape, 0.5), 0.0, 0.0)
    assert WetDryLimiter().blend(sd, _stage(sd, wet, 1e-3)) is None


def test_fct_wet_dry_overrides_element():
    mesh = build_cartesian((0, 1, 0, 1), 2, 2, 3, "slip-wall")
    u = state_from(np.full(mesh.jac.shape, 0.5), 0.0, 0.0)
    u[0, 0, 0, 0] = 5e-5
    sd = Semidiscretization(mesh, np.zeros(mesh.jac.shape), P)
    alpha = FCTLimiter(wet_dry=True).blend(sd, _stage(sd, u, 1e-4))
    assert np.all(alpha.a1[0] == 1)


# --- frozen coefficients --------------------------------------------------------------


def test_random_nodal_alpha_reproducible():
    a = random_nodal_alpha(3, 5, 4)
    assert a.shape == (5, 4, 4)
    assert np.all((a >= 0) & (a < 1))
    np.testing.assert_array_equal(a, random_nodal_alpha(3, 5, 4))
    np.testing.assert_array_equal(a[:2], random_nodal_alpha(3, 2, 4))
    assert not np.array_equal(a, random_nodal_alpha(4, 5, 4))


def test_fixed_blend_returns_its_field():
    f = BlendField.constant(2, 3, 0.25)
    assert FixedBlend(f).blend(None, None) is f
