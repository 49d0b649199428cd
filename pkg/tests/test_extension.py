import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sspembed.acceptance import manufactured_q1_system
from sspembed.core import LinearSystemField, PolynomialJet, ball_samples, ode_system
from sspembed.extension import (AdmissibleParams, RadialExtension, build_extended_system, extend_remainder,
                                extension_constants, find_p_convex_radius, smooth_cutoff, taylor_split)


def scalar_system(A, B, n=1):
    return LinearSystemField(n=n, s=1, A=A, B=B, h=lambda x: np.zeros(np.shape(x)[:-1] + (1,)))


def test_split_of_pure_linear_coefficient():
    jet = taylor_split(ode_system(0.0, 2.0), [0.0])
    assert jet.Abar[0, 0, 0] == 0 and jet.Abar_deriv[0, 0, 0, 0] == 1
    assert np.max(np.abs(jet.Ahat(np.linspace(-1, 1, 7)[:, None]))) == 0


def test_split_of_cubic_coefficient():
    sys = scalar_system(lambda x: (x[..., :1] + x[..., :1] ** 3)[..., None, None], lambda x: np.ones(x.shape[:-1] + (1, 1)))
    jet = taylor_split(sys, [0.0])
    assert jet.Abar_deriv[0, 0, 0, 0] == pytest.approx(1.0, abs=1e-9)
    ys = np.linspace(-0.1, 0.1, 11)[:, None]
    rem = jet.Ahat(ys)[..., 0, 0, 0]
    assert np.allclose(rem, ys[:, 0] ** 3, atol=1e-10)


def test_split_of_b_linear_part():
    M = np.array([[0.0, 1.0], [2.0, 0.0]])
    sys = LinearSystemField(n=2, s=2, A=lambda x: np.zeros(np.shape(x)[:-1] + (2, 2, 2)),
                            B=lambda x: np.eye(2) + x[..., 0, None, None] * M,
                            h=lambda x: np.zeros(np.shape(x)[:-1] + (2,)))
    jet = taylor_split(sys, [0.0, 0.0])
    assert np.array_equal(jet.Bbar, np.eye(2))
    assert np.allclose(jet.Bhat(np.array([[0.3, 0.7]])), 0.3 * M)


def test_split_reconstruction_is_exact():
    sys = manufactured_q1_system()
    jet = taylor_split(sys, [0.0, 0.0])
    x = ball_samples(2, 0.5, 30)
    assert np.allclose(jet.linear_A(x) + jet.Ahat(x), sys.A(x), atol=1e-15)


def test_cutoff_profile():
    t = np.array([0.0, 1.0, 1.5, 1.75, 2.0, 3.0])
    c = smooth_cutoff(t)
    assert c[0] == c[1] == c[2] == 1.0 and c[4] == c[5] == 0.0 and 0 < c[3] < 1


def test_constant_extension():
    ext = RadialExtension(lambda x: np.full(np.shape(x)[:-1], 2.0), 1.0, 2)
    assert np.allclose(ext(np.array([[0.5, 0.0], [1.2, 0.0], [1.49, 0.0]])), 2.0)
    assert ext(np.array([[2.5, 0.0]]))[0] == 0.0
    assert np.max(np.abs(ext(ball_samples(2, 3.0, 200)))) <= 2.0 + 1e-12


def test_extension_is_c1_across_sphere():
    ext = RadialExtension(lambda x: np.sum(x * x, axis=-1), 1.0, 2)
    e = 1e-5
    inside, outside = np.array([[1 - e, 0.0]]), np.array([[1 + e, 0.0]])
    assert abs(ext(inside)[0] - ext(outside)[0]) < 1e-4
    assert np.allclose(ext.gradient(inside), ext.gradient(outside), atol=1e-3)


def test_identity_on_ball():
    f = lambda x: np.sin(x[..., 0]) * np.cos(x[..., 1])
    ext = RadialExtension(f, 0.7, 2)
    x = ball_samples(2, 0.7, 100)
    assert np.max(np.abs(ext(x) - f(x))) == 0


def test_constants_rescale():
    consts = [extension_constants(2, r) for r in (0.5, 1.0, 2.0)]
    for k in (0, 1):
        vals = [c[k] for c in consts]
        assert max(vals) / min(vals) - 1 < 0.05


def test_quadratic_probe_constant_is_finite():
    res = extend_remainder(lambda x: np.sum(x * x, axis=-1), 1.0, 2)
    assert np.isfinite(res.constants[1]) and res.constants[1] > 0


def test_alpha_floor():
    with pytest.raises(ValueError):
        AdmissibleParams(r=1, rho=1, alpha=3, delta=0.1, M0=1, M1=1).check(2)
    AdmissibleParams(r=1, rho=1, alpha=4, delta=0.1, M0=1, M1=1).check(2)


def test_ode_extension_bounds():
    ext = build_extended_system(taylor_split(ode_system(0.0, 2.0), [0.0]))
    assert ext.lambda0_half == 1.5 and ext.lambda1_half == 1.0
    assert ext.certified and ext.measured_q0_min == pytest.approx(3.0)


def test_small_quadratic_remainder_certified():
    eps = 1e-3
    sys = scalar_system(lambda x: (x[..., :1] + eps * x[..., :1] ** 2)[..., None, None],
                        lambda x: 2 * np.ones(x.shape[:-1] + (1, 1)))
    ext = build_extended_system(taylor_split(sys, [0.0]))
    assert ext.certified


def test_radius_for_ode_contains_singular_point():
    ext = build_extended_system(taylor_split(ode_system(0.0, 2.0), [0.0]))
    rep = find_p_convex_radius(ext, [0.1, 0.5, 1.0])
    assert rep.radius == 0.1
    assert rep.min_eigenvalues == pytest.approx([0.1, 0.5, 1.0])


def test_pure_linear_jet_boundary_eigenvalue_is_radius():
    ext = build_extended_system(taylor_split(manufactured_q1_system(), [0.0, 0.0]))
    rep = find_p_convex_radius(ext, [0.5, 1.0, 2.0])
    assert rep.min_eigenvalues == pytest.approx([0.5, 1.0, 2.0])
    for m, floor in zip(rep.min_eigenvalues, rep.predicted_floor):
        assert m >= floor


def test_constant_part_delays_p_convexity():
    radii = []
    for c in (0.0, 0.5, 1.0):
        jet = PolynomialJet(A0=np.full((1, 1, 1), c), A1=np.ones((1, 1, 1, 1)), B0=np.full((1, 1), 2.0),
                            B1=np.zeros((1, 1, 1)), h0=np.zeros(1), h1=np.zeros((1, 1)))
        ext = build_extended_system(taylor_split(LinearSystemField.from_jet(jet), [0.0]))
        radii.append(find_p_convex_radius(ext, np.linspace(0.05, 3.0, 60)).radius)
    assert radii[0] < radii[1] < radii[2]


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 3.0))
def test_extension_agrees_inside_for_any_radius(r):
    f = lambda x: np.exp(x[..., 0]) + x[..., 1] ** 2
    ext = RadialExtension(f, r, 2)
    x = ball_samples(2, r, 50)
    assert np.array_equal(ext(x), f(x))
