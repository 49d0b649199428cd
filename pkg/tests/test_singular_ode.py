import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sspembed.singular_ode import RHS_LIBRARY, OdeSpec, closed_form, uniqueness_demo, upwind_operator


def test_constant_rhs_gives_half():
    xs = np.linspace(-1, 1, 9)
    assert np.allclose(closed_form(OdeSpec(0.0, 2.0, RHS_LIBRARY["const1"]), xs), 0.5, atol=1e-13)


def test_linear_rhs_gives_third():
    xs = np.linspace(-1, 1, 9)
    assert np.allclose(closed_form(OdeSpec(0.0, 2.0, RHS_LIBRARY["linear"]), xs), xs / 3, atol=1e-13)


def test_limit_at_singular_point():
    assert closed_form(OdeSpec(0.3, 2.0, RHS_LIBRARY["sin"]), 0.3) == pytest.approx(np.sin(0.3) / 2)


def test_homogeneous_mode_blows_up():
    spec = OdeSpec(0.0, 2.0, RHS_LIBRARY["const1"], C=1.0)
    with pytest.raises(ValueError):
        closed_form(spec, 0.0)
    near = closed_form(spec, np.array([1e-3, 1e-2]))
    assert near[0] > 1e5 and near[0] > near[1]


def test_nonpositive_b_rejected():
    with pytest.raises(ValueError):
        closed_form(OdeSpec(0.0, 0.0, RHS_LIBRARY["const1"]), 0.5)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(0.6, 4.0), st.sampled_from(["const1", "linear", "sin"]))
def test_closed_form_satisfies_equation(x0, b, rhs):
    spec = OdeSpec(x0, b, RHS_LIBRARY[rhs])
    xs = x0 + np.array([-0.9, -0.4, 0.3, 0.8])
    e = 1e-5
    du = (closed_form(spec, xs + e) - closed_form(spec, xs - e)) / (2 * e)
    res = (xs - x0) * du + b * closed_form(spec, xs) - spec.h(xs)
    assert np.max(np.abs(res)) <= 1e-8


def test_unique_solution_inside():
    rep = uniqueness_demo(0.0, 2.0, RHS_LIBRARY["const1"], (-1.0, 1.0), 1e-3)
    assert rep.pconvex and rep.solution_space_dim == 0
    assert rep.residual <= 1e-6
    assert np.max(np.abs(rep.solution - 0.5)) <= 1e-4


def test_kernel_outside():
    rep = uniqueness_demo(0.0, 2.0, RHS_LIBRARY["const1"], (1.0, 2.0), 1e-3)
    assert not rep.pconvex and rep.solution_space_dim == 1
    assert rep.singular_values[0] < 1e-8 and rep.singular_gap >= 1e2


def test_zero_rhs_gives_zero():
    rep = uniqueness_demo(0.0, 2.0, RHS_LIBRARY["zero"], (-1.0, 1.0), 1e-2)
    assert np.max(np.abs(rep.solution)) == 0.0


def test_coarse_grid_rejected():
    with pytest.raises(ValueError):
        uniqueness_demo(0.95, 2.0, RHS_LIBRARY["const1"], (-1.0, 1.0), 0.1)


def test_first_order_convergence():
    errs = [uniqueness_demo(0.1, 2.0, RHS_LIBRARY["sin"], (-1.0, 1.0), dx).max_error for dx in (2e-2, 1e-2, 5e-3)]
    assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8


def test_row_count_tracks_p_convexity():
    # stencils lean toward x0: square inside, one row short when x0 is outside
    M, _ = upwind_operator(0.0, 2.0, np.linspace(-1, 1, 11))
    assert M.shape == (11, 11)
    M, where = upwind_operator(0.0, 2.0, np.linspace(1, 2, 11))
    assert M.shape == (10, 11) and 0 not in where
