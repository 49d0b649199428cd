import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sspembed.linear_solver import Grid
from sspembed.nash_moser import (MODEL_PROBLEMS, IterationConfig, IterationFailure, NormLadder, Smoother, bump,
                                 default_probes, dyadic_scales, iterate, tame_check, verify_smoothing_estimates)


@pytest.fixture(scope="module")
def line():
    grid = Grid.box([0.0], [1.0], 1.0 / 400)
    return grid, NormLadder(grid, 2), Smoother(grid)


def test_bump_support_and_peak():
    r = np.linspace(-1.5, 1.5, 301)
    b = bump(r)
    assert np.all(b[np.abs(r) >= 1] == 0)
    assert b.max() == pytest.approx(np.exp(-1.0))


@given(st.sampled_from([2.0, 4.0, 8.0, 16.0, 1e4]))
def test_kernel_unit_mass(t):
    sm = Smoother(Grid.box([0.0], [1.0], 1.0 / 200))
    assert sm.kernel(t).sum() == pytest.approx(1.0, abs=1e-14)
    assert sm.discrete_mass(t) == pytest.approx(1.0, abs=1e-14)


def test_tiny_kernel_is_identity(line):
    grid, _, sm = line
    u = np.sin(7 * grid.nodes[:, 0])
    assert np.array_equal(sm.smooth(u, 1e6), u)


def test_smoothing_preserves_constants(line):
    grid, _, sm = line
    u = np.full(grid.size, 3.25)
    assert np.max(np.abs(sm.smooth(u, 4.0) - 3.25)) <= 1e-13


def test_kernel_too_wide(line):
    grid = Grid.box([0.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        Smoother(grid).smooth(np.zeros(grid.size), 0.5)
    with pytest.raises(ValueError):
        Smoother(grid).kernel(0.0)


def test_smoothing_vector_valued_and_two_dimensional():
    grid = Grid.box([0.0, 0.0], [1.0, 1.0], 1.0 / 40)
    sm = Smoother(grid)
    u = np.stack([np.sin(grid.nodes[:, 0]), np.cos(grid.nodes[:, 1])], axis=1)
    out = sm.smooth(u, 4.0)
    assert out.shape == u.shape
    assert np.allclose(out[:, 0], sm.smooth(u[:, 0], 4.0))


def test_dyadic_scales():
    grid = Grid.box([0.0], [1.0], 1.0 / 400)
    assert dyadic_scales(grid) == [2.0, 4.0, 8.0, 16.0, 32.0]


def test_ladder_rejects_ball_and_bad_order():
    with pytest.raises(ValueError):
        NormLadder(Grid.ball(2, 0.5, 0.05))
    ladder = NormLadder(Grid.box([0.0], [1.0], 0.01), 2)
    with pytest.raises(ValueError):
        ladder.norm(np.zeros(ladder.grid.size), 3)


def test_high_frequency_damped_more(line):
    grid, ladder, sm = line
    x = grid.nodes[:, 0]
    lo, hi = np.sin(2 * np.pi * x), np.sin(50 * np.pi * x)
    gain = lambda u: ladder.norm(sm.smooth(u, 8.0), 0) / ladder.norm(u, 0)
    assert gain(hi) < 0.5 * gain(lo)


def test_smoothing_constants_grid_independent():
    # frozen: spread between 200 and 800 cells below 10% for every pair
    pairs = ((0, 0), (0, 1), (1, 0), (1, 2))
    scales = (2.0, 4.0, 8.0, 16.0)
    per_grid = []
    for cells in (200, 400, 800):
        grid = Grid.box([0.0], [1.0], 1.0 / cells)
        per_grid.append(verify_smoothing_estimates(NormLadder(grid, 2), Smoother(grid), default_probes(grid, 42),
                                                   pairs, scales))
    for idx in range(len(pairs)):
        for kind in ("approximation", "smoothing"):
            vals = [getattr(g[idx], kind) for g in per_grid]
            assert min(vals) > 0
            assert max(vals) / min(vals) - 1 < 0.1


def test_smoothing_pair_beyond_ladder(line):
    _, ladder, sm = line
    with pytest.raises(ValueError):
        verify_smoothing_estimates(ladder, sm, [np.zeros(ladder.grid.size)], [(0, 3)])


def test_iteration_converges_to_exact(line):
    grid, ladder, sm = line
    x = grid.nodes[:, 0]
    f = 5e-4 * np.sin(2 * np.pi * x) + 4e-4
    model = MODEL_PROBLEMS["quadratic"]
    res = iterate(model.phi, model.right_inverse, np.zeros_like(f), f, ladder, sm)
    assert res.converged and len(res.scales) <= 8
    assert res.residuals[-1] <= 1e-8
    assert np.max(np.abs(res.u - model.exact(f))) <= 1e-8
    assert res.scales == [IterationConfig().scale(m) for m in range(len(res.scales))]


def test_iteration_linear_model(line):
    grid, ladder, sm = line
    f = 1e-3 * np.cos(np.pi * grid.nodes[:, 0])
    model = MODEL_PROBLEMS["linear"]
    res = iterate(model.phi, model.right_inverse, np.zeros_like(f), f, ladder, sm)
    assert res.converged


def test_iteration_already_solved(line):
    grid, ladder, sm = line
    res = iterate(lambda u: u, lambda u, h: h, np.zeros(grid.size), np.zeros(grid.size), ladder, sm)
    assert res.converged and res.scales == []


def test_iteration_rejects_large_data(line):
    grid, ladder, sm = line
    model = MODEL_PROBLEMS["quadratic"]
    with pytest.raises(ValueError):
        iterate(model.phi, model.right_inverse, np.zeros(grid.size), np.ones(grid.size), ladder, sm)


def test_iteration_reports_divergence(line):
    grid, ladder, sm = line
    f = 1e-3 * np.ones(grid.size)
    with pytest.raises(IterationFailure) as info:
        iterate(lambda u: u, lambda u, h: -1e4 * h, np.zeros(grid.size), f, ladder, sm)
    assert len(info.value.result.residuals) >= 2


def test_iteration_reports_solver_failure(line):
    grid, ladder, sm = line

    def broken(u, h):
        raise np.linalg.LinAlgError("singular")

    with pytest.raises(IterationFailure, match="linear solve failed"):
        iterate(lambda u: u, broken, np.zeros(grid.size), 1e-3 * np.ones(grid.size), ladder, sm)


def test_config_validation():
    for bad in (dict(t0=1.0), dict(kappa=2.0), dict(alpha=-1)):
        with pytest.raises(ValueError):
            IterationConfig(**bad)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.2), st.integers(1, 6))
def test_tame_constant_bounded(amp, freq):
    grid = Grid.box([0.0], [1.0], 1.0 / 200)
    ladder = NormLadder(grid, 2)
    x = grid.nodes[:, 0]
    u = amp * np.cos(3 * x)
    h = np.sin(freq * np.pi * x)
    rep = tame_check(MODEL_PROBLEMS["quadratic"].right_inverse, [(u, h)], np.zeros_like(x), 1, 0, ladder)
    # |h/(1+2u)|_1 <= |h|_1 * sup|1/(1+2u)| + |h|_0 * sup|d(1/(1+2u))|
    assert rep.constant <= 1 / (1 - 2 * amp) ** 2 * 3


def test_tame_order_limit(line):
    _, ladder, _ = line
    with pytest.raises(ValueError):
        tame_check(MODEL_PROBLEMS["linear"].right_inverse, [], np.zeros(ladder.grid.size), 2, 1, ladder)
