import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sspembed import embedding_jets as ej
from sspembed.acceptance import NONZERO_SIGNATURES, random_congruent_rhat

sigmas = st.floats(0.01, 0.49).flatmap(lambda s: st.sampled_from([s, -s]))


def random_rpair(rng):
    rp = rng.standard_normal((3, 3, 3))
    rp = rp + np.swapaxes(rp, 0, 1)
    for p in range(3):
        rp[p, p, p] = -sum(rp[p, m, m] for m in range(3) if m != p)
    return rp


def test_symmetric_cubic_roundtrip():
    rng = np.random.default_rng(1)
    for n in (2, 3):
        vals = rng.standard_normal(len(ej.cubic_order(n)))
        T = ej.symmetric_cubic(vals, n)
        assert ej.symmetry_defect(T) == 0
        assert np.allclose(ej.cubic_components(T), vals)


def test_riemann_pair_roundtrip_and_symmetries():
    rng = np.random.default_rng(2)
    Rhat = rng.standard_normal((3, 3))
    Rhat = Rhat + Rhat.T
    R = ej.riemann_from_pairs(Rhat)
    assert np.allclose(R, -np.swapaxes(R, 0, 1))
    assert np.allclose(R, np.transpose(R, (2, 3, 0, 1)))
    assert np.allclose(R + np.transpose(R, (0, 2, 3, 1)) + np.transpose(R, (0, 3, 1, 2)), 0)
    assert np.allclose(ej.pairs_from_riemann(R), Rhat)


def test_gauss_tensor_2d_normal_form():
    for K in (1.0, -3.0, 0.2):
        sff, annih = ej.normal_form_2d(K)
        assert ej.gauss_tensor(sff.H) == pytest.approx(ej.CurvatureJet2D(K).riemann())
        assert np.max(np.abs(np.einsum("kij,aij->ka", annih.A, sff.H))) == 0


def test_normal_form_rejects_flat():
    with pytest.raises(ValueError):
        ej.normal_form_2d(0.0)


@given(sigmas)
def test_normal_annihilator_kills_hbar(sigma):
    A, Hb = ej.normal_annihilator_3d(sigma), ej.hbar_basis(sigma)
    assert np.max(np.abs(np.einsum("kij,aij->ka", A, Hb))) <= 1e-15
    assert ej.annihilator_kernel(Hb).shape == (1, 3, 3, 3)


@settings(max_examples=50)
@given(sigmas, st.integers(0, 2**31))
def test_gram_formula_matches_gauss_tensor(sigma, seed):
    # closed form Rhat(G) against the Gauss tensor of gamma Hbar
    gamma = np.random.default_rng(seed).standard_normal((3, 3))
    H = np.einsum("ab,bij->aij", gamma, ej.hbar_basis(sigma))
    direct = ej.pairs_from_riemann(ej.gauss_tensor(H))
    assert np.allclose(direct, ej.rhat_from_gram(gamma.T @ gamma, sigma), atol=1e-12)


@settings(max_examples=200)
@given(st.floats(-0.499, 0.999), sigmas)
def test_equiangular_eigenvalues(phi, sigma):
    ex = ej.rhat_example(phi, sigma)
    assert np.allclose(np.sort(ex.numeric_eigenvalues), ex.closed_form_eigenvalues, atol=1e-10)


def test_signature_tables():
    # (phi regions in increasing order) for sigma = 0.3 and sigma = -0.25
    assert [s for _, s in ej.signature_sweep(0.3)] == [(0, 3), (0, 1), (2, 1), (2, 0), (3, 0)]
    assert [s for _, s in ej.signature_sweep(-0.25)] == [(0, 3), (0, 2), (1, 2), (1, 0), (3, 0)]


def test_signature_breakpoints_closed_form():
    assert ej.signature_breakpoints(0.3) == pytest.approx((-0.3 / 1.3, 0.3 * 2.3 / 1.18))
    assert ej.signature_breakpoints(-0.25) == pytest.approx((-0.25 * 1.75 / 1.125, 0.25 / 0.75))


def test_rhat_example_domain():
    for phi, sigma in ((-0.5, 0.3), (1.0, 0.3), (0.2, 0.5), (0.2, 0.0)):
        with pytest.raises(ValueError):
            ej.rhat_example(phi, sigma)


@pytest.mark.parametrize("sigma", [0.1, 0.25, 0.4, -0.1, -0.25, -0.4])
def test_explicit_matrices_match_derived(sigma):
    _, reduced = ej.reduced_g_matrices(ej.hbar_basis(sigma), sigma)
    for derived, explicit in zip(reduced, ej.gbar_matrices(sigma)):
        assert np.max(np.abs(derived - explicit)) <= 1e-15


@pytest.mark.parametrize("sigma", [0.1, 0.25, 0.4, -0.1, -0.25, -0.4])
def test_minor_rank_and_corrected_determinant(sigma):
    cert = ej.gbar_rank_certificate(sigma)
    assert cert.rank == 15 and cert.certified
    assert cert.corrected_relative_error <= 1e-12
    # the two closed forms differ by exactly one factor of s^2 + s + 1
    assert cert.det_submatrix / cert.closed_form == pytest.approx(sigma ** 2 + sigma + 1, rel=1e-12)


def test_bianchi_rejected():
    rp = random_rpair(np.random.default_rng(3))
    rp[0, 0, 0] += 1.0
    with pytest.raises(ValueError, match="Bianchi"):
        ej.CurvatureJet3D.from_pair_derivatives(np.eye(3), rp)


def test_pair_derivative_roundtrip():
    rp = random_rpair(np.random.default_rng(4))
    jet = ej.CurvatureJet3D.from_pair_derivatives(np.eye(3), rp)
    assert np.allclose(jet.pair_derivatives(), rp)
    assert np.allclose(ej.pairs_from_riemann(jet.r_tensor()), rp)


def test_transformed_is_tensorial():
    rng = np.random.default_rng(5)
    jet = ej.CurvatureJet3D.from_pair_derivatives(random_congruent_rhat((2, 1), rng), random_rpair(rng))
    T = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    back = jet.transformed(T).transformed(np.linalg.inv(T))
    assert np.allclose(back.Rhat, jet.Rhat) and np.allclose(back.r, jet.r)


def test_curvature_validation():
    with pytest.raises(ValueError):
        ej.CurvatureJet3D(np.array([[1.0, 2.0, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(ValueError):
        ej.CurvatureJet3D(np.eye(3), np.zeros(14))


@pytest.mark.parametrize("target", NONZERO_SIGNATURES)
def test_gauss_solve_every_signature(target):
    rng = np.random.default_rng(sum(target) * 7 + target[0])
    Rhat = random_congruent_rhat(target, rng)
    sff = ej.solve_gauss_3d(ej.CurvatureJet3D(Rhat))
    scale = max(1.0, np.max(np.abs(Rhat)))
    assert np.max(np.abs(ej.gauss_tensor(sff.input_H()) - ej.riemann_from_pairs(Rhat))) <= 1e-9 * scale
    assert np.linalg.det(sff.frame) > 0
    assert (sff.sigma < 0) == (target == (1, 0))


def test_sign_rule():
    with pytest.raises(ej.SignRuleError):
        ej.solve_gauss_3d(ej.CurvatureJet3D(np.diag([1.0, 0, 0])), sigma=0.3)
    with pytest.raises(ej.SignRuleError):
        ej.solve_gauss_3d(ej.CurvatureJet3D(np.diag([-1.0, 0, 0])), sigma=-0.3)
    with pytest.raises(ValueError):
        ej.solve_gauss_3d(ej.CurvatureJet3D(np.zeros((3, 3))))


def test_sff_validation():
    H = np.array([[[1.0, 0], [0, 1]]])
    with pytest.raises(ValueError, match="symmetric"):
        ej.SffJet(2, np.array([[[1.0, 1], [0, 1]]]), np.zeros((1, 2, 2, 2)))
    h = np.zeros((1, 2, 2, 2))
    h[0, 0, 0, 1] = 1.0
    with pytest.raises(ValueError, match="Codazzi"):
        ej.SffJet(2, H, h)
    with pytest.raises(ValueError, match="degenerate"):
        ej.SffJet(2, np.zeros((1, 2, 2)), np.zeros((1, 2, 2, 2)))


def test_annihilator_validation():
    A = np.zeros((2, 2, 2))
    A[0, 0, 1] = 1.0
    with pytest.raises(ValueError):
        ej.AnnihilatorJet(A)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5).flatmap(lambda k: st.sampled_from([k, -k])), st.floats(-2, 2), st.floats(-2, 2),
       st.floats(0.2, 4))
def test_derivative_constraints_2d(K, k1, k2, lam):
    sff, annih = ej.normal_form_2d(K)
    sol = ej.solve_derivative_constraints(ej.CurvatureJet2D(K, k1, k2), sff, annih, lam)
    assert max(sol.residuals.values()) <= 1e-10 * max(1.0, abs(k1), abs(k2), lam)


@pytest.mark.parametrize("target", NONZERO_SIGNATURES)
def test_derivative_constraints_3d(target):
    rng = np.random.default_rng(11 + 3 * target[0] + target[1])
    curv = ej.CurvatureJet3D(random_congruent_rhat(target, rng), 0.3 * rng.standard_normal(15))
    sff = ej.solve_gauss_3d(curv)
    sol = ej.solve_derivative_constraints(curv, sff, ej.annihilator_basis(sff))
    assert max(sol.residuals.values()) <= 1e-9


def test_constraints_need_positive_lambda():
    sff, annih = ej.normal_form_2d(1.0)
    with pytest.raises(ValueError):
        ej.solve_derivative_constraints(ej.CurvatureJet2D(1.0), sff, annih, lam=0.0)


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_signature_counts(diag):
    P = np.array([[1.0, 0.3, 0], [0, 1, -0.2], [0.1, 0, 1]])
    M = P.T @ np.diag(diag) @ P
    scale = max(abs(d) for d in diag) or 1.0
    p, q = ej.signature(M)
    if all(abs(d) > 1e-6 * scale for d in diag if d != 0):
        assert (p, q) == (sum(d > 0 for d in diag), sum(d < 0 for d in diag))
    assert p + q <= 3
