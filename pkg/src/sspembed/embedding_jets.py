"""Pointwise embedding algebra for n = 2 and n = 3.

Everything here is linear algebra at the origin of normal coordinates:
curvature jets, second fundamental form jets ``H``, ``h``, annihilator jets
``A``, ``a`` and the constraint systems tying them together.

Index conventions (zero based):

* ``H[alpha, i, j]`` and ``h[alpha, i, j, k]`` run over normal directions
  ``alpha = 0 .. s - n - 1``.
* ``A[k, i, j]`` is fully symmetric; ``a[k, l, i, j]`` is the derivative of
  ``A[k, i, j]`` along ``x^l``, symmetric in ``(k, i, j)``.
* For n = 3, bivector pairs are ordered ``(23, 31, 12)`` so that ``Rhat[p, q]``
  is ``R`` evaluated on pairs ``p`` and ``q``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

# bivector pairs in the order (23, 31, 12)
PAIRS = ((1, 2), (2, 0), (0, 1))

# ordering of the ten h components for n = 3: 111 222 333 112 311 223 122 331 233 123
CUBIC_ORDER_3 = ((0, 0, 0), (1, 1, 1), (2, 2, 2), (0, 0, 1), (2, 0, 0),
                 (1, 1, 2), (0, 1, 1), (2, 2, 0), (1, 2, 2), (0, 1, 2))
CUBIC_ORDER_2 = ((0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1))

# ordering of the fifteen independent curvature derivatives, as (pair p, pair q, m)
R_ORDER = ((2, 2, 0), (1, 1, 0), (0, 1, 0), (1, 2, 0), (2, 0, 0),
           (0, 0, 1), (2, 2, 1), (1, 2, 1), (2, 0, 1), (0, 1, 1),
           (1, 1, 2), (0, 0, 2), (2, 0, 2), (0, 1, 2), (1, 2, 2))

# columns of the 15 x 15 minor, zero based
MINOR_COLUMNS = (1, 2, 5, 6, 8, 9, 11, 13, 16, 17, 18, 19, 21, 22, 24)

SIGMA_DEFAULT = 0.3


class ConstraintError(ValueError):
    """A constraint system could not be satisfied to tolerance."""


class SignRuleError(ValueError):
    """The requested sigma cannot realise the curvature signature."""


def cubic_order(n: int):
    return CUBIC_ORDER_2 if n == 2 else CUBIC_ORDER_3


def symmetric_cubic(values: Sequence[float], n: int) -> np.ndarray:
    """Fully symmetric n x n x n tensor from its independent components."""
    out = np.zeros((n, n, n))
    for v, idx in zip(values, cubic_order(n)):
        for p in set(itertools.permutations(idx)):
            out[p] = v
    return out


def cubic_components(T: np.ndarray) -> np.ndarray:
    return np.array([T[idx] for idx in cubic_order(T.shape[0])])


def symmetry_defect(T: np.ndarray) -> float:
    """Max deviation of a 3-tensor (last three axes) from full symmetry."""
    base = np.asarray(T)
    nd = base.ndim
    axes = list(range(nd - 3))
    worst = 0.0
    for p in itertools.permutations(range(3)):
        perm = axes + [nd - 3 + q for q in p]
        worst = max(worst, float(np.max(np.abs(base - np.transpose(base, perm)), initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# curvature


def riemann_from_pairs(Rpair: np.ndarray) -> np.ndarray:
    """Riemann tensor (3,3,3,3) from its 3 x 3 bivector representation.

    Trailing axes after the two pair axes are carried along.
    """
    Rpair = np.asarray(Rpair, dtype=float)
    extra = Rpair.shape[2:]
    R = np.zeros((3, 3, 3, 3) + extra)
    for p, (i, j) in enumerate(PAIRS):
        for q, (k, l) in enumerate(PAIRS):
            v = Rpair[p, q]
            R[i, j, k, l] = v
            R[j, i, k, l] = -v
            R[i, j, l, k] = -v
            R[j, i, l, k] = v
    return R


def pairs_from_riemann(R: np.ndarray) -> np.ndarray:
    out = np.zeros((3, 3) + R.shape[4:])
    for p, (i, j) in enumerate(PAIRS):
        for q, (k, l) in enumerate(PAIRS):
            out[p, q] = R[i, j, k, l]
    return out


@dataclass(frozen=True)
class CurvatureJet2D:
    K: float
    k1: float = 0.0
    k2: float = 0.0

    n = 2

    def riemann(self) -> np.ndarray:
        R = np.zeros((2, 2, 2, 2))
        R[0, 1, 0, 1] = R[1, 0, 1, 0] = self.K
        R[0, 1, 1, 0] = R[1, 0, 0, 1] = -self.K
        return R

    def r_tensor(self) -> np.ndarray:
        r = np.zeros((2, 2, 2, 2, 2))
        for m, v in enumerate((self.k1, self.k2)):
            r[0, 1, 0, 1, m] = r[1, 0, 1, 0, m] = v
            r[0, 1, 1, 0, m] = r[1, 0, 0, 1, m] = -v
        return r

    def to_dict(self) -> dict:
        return {"n": 2, "K": self.K, "k1": self.k1, "k2": self.k2}


@dataclass(frozen=True)
class CurvatureJet3D:
    """``Rhat`` (3 x 3 symmetric) and the fifteen independent derivatives ``r``.

    The three remaining derivatives follow from the second Bianchi identity,
    which in pair form says ``sum_m rpair[p, m, m] = 0`` for each pair ``p``.
    """

    Rhat: np.ndarray
    r: np.ndarray = field(default_factory=lambda: np.zeros(15))

    n = 3

    def __post_init__(self):
        Rhat = np.asarray(self.Rhat, dtype=float)
        r = np.asarray(self.r, dtype=float).reshape(-1)
        if Rhat.shape != (3, 3):
            raise ValueError("Rhat must be 3 x 3")
        if np.max(np.abs(Rhat - Rhat.T)) > 1e-12 * max(1.0, np.max(np.abs(Rhat))):
            raise ValueError("Rhat must be symmetric")
        if r.shape != (15,):
            raise ValueError("r must hold 15 components")
        object.__setattr__(self, "Rhat", 0.5 * (Rhat + Rhat.T))
        object.__setattr__(self, "r", r)

    @classmethod
    def from_pair_derivatives(cls, Rhat, rpair, tol: float = 1e-10) -> "CurvatureJet3D":
        """Build from all 18 derivatives ``rpair[p, q, m]``; rejects Bianchi violations."""
        rpair = np.asarray(rpair, dtype=float)
        if np.max(np.abs(rpair - np.swapaxes(rpair, 0, 1))) > tol:
            raise ValueError("curvature derivatives must be symmetric in the pair indices")
        bianchi = np.einsum("pmm->p", rpair)
        if np.max(np.abs(bianchi)) > tol * max(1.0, np.max(np.abs(rpair))):
            raise ValueError(f"second Bianchi identity violated: sums {bianchi.tolist()}")
        return cls(Rhat, np.array([rpair[p, q, m] for p, q, m in R_ORDER]))

    def pair_derivatives(self) -> np.ndarray:
        rpair = np.zeros((3, 3, 3))
        for v, (p, q, m) in zip(self.r, R_ORDER):
            rpair[p, q, m] = rpair[q, p, m] = v
        for p in range(3):
            rpair[p, p, p] = -sum(rpair[p, m, m] for m in range(3) if m != p)
        return rpair

    def riemann(self) -> np.ndarray:
        return riemann_from_pairs(self.Rhat)

    def r_tensor(self) -> np.ndarray:
        return riemann_from_pairs(self.pair_derivatives())

    def transformed(self, T: np.ndarray) -> "CurvatureJet3D":
        """Components in coordinates ``x'`` with ``x = T x'``."""
        T = np.asarray(T, dtype=float)
        R = np.einsum("abcd,ai,bj,ck,dl->ijkl", self.riemann(), T, T, T, T)
        r = np.einsum("abcde,ai,bj,ck,dl,em->ijklm", self.r_tensor(), T, T, T, T, T)
        return CurvatureJet3D.from_pair_derivatives(pairs_from_riemann(R), pairs_from_riemann(r))

    def to_dict(self) -> dict:
        return {"n": 3, "Rhat": self.Rhat, "r": self.r}


def gauss_tensor(H: np.ndarray) -> np.ndarray:
    """``sum_alpha H_ik H_jl - H_il H_jk``."""
    return np.einsum("aik,ajl->ijkl", H, H) - np.einsum("ail,ajk->ijkl", H, H)


def derivative_gauss_tensor(H: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``sum_alpha H_ik h_jlm + H_jl h_ikm - H_il h_jkm - H_jk h_ilm``."""
    return (np.einsum("aik,ajlm->ijklm", H, h) + np.einsum("ajl,aikm->ijklm", H, h)
            - np.einsum("ail,ajkm->ijklm", H, h) - np.einsum("ajk,ailm->ijklm", H, h))


def signature(M: np.ndarray, rel_tol: float = 1e-9) -> Tuple[int, int]:
    """(number of positive, number of negative) eigenvalues, zero within a relative tolerance."""
    w = np.linalg.eigvalsh(np.asarray(M, dtype=float))
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    return int(np.sum(w > rel_tol * scale)), int(np.sum(w < -rel_tol * scale))


# ---------------------------------------------------------------------------
# jets


@dataclass(frozen=True)
class SffJet:
    """Second fundamental form jet; for n = 3 stored in normal-form coordinates.

    ``frame`` is T with ``x_input = T x``; ``gamma[alpha, beta]`` gives
    ``H[alpha] = sum_beta gamma[alpha, beta] Hbar[beta]``.
    """

    n: int
    H: np.ndarray
    h: np.ndarray
    sigma: Optional[float] = None
    gamma: Optional[np.ndarray] = None
    frame: Optional[np.ndarray] = None
    K: Optional[float] = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        h = np.asarray(self.h, dtype=float)
        n = self.n
        if H.ndim != 3 or H.shape[1:] != (n, n):
            raise ValueError("H must have shape (m, n, n)")
        if np.max(np.abs(H - np.swapaxes(H, 1, 2))) > 1e-12:
            raise ValueError("each H^alpha must be symmetric")
        if h.shape != H.shape + (n,):
            raise ValueError("h must have shape (m, n, n, n)")
        if symmetry_defect(h) > 1e-12:
            raise ValueError("h must be fully symmetric (Codazzi)")
        if np.linalg.matrix_rank(H.reshape(len(H), -1), tol=1e-10) != n * (n - 1) // 2:
            raise ValueError("second fundamental form is degenerate")
        if n == 3 and self.sigma is not None and not 0 < abs(self.sigma) < 0.5:
            raise ValueError("sigma must satisfy 0 < |sigma| < 1/2")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "frame", np.eye(n) if self.frame is None else np.asarray(self.frame, float))

    def with_h(self, h: np.ndarray) -> "SffJet":
        return replace(self, h=np.asarray(h, dtype=float))

    def input_H(self) -> np.ndarray:
        """H in the input coordinates: ``T^-T H T^-1``."""
        Tinv = np.linalg.inv(self.frame)
        return np.einsum("ai,xab,bj->xij", Tinv, self.H, Tinv)

    def to_dict(self) -> dict:
        out = {"n": self.n, "H": self.H, "h": self.h, "frame": self.frame}
        if self.sigma is not None:
            out["sigma"] = self.sigma
        if self.gamma is not None:
            out["gamma"] = self.gamma
        if self.K is not None:
            out["K"] = self.K
        return out


@dataclass(frozen=True)
class AnnihilatorJet:
    A: np.ndarray
    a: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n, n):
            raise ValueError("A must have shape (n, n, n)")
        if symmetry_defect(A) > 1e-12:
            raise ValueError("A^{kij} must be fully symmetric")
        object.__setattr__(self, "A", A)
        if self.a is not None:
            a = np.asarray(self.a, dtype=float)
            if a.shape != (n, n, n, n):
                raise ValueError("a must have shape (n, n, n, n)")
            if symmetry_defect(np.transpose(a, (1, 0, 2, 3))) > 1e-12:
                raise ValueError("a^{kij}_l must be symmetric in (k, i, j)")
            object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def to_dict(self) -> dict:
        return {"A": self.A, "a": self.a}


# ---------------------------------------------------------------------------
# normal forms


def normal_form_2d(K: float) -> Tuple[SffJet, AnnihilatorJet]:
    if K == 0 or not np.isfinite(K):
        raise ValueError("the Gauss curvature must be nonzero")
    H = np.array([[[K, 0.0], [0.0, 1.0]]])
    A = np.array([[[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, -K]]])
    return SffJet(2, H, np.zeros((1, 2, 2, 2)), K=float(K)), AnnihilatorJet(A)


def hbar_basis(sigma: float) -> np.ndarray:
    s = sigma
    return np.array([
        [[1, 0, 0], [0, 0, s], [0, s, 0]],
        [[0, 0, s], [0, 1, 0], [s, 0, 0]],
        [[0, s, 0], [s, 0, 0], [0, 0, 1]],
    ], dtype=float)


def normal_annihilator_3d(sigma: float) -> np.ndarray:
    s = sigma
    return np.array([
        [[-2 * s, 0, 0], [0, 0, 1], [0, 1, 0]],
        [[0, 0, 1], [0, -2 * s, 0], [1, 0, 0]],
        [[0, 1, 0], [1, 0, 0], [0, 0, -2 * s]],
    ], dtype=float)


def _check_sigma(sigma: float):
    if not 0 < abs(sigma) < 0.5:
        raise ValueError("sigma must satisfy 0 < |sigma| < 1/2")


def rhat_from_gram(G: np.ndarray, sigma: float) -> np.ndarray:
    """Curvature matrix produced by ``H = gamma Hbar`` when ``gamma^T gamma = G``."""
    s2 = sigma * sigma
    d = np.asarray(G, dtype=float)
    R = np.empty((3, 3))
    R[0, 0] = d[1, 2] - s2 * d[0, 0]
    R[1, 1] = d[2, 0] - s2 * d[1, 1]
    R[2, 2] = d[0, 1] - s2 * d[2, 2]
    R[0, 1] = R[1, 0] = s2 * d[0, 1] - sigma * d[2, 2]
    R[0, 2] = R[2, 0] = s2 * d[2, 0] - sigma * d[1, 1]
    R[1, 2] = R[2, 1] = s2 * d[1, 2] - sigma * d[0, 0]
    return R


def equiangular_gram(phi: float) -> np.ndarray:
    return (1 - phi) * np.eye(3) + phi * np.ones((3, 3))


@dataclass(frozen=True)
class RhatExample:
    phi: float
    sigma: float
    matrix: np.ndarray
    closed_form_eigenvalues: Tuple[float, float, float]
    numeric_eigenvalues: np.ndarray
    signature: Tuple[int, int]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def rhat_example(phi: float, sigma: float) -> RhatExample:
    """Curvature matrix of three unit vectors with pairwise cosine ``phi``."""
    _check_sigma(sigma)
    if not -0.5 < phi < 1:
        raise ValueError("phi must lie in (-1/2, 1)")
    M = rhat_from_gram(equiangular_gram(phi), sigma)
    single = phi * (1 + 2 * sigma ** 2) - sigma * (sigma + 2)
    double = (1 - sigma) * (phi + sigma + sigma * phi)
    closed = tuple(sorted((single, double, double)))
    return RhatExample(phi, sigma, M, closed, np.linalg.eigvalsh(M), signature(M))


def signature_breakpoints(sigma: float) -> Tuple[float, float]:
    """The two values of phi where an eigenvalue of the equiangular matrix vanishes, sorted."""
    _check_sigma(sigma)
    a = -sigma / (sigma + 1)
    b = sigma * (sigma + 2) / (1 + 2 * sigma ** 2)
    return (min(a, b), max(a, b))


def signature_sweep(sigma: float) -> List[Tuple[float, Tuple[int, int]]]:
    """Signatures at one representative phi per region: three open intervals and two breakpoints."""
    lo, hi = signature_breakpoints(sigma)
    phis = [0.5 * (-0.5 + lo), lo, 0.5 * (lo + hi), hi, 0.5 * (hi + 1.0)]
    return [(phi, rhat_example(phi, sigma).signature) for phi in phis]


# ---------------------------------------------------------------------------
# Gauss equations for n = 3


def _gram_to_rhat_matrix(sigma: float) -> np.ndarray:
    """6 x 6 matrix of the linear map Gram -> Rhat on upper-triangle coordinates."""
    iu = np.triu_indices(3)
    cols = []
    for k in range(6):
        E = np.zeros((3, 3))
        E[iu[0][k], iu[1][k]] = E[iu[1][k], iu[0][k]] = 1.0
        cols.append(rhat_from_gram(E, sigma)[iu])
    return np.array(cols).T


def _gram_from_rhat(Rhat: np.ndarray, sigma: float) -> np.ndarray:
    iu = np.triu_indices(3)
    x = np.linalg.solve(_gram_to_rhat_matrix(sigma), Rhat[iu])
    G = np.zeros((3, 3))
    G[iu] = x
    return G + np.triu(G, 1).T


def _is_pd(G: np.ndarray) -> bool:
    return bool(np.linalg.eigvalsh(G)[0] > 1e-12)


# fixed perturbations used to split the double eigenvalue of the equiangular family
_PERTURBATIONS = (
    np.diag([1.0, -1.0, 0.0]),
    np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
    np.diag([1.0, 0.0, -1.0]),
)


def _realising_gram(target: Tuple[int, int], sigma: float, eps: float = 0.1,
                    grid: int = 400) -> Optional[np.ndarray]:
    """A positive definite Gram matrix whose curvature matrix has signature ``target``."""
    lo, hi = signature_breakpoints(sigma)
    exact = [lo, hi]
    for phi in exact:
        G = equiangular_gram(phi)
        if signature(rhat_from_gram(G, sigma)) == target:
            return G
    phis = np.linspace(-0.5, 1.0, grid + 2)[1:-1]
    families = [np.zeros((3, 3))] + [eps * P for P in _PERTURBATIONS]
    for pert in families:
        def gram(phi, pert=pert):
            return equiangular_gram(phi) + pert

        if target[0] + target[1] == 3:
            for phi in phis:
                G = gram(phi)
                if _is_pd(G) and signature(rhat_from_gram(G, sigma)) == target:
                    return G
            continue
        # one zero eigenvalue: locate sign changes of the determinant
        dets = [np.linalg.det(rhat_from_gram(gram(p), sigma)) for p in phis]
        for a, b, da, db in zip(phis[:-1], phis[1:], dets[:-1], dets[1:]):
            if da * db < 0:
                root = brentq(lambda p: np.linalg.det(rhat_from_gram(gram(p), sigma)), a, b, xtol=1e-15, rtol=1e-15)
                G = gram(root)
                if _is_pd(G) and signature(rhat_from_gram(G, sigma), 1e-8) == target:
                    return G
    return None


def _congruence_factor(M: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """W with ``M = W J W^T``, J = diag(+1.., -1.., 0..)."""
    w, V = np.linalg.eigh(M)
    scale = max(np.max(np.abs(w)), np.finfo(float).tiny)
    pos = np.flatnonzero(w > rel_tol * scale)
    neg = np.flatnonzero(w < -rel_tol * scale)
    zero = np.flatnonzero(np.abs(w) <= rel_tol * scale)
    order = np.concatenate([pos[::-1], neg, zero])
    mags = np.where(np.abs(w[order]) > rel_tol * scale, np.sqrt(np.abs(w[order])), 1.0)
    return V[:, order] * mags


def cofactor(T: np.ndarray) -> np.ndarray:
    return np.linalg.det(T) * np.linalg.inv(T).T


def sign_rule_sigma(target: Tuple[int, int], sigma: Optional[float]) -> float:
    if sigma is None:
        return -SIGMA_DEFAULT if target == (1, 0) else SIGMA_DEFAULT
    _check_sigma(sigma)
    if target == (1, 0) and sigma > 0:
        raise SignRuleError("signature (1,0) needs sigma < 0")
    if target == (0, 1) and sigma < 0:
        raise SignRuleError("signature (0,1) needs sigma > 0")
    return float(sigma)


def solve_gauss_3d(curv: CurvatureJet3D, sigma: Optional[float] = None, tol: float = 1e-9) -> SffJet:
    """Second fundamental form in normal-form coordinates realising ``curv.Rhat``.

    If the Gram matrix solving the Gauss equations directly is positive
    definite the frame is the identity.  Otherwise a Gram matrix with the same
    curvature signature is found and the input is matched by a congruence
    ``P^T Rhat P`` with ``P = cof(T)``, ``det P > 0``.
    """
    Rin = curv.Rhat
    if np.max(np.abs(Rin)) == 0:
        raise ValueError("Rhat = 0 is the degenerate case and is not handled")
    target = signature(Rin)
    sigma = sign_rule_sigma(target, sigma)

    G = _gram_from_rhat(Rin, sigma)
    T = np.eye(3)
    if not _is_pd(G):
        G = _realising_gram(target, sigma)
        if G is None:
            raise SignRuleError(f"no realisation of signature {target} found for sigma={sigma}")
        R0 = rhat_from_gram(G, sigma)
        W_in = _congruence_factor(Rin)
        W_0 = _congruence_factor(R0)
        P = np.linalg.solve(W_in.T, W_0.T)
        if np.linalg.det(P) < 0:
            E = np.eye(3)
            E[-1, -1] = -1.0
            P = np.linalg.solve(W_in.T, E @ W_0.T)
        detT = np.sqrt(np.linalg.det(P))
        T = detT * np.linalg.inv(P).T
    gamma = np.linalg.cholesky(G).T  # columns gamma_beta with Gram G
    H = np.einsum("ab,bij->aij", gamma, hbar_basis(sigma))
    sff = SffJet(3, H, np.zeros((3, 3, 3, 3)), sigma=sigma, gamma=gamma, frame=T)
    resid = float(np.max(np.abs(gauss_tensor(sff.input_H()) - curv.riemann())))
    if resid > tol * max(1.0, float(np.max(np.abs(Rin)))):
        raise ConstraintError(f"Gauss residual {resid!r} above tolerance")
    return sff


# ---------------------------------------------------------------------------
# annihilator


def _cubic_basis(n: int) -> List[np.ndarray]:
    return [symmetric_cubic(np.eye(len(cubic_order(n)))[k], n) for k in range(len(cubic_order(n)))]


def annihilator_kernel(H: np.ndarray) -> np.ndarray:
    """Orthonormal basis (as cubic tensors) of the fully symmetric A with <A^k, H^alpha> = 0."""
    n = H.shape[1]
    basis = _cubic_basis(n)
    M = np.array([np.einsum("kij,aij->ka", C, H).ravel() for C in basis]).T
    _, sv, Vt = np.linalg.svd(M)
    rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0] if sv.size else 1.0)))
    kernel = Vt[rank:]
    tensors = []
    for v in kernel:
        lead = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
        v = v * np.sign(lead) / np.linalg.norm(v)
        tensors.append(sum(c * B for c, B in zip(v, basis)))
    return np.array(tensors)


def annihilator_basis(sff: SffJet) -> AnnihilatorJet:
    """Annihilator A^k; the fixed normal forms when ``sff`` is in normal form."""
    n = sff.n
    kernel = annihilator_kernel(sff.H)
    expected = 2 if n == 2 else 1
    if len(kernel) < expected:
        raise ConstraintError(f"annihilator kernel dimension {len(kernel)} below {expected}")
    if n == 2 and sff.K is not None and np.allclose(sff.H[0], np.diag([sff.K, 1.0])):
        return normal_form_2d(sff.K)[1]
    if n == 3 and sff.sigma is not None:
        A = normal_annihilator_3d(sff.sigma)
        if np.max(np.abs(np.einsum("kij,aij->ka", A, sff.H))) < 1e-10:
            return AnnihilatorJet(A)
    if n == 2:
        # two kernel tensors C give A^k = C[k] only after a choice; take the first kernel element
        return AnnihilatorJet(kernel[0])
    return AnnihilatorJet(kernel[0])


# ---------------------------------------------------------------------------
# derivative constraints


def _h_condition_matrix(sff: SffJet, A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rows for ``sum_k <A^k, h^alpha_k> = lambda tr H^alpha`` on the stacked cubic coordinates (per unit lambda)."""
    n, m = sff.n, len(sff.H)
    basis = _cubic_basis(n)
    c = len(basis)
    rows = np.zeros((m, m * c))
    for alpha in range(m):
        for q, B in enumerate(basis):
            rows[alpha, alpha * c + q] = np.einsum("kij,ijk->", A, B)
    return rows, np.trace(sff.H, axis1=1, axis2=2)


def _dgauss_matrix(sff: SffJet) -> np.ndarray:
    """Columns: derivative-Gauss tensor of each unit cubic in each normal slot, flattened."""
    n, m = sff.n, len(sff.H)
    basis = _cubic_basis(n)
    cols = []
    for alpha in range(m):
        for B in basis:
            h = np.zeros((m, n, n, n))
            h[alpha] = B
            cols.append(_independent_r(derivative_gauss_tensor(sff.H, h)))
    return np.array(cols).T


def _independent_r(r: np.ndarray) -> np.ndarray:
    n = r.shape[0]
    if n == 2:
        return np.array([r[0, 1, 0, 1, 0], r[0, 1, 0, 1, 1]])
    rp = pairs_from_riemann(r)
    return np.array([rp[p, q, m] for p, q, m in R_ORDER])


def reduced_g_matrices(H: np.ndarray, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-slot 15 x 10 maps and the 15 x 9 maps after eliminating h_123.

    The h-condition ``6 h_123 - 2 sigma (h_111 + h_222 + h_333) = c`` gives
    ``h_123 = (sigma / 3)(h_111 + h_222 + h_333) + c / 6``.
    """
    full = []
    for Ha in H:
        cols = []
        for e in np.eye(10):
            r = derivative_gauss_tensor(Ha[None], symmetric_cubic(e, 3)[None])
            cols.append(_independent_r(r))
        full.append(np.array(cols).T)
    full = np.array(full)
    reduced = full[:, :, :9].copy()
    reduced[:, :, :3] += full[:, :, 9:10] * (sigma / 3.0)
    return full, reduced


def gbar_matrices(sigma: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three explicit 15 x 9 matrices for the basis Hbar, entered entry by entry."""
    s = sigma
    q = s * s / 3
    G4, G5, G6 = np.zeros((15, 9)), np.zeros((15, 9)), np.zeros((15, 9))

    def put(G, r, c, v):
        G[r - 1, c - 1] = v

    put(G4, 1, 7, 1); put(G4, 2, 8, 1); put(G4, 3, 5, s); G4[3, :3] = [-4 * s / 3, -s / 3, -s / 3]
    put(G4, 5, 4, s); put(G4, 6, 6, -2 * s); put(G4, 7, 2, 1); put(G4, 8, 4, -s); put(G4, 8, 6, -1)
    put(G4, 9, 7, s); G4[9, :3] = q; put(G4, 11, 3, 1); put(G4, 12, 9, -2 * s); G4[12, :3] = q
    put(G4, 14, 8, s); put(G4, 15, 5, -s); put(G4, 15, 9, -1)

    put(G5, 1, 1, 1); put(G5, 2, 5, -2 * s); G5[2, :3] = q; put(G5, 4, 4, s); put(G5, 5, 5, -1)
    put(G5, 5, 7, -s); put(G5, 6, 9, 1); put(G5, 7, 4, 1); put(G5, 8, 7, s)
    G5[8, :3] = [-s / 3, -4 * s / 3, -s / 3]; put(G5, 10, 6, s); put(G5, 11, 8, -2 * s); put(G5, 12, 3, 1)
    put(G5, 13, 6, -s); put(G5, 13, 8, -1); put(G5, 14, 9, s); G5[14, :3] = q

    put(G6, 1, 4, -2 * s); put(G6, 2, 1, 1); put(G6, 3, 4, -1); put(G6, 3, 8, -s); put(G6, 4, 5, s)
    G6[4, :3] = q; put(G6, 6, 2, 1); put(G6, 7, 7, -2 * s); G6[7, :3] = q; put(G6, 9, 6, s)
    put(G6, 10, 7, -1); put(G6, 10, 9, -s); put(G6, 11, 5, 1); put(G6, 12, 6, 1); put(G6, 13, 9, s)
    G6[13, :3] = [-s / 3, -s / 3, -4 * s / 3]; put(G6, 15, 8, s)
    return G4, G5, G6


def published_determinant(sigma: float) -> float:
    s = sigma
    return -(64 / 27) * s ** 3 * (s - 1) ** 3 * (s * s + s + 1) ** 2


def corrected_determinant(sigma: float) -> float:
    """Exact value of the minor; the last factor carries exponent 3."""
    s = sigma
    return -(64 / 27) * s ** 3 * (s - 1) ** 3 * (s * s + s + 1) ** 3


@dataclass(frozen=True)
class RankCertificate:
    sigma: float
    rank: int
    det_submatrix: float
    closed_form: float
    corrected_closed_form: float
    relative_error: float
    corrected_relative_error: float

    @property
    def certified(self) -> bool:
        return self.rank == 15 and self.det_submatrix != 0

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["certified"] = self.certified
        return out


def gbar_rank_certificate(sigma: float) -> RankCertificate:
    _check_sigma(sigma)
    G = np.hstack(gbar_matrices(sigma))
    rank = int(np.linalg.matrix_rank(G))
    det = float(np.linalg.det(G[:, list(MINOR_COLUMNS)]))
    pub, cor = published_determinant(sigma), corrected_determinant(sigma)
    return RankCertificate(sigma, rank, det, pub, cor, abs(det - pub) / abs(pub), abs(det - cor) / abs(cor))


@dataclass(frozen=True)
class DerivativeSolution:
    sff: SffJet
    annihilator: AnnihilatorJet
    lam: float
    residuals: Dict[str, float]

    def to_dict(self) -> dict:
        return {"sff": self.sff.to_dict(), "annihilator": self.annihilator.to_dict(),
                "lambda": self.lam, "residuals": self.residuals}


def trace_condition_residual(sff: SffJet, annih: AnnihilatorJet, lam: float) -> np.ndarray:
    """``<H^alpha, sum_l a^l_l + lambda I>`` for each alpha; zero iff the trace matrix lies in span(A)."""
    M = np.einsum("llij->ij", annih.a) + lam * np.eye(sff.n)
    return np.einsum("aij,ij->a", sff.H, M)


def h_condition_residual(sff: SffJet, annih: AnnihilatorJet, lam: float) -> np.ndarray:
    lhs = np.einsum("kij,aijk->a", annih.A, sff.h)
    return lhs - lam * np.trace(sff.H, axis1=1, axis2=2)


def _solve_h(curv, sff: SffJet, A: np.ndarray, lam: float, tol: float) -> np.ndarray:
    n, m = sff.n, len(sff.H)
    target = _independent_r(curv.r_tensor())
    if n == 2:
        D = _dgauss_matrix(sff)
        hrows, htr = _h_condition_matrix(sff, A)
        M = np.vstack([D, hrows])
        rhs = np.concatenate([target, lam * htr])
        x = np.linalg.lstsq(M, rhs, rcond=None)[0]
        if np.max(np.abs(M @ x - rhs)) > tol:
            raise ConstraintError("derivative-Gauss system with the h-condition is inconsistent")
        return np.array([symmetric_cubic(x[a * 4:(a + 1) * 4], 2) for a in range(m)])
    if sff.sigma is None:
        raise ValueError("n = 3 constraint solve needs sigma")
    full, reduced = reduced_g_matrices(sff.H, sff.sigma)
    offsets = lam * np.trace(sff.H, axis1=1, axis2=2) / 6.0
    r0 = sum(full[a][:, 9] * offsets[a] for a in range(m))
    G = np.hstack(list(reduced))
    x = np.linalg.lstsq(G, target - r0, rcond=None)[0]
    if np.max(np.abs(G @ x - (target - r0))) > tol:
        raise ConstraintError("derivative-Gauss system is not surjective at this sigma")
    hs = []
    for a in range(m):
        hb = x[9 * a:9 * (a + 1)]
        h123 = (sff.sigma / 3.0) * (hb[0] + hb[1] + hb[2]) + offsets[a]
        hs.append(symmetric_cubic(np.concatenate([hb, [h123]]), 3))
    return np.array(hs)


def _solve_a(sff: SffJet, A: np.ndarray, lam: float, tol: float) -> np.ndarray:
    n, m = sff.n, len(sff.H)
    basis = _cubic_basis(n)
    c = len(basis)
    cols = []
    for l in range(n):
        for B in basis:
            a = np.zeros((n, n, n, n))
            a[:, l] = B
            dann = np.einsum("aij,klij->kla", sff.H, a).ravel()
            trace = np.einsum("aij,ij->a", sff.H, np.einsum("llij->ij", a))
            cols.append(np.concatenate([dann, trace]))
    M = np.array(cols).T
    rhs = np.concatenate([-np.einsum("kij,aijl->kla", A, sff.h).ravel(),
                          -lam * np.trace(sff.H, axis1=1, axis2=2)])
    x = np.linalg.lstsq(M, rhs, rcond=None)[0]
    if np.max(np.abs(M @ x - rhs)) > tol:
        raise ConstraintError("derivative-annihilator system with the trace conditions is inconsistent")
    a = np.zeros((n, n, n, n))
    for l in range(n):
        a[:, l] = sum(x[l * c + q] * basis[q] for q in range(c))
    return a


def solve_derivative_constraints(curv, sff: SffJet, annih: AnnihilatorJet, lam: float = 1.0,
                                 tol: float = 1e-10) -> DerivativeSolution:
    """Minimum-norm h, then minimum-norm a, satisfying all derivative constraints.

    ``curv`` is given in input coordinates; for n = 3 it is moved to the
    normal-form frame of ``sff`` first.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    h = _solve_h(in_frame(curv, sff), sff, annih.A, lam, tol)
    sff = sff.with_h(h)
    a = _solve_a(sff, annih.A, lam, tol)
    annih = AnnihilatorJet(annih.A, a)
    res = check_all_constraints(curv, sff, annih)
    res["h_condition"] = float(np.max(np.abs(h_condition_residual(sff, annih, lam))))
    res["trace_condition"] = float(np.max(np.abs(trace_condition_residual(sff, annih, lam))))
    return DerivativeSolution(sff, annih, float(lam), res)


def in_frame(curv, sff: SffJet):
    """Curvature jet expressed in the normal-form coordinates of ``sff``."""
    if sff.n == 3 and not np.array_equal(sff.frame, np.eye(3)):
        return curv.transformed(sff.frame)
    return curv


def check_all_constraints(curv, sff: SffJet, annih: AnnihilatorJet) -> Dict[str, float]:
    """Max-abs residuals of the five constraint families, in the coordinates of ``sff``."""
    curv = in_frame(curv, sff)
    H, h, A = sff.H, sff.h, annih.A
    out = {
        "gauss": float(np.max(np.abs(gauss_tensor(H) - curv.riemann()))),
        "codazzi": symmetry_defect(h),
        "annihilator": float(np.max(np.abs(np.einsum("kij,aij->ka", A, H)))),
        "derivative_gauss": float(np.max(np.abs(derivative_gauss_tensor(H, h) - curv.r_tensor()))),
    }
    if annih.a is None:
        out["derivative_annihilator"] = float("nan")
    else:
        res = np.einsum("kij,aijl->kla", A, h) + np.einsum("aij,klij->kla", H, annih.a)
        out["derivative_annihilator"] = float(np.max(np.abs(res)))
    return out
