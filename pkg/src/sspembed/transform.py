"""Linearised embedding system, the quadratic change of variables, and the pipeline.

The reduced system for the tangential unknowns ``vbar`` reads
``Abar^i d_i vbar + B vbar = h`` with ``Abar^i[k, j] = A^{kij}``,
``B[k, j] = -A^{klm} Gamma^j_lm`` and ``h[k] = A^{klm} hmetric_lm / 2``.

The change of variables is ``x = xbar + c^i_jk xbar^j xbar^k / 2`` together with
``vbar = (I + xbar^l S_l) w``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .core import (LinearSystemField, PolynomialJet, PositivityReport, assemble_q0, assemble_q1,
                   ball_samples, check_ssp, sym_eigvalsh)
from .embedding_jets import (AnnihilatorJet, CurvatureJet2D, CurvatureJet3D, SffJet, annihilator_basis,
                             h_condition_residual, in_frame, normal_form_2d,
                             solve_derivative_constraints, solve_gauss_3d, trace_condition_residual)


@dataclass(frozen=True)
class EstimateExponents:
    """Loss exponents for the linearised estimates: norm index ``alpha``, loss ``beta`` (default ``alpha + 1``)."""

    alpha: int = 0
    beta: Optional[int] = None
    epsilon: float = 1e-2

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.beta is None:
            object.__setattr__(self, "beta", self.alpha + 1)
        if self.beta < self.alpha:
            raise ValueError("beta must be at least alpha")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


class ChangeOfVarsError(ValueError):
    """No change of variables reaches the targets; ``condition`` names the violated side condition."""

    def __init__(self, message: str, condition: str, residual: float):
        super().__init__(message)
        self.condition = condition
        self.residual = residual


@dataclass(frozen=True)
class ChangeOfVars:
    c: np.ndarray
    S: np.ndarray
    lam: float
    mu: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        S = np.asarray(self.S, dtype=float)
        n = c.shape[0]
        if c.shape != (n, n, n) or S.shape != (n, n, n):
            raise ValueError("c and S must have shape (n, n, n)")
        if np.max(np.abs(c - np.swapaxes(c, 1, 2))) > 1e-12:
            raise ValueError("c^i_jk must be symmetric in (j, k)")
        if not (self.lam > 0 and self.mu > 0):
            raise ValueError("lambda and mu must be positive")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "S", S)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @classmethod
    def identity(cls, n: int, lam: float = 1.0, mu: float = 1.0) -> "ChangeOfVars":
        return cls(np.zeros((n, n, n)), np.zeros((n, n, n)), lam, mu)

    def x_of_xbar(self, xbar: np.ndarray) -> np.ndarray:
        return xbar + 0.5 * np.einsum("ijk,...j,...k->...i", self.c, xbar, xbar)

    def jacobian(self, xbar: np.ndarray) -> np.ndarray:
        """``J[..., i, j] = d x^i / d xbar^j``."""
        return np.eye(self.n) + np.einsum("ijk,...k->...ij", self.c, xbar)

    def mixing(self, xbar: np.ndarray) -> np.ndarray:
        return np.eye(self.n) + np.einsum("...l,lab->...ab", xbar, self.S)

    def to_dict(self) -> dict:
        return {"c": self.c, "S": self.S, "lambda": self.lam, "mu": self.mu}


@dataclass(frozen=True)
class EmbeddingLinearization:
    """The reduced first-order system built from annihilator and Christoffel jets.

    ``dGamma[p, k, i, j]`` is the derivative along ``x^p`` of ``Gamma^k_ij`` at 0.
    """

    system: LinearSystemField
    annihilator: AnnihilatorJet
    dGamma: np.ndarray
    sff: Optional[SffJet] = None
    metric_perturbation: Optional[Callable] = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.annihilator.n


def assemble_linearization(annih: AnnihilatorJet, dGamma: Optional[np.ndarray] = None,
                           metric_perturbation: Optional[Callable] = None, sff: Optional[SffJet] = None,
                           gamma0: Optional[np.ndarray] = None) -> EmbeddingLinearization:
    """Polynomial-jet system from first-order jets of ``A`` and ``Gamma`` (with ``Gamma(0) = 0``)."""
    n = annih.n
    if annih.a is None:
        raise ValueError("annihilator derivatives a^{kij}_l are required")
    if gamma0 is not None and np.max(np.abs(gamma0)) != 0:
        raise ValueError("Christoffel symbols must vanish at the origin (normal coordinates)")
    dG = np.zeros((n, n, n, n)) if dGamma is None else np.asarray(dGamma, dtype=float)
    if dG.shape != (n, n, n, n):
        raise ValueError("dGamma must have shape (n, n, n, n)")
    A, a = annih.A, annih.a
    # Abar^i[k, j] = A^{kij}; by full symmetry this is the matrix A[i]
    B1 = -np.einsum("klm,pjlm->pkj", A, dG)

    def B_rem(x):
        return -np.einsum("...q,...p,kqlm,pjlm->...kj", x, x, a, dG)

    h_rem = None
    if metric_perturbation is not None:
        def h_rem(x):
            hm = np.asarray(metric_perturbation(x), dtype=float)
            Ax = A + np.einsum("...l,klij->...kij", x, a)
            return 0.5 * np.einsum("...klm,...lm->...k", Ax, hm)

    jet = PolynomialJet(A0=A.copy(), A1=a.copy(), B0=np.zeros((n, n)), B1=B1, h0=np.zeros(n),
                        h1=np.zeros((n, n)), B_rem=B_rem, h_rem=h_rem)
    return EmbeddingLinearization(LinearSystemField.from_jet(jet), annih, dG, sff, metric_perturbation)


def q_formulas(lin: EmbeddingLinearization, cov: ChangeOfVars) -> Tuple[np.ndarray, np.ndarray]:
    """Transformed quadratic forms at the origin from the closed-form expressions.

    ``Q0 = -sum_i a^i_i + c^i_ij A^j`` and block ``(i, j)`` of ``Q1`` is
    ``a^i_j + a^j_i - (c^i_jk + c^j_ik) A^k + S_i^T A^j + A^j S_i + S_j^T A^i + A^i S_j``.
    """
    A, a = lin.annihilator.A, lin.annihilator.a
    c, S = cov.c, cov.S
    n = A.shape[0]
    Q0 = -np.einsum("iiab->ab", a) + np.einsum("iij,jab->ab", c, A)
    blocks = np.zeros((n, n, n, n))
    for i in range(n):
        for j in range(n):
            blocks[i, j] = (a[i, j] + a[j, i] - np.einsum("k,kab->ab", c[i, j] + c[j, i], A)
                            + S[i].T @ A[j] + A[j] @ S[i] + S[j].T @ A[i] + A[i] @ S[j])
    Q1 = np.transpose(blocks, (0, 2, 1, 3)).reshape(n * n, n * n)
    return Q0, Q1


def _trace_report(lin: EmbeddingLinearization, lam: float) -> Tuple[str, float]:
    if lin.sff is None:
        return "unknown side condition", float("nan")
    trace = float(np.max(np.abs(trace_condition_residual(lin.sff, lin.annihilator, lam))))
    hcond = float(np.max(np.abs(h_condition_residual(lin.sff, lin.annihilator, lam))))
    if trace >= hcond:
        return "trace condition on sum_l a^l_l + lambda I", trace
    return "h-condition on sum_k <A^k, h_k>", hcond


def solve_change_of_vars(lin: EmbeddingLinearization, lam: float = 1.0, mu: float = 1.0,
                         tol: float = 1e-9) -> ChangeOfVars:
    """Least-squares solve for all ``c^i_jk`` and ``S_i`` entries hitting ``Q0 = lam I``, ``Q1 = mu I``."""
    n = lin.n
    c_index = [(i, j, k) for i in range(n) for j in range(n) for k in range(j, n)]
    count = len(c_index) + n ** 3
    iu = np.triu_indices(n * n)
    iu0 = np.triu_indices(n)

    def unpack(x):
        c = np.zeros((n, n, n))
        for v, (i, j, k) in zip(x, c_index):
            c[i, j, k] = c[i, k, j] = v
        return c, x[len(c_index):].reshape(n, n, n)

    def residual(x):
        c, S = unpack(x)
        Q0, Q1 = q_formulas(lin, ChangeOfVars(c, S, lam, mu))
        return np.concatenate([(Q0 - lam * np.eye(n))[iu0], (Q1 - mu * np.eye(n * n))[iu]])

    r0 = residual(np.zeros(count))
    M = np.column_stack([residual(e) - r0 for e in np.eye(count)])
    x = np.linalg.lstsq(M, -r0, rcond=None)[0]
    worst = float(np.max(np.abs(residual(x))))
    if worst > tol:
        condition, value = _trace_report(lin, lam)
        raise ChangeOfVarsError(
            f"no change of variables reaches the targets (residual {worst:.3e}); violated: {condition} ({value:.3e})",
            condition, worst)
    c, S = unpack(x)
    return ChangeOfVars(c, S, float(lam), float(mu))


# S_i[a, b] entries left free by the staged n = 2 solve, as (i, a, b); all others are unknowns
STAGED_FIXED_S = ((0, 0, 0), (0, 1, 0), (1, 1, 0))


def solve_change_of_vars_staged(lin: EmbeddingLinearization, lam: float = 1.0, mu: float = 1.0,
                                tol: float = 1e-9) -> ChangeOfVars:
    """Two-stage solve for n = 2, used to validate :func:`solve_change_of_vars`.

    The entries of ``S`` listed in ``STAGED_FIXED_S`` are held at zero.  Stage
    one solves ``Q1 = mu I`` for the remaining eleven unknowns; stage two
    solves ``Q0 = lam I`` inside the affine solution set of stage one.  Stage
    one needs ``K != 0`` and stage two fails at ``K = -1``.
    """
    if lin.n != 2:
        raise ValueError("the staged solve is defined for n = 2 only")
    c_index = [(i, j, k) for i in range(2) for j in range(2) for k in range(j, 2)]
    s_index = [idx for idx in itertools.product(range(2), repeat=3) if idx not in STAGED_FIXED_S]
    count = len(c_index) + len(s_index)
    iu1, iu0 = np.triu_indices(4), np.triu_indices(2)

    def unpack(x):
        c, S = np.zeros((2, 2, 2)), np.zeros((2, 2, 2))
        for v, (i, j, k) in zip(x, c_index):
            c[i, j, k] = c[i, k, j] = v
        for v, idx in zip(x[len(c_index):], s_index):
            S[idx] = v
        return ChangeOfVars(c, S, lam, mu)

    def residuals(x):
        Q0, Q1 = q_formulas(lin, unpack(x))
        return (Q0 - lam * np.eye(2))[iu0], (Q1 - mu * np.eye(4))[iu1]

    r0, r1 = residuals(np.zeros(count))
    cols = [residuals(e) for e in np.eye(count)]
    M0 = np.column_stack([c0 - r0 for c0, _ in cols])
    M1 = np.column_stack([c1 - r1 for _, c1 in cols])
    _, sv, Vt = np.linalg.svd(M1)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    if rank < 9:
        raise ChangeOfVarsError(f"stage one is rank deficient (rank {rank} of 9); K must be nonzero",
                                "nonzero Gauss curvature", float("nan"))
    x1 = np.linalg.lstsq(M1, -r1, rcond=None)[0]
    stage1 = float(np.max(np.abs(M1 @ x1 + r1)))
    if stage1 > tol:
        raise ChangeOfVarsError(f"stage one leaves residual {stage1:.3e}", "nonzero Gauss curvature", stage1)
    N = Vt[rank:].T
    reduced = M0 @ N
    if np.linalg.matrix_rank(reduced, tol=1e-10 * max(1.0, np.max(np.abs(reduced)))) < N.shape[1]:
        # the coefficient matrices depend on K alone; this happens at K = -1
        raise ChangeOfVarsError("stage two is degenerate for this normal form; use solve_change_of_vars",
                                "staged elimination degenerate", float("nan"))
    y = np.linalg.lstsq(reduced, -(r0 + M0 @ x1), rcond=None)[0]
    x = x1 + N @ y
    worst = max(float(np.max(np.abs(r))) for r in residuals(x))
    if worst > tol:
        condition, value = _trace_report(lin, lam)
        raise ChangeOfVarsError(f"stage two leaves residual {worst:.3e}; violated: {condition} ({value:.3e})",
                                condition, worst)
    return unpack(x)


def apply_transform(lin: EmbeddingLinearization, cov: ChangeOfVars) -> LinearSystemField:
    """The system for ``w`` in coordinates ``xbar``, by the exact chain rule.

    ``Atilde^j = M^T (J^-1)^j_i Abar^i(x) M``,
    ``Btilde = M^T (B(x) M + (J^-1)^j_i Abar^i S_j)``, ``htilde = M^T h(x)``,
    with ``x = x(xbar)``, ``J = dx/dxbar`` and ``M = I + xbar^l S_l``.  To
    first order these agree with the truncated expressions, so the quadratic
    forms at the origin are the closed-form ones.
    """
    base = lin.system
    n = lin.n

    def pieces(xbar):
        xbar = np.asarray(xbar, dtype=float)
        x = cov.x_of_xbar(xbar)
        Jinv = np.linalg.inv(cov.jacobian(xbar))
        M = cov.mixing(xbar)
        return x, Jinv, M

    def A(xbar):
        x, Jinv, M = pieces(xbar)
        Ai = base.A(x)
        inner = np.einsum("...ji,...iab->...jab", Jinv, Ai)
        return np.einsum("...ca,...jcd,...db->...jab", M, inner, M)

    def B(xbar):
        x, Jinv, M = pieces(xbar)
        Ai = base.A(x)
        inner = np.einsum("...cd,...db->...cb", base.B(x), M)
        inner = inner + np.einsum("...ji,...icd,jdb->...cb", Jinv, Ai, cov.S)
        return np.einsum("...ca,...cb->...ab", M, inner)

    def h(xbar):
        x, _, M = pieces(xbar)
        return np.einsum("...ca,...c->...a", M, base.h(x))

    return LinearSystemField(n=n, s=n, A=A, B=B, h=h)


def normal_christoffel_derivative(R: np.ndarray) -> np.ndarray:
    """``d_p Gamma^k_ij(0)`` in normal coordinates, where ``g_ab = delta_ab - R_acbd x^c x^d / 3 + O(|x|^3)``."""
    d2g = -(np.einsum("apbq->abpq", R) + np.einsum("aqbp->abpq", R)) / 3.0
    return 0.5 * (np.einsum("kjip->pkij", d2g) + np.einsum("kijp->pkij", d2g) - np.einsum("ijkp->pkij", d2g))


def fd_quadratic_forms(system: LinearSystemField, fd_step: float = 3e-4) -> Tuple[np.ndarray, np.ndarray]:
    """Q0 and Q1 at the origin by central differences with one Richardson step (error O(step^4))."""
    origin = np.zeros((1, system.n))

    def forms(step):
        return (assemble_q0(system, origin, step, method="fd")[0],
                assemble_q1(system, origin, step, method="fd")[0])

    coarse, fine = forms(fd_step), forms(fd_step / 2)
    return tuple((4 * f - c) / 3 for c, f in zip(coarse, fine))


def ssp_radius(system: LinearSystemField, lam: float, mu: float, fraction: float = 0.5, r_max: float = 0.5,
               samples: int = 200, iterations: int = 30) -> float:
    """Largest radius (by bisection) with sampled min eigenvalues above ``fraction`` of the targets.

    Samples lie on the sphere of each trial radius, where the drift from the
    origin values is largest for the near-linear fields met here.
    """
    net = ball_samples(system.n, 1.0, samples)
    net = net / np.linalg.norm(net, axis=1, keepdims=True)

    def ok(r):
        rep = check_ssp(system, r * net, net_size=16)
        return rep.lambda0_min >= fraction * lam and rep.lambda1_min >= fraction * mu

    if ok(r_max):
        return r_max
    lo, hi = 0.0, r_max
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# ---------------------------------------------------------------------------
# graph embeddings and reconstruction


@dataclass(frozen=True)
class GraphEmbedding:
    """``y0(x) = (x, Q^alpha_ij x^i x^j / 2 + C^alpha_ijk x^i x^j x^k / 6)``.

    The origin is in normal coordinates; ``d_p Gamma^k_ij(0) = sum_alpha Q^alpha_ij Q^alpha_kp``.
    """

    Q: np.ndarray
    C: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.Q.shape[1]

    @property
    def N(self) -> int:
        return self.n + self.Q.shape[0]

    def _cubic(self):
        m, n = self.Q.shape[0], self.n
        return np.zeros((m, n, n, n)) if self.C is None else np.asarray(self.C, dtype=float)

    def tangents(self, x) -> np.ndarray:
        """``d_i y0`` as rows, shape (..., n, N)."""
        x = np.asarray(x, dtype=float)
        normal = np.einsum("aij,...j->...ia", self.Q, x) + 0.5 * np.einsum("aijk,...j,...k->...ia", self._cubic(), x, x)
        eye = np.broadcast_to(np.eye(self.n), x.shape[:-1] + (self.n, self.n))
        return np.concatenate([eye, normal], axis=-1)

    def second(self, x) -> np.ndarray:
        """``d_i d_j y0``, shape (..., n, n, N)."""
        x = np.asarray(x, dtype=float)
        normal = self.Q + np.einsum("aijk,...k->...aij", self._cubic(), x)
        normal = np.moveaxis(normal, -3, -1)
        zeros = np.zeros(x.shape[:-1] + (self.n, self.n, self.n))
        return np.concatenate([zeros, normal], axis=-1)

    def metric(self, x) -> np.ndarray:
        T = self.tangents(x)
        return np.einsum("...ia,...ja->...ij", T, T)

    def christoffel(self, x) -> np.ndarray:
        """``Gamma[..., k, i, j]``."""
        T = self.tangents(x)
        g_inv = np.linalg.inv(self.metric(x))
        proj = np.einsum("...ija,...la->...ijl", self.second(x), T)
        return np.einsum("...kl,...ijl->...kij", g_inv, proj)

    def sff_vectors(self, x) -> np.ndarray:
        """Normal parts ``H_ij`` of the second derivatives, shape (..., n, n, N)."""
        return self.second(x) - np.einsum("...kij,...ka->...ija", self.christoffel(x), self.tangents(x))

    def christoffel_derivative(self) -> np.ndarray:
        return np.einsum("aij,akp->pkij", self.Q, self.Q)

    def linearized_operator(self, x, v, dv) -> np.ndarray:
        """``d_i y0 . d_j v + d_j y0 . d_i v`` with ``dv[..., j, a] = d_j v^a``."""
        T = self.tangents(x)
        P = np.einsum("...ia,...ja->...ij", T, dv)
        return P + np.swapaxes(P, -1, -2)


def grid_gradient(grid, values: np.ndarray) -> np.ndarray:
    """Second-order differences: central inside runs, three-point one-sided at run ends.

    Returns ``[node, component, axis]``.
    """
    u = np.asarray(values, dtype=float).reshape(grid.size, -1)
    out = np.zeros(u.shape + (grid.n,))
    dx = grid.dx
    for axis in range(grid.n):
        lo, hi = grid.neighbour(axis, -1), grid.neighbour(axis, 1)
        both = (lo >= 0) & (hi >= 0)
        out[both, :, axis] = (u[hi[both]] - u[lo[both]]) / (2 * dx)
        start = np.flatnonzero(lo < 0)
        nxt = hi[start]
        nxt2 = grid.neighbour(axis, 1)[nxt]
        out[start, :, axis] = (-3 * u[start] + 4 * u[nxt] - u[nxt2]) / (2 * dx)
        end = np.flatnonzero(hi < 0)
        prv = lo[end]
        prv2 = grid.neighbour(axis, -1)[prv]
        out[end, :, axis] = (3 * u[end] - 4 * u[prv] + u[prv2]) / (2 * dx)
    return out


@dataclass(frozen=True)
class Reconstruction:
    v: np.ndarray
    eta: np.ndarray
    projection_residual: float

    def to_dict(self) -> dict:
        return {"projection_residual": self.projection_residual}


def reconstruct_normal_components(vbar: np.ndarray, dvbar: np.ndarray, embedding: GraphEmbedding, x: np.ndarray,
                                  metric_perturbation: np.ndarray, rank_tol: float = 1e-10) -> Reconstruction:
    """Recover the full field ``v`` from the tangential part at the points ``x``.

    ``dvbar[..., i, j] = d_j vbar_i``.  The equations
    ``v . d_i y0 = vbar_i`` and ``-2 v . H_ij = eta_ij`` with
    ``eta_ij = hmetric_ij - nabla_i vbar_j - nabla_j vbar_i`` are solved by
    least squares at each point; the leftover is the component of ``eta``
    outside the span of ``H``.
    """
    x = np.asarray(x, dtype=float)
    n = embedding.n
    Gam = embedding.christoffel(x)
    nabla = np.swapaxes(dvbar, -1, -2) - np.einsum("...kij,...k->...ij", Gam, vbar)  # nabla[i, j] = nabla_i vbar_j
    eta = metric_perturbation - nabla - np.swapaxes(nabla, -1, -2)
    T = embedding.tangents(x)
    Hv = embedding.sff_vectors(x)
    iu = np.triu_indices(n)
    rows = np.concatenate([T, -2 * Hv[..., iu[0], iu[1], :]], axis=-2)
    rhs = np.concatenate([vbar, eta[..., iu[0], iu[1]]], axis=-1)
    flat_rows = rows.reshape(-1, *rows.shape[-2:])
    flat_rhs = rhs.reshape(-1, rhs.shape[-1])
    v = np.empty((flat_rows.shape[0], embedding.N))
    worst_proj = 0.0
    for p, (Mrow, b) in enumerate(zip(flat_rows, flat_rhs)):
        sv = np.linalg.svd(Mrow, compute_uv=False)
        if sv[-1] <= rank_tol * sv[0]:
            raise np.linalg.LinAlgError("second fundamental form is rank deficient at a sample point")
        v[p] = np.linalg.lstsq(Mrow, b, rcond=None)[0]
        worst_proj = max(worst_proj, float(np.max(np.abs(Mrow @ v[p] - b))))
    v = v.reshape(x.shape[:-1] + (embedding.N,))
    return Reconstruction(v, eta, worst_proj)


def linearized_residual(grid, embedding: GraphEmbedding, v: np.ndarray, metric_perturbation: np.ndarray) -> float:
    """Max-abs defect of ``d_i y0 . d_j v + d_j y0 . d_i v = hmetric_ij`` on the grid."""
    dv = np.swapaxes(grid_gradient(grid, v), -1, -2)
    return float(np.max(np.abs(embedding.linearized_operator(grid.nodes, v, dv) - metric_perturbation)))


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    n: int
    sff: SffJet
    annihilator: AnnihilatorJet
    dGamma: np.ndarray
    change_of_vars: ChangeOfVars
    q0_formula: np.ndarray
    q1_formula: np.ndarray
    q0_fd: np.ndarray
    q1_fd: np.ndarray
    constraint_residuals: Dict[str, float]
    neighbourhood: PositivityReport
    sample_radius: float
    positivity_radius: float

    @property
    def q0_deviation(self) -> float:
        return float(np.max(np.abs(self.q0_formula - self.change_of_vars.lam * np.eye(self.n))))

    @property
    def q1_deviation(self) -> float:
        return float(np.max(np.abs(self.q1_formula - self.change_of_vars.mu * np.eye(self.n ** 2))))

    @property
    def fd_agreement(self) -> float:
        return max(float(np.max(np.abs(self.q0_fd - self.q0_formula))),
                   float(np.max(np.abs(self.q1_fd - self.q1_formula))))

    def certified(self, tol: float = 1e-8) -> bool:
        """Targets hit at the origin and every constraint family satisfied."""
        return (self.q0_deviation <= tol and self.q1_deviation <= tol
                and max(self.constraint_residuals.values()) <= tol)

    def neighbourhood_ok(self, fraction: float = 0.9) -> bool:
        lam, mu = self.change_of_vars.lam, self.change_of_vars.mu
        rep = self.neighbourhood
        return rep.symmetric and rep.lambda0_min >= fraction * lam and rep.lambda1_min >= fraction * mu

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "sff": self.sff.to_dict(),
            "annihilator": self.annihilator.to_dict(),
            "dGamma": self.dGamma,
            "change_of_vars": self.change_of_vars.to_dict(),
            "q0": self.q0_formula,
            "q1": self.q1_formula,
            "q0_deviation": self.q0_deviation,
            "q1_deviation": self.q1_deviation,
            "fd_agreement": self.fd_agreement,
            "constraint_residuals": self.constraint_residuals,
            "neighbourhood": self.neighbourhood.to_dict(),
            "sample_radius": self.sample_radius,
            "neighbourhood_ok": self.neighbourhood_ok(),
            "positivity_radius": self.positivity_radius,
            "certified": self.certified(),
        }


def _finish(curv, sff: SffJet, annih: AnnihilatorJet, lam: float, mu: float, sample_radius: float,
            samples: int) -> PipelineResult:
    sol = solve_derivative_constraints(curv, sff, annih, lam)
    dGamma = normal_christoffel_derivative(in_frame(curv, sol.sff).riemann())
    lin = assemble_linearization(sol.annihilator, dGamma, sff=sol.sff)
    cov = solve_change_of_vars(lin, lam, mu)
    q0, q1 = q_formulas(lin, cov)
    transformed = apply_transform(lin, cov)
    q0_fd, q1_fd = fd_quadratic_forms(transformed)
    report = check_ssp(transformed, ball_samples(sff.n, sample_radius, samples), net_size=16)
    radius = ssp_radius(transformed, lam, mu, fraction=0.9, r_max=4 * sample_radius, samples=64, iterations=12)
    return PipelineResult(sff.n, sol.sff, sol.annihilator, dGamma, cov, q0, q1, q0_fd, q1_fd, dict(sol.residuals), report,
                          sample_radius, radius)


def run_pipeline_2d(K: float, k1: float = 0.0, k2: float = 0.0, lam: float = 1.0, mu: float = 1.0,
                    sample_radius: float = 0.05, samples: int = 200) -> PipelineResult:
    sff, annih = normal_form_2d(K)
    return _finish(CurvatureJet2D(K, k1, k2), sff, annih, lam, mu, sample_radius, samples)


def run_pipeline_3d(Rhat, r=None, sigma: Optional[float] = None, lam: float = 1.0, mu: float = 1.0,
                    sample_radius: float = 0.05, samples: int = 200) -> PipelineResult:
    """Works in the normal-form coordinates of the solved second fundamental form."""
    curv = CurvatureJet3D(np.asarray(Rhat, dtype=float), np.zeros(15) if r is None else r)
    sff = solve_gauss_3d(curv, sigma)
    annih = annihilator_basis(sff)
    return _finish(curv, sff, annih, lam, mu, sample_radius, samples)
