"""The scalar regular-singular equation ``(x - x0) u' + b u = h``.

The bounded solution is ``u(x) = int_0^1 t^(b-1) h(x0 + t (x - x0)) dt``;
every other solution adds ``C |x - x0|^(-b)``.  A first-order upwind
discretisation without boundary data shows that the discrete problem has a
trivial kernel exactly when ``x0`` lies inside the interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

from .core import BallDomain, check_p_convex, ode_system

RHS_LIBRARY: dict = {
    "const1": lambda x: np.ones_like(np.asarray(x, dtype=float)),
    "linear": lambda x: np.asarray(x, dtype=float),
    "sin": lambda x: np.sin(np.asarray(x, dtype=float)),
    "zero": lambda x: np.zeros_like(np.asarray(x, dtype=float)),
}


@dataclass(frozen=True)
class OdeSpec:
    x0: float
    b: float
    h: Callable[[np.ndarray], np.ndarray]
    C: float = 0.0


def _adaptive_gauss(f, a: float, b: float, quad_points: int, tol: float = 1e-13, max_depth: int = 40) -> np.ndarray:
    """Panel-adaptive Gauss-Legendre for a vector-valued integrand.

    A panel is accepted when splitting it in two changes the estimate by less
    than ``tol`` (relative to the running magnitude) in every component.
    """
    nodes, weights = leggauss(quad_points)

    def panel(lo, hi):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        vals = f(mid + half * nodes)
        return half * np.tensordot(weights, vals, axes=(0, 0))

    total = 0.0
    stack = [(a, b, panel(a, b), 0)]
    while stack:
        lo, hi, whole, depth = stack.pop()
        m = 0.5 * (lo + hi)
        left, right = panel(lo, m), panel(m, hi)
        split = left + right
        scale = max(1.0, float(np.max(np.abs(split))))
        if depth >= max_depth or np.max(np.abs(split - whole)) <= tol * scale:
            total = total + split
        else:
            stack.append((m, hi, right, depth + 1))
            stack.append((lo, m, left, depth + 1))
    return np.asarray(total)


def closed_form(spec: OdeSpec, x, quad_points: int = 16):
    """Evaluate the solution with homogeneous constant ``spec.C`` at ``x``.

    Uses the substitution ``t = tau^(1/b)`` so the weight ``t^(b-1)`` is
    absorbed, then integrates ``h`` along the segment from ``x0`` to ``x``.
    """
    if not spec.b > 0:
        raise ValueError("b must be positive for the bounded solution to exist")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    at_singular = xs == spec.x0
    if spec.C != 0 and np.any(at_singular):
        raise ValueError("solution with C != 0 is unbounded at x0")
    d = xs - spec.x0

    def integrand(tau):
        t = tau[:, None] ** (1.0 / spec.b)
        return np.asarray(spec.h(spec.x0 + t * d[None, :]), dtype=float)

    u = _adaptive_gauss(integrand, 0.0, 1.0, quad_points) / spec.b
    u = np.broadcast_to(u, xs.shape).astype(float)
    if spec.C != 0:
        u = u + spec.C * np.abs(d) ** (-spec.b)
    return float(u[0]) if np.ndim(x) == 0 else u


@dataclass(frozen=True)
class UniquenessReport:
    pconvex: bool
    solution_space_dim: int
    residual: float
    max_error: float
    singular_values: Tuple[float, float]
    nodes: np.ndarray
    solution: np.ndarray

    @property
    def singular_gap(self) -> float:
        """``s2 / s1``, with ``s1`` floored at machine precision relative to ``s2``."""
        s1, s2 = self.singular_values
        return s2 / max(s1, np.finfo(float).eps * s2)

    def to_dict(self) -> dict:
        return {
            "pconvex": self.pconvex,
            "singular_gap": self.singular_gap,
            "solution_space_dim": self.solution_space_dim,
            "residual": self.residual,
            "max_error": self.max_error,
            "smallest_singular_values": list(self.singular_values),
            "grid_points": int(self.nodes.size),
        }


def upwind_operator(x0: float, b: float, nodes: np.ndarray) -> Tuple[sps.csr_matrix, np.ndarray]:
    """Rows of the upwind scheme; returns (matrix, index of the node each row lives on).

    A node gets an equation only when its upwind neighbour exists, so no
    boundary condition is ever imposed.
    """
    N = nodes.size
    dx = nodes[1] - nodes[0]
    data, cols, where = [], [], []
    for k, xk in enumerate(nodes):
        a = xk - x0
        if a > 0:
            if k == 0:
                continue
            data += [a / dx + b, -a / dx]
            cols += [k, k - 1]
        elif a < 0:
            if k == N - 1:
                continue
            data += [b - a / dx, a / dx]
            cols += [k, k + 1]
        else:
            data += [b, 0.0]
            cols += [k, k]
        where.append(k)
    rows = np.repeat(np.arange(len(where)), 2)
    M = sps.csr_matrix((data, (rows, cols)), shape=(len(where), N))
    return M, np.array(where)


def smallest_singular_values(M: sps.spmatrix, count: int = 2) -> np.ndarray:
    """Smallest singular values of a tridiagonal matrix (padded to square).

    Uses the symmetric augmented matrix [[0, M], [M^T, 0]] with rows and
    columns interleaved, which is banded with half-bandwidth 3; its
    eigenvalues are the signed singular values.
    """
    N = M.shape[1]
    M = sps.coo_matrix(M)
    if np.any(np.abs(M.row - M.col) > 1):
        raise ValueError("operator is not tridiagonal")
    band = np.zeros((4, 2 * N))
    # K[2r, 2c + 1] = M[r, c]; lower storage keeps band[i, j] = K[j + i, j]
    for r, c, v in zip(M.row, M.col, M.data):
        i, j = 2 * r, 2 * c + 1
        lo, hi = min(i, j), max(i, j)
        band[hi - lo, lo] += v
    vals = scipy.linalg.eigvals_banded(band, lower=True, select="i", select_range=(N - count, N + count - 1))
    # each singular value appears as a +/- pair
    return np.sort(np.abs(vals))[::2]


def uniqueness_demo(
    x0: float,
    b: float,
    h: Callable,
    interval: Tuple[float, float],
    grid_size: float,
    kernel_tol: float = 1e-8,
) -> UniquenessReport:
    """Solve the equation on ``interval`` with no boundary data."""
    lo, hi = map(float, interval)
    if not hi > lo:
        raise ValueError("interval must have positive length")
    if not 0 < grid_size < hi - lo:
        raise ValueError("grid spacing must be positive and smaller than the interval")
    inside = lo < x0 < hi
    if inside and grid_size > min(x0 - lo, hi - x0):
        raise ValueError("grid too coarse to resolve the singular point")
    N = int(round((hi - lo) / grid_size)) + 1
    nodes = np.linspace(lo, hi, N)
    M, where = upwind_operator(x0, b, nodes)
    rhs = np.asarray(h(nodes[where]), dtype=float)

    sv = smallest_singular_values(M, 2)
    dim = int(np.sum(sv <= kernel_tol))
    if M.shape[0] == N:
        u = spla.spsolve(M.tocsc(), rhs)
    else:
        # minimum-norm member of the discrete solution family
        u, *_ = scipy.linalg.lstsq(M.toarray(), rhs, lapack_driver="gelsd")
    residual = float(np.max(np.abs(M @ u - rhs))) if rhs.size else 0.0

    max_error = float("nan")
    if inside and b > 0:
        exact = closed_form(OdeSpec(x0, b, h), nodes)
        max_error = float(np.max(np.abs(u - exact)))
    ball = BallDomain(np.array([0.5 * (lo + hi)]), 0.5 * (hi - lo))
    pconvex = check_p_convex(ode_system(x0, b), ball, boundary_samples=2).pconvex
    return UniquenessReport(
        pconvex=pconvex,
        solution_space_dim=dim,
        residual=residual,
        max_error=max_error,
        singular_values=(float(sv[0]), float(sv[1])),
        nodes=nodes,
        solution=u,
    )
