"""First-order linear systems and their positivity certificates.

A system on a domain in R^n with s unknowns reads

    sum_i A^i(x) d_i v + B(x) v = h(x).

All coefficient evaluators are vectorised: they take points of shape
``(..., n)`` and return arrays with the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.stats import qmc

Evaluator = Callable[[np.ndarray], np.ndarray]

DEFAULT_TOL = 1e-10
DEFAULT_FD_STEP = 1e-5


def _points(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != n:
        raise ValueError(f"points must have trailing dimension {n}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class PolynomialJet:
    """Affine coefficient data with optional remainder samplers.

    ``A1[i, j]`` is the constant matrix d_j A^i, ``B1[j]`` is d_j B and
    ``h1[j]`` is d_j h.  Remainders are vectorised callables; ``A_rem_grad``
    optionally returns d_j of the A remainder with shape ``(..., n_j, n_i, s, s)``.
    """

    A0: np.ndarray
    A1: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    A_rem: Optional[Evaluator] = None
    B_rem: Optional[Evaluator] = None
    h_rem: Optional[Evaluator] = None
    A_rem_grad: Optional[Evaluator] = None

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def s(self) -> int:
        return self.A0.shape[1]

    @classmethod
    def zeros(cls, n: int, s: int) -> "PolynomialJet":
        return cls(
            A0=np.zeros((n, s, s)),
            A1=np.zeros((n, n, s, s)),
            B0=np.zeros((s, s)),
            B1=np.zeros((n, s, s)),
            h0=np.zeros(s),
            h1=np.zeros((n, s)),
        )

    def __post_init__(self):
        n, s = self.A0.shape[0], self.A0.shape[1]
        expected = {
            "A0": (n, s, s),
            "A1": (n, n, s, s),
            "B0": (s, s),
            "B1": (n, s, s),
            "h0": (s,),
            "h1": (n, s),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)

    def replace(self, **changes) -> "PolynomialJet":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return PolynomialJet(**values)


@dataclass(frozen=True)
class LinearSystemField:
    """Coefficient fields ``A^1..A^n``, ``B`` and right-hand side ``h``.

    ``dA``, when given, returns the exact derivatives d_j A^i with shape
    ``(..., n_j, n_i, s, s)``; otherwise derivatives are taken by central
    differences.
    """

    n: int
    s: int
    A: Evaluator
    B: Evaluator
    h: Evaluator
    dA: Optional[Evaluator] = None
    symmetric: bool = True
    jet: Optional[PolynomialJet] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.s < 1:
            raise ValueError("n and s must be positive")

    @classmethod
    def from_jet(cls, jet: PolynomialJet, symmetric: bool = True) -> "LinearSystemField":
        def A(x):
            x = _points(x, jet.n)
            out = jet.A0 + np.einsum("...j,ijab->...iab", x, jet.A1)
            if jet.A_rem is not None:
                out = out + jet.A_rem(x)
            return out

        def B(x):
            x = _points(x, jet.n)
            out = jet.B0 + np.einsum("...j,jab->...ab", x, jet.B1)
            if jet.B_rem is not None:
                out = out + jet.B_rem(x)
            return out

        def h(x):
            x = _points(x, jet.n)
            out = jet.h0 + np.einsum("...j,ja->...a", x, jet.h1)
            if jet.h_rem is not None:
                out = out + jet.h_rem(x)
            return out

        dA = None
        if jet.A_rem is None or jet.A_rem_grad is not None:
            lin = np.transpose(jet.A1, (1, 0, 2, 3))

            def dA(x):
                x = _points(x, jet.n)
                out = np.broadcast_to(lin, x.shape[:-1] + lin.shape).copy()
                if jet.A_rem_grad is not None:
                    out = out + jet.A_rem_grad(x)
                return out

        return cls(n=jet.n, s=jet.s, A=A, B=B, h=h, dA=dA, symmetric=symmetric, jet=jet)

    def with_rhs(self, h: Evaluator) -> "LinearSystemField":
        return LinearSystemField(self.n, self.s, self.A, self.B, h, self.dA, self.symmetric, self.jet)

    def derivative_A(self, x, fd_step: float = DEFAULT_FD_STEP, method: str = "auto") -> np.ndarray:
        """Return d_j A^i at the point ``x`` as an array indexed ``[j, i]``."""
        x = _points(x, self.n)
        if method not in ("auto", "exact", "fd"):
            raise ValueError(f"unknown derivative method {method!r}")
        if method == "exact" and self.dA is None:
            raise ValueError("no exact derivative available for this system")
        if self.dA is not None and method != "fd":
            out = np.asarray(self.dA(x), dtype=float)
        else:
            if fd_step <= 0:
                raise ValueError("fd_step must be positive")
            cols = []
            for j in range(self.n):
                e = np.zeros(self.n)
                e[j] = fd_step
                cols.append((self.A(x + e) - self.A(x - e)) / (2 * fd_step))
            out = np.stack(cols, axis=-4)
        expected = x.shape[:-1] + (self.n, self.n, self.s, self.s)
        if out.shape != expected:
            raise ValueError(f"derivative has shape {out.shape}, expected {expected}")
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite coefficient derivative")
        return out


@dataclass(frozen=True)
class BallDomain:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("ball radius must be positive")

    @property
    def n(self) -> int:
        return self.center.shape[0]

    def normal(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.center) / self.radius


@dataclass(frozen=True)
class PositivityReport:
    symmetric: bool
    lambda0_min: float
    lambda1_min: float
    lh_min: float
    points_checked: int

    def is_ssp(self, tol: float = DEFAULT_TOL) -> bool:
        return self.symmetric and self.lambda0_min > tol and self.lambda1_min > tol

    def to_dict(self) -> dict:
        return {
            "symmetric": self.symmetric,
            "lambda0_min": self.lambda0_min,
            "lambda1_min": self.lambda1_min,
            "lh_min": self.lh_min,
            "points_checked": self.points_checked,
            "ssp": self.is_ssp(),
        }


class PConvexity(NamedTuple):
    pconvex: bool
    min_eigenvalue: float


def sym_eigvalsh(M: np.ndarray) -> np.ndarray:
    """Eigenvalues of the symmetric part of ``M`` (batched, ascending)."""
    M = np.asarray(M, dtype=float)
    vals = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite eigenvalues")
    return vals


def sphere_net(dim: int, count: int = 64) -> np.ndarray:
    """Deterministic near-uniform points on the unit sphere in R^dim.

    dim 1 gives the two points +-1, dim 2 uniform angles, dim 3 a spherical
    Fibonacci lattice; higher dimensions map an unscrambled Halton sequence
    through the Gaussian quantile function and normalise.
    """
    if dim < 1:
        raise ValueError("dimension must be positive")
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    if dim == 3:
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        r = np.sqrt(1 - z * z)
        phi = np.pi * (3 - np.sqrt(5)) * k
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    from scipy.special import ndtri

    u = qmc.Halton(d=dim, scramble=False).random(count + 1)[1:]
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def assemble_q0(sys: LinearSystemField, x, fd_step: float = DEFAULT_FD_STEP, method: str = "auto") -> np.ndarray:
    """Return ``B + B^T - sum_i d_i A^i`` at ``x`` (batched over leading axes)."""
    x = _points(x, sys.n)
    B = np.asarray(sys.B(x), dtype=float)
    if B.shape != x.shape[:-1] + (sys.s, sys.s):
        raise ValueError(f"B has shape {B.shape}, expected s x s with s={sys.s}")
    dA = sys.derivative_A(x, fd_step, method)
    div = np.einsum("...iiab->...ab", dA)
    return B + np.swapaxes(B, -1, -2) - div


def assemble_q1(sys: LinearSystemField, x, fd_step: float = DEFAULT_FD_STEP, method: str = "auto") -> np.ndarray:
    """Return the ns x ns matrix whose (i, j) block is d_i A^j + d_j A^i."""
    x = _points(x, sys.n)
    dA = sys.derivative_A(x, fd_step, method)  # [..., j, i]
    blocks = dA + np.swapaxes(dA, -4, -3)
    n, s = sys.n, sys.s
    # blocks[..., i, j, a, b] -> matrix[..., i*s + a, j*s + b]
    return np.swapaxes(blocks, -3, -2).reshape(x.shape[:-1] + (n * s, n * s))


def _is_symmetric(A: np.ndarray, tol: float) -> bool:
    return bool(np.all(np.abs(A - np.swapaxes(A, -1, -2)) <= tol))


def legendre_hadamard_min(Q1: np.ndarray, n: int, s: int, net_size: int = 64) -> float:
    """Minimum of the rank-one form over products of unit-sphere nets.

    This is a sampling lower estimate of the Legendre-Hadamard constant, not
    a proof.
    """
    Q = np.asarray(Q1).reshape(Q1.shape[:-2] + (n, s, n, s))
    eta = sphere_net(n, net_size)
    xi = sphere_net(s, net_size)
    vals = np.einsum("pi,qa,...iajb,pj,qb->...pq", eta, xi, Q, eta, xi, optimize=True)
    return float(vals.min())


def check_ssp(
    sys: LinearSystemField,
    samples,
    tol: float = DEFAULT_TOL,
    fd_step: float = DEFAULT_FD_STEP,
    net_size: int = 64,
) -> PositivityReport:
    samples = _points(samples, sys.n).reshape(-1, sys.n)
    if samples.shape[0] == 0:
        raise ValueError("no sample points given")
    A = np.asarray(sys.A(samples), dtype=float)
    symmetric = _is_symmetric(A, tol)
    q0 = sym_eigvalsh(assemble_q0(sys, samples, fd_step))
    Q1 = assemble_q1(sys, samples, fd_step)
    q1 = sym_eigvalsh(Q1)
    lh = legendre_hadamard_min(Q1, sys.n, sys.s, net_size)
    return PositivityReport(
        symmetric=symmetric,
        lambda0_min=float(q0[:, 0].min()),
        lambda1_min=float(q1[:, 0].min()),
        lh_min=lh,
        points_checked=int(samples.shape[0]),
    )


def characteristic_matrix(sys: LinearSystemField, x, nu, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Boundary matrix ``sum_i nu_i A^i(x)`` for a unit normal ``nu``."""
    nu = _points(nu, sys.n)
    if np.any(np.abs(np.linalg.norm(nu, axis=-1) - 1) > max(tol, 1e-12)):
        raise ValueError("normal vector must have unit length")
    A = sys.A(_points(x, sys.n))
    return np.einsum("...i,...iab->...ab", nu, A)


def boundary_net(ball: BallDomain, count: int) -> np.ndarray:
    if count < 2 * ball.n:
        raise ValueError(f"need at least {2 * ball.n} boundary samples")
    return ball.center + ball.radius * sphere_net(ball.n, count)


def check_p_convex(sys: LinearSystemField, ball: BallDomain, boundary_samples: int = 64, tol: float = DEFAULT_TOL) -> PConvexity:
    if ball.n != sys.n:
        raise ValueError("ball and system dimensions differ")
    pts = boundary_net(ball, boundary_samples)
    beta = characteristic_matrix(sys, pts, ball.normal(pts), tol=1e-9)
    worst = float(sym_eigvalsh(beta)[:, 0].min())
    return PConvexity(worst > tol, worst)


def ode_system(x0: float, b: float, h: Optional[Evaluator] = None) -> LinearSystemField:
    """The scalar system ``(x - x0) u' + b u = h`` as a polynomial jet."""
    jet = PolynomialJet(
        A0=np.array([[[-float(x0)]]]),
        A1=np.ones((1, 1, 1, 1)),
        B0=np.array([[float(b)]]),
        B1=np.zeros((1, 1, 1)),
        h0=np.zeros(1),
        h1=np.zeros((1, 1)),
        h_rem=(lambda x: np.asarray(h(x[..., 0]), dtype=float)[..., None]) if h is not None else None,
    )
    return LinearSystemField.from_jet(jet)


def ball_samples(n: int, radius: float, count: int, center=None) -> np.ndarray:
    """Deterministic sample of ``count`` points in the closed ball.

    One dimension uses a uniform grid; otherwise an unscrambled Halton
    sequence on the enclosing cube, keeping points inside the ball.
    """
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    if n == 1:
        return c + np.linspace(-radius, radius, count)[:, None]
    gen = qmc.Halton(d=n, scramble=False)
    gen.fast_forward(1)
    kept = []
    total = 0
    while total < count:
        pts = 2 * gen.random(4 * count) - 1
        pts = pts[np.sum(pts * pts, axis=1) <= 1]
        kept.append(pts)
        total += len(pts)
    return c + radius * np.concatenate(kept)[:count]
