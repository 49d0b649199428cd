"""Taylor splitting at a point and extension of the remainders to all of R^n.

The extension operator reflects radially across the sphere |x| = r with the
C^1 two-point rule ``E f(r + d) = -3 f(r - d) + 4 f(r - d/2)`` and multiplies
by a smooth cutoff that equals 1 up to 1.5 r and vanishes from 2 r on.  All
norms of remainders use the r-scaled sup norm ``|f|_0 + r |grad f|_0`` so
that operator constants do not depend on r.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .core import (
    LinearSystemField,
    _points,
    assemble_q0,
    assemble_q1,
    ball_samples,
    boundary_net,
    BallDomain,
    sym_eigvalsh,
)

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TaylorJet:
    """First-order jet of a system at ``center`` plus exact remainders.

    Remainders and the right-hand side are functions of the displacement
    ``y = x - center``.
    """

    center: np.ndarray
    Bbar: np.ndarray
    Abar: np.ndarray
    Abar_deriv: np.ndarray  # [i, j] = d_j A^i at the center
    Bhat: Field
    Ahat: Field
    h: Field

    @property
    def n(self) -> int:
        return self.Abar.shape[0]

    @property
    def s(self) -> int:
        return self.Abar.shape[1]

    def linear_A(self, y) -> np.ndarray:
        return self.Abar + np.einsum("...j,ijab->...iab", y, self.Abar_deriv)

    def q0_bar(self) -> np.ndarray:
        return self.Bbar + self.Bbar.T - np.einsum("iiab->ab", self.Abar_deriv)

    def q1_bar(self) -> np.ndarray:
        n, s = self.n, self.s
        D = self.Abar_deriv  # [i, j] = d_j A^i
        blocks = np.transpose(D, (1, 0, 2, 3)) + D
        return np.swapaxes(blocks, 1, 2).reshape(n * s, n * s)

    def lambdas(self):
        return float(sym_eigvalsh(self.q0_bar())[0]), float(sym_eigvalsh(self.q1_bar())[0])


@dataclass(frozen=True)
class AdmissibleParams:
    r: float
    rho: float
    alpha: int
    delta: float
    M0: float
    M1: float

    def __post_init__(self):
        if min(self.r, self.rho, self.delta) <= 0:
            raise ValueError("r, rho and delta must be positive")
        if self.M0 <= 0 or self.M1 <= 0:
            raise ValueError("extension constants must be positive")

    @staticmethod
    def min_alpha(n: int) -> int:
        return 3 + n // 2

    def check(self, n: int) -> None:
        if self.alpha < self.min_alpha(n):
            raise ValueError(f"alpha must be at least {self.min_alpha(n)} for n={n}")


def taylor_split(sys: LinearSystemField, center, fd_step: float = 1e-5) -> TaylorJet:
    """Split ``sys`` into its first-order jet at ``center`` and remainders.

    Derivatives are exact when the system carries them, otherwise central
    differences.  The remainders are defined by subtraction, so the
    reconstruction identity holds exactly in floating point up to the order
    of operations.
    """
    c = _points(center, sys.n).reshape(sys.n)
    Bbar = np.asarray(sys.B(c), dtype=float)
    Abar = np.asarray(sys.A(c), dtype=float)
    D = np.swapaxes(sys.derivative_A(c, fd_step), 0, 1)  # -> [i, j]
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(Abar)) and np.all(np.isfinite(Bbar))):
        raise FloatingPointError("non-finite jet at the expansion point")

    def Ahat(y):
        y = _points(y, sys.n)
        return sys.A(c + y) - Abar - np.einsum("...j,ijab->...iab", y, D)

    def Bhat(y):
        y = _points(y, sys.n)
        return sys.B(c + y) - Bbar

    def h(y):
        return sys.h(c + _points(y, sys.n))

    return TaylorJet(center=c, Bbar=Bbar, Abar=Abar, Abar_deriv=D, Bhat=Bhat, Ahat=Ahat, h=h)


def smooth_cutoff(t) -> np.ndarray:
    """C-infinity function of t = |x| / r: 1 for t <= 1.5, 0 for t >= 2."""
    t = np.asarray(t, dtype=float)
    u = np.clip((t - 1.5) / 0.5, 0.0, 1.0)

    def g(z):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    return g(1 - u) / (g(1 - u) + g(u))


class RadialExtension:
    """Extension of a field from the ball B_r (centered at 0) to R^n."""

    def __init__(self, f: Field, r: float, n: int):
        if r <= 0:
            raise ValueError("radius must be positive")
        self.f, self.r, self.n = f, float(r), n

    def __call__(self, x) -> np.ndarray:
        x = _points(x, self.n)
        rho = np.linalg.norm(x, axis=-1)
        inside = rho <= self.r
        d = np.clip(rho - self.r, 0.0, self.r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(inside[..., None], 0.0, x / np.where(rho > 0, rho, 1.0)[..., None])
        near = unit * (self.r - d)[..., None]
        half = unit * (self.r - 0.5 * d)[..., None]
        fx = np.asarray(self.f(np.where(inside[..., None], x, 0.0 * x)))
        extra = fx.ndim - rho.ndim
        shape = rho.shape + (1,) * extra
        reflected = -3.0 * np.asarray(self.f(near)) + 4.0 * np.asarray(self.f(half))
        cut = smooth_cutoff(rho / self.r).reshape(shape)
        return np.where(inside.reshape(shape), fx, cut * reflected)

    def gradient(self, x, step: Optional[float] = None) -> np.ndarray:
        """Central-difference gradient; the derivative axis is placed after the point axes."""
        x = _points(x, self.n)
        h = 1e-6 * self.r if step is None else step
        cols = []
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = h
            cols.append((self(x + e) - self(x - e)) / (2 * h))
        return np.stack(cols, axis=x.ndim - 1)


def _sup(values: np.ndarray) -> float:
    return float(np.max(np.abs(values))) if values.size else 0.0


def scaled_norms(f: Field, r: float, points: np.ndarray, grad: Optional[Field] = None) -> Dict[str, float]:
    """Sup of |f| and |grad f| (entrywise) over ``points`` and the r-scaled C^1 norm."""
    n = points.shape[-1]
    if grad is None:
        h = 1e-6 * r
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            cols.append((np.asarray(f(points + e)) - np.asarray(f(points - e))) / (2 * h))
        g = np.stack(cols)
    else:
        g = np.asarray(grad(points))
    f0 = _sup(np.asarray(f(points)))
    f1 = _sup(g)
    return {"sup": f0, "grad_sup": f1, "scaled_c1": f0 + r * f1}


@dataclass(frozen=True)
class ExtensionResult:
    field: RadialExtension
    constants: Dict[int, float]


def _sample_sets(n: int, r: float, count: int):
    inner = ball_samples(n, r, count)
    outer = ball_samples(n, 2.2 * r, 2 * count)
    return inner, outer


def extend_remainder(f: Field, r: float, n: int, k_max: int = 1, samples: int = 400) -> ExtensionResult:
    """Extend ``f`` from B_r and measure the ratios ``|E f|_k / |f|_k`` for k <= k_max.

    Only k = 0 and k = 1 (r-scaled) are supported: the reflection rule is C^1.
    """
    if k_max not in (0, 1):
        raise ValueError("only k_max in {0, 1} is supported by a C^1 reflection")
    ext = RadialExtension(f, r, n)
    inner, outer = _sample_sets(n, r, samples)
    src = scaled_norms(f, r, inner)
    if not np.isfinite(src["scaled_c1"]):
        raise ValueError("field is unbounded on the ball")
    dst = scaled_norms(ext, r, outer, grad=ext.gradient)
    consts = {0: dst["sup"] / src["sup"] if src["sup"] > 0 else 0.0}
    if k_max >= 1:
        consts[1] = dst["scaled_c1"] / src["scaled_c1"] if src["scaled_c1"] > 0 else 0.0
    return ExtensionResult(ext, consts)


def probe_functions(n: int) -> List[Field]:
    """Fixed shape functions on the unit ball used to measure operator constants."""
    probes: List[Field] = [
        lambda y: np.ones(y.shape[:-1]),
        lambda y: y[..., 0],
        lambda y: np.sum(y * y, axis=-1),
        lambda y: np.cos(3.0 * y[..., 0]) + y[..., -1] ** 3,
        lambda y: 1.0 - 2.0 * np.sum(y * y, axis=-1) + y[..., 0] * y[..., -1],
    ]
    return probes


def extension_constants(n: int, r: float = 1.0, samples: int = 400) -> Dict[int, float]:
    """Sup over the probe family of the measured ratios, probes scaled to B_r."""
    best = {0: 0.0, 1: 0.0}
    for g in probe_functions(n):
        res = extend_remainder(lambda x, g=g: g(np.asarray(x) / r), r, n, k_max=1, samples=samples)
        for k in best:
            best[k] = max(best[k], res.constants[k])
    return best


def perturbation_budget(lambda0: float, lambda1: float, n: int, s: int) -> float:
    """Largest entrywise perturbation keeping both minimum eigenvalues above half.

    An s x s matrix with entries below eps has spectral norm below s * eps;
    the zeroth-order form moves by at most (n + 2) entrywise perturbations and
    each first-order block by two.
    """
    return min(lambda0 / (2 * s * (n + 2)), lambda1 / (4 * n * s))


@dataclass(frozen=True)
class BudgetCheck:
    r: float
    B_sup: float
    A_sup: float
    A_scaled: float
    ok: bool

    def to_dict(self) -> dict:
        return {"r": self.r, "B_sup": self.B_sup, "A_sup": self.A_sup, "A_scaled_c1": self.A_scaled, "ok": self.ok}


def check_budget(jet: TaylorJet, r: float, delta: float, M0: float, M1: float, samples: int = 400) -> BudgetCheck:
    pts = ball_samples(jet.n, r, samples)
    nb = scaled_norms(jet.Bhat, r, pts)
    na = scaled_norms(jet.Ahat, r, pts)
    ok = nb["sup"] < delta / (4 * M0) and na["scaled_c1"] / r < delta / (4 * M1) and na["sup"] < delta / (2 * M0)
    return BudgetCheck(r, nb["sup"], na["sup"], na["scaled_c1"], bool(ok))


def choose_radius(jet: TaylorJet, delta: float, M0: float, M1: float, r0: float = 1.0, max_iter: int = 20, samples: int = 400):
    """Halve r from ``r0`` until the remainder budget holds; returns (r, history)."""
    history = []
    r = r0
    for _ in range(max_iter):
        chk = check_budget(jet, r, delta, M0, M1, samples)
        history.append(chk)
        if chk.ok:
            return r, history
        r *= 0.5
    raise RuntimeError(
        "remainder budget unreachable; last measured norms: " + repr(history[-1].to_dict())
    )


@dataclass(frozen=True)
class ExtendedSystem:
    system: LinearSystemField
    jet: TaylorJet
    params: AdmissibleParams
    lambda0: float
    lambda1: float
    lambda0_half: float
    lambda1_half: float
    measured_q0_min: float
    measured_q1_min: float
    budget: BudgetCheck
    A_ext: RadialExtension = field(repr=False)

    @property
    def certified(self) -> bool:
        return self.measured_q0_min >= self.lambda0_half and self.measured_q1_min >= self.lambda1_half

    def to_dict(self) -> dict:
        return {
            "r": self.params.r,
            "delta": self.params.delta,
            "M0": self.params.M0,
            "M1": self.params.M1,
            "alpha": self.params.alpha,
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "lambda0_half": self.lambda0_half,
            "lambda1_half": self.lambda1_half,
            "measured_q0_min": self.measured_q0_min,
            "measured_q1_min": self.measured_q1_min,
            "certified": self.certified,
            "budget": self.budget.to_dict(),
        }


def default_params(jet: TaylorJet, r: Optional[float] = None, rho: float = 1.0, alpha: Optional[int] = None,
                   samples: int = 400) -> AdmissibleParams:
    """Measure the extension constants, compute delta and pick r by halving."""
    lam0, lam1 = jet.lambdas()
    if lam0 <= 0 or lam1 <= 0:
        raise ValueError(f"jet is not strongly symmetric positive at the center (lambda0={lam0}, lambda1={lam1})")
    consts = extension_constants(jet.n)
    M0, M1 = max(consts[0], 1.0), max(consts[1], 1.0)
    delta = perturbation_budget(lam0, lam1, jet.n, jet.s)
    if r is None:
        r, _ = choose_radius(jet, delta, M0, M1, samples=samples)
    a = AdmissibleParams.min_alpha(jet.n) if alpha is None else alpha
    p = AdmissibleParams(r=r, rho=rho, alpha=a, delta=delta, M0=M0, M1=M1)
    p.check(jet.n)
    return p


def build_extended_system(jet: TaylorJet, r: Optional[float] = None, params: Optional[AdmissibleParams] = None,
                          sample_count: int = 1000, sample_radius: Optional[float] = None) -> ExtendedSystem:
    """Extended system with linear jet plus extended remainders, in local coordinates.

    The positivity bounds are verified on ``sample_count`` points of the ball
    of radius ``sample_radius`` (default 4 r, covering the cutoff region and
    beyond).
    """
    if params is None:
        params = default_params(jet, r=r)
    r = params.r
    budget = check_budget(jet, r, params.delta, params.M0, params.M1)
    if not budget.ok:
        raise RuntimeError("remainder budget fails at r=%r: %r" % (r, budget.to_dict()))
    lam0, lam1 = jet.lambdas()
    n, s = jet.n, jet.s
    A_ext = RadialExtension(jet.Ahat, r, n)
    B_ext = RadialExtension(jet.Bhat, r, n)
    h_ext = RadialExtension(jet.h, r, n)

    def A(x):
        x = _points(x, n)
        return jet.linear_A(x) + A_ext(x)

    def B(x):
        return jet.Bbar + B_ext(_points(x, n))

    def dA(x):
        x = _points(x, n)
        g = A_ext.gradient(x)  # [..., j, i, a, b]
        return np.transpose(jet.Abar_deriv, (1, 0, 2, 3)) + g

    system = LinearSystemField(n=n, s=s, A=A, B=B, h=h_ext, dA=dA, symmetric=True)
    R = 4 * r if sample_radius is None else sample_radius
    pts = ball_samples(n, R, sample_count)
    q0 = float(sym_eigvalsh(assemble_q0(system, pts))[:, 0].min())
    q1 = float(sym_eigvalsh(assemble_q1(system, pts))[:, 0].min())
    return ExtendedSystem(
        system=system,
        jet=jet,
        params=params,
        lambda0=lam0,
        lambda1=lam1,
        lambda0_half=0.5 * lam0,
        lambda1_half=0.5 * lam1,
        measured_q0_min=q0,
        measured_q1_min=q1,
        budget=budget,
        A_ext=A_ext,
    )


@dataclass(frozen=True)
class RadiusReport:
    radius: Optional[float]
    candidates: List[float]
    min_eigenvalues: List[float]
    quadratic_min: List[float]
    lower_order_bound: List[float]
    predicted_floor: List[float]

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "candidates": self.candidates,
            "min_eigenvalues": self.min_eigenvalues,
            "quadratic_min": self.quadratic_min,
            "lower_order_bound": self.lower_order_bound,
            "predicted_floor": self.predicted_floor,
        }


def find_p_convex_radius(ext: ExtendedSystem, R_candidates: Sequence[float], tol: float = 1e-10,
                         boundary_samples: int = 64) -> RadiusReport:
    """First candidate radius whose sphere has a positive definite boundary matrix.

    Every candidate is evaluated so the growth of the minimum eigenvalue with
    R can be compared against ``R * lambda1 / 4`` minus the measured size of
    the constant and remainder parts of the boundary matrix.
    """
    if not ext.lambda1_half > 0:
        raise ValueError("extended system has no positive first-order bound")
    cands = [float(R) for R in R_candidates]
    if any(b <= a for a, b in zip(cands, cands[1:])):
        raise ValueError("candidate radii must be increasing")
    n = ext.jet.n
    found = None
    mins, quad, lower, floor = [], [], [], []
    for R in cands:
        ball = BallDomain(np.zeros(n), R)
        pts = boundary_net(ball, max(boundary_samples, 2 * n))
        nu = pts / R
        full = np.einsum("...i,...iab->...ab", nu, ext.system.A(pts))
        q = np.einsum("...i,...j,ijab->...ab", nu, pts, ext.jet.Abar_deriv)
        rest = full - q
        mins.append(float(sym_eigvalsh(full)[:, 0].min()))
        quad.append(float(sym_eigvalsh(q)[:, 0].min()))
        lo = float(np.max(np.linalg.norm(rest, ord=2, axis=(-2, -1))))
        lower.append(lo)
        floor.append(R * ext.lambda1 / 4 - lo)
        if found is None and mins[-1] > tol:
            found = R
    if found is None:
        raise RuntimeError("no candidate radius is P-convex; positivity certificate and boundary data disagree")
    return RadiusReport(found, cands, mins, quad, lower, floor)
