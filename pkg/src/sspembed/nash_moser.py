"""Smoothing operators, a discrete norm ladder and a Nash-Moser style iteration.

Grid functions live on box grids from :mod:`sspembed.linear_solver`.  The
smoother convolves with a separable bump kernel of radius ``1/t`` after an
even reflection across the box faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .linear_solver import Grid, sobolev_norm

GridFunction = np.ndarray


@dataclass(frozen=True)
class NormLadder:
    """Discrete Sobolev norms ``|u|_k`` for ``k = 0..k_max`` on a box grid."""

    grid: Grid
    k_max: int = 3

    def __post_init__(self):
        if not self.grid.mask.all():
            raise ValueError("the norm ladder needs a full box grid")
        if self.k_max < 0:
            raise ValueError("k_max must be nonnegative")

    def norm(self, u: GridFunction, k: int) -> float:
        if not 0 <= k <= self.k_max:
            raise ValueError(f"order {k} outside 0..{self.k_max}")
        return sobolev_norm(self.grid, np.asarray(u).reshape(self.grid.size, -1), k)

    def norms(self, u: GridFunction) -> List[float]:
        return [self.norm(u, k) for k in range(self.k_max + 1)]


def bump(r: np.ndarray) -> np.ndarray:
    """``exp(-1 / (1 - r^2))`` on ``|r| < 1``, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class Smoother:
    """Convolution with the product bump ``chi_t(x) = t^n chi(t x)``, renormalised to unit discrete mass."""

    grid: Grid
    shape: Callable[[np.ndarray], np.ndarray] = bump

    def kernel(self, t: float) -> np.ndarray:
        if not t > 0:
            raise ValueError("smoothing scale must be positive")
        half = int(np.floor(1.0 / (t * self.grid.dx)))
        offsets = np.arange(-half, half + 1) * self.grid.dx * t
        k = self.shape(offsets)
        if k.sum() == 0:
            # kernel narrower than one cell: the identity
            k = np.zeros_like(offsets)
            k[half] = 1.0
        return k / k.sum()

    def smooth(self, u: GridFunction, t: float) -> GridFunction:
        k = self.kernel(t)
        half = (k.size - 1) // 2
        shape = self.grid.shape
        if any(half > m - 1 for m in shape):
            raise ValueError("kernel support exceeds the reflected domain; increase t")
        u = np.asarray(u, dtype=float)
        field_shape = u.shape[1:]
        arr = u.reshape(shape + field_shape)
        for axis in range(self.grid.n):
            arr = ndimage.convolve1d(arr, k, axis=axis, mode="mirror")
        return arr.reshape(u.shape)

    def discrete_mass(self, t: float) -> float:
        return float(self.kernel(t).sum() ** self.grid.n)


def dyadic_scales(grid: Grid, t_min: float = 2.0, t_max: Optional[float] = None) -> List[float]:
    """Powers of two from ``t_min`` while the kernel spans at least eight cells."""
    if t_max is None:
        t_max = 1.0 / (8 * grid.dx)
    out, t = [], t_min
    while t <= t_max * (1 + 1e-12):
        out.append(t)
        t *= 2
    return out


@dataclass(frozen=True)
class SmoothingEntry:
    i: int
    j: int
    approximation: float
    smoothing: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_smoothing_estimates(ladder: NormLadder, smoother: Smoother, probes: Sequence[GridFunction],
                               pairs: Iterable[Tuple[int, int]], scales: Optional[Sequence[float]] = None
                               ) -> List[SmoothingEntry]:
    """Measured constants: sup over probes and scales of the two ratios.

    For ``i <= j`` the ratios are ``|u - S u|_i / (t^(i-j) |u|_j)`` and
    ``|S u|_j / (t^(j-i) |u|_i)``.  For ``i > j`` both use exponent zero:
    ``|u - S u|_j / |u|_i`` and ``|S u|_j / |u|_i``.
    """
    scales = dyadic_scales(ladder.grid) if scales is None else list(scales)
    out = []
    for i, j in pairs:
        if max(i, j) > ladder.k_max:
            raise ValueError("pair exceeds the ladder")
        approx = smooth_ratio = 0.0
        for u in probes:
            for t in scales:
                su = smoother.smooth(u, t)
                if i <= j:
                    num_a, den_a = ladder.norm(u - su, i), t ** (i - j) * ladder.norm(u, j)
                    num_s, den_s = ladder.norm(su, j), t ** (j - i) * ladder.norm(u, i)
                else:
                    num_a, den_a = ladder.norm(u - su, j), ladder.norm(u, i)
                    num_s, den_s = ladder.norm(su, j), ladder.norm(u, i)
                if den_a > 0:
                    approx = max(approx, num_a / den_a)
                if den_s > 0:
                    smooth_ratio = max(smooth_ratio, num_s / den_s)
        out.append(SmoothingEntry(i, j, approx, smooth_ratio))
    return out


def default_probes(grid: Grid, seed: int = 0) -> List[GridFunction]:
    """Sines at frequencies 1, 5, 25 along the first axis plus seeded white noise."""
    x = grid.nodes[:, 0]
    probes = [np.sin(w * x) for w in (1.0, 5.0, 25.0)]
    probes.append(np.random.default_rng(seed).standard_normal(grid.size))
    return probes


@dataclass(frozen=True)
class IterationConfig:
    alpha: int = 0
    epsilon: float = 1e-2
    t0: float = 2.0
    kappa: float = 1.5
    max_iters: int = 8
    tol: float = 1e-8
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.t0 > 1:
            raise ValueError("t0 must exceed 1")
        if not 1 < self.kappa < 2:
            raise ValueError("kappa must lie in (1, 2)")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    def scale(self, m: int) -> float:
        return float(self.t0 ** (self.kappa ** m))


@dataclass
class IterationResult:
    u: GridFunction
    residuals: List[float]
    scales: List[float]
    converged: bool

    def to_dict(self) -> dict:
        return {
            "iterations": len(self.scales),
            "residuals": self.residuals,
            "scales": self.scales,
            "converged": self.converged,
        }


class IterationFailure(RuntimeError):
    """Linear solve failure or divergence; carries the history so far."""

    def __init__(self, message: str, result: IterationResult):
        super().__init__(message)
        self.result = result


def iterate(phi: Callable[[GridFunction], GridFunction],
            right_inverse: Callable[[GridFunction, GridFunction], GridFunction],
            u0: GridFunction, f: GridFunction, ladder: NormLadder, smoother: Smoother,
            config: IterationConfig = IterationConfig()) -> IterationResult:
    """Run ``u <- u + S(t_m) R(u)(f - phi(u))`` with ``t_m = t0^(kappa^m)``.

    ``right_inverse(u, h)`` returns ``R(u) h``.  Monotone decrease of the
    residual is not assumed; the full history is returned.
    """
    u = np.array(u0, dtype=float)
    f = np.asarray(f, dtype=float)
    residual = f - phi(u)
    r0 = ladder.norm(residual, config.alpha)
    if not r0 < config.epsilon:
        raise ValueError(f"initial residual {r0!r} is not below the closeness budget {config.epsilon!r}")
    result = IterationResult(u, [ladder.norm(residual, 0)], [], False)
    if result.residuals[0] <= config.tol:
        result.converged = True
        return result
    for m in range(config.max_iters):
        t = config.scale(m)
        try:
            correction = np.asarray(right_inverse(u, residual), dtype=float)
        except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
            raise IterationFailure(f"linear solve failed at step {m}: {exc}", result) from exc
        u = u + smoother.smooth(correction, t)
        residual = f - phi(u)
        rn = ladder.norm(residual, 0)
        result.u = u
        result.scales.append(t)
        result.residuals.append(rn)
        if not np.isfinite(rn) or rn > config.divergence_factor * max(result.residuals[0], config.tol):
            raise IterationFailure(f"residual diverged at step {m}", result)
        if rn <= config.tol:
            result.converged = True
            break
    return result


@dataclass(frozen=True)
class ModelProblem:
    phi: Callable[[GridFunction], GridFunction]
    right_inverse: Callable[[GridFunction, GridFunction], GridFunction]
    exact: Callable[[GridFunction], GridFunction]


MODEL_PROBLEMS: Dict[str, ModelProblem] = {
    "quadratic": ModelProblem(
        phi=lambda u: u + u * u,
        right_inverse=lambda u, h: h / (1.0 + 2.0 * u),
        exact=lambda f: 0.5 * (np.sqrt(1.0 + 4.0 * f) - 1.0),
    ),
    "linear": ModelProblem(
        phi=lambda u: 2.0 * u,
        right_inverse=lambda u, h: 0.5 * h,
        exact=lambda f: 0.5 * f,
    ),
}


@dataclass(frozen=True)
class TameReport:
    k: int
    alpha: int
    constant: float
    ratios: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"k": self.k, "alpha": self.alpha, "constant": self.constant, "ratios": self.ratios}


def tame_check(right_inverse: Callable[[GridFunction, GridFunction], GridFunction],
               samples: Sequence[Tuple[GridFunction, GridFunction]], u0: GridFunction,
               k: int, alpha: int, ladder: NormLadder) -> TameReport:
    """Sup over samples of ``|R(u) h|_k / (|h|_{k+alpha} + |h|_alpha |u - u0|_{k+alpha})``."""
    if k + alpha > ladder.k_max:
        raise ValueError("k + alpha exceeds the ladder")
    ratios = []
    for u, h in samples:
        num = ladder.norm(right_inverse(u, h), k)
        den = ladder.norm(h, k + alpha) + ladder.norm(h, alpha) * ladder.norm(np.asarray(u) - u0, k + alpha)
        ratios.append(num / den if den > 0 else 0.0)
    return TameReport(k, alpha, max(ratios) if ratios else 0.0, ratios)
