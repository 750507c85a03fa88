"""Synthetic training objectives.

Each objective is an approximate Matern-5/2 GP sample built from random
Fourier features, optionally plus a random convex quadratic bowl that pulls the
global minimum towards the middle of the unit cube. Everything here is fully
analytic, so values and input gradients are exact and cheap to evaluate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

__all__ = [
    "KernelSpec",
    "LengthscalePrior",
    "FourierSample",
    "QuadraticBowl",
    "ObjectiveInstance",
    "ObjectiveBatch",
    "PriorFitError",
    "fit_inverse_gamma",
    "sample_kernel_spec",
    "sample_fourier_features",
    "sample_quadratic_bowl",
    "sample_objective",
    "eval_objective",
    "observe_noisy",
    "matern52",
]

# Matern nu=5/2: spectral measure is a Student-t with 2*nu degrees of freedom.
_MATERN_DOF = 5


class PriorFitError(RuntimeError):
    """Raised when the inverse-Gamma quantile fit does not converge."""


def matern52(r, lengthscale=1.0, variance=1.0):
    """Matern 5/2 covariance as a function of distance ``r``."""
    s = np.sqrt(5.0) * np.abs(np.asarray(r, dtype=float)) / lengthscale
    return variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


@dataclass(frozen=True)
class KernelSpec:
    lengthscales: np.ndarray
    variance: float = 1.0
    family: str = "Matern52"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if self.family != "Matern52":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dimension(self) -> int:
        return self.lengthscales.shape[0]

    def __call__(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Cross-covariance matrix between the rows of ``x1`` and ``x2``."""
        a = np.atleast_2d(x1) / self.lengthscales
        b = np.atleast_2d(x2) / self.lengthscales
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        r = np.sqrt(np.maximum(sq, 0.0))
        return matern52(r, 1.0, self.variance)


@dataclass(frozen=True)
class LengthscalePrior:
    """Inverse-Gamma prior on a single lengthscale."""

    shape: float
    scale: float
    lo: float
    hi: float
    mass: float

    def quantiles(self) -> tuple[float, float]:
        tail = 0.5 * (1.0 - self.mass)
        dist = stats.invgamma(self.shape, scale=self.scale)
        return float(dist.ppf(tail)), float(dist.ppf(1.0 - tail))


@dataclass(frozen=True)
class FourierSample:
    frequencies: np.ndarray  # (M, d)
    phases: np.ndarray  # (M,)
    weights: np.ndarray  # (M,)
    amplitude: float
    kernel: KernelSpec | None = None  # the kernel the features approximate

    @property
    def num_features(self) -> int:
        return self.phases.shape[0]

    @property
    def dimension(self) -> int:
        return self.frequencies.shape[1]


@dataclass(frozen=True)
class QuadraticBowl:
    W: np.ndarray
    center: np.ndarray
    offset: float

    @property
    def dimension(self) -> int:
        return self.center.shape[0]

    @staticmethod
    def offset_for(W: np.ndarray) -> float:
        """Half the expected maximum of the bowl term: sum(W) / (8 d)."""
        d = W.shape[0]
        return float(W.sum() / (8.0 * d))

    @classmethod
    def from_matrix(cls, W, center) -> QuadraticBowl:
        W = np.asarray(W, dtype=float)
        return cls(W=W, center=np.asarray(center, dtype=float), offset=cls.offset_for(W))

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        d = self.dimension
        diff = x - self.center
        Wdiff = self.W @ diff
        return float(diff @ Wdiff / d + self.offset), 2.0 * Wdiff / d


@dataclass(frozen=True)
class ObjectiveInstance:
    """A fully analytic differentiable objective on ``[0, 1]^d``."""

    fourier: FourierSample
    bowl: QuadraticBowl | None = None
    noise_variance: float = 0.0

    def __post_init__(self):
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        if self.bowl is not None and self.bowl.dimension != self.fourier.dimension:
            raise ValueError(
                f"bowl dimension {self.bowl.dimension} != "
                f"fourier dimension {self.fourier.dimension}"
            )

    @property
    def dimension(self) -> int:
        return self.fourier.dimension

    def value(self, x) -> float:
        return eval_objective(self, x)[0]

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        return eval_objective(self, x)


def fit_inverse_gamma(lo: float = 0.1, hi: float = 0.4, mass: float = 0.99,
                      max_iter: int = 200) -> LengthscalePrior:
    """Find the inverse-Gamma whose central ``mass`` interval is ``[lo, hi]``.

    Solves the two quantile equations jointly for ``(log shape, log scale)``.
    """
    if not 0 < lo < hi:
        raise ValueError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    if not 0 < mass < 1:
        raise ValueError(f"mass must lie in (0, 1), got {mass}")
    tail = 0.5 * (1.0 - mass)

    def residuals(theta):
        shape, scale = np.exp(theta)
        dist = stats.invgamma(shape, scale=scale)
        with np.errstate(divide="ignore", over="ignore"):
            return [np.log(dist.ppf(tail) / lo), np.log(dist.ppf(1.0 - tail) / hi)]

    # Moment-matching start: treat the interval as mean +/- z * sd.
    z = stats.norm.ppf(1.0 - tail)
    mean = 0.5 * (lo + hi)
    sd = (hi - lo) / (2.0 * z)
    shape0 = mean**2 / sd**2 + 2.0
    scale0 = mean * (shape0 - 1.0)
    sol = optimize.root(residuals, np.log([shape0, scale0]), method="hybr",
                        options={"maxfev": max_iter, "xtol": 1e-14})
    res = np.abs(residuals(sol.x))
    # judged on the residuals: hybr may report failure after reaching machine precision
    if not np.all(np.isfinite(res)) or np.max(res) > 1e-9:
        raise PriorFitError(
            f"inverse-Gamma fit did not converge after {sol.nfev} evaluations: "
            f"log-quantile residuals {res.tolist()} ({sol.message})"
        )
    shape, scale = np.exp(sol.x)
    return LengthscalePrior(float(shape), float(scale), lo, hi, mass)


def sample_kernel_spec(prior: LengthscalePrior, d: int,
                       rng: np.random.Generator) -> KernelSpec:
    """Draw ``d`` independent lengthscales from ``prior``; unit variance."""
    if d < 1:
        raise ValueError("d must be >= 1")
    # X ~ InvGamma(a, b)  <=>  b / X ~ Gamma(a, 1)
    ls = prior.scale / rng.gamma(prior.shape, 1.0, size=d)
    return KernelSpec(lengthscales=ls, variance=1.0)


def sample_fourier_features(kernel: KernelSpec, M: int,
                            rng: np.random.Generator) -> FourierSample:
    """Random Fourier features of the Matern 5/2 kernel.

    Frequencies are per-feature multivariate-t draws scaled by the inverse
    lengthscales, ``omega = z / ell * sqrt(5 / u)`` with ``u ~ chi2(5)``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    d = kernel.dimension
    z = rng.standard_normal((M, d))
    u = rng.chisquare(_MATERN_DOF, size=M)
    while np.any(u <= 0.0):
        bad = u <= 0.0
        u[bad] = rng.chisquare(_MATERN_DOF, size=int(bad.sum()))
    omega = z / kernel.lengthscales * np.sqrt(_MATERN_DOF / u)[:, None]
    phases = rng.uniform(0.0, 2.0 * np.pi, size=M)
    weights = rng.standard_normal(M)
    return FourierSample(omega, phases, weights, float(np.sqrt(2.0 * kernel.variance / M)),
                         kernel)


def _bartlett_factor(d: int, dof: int, rng: np.random.Generator) -> np.ndarray:
    if dof <= d - 1:
        raise ValueError(f"Bartlett sampling needs dof > d - 1, got dof={dof}, d={d}")
    A = np.tril(rng.standard_normal((d, d)), -1)
    A[np.diag_indices(d)] = np.sqrt(rng.chisquare(dof - np.arange(d)))
    return A


def sample_wishart(scale: np.ndarray, dof: int, rng: np.random.Generator) -> np.ndarray:
    """Wishart draw via the Bartlett decomposition, symmetrised."""
    L = np.linalg.cholesky(scale)
    LA = L @ _bartlett_factor(scale.shape[0], dof, rng)
    W = LA @ LA.T
    return 0.5 * (W + W.T)


def sample_quadratic_bowl(d: int, rng: np.random.Generator) -> QuadraticBowl:
    """Random convex bowl: ``W ~ Wishart(I/d, d)``, centre ``~ U[0.2, 0.8]^d``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    # Cholesky factor of I/d is I/sqrt(d)
    A = _bartlett_factor(d, d, rng)
    W = (A @ A.T) / d
    W = 0.5 * (W + W.T)
    center = rng.uniform(0.2, 0.8, size=d)
    return QuadraticBowl.from_matrix(W, center)


def sample_objective(rng: np.random.Generator, d: int, prior: LengthscalePrior,
                     num_features: int = 100, include_bowl: bool = True,
                     noise_variance: float = 0.0) -> ObjectiveInstance:
    """One draw from the full training prior."""
    kernel = sample_kernel_spec(prior, d, rng)
    fourier = sample_fourier_features(kernel, num_features, rng)
    bowl = sample_quadratic_bowl(d, rng) if include_bowl else None
    return ObjectiveInstance(fourier, bowl, noise_variance)


def eval_objective(obj: ObjectiveInstance, x) -> tuple[float, np.ndarray]:
    """Noiseless value and exact gradient at a single point ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (obj.dimension,):
        raise ValueError(f"expected a point of shape ({obj.dimension},), got {x.shape}")
    fs = obj.fourier
    proj = fs.frequencies @ x + fs.phases
    value = fs.amplitude * float(fs.weights @ np.cos(proj))
    grad = -fs.amplitude * ((fs.weights * np.sin(proj)) @ fs.frequencies)
    if obj.bowl is not None:
        bv, bg = obj.bowl.value_and_grad(x)
        value += bv
        grad = grad + bg
    return value, grad


def observe_noisy(obj, x, rng: np.random.Generator) -> float:
    """Noisy observation ``f(x) + N(0, noise_variance)``.

    A normal variate is always consumed so that streams stay aligned across
    noise levels.
    """
    eps = rng.standard_normal()
    return obj.value(x) + np.sqrt(obj.noise_variance) * eps


class ObjectiveBatch:
    """Instances stacked along a leading batch axis for vectorised rollouts.

    All instances must share the dimension and feature count. A missing bowl
    is represented by a zero matrix and zero offset.
    """

    def __init__(self, instances: list[ObjectiveInstance]):
        if not instances:
            raise ValueError("batch must be nonempty")
        d = instances[0].dimension
        M = instances[0].fourier.num_features
        for obj in instances:
            if obj.dimension != d or obj.fourier.num_features != M:
                raise ValueError("all batch instances must share dimension and feature count")
        self.instances = list(instances)
        self.dimension = d
        self.frequencies = np.stack([o.fourier.frequencies for o in instances])
        self.phases = np.stack([o.fourier.phases for o in instances])
        self.amp_weights = np.stack([o.fourier.amplitude * o.fourier.weights for o in instances])
        self.W = np.stack([o.bowl.W if o.bowl is not None else np.zeros((d, d))
                           for o in instances])
        self.center = np.stack([o.bowl.center if o.bowl is not None else np.zeros(d)
                                for o in instances])
        self.offset = np.array([o.bowl.offset if o.bowl is not None else 0.0
                                for o in instances])
        self.noise_variance = np.array([o.noise_variance for o in instances])

    def __len__(self) -> int:
        return len(self.instances)

    def subset(self, sl: slice) -> ObjectiveBatch:
        new = object.__new__(ObjectiveBatch)
        new.instances = self.instances[sl]
        new.dimension = self.dimension
        for name in ("frequencies", "phases", "amp_weights", "W", "center", "offset",
                     "noise_variance"):
            setattr(new, name, getattr(self, name)[sl])
        return new

    def value_and_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(B,)`` and gradients ``(B, d)`` at one point per instance."""
        proj = np.einsum("bmd,bd->bm", self.frequencies, x) + self.phases
        value = np.einsum("bm,bm->b", self.amp_weights, np.cos(proj))
        grad = -np.einsum("bm,bmd->bd", self.amp_weights * np.sin(proj), self.frequencies)
        d = self.dimension
        diff = x - self.center
        Wdiff = np.einsum("bij,bj->bi", self.W, diff)
        value = value + np.einsum("bi,bi->b", diff, Wdiff) / d + self.offset
        grad = grad + (2.0 / d) * Wdiff
        return value, grad
