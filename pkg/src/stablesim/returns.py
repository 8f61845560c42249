"""One-step return distributions and their expectation machinery.

Each model exposes the conditional density of the next gross return, its
derivative, the cdf, closed-form partial first moments (the optimizer's
collateral-value integrals reduce to these), and deterministic sampling
from a caller-supplied numpy Generator. Returns are i.i.d. across steps by
default; per-step schedules cover drift shifts and crisis experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import ndtr, ndtri

from .model import EventProbabilities, ParameterError, Thresholds
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec, integrate

_SQRT2PI = math.sqrt(2.0 * math.pi)
_TAIL = 1e-15


def _phi(u):
    return np.exp(-0.5 * u * u) / _SQRT2PI


class ReturnModel:
    """Interface shared by the concrete return distributions."""

    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def pdf(self, z):
        raise NotImplementedError

    def pdf_deriv(self, z):
        raise NotImplementedError

    def cdf(self, z):
        raise NotImplementedError

    def partial_mean(self, a, b):
        """Closed-form integral of z * pdf(z) over [a, b]."""
        raise NotImplementedError

    def quantile(self, p: float) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def prob(self, a, b):
        """Mass on [a, b) (vectorized)."""
        return np.maximum(self.cdf(b) - self.cdf(a), 0.0)

    def support(self) -> tuple[float, float]:
        """Interval carrying all but a negligible sliver of mass."""
        return self.quantile(_TAIL), self.quantile(1.0 - _TAIL)


@dataclass(frozen=True)
class Lognormal(ReturnModel):
    """exp(mu + sigma * xi) with standard normal xi; sigma=0 degenerates to
    a point mass at exp(mu) (density-based integrals then see zero mass and
    the cdf/partial-moment path carries everything)."""

    mu: float = 0.0
    sigma: float = 0.05

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError("sigma must be >= 0")

    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def variance(self) -> float:
        if self.sigma == 0.0:
            return 0.0
        m = self.mean()
        return (math.exp(self.sigma**2) - 1.0) * m * m

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.sigma == 0.0:
            return np.zeros_like(z)
        out = np.zeros_like(z)
        pos = z > 0.0
        zp = np.where(pos, z, 1.0)
        u = (np.log(zp) - self.mu) / self.sigma
        out = np.where(pos, _phi(u) / (zp * self.sigma), 0.0)
        return out

    def pdf_deriv(self, z):
        z = np.asarray(z, dtype=float)
        if self.sigma == 0.0:
            return np.zeros_like(z)
        pos = z > 0.0
        zp = np.where(pos, z, 1.0)
        u = (np.log(zp) - self.mu) / self.sigma
        g = _phi(u) / (zp * self.sigma)
        return np.where(pos, -g / zp * (1.0 + u / self.sigma), 0.0)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.sigma == 0.0:
            return (z >= math.exp(self.mu)).astype(float)
        pos = z > 0.0
        zp = np.where(pos, z, 1.0)
        return np.where(pos, ndtr((np.log(zp) - self.mu) / self.sigma), 0.0)

    def partial_mean(self, a, b):
        a = np.maximum(np.asarray(a, dtype=float), 0.0)
        b = np.asarray(b, dtype=float)
        if self.sigma == 0.0:
            point = math.exp(self.mu)
            return np.where((a <= point) & (point < b), point, 0.0)
        m = self.mean()
        shift = self.mu + self.sigma**2

        def upper_tail(x):
            x = np.asarray(x, dtype=float)
            out = np.ones_like(x)
            pos = x > 0.0
            xp = np.where(pos, x, 1.0)
            return np.where(pos, ndtr((shift - np.log(xp)) / self.sigma), out)

        return m * np.maximum(upper_tail(a) - upper_tail(b), 0.0)

    def quantile(self, p: float) -> float:
        if self.sigma == 0.0:
            return math.exp(self.mu)
        return math.exp(self.mu + self.sigma * float(ndtri(p)))

    def sample(self, rng: np.random.Generator, size=None):
        xi = rng.standard_normal(size)
        return np.exp(self.mu + self.sigma * xi)


@dataclass(frozen=True)
class UniformInterval(ReturnModel):
    lo: float = 0.5
    hi: float = 1.5

    def __post_init__(self):
        if self.hi < self.lo:
            raise ParameterError("need hi >= lo")

    @property
    def _width(self) -> float:
        return self.hi - self.lo

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def variance(self) -> float:
        return self._width**2 / 12.0

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self._width == 0.0:
            return np.zeros_like(z)
        inside = (z >= self.lo) & (z <= self.hi)
        return np.where(inside, 1.0 / self._width, 0.0)

    def pdf_deriv(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self._width == 0.0:
            return (z >= self.lo).astype(float)
        return np.clip((z - self.lo) / self._width, 0.0, 1.0)

    def partial_mean(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self._width == 0.0:
            return np.where((a <= self.lo) & (self.lo < b), self.lo, 0.0)
        lo = np.clip(a, self.lo, self.hi)
        hi = np.clip(b, self.lo, self.hi)
        return np.maximum(hi * hi - lo * lo, 0.0) / (2.0 * self._width)

    def quantile(self, p: float) -> float:
        return self.lo + p * self._width

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        return self.lo + self._width * u


@dataclass(frozen=True)
class TwoPieceEmpirical(ReturnModel):
    """Kernel density over an observed return sample, reflected at zero.

    Gaussian kernels with the mirror piece keep the support nonnegative;
    partial moments stay closed-form as sums of Gaussian pieces.
    """

    sample_values: tuple[float, ...]
    bandwidth: float | None = None

    def __post_init__(self):
        xs = np.asarray(self.sample_values, dtype=float)
        if xs.size < 2:
            raise ParameterError("need at least two observations")
        if np.any(xs < 0):
            raise ParameterError("returns must be nonnegative")
        object.__setattr__(self, "sample_values", tuple(np.sort(xs)))
        if self.bandwidth is None:
            sd = float(np.std(xs, ddof=1))
            h = 1.06 * max(sd, 1e-6) * xs.size ** (-0.2)
            object.__setattr__(self, "bandwidth", h)
        if self.bandwidth <= 0:
            raise ParameterError("bandwidth must be positive")

    @property
    def _xs(self):
        return np.asarray(self.sample_values, dtype=float)

    def _centers(self):
        xs = self._xs
        return np.concatenate([xs, -xs])

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        h = self.bandwidth
        u = (z[..., None] - self._centers()) / h
        dens = _phi(u).sum(axis=-1) / (self._xs.size * h)
        return np.where(z >= 0.0, dens, 0.0)

    def pdf_deriv(self, z):
        z = np.asarray(z, dtype=float)
        h = self.bandwidth
        u = (z[..., None] - self._centers()) / h
        d = (-u * _phi(u)).sum(axis=-1) / (self._xs.size * h * h)
        return np.where(z >= 0.0, d, 0.0)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        h = self.bandwidth
        zc = np.maximum(z, 0.0)
        u = (zc[..., None] - self._centers()) / h
        base = (-self._centers()) / h
        val = (ndtr(u) - ndtr(base)).sum(axis=-1) / self._xs.size
        return np.where(z >= 0.0, val, 0.0)

    def _piece_partial_mean(self, centers, a, b):
        h = self.bandwidth
        al = (a[..., None] - centers) / h
        be = (b[..., None] - centers) / h
        mass = ndtr(be) - ndtr(al)
        return (centers * mass + h * (_phi(al) - _phi(be))).sum(axis=-1)

    def partial_mean(self, a, b):
        a = np.maximum(np.asarray(a, dtype=float), 0.0)
        b = np.asarray(b, dtype=float)
        b = np.where(np.isinf(b), self.quantile(1.0 - 1e-16), b)
        b = np.maximum(b, a)
        return self._piece_partial_mean(self._centers(), a, b) / self._xs.size

    def mean(self) -> float:
        lo, hi = 0.0, float(self._xs.max() + 12 * self.bandwidth)
        return float(self.partial_mean(lo, hi))

    def variance(self) -> float:
        h = self.bandwidth
        hi = float(self._xs.max() + 12 * h)
        centers = self._centers()
        al = (0.0 - centers) / h
        be = (hi - centers) / h
        mass = ndtr(be) - ndtr(al)
        e_u = _phi(al) - _phi(be)
        e_u2 = mass + al * _phi(al) - be * _phi(be)
        m2 = ((centers**2) * mass + 2 * centers * h * e_u + h * h * e_u2)
        m2 = float(m2.sum() / self._xs.size)
        m1 = self.mean()
        return max(m2 - m1 * m1, 0.0)

    def quantile(self, p: float) -> float:
        lo, hi = 0.0, float(self._xs.max() + 14 * self.bandwidth)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(self.cdf(mid)) < p:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-13 * max(hi, 1.0):
                break
        return 0.5 * (lo + hi)

    def sample(self, rng: np.random.Generator, size=None):
        n = self._xs.size
        idx = rng.integers(0, n, size=size)
        xi = rng.standard_normal(size)
        return np.abs(self._xs[idx] + self.bandwidth * xi)


# ---------------------------------------------------------------------------
# Per-step schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReturnSchedule:
    """Piecewise-constant model sequence: stages[i] applies from its start
    step (inclusive) until the next stage begins."""

    stages: tuple[tuple[int, ReturnModel], ...]

    def __post_init__(self):
        if not self.stages:
            raise ParameterError("schedule needs at least one stage")
        starts = [s for s, _ in self.stages]
        if starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ParameterError(
                "stages must start at 0 with strictly increasing steps")

    def model_for(self, t: int) -> ReturnModel:
        current = self.stages[0][1]
        for start, model in self.stages:
            if t >= start:
                current = model
            else:
                break
        return current

    def is_stationary(self) -> bool:
        return len(self.stages) == 1


def stationary(model: ReturnModel) -> ReturnSchedule:
    return ReturnSchedule(stages=((0, model),))


# ---------------------------------------------------------------------------
# Spec operations
# ---------------------------------------------------------------------------

def sample_return(model: ReturnModel, rng: np.random.Generator) -> float:
    """One gross-return draw; bit-reproducible for a given generator state."""
    return float(model.sample(rng))


def conditional_mean(model: ReturnModel) -> float:
    """Expected next-step gross return."""
    return model.mean()


def event_probabilities(model: ReturnModel, X: float,
                        thresholds: Thresholds) -> EventProbabilities:
    """Split next-step outcomes by the liquidation thresholds at price X."""
    if thresholds.c > thresholds.b:
        raise ParameterError("need c <= b")
    p_none = float(1.0 - model.cdf(thresholds.b / X))
    p_partial = float(model.prob(thresholds.c / X, thresholds.b / X))
    p_wipe = max(1.0 - p_none - p_partial, 0.0)
    return EventProbabilities(p_none, p_partial, p_wipe)


def partial_expectation(model: ReturnModel, lo: float, hi: float, weight,
                        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Adaptive quadrature of weight(z) * pdf(z) over [lo, hi].

    An infinite upper limit is truncated at the point where the remaining
    tail mass drops below spec.tail_mass; weight=None integrates the bare
    density.
    """
    if lo > hi:
        raise ParameterError("need lo <= hi")
    if weight is None:
        weight = lambda z: np.ones_like(z)
    zmin, zmax = model.support()
    a = max(lo, zmin)
    b = min(hi, model.quantile(1.0 - spec.tail_mass)) if math.isinf(hi) \
        else min(hi, zmax)
    if b <= a:
        return 0.0
    return integrate(lambda z: weight(z) * model.pdf(z), a, b, spec)
