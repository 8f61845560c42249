"""Quadrature and root-finding workhorses.

Panel Gauss-Legendre rules (graded toward an endpoint to tame the
near-singular liquidation integrand) plus vectorized bisection and
golden-section search. All routines accept batched endpoints so the
path-parallel engine evaluates every path in one numpy pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import IntegrationAccuracyError, ParameterError


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for expectation integrals.

    nodes_per_panel: Gauss-Legendre order per panel (>= 8 per contract).
    panels: panel count on the finite liquidation interval.
    grading: power grading exponent; > 1 packs panels toward the lower
        endpoint where the repurchase-price denominator is smallest.
    tail_mass: upper-tail probability discarded when truncating open
        integrals; the truncation error is reported alongside.
    rel_tol / abs_tol: adaptive refinement targets.
    max_refinements: panel-doubling budget before giving up.
    """

    nodes_per_panel: int = 16
    panels: int = 8
    grading: float = 3.0
    tail_mass: float = 1e-12
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_refinements: int = 6

    def __post_init__(self):
        if self.nodes_per_panel < 8:
            raise ParameterError("nodes_per_panel must be >= 8")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ParameterError("tolerances must be positive")


DEFAULT_QUADRATURE = QuadratureSpec()


@lru_cache(maxsize=32)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def graded_breakpoints(a, b, panels: int, grading: float):
    """Panel breakpoints on [a, b], packed toward a for grading > 1.

    a, b may be arrays of shape S; returns shape S x (panels + 1).
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    frac = (np.arange(panels + 1) / panels) ** grading
    return a[..., None] + (b - a)[..., None] * frac


def panel_rule(a, b, panels: int, nodes: int, grading: float = 1.0):
    """Gauss-Legendre nodes/weights on graded panels of [a, b].

    Returns (z, w) of shape S x (panels * nodes); rows with b <= a get
    zero weights so vacuous intervals integrate to zero.
    """
    pts = graded_breakpoints(a, b, panels, grading)
    lo, hi = pts[..., :-1], pts[..., 1:]
    x, w = _leggauss(nodes)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    z = mid[..., None] + half[..., None] * x
    wt = half[..., None] * w
    shape = z.shape[:-2] + (panels * nodes,)
    z = z.reshape(shape)
    wt = np.where(wt > 0.0, wt, 0.0).reshape(shape)
    return z, wt


def integrate(f, a: float, b: float, spec: QuadratureSpec = DEFAULT_QUADRATURE,
              grading: float | None = None) -> float:
    """Adaptive panel-refined Gauss-Legendre integral of a vectorized f.

    Doubles the panel count until successive estimates agree to the spec
    tolerance; raises IntegrationAccuracyError when the refinement budget
    is exhausted.
    """
    if b <= a:
        return 0.0
    grading = spec.grading if grading is None else grading
    panels = spec.panels
    z, w = panel_rule(a, b, panels, spec.nodes_per_panel, grading)
    prev = float(np.sum(w * f(z)))
    for _ in range(spec.max_refinements):
        panels *= 2
        z, w = panel_rule(a, b, panels, spec.nodes_per_panel, grading)
        cur = float(np.sum(w * f(z)))
        if abs(cur - prev) <= spec.abs_tol + spec.rel_tol * abs(cur):
            return cur
        prev = cur
    raise IntegrationAccuracyError(
        f"integral over [{a}, {b}] did not reach tolerance "
        f"{spec.rel_tol} after {spec.max_refinements} refinements")


def bisect_decreasing(f, lo, hi, abs_tol, max_iter: int = 120,
                      polish: int = 3):
    """Roots of a decreasing function on bracketing arrays.

    f maps an array of candidates to an array of values with f(lo) >= 0 and
    f(hi) <= 0 (rows violating this are the caller's clamp cases and must be
    masked out beforehand). Bisection to abs_tol, then a few bracketed
    secant polish steps for near machine-precision roots.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        up = val > 0.0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
        if np.all(hi - lo <= abs_tol):
            break
    f_lo = f(lo)
    f_hi = f(hi)
    for _ in range(polish):
        denom = f_lo - f_hi
        safe = np.abs(denom) > 0.0
        sec = np.where(safe, lo + f_lo * (hi - lo) / np.where(safe, denom, 1.0),
                       0.5 * (lo + hi))
        sec = np.clip(sec, lo, hi)
        val = f(sec)
        up = val > 0.0
        f_lo = np.where(up, val, f_lo)
        f_hi = np.where(up, f_hi, val)
        lo = np.where(up, sec, lo)
        hi = np.where(up, hi, sec)
    return 0.5 * (lo + hi)


def golden_maximize(f, lo, hi, rel_tol: float = 1e-10, max_iter: int = 200):
    """Vectorized golden-section argmax of a unimodal f on [lo, hi].

    Spends two f evaluations per iteration; the scalar one-eval variant does
    not vectorize once rows shrink on different sides.
    """
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    scale = np.maximum(np.abs(lo), np.abs(hi)) + 1.0
    for _ in range(max_iter):
        c = hi - inv_phi * (hi - lo)
        d = lo + inv_phi * (hi - lo)
        pick_left = f(c) > f(d)
        hi = np.where(pick_left, d, hi)
        lo = np.where(pick_left, lo, c)
        if np.all(hi - lo <= rel_tol * scale):
            break
    return 0.5 * (lo + hi)


def wilson_halfwidth(successes: int, n: int, z: float = 1.959963984540054):
    """Wilson-score 95 percent half-width for a binomial frequency."""
    if n <= 0:
        raise ParameterError("need a positive sample size")
    p = successes / n
    denom = 1.0 + z * z / n
    return z * np.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
