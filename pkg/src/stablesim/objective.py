"""One-period speculator objective and its analytic derivatives.

The speculator picks liabilities L to maximize the conditional expectation
of next-period equity. That expectation splits into an issuance-proceeds
term, a closed-form collateral-value term over the no-wipeout event, and a
finite quadrature of the liquidation-cost integrand over the partial
liquidation zone. First/second derivatives and the cross-derivative in the
collateral-value coordinate are assembled from the same pieces; all include
the boundary term produced by the equity jump at the wipeout threshold,
which is what makes them match finite differences exactly (the term
vanishes whenever that threshold carries no density).

In the lagged-collateral mode the stake is fixed during the decision; the
concurrent mode folds the issuance proceeds into the stake, so the fixed-
stake derivatives are chained with the stake's own L-dependence.

Everything is vectorized over a leading state axis so single-state calls
and path ensembles share one code path bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    CollateralMode,
    SystemParams,
    exhaustion_value,
    exhaustion_value_prime,
    exhaustion_value_second,
    supply_price,
    supply_price_deriv,
    supply_price_second,
)
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec, bisect_decreasing, \
    golden_maximize, panel_rule
from .returns import ReturnModel

STATUS_INTERIOR = 0
STATUS_LOWER = -1
STATUS_UPPER = 1


@dataclass
class DecisionState:
    """Pre-decision conditions at one step, as broadcastable float arrays.

    prev_calL: total supply entering the decision (post-liquidation).
    prev_L: speculator liabilities entering the decision.
    stake: ETH collateral at stake over the coming period (lagged mode) or
        its pre-flow base (concurrent mode).
    X: current ETH price.
    """

    prev_calL: np.ndarray
    prev_L: np.ndarray
    stake: np.ndarray
    X: np.ndarray

    @classmethod
    def of(cls, prev_calL, prev_L, stake, X) -> "DecisionState":
        arrs = np.broadcast_arrays(
            *(np.atleast_1d(np.asarray(a, dtype=float))
              for a in (prev_calL, prev_L, stake, X)))
        return cls(*(np.array(a) for a in arrs))

    def subset(self, mask) -> "DecisionState":
        return DecisionState(self.prev_calL[mask], self.prev_L[mask],
                             self.stake[mask], self.X[mask])


def stake_effective(L, st: DecisionState, params: SystemParams):
    """Collateral at stake for the coming period at candidate liabilities L."""
    L = np.asarray(L, dtype=float)
    if params.collateral_mode is CollateralMode.LAGGED:
        return np.broadcast_to(st.stake, np.broadcast(L, st.stake).shape)
    calL = L + params.zeta
    return st.stake + (L - st.prev_L) * supply_price(calL, params) / st.X


@dataclass
class _Zone:
    """Liquidation-zone geometry for a candidate L (all arrays)."""

    L: np.ndarray
    calL: np.ndarray
    k: np.ndarray          # collateral dollar value stake * X
    w: np.ndarray          # exhaustion collateral value
    c_ratio: np.ndarray    # wipeout return threshold w / k
    b_ratio: np.ndarray    # liquidation return threshold beta L / k
    ell_c: np.ndarray      # forced repurchase at the wipeout boundary
    z: np.ndarray          # quadrature nodes (S x K)
    wt: np.ndarray         # quadrature weights (S x K)
    v: np.ndarray          # collateral value at nodes k * z
    ell: np.ndarray        # forced repurchase at nodes
    u: np.ndarray          # post-repurchase supply at nodes


def _zone(L, st: DecisionState, model: ReturnModel, params: SystemParams,
          spec: QuadratureSpec) -> _Zone:
    L = np.broadcast_to(np.asarray(L, dtype=float), st.prev_L.shape).copy()
    beta, zeta = params.beta, params.zeta
    calL = L + zeta
    k = stake_effective(L, st, params) * st.X
    w = exhaustion_value(L, params)
    c_ratio = w / k
    b_ratio = beta * L / k
    zmin, zmax = model.support()
    lo = np.maximum(c_ratio, zmin)
    hi = np.minimum(b_ratio, zmax)
    hi = np.maximum(hi, lo)
    z, wt = panel_rule(lo, hi, spec.panels, spec.nodes_per_panel, spec.grading)
    v = k[..., None] * z
    ell = (beta * L[..., None] - v) / (beta - 1.0)
    u = calL[..., None] - ell
    ell_c = (beta * L - w) / (beta - 1.0)
    return _Zone(L, calL, k, w, c_ratio, b_ratio, ell_c, z, wt, v, ell, u)


def _eta(zone: _Zone, params: SystemParams):
    """d/dL of the liquidation-cost integrand at a fixed return node."""
    beta, alpha = params.beta, params.alpha
    p = supply_price(zone.u, params)
    dp = supply_price_deriv(zone.u, params)
    return (beta - alpha * (beta * p - zone.ell * dp)) / (beta - 1.0)


def _eta_at_exhaustion(zone: _Zone, params: SystemParams):
    beta, alpha = params.beta, params.alpha
    u_c = zone.calL - zone.ell_c
    p = supply_price(u_c, params)
    dp = supply_price_deriv(u_c, params)
    return (beta - alpha * (beta * p - zone.ell_c * dp)) / (beta - 1.0)


def value(L, st: DecisionState, model: ReturnModel, params: SystemParams,
          spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Expected next-period equity at liabilities L."""
    zone = _zone(L, st, model, params, spec)
    mean_r = model.mean()
    collat = zone.k * model.partial_mean(zone.c_ratio, np.inf) \
        - zone.L * (1.0 - model.cdf(zone.c_ratio))
    price_u = supply_price(zone.u, params)
    integrand = zone.ell * (1.0 - params.alpha * price_u)
    liq = np.sum(zone.wt * integrand * model.pdf(zone.z), axis=-1)
    if params.collateral_mode is CollateralMode.CONCURRENT:
        return collat + liq
    delta = zone.L - st.prev_L
    issuance = delta * supply_price(zone.calL, params) * mean_r
    return issuance + collat + liq


def _foc_fixed_stake(zone: _Zone, st: DecisionState, model: ReturnModel,
                     params: SystemParams):
    """dValue/dL holding the stake fixed, excluding the issuance term."""
    p_ab = 1.0 - model.cdf(zone.c_ratio)
    interior = np.sum(zone.wt * _eta(zone, params) * model.pdf(zone.z),
                      axis=-1)
    w_prime = exhaustion_value_prime(zone.L, zone.w, params)
    jump = -(zone.ell_c - zone.L) * model.pdf(zone.c_ratio) * w_prime / zone.k
    return -p_ab + interior + jump


def _value_stake_gradient(zone: _Zone, model: ReturnModel,
                          params: SystemParams):
    """dValue/dk at fixed L (k = stake * X); used by the concurrent mode."""
    beta, alpha = params.beta, params.alpha
    k = zone.k
    g_c = model.pdf(zone.c_ratio)
    pm = model.partial_mean(zone.c_ratio, np.inf)
    jump = (zone.ell_c - zone.L) * g_c * zone.w / k**2
    p = supply_price(zone.u, params)
    dp = supply_price_deriv(zone.u, params)
    inner = -(zone.v / (beta - 1.0)) * (1.0 - alpha * p
                                        + alpha * zone.ell * dp)
    interior = np.sum(zone.wt * inner * model.pdf(zone.z), axis=-1) / k
    return pm + interior + jump


def foc(L, st: DecisionState, model: ReturnModel, params: SystemParams,
        spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """dValue/dL, including the wipeout-boundary term."""
    zone = _zone(L, st, model, params, spec)
    mean_r = model.mean()
    fixed = _foc_fixed_stake(zone, st, model, params)
    if params.collateral_mode is CollateralMode.CONCURRENT:
        delta = zone.L - st.prev_L
        dk_dL = supply_price(zone.calL, params) \
            + delta * supply_price_deriv(zone.calL, params)
        return fixed + _value_stake_gradient(zone, model, params) * dk_dL
    delta = zone.L - st.prev_L
    d_issuance = (supply_price(zone.calL, params)
                  + delta * supply_price_deriv(zone.calL, params)) * mean_r
    return d_issuance + fixed


def curvature(L, st: DecisionState, model: ReturnModel, params: SystemParams,
              spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """d2Value/dL2.

    Analytic in the lagged mode; the concurrent mode differentiates the
    analytic first derivative numerically (its curvature has no usable
    closed form and concavity there is checked state by state anyway).
    """
    if params.collateral_mode is CollateralMode.CONCURRENT:
        L = np.asarray(L, dtype=float)
        h = 1e-5 * np.maximum(np.abs(L), 1.0)
        hi = foc(L + h, st, model, params, spec)
        lo = foc(L - h, st, model, params, spec)
        return (hi - lo) / (2.0 * h)
    zone = _zone(L, st, model, params, spec)
    mean_r = model.mean()
    beta, alpha = params.beta, params.alpha
    k = zone.k
    delta = zone.L - st.prev_L
    d2_issuance = (2.0 * supply_price_deriv(zone.calL, params)
                   + delta * supply_price_second(zone.calL, params)) * mean_r
    g_c = model.pdf(zone.c_ratio)
    g_b = model.pdf(zone.b_ratio)
    w_prime = exhaustion_value_prime(zone.L, zone.w, params)
    w_second = exhaustion_value_second(zone.L, zone.w, w_prime, params)
    eta_c = _eta_at_exhaustion(zone, params)
    eta_b = beta * (1.0 - alpha * supply_price(zone.calL, params)) \
        / (beta - 1.0)
    bound_c = g_c * (w_prime / k) * (1.0 - eta_c)
    bound_b = eta_b * g_b * beta / k
    dp = supply_price_deriv(zone.u, params)
    d2p = supply_price_second(zone.u, params)
    deta = alpha * (2.0 * beta * dp - zone.ell * d2p) / (beta - 1.0) ** 2
    interior = np.sum(zone.wt * deta * model.pdf(zone.z), axis=-1)
    a_jump = zone.ell_c - zone.L
    a_prime = (beta - w_prime) / (beta - 1.0) - 1.0
    b_fac = w_prime / k
    g_c_deriv = model.pdf_deriv(zone.c_ratio)
    d_jump = -(a_prime * g_c * b_fac + a_jump * g_c_deriv * b_fac**2
               + a_jump * g_c * w_second / k)
    return d2_issuance + bound_c + bound_b + interior + d_jump


def cross_collateral_value(L, st: DecisionState, model: ReturnModel,
                           params: SystemParams,
                           spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """d2Value/(dk dL) in the collateral-value coordinate k = stake * X.

    The objective depends on the stake and the ETH price only through k, so
    the price sensitivity of the optimum is stake * this and the stake
    sensitivity is X * this (the rescaling symmetry of the model). Lagged
    mode only.
    """
    if params.collateral_mode is CollateralMode.CONCURRENT:
        raise NotImplementedError(
            "stake sensitivities are defined for the lagged mode")
    zone = _zone(L, st, model, params, spec)
    beta, alpha = params.beta, params.alpha
    k = zone.k
    g_c = model.pdf(zone.c_ratio)
    g_b = model.pdf(zone.b_ratio)
    eta_c = _eta_at_exhaustion(zone, params)
    eta_b = beta * (1.0 - alpha * supply_price(zone.calL, params)) \
        / (beta - 1.0)
    w_prime = exhaustion_value_prime(zone.L, zone.w, params)
    dp = supply_price_deriv(zone.u, params)
    d2p = supply_price_second(zone.u, params)
    deta_dv = -alpha * ((beta + 1.0) * dp - zone.ell * d2p) / (beta - 1.0) ** 2
    interior = np.sum(zone.wt * deta_dv * zone.v * model.pdf(zone.z),
                      axis=-1) / k
    bound_c = g_c * (zone.w / k**2) * (eta_c - 1.0)
    bound_b = -eta_b * g_b * beta * zone.L / k**2
    a_jump = zone.ell_c - zone.L
    g_c_deriv = model.pdf_deriv(zone.c_ratio)
    d_jump = a_jump * (w_prime / k**2) * (g_c_deriv * zone.c_ratio + g_c)
    return bound_c + bound_b + interior + d_jump


def leverage_effect_integral(L, st: DecisionState, model: ReturnModel,
                             params: SystemParams,
                             spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Expected marginal leverage effect of liquidations (the interior part
    of the first derivative); nonpositive values mean liquidations reduce
    leverage in expectation."""
    zone = _zone(L, st, model, params, spec)
    return np.sum(zone.wt * _eta(zone, params) * model.pdf(zone.z), axis=-1)


def zone_probabilities(L, st: DecisionState, model: ReturnModel,
                       params: SystemParams):
    """(P(no liquidation), P(partial), P(wipeout)) at liabilities L."""
    L = np.asarray(L, dtype=float)
    k = stake_effective(L, st, params) * st.X
    w = exhaustion_value(L, params)
    c_ratio = w / k
    b_ratio = params.beta * L / k
    p_none = 1.0 - model.cdf(b_ratio)
    p_b = model.prob(c_ratio, b_ratio)
    p_wipe = np.maximum(1.0 - p_none - p_b, 0.0)
    return p_none, p_b, p_wipe


def foc_and_curvature(L, st: DecisionState, model: ReturnModel,
                      params: SystemParams,
                      spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """First derivative and curvature sharing one zone construction.

    Zone geometry (thresholds, nodes, density evaluations) dominates the
    cost of a derivative evaluation, so the fused pair costs far less than
    two separate calls. Lagged mode only; the concurrent mode differences
    its first derivative anyway.
    """
    if params.collateral_mode is CollateralMode.CONCURRENT:
        return (foc(L, st, model, params, spec),
                curvature(L, st, model, params, spec))
    zone = _zone(L, st, model, params, spec)
    mean_r = model.mean()
    beta, alpha = params.beta, params.alpha
    k = zone.k
    delta = zone.L - st.prev_L
    price_calL = supply_price(zone.calL, params)
    dprice_calL = supply_price_deriv(zone.calL, params)
    g_nodes = model.pdf(zone.z)
    g_c = model.pdf(zone.c_ratio)
    w_prime = exhaustion_value_prime(zone.L, zone.w, params)
    p = supply_price(zone.u, params)
    dp = supply_price_deriv(zone.u, params)
    d2p = supply_price_second(zone.u, params)
    eta = (beta - alpha * (beta * p - zone.ell * dp)) / (beta - 1.0)
    a_jump = zone.ell_c - zone.L

    d_issuance = (price_calL + delta * dprice_calL) * mean_r
    p_ab = 1.0 - model.cdf(zone.c_ratio)
    interior1 = np.sum(zone.wt * eta * g_nodes, axis=-1)
    jump1 = -a_jump * g_c * w_prime / k
    first = d_issuance - p_ab + interior1 + jump1

    d2_issuance = (2.0 * dprice_calL
                   + delta * supply_price_second(zone.calL, params)) * mean_r
    w_second = exhaustion_value_second(zone.L, zone.w, w_prime, params)
    eta_c = _eta_at_exhaustion(zone, params)
    eta_b = beta * (1.0 - alpha * price_calL) / (beta - 1.0)
    g_b = model.pdf(zone.b_ratio)
    bound_c = g_c * (w_prime / k) * (1.0 - eta_c)
    bound_b = eta_b * g_b * beta / k
    deta = alpha * (2.0 * beta * dp - zone.ell * d2p) / (beta - 1.0) ** 2
    interior2 = np.sum(zone.wt * deta * g_nodes, axis=-1)
    a_prime = (beta - w_prime) / (beta - 1.0) - 1.0
    b_fac = w_prime / k
    g_c_deriv = model.pdf_deriv(zone.c_ratio)
    d_jump = -(a_prime * g_c * b_fac + a_jump * g_c_deriv * b_fac**2
               + a_jump * g_c * w_second / k)
    second = d2_issuance + bound_c + bound_b + interior2 + d_jump
    return first, second


def _newton_in_bracket(st: DecisionState, model: ReturnModel,
                       params: SystemParams, lo, hi, abs_tol,
                       spec: QuadratureSpec, warm=None, max_iter: int = 60):
    """Bracket-safeguarded Newton root of the first-order condition.

    The bracket invariant f(lo) >= 0 >= f(hi) is maintained throughout;
    Newton steps leaving the bracket (or meeting nonnegative curvature)
    fall back to bisection of the current bracket, so the iteration is as
    sign-robust as plain bisection while converging in a handful of fused
    derivative evaluations.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    if warm is None:
        x = 0.5 * (lo + hi)
    else:
        span = hi - lo
        x = np.minimum(np.maximum(warm, lo + 1e-3 * span),
                       hi - 1e-3 * span)
    abs_tol = np.broadcast_to(np.asarray(abs_tol, dtype=float), x.shape)
    live = np.ones(x.shape, dtype=bool)
    for _ in range(max_iter):
        sub = st.subset(live)
        f, fp = foc_and_curvature(x[live], sub, model, params, spec)
        pos = f > 0.0
        lo_l, hi_l = lo[live], hi[live]
        lo_l = np.where(pos, x[live], lo_l)
        hi_l = np.where(pos, hi_l, x[live])
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = x[live] - f / fp
        bad = ~np.isfinite(x_new) | (x_new <= lo_l) | (x_new >= hi_l) \
            | (fp >= 0.0)
        x_new = np.where(bad, 0.5 * (lo_l + hi_l), x_new)
        move = np.abs(x_new - x[live])
        tol_l = abs_tol[live]
        done = (move <= 0.1 * tol_l) | (hi_l - lo_l <= tol_l)
        lo[live], hi[live] = lo_l, hi_l
        x[live] = x_new
        idx = np.where(live)[0]
        live[idx[done]] = False
        if not np.any(live):
            break
    return x


def solve_foc(st: DecisionState, model: ReturnModel, params: SystemParams,
              lower, upper, spec: QuadratureSpec = DEFAULT_QUADRATURE,
              abs_tol=None, warm=None, use_newton: bool = True,
              compute_residual: bool = True):
    """Clamped root of the first-order condition on [lower, upper].

    Returns (L_star, status, residual) with status -1/0/+1 meaning the lower
    bound, an interior root, or the upper bound was selected. Under a
    concave objective, clamping the unconstrained root and maximizing over
    the interval coincide. use_newton=False forces the plain
    bisection-plus-secant path (the two agree to the solve tolerance).
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float),
                            st.prev_L.shape).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float),
                            st.prev_L.shape).copy()
    if abs_tol is None:
        abs_tol = 1e-9 * st.prev_calL
    abs_tol = np.broadcast_to(np.asarray(abs_tol, dtype=float),
                              st.prev_L.shape)
    f_lo = foc(lower, st, model, params, spec)
    f_hi = foc(upper, st, model, params, spec)
    at_lower = f_lo <= 0.0
    at_upper = (~at_lower) & (f_hi >= 0.0)
    interior = ~(at_lower | at_upper)
    L_star = np.where(at_lower, lower, upper)
    if np.any(interior):
        sub = st.subset(interior)
        if use_newton and params.collateral_mode is not CollateralMode.CONCURRENT:
            warm_sub = None if warm is None else \
                np.broadcast_to(np.asarray(warm, dtype=float),
                                st.prev_L.shape)[interior]
            root = _newton_in_bracket(sub, model, params, lower[interior],
                                      upper[interior], abs_tol[interior],
                                      spec, warm_sub)
        else:
            root = bisect_decreasing(
                lambda cand: foc(cand, sub, model, params, spec),
                lower[interior], upper[interior], abs_tol[interior])
        L_star = L_star.copy()
        L_star[interior] = root
    status = np.zeros(st.prev_L.shape, dtype=np.int8)
    status[at_lower] = STATUS_LOWER
    status[at_upper] = STATUS_UPPER
    if compute_residual:
        residual = foc(L_star, st, model, params, spec)
    else:
        residual = np.full(st.prev_L.shape, np.nan)
    return L_star, status, residual


def solve_golden(st: DecisionState, model: ReturnModel, params: SystemParams,
                 lower, upper, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Golden-section argmax of the value function (concavity fallback)."""
    lower = np.broadcast_to(np.asarray(lower, dtype=float),
                            st.prev_L.shape).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float),
                            st.prev_L.shape).copy()
    L_star = golden_maximize(
        lambda cand: value(cand, st, model, params, spec), lower, upper)
    eps = 1e-9 * np.maximum(st.prev_calL, 1.0)
    status = np.zeros(st.prev_L.shape, dtype=np.int8)
    status[L_star <= lower + eps] = STATUS_LOWER
    status[L_star >= upper - eps] = STATUS_UPPER
    return L_star, status
