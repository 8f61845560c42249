"""Deterministic mechanics of the collateralized-stablecoin market.

Domain types (parameters, one-step state, thresholds, liquidation outcomes)
plus the clearing equation, the liquidation trigger/exhaustion prices, the
forced-repurchase amount, and the elementary square-root bounds used to
bracket the exhaustion price. Everything here is a pure function; the array
variants accept numpy arrays so the path-parallel engine and the scalar API
share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
import math

import numpy as np


class StablesimError(Exception):
    """Base class for domain errors."""


class ParameterError(StablesimError):
    """A parameter or state field violates its invariant."""


class SupplyFloorError(StablesimError):
    """Total supply fell below the configured floor (model left its domain)."""


class DegenerateCollateralError(StablesimError):
    """Operation requires locked collateral > 0."""


class PreconditionError(StablesimError):
    """Operation called outside its stated precondition."""


class ThresholdSolveError(StablesimError):
    """Exhaustion-price root finding failed to converge."""


class IntegrationAccuracyError(StablesimError):
    """Quadrature could not reach the requested tolerance."""


class ConcavityViolationError(StablesimError):
    """Objective curvature came out positive beyond tolerance."""


class InsolvencySignal(StablesimError):
    """No feasible supply decision (repurchase capacity exhausted)."""


class SolverError(StablesimError):
    """Root/argmax search failed to converge."""


class SensitivityUndefinedError(StablesimError):
    """Implicit-function sensitivities need strictly negative curvature."""


class BoundInapplicableError(StablesimError):
    """Neither verifiable condition for the requested bound holds."""


class DemandMode(Enum):
    UNIT_ELASTIC = "unit_elastic"
    PERFECTLY_ELASTIC = "perfectly_elastic"
    CONSTANT_ELASTICITY = "constant_elasticity"


class SpeculatorMode(Enum):
    SINGLE = "single"
    UNLIMITED_DEPTH = "unlimited_depth"


class CollateralMode(Enum):
    LAGGED = "lagged"
    CONCURRENT = "concurrent"


class LiquidationKind(Enum):
    NONE = "none"
    PARTIAL = "partial"
    WIPEOUT = "wipeout"


@dataclass(frozen=True)
class SystemParams:
    """Model constants.

    demand: dollar demand level D (unit-elastic demand keeps dollar value
        constant, not quantity).
    beta: collateral factor (> 1); locked collateral value must cover
        beta times liabilities.
    alpha: liquidation fee multiple (>= 1) applied to the repurchase price.
    zeta: outside stablecoin supply held constant over time (>= 0).
    kappa: inverse lower bound on the no-wipeout probability (>= 1).
    r_bound: upper bound on the one-step conditional expected return.
    u_bound: upper bound assumed for the exhaustion price c.
    v_floor: positive lower bound on total supply.
    elasticity: constant price elasticity of demand (> 0); 1 in
        unit-elastic mode.
    q_unit: quantity demanded at price 1 (constant-elasticity mode).
    marginal_entry_cost: marginal speculator's expected liability-plus-
        liquidation cost per issued unit (unlimited-depth mode).
    """

    demand: float = 100.0
    beta: float = 1.5
    alpha: float = 1.0
    zeta: float = 0.0
    kappa: float = 1.0 / 0.999
    r_bound: float = 1.5 ** (1.0 / 365.0)
    u_bound: float = math.inf
    v_floor: float = 1e-6
    elasticity: float = 1.0
    q_unit: float = 100.0
    demand_mode: DemandMode = DemandMode.UNIT_ELASTIC
    speculator_mode: SpeculatorMode = SpeculatorMode.SINGLE
    collateral_mode: CollateralMode = CollateralMode.LAGGED
    marginal_entry_cost: float = 1.0

    def __post_init__(self):
        if not self.beta > 1.0:
            raise ParameterError(f"beta must exceed 1 (got {self.beta})")
        if self.alpha < 1.0:
            raise ParameterError(f"alpha must be >= 1 (got {self.alpha})")
        if self.zeta < 0.0:
            raise ParameterError(f"zeta must be >= 0 (got {self.zeta})")
        if self.kappa < 1.0:
            raise ParameterError(f"kappa must be >= 1 (got {self.kappa})")
        if not self.v_floor > 0.0:
            raise ParameterError(f"v_floor must be > 0 (got {self.v_floor})")
        if not self.elasticity > 0.0:
            raise ParameterError(
                f"elasticity must be > 0 (got {self.elasticity})")
        if self.demand_mode is DemandMode.UNIT_ELASTIC and self.elasticity != 1.0:
            raise ParameterError("unit-elastic mode requires elasticity = 1")
        if self.demand < 0.0:
            raise ParameterError(f"demand must be >= 0 (got {self.demand})")
        if self.q_unit <= 0.0:
            raise ParameterError(f"q_unit must be > 0 (got {self.q_unit})")
        if self.marginal_entry_cost <= 0.0:
            raise ParameterError("marginal_entry_cost must be > 0")
        if (self.speculator_mode is SpeculatorMode.UNLIMITED_DEPTH
                and self.demand_mode is not DemandMode.UNIT_ELASTIC):
            raise ParameterError(
                "unlimited-depth supply is defined for unit-elastic demand only")


@dataclass
class SystemState:
    """One time slice of the system.

    t: step index.
    X: ETH price in dollars.
    L: speculator liabilities (stablecoin units).
    calL: total supply = zeta + L.
    N: speculator's full ETH position (locked plus this step's flow).
    Nbar: ETH collateral at stake for the next step.
    Z: stablecoin clearing price in dollars.
    Y: speculator equity in dollars, marked pre-decision.
    """

    t: int
    X: float
    L: float
    calL: float
    N: float
    Nbar: float
    Z: float
    Y: float
    wiped_out: bool = False

    def validate(self, params: SystemParams) -> None:
        if abs(self.calL - (params.zeta + self.L)) > 1e-9 * max(1.0, self.calL):
            raise ParameterError("calL must equal zeta + L")
        if self.calL < params.v_floor and not self.wiped_out:
            raise SupplyFloorError(
                f"total supply {self.calL} below floor {params.v_floor}")
        if self.L < 0:
            raise ParameterError("liabilities must be >= 0")
        if self.Nbar < 0:
            raise ParameterError("locked collateral must be >= 0")


@dataclass(frozen=True)
class Thresholds:
    """Next-step ETH price levels: liquidation trigger b, exhaustion c."""

    b: float
    c: float


@dataclass(frozen=True)
class LiquidationOutcome:
    ell: float
    repurchase_price: float
    collateral_cost: float
    kind: LiquidationKind

    def __post_init__(self):
        if self.ell < 0:
            raise ParameterError("repurchased amount must be >= 0")
        if (self.kind is LiquidationKind.NONE) != (self.ell == 0.0):
            raise ParameterError("kind NONE iff nothing was repurchased")


NO_LIQUIDATION = LiquidationOutcome(0.0, 0.0, 0.0, LiquidationKind.NONE)


@dataclass(frozen=True)
class EventProbabilities:
    """Split of the next-step return into no/partial/wipeout liquidation."""

    p_none: float
    p_partial: float
    p_wipe: float

    def __post_init__(self):
        for p in (self.p_none, self.p_partial, self.p_wipe):
            if not -1e-9 <= p <= 1.0 + 1e-9:
                raise ParameterError(f"probability {p} outside [0, 1]")
        if abs(self.p_none + self.p_partial + self.p_wipe - 1.0) > 1e-8:
            raise ParameterError("event probabilities must sum to 1")


# ---------------------------------------------------------------------------
# Demand-side pricing
# ---------------------------------------------------------------------------

def supply_price(supply, params: SystemParams):
    """Clearing price at a given total supply (array friendly, no guards)."""
    s = np.asarray(supply, dtype=float)
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        return params.demand / s
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        return np.ones_like(s)
    return (params.q_unit / s) ** (1.0 / params.elasticity)


def supply_price_deriv(supply, params: SystemParams):
    s = np.asarray(supply, dtype=float)
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        return -params.demand / s**2
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        return np.zeros_like(s)
    inv_g = 1.0 / params.elasticity
    return -inv_g * (params.q_unit / s) ** inv_g / s


def supply_price_second(supply, params: SystemParams):
    s = np.asarray(supply, dtype=float)
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        return 2.0 * params.demand / s**3
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        return np.zeros_like(s)
    inv_g = 1.0 / params.elasticity
    return inv_g * (inv_g + 1.0) * (params.q_unit / s) ** inv_g / s**2


def clearing_price(calL: float, params: SystemParams) -> float:
    """Market-clearing stablecoin price at total supply calL.

    Raises SupplyFloorError below the supply floor: the model's price is no
    longer meaningful there.
    """
    if calL < params.v_floor:
        raise SupplyFloorError(
            f"supply {calL} below floor {params.v_floor}")
    return float(supply_price(calL, params))


# ---------------------------------------------------------------------------
# Liquidation thresholds
# ---------------------------------------------------------------------------

def trigger_value(L, beta: float):
    """Collateral dollar value at which liquidation triggers: beta * L."""
    return beta * np.asarray(L, dtype=float)


def exhaustion_value(L, params: SystemParams):
    """Collateral dollar value w at which a forced repurchase consumes it all.

    Solves alpha * ell * price(calL - ell) = w with ell = (beta*L - w)/(beta-1).
    Closed forms for unit-elastic and perfectly elastic demand; bracketed
    bisection otherwise. Vectorized over L.
    """
    L = np.asarray(L, dtype=float)
    beta, alpha, zeta = params.beta, params.alpha, params.zeta
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        aD = alpha * params.demand
        s = (beta - 1.0) * zeta - L + aD
        disc = s * s + 4.0 * aD * beta * L
        root = np.sqrt(disc)
        # Stable quadratic: avoid cancellation when s > 0.
        denom = np.where(s > 0.0, s + root, 1.0)
        w = np.where(s <= 0.0, 0.5 * (-s + root),
                     (2.0 * aD * beta * L) / denom)
        # aD == 0 collapses to w = max(L - (beta-1)*zeta, 0).
        w = np.where(aD > 0.0, w, np.maximum(L - (beta - 1.0) * zeta, 0.0))
        return w
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        return alpha * beta * L / (beta - 1.0 + alpha)
    return _exhaustion_value_numeric(L, params)


def _exhaustion_residual(w, L, params: SystemParams):
    beta, alpha, zeta = params.beta, params.alpha, params.zeta
    ell = (beta * L - w) / (beta - 1.0)
    u = L + zeta - ell
    return alpha * ell * supply_price(u, params) - w


def _exhaustion_value_numeric(L, params: SystemParams, rtol: float = 1e-14,
                              max_iter: int = 200):
    beta, zeta = params.beta, params.zeta
    lo = np.maximum(L - (beta - 1.0) * zeta, 0.0)
    hi = beta * L
    span = hi - lo
    lo = lo + 1e-13 * span
    f_lo = _exhaustion_residual(lo, L, params)
    f_hi = _exhaustion_residual(hi, L, params)
    if np.any(f_lo < 0.0) or np.any(f_hi > 0.0):
        raise ThresholdSolveError("exhaustion equation not bracketed")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = _exhaustion_residual(mid, L, params)
        take_hi = f_mid > 0.0
        lo = np.where(take_hi, mid, lo)
        hi = np.where(take_hi, hi, mid)
        if np.all(hi - lo <= rtol * np.maximum(hi, 1.0)):
            return 0.5 * (lo + hi)
    raise ThresholdSolveError("exhaustion bisection did not converge")


def exhaustion_value_prime(L, w, params: SystemParams):
    """dw/dL by implicit differentiation of the exhaustion equation."""
    L = np.asarray(L, dtype=float)
    w = np.asarray(w, dtype=float)
    beta, alpha, zeta = params.beta, params.alpha, params.zeta
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        aD = alpha * params.demand
        s = (beta - 1.0) * zeta - L + aD
        if params.demand == 0.0:
            return np.ones_like(w)
        return (w + aD * beta) / (2.0 * w + s)
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        return np.full_like(w, alpha * beta / (beta - 1.0 + alpha))
    ell = (beta * L - w) / (beta - 1.0)
    u = L + zeta - ell
    p, dp = supply_price(u, params), supply_price_deriv(u, params)
    f_w = -alpha * (p - ell * dp) / (beta - 1.0) - 1.0
    f_l = alpha * (beta * p - ell * dp) / (beta - 1.0)
    return -f_l / f_w


def exhaustion_value_second(L, w, w_prime, params: SystemParams):
    """d2w/dL2; finite-differenced analytic first derivative for modes
    without a closed-form second derivative."""
    L = np.asarray(L, dtype=float)
    w = np.asarray(w, dtype=float)
    beta, alpha, zeta = params.beta, params.alpha, params.zeta
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        aD = alpha * params.demand
        if params.demand == 0.0:
            return np.zeros_like(w)
        s = (beta - 1.0) * zeta - L + aD
        return 2.0 * w_prime * (1.0 - w_prime) / (2.0 * w + s)
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        return np.zeros_like(w)
    h = 1e-5 * np.maximum(L, 1.0)
    w_hi = _exhaustion_value_numeric(L + h, params)
    w_lo = _exhaustion_value_numeric(L - h, params)
    d_hi = exhaustion_value_prime(L + h, w_hi, params)
    d_lo = exhaustion_value_prime(L - h, w_lo, params)
    return (d_hi - d_lo) / (2.0 * h)


def threshold_b(L: float, Nbar: float, beta: float) -> float:
    """Highest next-step ETH price that breaches the collateral constraint."""
    if Nbar <= 0.0:
        raise DegenerateCollateralError("threshold_b needs Nbar > 0")
    if L <= 0.0:
        raise PreconditionError("threshold_b needs L > 0")
    return float(trigger_value(L, beta)) / Nbar


def threshold_c(L: float, Nbar: float, params: SystemParams) -> float:
    """Next-step ETH price at which forced repurchase consumes all collateral."""
    if Nbar <= 0.0:
        raise DegenerateCollateralError("threshold_c needs Nbar > 0")
    if L <= 0.0:
        raise PreconditionError("threshold_c needs L > 0")
    return float(exhaustion_value(L, params)) / Nbar


def thresholds(L: float, Nbar: float, params: SystemParams) -> Thresholds:
    return Thresholds(b=threshold_b(L, Nbar, params.beta),
                      c=threshold_c(L, Nbar, params))


def liquidation_amount(L: float, Nbar: float, X: float, beta: float) -> float:
    """Stablecoin units the mechanism repurchases when X breaches b.

    Satisfies Nbar*X - ell = beta*(L - ell); zero exactly at X = b.
    """
    b = threshold_b(L, Nbar, beta)
    if X > b * (1.0 + 1e-12):
        raise PreconditionError(
            f"no liquidation is triggered at X={X} >= b={b}")
    return max((beta * L - Nbar * X) / (beta - 1.0), 0.0)


def wipeout_repurchase(calL, collateral_value, params: SystemParams):
    """Units repurchased when the whole locked position is consumed.

    Solves alpha * e * price(calL - e) = collateral_value for e in (0, calL);
    unit-elastic demand has the closed form calL*V / (alpha*D + V).
    """
    calL = np.asarray(calL, dtype=float)
    v = np.asarray(collateral_value, dtype=float)
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        return calL * v / (params.alpha * params.demand + v)
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        return np.minimum(v / params.alpha, calL * (1.0 - 1e-12))
    lo = np.zeros_like(calL)
    hi = calL * (1.0 - 1e-12)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = params.alpha * mid * supply_price(calL - mid, params) - v
        hi = np.where(f > 0.0, mid, hi)
        lo = np.where(f > 0.0, lo, mid)
        if np.all(hi - lo <= 1e-14 * np.maximum(calL, 1.0)):
            break
    return 0.5 * (lo + hi)


def apply_liquidation(state: SystemState, X_next: float,
                      params: SystemParams) -> tuple[SystemState, LiquidationOutcome]:
    """Pre-decision liquidation mechanics at the newly revealed ETH price.

    Marks the state to market at X_next; partial liquidations repurchase ell
    at alpha times the price cleared by the reduced supply, wipeouts consume
    the locked position entirely and freeze the speculator.
    """
    if state.wiped_out:
        raise PreconditionError("speculator already wiped out")
    L, Nbar, N, calL = state.L, state.Nbar, state.N, state.calL
    t = state.t + 1
    if L <= 0.0 or Nbar <= 0.0 or Nbar * X_next >= params.beta * L:
        new = replace(state, t=t, X=X_next, Y=N * X_next - L,
                      Nbar=N, Z=float(supply_price(calL, params)))
        return new, NO_LIQUIDATION
    c = threshold_c(L, Nbar, params)
    if X_next >= c:
        ell = liquidation_amount(L, Nbar, X_next, params.beta)
        price = params.alpha * float(supply_price(calL - ell, params))
        cost_eth = min(ell * price / X_next, Nbar)
        new_L = L - ell
        new_calL = calL - ell
        new = replace(
            state, t=t, X=X_next, L=new_L, calL=new_calL,
            N=N - cost_eth, Nbar=N - cost_eth,
            Z=float(supply_price(new_calL, params)),
            Y=N * X_next - L + ell * (1.0 - price))
        return new, LiquidationOutcome(ell, price, cost_eth,
                                       LiquidationKind.PARTIAL)
    value = Nbar * X_next
    ell = float(wipeout_repurchase(calL, value, params))
    new_calL = calL - ell
    new = replace(
        state, t=t, X=X_next, L=L - ell, calL=new_calL,
        N=N - Nbar, Nbar=0.0, Z=float(supply_price(new_calL, params)),
        Y=(N - Nbar) * X_next, wiped_out=True)
    price = value / ell if ell > 0 else 0.0
    return new, LiquidationOutcome(ell, price, Nbar, LiquidationKind.WIPEOUT)


# ---------------------------------------------------------------------------
# Elementary bounds on the exhaustion square root
# ---------------------------------------------------------------------------

def exhaustion_root_bounds(alpha: float, demand: float, liabilities: float):
    """Bracket sqrt(a^2 D^2 + 4 a D L + L^2) between elementary expressions.

    Returns (lower, mid, upper) with lower = aD + L,
    upper = min(2 aD + L, aD + L + sqrt(2 aD L)); lower <= mid <= upper.
    """
    if alpha < 0 or demand < 0 or liabilities < 0:
        raise ParameterError("inputs must be nonnegative")
    aD = alpha * demand
    L = liabilities
    mid = math.sqrt(aD * aD + 4.0 * aD * L + L * L)
    lower = aD + L
    upper = min(2.0 * aD + L, aD + L + math.sqrt(2.0 * aD * L))
    return lower, mid, upper


def initial_state(params: SystemParams, X0: float, L0: float, N0: float,
                  Nbar0: float | None = None) -> SystemState:
    """Assemble a consistent time-zero state."""
    if Nbar0 is None:
        Nbar0 = N0
    calL = params.zeta + L0
    if calL < params.v_floor:
        raise SupplyFloorError("initial supply below floor")
    Z = float(supply_price(calL, params))
    return SystemState(t=0, X=X0, L=L0, calL=calL, N=N0, Nbar=Nbar0,
                       Z=Z, Y=N0 * X0 - L0)
