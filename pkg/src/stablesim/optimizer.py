"""The speculator's one-period supply decision.

Scalar contracts over the vectorized objective machinery: the expected-value
function and its derivatives, the clamped first-order-condition solve with
binding-constraint classification, the balance-sheet lower bound on the
supply change, the incentive upper bound on supply, and the implicit-
function sensitivities of the optimum to the realized return and the
collateral level.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from . import objective
from .model import (
    BoundInapplicableError,
    CollateralMode,
    ConcavityViolationError,
    DemandMode,
    InsolvencySignal,
    ParameterError,
    PreconditionError,
    SensitivityUndefinedError,
    SpeculatorMode,
    SystemParams,
    SystemState,
    supply_price,
)
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec
from .objective import DecisionState, STATUS_LOWER, STATUS_UPPER
from .returns import ReturnModel

CONCAVITY_TOL = 1e-9


class Binding(Enum):
    INTERIOR = "interior"
    COLLATERAL_CAP = "collateral_cap"
    FORCED_LIQUIDATION_CAP = "forced_liquidation_cap"
    LOWER_BOUND = "lower_bound"


@dataclass(frozen=True)
class DecisionResult:
    """Outcome of one supply decision."""

    L_star: float
    delta: float
    binding: Binding
    psi_at_star: float
    foc_residual: float
    method: str = "foc_bisection"
    fallback: bool = False


@dataclass(frozen=True)
class SensitivityPair:
    """Sensitivities of the decided supply to the realized return (rho) and
    to the collateral at stake (n)."""

    dh_drho: float
    dh_dn: float


def _decision_state(state: SystemState) -> DecisionState:
    return DecisionState.of(state.calL, state.L, state.Nbar, state.X)


def psi(L: float, state: SystemState, model: ReturnModel,
        params: SystemParams,
        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Expected next-period equity if liabilities are set to L now."""
    return float(objective.value(L, _decision_state(state), model, params,
                                 spec)[0])


def psi_prime(L: float, state: SystemState, model: ReturnModel,
              params: SystemParams,
              spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Marginal expected next-period equity per unit of liabilities."""
    return float(objective.foc(L, _decision_state(state), model, params,
                               spec)[0])


def psi_second(L: float, state: SystemState, model: ReturnModel,
               params: SystemParams,
               spec: QuadratureSpec = DEFAULT_QUADRATURE,
               strict: bool = True, tol: float = CONCAVITY_TOL) -> float:
    """Curvature of the objective; concave (<= 0) under the model's
    operating assumptions.

    strict=True raises ConcavityViolationError when the value exceeds tol,
    signalling an assumption failure instead of silently returning a
    positive curvature.
    """
    val = float(objective.curvature(L, _decision_state(state), model, params,
                                    spec)[0])
    if strict and val > tol:
        raise ConcavityViolationError(
            f"objective curvature {val} > {tol} at L={L}")
    return val


def delta_lower_bound(state: SystemState, params: SystemParams) -> float:
    """Most negative feasible supply change: the speculator's ETH position
    is exhausted repurchasing at the endogenous price.

    Closed-form quadratic root for unit-elastic demand; bisection on the
    balance equation otherwise. Raises InsolvencySignal when no real
    solution exists (equity cannot cover any repurchase path).
    """
    nx = state.N * state.X
    floor_delta = max(params.v_floor - params.zeta, 0.0) - state.L
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        # Repurchases at par leave equity unchanged; only the supply floor
        # limits the buyback.
        if nx < state.L:
            raise InsolvencySignal("position value below liabilities")
        return floor_delta
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        b = nx + params.demand - state.L - state.calL
        c = state.calL * (nx - state.L)
        disc = b * b + 4.0 * c
        if disc < 0.0:
            raise InsolvencySignal(
                "repurchase balance equation has no real solution")
        return 0.5 * (b - math.sqrt(disc))

    def balance(delta):
        supply = state.calL + delta
        return nx + delta * float(supply_price(supply, params)) \
            - state.L - delta

    if balance(0.0) < 0.0:
        raise InsolvencySignal("position value below liabilities")
    lo, hi = floor_delta, 0.0
    if balance(lo) > 0.0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if balance(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * max(abs(lo), 1.0):
            break
    return 0.5 * (lo + hi)


def feasible_interval(state: SystemState, params: SystemParams,
                      liquidated: bool = False) -> tuple[float, float]:
    """Admissible liabilities range for the decision from this state.

    The lower end combines the supply floor with the balance-sheet bound;
    the upper end is the post-decision collateral cap, or the current
    (post-liquidation) liabilities when a liquidation forced the step.
    """
    floor_L = max(params.v_floor - params.zeta,
                  1e-12 * max(state.calL, 1.0))
    lower = max(floor_L, state.L + delta_lower_bound(state, params))
    if liquidated:
        upper = state.L
    elif params.collateral_mode is CollateralMode.CONCURRENT:
        # Stake moves with the decision; cap where stake(L) * X = beta * L.
        upper = _concurrent_cap(state, params, floor_L)
    else:
        upper = state.Nbar * state.X / params.beta
    if lower > upper:
        raise InsolvencySignal(
            f"no feasible supply decision (lower {lower} > cap {upper})")
    return lower, upper


def _concurrent_cap(state: SystemState, params: SystemParams,
                    floor_L: float) -> float:
    def slack(L):
        stake = float(objective.stake_effective(
            L, _decision_state(state), params)[0])
        return stake * state.X - params.beta * L

    lo, hi = floor_L, max(state.L, floor_L) + state.N * state.X / params.beta
    for _ in range(80):
        if slack(hi) < 0.0:
            break
        hi *= 2.0
    else:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if slack(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(hi, 1.0):
            break
    return lo


def solve_supply(state: SystemState, model: ReturnModel,
                 params: SystemParams,
                 spec: QuadratureSpec = DEFAULT_QUADRATURE,
                 liquidated: bool = False,
                 check_concavity: bool = True) -> DecisionResult:
    """Optimal liabilities for the coming period, clamped to feasibility.

    Unlimited-depth mode applies the marginal-entry closed form; otherwise
    the first-order condition is solved by bracketed bisection, with a
    golden-section fallback (flagged) when the curvature check fails.
    """
    if state.wiped_out:
        raise PreconditionError("speculator is wiped out")
    lower, upper = feasible_interval(state, params, liquidated)
    st = _decision_state(state)
    mean_r = model.mean()

    if params.speculator_mode is SpeculatorMode.UNLIMITED_DEPTH:
        target = math.sqrt(params.demand * state.calL * mean_r
                           / params.marginal_entry_cost) - params.zeta
        L_star = min(max(target, lower), upper)
        binding = Binding.INTERIOR
        if L_star == upper:
            binding = (Binding.FORCED_LIQUIDATION_CAP if liquidated
                       else Binding.COLLATERAL_CAP)
        elif L_star == lower and target < lower:
            binding = Binding.LOWER_BOUND
        res = 0.0 if binding is Binding.INTERIOR else float(
            objective.foc(L_star, st, model, params, spec)[0])
        return DecisionResult(
            L_star=L_star, delta=L_star - state.L, binding=binding,
            psi_at_star=float(objective.value(L_star, st, model, params,
                                              spec)[0]),
            foc_residual=res, method="closed_form")

    L_arr, status, residual = objective.solve_foc(
        st, model, params, lower, upper, spec)
    method, fallback = "foc_bisection", False
    if check_concavity:
        curv = float(objective.curvature(L_arr, st, model, params, spec)[0])
        if curv > CONCAVITY_TOL:
            L_arr, status = objective.solve_golden(
                st, model, params, lower, upper, spec)
            residual = objective.foc(L_arr, st, model, params, spec)
            method, fallback = "golden_section", True
    L_star = float(L_arr[0])
    code = int(status[0])
    if code == STATUS_LOWER:
        binding = Binding.LOWER_BOUND
    elif code == STATUS_UPPER:
        binding = (Binding.FORCED_LIQUIDATION_CAP if liquidated
                   else Binding.COLLATERAL_CAP)
    else:
        binding = Binding.INTERIOR
    return DecisionResult(
        L_star=L_star, delta=L_star - state.L, binding=binding,
        psi_at_star=float(objective.value(L_star, st, model, params,
                                          spec)[0]),
        foc_residual=float(residual[0]), method=method, fallback=fallback)


def prop_conditions(state: SystemState, model: ReturnModel,
                    params: SystemParams, L_eval: float,
                    kappa: float | None = None,
                    spec: QuadratureSpec = DEFAULT_QUADRATURE) -> dict:
    """Verifiable preconditions of the supply upper bound at L_eval.

    Condition 1: expected liquidation leverage effect <= 0 and
    P(no wipeout) >= 1/kappa. Condition 2: P(no liquidation) minus twice
    P(partial) lies in [1/kappa, 1].
    """
    kappa = params.kappa if kappa is None else kappa
    st = _decision_state(state)
    integral = float(objective.leverage_effect_integral(
        L_eval, st, model, params, spec)[0])
    p_none, p_b, p_wipe = (float(p[0]) for p in
                           objective.zone_probabilities(L_eval, st, model,
                                                        params))
    p_ab = p_none + p_b
    spread = p_none - 2.0 * p_b
    return {
        "leverage_integral": integral,
        "p_no_liquidation": p_none,
        "p_partial": p_b,
        "p_wipeout": p_wipe,
        "condition1": integral <= 1e-12 and p_ab >= 1.0 / kappa,
        "condition2": 1.0 + 1e-12 >= spread >= 1.0 / kappa,
    }


def supply_upper_bound(state: SystemState, model: ReturnModel,
                       params: SystemParams, kappa: float | None = None,
                       L_eval: float | None = None,
                       spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Incentive ceiling on the supply decision: sqrt(kappa * prev supply *
    dollar demand * expected return).

    Verifies one of the two stated conditions at L_eval (the solved optimum
    by default) and raises BoundInapplicableError when neither holds.
    """
    kappa = params.kappa if kappa is None else kappa
    if L_eval is None:
        L_eval = solve_supply(state, model, params, spec).L_star
    conds = prop_conditions(state, model, params, L_eval, kappa, spec)
    if not (conds["condition1"] or conds["condition2"]):
        raise BoundInapplicableError(
            f"neither upper-bound condition verified: {conds}")
    return math.sqrt(kappa * state.calL * params.demand * model.mean())


def h_sensitivities(state: SystemState, model: ReturnModel,
                    params: SystemParams, rho: float = 1.0,
                    spec: QuadratureSpec = DEFAULT_QUADRATURE,
                    decision: DecisionResult | None = None) -> SensitivityPair:
    """Implicit-function sensitivities of the decided supply.

    rho anchors the realized-return coordinate: the state's price X is read
    as X_prev * rho, so dh_drho = (X / rho) * dh_dX. Requires an interior
    optimum and strictly negative curvature.
    """
    if decision is None:
        decision = solve_supply(state, model, params, spec)
    if decision.binding is not Binding.INTERIOR:
        raise PreconditionError(
            f"sensitivities need a non-binding constraint "
            f"(got {decision.binding.value})")
    st = _decision_state(state)
    curv = float(objective.curvature(decision.L_star, st, model, params,
                                     spec)[0])
    if curv >= 0.0:
        raise SensitivityUndefinedError(
            f"curvature {curv} is not strictly negative")
    cross = float(objective.cross_collateral_value(
        decision.L_star, st, model, params, spec)[0])
    dh_dk = -cross / curv
    dh_dx = state.Nbar * dh_dk
    return SensitivityPair(dh_drho=(state.X / rho) * dh_dx,
                           dh_dn=state.X * dh_dk)
