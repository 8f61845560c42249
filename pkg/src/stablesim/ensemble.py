"""Path-parallel system dynamics.

Advances every Monte Carlo path of the coupled price/supply system in one
numpy pass per step: marks the new ETH price, applies forced liquidations,
solves each path's supply decision (closed form where the liquidation zone
carries no density, vectorized first-order-condition bisection elsewhere),
and evaluates the stopping-time detectors by integrating the next-step
decision over the return density — exactly (nested solves) or through a
reduced-coordinate interpolation table justified by the model's rescaling
symmetry.

The scalar engine wraps these routines with one-element arrays, so single
trajectories and ensembles are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import objective
from .model import (
    CollateralMode,
    DemandMode,
    ParameterError,
    SpeculatorMode,
    SystemParams,
    SystemState,
    exhaustion_value,
    supply_price,
    wipeout_repurchase,
)
from .numerics import QuadratureSpec, panel_rule
from .objective import DecisionState
from .returns import ReturnModel, ReturnSchedule

TERM_ACTIVE = 0
TERM_WIPEOUT = 1
TERM_INSOLVENT = 2
TERM_FLOOR = 3

LIQ_NONE = 0
LIQ_PARTIAL = 1
LIQ_WIPEOUT = 2

BIND_INTERIOR = 0
BIND_LOWER = -1
BIND_COLLATERAL = 1
BIND_FORCED = 2

ENGINE_QUADRATURE = QuadratureSpec(nodes_per_panel=12, panels=6, grading=3.0)


@dataclass
class PathState:
    """State of every path at one time index (1-d arrays)."""

    t: int
    X: np.ndarray
    L: np.ndarray
    calL: np.ndarray
    N: np.ndarray
    Nbar: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    terminated: np.ndarray  # int8 TERM_* codes
    s1_seen: np.ndarray     # bool

    @classmethod
    def from_state(cls, state: SystemState, n_paths: int) -> "PathState":
        def rep(x):
            return np.full(n_paths, float(x))

        term = np.full(n_paths, TERM_WIPEOUT if state.wiped_out
                       else TERM_ACTIVE, dtype=np.int8)
        return cls(t=state.t, X=rep(state.X), L=rep(state.L),
                   calL=rep(state.calL), N=rep(state.N), Nbar=rep(state.Nbar),
                   Z=rep(state.Z), Y=rep(state.Y), terminated=term,
                   s1_seen=np.zeros(n_paths, dtype=bool))

    @property
    def active(self) -> np.ndarray:
        return self.terminated == TERM_ACTIVE


@dataclass
class StepRecord:
    """Per-path outcome of one transition."""

    liq_kind: np.ndarray      # int8 LIQ_*
    ell: np.ndarray
    liq_price: np.ndarray
    liq_cost_eth: np.ndarray  # ETH removed from the locked position
    binding: np.ndarray       # int8 BIND_*
    newly_terminated: np.ndarray  # int8 TERM_* (0 where none)


@dataclass
class DetectorValues:
    e_inv_L: np.ndarray
    e_L: np.ndarray
    e_Z: np.ndarray


# ---------------------------------------------------------------------------
# Supply decision (vectorized)
# ---------------------------------------------------------------------------

def _floor_L(calL, params: SystemParams):
    return np.maximum(params.v_floor - params.zeta,
                      1e-12 * np.maximum(calL, 1.0))


def _delta_lb(calL, L, N, X, params: SystemParams):
    """Vectorized balance-sheet floor on the supply change.

    Returns (delta_lb, insolvent). Rows flagged insolvent carry nan bounds.
    """
    nx = N * X
    floor_delta = np.maximum(params.v_floor - params.zeta, 0.0) - L
    if params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        insolvent = nx < L
        return np.where(insolvent, np.nan, floor_delta), insolvent
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        b = nx + params.demand - L - calL
        c = calL * (nx - L)
        disc = b * b + 4.0 * c
        insolvent = disc < 0.0
        dlb = 0.5 * (b - np.sqrt(np.maximum(disc, 0.0)))
        return np.where(insolvent, np.nan, dlb), insolvent

    def balance(delta):
        return nx + delta * supply_price(calL + delta, params) - L - delta

    insolvent = balance(np.zeros_like(L)) < 0.0
    lo = np.array(floor_delta, copy=True)
    hi = np.zeros_like(L)
    done_at_floor = balance(lo) > 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = balance(mid) > 0.0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all(hi - lo <= 1e-13 * np.maximum(np.abs(lo), 1.0)):
            break
    dlb = np.where(done_at_floor, floor_delta, 0.5 * (lo + hi))
    return np.where(insolvent, np.nan, dlb), insolvent


def _concurrent_cap_vec(st: DecisionState, params: SystemParams):
    def slack(L):
        stake = objective.stake_effective(L, st, params)
        return stake * st.X - params.beta * L

    lo = _floor_L(st.prev_L + params.zeta, params)
    hi = np.maximum(st.prev_L, lo) + st.stake * st.X / params.beta + 1.0
    for _ in range(60):
        bad = slack(hi) >= 0.0
        if not np.any(bad):
            break
        hi = np.where(bad, hi * 2.0, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        ok = slack(mid) >= 0.0
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
        if np.all(hi - lo <= 1e-12 * np.maximum(hi, 1.0)):
            break
    return lo


def decide(prev_calL, prev_L, stake, X, N_pos, liquidated,
           model: ReturnModel, params: SystemParams,
           spec: QuadratureSpec = ENGINE_QUADRATURE,
           table: "DecisionTable | None" = None):
    """Supply decision for a batch of post-liquidation states.

    Returns (L_star, binding int8, insolvent bool). liquidated rows are
    capped at their current liabilities (the forced-repurchase cap); the
    rest at the post-decision collateral constraint.
    """
    prev_calL = np.asarray(prev_calL, dtype=float)
    prev_L = np.asarray(prev_L, dtype=float)
    stake = np.asarray(stake, dtype=float)
    X = np.asarray(X, dtype=float)
    st = DecisionState(prev_calL, prev_L, stake, X)
    floor = _floor_L(prev_calL, params)
    dlb, insolvent = _delta_lb(prev_calL, prev_L, N_pos, X, params)
    lower = np.maximum(floor, prev_L + np.where(insolvent, 0.0, dlb))
    if params.collateral_mode is CollateralMode.CONCURRENT:
        cap = _concurrent_cap_vec(st, params)
        upper = np.where(liquidated, prev_L, cap)
    else:
        upper = np.where(liquidated, prev_L, stake * X / params.beta)
    insolvent |= lower > upper
    ok = ~insolvent
    L_star = prev_L.copy()
    binding = np.zeros(prev_L.shape, dtype=np.int8)
    if not np.any(ok):
        return L_star, binding, insolvent

    mean_r = model.mean()
    if params.speculator_mode is SpeculatorMode.UNLIMITED_DEPTH:
        target = np.sqrt(params.demand * prev_calL * mean_r
                         / params.marginal_entry_cost) - params.zeta
        L_star = np.where(ok, np.clip(target, lower, upper), L_star)
        binding = _binding_from_clamp(L_star, target, lower, upper,
                                      liquidated, ok)
        return L_star, binding, insolvent

    remaining = ok
    if (params.demand_mode is DemandMode.UNIT_ELASTIC
            and params.collateral_mode is CollateralMode.LAGGED):
        zmin = model.support()[0]
        L_closed = np.sqrt(params.demand * prev_calL * mean_r) - params.zeta
        zone_empty = (L_closed > 0.0) \
            & (params.beta * L_closed <= zmin * stake * X)
        fast = ok & zone_empty
        if np.any(fast):
            clamped = np.clip(L_closed, lower, upper)
            L_star = np.where(fast, clamped, L_star)
            binding = _binding_from_clamp(L_star, L_closed, lower, upper,
                                          liquidated, fast, binding)
        remaining = ok & ~fast
    if np.any(remaining):
        sub = st.subset(remaining)
        if table is not None:
            root, status = table.solve(sub, lower[remaining],
                                       upper[remaining], params)
        else:
            root, status, _ = objective.solve_foc(
                sub, model, params, lower[remaining], upper[remaining], spec,
                warm=prev_L[remaining], compute_residual=False)
        L_star[remaining] = root
        bind_sub = np.zeros(root.shape, dtype=np.int8)
        bind_sub[status == objective.STATUS_LOWER] = BIND_LOWER
        upper_hit = status == objective.STATUS_UPPER
        bind_sub[upper_hit] = np.where(liquidated[remaining][upper_hit],
                                       BIND_FORCED, BIND_COLLATERAL)
        binding[remaining] = bind_sub
    return L_star, binding, insolvent


def _binding_from_clamp(L_star, target, lower, upper, liquidated, mask,
                        binding=None):
    if binding is None:
        binding = np.zeros(np.shape(L_star), dtype=np.int8)
    tol = 1e-15 * np.maximum(np.abs(upper), 1.0)
    at_lower = mask & (target <= lower)
    at_upper = mask & (target >= upper - tol)
    binding[at_lower] = BIND_LOWER
    binding[at_upper & liquidated] = BIND_FORCED
    binding[at_upper & ~liquidated] = BIND_COLLATERAL
    return binding


# ---------------------------------------------------------------------------
# One transition
# ---------------------------------------------------------------------------

def advance(cur: PathState, z: np.ndarray, decision_model: ReturnModel,
            params: SystemParams,
            spec: QuadratureSpec = ENGINE_QUADRATURE,
            table: "DecisionTable | None" = None) -> tuple[PathState, StepRecord]:
    """One step for every path: price draw, forced liquidation, decision."""
    act = cur.active
    beta, zeta = params.beta, params.zeta
    X = np.where(act, cur.X * z, cur.X)

    breach = act & (cur.L > 0.0) & (cur.Nbar > 0.0) \
        & (cur.Nbar * X < beta * cur.L)
    w_prev = exhaustion_value(cur.L, params)
    wipe = breach & (cur.Nbar * X < w_prev)
    partial = breach & ~wipe

    ell = np.where(partial, (beta * cur.L - cur.Nbar * X) / (beta - 1.0), 0.0)
    supply_after = np.maximum(cur.calL - ell, 1e-300)
    liq_price = np.where(partial,
                         params.alpha * supply_price(supply_after, params),
                         0.0)
    cost_eth = np.where(partial,
                        np.minimum(ell * liq_price / np.where(act, X, 1.0),
                                   cur.Nbar),
                        0.0)
    collateral_value = cur.Nbar * X
    ell_w = np.where(wipe,
                     wipeout_repurchase(cur.calL, collateral_value, params),
                     0.0)
    wipe_price = np.where(wipe & (ell_w > 0.0),
                          collateral_value / np.where(ell_w > 0.0, ell_w, 1.0),
                          0.0)

    L1 = cur.L - ell - ell_w
    calL1 = cur.calL - ell - ell_w
    N1 = cur.N - cost_eth - np.where(wipe, cur.Nbar, 0.0)
    stake1 = np.where(wipe, 0.0, cur.N - cost_eth)
    Y = np.where(partial, cur.N * X - cur.L + ell * (1.0 - liq_price),
                 np.where(wipe, (cur.N - cur.Nbar) * X, cur.N * X - cur.L))
    Y = np.where(act, Y, cur.Y)

    floor_hit = act & ~wipe & (calL1 < params.v_floor)
    deciding = act & ~wipe & ~floor_hit

    L2 = L1.copy()
    binding = np.zeros(L1.shape, dtype=np.int8)
    insolvent = np.zeros(L1.shape, dtype=bool)
    if np.any(deciding):
        d = deciding
        L_dec, bind_dec, insol_dec = decide(
            calL1[d], L1[d], stake1[d], X[d], N1[d], partial[d],
            decision_model, params, spec, table)
        L2[d] = L_dec
        binding[d] = bind_dec
        ins = np.zeros(L1.shape, dtype=bool)
        ins[d] = insol_dec
        insolvent = ins
        L2[insolvent] = L1[insolvent]

    calL2 = L2 + zeta
    Z2 = np.where(act, supply_price(np.maximum(calL2, 1e-300), params), cur.Z)
    flow = np.where(deciding & ~insolvent, (L2 - L1) * Z2 / np.where(act, X, 1.0),
                    0.0)
    N2 = N1 + flow
    if params.collateral_mode is CollateralMode.CONCURRENT:
        stake_next = np.where(wipe, 0.0, N2)
    else:
        stake_next = stake1
    term_new = np.zeros(L1.shape, dtype=np.int8)
    term_new[wipe] = TERM_WIPEOUT
    term_new[insolvent] = TERM_INSOLVENT
    term_new[floor_hit] = TERM_FLOOR

    nxt = PathState(
        t=cur.t + 1,
        X=X,
        L=np.where(act, L2, cur.L),
        calL=np.where(act, calL2, cur.calL),
        N=np.where(act, N2, cur.N),
        Nbar=np.where(act, stake_next, cur.Nbar),
        Z=Z2,
        Y=Y,
        terminated=np.where(act, term_new, cur.terminated).astype(np.int8),
        s1_seen=cur.s1_seen.copy(),
    )
    rec = StepRecord(
        liq_kind=np.where(partial, LIQ_PARTIAL,
                          np.where(wipe, LIQ_WIPEOUT, LIQ_NONE)).astype(np.int8),
        ell=ell + ell_w,
        liq_price=liq_price + wipe_price,
        liq_cost_eth=cost_eth + np.where(wipe, cur.Nbar, 0.0),
        binding=binding,
        newly_terminated=term_new,
    )
    return nxt, rec


# ---------------------------------------------------------------------------
# Stopping-time detectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectorSpec:
    """Node budget for the conditional-expectation integrals."""

    wipe_panels: int = 2
    partial_panels: int = 3
    free_panels: int = 5
    nodes: int = 10
    frequency: int = 1
    method: str = "exact"  # or "table"


def conditional_next_arrays(cur: PathState, model_next: ReturnModel,
                            decision_model: ReturnModel,
                            params: SystemParams,
                            det: DetectorSpec,
                            spec: QuadratureSpec = ENGINE_QUADRATURE,
                            table: "DecisionTable | None" = None,
                            mask=None) -> DetectorValues:
    """Conditional expectations of next-step supply (reciprocal, level) and
    price, integrating the full transition over the return density."""
    n = cur.L.shape[0]
    e_inv = np.full(n, np.nan)
    e_lvl = np.full(n, np.nan)
    e_z = np.full(n, np.nan)
    act = cur.active if mask is None else (cur.active & mask)
    if not np.any(act):
        return DetectorValues(e_inv, e_lvl, e_z)

    idx = np.where(act)[0]
    L = cur.L[idx]
    calL = cur.calL[idx]
    Nbar = cur.Nbar[idx]
    Npos = cur.N[idx]
    X = cur.X[idx]
    beta, zeta = params.beta, params.zeta
    zmin, zmax = model_next.support()
    k = Nbar * X
    zb = beta * L / k
    zc = exhaustion_value(L, params) / k

    segs = []
    lo_w = np.full(idx.shape, zmin)
    hi_w = np.clip(zc, zmin, zmax)
    segs.append(("wipe", lo_w, hi_w, det.wipe_panels))
    lo_p = np.clip(zc, zmin, zmax)
    hi_p = np.clip(zb, zmin, zmax)
    segs.append(("partial", lo_p, hi_p, det.partial_panels))
    lo_f = np.clip(zb, zmin, zmax)
    hi_f = np.full(idx.shape, zmax)
    segs.append(("free", lo_f, np.maximum(hi_f, lo_f), det.free_panels))

    inv_acc = np.zeros(idx.shape)
    lvl_acc = np.zeros(idx.shape)
    z_acc = np.zeros(idx.shape)
    mass_acc = np.zeros(idx.shape)

    for kind, lo, hi, panels in segs:
        hi = np.maximum(hi, lo)
        if not np.any(hi > lo):
            continue
        z, wt = panel_rule(lo, hi, panels, det.nodes, 1.0)
        g = model_next.pdf(z)
        gw = g * wt
        flat = z.shape[0] * z.shape[1]
        z_f = z.reshape(flat)
        rep = lambda a: np.repeat(a, z.shape[1])
        X_new = rep(X) * z_f
        if kind == "wipe":
            value = rep(Nbar) * X_new
            ell_w = wipeout_repurchase(rep(calL), value, params)
            calL_next = rep(calL) - ell_w
        else:
            if kind == "partial":
                ell = (beta * rep(L) - rep(Nbar) * X_new) / (beta - 1.0)
                ell = np.maximum(ell, 0.0)
                price = params.alpha * supply_price(rep(calL) - ell, params)
                cost = np.minimum(ell * price / X_new, rep(Nbar))
                L1 = rep(L) - ell
                calL1 = rep(calL) - ell
                stake1 = rep(Npos) - cost
                n_pos = rep(Npos) - cost
                liquidated = np.ones(flat, dtype=bool)
            else:
                L1 = rep(L)
                calL1 = rep(calL)
                stake1 = rep(Npos)
                n_pos = rep(Npos)
                liquidated = np.zeros(flat, dtype=bool)
            floor_bad = calL1 < params.v_floor
            L_dec, _, insol = decide(calL1, L1, stake1, X_new, n_pos,
                                     liquidated, decision_model, params,
                                     spec, table)
            L_dec = np.where(floor_bad | insol, L1, L_dec)
            calL_next = L_dec + zeta
        calL_next = calL_next.reshape(z.shape)
        inv_acc += np.sum(gw / calL_next, axis=-1)
        lvl_acc += np.sum(gw * calL_next, axis=-1)
        if params.demand_mode is DemandMode.UNIT_ELASTIC:
            pass  # price is demand / supply; use inv_acc at the end
        else:
            z_acc += np.sum(gw * supply_price(calL_next, params), axis=-1)
        mass_acc += np.sum(gw, axis=-1)

    # Normalize by captured mass so truncation does not bias the detectors.
    mass_acc = np.maximum(mass_acc, 1e-300)
    inv_acc /= mass_acc
    lvl_acc /= mass_acc
    if params.demand_mode is DemandMode.UNIT_ELASTIC:
        z_val = params.demand * inv_acc
    elif params.demand_mode is DemandMode.PERFECTLY_ELASTIC:
        z_val = np.ones_like(inv_acc)
    else:
        z_val = z_acc / mass_acc
    # Jensen: E[1/S] >= 1/E[S] up to integration error.
    jensen_slack = inv_acc - 1.0 / lvl_acc
    bad = jensen_slack < -1e-9 * inv_acc
    if np.any(bad):
        inv_acc = np.where(bad, 1.0 / lvl_acc, inv_acc)
    e_inv[idx] = inv_acc
    e_lvl[idx] = lvl_acc
    e_z[idx] = z_val
    return DetectorValues(e_inv, e_lvl, e_z)


def detect_stops_arrays(cur: PathState, det_vals: DetectorValues,
                        m_levels: tuple[float, ...]):
    """Stop triggers at the current step.

    Returns dict label -> bool array; updates cur.s1_seen in place so the
    second-leg trigger respects its ordering.
    """
    act = cur.active
    have = act & np.isfinite(det_vals.e_inv_L)
    tau = have & (det_vals.e_inv_L > 1.0 / cur.calL)
    s1 = have & (det_vals.e_L < cur.calL)
    s2 = have & cur.s1_seen & (det_vals.e_L >= cur.calL)
    # First-leg deleveraging implies the reciprocal-supply trigger.
    tau = tau | s1
    out = {"tau": tau, "s1": s1, "s2": s2}
    for m in m_levels:
        out[f"tm:{m:g}"] = act & (cur.Z > m)
    cur.s1_seen |= s1
    return out


# ---------------------------------------------------------------------------
# Reduced-coordinate decision table
# ---------------------------------------------------------------------------

class DecisionTable:
    """Interpolated unconstrained supply decision on rescaled coordinates.

    The unit-elastic lagged single-speculator decision scales with the
    system: h(prev supply, demand, collateral value) / demand depends only
    on (prev supply / demand, collateral value / demand) when the outside
    supply is zero. The table stores the unconstrained interior optimum on
    a log grid of those two ratios; caps and floors are applied per query,
    which is exact for a concave objective. Queries with an empty
    liquidation zone bypass the table via the closed form.
    """

    def __init__(self, model: ReturnModel, params: SystemParams,
                 a_range: tuple[float, float], k_range: tuple[float, float],
                 n_a: int = 140, n_k: int = 160,
                 spec: QuadratureSpec = ENGINE_QUADRATURE):
        if (params.demand_mode is not DemandMode.UNIT_ELASTIC
                or params.collateral_mode is not CollateralMode.LAGGED
                or params.zeta != 0.0
                or params.speculator_mode is not SpeculatorMode.SINGLE):
            raise ParameterError(
                "decision table requires unit-elastic demand, lagged "
                "collateral, zero outside supply, single speculator")
        self.model = model
        self.params = params
        self.spec = spec
        pad = 1.12
        self.log_a = np.linspace(np.log(a_range[0] / pad),
                                 np.log(a_range[1] * pad), n_a)
        self.log_k = np.linspace(np.log(k_range[0] / pad),
                                 np.log(k_range[1] * pad), n_k)
        D = params.demand
        A, K = np.meshgrid(np.exp(self.log_a), np.exp(self.log_k),
                           indexing="ij")
        st = DecisionState(prev_calL=(A * D).ravel(),
                           prev_L=(A * D).ravel(),
                           stake=(K * D).ravel(),
                           X=np.ones(A.size))
        mean_r = model.mean()
        lower = _floor_L(st.prev_calL, params)
        # Anchor the bracket at the liquidation-free closed form and expand
        # outward to the first sign change: the objective loses concavity far
        # out in the assumption-violating region (repurchase price below 1),
        # where a spurious stationary point would otherwise capture the
        # unanchored search.
        anchor = np.sqrt(D * st.prev_calL * mean_r)
        upper = 1.3 * anchor
        for _ in range(40):
            f_hi = objective.foc(upper, st, model, params, spec)
            grow = f_hi > 0.0
            if not np.any(grow):
                break
            upper = np.where(grow, upper * 1.3, upper)
        root, status, _ = objective.solve_foc(st, model, params, lower,
                                              upper, spec, warm=anchor,
                                              compute_residual=False)
        self._anchor_coeff = float(D * np.sqrt(mean_r))
        ratio = (root / anchor).reshape(A.shape)
        from scipy.interpolate import RectBivariateSpline
        self._spline = RectBivariateSpline(self.log_a, self.log_k,
                                           np.log(ratio), kx=3, ky=3, s=0)
        self._mean_r = mean_r

    def in_range(self, a, k) -> np.ndarray:
        la, lk = np.log(a), np.log(k)
        return (la >= self.log_a[0]) & (la <= self.log_a[-1]) \
            & (lk >= self.log_k[0]) & (lk <= self.log_k[-1])

    def _interp(self, a, k):
        """Unconstrained optimum over demand, via the cubic spline of the
        log-ratio to the liquidation-free closed form."""
        la = np.clip(np.log(a), self.log_a[0], self.log_a[-1])
        lk = np.clip(np.log(k), self.log_k[0], self.log_k[-1])
        log_ratio = self._spline(la, lk, grid=False)
        return np.exp(log_ratio) * np.sqrt(a) * self._anchor_coeff \
            / self.params.demand

    def solve(self, st: DecisionState, lower, upper, params: SystemParams):
        """Clamped decision via interpolation with exact-solve spill."""
        D = params.demand
        a = st.prev_calL / D
        k = st.stake * st.X / D
        mean_r = self._mean_r
        L_closed = np.sqrt(D * st.prev_calL * mean_r)
        zmin = self.model.support()[0]
        closed = params.beta * L_closed <= zmin * st.stake * st.X
        usable = self.in_range(a, k) & ~closed
        target = np.where(closed, L_closed, np.nan)
        if np.any(usable):
            t = self._interp(a[usable], k[usable]) * D
            tv = target.copy()
            tv[usable] = t
            target = tv
        spill = ~closed & ~usable
        if np.any(spill):
            sub = st.subset(spill)
            root, _, _ = objective.solve_foc(
                sub, self.model, params,
                lower[spill] if np.ndim(lower) else lower,
                upper[spill] if np.ndim(upper) else upper, self.spec,
                warm=L_closed[spill], compute_residual=False)
            tv = target.copy()
            tv[spill] = root
            target = tv
        L_star = np.clip(target, lower, upper)
        status = np.zeros(L_star.shape, dtype=np.int8)
        status[target <= lower] = objective.STATUS_LOWER
        status[target >= upper] = objective.STATUS_UPPER
        return L_star, status
