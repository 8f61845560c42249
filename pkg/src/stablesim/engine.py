"""Trajectory simulation, ensembles, and stopping-time detection.

The scalar API (step / simulate / conditional_next / detect_stops) and the
ensemble runner share the array routines in `ensemble`, so a one-path run
is bit-identical to the corresponding ensemble column. Stops are recorded,
never enforced: simulation continues past every trigger and the stopped
processes are reconstructed at analysis time, so one ensemble serves all
stop definitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ensemble as ens
from .ensemble import (
    BIND_COLLATERAL,
    BIND_FORCED,
    BIND_INTERIOR,
    BIND_LOWER,
    DecisionTable,
    DetectorSpec,
    ENGINE_QUADRATURE,
    LIQ_NONE,
    LIQ_PARTIAL,
    LIQ_WIPEOUT,
    PathState,
    TERM_ACTIVE,
    TERM_FLOOR,
    TERM_INSOLVENT,
    TERM_WIPEOUT,
)
from .model import (
    LiquidationKind,
    LiquidationOutcome,
    NO_LIQUIDATION,
    ParameterError,
    PreconditionError,
    SystemParams,
    SystemState,
)
from .numerics import QuadratureSpec
from .returns import ReturnModel, ReturnSchedule, stationary

_LIQ_KINDS = {LIQ_NONE: LiquidationKind.NONE,
              LIQ_PARTIAL: LiquidationKind.PARTIAL,
              LIQ_WIPEOUT: LiquidationKind.WIPEOUT}


@dataclass(frozen=True)
class ConditionalExpectations:
    """One-step-ahead conditional expectations driving the detectors."""

    e_inv_L: float
    e_L: float
    e_Z: float


@dataclass
class StepEvents:
    liquidation: LiquidationOutcome
    constraint_binding: bool
    stops_triggered: set[str] = field(default_factory=set)
    cond: ConditionalExpectations | None = None
    terminal: str | None = None


@dataclass
class Trajectory:
    states: list[SystemState]
    events: list[StepEvents]
    seed: object
    params: SystemParams

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.states], dtype=float)


TERMINAL_LABELS = {TERM_WIPEOUT: "wipeout", TERM_INSOLVENT: "insolvency",
                   TERM_FLOOR: "supply_floor"}


def _events_from_record(rec: ens.StepRecord, i: int,
                        cond: ConditionalExpectations | None,
                        stops: set[str]) -> StepEvents:
    kind = _LIQ_KINDS[int(rec.liq_kind[i])]
    if kind is LiquidationKind.NONE:
        liq = NO_LIQUIDATION
    else:
        liq = LiquidationOutcome(float(rec.ell[i]), float(rec.liq_price[i]),
                                 float(rec.liq_cost_eth[i]), kind)
    term = TERMINAL_LABELS.get(int(rec.newly_terminated[i]))
    return StepEvents(
        liquidation=liq,
        constraint_binding=int(rec.binding[i]) != BIND_INTERIOR,
        stops_triggered=stops,
        cond=cond,
        terminal=term,
    )


def step(state: SystemState, model: ReturnModel, params: SystemParams,
         rng: np.random.Generator,
         decision_model: ReturnModel | None = None,
         spec: QuadratureSpec = ENGINE_QUADRATURE
         ) -> tuple[SystemState, StepEvents]:
    """Advance one step: draw the return, liquidate if breached, re-solve
    the supply decision, and mark the state to market."""
    if state.wiped_out:
        raise PreconditionError("speculator is wiped out")
    z = float(model.sample(rng))
    cur = PathState.from_state(state, 1)
    nxt, rec = ens.advance(cur, np.array([z]),
                           decision_model or model, params, spec)
    return _to_state(nxt, 0), _events_from_record(rec, 0, None, set())


def _to_state(ps: PathState, i: int) -> SystemState:
    return SystemState(
        t=ps.t, X=float(ps.X[i]), L=float(ps.L[i]), calL=float(ps.calL[i]),
        N=float(ps.N[i]), Nbar=float(ps.Nbar[i]), Z=float(ps.Z[i]),
        Y=float(ps.Y[i]), wiped_out=int(ps.terminated[i]) == TERM_WIPEOUT)


def conditional_next(state: SystemState, model: ReturnModel,
                     params: SystemParams,
                     det: DetectorSpec = DetectorSpec(),
                     decision_model: ReturnModel | None = None,
                     spec: QuadratureSpec = ENGINE_QUADRATURE
                     ) -> ConditionalExpectations:
    """Expected reciprocal supply, supply, and price one step ahead,
    integrating the full transition (liquidation plus re-decision) over the
    return density."""
    if state.wiped_out:
        raise PreconditionError("speculator is wiped out")
    cur = PathState.from_state(state, 1)
    vals = ens.conditional_next_arrays(cur, model, decision_model or model,
                                       params, det, spec)
    return ConditionalExpectations(float(vals.e_inv_L[0]),
                                   float(vals.e_L[0]), float(vals.e_Z[0]))


def detect_stops(state: SystemState, cond: ConditionalExpectations,
                 m_levels: tuple[float, ...] = (1.0,),
                 s1_seen: bool = False) -> set[str]:
    """Stop conditions triggered at this step (strict inequalities)."""
    cur = PathState.from_state(state, 1)
    cur.s1_seen[:] = s1_seen
    det = ens.DetectorValues(np.array([cond.e_inv_L]),
                             np.array([cond.e_L]), np.array([cond.e_Z]))
    flags = ens.detect_stops_arrays(cur, det, tuple(m_levels))
    return {label for label, mask in flags.items() if bool(mask[0])}


def _draw_matrix(schedule: ReturnSchedule, horizon: int,
                 seqs) -> np.ndarray:
    """(paths x horizon) return draws; column t-1 holds the step-t return.

    Each path owns a spawned generator and samples stage by stage, which
    reproduces one-at-a-time sampling draw for draw.
    """
    n = len(seqs)
    z = np.empty((n, horizon))
    spans = []
    start = 1
    while start <= horizon:
        model = schedule.model_for(start)
        end = start
        while end + 1 <= horizon and schedule.model_for(end + 1) is model:
            end += 1
        spans.append((start, end, model))
        start = end + 1
    for i, seq in enumerate(seqs):
        gen = np.random.Generator(np.random.PCG64(seq))
        for lo, hi, model in spans:
            z[i, lo - 1:hi] = model.sample(gen, hi - lo + 1)
    return z


@dataclass
class EnsembleResult:
    """Column-major history of an ensemble run (time x path arrays)."""

    params: SystemParams
    seed: object
    horizon: int
    n_paths: int
    m_levels: tuple[float, ...]
    X: np.ndarray
    L: np.ndarray
    calL: np.ndarray
    N: np.ndarray
    Nbar: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    liq_kind: np.ndarray
    ell: np.ndarray
    liq_price: np.ndarray
    liq_cost: np.ndarray
    binding: np.ndarray
    terminated: np.ndarray
    e_inv_L: np.ndarray
    e_L: np.ndarray
    e_Z: np.ndarray
    stop_first: dict
    initial_e_inv_L: float
    initial_condition_ok: bool

    def active_before(self, t: int) -> np.ndarray:
        """Paths not yet terminated when entering step t."""
        return self.terminated[t - 1] == TERM_ACTIVE

    def stopped_at(self, labels) -> np.ndarray:
        """Elementwise-min first-trigger step across stop labels (-1 none)."""
        out = np.full(self.n_paths, -1, dtype=np.int64)
        for label in labels:
            s = self.stop_first[label]
            have = s >= 0
            out = np.where(have & ((out < 0) | (s < out)), s, out)
        return out


def path_seed_sequences(master_seed: int, n_paths: int):
    return np.random.SeedSequence(master_seed).spawn(n_paths)


def run_ensemble(initial: SystemState, schedule: ReturnSchedule | ReturnModel,
                 params: SystemParams, horizon: int, n_paths: int,
                 master_seed: int,
                 detector: DetectorSpec | None = DetectorSpec(),
                 m_levels: tuple[float, ...] = (1.0,),
                 spec: QuadratureSpec = ENGINE_QUADRATURE,
                 seqs=None) -> EnsembleResult:
    """Simulate n_paths independent trajectories with per-path seed streams.

    Detector expectations are evaluated every `detector.frequency` steps
    (always at step 0, verifying the initial-condition requirement that the
    expected reciprocal supply does not rise). Stops are recorded, not
    enforced.
    """
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    if n_paths < 1:
        raise ParameterError("need at least one path")
    if isinstance(schedule, ReturnModel):
        schedule = stationary(schedule)
    if seqs is None:
        seqs = path_seed_sequences(master_seed, n_paths)
    z = _draw_matrix(schedule, horizon, seqs)

    shape = (horizon + 1, n_paths)
    cols = {name: np.zeros(shape) for name in
            ("X", "L", "calL", "N", "Nbar", "Z", "Y", "ell", "liq_price",
             "liq_cost")}
    liq_kind = np.zeros(shape, dtype=np.int8)
    binding = np.zeros(shape, dtype=np.int8)
    terminated = np.zeros(shape, dtype=np.int8)
    e_inv = np.full(shape, np.nan)
    e_lvl = np.full(shape, np.nan)
    e_z = np.full(shape, np.nan)
    stop_first = {"tau": np.full(n_paths, -1, dtype=np.int64),
                  "s1": np.full(n_paths, -1, dtype=np.int64),
                  "s2": np.full(n_paths, -1, dtype=np.int64)}
    for m in m_levels:
        stop_first[f"tm:{m:g}"] = np.full(n_paths, -1, dtype=np.int64)

    cur = PathState.from_state(initial, n_paths)
    table = None
    if detector is not None and detector.method == "table":
        table = _build_table(cur, schedule, params, spec)

    def snapshot(t, rec=None, det_vals=None):
        for name in ("X", "L", "calL", "N", "Nbar", "Z", "Y"):
            cols[name][t] = getattr(cur, name)
        terminated[t] = cur.terminated
        if rec is not None:
            liq_kind[t] = rec.liq_kind
            cols["ell"][t] = rec.ell
            cols["liq_price"][t] = rec.liq_price
            cols["liq_cost"][t] = rec.liq_cost_eth
            binding[t] = rec.binding
        if det_vals is not None:
            e_inv[t] = det_vals.e_inv_L
            e_lvl[t] = det_vals.e_L
            e_z[t] = det_vals.e_Z

    def run_detector(t):
        if detector is None:
            return None
        if t % detector.frequency != 0 and t != 0:
            return None
        model_next = schedule.model_for(t + 1)
        model_after = schedule.model_for(t + 2)
        return ens.conditional_next_arrays(cur, model_next, model_after,
                                           params, detector, spec, table)

    def mark_stops(t, det_vals):
        if det_vals is None:
            vals = ens.DetectorValues(np.full(n_paths, np.nan),
                                      np.full(n_paths, np.nan),
                                      np.full(n_paths, np.nan))
        else:
            vals = det_vals
        flags = ens.detect_stops_arrays(cur, vals, tuple(m_levels))
        for label, mask in flags.items():
            first = stop_first[label]
            stop_first[label] = np.where(mask & (first < 0), t, first)

    det0 = run_detector(0)
    snapshot(0, det_vals=det0)
    mark_stops(0, det0)
    if det0 is not None and np.isfinite(det0.e_inv_L[0]):
        init_e_inv = float(det0.e_inv_L[0])
        init_ok = init_e_inv <= 1.0 / initial.calL * (1.0 + 1e-12)
    else:
        init_e_inv, init_ok = float("nan"), True

    for t in range(1, horizon + 1):
        decision_model = schedule.model_for(t + 1)
        cur, rec = ens.advance(cur, z[:, t - 1], decision_model, params,
                               spec, table=None)
        det_vals = run_detector(t)
        snapshot(t, rec, det_vals)
        mark_stops(t, det_vals)

    return EnsembleResult(
        params=params, seed=master_seed, horizon=horizon, n_paths=n_paths,
        m_levels=tuple(m_levels), X=cols["X"], L=cols["L"], calL=cols["calL"],
        N=cols["N"], Nbar=cols["Nbar"], Z=cols["Z"], Y=cols["Y"],
        liq_kind=liq_kind, ell=cols["ell"], liq_price=cols["liq_price"],
        liq_cost=cols["liq_cost"], binding=binding, terminated=terminated, e_inv_L=e_inv, e_L=e_lvl,
        e_Z=e_z, stop_first=stop_first, initial_e_inv_L=init_e_inv,
        initial_condition_ok=init_ok)


def _build_table(cur: PathState, schedule: ReturnSchedule,
                 params: SystemParams, spec: QuadratureSpec) -> DecisionTable:
    if not schedule.is_stationary():
        raise ParameterError(
            "table detector supports stationary return schedules")
    model = schedule.model_for(0)
    zmin, zmax = model.support()
    a0 = float(np.min(cur.calL)) / params.demand
    k0 = float(np.min(cur.Nbar * cur.X)) / params.demand
    a1 = float(np.max(cur.calL)) / params.demand
    k1 = float(np.max(cur.Nbar * cur.X)) / params.demand
    r = max(model.mean(), 1.0)
    spread = 4.0
    a_range = (a0 / spread, max(a1 * spread, params.kappa * r * 1.5))
    k_range = (k0 * zmin / spread, k1 * zmax * spread)
    return DecisionTable(model, params, a_range, k_range, spec=spec)


def simulate(initial: SystemState, schedule: ReturnSchedule | ReturnModel,
             params: SystemParams, horizon: int, seed: int | None = None,
             detector: DetectorSpec | None = DetectorSpec(),
             m_levels: tuple[float, ...] = (1.0,),
             spec: QuadratureSpec = ENGINE_QUADRATURE,
             seed_seq=None) -> Trajectory:
    """One trajectory; identical seeds give bit-identical trajectories, and
    seed_seq=path_seed_sequences(master, n)[i] reproduces ensemble path i."""
    if seed_seq is None:
        if seed is None:
            raise ParameterError("need a seed")
        seqs = path_seed_sequences(seed, 1)
    else:
        seqs = [seed_seq]
    res = run_ensemble(initial, schedule, params, horizon, 1,
                       master_seed=seed if seed is not None else 0,
                       detector=detector, m_levels=m_levels, spec=spec,
                       seqs=seqs)
    states = []
    events = []
    for t in range(horizon + 1):
        states.append(SystemState(
            t=t, X=float(res.X[t, 0]), L=float(res.L[t, 0]),
            calL=float(res.calL[t, 0]), N=float(res.N[t, 0]),
            Nbar=float(res.Nbar[t, 0]), Z=float(res.Z[t, 0]),
            Y=float(res.Y[t, 0]),
            wiped_out=int(res.terminated[t, 0]) == TERM_WIPEOUT))
        kind = _LIQ_KINDS[int(res.liq_kind[t, 0])]
        if kind is LiquidationKind.NONE:
            liq = NO_LIQUIDATION
        else:
            liq = LiquidationOutcome(
                float(res.ell[t, 0]), float(res.liq_price[t, 0]),
                float(res.liq_cost[t, 0]), kind)
        cond = None
        if np.isfinite(res.e_inv_L[t, 0]):
            cond = ConditionalExpectations(float(res.e_inv_L[t, 0]),
                                           float(res.e_L[t, 0]),
                                           float(res.e_Z[t, 0]))
        stops = {label for label, first in res.stop_first.items()
                 if first[0] == t}
        term_code = int(res.terminated[t, 0])
        prev_code = int(res.terminated[t - 1, 0]) if t else TERM_ACTIVE
        events.append(StepEvents(
            liquidation=liq,
            constraint_binding=int(res.binding[t, 0]) != BIND_INTERIOR,
            stops_triggered=stops, cond=cond,
            terminal=TERMINAL_LABELS.get(term_code)
            if term_code != TERM_ACTIVE and term_code != prev_code else None))
    return Trajectory(states=states, events=events,
                      seed=seed if seed_seq is None else seed_seq,
                      params=params)
