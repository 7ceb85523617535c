"""
Nonsmooth BFGS engine.

Two modes share one iteration: unconstrained minimization (optionally
stopped by a predicate) and an inequality-constrained mode that runs BFGS on
the exact penalty mu*f + sum(max(c_i, 0)) with steering of mu. Trial points
with an infinite objective are rejected by the weak Wolfe line search, so
accepted iterates always have finite values.
"""
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import SolverOptions
from .exceptions import NumericalError

logger = logging.getLogger(__name__)


class SolveStatus(str, Enum):
    STATIONARITY_SATISFIED = "StationaritySatisfied"
    MAX_ITERATIONS = "MaxIterations"
    LINE_SEARCH_FAILURE = "LineSearchFailure"
    INFEASIBLE_ITERATE = "InfeasibleIterate"
    FEASIBLE_FOUND = "FeasibleFound"
    TIME_LIMIT = "TimeLimit"


@dataclass(frozen=True, eq=False)
class OraclePoint:
    """
    One oracle evaluation: objective f with gradient g (None when f is
    infinite), constraint values c and their gradients J (one row each).
    info carries caller-specific data (for example closed-loop abscissae).
    """
    x: np.ndarray
    f: float
    g: Optional[np.ndarray] = None
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    J: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    info: Any = None

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.f)) and self.g is not None

    @property
    def violation(self) -> float:
        return float(np.sum(np.maximum(self.c, 0.0))) if self.c.size else 0.0

    def feasible(self, tol: float = 0.0) -> bool:
        """c < 0 componentwise, or c <= tol when tol > 0."""
        if not self.c.size:
            return True
        return bool(np.all(self.c <= tol)) if tol > 0.0 else bool(np.all(self.c < 0.0))

    def penalty(self, mu: float) -> float:
        return mu * self.f + self.violation

    def penalty_gradient(self, mu: float) -> np.ndarray:
        grad = mu * self.g
        if self.c.size:
            violated = self.c > 0.0
            if np.any(violated):
                grad = grad + self.J[violated].sum(axis=0)
        return grad


Oracle = Callable[[np.ndarray], OraclePoint]


@dataclass
class SolverState:
    Hinv: np.ndarray
    mu: float = 1.0
    history: List[OraclePoint] = field(default_factory=list)
    iterations: int = 0
    evaluations: int = 0
    skipped_updates: int = 0


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    x_final: np.ndarray
    f_final: float
    status: SolveStatus
    stationarity_measure: float
    best_feasible: Optional[Tuple[np.ndarray, float]]
    iterations: int
    evaluations: int
    mu: float
    skipped_updates: int
    point: Optional[OraclePoint] = None


@dataclass(frozen=True, eq=False)
class LineSearchResult:
    t: float
    value: float
    slope: Optional[float]
    payload: Any
    success: bool
    evaluations: int


def weak_wolfe_linesearch(
    phi: Callable[[float], Tuple[float, Optional[float], Any]],
    t0: float = 1.0,
    phi0: Optional[Tuple[float, float]] = None,
    opts: Optional[SolverOptions] = None,
) -> LineSearchResult:
    """
    Bracketing weak Wolfe line search for nonsmooth functions.

    phi(t) returns (value, slope, payload). A trial with an infinite value
    fails the Armijo test and contracts the bracket. On failure the result
    carries the best Armijo point seen, if any.
    """
    opts = opts or SolverOptions()
    if phi0 is None:
        f0, d0, _ = phi(0.0)
    else:
        f0, d0 = phi0
    if not np.isfinite(f0) or d0 is None or d0 >= 0.0:
        return LineSearchResult(0.0, f0, d0, None, False, 0)

    lo, hi = 0.0, np.inf
    t = float(t0)
    bisections = expansions = evaluations = 0
    armijo_best: Optional[Tuple[float, float, Optional[float], Any]] = None
    while True:
        value, slope, payload = phi(t)
        evaluations += 1
        if not np.isfinite(value) or value > f0 + opts.c1 * t * d0:
            hi = t
        else:
            if armijo_best is None or value < armijo_best[1]:
                armijo_best = (t, value, slope, payload)
            if slope is not None and slope < opts.c2 * d0:
                lo = t
            else:
                return LineSearchResult(t, value, slope, payload, True, evaluations)
        if hi < np.inf:
            if bisections >= opts.max_bisections:
                break
            bisections += 1
            t = 0.5 * (lo + hi)
        else:
            if expansions >= opts.max_expansions:
                break
            expansions += 1
            t = 2.0 * lo
    if armijo_best is not None:
        t, value, slope, payload = armijo_best
        return LineSearchResult(t, value, slope, payload, False, evaluations)
    return LineSearchResult(0.0, f0, d0, None, False, evaluations)


def bfgs_update(state: SolverState, s: np.ndarray, yv: np.ndarray,
                guard: float = 1e-10) -> SolverState:
    """
    Inverse-Hessian BFGS update, skipped when s^T y <= guard*|s||y|.
    """
    sty = float(s @ yv)
    if sty <= guard * np.linalg.norm(s) * np.linalg.norm(yv) or sty <= 0.0:
        state.skipped_updates += 1
        logger.debug("BFGS update skipped (s'y=%.3e)", sty)
        return state
    rho = 1.0 / sty
    H = state.Hinv
    Hy = H @ yv
    H = (H - rho * (np.outer(s, Hy) + np.outer(Hy, s))
         + (rho * rho * float(yv @ Hy) + rho) * np.outer(s, s))
    state.Hinv = 0.5 * (H + H.T)
    return state


def _min_norm_in_hull(P: np.ndarray, max_iter: int = 500) -> np.ndarray:
    """
    Minimum-norm point of the convex hull of the rows of P (Wolfe's active-set method).
    Returns the convex weights.
    """
    m = P.shape[0]
    Q = P @ P.T
    scale = max(1.0, float(np.max(np.diag(Q))))
    eps = 1e-12
    start = int(np.argmin(np.diag(Q)))
    active = [start]
    w = np.array([1.0])
    for _ in range(max_iter):
        x = w @ P[active]
        j = int(np.argmin(P @ x))
        if x @ x - P[j] @ x <= 1e-15 * scale or j in active:
            break
        active.append(j)
        w = np.append(w, 0.0)
        for _ in range(max_iter):
            k = len(active)
            Qa = Q[np.ix_(active, active)]
            kkt = np.block([[Qa, np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
            rhs = np.concatenate([np.zeros(k), [1.0]])
            v = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
            if np.all(v > eps):
                w = v
                break
            mask = v <= eps
            denom = w - v
            # weights already at zero with a zero step; drop them without a ratio
            stuck = mask & (denom <= eps)
            movable = mask & ~stuck
            theta = min(1.0, float(np.min(w[movable] / denom[movable]))) if np.any(movable) else 0.0
            w = w + theta * (v - w)
            w[stuck] = 0.0
            keep = w > eps
            if not np.any(keep):
                break
            active = [a for a, kp in zip(active, keep) if kp]
            w = w[keep]
            w = w / w.sum()
    weights = np.zeros(m)
    weights[active] = w
    return weights


def _hull_vertices(point: OraclePoint, mu: float, active_tol: float) -> List[np.ndarray]:
    base = mu * point.g
    if not point.c.size:
        return [base]
    active = np.flatnonzero(point.c >= -active_tol)
    vertices = []
    for mask in range(1 << active.size):
        v = base.copy()
        for bit, j in enumerate(active):
            if mask >> bit & 1:
                v = v + point.J[j]
        vertices.append(v)
    return vertices


def stationarity_measure(history: Sequence[OraclePoint], mu: float = 1.0,
                         active_tol: float = 1e-6) -> float:
    """
    Norm of the minimum-norm element of the convex hull of
    {mu*g_k + J_k^T lambda_k : lambda_k in [0, 1]} over the history; each
    point contributes the vertices of its multiplier box for its active or
    violated constraints.
    """
    vertices = [v for p in history if p.g is not None for v in _hull_vertices(p, mu, active_tol)]
    if not vertices:
        return float("inf")
    P = np.vstack(vertices)
    w = _min_norm_in_hull(P)
    return float(np.linalg.norm(w @ P))


def _initial_hinv(g: np.ndarray) -> np.ndarray:
    gnorm = float(np.linalg.norm(g))
    scale = 1.0 / gnorm if gnorm > 0.0 else 1.0
    return scale * np.eye(g.size)


def _descent(state: SolverState, point: OraclePoint, opts: SolverOptions) -> np.ndarray:
    """
    Search direction for the penalty function; reduces mu while the
    direction's predicted violation reduction lags the feasibility direction's.
    """
    d = -state.Hinv @ point.penalty_gradient(state.mu)
    if not point.c.size or point.violation <= 0.0:
        return d
    violated = point.c > 0.0
    d_feas = -state.Hinv @ point.J[violated].sum(axis=0)

    def predicted(direction):
        linear = np.maximum(point.c + point.J @ direction, 0.0).sum()
        return point.violation - linear

    target = predicted(d_feas)
    while predicted(d) < opts.steering_ratio * target and state.mu > opts.mu_min:
        state.mu = max(state.mu * opts.mu_factor, opts.mu_min)
        d = -state.Hinv @ point.penalty_gradient(state.mu)
        logger.debug("steering: mu reduced to %.3e", state.mu)
    return d


def _nearby(history: List[OraclePoint], x: np.ndarray, radius: float) -> List[OraclePoint]:
    return [p for p in history if np.linalg.norm(p.x - x) <= radius]


def _run(
    oracle: Oracle,
    x0: np.ndarray,
    opts: SolverOptions,
    constrained: bool,
    stop_predicate: Optional[Callable[[OraclePoint], bool]],
    on_iterate: Optional[Callable[[int, OraclePoint], None]],
) -> SolveOutcome:
    started = time.perf_counter()
    x0 = np.asarray(x0, dtype=float).copy()
    point = oracle(x0)
    if not point.finite:
        raise NumericalError("the starting point must have a finite objective value")
    state = SolverState(Hinv=_initial_hinv(point.penalty_gradient(opts.mu0)), mu=opts.mu0,
                        history=[point], evaluations=1)
    best_feasible = (point.x.copy(), point.f) if constrained and point.feasible(opts.feasibility_tol) else None

    def outcome(status: SolveStatus, measure: float) -> SolveOutcome:
        return SolveOutcome(
            x_final=point.x.copy(), f_final=point.f, status=status,
            stationarity_measure=measure, best_feasible=best_feasible,
            iterations=state.iterations, evaluations=state.evaluations,
            mu=state.mu, skipped_updates=state.skipped_updates, point=point,
        )

    if on_iterate is not None:
        on_iterate(0, point)
    if stop_predicate is not None and stop_predicate(point):
        return outcome(SolveStatus.FEASIBLE_FOUND, float("nan"))

    measure = float("inf")
    while True:
        nearby = _nearby(state.history, point.x, opts.eval_dist)
        measure = stationarity_measure(nearby, state.mu, opts.active_tol)
        if measure <= opts.stat_tol and point.feasible(opts.feasibility_tol):
            return outcome(SolveStatus.STATIONARITY_SATISFIED, measure)
        if state.iterations >= opts.maxit:
            return outcome(SolveStatus.MAX_ITERATIONS, measure)
        if opts.time_limit is not None and time.perf_counter() - started >= opts.time_limit:
            logger.info("time limit of %.3g s reached after %d iterations", opts.time_limit, state.iterations)
            return outcome(SolveStatus.TIME_LIMIT, measure)

        d = _descent(state, point, opts)
        grad = point.penalty_gradient(state.mu)
        slope0 = float(grad @ d)
        if slope0 >= 0.0:
            # Hinv lost positive definiteness numerically; restart from a scaled identity.
            state.Hinv = _initial_hinv(grad)
            d = -state.Hinv @ grad
            slope0 = float(grad @ d)
            if slope0 >= 0.0:
                return outcome(SolveStatus.STATIONARITY_SATISFIED, measure)

        mu = state.mu

        def phi(t: float):
            trial = oracle(point.x + t * d)
            if not trial.finite:
                return float("inf"), None, trial
            return trial.penalty(mu), float(trial.penalty_gradient(mu) @ d), trial

        ls = weak_wolfe_linesearch(phi, 1.0, (point.penalty(mu), slope0), opts)
        state.evaluations += ls.evaluations
        if ls.payload is None:
            logger.debug("line search failed without an acceptable point")
            return outcome(SolveStatus.LINE_SEARCH_FAILURE, measure)

        new = ls.payload
        s = new.x - point.x
        yv = new.penalty_gradient(mu) - grad
        bfgs_update(state, s, yv, opts.curvature_guard)
        point = new
        state.iterations += 1
        state.history.append(point)
        if len(state.history) > opts.history:
            state.history.pop(0)
        if on_iterate is not None:
            on_iterate(state.iterations, point)
        logger.debug("iter %d: f=%.10g violation=%.3e mu=%.3e t=%.3e",
                     state.iterations, point.f, point.violation, state.mu, ls.t)

        if constrained:
            if point.feasible(opts.feasibility_tol):
                if best_feasible is None or point.f < best_feasible[1]:
                    best_feasible = (point.x.copy(), point.f)
            elif not opts.allow_infeasible:
                return outcome(SolveStatus.INFEASIBLE_ITERATE, measure)
        if stop_predicate is not None and stop_predicate(point):
            return outcome(SolveStatus.FEASIBLE_FOUND, measure)
        if not ls.success:
            return outcome(SolveStatus.LINE_SEARCH_FAILURE, measure)


def minimize_unconstrained(
    oracle: Oracle,
    x0: np.ndarray,
    opts: Optional[SolverOptions] = None,
    stop_predicate: Optional[Callable[[OraclePoint], bool]] = None,
    on_iterate: Optional[Callable[[int, OraclePoint], None]] = None,
) -> SolveOutcome:
    """
    BFGS with weak Wolfe steps on f. Stops on approximate stationarity, on
    opts.maxit accepted iterations, after opts.time_limit seconds, on
    line-search failure, or with
    FeasibleFound as soon as stop_predicate holds (checked at x0 too).
    """
    opts = opts or SolverOptions()
    opts = opts.model_copy(update={"mu0": 1.0})

    def unconstrained(x):
        p = oracle(x)
        if p.c.size:
            return OraclePoint(x=p.x, f=p.f, g=p.g, info=p.info)
        return p

    return _run(unconstrained, x0, opts, False, stop_predicate, on_iterate)


def minimize_constrained(
    oracle: Oracle,
    x0: np.ndarray,
    opts: Optional[SolverOptions] = None,
    on_iterate: Optional[Callable[[int, OraclePoint], None]] = None,
) -> SolveOutcome:
    """
    Exact-penalty BFGS for min f s.t. c(x) <= 0 from a strictly feasible x0.

    Unless opts.allow_infeasible is set, the run halts with
    InfeasibleIterate at the first accepted iterate violating a constraint,
    returning it together with the best feasible point seen.
    """
    opts = opts or SolverOptions()
    return _run(oracle, x0, opts, True, None, on_iterate)
