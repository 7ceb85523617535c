"""
Fixed-order controller synthesis on a ROM/FOM pair.

F(K) is the L-infinity norm of the ROM closed loop when both the ROM and the
FOM closed loops are stable, and +inf otherwise. Two drivers minimize it:

* algorithm1: stabilize (min max(alpha_r, alpha_f) until negative), then
  minimize F directly, relying on the line search to reject unstable steps.
* algorithm2: alternate stabilization with a constrained solve of
  min |G_r| s.t. alpha_r <= 0, alpha_f <= 0 that quits on the first
  infeasible iterate and returns to stabilization from there.

In R_ONLY mode the FOM is ignored during optimization and only enters the
final evaluation.
"""
import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import Algorithm, ArnoldiOptions, Mode, SynthesisConfig
from .exceptions import (
    DimensionMismatchError,
    InfiniteNormError,
    NumericalError,
    ResolventSingularError,
)
from .hinf_norm import NormResult, linf_gradient, linf_norm_bbbs
from .models import Controller, PlantRealization, check_compatible
from .nsbfgs import OraclePoint, SolveOutcome, SolveStatus, minimize_constrained, minimize_unconstrained
from .plant import assemble_closed_loop, closed_loop_operator
from .spectral import (
    ControllerGradient,
    EigenTriple,
    abscissa_gradient,
    rightmost_eigentriple_iterative,
    spectral_abscissa_dense,
)

logger = logging.getLogger(__name__)

BRANCH_TIE_TOL = 1e-12
VALIDATE_DENSE_LIMIT = 2000
VALIDATE_MISMATCH_TOL = 1e-6
REEVALUATION_TOL = 1e-10


class SynthesisStatus(str, Enum):
    STATIONARITY_SATISFIED = "StationaritySatisfied"
    MAX_ITERATIONS = "MaxIterations"
    LINE_SEARCH_FAILURE = "LineSearchFailure"
    STABILIZATION_FAILED = "StabilizationFailed"
    NUMERICAL_FAILURE = "NumericalFailure"
    TIME_LIMIT = "TimeLimit"
    VERIFICATION_FAILED = "VerificationFailed"


_FROM_SOLVER = {
    SolveStatus.STATIONARITY_SATISFIED: SynthesisStatus.STATIONARITY_SATISFIED,
    SolveStatus.MAX_ITERATIONS: SynthesisStatus.MAX_ITERATIONS,
    SolveStatus.LINE_SEARCH_FAILURE: SynthesisStatus.LINE_SEARCH_FAILURE,
    SolveStatus.INFEASIBLE_ITERATE: SynthesisStatus.MAX_ITERATIONS,
    SolveStatus.FEASIBLE_FOUND: SynthesisStatus.STATIONARITY_SATISFIED,
    SolveStatus.TIME_LIMIT: SynthesisStatus.TIME_LIMIT,
}

# kept as reported when no stabilized iterate exists
_KEEP_WITHOUT_BEST = {
    SynthesisStatus.NUMERICAL_FAILURE,
    SynthesisStatus.TIME_LIMIT,
}


class SynthesisProblem(BaseModel):
    """
    ROM/FOM pair sharing (n_w, n_u, n_z, n_y), a controller order and the run settings.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rom: PlantRealization
    fom: PlantRealization
    n_K: int = Field(..., ge=0)
    config: SynthesisConfig = SynthesisConfig()

    @model_validator(mode="after")
    def _check_pair(self):
        if self.rom.io_dims != self.fom.io_dims:
            raise DimensionMismatchError(
                f"ROM (n_w, n_u, n_z, n_y) = {self.rom.io_dims} differs from "
                f"FOM {self.fom.io_dims}"
            )
        return self

    @property
    def n_u(self) -> int:
        return self.rom.n_u

    @property
    def n_y(self) -> int:
        return self.rom.n_y

    @property
    def include_fom(self) -> bool:
        return self.config.mode == Mode.R_PLUS_F

    def controller(self, x) -> Controller:
        return Controller.from_vector(x, self.n_K, self.n_u, self.n_y)


class HistoryRecord(BaseModel):
    """
    One accepted iterate. norm is NaN where it was not computed
    (stabilization phase), alpha_fom is NaN where the FOM was not evaluated.
    """
    model_config = ConfigDict(frozen=True)

    phase: str
    iter: int
    norm: float
    alpha_rom: float
    alpha_fom: float
    seconds: float
    best: float


class SynthesisResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    best_K: Controller
    F_best: float
    alpha_rom: float
    alpha_fom: float
    tracked_value: float
    status: SynthesisStatus
    solver_status: Optional[SolveStatus] = None
    algorithm: Algorithm
    mode: Mode
    history: List[HistoryRecord] = Field(default_factory=list)
    restabilizations: int = 0
    iterations_a: int = 0
    iterations_b: int = 0
    phase_seconds: Dict[str, float] = Field(default_factory=dict)
    total_seconds: float = 0.0
    message: str = ""

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.F_best))


@dataclass(frozen=True, eq=False)
class Evaluation:
    F: float
    alpha_rom: float
    alpha_fom: float
    norm: Optional[NormResult] = None

    def __iter__(self):
        return iter((self.F, self.alpha_rom, self.alpha_fom, self.norm))


def rom_abscissa(problem: SynthesisProblem, K: Controller) -> Tuple[float, EigenTriple]:
    cl = assemble_closed_loop(problem.rom, K)
    return spectral_abscissa_dense(cl.A)


def fom_abscissa(problem: SynthesisProblem, K: Controller) -> Tuple[float, EigenTriple]:
    """
    Rightmost eigentriple of the FOM closed loop; matrix-free for sparse FOMs.
    """
    if problem.fom.is_sparse:
        return rightmost_eigentriple_iterative(closed_loop_operator(problem.fom, K),
                                               problem.config.arnoldi)
    return spectral_abscissa_dense(assemble_closed_loop(problem.fom, K).A)


def evaluate_F(problem: SynthesisProblem, K: Controller) -> Evaluation:
    """
    F(K) with both abscissae. The norm is only computed for stable pairs.
    """
    check_compatible(problem.rom, K, "ROM")
    alpha_r, _ = rom_abscissa(problem, K)
    alpha_f, _ = fom_abscissa(problem, K)
    if max(alpha_r, alpha_f) >= 0.0:
        return Evaluation(float("inf"), alpha_r, alpha_f)
    result = linf_norm_bbbs(assemble_closed_loop(problem.rom, K), opts=problem.config.norm_options())
    return Evaluation(result.value, alpha_r, alpha_f, result)


def stabilization_objective(problem: SynthesisProblem, K: Controller,
                            include_fom: Optional[bool] = None
                            ) -> Tuple[float, ControllerGradient]:
    """
    max(alpha_r, alpha_f) and the gradient of the branch attaining it;
    ties within 1e-12 go to the FOM branch.
    """
    value, grad, _ = _stabilization(problem, K, problem.include_fom if include_fom is None else include_fom)
    return value, grad


def _stabilization(problem: SynthesisProblem, K: Controller, include_fom: bool):
    alpha_r, triple_r = rom_abscissa(problem, K)
    if not include_fom:
        return alpha_r, abscissa_gradient(problem.rom, K, triple_r), (alpha_r, float("nan"))
    alpha_f, triple_f = fom_abscissa(problem, K)
    if alpha_f >= alpha_r - BRANCH_TIE_TOL * max(1.0, abs(alpha_r)):
        return alpha_f, abscissa_gradient(problem.fom, K, triple_f), (alpha_r, alpha_f)
    return alpha_r, abscissa_gradient(problem.rom, K, triple_r), (alpha_r, alpha_f)


@dataclass(frozen=True, eq=False)
class IterateInfo:
    alpha_rom: float
    alpha_fom: float
    norm: float = float("nan")

    def feasible(self, include_fom: bool) -> bool:
        if not self.alpha_rom < 0.0:
            return False
        return self.alpha_fom < 0.0 if include_fom else True


class _Oracles:
    """
    Oracles over the flat controller vector for the three optimization phases.
    """

    def __init__(self, problem: SynthesisProblem):
        self.problem = problem
        self.include_fom = problem.include_fom
        self.norm_opts = problem.config.norm_options()

    def _norm_and_gradient(self, K: Controller):
        cl = assemble_closed_loop(self.problem.rom, K)
        try:
            result = linf_norm_bbbs(cl, opts=self.norm_opts)
            grad = linf_gradient(self.problem.rom, K, result.peak, cl)
        except (InfiniteNormError, ResolventSingularError) as e:
            logger.debug("norm is infinite at trial point: %s", e)
            return float("inf"), None
        return result.value, grad.to_vector()

    def stabilize(self, x: np.ndarray) -> OraclePoint:
        K = self.problem.controller(x)
        value, grad, (alpha_r, alpha_f) = _stabilization(self.problem, K, self.include_fom)
        return OraclePoint(x=x, f=value, g=grad.to_vector(), info=IterateInfo(alpha_r, alpha_f))

    def direct(self, x: np.ndarray) -> OraclePoint:
        """F(K) itself; +inf without gradient at destabilizing controllers."""
        K = self.problem.controller(x)
        alpha_r, _ = rom_abscissa(self.problem, K)
        alpha_f = fom_abscissa(self.problem, K)[0] if self.include_fom and alpha_r < 0.0 else float("nan")
        info = IterateInfo(alpha_r, alpha_f)
        if not info.feasible(self.include_fom):
            return OraclePoint(x=x, f=float("inf"), info=info)
        value, g = self._norm_and_gradient(K)
        return OraclePoint(x=x, f=value, g=g, info=IterateInfo(alpha_r, alpha_f, value))

    def constrained(self, x: np.ndarray) -> OraclePoint:
        """|G_r| with constraints alpha_r <= 0 (and alpha_f <= 0 in R+F)."""
        K = self.problem.controller(x)
        alpha_r, triple_r = rom_abscissa(self.problem, K)
        c = [alpha_r]
        J = [abscissa_gradient(self.problem.rom, K, triple_r).to_vector()]
        alpha_f = float("nan")
        if self.include_fom:
            alpha_f, triple_f = fom_abscissa(self.problem, K)
            c.append(alpha_f)
            J.append(abscissa_gradient(self.problem.fom, K, triple_f).to_vector())
        value, g = self._norm_and_gradient(K)
        return OraclePoint(x=x, f=value, g=g, c=np.array(c), J=np.vstack(J),
                           info=IterateInfo(alpha_r, alpha_f, value))


class _Recorder:
    """
    Collects history rows and tracks the best feasible and least infeasible iterates.
    """

    def __init__(self, include_fom: bool):
        self.include_fom = include_fom
        self.records: List[HistoryRecord] = []
        self.start = time.perf_counter()
        self.accepted = 0
        self.best_x: Optional[np.ndarray] = None
        self.best_value = float("inf")
        self.least_x: Optional[np.ndarray] = None
        self.least_value = float("inf")

    def callback(self, phase: str) -> Callable[[int, OraclePoint], None]:
        def on_iterate(k: int, point: OraclePoint) -> None:
            if k > 0:
                self.accepted += 1
            info: IterateInfo = point.info
            if phase == "A" and point.f < self.least_value:
                self.least_value, self.least_x = point.f, point.x.copy()
            if info.feasible(self.include_fom) and np.isfinite(info.norm) and info.norm < self.best_value:
                self.best_value, self.best_x = info.norm, point.x.copy()
            # phase A rows hold accepted iterates only
            if phase == "A" and k == 0:
                return
            self.records.append(HistoryRecord(
                phase=phase, iter=self.accepted, norm=info.norm,
                alpha_rom=info.alpha_rom, alpha_fom=info.alpha_fom,
                seconds=time.perf_counter() - self.start, best=self.best_value,
            ))
        return on_iterate


class _Run:
    """
    State shared by both drivers: budgets, timings and the final report.
    """

    def __init__(self, problem: SynthesisProblem, algorithm: Algorithm):
        self.problem = problem
        self.algorithm = algorithm
        self.oracles = _Oracles(problem)
        self.recorder = _Recorder(problem.include_fom)
        self.a_used = 0
        self.b_used = 0
        self.restabilizations = 0
        self.seconds = {"A": 0.0, "B": 0.0}
        self.solver_status: Optional[SolveStatus] = None
        limit = problem.config.time_limit
        self.deadline = None if limit is None else self.recorder.start + limit

    def _stabilized(self, point: OraclePoint) -> bool:
        return point.info.feasible(self.problem.include_fom)

    def remaining(self) -> Optional[float]:
        return None if self.deadline is None else self.deadline - time.perf_counter()

    def expired(self) -> bool:
        left = self.remaining()
        return left is not None and left <= 0.0

    def phase_a(self, x: np.ndarray) -> SolveOutcome:
        cfg = self.problem.config
        t0 = time.perf_counter()
        out = minimize_unconstrained(
            self.oracles.stabilize, x,
            cfg.solver_options(max(0, cfg.phase_a_maxit - self.a_used), self.remaining()),
            stop_predicate=self._stabilized, on_iterate=self.recorder.callback("A"),
        )
        self.seconds["A"] += time.perf_counter() - t0
        self.a_used += out.iterations
        self.solver_status = out.status
        logger.info("phase A: %s after %d iterations (max abscissa %.6g)",
                    out.status.value, out.iterations, out.f_final)
        return out

    def phase_b(self, run: Callable[..., SolveOutcome], oracle, x: np.ndarray, maxit: int) -> SolveOutcome:
        t0 = time.perf_counter()
        out = run(oracle, x, self.problem.config.solver_options(maxit, self.remaining()),
                  on_iterate=self.recorder.callback("B"))
        self.seconds["B"] += time.perf_counter() - t0
        self.b_used += out.iterations
        self.solver_status = out.status
        logger.info("phase B: %s after %d iterations (value %.10g)",
                    out.status.value, out.iterations, out.f_final)
        return out

    def finish(self, status: SynthesisStatus, K0: Controller, message: str = "") -> SynthesisResult:
        rec = self.recorder
        if rec.best_x is not None:
            x, tracked = rec.best_x, rec.best_value
        else:
            x = rec.least_x if rec.least_x is not None else K0.to_vector()
            tracked = float("inf")
            if status not in _KEEP_WITHOUT_BEST:
                status = SynthesisStatus.STABILIZATION_FAILED
        K = self.problem.controller(x)
        try:
            final = evaluate_F(self.problem, K)
        except NumericalError as e:
            logger.error("final evaluation failed: %s", e)
            final = Evaluation(float("inf"), float("nan"), float("nan"))
            status = SynthesisStatus.NUMERICAL_FAILURE
            message = message or str(e)
        if np.isfinite(tracked) and np.isfinite(final.F):
            if abs(final.F - tracked) > REEVALUATION_TOL * max(1.0, abs(tracked)):
                logger.error("re-evaluated F=%.16g differs from tracked %.16g", final.F, tracked)
                status = SynthesisStatus.VERIFICATION_FAILED
                mismatch = f"re-evaluated F={final.F!r} differs from tracked {tracked!r}"
                message = f"{message}; {mismatch}" if message else mismatch
        return SynthesisResult(
            best_K=K, F_best=final.F, alpha_rom=final.alpha_rom, alpha_fom=final.alpha_fom,
            tracked_value=tracked, status=status, solver_status=self.solver_status,
            algorithm=self.algorithm, mode=self.problem.config.mode,
            history=rec.records, restabilizations=self.restabilizations,
            iterations_a=self.a_used, iterations_b=self.b_used,
            phase_seconds=dict(self.seconds), total_seconds=time.perf_counter() - rec.start,
            message=message,
        )


def _initial(problem: SynthesisProblem, K0: Optional[Controller]) -> Controller:
    if K0 is None:
        from .probgen import random_controller
        return random_controller((problem.n_u, problem.n_y), problem.n_K, problem.config.seed)
    check_compatible(problem.rom, K0, "ROM")
    if K0.order != problem.n_K:
        raise DimensionMismatchError(f"initial controller has order {K0.order}, expected {problem.n_K}")
    return K0


def algorithm1(problem: SynthesisProblem, K0: Optional[Controller] = None) -> SynthesisResult:
    """
    Stabilize, then minimize F directly.
    """
    K0 = _initial(problem, K0)
    run = _Run(problem, Algorithm.ALG1)
    try:
        out_a = run.phase_a(K0.to_vector())
        if out_a.status == SolveStatus.TIME_LIMIT:
            return run.finish(SynthesisStatus.TIME_LIMIT, K0)
        if out_a.status != SolveStatus.FEASIBLE_FOUND:
            return run.finish(SynthesisStatus.STABILIZATION_FAILED, K0)
        if run.expired():
            return run.finish(SynthesisStatus.TIME_LIMIT, K0)
        out_b = run.phase_b(minimize_unconstrained, run.oracles.direct, out_a.x_final,
                            problem.config.phase_b_maxit_cumulative)
    except NumericalError as e:
        logger.error("synthesis aborted: %s", e)
        return run.finish(SynthesisStatus.NUMERICAL_FAILURE, K0, str(e))
    return run.finish(_FROM_SOLVER[out_b.status], K0)


def algorithm2(problem: SynthesisProblem, K0: Optional[Controller] = None) -> SynthesisResult:
    """
    Alternate stabilization and constrained minimization until the
    cumulative constrained budget is spent or a stationary point is reached.
    """
    K0 = _initial(problem, K0)
    run = _Run(problem, Algorithm.ALG2)
    budget = problem.config.phase_b_maxit_cumulative
    x = K0.to_vector()
    passes = 0
    try:
        while True:
            out_a = run.phase_a(x)
            if out_a.status == SolveStatus.TIME_LIMIT or (
                    out_a.status == SolveStatus.FEASIBLE_FOUND and run.expired()):
                return run.finish(SynthesisStatus.TIME_LIMIT, K0)
            if out_a.status != SolveStatus.FEASIBLE_FOUND:
                status = (SynthesisStatus.STABILIZATION_FAILED if run.recorder.best_x is None
                          else SynthesisStatus.MAX_ITERATIONS)
                return run.finish(status, K0)
            if passes:
                run.restabilizations += 1
            passes += 1
            out_b = run.phase_b(minimize_constrained, run.oracles.constrained, out_a.x_final,
                                max(0, budget - run.b_used))
            if out_b.status == SolveStatus.INFEASIBLE_ITERATE and run.expired():
                return run.finish(SynthesisStatus.TIME_LIMIT, K0)
            if out_b.status == SolveStatus.INFEASIBLE_ITERATE and run.b_used < budget:
                logger.info("infeasible iterate after %d cumulative constrained iterations; restabilizing",
                            run.b_used)
                x = out_b.x_final
                continue
            return run.finish(_FROM_SOLVER[out_b.status], K0)
    except NumericalError as e:
        logger.error("synthesis aborted: %s", e)
        return run.finish(SynthesisStatus.NUMERICAL_FAILURE, K0, str(e))


def synthesize(problem: SynthesisProblem, K0: Optional[Controller] = None) -> SynthesisResult:
    if problem.config.algorithm == Algorithm.ALG1:
        return algorithm1(problem, K0)
    return algorithm2(problem, K0)


class ValidationReport(BaseModel):
    """
    FOM closed-loop stability check. alpha_dense is None above the dense limit.
    """
    model_config = ConfigDict(frozen=True)

    n: int
    alpha_iterative: float
    alpha_dense: Optional[float] = None
    disagreement: Optional[float] = None
    mismatch: bool = False

    @property
    def alpha(self) -> float:
        return self.alpha_dense if self.alpha_dense is not None else self.alpha_iterative

    @property
    def stable(self) -> bool:
        return self.alpha < 0.0


def validate_controller(fom: PlantRealization, K: Controller,
                        arnoldi: Optional[ArnoldiOptions] = None,
                        dense_limit: int = VALIDATE_DENSE_LIMIT,
                        mismatch_tol: float = VALIDATE_MISMATCH_TOL) -> ValidationReport:
    """
    Rightmost FOM closed-loop eigenvalue by Arnoldi and, for n <= dense_limit,
    densely; a disagreement above mismatch_tol is logged and flagged.
    """
    check_compatible(fom, K, "FOM")
    op = closed_loop_operator(fom, K)
    alpha_it, _ = rightmost_eigentriple_iterative(op, arnoldi)
    if op.n > dense_limit:
        return ValidationReport(n=op.n, alpha_iterative=alpha_it)
    alpha_dense, _ = spectral_abscissa_dense(assemble_closed_loop(fom, K).A)
    gap = abs(alpha_dense - alpha_it)
    mismatch = gap > mismatch_tol
    if mismatch:
        logger.warning("dense (%.12g) and iterative (%.12g) abscissae differ by %.3e",
                       alpha_dense, alpha_it, gap)
    return ValidationReport(n=op.n, alpha_iterative=alpha_it, alpha_dense=alpha_dense,
                            disagreement=gap, mismatch=mismatch)
