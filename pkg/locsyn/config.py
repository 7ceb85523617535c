"""
Option models for the numerical kernels and the synthesis driver.

All options are pydantic models so that a resolved configuration can be
written next to the outputs of a run and loaded back unchanged.
"""
import os
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

DELTA_HIGH = 1e-14
DELTA_LOW = 1e-7

THREADS_ENV = "LOCSYN_THREADS"


class ArnoldiOptions(BaseModel):
    """
    Configuration of the implicitly restarted Arnoldi (ARPACK) eigensolver.
    """
    model_config = ConfigDict(frozen=True)

    n_requested: int = Field(6, ge=1)
    subspace_dim: Optional[int] = Field(None, ge=3)
    tol: float = Field(1e-10, ge=0.0)
    max_restarts: int = Field(300, ge=1)
    dense_fallback_threshold: int = Field(600, ge=0)
    transpose_match_tol: float = Field(1e-6, gt=0.0)

    def subspace_for(self, n: int) -> int:
        if self.subspace_dim is not None:
            return min(n, self.subspace_dim)
        return min(n, max(40, 2 * self.n_requested + 10))


class NormOptions(BaseModel):
    """
    Configuration of the BBBS level-set iteration.
    """
    model_config = ConfigDict(frozen=True)

    tol: float = Field(DELTA_HIGH, gt=0.0)
    max_level_iterations: int = Field(50, ge=1)
    grid_points: int = Field(128, ge=2)
    imag_axis_tol: float = Field(1e-8, gt=0.0)
    uniqueness_gap: float = Field(1e-8, gt=0.0)
    simplicity_gap: float = Field(1e-8, gt=0.0)

    @classmethod
    def low_accuracy(cls) -> "NormOptions":
        return cls(tol=DELTA_LOW)


class SolverOptions(BaseModel):
    """
    Options of the nonsmooth BFGS engine (both modes).
    """
    model_config = ConfigDict(frozen=True)

    maxit: int = Field(1000, ge=0)
    stat_tol: float = Field(1e-8, ge=0.0)
    history: int = Field(10, ge=1)
    eval_dist: float = Field(1e-4, gt=0.0)
    c1: float = Field(1e-4, gt=0.0, lt=1.0)
    c2: float = Field(0.5, gt=0.0, lt=1.0)
    max_bisections: int = Field(60, ge=1)
    max_expansions: int = Field(30, ge=0)
    curvature_guard: float = Field(1e-10, ge=0.0)
    mu0: float = Field(1.0, gt=0.0, le=1.0)
    mu_factor: float = Field(0.5, gt=0.0, lt=1.0)
    mu_min: float = Field(1e-10, gt=0.0)
    steering_ratio: float = Field(0.1, gt=0.0, le=1.0)
    active_tol: float = Field(1e-6, ge=0.0)
    feasibility_tol: float = Field(0.0, ge=0.0)
    allow_infeasible: bool = False
    time_limit: Optional[float] = Field(None, gt=0.0)


class Mode(str, Enum):
    R_ONLY = "r-only"
    R_PLUS_F = "r+f"


class Algorithm(int, Enum):
    ALG1 = 1
    ALG2 = 2


class SynthesisConfig(BaseModel):
    """
    Settings of one synthesis run.
    time_limit, in seconds, bounds the whole run (both phases, all passes).
    """
    model_config = ConfigDict(frozen=True)

    mode: Mode = Mode.R_PLUS_F
    algorithm: Algorithm = Algorithm.ALG2
    norm_tol: float = Field(DELTA_HIGH, gt=0.0)
    stat_tol: float = Field(1e-8, ge=0.0)
    phase_a_maxit: int = Field(1000, ge=0)
    phase_b_maxit_cumulative: int = Field(1000, ge=0)
    seed: int = 0
    time_limit: Optional[float] = Field(None, gt=0.0)
    arnoldi: ArnoldiOptions = ArnoldiOptions()
    norm: NormOptions = NormOptions()
    solver: SolverOptions = SolverOptions()

    def norm_options(self) -> NormOptions:
        return self.norm.model_copy(update={"tol": self.norm_tol})

    def solver_options(self, maxit: int, time_limit: Optional[float] = None) -> SolverOptions:
        return self.solver.model_copy(update={"maxit": maxit, "stat_tol": self.stat_tol,
                                              "time_limit": time_limit if time_limit is not None
                                              else self.solver.time_limit})


def bench_threads(default: Optional[int] = None) -> int:
    """
    Number of concurrent benchmark cells, capped by LOCSYN_THREADS when set.
    """
    fallback = default if default is not None else (os.cpu_count() or 1)
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return max(1, fallback)
    try:
        cap = int(raw)
    except ValueError:
        return max(1, fallback)
    return max(1, min(cap, fallback))
