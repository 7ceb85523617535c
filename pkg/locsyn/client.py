"""
Asynchronous synthesis client.

Every call validates its arguments, runs the computation in an executor and
returns (result, errstr): errstr is empty on success and result is None on
failure.
"""
import asyncio
import logging
from concurrent.futures import Executor
from typing import Any, Callable, Optional, Tuple

from .config import ArnoldiOptions, NormOptions, SynthesisConfig
from .exceptions import DimensionMismatchError, LocsynError, NumericalError
from .hinf_norm import NormResult, linf_norm_bbbs
from .models import Controller, PlantRealization
from .plant import assemble_closed_loop
from .synthesis import (
    Evaluation,
    SynthesisProblem,
    SynthesisResult,
    ValidationReport,
    evaluate_F,
    synthesize,
    validate_controller,
)

logger = logging.getLogger(__name__)


def _run_synthesis(problem: SynthesisProblem, K0: Optional[Controller]) -> SynthesisResult:
    return synthesize(problem, K0)


def _run_norm(plant: PlantRealization, K: Controller, opts: NormOptions) -> NormResult:
    return linf_norm_bbbs(assemble_closed_loop(plant, K), opts=opts)


class SynthesisClient:
    """
    Asynchronous front end to the synthesis toolkit.
    """

    @staticmethod
    def _check_timeout(timeout) -> str:
        if timeout is not None and (not isinstance(timeout, (int, float)) or timeout <= 0):
            return "Invalid timeout: must be a positive number of seconds or None"
        return ""

    @classmethod
    async def _call(cls, fn: Callable, *args, timeout: Optional[float] = None,
                    executor: Optional[Executor] = None) -> Tuple[Optional[Any], str]:
        loop = asyncio.get_running_loop()
        try:
            future = loop.run_in_executor(executor, fn, *args)
            return await asyncio.wait_for(future, timeout), ""
        except asyncio.TimeoutError:
            return None, f"Run timed out after {timeout} s"
        except NumericalError as e:
            return None, f"Numerical failure: {e}"
        except LocsynError as e:
            return None, f"Invalid input: {e}"
        except Exception as e:
            logger.exception("unexpected failure in %s", getattr(fn, "__name__", fn))
            return None, f"Unexpected error: {e}"

    @classmethod
    async def synthesize(
        cls,
        rom: PlantRealization,
        fom: PlantRealization,
        n_K: int,
        config: Optional[SynthesisConfig] = None,
        K0: Optional[Controller] = None,
        timeout: Optional[float] = None,
        executor: Optional[Executor] = None,
    ) -> Tuple[Optional[SynthesisResult], str]:
        """
        Run the configured synthesis algorithm on a ROM/FOM pair.
        timeout becomes the run's time_limit (the smaller one wins): the
        solver stops itself and the result carries status TimeLimit.
        Returns (result, errstr).
        """
        if not isinstance(rom, PlantRealization) or not isinstance(fom, PlantRealization):
            return None, "rom and fom must be PlantRealization objects"
        if not isinstance(n_K, int) or isinstance(n_K, bool) or n_K < 0:
            return None, "Invalid controller order: must be a non-negative integer"
        if config is not None and not isinstance(config, SynthesisConfig):
            return None, "config must be a SynthesisConfig or None"
        if K0 is not None and not isinstance(K0, Controller):
            return None, "K0 must be a Controller or None"
        errstr = cls._check_timeout(timeout)
        if errstr:
            return None, errstr
        config = config or SynthesisConfig()
        if timeout is not None:
            limit = timeout if config.time_limit is None else min(timeout, config.time_limit)
            config = config.model_copy(update={"time_limit": float(limit)})
        try:
            problem = SynthesisProblem(rom=rom, fom=fom, n_K=n_K, config=config)
        except DimensionMismatchError as e:
            return None, f"Invalid problem: {e}"
        if K0 is not None and (K0.order != n_K or not K0.matches(rom)):
            return None, "Invalid initial controller: order or (n_u, n_y) does not match the problem"
        return await cls._call(_run_synthesis, problem, K0, executor=executor)

    @classmethod
    async def evaluate(
        cls,
        rom: PlantRealization,
        fom: PlantRealization,
        K: Controller,
        config: Optional[SynthesisConfig] = None,
        timeout: Optional[float] = None,
    ) -> Tuple[Optional[Evaluation], str]:
        """
        F(K) with both closed-loop abscissae. Returns (evaluation, errstr).
        """
        if not isinstance(K, Controller):
            return None, "K must be a Controller"
        errstr = cls._check_timeout(timeout)
        if errstr:
            return None, errstr
        try:
            problem = SynthesisProblem(rom=rom, fom=fom, n_K=K.order, config=config or SynthesisConfig())
        except (DimensionMismatchError, ValueError) as e:
            return None, f"Invalid problem: {e}"
        if not K.matches(rom):
            return None, "Invalid controller: (n_u, n_y) does not match the plant"
        return await cls._call(evaluate_F, problem, K, timeout=timeout)

    @classmethod
    async def norm(
        cls,
        plant: PlantRealization,
        K: Controller,
        tol: Optional[float] = None,
        timeout: Optional[float] = None,
    ) -> Tuple[Optional[NormResult], str]:
        """
        L-infinity norm of the closed loop of plant and K. Returns (norm_result, errstr).
        """
        if not isinstance(plant, PlantRealization) or not isinstance(K, Controller):
            return None, "plant must be a PlantRealization and K a Controller"
        if not K.matches(plant):
            return None, "Invalid controller: (n_u, n_y) does not match the plant"
        if tol is not None and (not isinstance(tol, (int, float)) or not 0.0 < tol < 1.0):
            return None, "Invalid tolerance: must lie in (0, 1)"
        errstr = cls._check_timeout(timeout)
        if errstr:
            return None, errstr
        opts = NormOptions() if tol is None else NormOptions(tol=tol)
        return await cls._call(_run_norm, plant, K, opts, timeout=timeout)

    @classmethod
    async def validate(
        cls,
        fom: PlantRealization,
        K: Controller,
        arnoldi: Optional[ArnoldiOptions] = None,
        timeout: Optional[float] = None,
    ) -> Tuple[Optional[ValidationReport], str]:
        """
        FOM closed-loop stability report. Returns (report, errstr).
        """
        if not isinstance(fom, PlantRealization) or not isinstance(K, Controller):
            return None, "fom must be a PlantRealization and K a Controller"
        if not K.matches(fom):
            return None, "Invalid controller: (n_u, n_y) does not match the plant"
        errstr = cls._check_timeout(timeout)
        if errstr:
            return None, errstr
        return await cls._call(validate_controller, fom, K, arnoldi, timeout=timeout)
