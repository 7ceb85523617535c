import math
from dataclasses import replace

import numpy as np
import pytest

import locsyn.synthesis as synthesis
from locsyn.config import Algorithm, Mode, SynthesisConfig
from locsyn.exceptions import DimensionMismatchError, EigenSolverError
from locsyn.models import Controller, PlantRealization
from locsyn.nsbfgs import SolveStatus
from locsyn.plant import assemble_closed_loop
from locsyn.probgen import default_suite, generate_problem, generate_fom, heat_spec, random_controller
from locsyn.synthesis import (
    SynthesisProblem,
    SynthesisStatus,
    algorithm1,
    algorithm2,
    evaluate_F,
    stabilization_objective,
    synthesize,
    validate_controller,
)

WEIGHTED_OPTIMUM = 1.0 / math.sqrt(5.0)
# the FOM below is stable exactly for d > -2/19
FOM_BOUNDARY = -0.2 / 1.9


def static_gain(d):
    return Controller(Ahat=np.zeros((0, 0)), Bhat=np.zeros((0, 1)), Chat=np.zeros((1, 0)), Dhat=[[d]])


def gain_of(K):
    return float(K.Dhat[0, 0])


def scalar(a, b2=1.0):
    return PlantRealization.from_blocks(A1=[[a]], B1=[[1.0]], B2=[[b2]], C1=[[1.0]], C2=[[1.0]])


def weighted_rom():
    """dx = -2x + w + u, z = (x, u), y = x: |G| = sqrt(1 + d^2)/(2 - d) under u = d*y."""
    return PlantRealization.from_blocks(A1=[[-2.0]], B1=[[1.0]], B2=[[1.0]],
                                        C1=[[1.0], [0.0]], C2=[[1.0]], D12=[[0.0], [1.0]])


def fragile_fom():
    return PlantRealization.from_blocks(
        A1=np.diag([-2.0, -0.1]), B1=[[1.0], [0.0]], B2=[[1.0], [-1.0]],
        C1=[[1.0, 0.0], [0.0, 0.0]], C2=[[1.0, 1.0]], D12=[[0.0], [1.0]],
    )


def weighted_F(d):
    return math.sqrt(1.0 + d * d) / (2.0 - d)


def problem(rom, fom, mode=Mode.R_PLUS_F, algorithm=Algorithm.ALG1, **kwargs):
    return SynthesisProblem(rom=rom, fom=fom, n_K=0,
                            config=SynthesisConfig(mode=mode, algorithm=algorithm, **kwargs))


def check_history(result):
    assert {r.phase for r in result.history} <= {"A", "B"}
    iters = [r.iter for r in result.history]
    assert iters == sorted(iters)
    best = [r.best for r in result.history]
    assert all(b1 >= b2 for b1, b2 in zip(best, best[1:]))
    for r in result.history:
        if r.phase == "A":
            assert math.isnan(r.norm)
        if result.mode == Mode.R_ONLY:
            assert math.isnan(r.alpha_fom)


def test_problem_requires_matching_io_dims():
    with pytest.raises(DimensionMismatchError):
        SynthesisProblem(rom=scalar(-2.0), fom=weighted_rom(), n_K=0)


def test_evaluate_scalar_loop():
    F, alpha_r, alpha_f, norm = evaluate_F(problem(scalar(-2.0), scalar(-2.0)), static_gain(0.0))
    assert F == pytest.approx(0.5, abs=1e-14)
    assert alpha_r == pytest.approx(-2.0)
    assert alpha_f == pytest.approx(-2.0)
    assert norm.certified


def test_evaluate_unstable_fom_is_infinite():
    ev = evaluate_F(problem(scalar(-2.0), scalar(0.1)), static_gain(0.0))
    assert ev.F == float("inf")
    assert ev.alpha_fom == pytest.approx(0.1)
    assert ev.norm is None


def test_evaluate_ignores_mode():
    for mode in Mode:
        ev = evaluate_F(problem(scalar(-2.0), scalar(0.1), mode=mode), static_gain(0.0))
        assert ev.F == float("inf")


@pytest.mark.parametrize("a_fom,value,branch_gain", [
    (0.1, 0.1, 3.0),
    (-1.0, -0.5, 1.0),
    (-0.5, -0.5, 3.0),
])
def test_stabilization_objective_branches(a_fom, value, branch_gain):
    prob = problem(scalar(-0.5), scalar(a_fom, b2=3.0))
    f, grad = stabilization_objective(prob, static_gain(0.0))
    assert f == pytest.approx(value)
    assert grad.dDhat[0, 0] == pytest.approx(branch_gain)


def test_stabilization_objective_ignores_fom_in_r_only():
    prob = problem(scalar(-0.5), scalar(0.1, b2=3.0), mode=Mode.R_ONLY)
    f, grad = stabilization_objective(prob, static_gain(0.0))
    assert f == pytest.approx(-0.5)
    assert grad.dDhat[0, 0] == pytest.approx(1.0)


def test_algorithm1_reaches_known_minimizer():
    prob = problem(weighted_rom(), weighted_rom())
    result = algorithm1(prob, static_gain(0.0))
    assert result.status in (SynthesisStatus.STATIONARITY_SATISFIED, SynthesisStatus.LINE_SEARCH_FAILURE)
    assert result.iterations_a == 0
    assert all(r.phase == "B" for r in result.history)
    assert gain_of(result.best_K) == pytest.approx(-0.5, abs=1e-5)
    assert result.F_best == pytest.approx(WEIGHTED_OPTIMUM, rel=1e-10)
    assert result.F_best == evaluate_F(prob, result.best_K).F
    check_history(result)


def test_algorithm2_single_pass_when_constraints_inactive():
    prob = problem(weighted_rom(), weighted_rom(), algorithm=Algorithm.ALG2)
    result = algorithm2(prob, static_gain(0.0))
    assert result.restabilizations == 0
    assert result.F_best == pytest.approx(WEIGHTED_OPTIMUM, rel=1e-8)
    assert result.solver_status in (SolveStatus.STATIONARITY_SATISFIED, SolveStatus.LINE_SEARCH_FAILURE)
    check_history(result)


def test_r_only_touches_fom_once(monkeypatch):
    calls = []
    original = synthesis.fom_abscissa

    def counting(prob, K):
        calls.append(K)
        return original(prob, K)

    monkeypatch.setattr(synthesis, "fom_abscissa", counting)
    for alg in Algorithm:
        calls.clear()
        result = synthesize(problem(weighted_rom(), fragile_fom(), mode=Mode.R_ONLY, algorithm=alg),
                            static_gain(0.0))
        assert len(calls) == 1
        check_history(result)


def test_r_only_optimum_destabilizes_fom():
    result = algorithm1(problem(weighted_rom(), fragile_fom(), mode=Mode.R_ONLY), static_gain(0.0))
    assert gain_of(result.best_K) < FOM_BOUNDARY
    assert result.tracked_value == pytest.approx(WEIGHTED_OPTIMUM, rel=1e-8)
    assert result.F_best == float("inf")
    assert result.alpha_fom > 0.0
    assert not result.finite


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_r_plus_f_keeps_fom_stable(algorithm):
    prob = problem(weighted_rom(), fragile_fom(), algorithm=algorithm)
    result = synthesize(prob, static_gain(0.0))
    assert result.finite
    assert result.alpha_fom < 0.0 and result.alpha_rom < 0.0
    assert gain_of(result.best_K) > FOM_BOUNDARY
    assert weighted_F(FOM_BOUNDARY) - 1e-9 <= result.F_best <= weighted_F(0.0)
    assert result.F_best == evaluate_F(prob, result.best_K).F
    check_history(result)


def test_phase_a_stabilizes_fom_first():
    prob = problem(weighted_rom(), fragile_fom())
    result = algorithm1(prob, static_gain(-0.3))
    assert result.iterations_a >= 1
    assert result.history[0].phase == "A"
    assert result.finite
    assert result.alpha_fom < 0.0


def test_stabilization_failure_returns_least_unstable():
    prob = problem(weighted_rom(), fragile_fom(), phase_a_maxit=0)
    result = algorithm1(prob, static_gain(-0.3))
    assert result.status == SynthesisStatus.STABILIZATION_FAILED
    assert result.solver_status == SolveStatus.MAX_ITERATIONS
    assert result.F_best == float("inf")
    assert gain_of(result.best_K) == -0.3
    assert result.history == []


def test_numerical_failure_is_reported(monkeypatch):
    def broken(*args, **kwargs):
        raise EigenSolverError("QZ failed")

    monkeypatch.setattr(synthesis, "linf_norm_bbbs", broken)
    result = algorithm1(problem(weighted_rom(), weighted_rom()), static_gain(0.0))
    assert result.status == SynthesisStatus.NUMERICAL_FAILURE
    assert result.F_best == float("inf")
    assert "QZ failed" in result.message


def test_initial_controller_order_checked():
    prob = problem(weighted_rom(), weighted_rom())
    with pytest.raises(DimensionMismatchError):
        algorithm1(prob, Controller.zeros(2, 1, 1))


def test_default_initial_controller_is_seeded():
    prob = SynthesisProblem(rom=weighted_rom(), fom=weighted_rom(), n_K=1,
                            config=SynthesisConfig(seed=5, phase_a_maxit=0, phase_b_maxit_cumulative=0))
    first, second = synthesize(prob), synthesize(prob)
    np.testing.assert_array_equal(first.best_K.to_vector(), second.best_K.to_vector())


@pytest.fixture(scope="module")
def small_heat_fom():
    return generate_fom(heat_spec(6, 2))


def test_validate_controller_agrees(small_heat_fom):
    report = validate_controller(small_heat_fom, Controller.zeros(1, small_heat_fom.n_u, small_heat_fom.n_y))
    assert report.n == 37
    assert report.stable
    assert report.alpha_dense is not None
    assert not report.mismatch
    assert report.disagreement <= 1e-8


def test_validate_controller_flags_mismatch(monkeypatch, small_heat_fom):
    original = synthesis.rightmost_eigentriple_iterative

    def shifted(op, opts=None):
        alpha, triple = original(op, opts)
        return alpha + 1e-3, triple

    monkeypatch.setattr(synthesis, "rightmost_eigentriple_iterative", shifted)
    K = Controller.zeros(1, small_heat_fom.n_u, small_heat_fom.n_y)
    report = validate_controller(small_heat_fom, K)
    assert report.mismatch
    assert report.alpha == report.alpha_dense
    large = validate_controller(small_heat_fom, K, dense_limit=10)
    assert large.alpha_dense is None and not large.mismatch


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_time_limit_ends_run_with_current_controller(algorithm):
    prob = problem(weighted_rom(), weighted_rom(), algorithm=algorithm, time_limit=1e-9)
    result = synthesize(prob, static_gain(0.0))
    assert result.status == SynthesisStatus.TIME_LIMIT
    assert result.iterations_b == 0
    assert gain_of(result.best_K) == 0.0
    assert result.F_best == pytest.approx(0.5, abs=1e-14)


def test_reevaluation_mismatch_is_reported(monkeypatch):
    original = synthesis.evaluate_F

    def drifted(prob, K):
        ev = original(prob, K)
        return synthesis.Evaluation(ev.F * (1.0 + 1e-6), ev.alpha_rom, ev.alpha_fom, ev.norm)

    monkeypatch.setattr(synthesis, "evaluate_F", drifted)
    result = algorithm1(problem(weighted_rom(), weighted_rom()), static_gain(0.0))
    assert result.status == SynthesisStatus.VERIFICATION_FAILED
    assert result.tracked_value == pytest.approx(WEIGHTED_OPTIMUM, rel=1e-8)
    assert result.F_best == pytest.approx(result.tracked_value * (1.0 + 1e-6), rel=1e-12)
    assert "differs" in result.message


def test_algorithm2_restabilizes_after_infeasible_iterate(monkeypatch):
    original = synthesis.minimize_constrained
    calls = []

    def leaves_feasible_set_once(oracle, x0, opts=None, on_iterate=None):
        out = original(oracle, x0, opts, on_iterate)
        calls.append(out)
        if len(calls) == 1:
            # hand back a controller that destabilizes the FOM
            return replace(out, status=SolveStatus.INFEASIBLE_ITERATE, x_final=np.array([-0.3]))
        return out

    monkeypatch.setattr(synthesis, "minimize_constrained", leaves_feasible_set_once)
    prob = problem(weighted_rom(), fragile_fom(), algorithm=Algorithm.ALG2)
    result = algorithm2(prob, static_gain(0.0))
    assert len(calls) == 2
    assert result.restabilizations == 1
    assert result.iterations_a >= 1
    phases = "".join(r.phase for r in result.history)
    first_a = phases.index("A")
    assert "B" in phases[:first_a] and "B" in phases[first_a:]
    assert result.finite
    assert result.alpha_fom < 0.0
    assert result.F_best <= weighted_F(0.0)
    check_history(result)


@pytest.mark.slow
def test_default_suite_algorithm2_keeps_both_loops_stable():
    cfg = SynthesisConfig(mode=Mode.R_PLUS_F, algorithm=Algorithm.ALG2, norm_tol=1e-7,
                          phase_a_maxit=300, phase_b_maxit_cumulative=300)
    for entry in default_suite():
        pair = generate_problem(entry.spec, entry.r)
        prob = SynthesisProblem(rom=pair.rom, fom=pair.fom, n_K=entry.n_K, config=cfg)
        K0 = random_controller((pair.rom.n_u, pair.rom.n_y), entry.n_K, entry.spec.seed)
        result = synthesize(prob, K0)
        assert result.finite, entry.name
        report = validate_controller(pair.fom, result.best_K)
        assert report.alpha_dense is not None and report.alpha_dense < 0.0, entry.name
        rom_alpha = np.linalg.eigvals(assemble_closed_loop(pair.rom, result.best_K).A).real.max()
        assert rom_alpha < 0.0, entry.name
        check_history(result)
