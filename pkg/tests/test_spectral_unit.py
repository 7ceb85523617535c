import numpy as np
import pytest
import scipy.sparse as sp

from locsyn.config import ArnoldiOptions
from locsyn.exceptions import EigenSolverError
from locsyn.models import Controller, PlantRealization
from locsyn.plant import assemble_closed_loop, closed_loop_operator
from locsyn.probgen import generate_fom, heat_spec, random_controller
from locsyn.spectral import (
    abscissa_gradient,
    rightmost_eigentriple_iterative,
    select_rightmost,
    spectral_abscissa_dense,
)


def test_diagonal_abscissa():
    alpha, triple = spectral_abscissa_dense(np.diag([-1.0, -2.0]))
    assert alpha == pytest.approx(-1.0)
    assert abs(triple.x[0]) == pytest.approx(1.0)
    assert abs(np.vdot(triple.y, triple.x) - 1.0) <= 1e-12
    assert triple.simple and triple.unique


def test_jordan_block_flagged_not_simple():
    alpha, triple = spectral_abscissa_dense(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert alpha == pytest.approx(0.0, abs=1e-12)
    assert not triple.simple


def test_tie_breaks_towards_positive_imaginary_part():
    values = np.array([-1.0 + 0j, -1.0 - 2.0j, -1.0 + 2.0j, -3.0 + 0j])
    assert select_rightmost(values) == 2


def test_conjugate_pair_is_unique():
    A = np.array([[-1.0, 2.0], [-2.0, -1.0]])
    _, triple = spectral_abscissa_dense(A)
    assert triple.lam.imag > 0
    assert triple.unique


def test_empty_matrix_rejected():
    with pytest.raises(EigenSolverError):
        spectral_abscissa_dense(np.zeros((0, 0)))


def test_dense_matches_numpy_on_random_matrix():
    M = np.random.default_rng(0).standard_normal((50, 50))
    alpha, triple = spectral_abscissa_dense(M)
    assert abs(alpha - np.linalg.eigvals(M).real.max()) <= 1e-10
    residual = M @ triple.x - triple.lam * triple.x
    assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(M)


def test_iterative_on_sparse_diagonal():
    n = 200
    plant = PlantRealization.from_blocks(
        A1=sp.diags(-np.arange(1.0, n + 1.0), format="csr"),
        B1=sp.csr_matrix(np.ones((n, 1))), B2=np.ones((n, 1)),
        C1=sp.identity(n, format="csr"), C2=np.ones((1, n)),
    )
    op = closed_loop_operator(plant, Controller.zeros(0, 1, 1))
    alpha, triple = rightmost_eigentriple_iterative(op)
    assert alpha == pytest.approx(-1.0, abs=1e-10)
    assert abs(abs(triple.x[0]) - 1.0) <= 1e-8
    assert abs(np.vdot(triple.y, triple.x) - 1.0) <= 1e-8


def test_iterative_matches_dense_on_heat_grid():
    fom = generate_fom(heat_spec(20, 2))
    rng = np.random.default_rng(1)
    K = Controller(
        Ahat=-np.eye(4) + 0.1 * rng.standard_normal((4, 4)),
        Bhat=rng.standard_normal((4, fom.n_y)),
        Chat=rng.standard_normal((fom.n_u, 4)),
        Dhat=rng.standard_normal((fom.n_u, fom.n_y)),
    )
    op = closed_loop_operator(fom, K)
    assert op.n == 404
    alpha_it, _ = rightmost_eigentriple_iterative(op)
    alpha_dense, _ = spectral_abscissa_dense(assemble_closed_loop(fom, K).A)
    assert abs(alpha_it - alpha_dense) <= 1e-8


@pytest.mark.parametrize("m", [8, 10, 12, 14, 16])
@pytest.mark.parametrize("convection", [(0.0, 0.0), (10.0, 5.0), (-5.0, 15.0), (25.0, 0.0)])
def test_iterative_matches_dense_across_grids(m, convection):
    fom = generate_fom(heat_spec(m, 3, convection=convection))
    K = random_controller((fom.n_u, fom.n_y), 3, seed=m, scale=1.0)
    op = closed_loop_operator(fom, K)
    alpha_it, _ = rightmost_eigentriple_iterative(op)
    alpha_dense, _ = spectral_abscissa_dense(assemble_closed_loop(fom, K).A)
    assert abs(alpha_it - alpha_dense) <= 1e-8


def test_iterative_residual_on_convection_grid():
    fom = generate_fom(heat_spec(30, 2, convection=(20.0, 5.0)))
    op = closed_loop_operator(fom, Controller.zeros(0, fom.n_u, fom.n_y))
    assert op.n == 900
    alpha, triple = rightmost_eigentriple_iterative(op)
    assert alpha < 0.0
    residual = op.apply(triple.x) - triple.lam * triple.x
    assert np.linalg.norm(residual) <= 1e-8 * max(1.0, abs(triple.lam))
    left = op.apply_transpose(np.conj(triple.y)) - triple.lam * np.conj(triple.y)
    assert np.linalg.norm(left) <= 1e-8 * max(1.0, abs(triple.lam)) * np.linalg.norm(triple.y)


def test_iterative_dense_fallback(monkeypatch):
    from scipy.sparse.linalg import ArpackNoConvergence

    import locsyn.spectral as spectral

    def fail(*args, **kwargs):
        raise ArpackNoConvergence("no convergence", np.zeros(0), np.zeros((0, 0)))

    monkeypatch.setattr(spectral, "_arpack_rightmost", fail)
    fom = generate_fom(heat_spec(6, 2))
    op = closed_loop_operator(fom, Controller.zeros(1, fom.n_u, fom.n_y))
    alpha, _ = rightmost_eigentriple_iterative(op)
    assert alpha == pytest.approx(spectral_abscissa_dense(op.to_dense())[0], abs=1e-12)
    with pytest.raises(EigenSolverError):
        rightmost_eigentriple_iterative(op, ArnoldiOptions(dense_fallback_threshold=0))


def test_gradient_scalar_static_gain():
    plant = PlantRealization.from_blocks(A1=[[-2.0]], B1=[[1.0]], B2=[[1.0]], C1=[[1.0]], C2=[[1.0]])
    K = Controller(Ahat=np.zeros((0, 0)), Bhat=np.zeros((0, 1)), Chat=np.zeros((1, 0)), Dhat=[[0.5]])
    alpha, triple = spectral_abscissa_dense(assemble_closed_loop(plant, K).A)
    assert alpha == pytest.approx(-1.5)
    grad = abscissa_gradient(plant, K, triple)
    assert grad.dDhat[0, 0] == pytest.approx(1.0)
    assert grad.reliable


def test_gradient_bhat_vanishes_when_output_misses_mode():
    plant = PlantRealization.from_blocks(
        A1=np.diag([-1.0, -3.0]), B1=np.ones((2, 1)), B2=np.ones((2, 1)),
        C1=np.ones((1, 2)), C2=[[0.0, 1.0]],
    )
    K = Controller(Ahat=[[-5.0]], Bhat=[[0.0]], Chat=[[0.0]], Dhat=[[0.0]])
    alpha, triple = spectral_abscissa_dense(assemble_closed_loop(plant, K).A)
    assert alpha == pytest.approx(-1.0)
    grad = abscissa_gradient(plant, K, triple)
    np.testing.assert_allclose(grad.dBhat, 0.0, atol=1e-14)
    np.testing.assert_allclose(grad.dDhat, 0.0, atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(21 + seed)
    n_K, n_u, n_y = 2, 2, 2
    for _ in range(20):
        plant = PlantRealization.from_blocks(
            A1=rng.standard_normal((8, 8)) - 2.0 * np.eye(8),
            B1=rng.standard_normal((8, 1)), B2=rng.standard_normal((8, n_u)),
            C1=rng.standard_normal((1, 8)), C2=rng.standard_normal((n_y, 8)),
        )
        x = 0.3 * rng.standard_normal(Controller.vector_length(n_K, n_u, n_y))
        K = Controller.from_vector(x, n_K, n_u, n_y)
        alpha, triple = spectral_abscissa_dense(assemble_closed_loop(plant, K).A)
        if triple.simple and triple.unique:
            break
    else:
        pytest.skip("no differentiable sample for this seed")
    grad = abscissa_gradient(plant, K, triple).to_vector()
    h = 1e-6
    fd = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        up = spectral_abscissa_dense(assemble_closed_loop(plant, Controller.from_vector(x + step, n_K, n_u, n_y)).A)[0]
        down = spectral_abscissa_dense(assemble_closed_loop(plant, Controller.from_vector(x - step, n_K, n_u, n_y)).A)[0]
        fd[i] = (up - down) / (2.0 * h)
    scale = max(1.0, np.abs(fd).max())
    np.testing.assert_array_less(np.abs(grad - fd), 1e-4 * scale)
