import numpy as np
import pytest
import scipy.sparse as sp

from locsyn.exceptions import DimensionMismatchError, NonzeroFeedthroughError, ResolventSingularError
from locsyn.models import Controller, PlantRealization
from locsyn.plant import ClosedLoop, assemble_closed_loop, closed_loop_operator, transfer_value
from locsyn.probgen import generate_fom, heat_spec, random_controller


def random_plant(rng, n_x=5, n_w=2, n_u=2, n_z=3, n_y=2, feedthrough=True):
    A1 = rng.standard_normal((n_x, n_x)) - 3.0 * np.eye(n_x)
    blocks = dict(
        A1=A1,
        B1=rng.standard_normal((n_x, n_w)),
        B2=rng.standard_normal((n_x, n_u)),
        C1=rng.standard_normal((n_z, n_x)),
        C2=rng.standard_normal((n_y, n_x)),
    )
    if feedthrough:
        blocks.update(
            D11=rng.standard_normal((n_z, n_w)),
            D12=rng.standard_normal((n_z, n_u)),
            D21=rng.standard_normal((n_y, n_w)),
        )
    return PlantRealization.from_blocks(**blocks)


def random_stable_controller(rng, n_K, n_u, n_y):
    return Controller(
        Ahat=0.3 * rng.standard_normal((n_K, n_K)) - 2.0 * np.eye(n_K),
        Bhat=rng.standard_normal((n_K, n_y)),
        Chat=rng.standard_normal((n_u, n_K)),
        Dhat=rng.standard_normal((n_u, n_y)),
    )


def tf(A, B, C, D, omega):
    n = A.shape[0]
    return C @ np.linalg.solve(1j * omega * np.eye(n) - A, B.astype(complex)) + D


def test_scalar_static_loop():
    plant = PlantRealization.from_blocks(A1=[[-2.0]], B1=[[1.0]], B2=[[1.0]], C1=[[1.0]], C2=[[1.0]])
    K = Controller(Ahat=np.zeros((0, 0)), Bhat=np.zeros((0, 1)), Chat=np.zeros((1, 0)), Dhat=[[1.0]])
    cl = assemble_closed_loop(plant, K)
    assert cl.A.shape == (1, 1)
    assert cl.A[0, 0] == pytest.approx(-1.0)
    assert cl.n_plant == 1


def test_closed_loop_matches_lft():
    rng = np.random.default_rng(7)
    plant = random_plant(rng)
    K = random_stable_controller(rng, 2, plant.n_u, plant.n_y)
    cl = assemble_closed_loop(plant, K)
    assert cl.A.shape == (7, 7)
    assert cl.B.shape == (7, plant.n_w)
    assert cl.C.shape == (plant.n_z, 7)
    for omega in (0.0, 0.7, 3.1):
        P11 = tf(plant.A1, plant.B1, plant.C1, plant.D11, omega)
        P12 = tf(plant.A1, plant.B2, plant.C1, plant.D12, omega)
        P21 = tf(plant.A1, plant.B1, plant.C2, plant.D21, omega)
        P22 = tf(plant.A1, plant.B2, plant.C2, plant.D22, omega)
        Kw = tf(K.Ahat, K.Bhat, K.Chat, K.Dhat, omega)
        expected = P11 + P12 @ Kw @ np.linalg.solve(np.eye(plant.n_y) - P22 @ Kw, P21)
        np.testing.assert_allclose(transfer_value(cl, omega), expected, rtol=1e-9, atol=1e-10)


def test_closed_loop_affine_in_controller():
    rng = np.random.default_rng(11)
    plant = random_plant(rng)
    K1 = random_stable_controller(rng, 3, plant.n_u, plant.n_y)
    K2 = random_stable_controller(rng, 3, plant.n_u, plant.n_y)
    Km = Controller.from_vector(0.5 * (K1.to_vector() + K2.to_vector()), 3, plant.n_u, plant.n_y)
    cl1, cl2, clm = (assemble_closed_loop(plant, K) for K in (K1, K2, Km))
    for name in ("A", "B", "C", "D"):
        np.testing.assert_allclose(getattr(clm, name),
                                   0.5 * (getattr(cl1, name) + getattr(cl2, name)),
                                   rtol=1e-13, atol=1e-13)


def test_nonzero_d22_rejected():
    with pytest.raises(NonzeroFeedthroughError):
        PlantRealization.from_blocks(A1=[[-1.0]], B1=[[1.0]], B2=[[1.0]], C1=[[1.0]], C2=[[1.0]],
                                     D22=[[0.5]])


def test_block_shape_mismatch_rejected():
    with pytest.raises(DimensionMismatchError):
        PlantRealization.from_blocks(A1=np.eye(2), B1=np.ones((3, 1)), B2=np.ones((2, 1)),
                                     C1=np.ones((1, 2)), C2=np.ones((1, 2)))


def test_controller_of_wrong_size_rejected():
    plant = random_plant(np.random.default_rng(0))
    K = Controller.zeros(1, plant.n_u + 1, plant.n_y)
    with pytest.raises(DimensionMismatchError):
        assemble_closed_loop(plant, K)


def test_controller_vector_layout():
    K = Controller.from_vector(np.arange(1.0, 21.0), 2, 2, 3)
    assert K.Ahat.tolist() == [[1.0, 2.0], [3.0, 4.0]]
    assert K.Bhat.tolist() == [[5.0, 6.0, 7.0], [8.0, 9.0, 10.0]]
    assert K.Chat.tolist() == [[11.0, 12.0], [13.0, 14.0]]
    assert K.Dhat.tolist() == [[15.0, 16.0, 17.0], [18.0, 19.0, 20.0]]
    assert np.array_equal(K.to_vector(), np.arange(1.0, 21.0))
    with pytest.raises(DimensionMismatchError):
        Controller.from_vector(np.zeros(5), 2, 2, 3)


@pytest.mark.parametrize("A,omega,expected", [
    ([[-1.0]], 0.0, 1.0),
    ([[-1.0]], 1.0, 1.0 / (1.0 + 1.0j)),
])
def test_transfer_value_first_order(A, omega, expected):
    cl = ClosedLoop(A=np.array(A), B=np.eye(1), C=np.eye(1), D=np.zeros((1, 1)), n_plant=1)
    assert transfer_value(cl, omega)[0, 0] == pytest.approx(expected, abs=1e-15)


def test_transfer_value_matches_direct_inverse_and_symmetry():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 6)) - 4.0 * np.eye(6)
    B = rng.standard_normal((6, 2))
    C = rng.standard_normal((3, 6))
    D = rng.standard_normal((3, 2))
    cl = ClosedLoop(A=A, B=B, C=C, D=D, n_plant=6)
    G = transfer_value(cl, 2.0)
    direct = C @ np.linalg.inv(2.0j * np.eye(6) - A) @ B + D
    assert np.linalg.norm(G - direct) <= 1e-12 * max(1.0, np.linalg.norm(direct))
    np.testing.assert_allclose(transfer_value(cl, -2.0), np.conj(G), rtol=1e-12, atol=1e-12)


def test_resolvent_singular_on_imaginary_axis():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    cl = ClosedLoop(A=A, B=np.ones((2, 1)), C=np.ones((1, 2)), D=np.zeros((1, 1)), n_plant=2)
    with pytest.raises(ResolventSingularError):
        transfer_value(cl, 1.0)


def test_compression_preserves_singular_values():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 4)) - 3.0 * np.eye(4)
    cl = ClosedLoop(A=A, B=rng.standard_normal((4, 9)), C=rng.standard_normal((11, 4)),
                    D=np.zeros((11, 9)), n_plant=4)
    comp = cl.compressed()
    assert comp.loop.n_w <= 4 and comp.loop.n_z <= 4
    full = np.linalg.svd(transfer_value(cl, 0.9), compute_uv=False)
    small = np.linalg.svd(transfer_value(comp.loop, 0.9), compute_uv=False)
    np.testing.assert_allclose(small, full[:small.size], rtol=1e-12)


@pytest.fixture(scope="module")
def heat_fom():
    return generate_fom(heat_spec(10, 3, convection=(4.0, -2.0)))


def test_operator_zero_controller_applies_a1(heat_fom):
    K = Controller.zeros(0, heat_fom.n_u, heat_fom.n_y)
    op = closed_loop_operator(heat_fom, K)
    e1 = np.zeros(op.n)
    e1[0] = 1.0
    np.testing.assert_allclose(op.apply(e1), heat_fom.A1 @ e1, rtol=0, atol=1e-12)


def test_operator_matches_dense_closed_loop(heat_fom):
    K = random_controller((heat_fom.n_u, heat_fom.n_y), 3, seed=4, scale=1.0)
    op = closed_loop_operator(heat_fom, K)
    A = assemble_closed_loop(heat_fom, K).A
    v = np.random.default_rng(1).standard_normal(op.n)
    np.testing.assert_allclose(op.apply(v), A @ v, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(op.to_dense(), A, rtol=1e-12, atol=1e-9)


def test_operator_adjoint_identity(heat_fom):
    rng = np.random.default_rng(9)
    K = random_controller((heat_fom.n_u, heat_fom.n_y), 2, seed=2, scale=1.0)
    op = closed_loop_operator(heat_fom, K)
    for _ in range(100):
        u = rng.standard_normal(op.n)
        w = rng.standard_normal(op.n)
        lhs = w @ op.apply(u)
        rhs = op.apply_transpose(w) @ u
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_operator_rejects_wrong_length(heat_fom):
    op = closed_loop_operator(heat_fom, Controller.zeros(1, heat_fom.n_u, heat_fom.n_y))
    with pytest.raises(DimensionMismatchError):
        op.apply(np.zeros(op.n - 1))


def test_sparse_blocks_stay_sparse(heat_fom):
    assert heat_fom.is_sparse
    assert sp.issparse(heat_fom.B1) and sp.issparse(heat_fom.C1)
    assert isinstance(heat_fom.B2, np.ndarray)
