"""
Closed-loop assembly, transfer-function evaluation and matrix-free
closed-loop operators for large sparse plants.
"""
import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .exceptions import DimensionMismatchError, ResolventSingularError
from .models import Controller, PlantRealization, check_compatible

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """
    Closed-loop realization (A, B, C, D). n_plant is the number of plant
    states; the remaining n - n_plant states belong to the controller.
    """
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    n_plant: int

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_w(self) -> int:
        return self.B.shape[1]

    @property
    def n_z(self) -> int:
        return self.C.shape[0]

    def compressed(self) -> "CompressedLoop":
        """
        Equivalent realization with at most n inputs and n outputs.

        With D = 0, thin QR factors C = Qz Rz and B^T = Qw Rw give
        G(s) = Qz [Rz (sI - A)^-1 Rw^T] Qw^T, so singular values of G are
        those of the small system. Nothing is compressed when D != 0.
        """
        if np.any(self.D != 0.0):
            return CompressedLoop(loop=self, Qz=None, Qw=None)
        Qz = Qw = None
        C, B = self.C, self.B
        if self.n_z > self.n:
            Qz, C = sla.qr(self.C, mode="economic")
        if self.n_w > self.n:
            Qw, Rw = sla.qr(self.B.T, mode="economic")
            B = Rw.T
        small = ClosedLoop(A=self.A, B=B, C=C,
                           D=np.zeros((C.shape[0], B.shape[1])), n_plant=self.n_plant)
        return CompressedLoop(loop=small, Qz=Qz, Qw=Qw)


@dataclass(frozen=True, eq=False)
class CompressedLoop:
    loop: ClosedLoop
    Qz: Optional[np.ndarray]
    Qw: Optional[np.ndarray]

    def lift_output(self, u: np.ndarray) -> np.ndarray:
        return u if self.Qz is None else self.Qz @ u

    def lift_input(self, v: np.ndarray) -> np.ndarray:
        return v if self.Qw is None else self.Qw @ v


def assemble_closed_loop(plant: PlantRealization, K: Controller) -> ClosedLoop:
    """
    Assemble the closed loop of plant and controller (D22 = 0):

        A = [[A1 + B2 Dh C2, B2 Ch], [Bh C2, Ah]]
        B = [[B1 + B2 Dh D21], [Bh D21]]
        C = [C1 + D12 Dh C2, D12 Ch]
        D = D11 + D12 Dh D21

    Sparse blocks are densified; use closed_loop_operator for large plants.
    """
    check_compatible(plant, K)
    A1 = plant.dense_block("A1")
    B1 = plant.dense_block("B1")
    C1 = plant.dense_block("C1")
    B2, C2 = plant.B2, plant.C2
    D12, D21 = plant.D12, plant.D21
    Ah, Bh, Ch, Dh = K.Ahat, K.Bhat, K.Chat, K.Dhat

    A = np.block([[A1 + B2 @ Dh @ C2, B2 @ Ch],
                  [Bh @ C2, Ah]])
    B = np.vstack([B1 + B2 @ Dh @ D21, Bh @ D21])
    C = np.hstack([C1 + D12 @ Dh @ C2, D12 @ Ch])
    D = plant.D11 + D12 @ Dh @ D21
    return ClosedLoop(A=A, B=B, C=C, D=D, n_plant=plant.n_x)


def resolvent_factor(A: np.ndarray, omega: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    LU factors of (i*omega*I - A). Raises ResolventSingularError when the
    factorization exposes a (numerically) zero pivot.
    """
    n = A.shape[0]
    M = 1j * omega * np.eye(n) - A
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if n and (not np.all(np.isfinite(pivots))
              or pivots.min() <= n * np.finfo(float).eps * max(pivots.max(), 1.0)):
        raise ResolventSingularError(
            f"(i*omega*I - A) is singular at omega={omega!r}: imaginary-axis eigenvalue"
        )
    return lu, piv


def transfer_value(cl: ClosedLoop, omega: float) -> np.ndarray:
    """
    G(i*omega) = C (i*omega*I - A)^-1 B + D, using one LU factorization and
    a batched solve over the n_w right-hand sides.
    """
    if cl.n == 0:
        return cl.D.astype(complex)
    lu_piv = resolvent_factor(cl.A, omega)
    X = sla.lu_solve(lu_piv, cl.B.astype(complex), check_finite=False)
    return cl.C @ X + cl.D


class ClosedLoopOperator:
    """
    Matrix-free closed-loop state matrix for a (sparse) plant.

    apply(v) and apply_transpose(v) use only products with A1 (or A1^T),
    B2, C2 and the controller blocks; the dense closed loop is never formed.
    """

    def __init__(self, plant: PlantRealization, K: Controller):
        check_compatible(plant, K)
        self._A1 = plant.A1
        self._A1T = plant.A1.T.tocsr() if sp.issparse(plant.A1) else plant.A1.T
        self._B2 = plant.B2
        self._C2 = plant.C2
        self._K = K
        self.n_x = plant.n_x
        self.n_K = K.order
        self.n = self.n_x + self.n_K

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    @property
    def controller(self) -> Controller:
        return self._K

    def _split(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        v = np.asarray(v)
        if v.shape[0] != self.n:
            raise DimensionMismatchError(f"vector has length {v.shape[0]}, expected {self.n}")
        return v[:self.n_x], v[self.n_x:]

    def apply(self, v: np.ndarray) -> np.ndarray:
        v1, v2 = self._split(v)
        K = self._K
        y = self._C2 @ v1
        top = self._A1 @ v1 + self._B2 @ (K.Dhat @ y + K.Chat @ v2)
        bottom = K.Bhat @ y + K.Ahat @ v2
        return np.concatenate([np.asarray(top).ravel(), np.asarray(bottom).ravel()])

    def apply_transpose(self, w: np.ndarray) -> np.ndarray:
        w1, w2 = self._split(w)
        K = self._K
        t = self._B2.T @ w1
        top = self._A1T @ w1 + self._C2.T @ (K.Dhat.T @ t + K.Bhat.T @ w2)
        bottom = K.Chat.T @ t + K.Ahat.T @ w2
        return np.concatenate([np.asarray(top).ravel(), np.asarray(bottom).ravel()])

    def as_linear_operator(self, transpose: bool = False) -> LinearOperator:
        if transpose:
            return LinearOperator(self.shape, matvec=self.apply_transpose,
                                  rmatvec=self.apply, dtype=float)
        return LinearOperator(self.shape, matvec=self.apply,
                              rmatvec=self.apply_transpose, dtype=float)

    def to_dense(self) -> np.ndarray:
        """
        Densely assembled closed-loop state matrix; for small problems and tests.
        """
        return np.column_stack([self.apply(e) for e in np.eye(self.n)]) if self.n else np.zeros((0, 0))


def closed_loop_operator(fom: PlantRealization, K: Controller) -> ClosedLoopOperator:
    if not fom.is_sparse:
        logger.debug("closed_loop_operator called on a dense plant (n_x=%d)", fom.n_x)
    return ClosedLoopOperator(fom, K)
