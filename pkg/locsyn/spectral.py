"""
Rightmost eigenvalues (dense and matrix-free) and the gradient of the
spectral abscissa with respect to the controller blocks.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigs

from .config import ArnoldiOptions
from .exceptions import EigenSolverError
from .models import Controller, PlantRealization, check_compatible
from .plant import ClosedLoopOperator

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12
SEPARATION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class EigenTriple:
    """
    Rightmost eigenvalue lam with right eigenvector x (unit norm) and left
    eigenvector y scaled so that y^H x = 1.

    simple is False for repeated or defective eigenvalues; unique is False
    when another eigenvalue (other than the conjugate) attains the same
    real part. The abscissa is differentiable only when both hold.
    """
    lam: complex
    x: np.ndarray
    y: np.ndarray
    simple: bool = True
    unique: bool = True

    @property
    def alpha(self) -> float:
        return float(self.lam.real)


@dataclass(frozen=True, eq=False)
class ControllerGradient:
    """
    Gradient of a scalar function of the controller, block by block.
    """
    dAhat: np.ndarray
    dBhat: np.ndarray
    dChat: np.ndarray
    dDhat: np.ndarray
    reliable: bool = True

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.dAhat.ravel(), self.dBhat.ravel(),
                               self.dChat.ravel(), self.dDhat.ravel()])

    @classmethod
    def from_vector(cls, g, n_K: int, n_u: int, n_y: int, reliable: bool = True) -> "ControllerGradient":
        K = Controller.from_vector(g, n_K, n_u, n_y)
        return cls(K.Ahat, K.Bhat, K.Chat, K.Dhat, reliable)


def select_rightmost(values: np.ndarray) -> int:
    """
    Index of the eigenvalue with largest real part; among ties the one with
    largest |Im|, and of a conjugate pair the one with positive imaginary part.
    """
    re = values.real
    top = re.max()
    tied = np.flatnonzero(re >= top - TIE_TOL * max(1.0, abs(top)))
    best = max(tied, key=lambda i: (abs(values[i].imag), values[i].imag))
    return int(best)


def _flags(values: np.ndarray, index: int, overlap: float) -> Tuple[bool, bool]:
    lam = values[index]
    scale = max(1.0, abs(lam))
    others = np.delete(values, index)
    if lam.imag != 0.0:
        partner = np.argmin(np.abs(others - np.conj(lam))) if others.size else None
        if partner is not None and abs(others[partner] - np.conj(lam)) <= SEPARATION_TOL * scale:
            others = np.delete(others, partner)
    simple = bool(overlap > SEPARATION_TOL and not np.any(np.abs(others - lam) <= SEPARATION_TOL * scale))
    unique = bool(not np.any(others.real >= lam.real - SEPARATION_TOL * scale))
    return simple, unique


def _normalized_triple(values, index, x, y) -> EigenTriple:
    x = x / np.linalg.norm(x)
    y = y / np.linalg.norm(y)
    overlap = abs(np.vdot(y, x))
    simple, unique = _flags(values, index, overlap)
    if overlap > np.finfo(float).eps:
        y = y / np.conj(np.vdot(y, x))
    return EigenTriple(lam=complex(values[index]), x=x, y=y, simple=simple, unique=unique)


def spectral_abscissa_dense(M: np.ndarray) -> Tuple[float, EigenTriple]:
    """
    Spectral abscissa of a dense matrix together with the rightmost eigentriple,
    the left eigenvector coming from the same decomposition.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise EigenSolverError(f"spectral abscissa needs a nonempty square matrix, got {M.shape}")
    try:
        values, vl, vr = sla.eig(M, left=True, right=True, check_finite=True)
    except (sla.LinAlgError, ValueError) as e:
        raise EigenSolverError(f"dense eigendecomposition failed: {e}") from e
    index = select_rightmost(values)
    triple = _normalized_triple(values, index, vr[:, index], vl[:, index])
    return triple.alpha, triple


def _arpack_rightmost(linop, n: int, k: int, ncv: int, opts: ArnoldiOptions, v0):
    values, vectors = eigs(linop, k=k, which="LR", ncv=ncv, tol=opts.tol,
                           maxiter=opts.max_restarts, v0=v0)
    return values, vectors


def _dense_fallback(op: ClosedLoopOperator, reason: str) -> Tuple[float, EigenTriple]:
    logger.warning("Arnoldi failed (%s); using dense eigensolver for n=%d", reason, op.n)
    return spectral_abscissa_dense(op.to_dense())


def rightmost_eigentriple_iterative(
    op: ClosedLoopOperator,
    opts: Optional[ArnoldiOptions] = None,
) -> Tuple[float, EigenTriple]:
    """
    Rightmost eigentriple of a matrix-free closed loop by implicitly
    restarted Arnoldi: one run on the operator for (lam, x), a second run on
    its transpose for the left eigenvector. Falls back to the dense solver
    when Arnoldi fails and n <= opts.dense_fallback_threshold.
    """
    opts = opts or ArnoldiOptions()
    n = op.n
    k = min(opts.n_requested, n - 2)
    if k < 1:
        return spectral_abscissa_dense(op.to_dense())
    ncv = max(opts.subspace_for(n), k + 2)
    v0 = np.random.default_rng(0).standard_normal(n)

    last_error = ""
    for attempt in range(2):
        try:
            values, vectors = _arpack_rightmost(op.as_linear_operator(), n, k, ncv, opts, v0)
            index = select_rightmost(values)
            lam = values[index]
            tvalues, tvectors = _arpack_rightmost(op.as_linear_operator(transpose=True),
                                                  n, k, ncv, opts, v0)
        except (ArpackNoConvergence, ArpackError) as e:
            last_error = str(e)
        else:
            tindex = int(np.argmin(np.abs(tvalues - np.conj(lam))))
            mismatch = abs(tvalues[tindex] - np.conj(lam))
            if mismatch <= opts.transpose_match_tol * max(1.0, abs(lam)):
                triple = _normalized_triple(values, index, vectors[:, index], tvectors[:, tindex])
                return triple.alpha, triple
            last_error = f"transpose run eigenvalue differs by {mismatch:.3e}"
        if attempt == 0:
            logger.debug("Arnoldi retry with enlarged subspace: %s", last_error)
            ncv = min(n, 2 * ncv)

    if n <= opts.dense_fallback_threshold:
        return _dense_fallback(op, last_error)
    raise EigenSolverError(f"Arnoldi did not converge for n={n}: {last_error}")


def abscissa_gradient(plant: PlantRealization, K: Controller, triple: EigenTriple) -> ControllerGradient:
    """
    Gradient of alpha(A_cl) from d(lam) = y^H dA x and the affine block
    structure of the closed loop; dA is never formed.
    """
    check_compatible(plant, K)
    n_x = plant.n_x
    x1, x2 = triple.x[:n_x], triple.x[n_x:]
    ybar = np.conj(triple.y)
    y1, y2 = ybar[:n_x], ybar[n_x:]
    c2x = plant.C2 @ x1
    b2y = plant.B2.T @ y1
    return ControllerGradient(
        dAhat=np.real(np.outer(y2, x2)),
        dBhat=np.real(np.outer(y2, c2x)),
        dChat=np.real(np.outer(b2y, x2)),
        dDhat=np.real(np.outer(b2y, c2x)),
        reliable=triple.simple and triple.unique,
    )
