"""
L-infinity norm of a closed-loop transfer function by the BBBS level-set
iteration (Boyd-Balakrishnan, Bruinsma-Steinbuch), and its gradient with
respect to the controller blocks.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .config import NormOptions
from .exceptions import InfiniteNormError, LevelNotAdmissibleError, ResolventSingularError
from .models import Controller, PlantRealization, check_compatible
from .plant import ClosedLoop, CompressedLoop, assemble_closed_loop, resolvent_factor, transfer_value
from .spectral import ControllerGradient

logger = logging.getLogger(__name__)

# Upper bound on complex entries held by one batched frequency sweep.
SWEEP_CHUNK_ENTRIES = 4_000_000


@dataclass(frozen=True, eq=False)
class SingularTriple:
    """
    Largest singular value sigma of G(i*omega) with unit singular vectors,
    u^H G(i*omega) v = sigma.
    """
    sigma: float
    u: np.ndarray
    v: np.ndarray
    omega: float
    simple: bool = True
    unique: bool = True


@dataclass(frozen=True, eq=False)
class NormResult:
    value: float
    peak: SingularTriple
    iterations: int
    certified: bool

    @property
    def omega(self) -> float:
        return self.peak.omega


def _peak_of(comp: CompressedLoop, omega: float, simplicity_gap: float) -> SingularTriple:
    # G(i*omega) tends to D as omega -> inf
    G = transfer_value(comp.loop, omega) if np.isfinite(omega) else comp.loop.D.astype(complex)
    U, s, Vh = sla.svd(G, full_matrices=False)
    if s.size == 0:
        return SingularTriple(0.0, comp.lift_output(np.zeros(comp.loop.n_z, complex)),
                              comp.lift_input(np.zeros(comp.loop.n_w, complex)), omega, True)
    simple = s.size == 1 or (s[0] - s[1]) > simplicity_gap * s[0]
    u = comp.lift_output(U[:, 0])
    v = comp.lift_input(np.conj(Vh[0]))
    return SingularTriple(sigma=float(s[0]), u=u, v=v, omega=float(omega), simple=bool(simple))


def sigma_max_at(cl: ClosedLoop, omega: float, opts: Optional[NormOptions] = None) -> SingularTriple:
    """
    Largest singular value of G(i*omega) with its singular vectors.
    """
    opts = opts or NormOptions()
    return _peak_of(cl.compressed(), omega, opts.simplicity_gap)


def sigma_max_sweep(cl: ClosedLoop, omegas: Sequence[float]) -> np.ndarray:
    """
    sigma_max(G(i*omega)) for every omega, with batched solves and SVDs.
    """
    omegas = np.asarray(omegas, dtype=float).ravel()
    if cl.n == 0:
        s = np.linalg.norm(cl.D, 2) if cl.D.size else 0.0
        return np.full(omegas.shape, s)
    n = cl.n
    chunk = max(1, SWEEP_CHUNK_ENTRIES // max(1, n * max(n, cl.n_w)))
    eye = np.eye(n)
    out = np.empty(omegas.shape)
    for start in range(0, omegas.size, chunk):
        w = omegas[start:start + chunk]
        M = 1j * w[:, None, None] * eye - cl.A
        try:
            X = np.linalg.solve(M, np.broadcast_to(cl.B, (w.size,) + cl.B.shape))
        except np.linalg.LinAlgError as e:
            raise ResolventSingularError(f"singular resolvent in frequency sweep: {e}") from e
        G = cl.C @ X + cl.D
        if not np.all(np.isfinite(G)):
            raise ResolventSingularError("non-finite transfer value in frequency sweep")
        s = np.linalg.svd(G, compute_uv=False)
        out[start:start + chunk] = s[:, 0] if s.shape[-1] else 0.0
    return out


def _argmax(omegas: np.ndarray, sigmas: np.ndarray) -> int:
    # max by value, ties by lower frequency
    return int(np.lexsort((omegas, -sigmas))[0])


def hamiltonian(cl: ClosedLoop, gamma: float) -> np.ndarray:
    """
    Hamiltonian H(gamma) whose imaginary-axis eigenvalues i*omega mark the
    frequencies where gamma is a singular value of G(i*omega).
    """
    A, B, C, D = cl.A, cl.B, cl.C, cl.D
    d_norm = np.linalg.norm(D, 2) if D.size else 0.0
    if gamma <= d_norm:
        raise LevelNotAdmissibleError(f"gamma={gamma!r} must exceed sigma_max(D)={d_norm!r}")
    if not np.any(D != 0.0):
        return np.block([[A, (B @ B.T) / gamma],
                         [-(C.T @ C) / gamma, -A.T]])
    R = D.T @ D - gamma ** 2 * np.eye(D.shape[1])
    S = D @ D.T - gamma ** 2 * np.eye(D.shape[0])
    RiDtC = sla.solve(R, D.T @ C)
    RiBt = sla.solve(R, B.T)
    return np.block([[A - B @ RiDtC, -gamma * B @ RiBt],
                     [gamma * C.T @ sla.solve(S, C), -A.T + C.T @ D @ RiBt]])


def crossing_frequencies(eigenvalues: np.ndarray, gamma: float, threshold: float) -> np.ndarray:
    """
    Nonnegative, deduplicated frequencies of the (numerically) imaginary
    eigenvalues of H(gamma).
    """
    on_axis = eigenvalues[np.abs(eigenvalues.real) <= threshold]
    freqs = np.sort(np.abs(on_axis.imag))
    if freqs.size == 0:
        return freqs
    tol = 1e-10 * max(1.0, gamma)
    keep = np.concatenate([[True], np.diff(freqs) > tol])
    return freqs[keep]


def _initial_frequencies(poles: np.ndarray, grid_points: int) -> np.ndarray:
    mags = np.abs(poles)
    scale = mags.max() if mags.size and mags.max() > 0 else 1.0
    grid = np.logspace(np.log10(1e-3 * scale), np.log10(1e3 * scale), grid_points)
    return np.unique(np.concatenate([[0.0], np.abs(poles.imag), mags, grid]))


def linf_norm_bbbs(cl: ClosedLoop, tol: Optional[float] = None,
                   opts: Optional[NormOptions] = None) -> NormResult:
    """
    L-infinity norm by the BBBS level-set iteration.

    gamma starts at the largest sigma_max over omega = 0, the pole
    frequencies and a logarithmic grid, raised to sigma_max(D) when the
    supremum is approached as omega -> inf (the peak is then reported at
    omega = inf). Each iteration looks for
    imaginary-axis eigenvalues of H(gamma*(1 + 2*tol)); without any the
    level is certified, otherwise sigma_max at the interval midpoints gives
    the next, larger gamma.
    """
    opts = opts or NormOptions()
    if tol is not None:
        opts = opts.model_copy(update={"tol": tol})
    poles = sla.eigvals(cl.A) if cl.n else np.zeros(0, complex)
    a_scale = max(1.0, np.linalg.norm(cl.A, "fro")) if cl.n else 1.0
    if poles.size and np.any(np.abs(poles.real) <= 1e-13 * a_scale):
        raise InfiniteNormError("closed loop has an eigenvalue on the imaginary axis")

    comp = cl.compressed()
    small = comp.loop
    omegas = _initial_frequencies(poles, opts.grid_points)
    sigmas = sigma_max_sweep(small, omegas)
    best = _argmax(omegas, sigmas)
    gamma, omega_peak = float(sigmas[best]), float(omegas[best])
    d_norm = np.linalg.norm(small.D, 2) if small.D.size else 0.0
    if d_norm > gamma:
        gamma, omega_peak = float(d_norm), float("inf")

    certified = False
    unique = True
    iterations = 0
    if gamma == 0.0:
        certified = True
    while not certified and iterations < opts.max_level_iterations:
        iterations += 1
        level = gamma * (1.0 + 2.0 * opts.tol)
        H = hamiltonian(small, level)
        mu = sla.eigvals(H)
        freqs = crossing_frequencies(mu, level, opts.imag_axis_tol * np.linalg.norm(H, "fro"))
        if freqs.size == 0:
            certified = True
            break
        mids = np.unique(np.concatenate([[0.0], 0.5 * (freqs[1:] + freqs[:-1])]))
        mid_sigmas = sigma_max_sweep(small, mids)
        order = np.lexsort((mids, -mid_sigmas))
        top = order[0]
        unique = not (order.size > 1
                      and mid_sigmas[order[1]] >= (1.0 - opts.uniqueness_gap) * mid_sigmas[top]
                      and mid_sigmas[order[1]] > level)
        logger.debug("BBBS level %d: gamma=%.16g crossings=%d best=%.16g at %.6g",
                     iterations, gamma, freqs.size, mid_sigmas[top], mids[top])
        if mid_sigmas[top] <= gamma:
            logger.debug("BBBS stagnated at gamma=%.16g", gamma)
            break
        gamma, omega_peak = float(mid_sigmas[top]), float(mids[top])

    if not certified:
        logger.warning("BBBS returned an uncertified lower bound %.16g after %d levels",
                       gamma, iterations)
    peak = _peak_of(comp, omega_peak, opts.simplicity_gap)
    peak = replace(peak, unique=unique)
    return NormResult(value=peak.sigma, peak=peak, iterations=iterations, certified=certified)


def h_inf_norm(cl: ClosedLoop, tol: Optional[float] = None,
               opts: Optional[NormOptions] = None) -> float:
    """
    H-infinity norm: the L-infinity norm for stable closed loops, +inf otherwise.
    """
    if cl.n and np.max(sla.eigvals(cl.A).real) >= 0.0:
        return float("inf")
    return linf_norm_bbbs(cl, tol=tol, opts=opts).value


def linf_gradient(plant: PlantRealization, K: Controller, peak: SingularTriple,
                  cl: Optional[ClosedLoop] = None) -> ControllerGradient:
    """
    Gradient of the L-infinity norm from d(sigma) = Re(u^H dG v) with
    r = (i w I - A)^-1 B v and s = (i w I - A)^-H C^H u.
    """
    check_compatible(plant, K)
    cl = cl if cl is not None else assemble_closed_loop(plant, K)
    if np.isfinite(peak.omega):
        lu_piv = resolvent_factor(cl.A, peak.omega)
        r = sla.lu_solve(lu_piv, (cl.B @ peak.v).astype(complex), check_finite=False)
        s = sla.lu_solve(lu_piv, (cl.C.T @ peak.u).astype(complex), trans=2, check_finite=False)
    else:
        # only the feedthrough D11 + D12 Dhat D21 survives at omega = inf
        r = np.zeros(cl.n, complex)
        s = np.zeros(cl.n, complex)
    n_x = plant.n_x
    r1, r2 = r[:n_x], r[n_x:]
    sbar = np.conj(s)
    s1, s2 = sbar[:n_x], sbar[n_x:]
    left = plant.B2.T @ s1 + plant.D12.T @ np.conj(peak.u)
    right = plant.C2 @ r1 + plant.D21 @ peak.v
    return ControllerGradient(
        dAhat=np.real(np.outer(s2, r2)),
        dBhat=np.real(np.outer(s2, right)),
        dChat=np.real(np.outer(left, r2)),
        dDhat=np.real(np.outer(left, right)),
        reliable=peak.simple and peak.unique,
    )
