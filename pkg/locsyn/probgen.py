"""
Heat-flow test problems: a finite-difference convection-diffusion FOM on the
unit square, modal ROMs of it, seeded initial controllers and the default
benchmark suite.

Grid points are numbered k = i*m + j with i the row (y) and j the column (x)
of the m x m interior grid.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigs

from .exceptions import ProblemSpecError, ReductionError
from .models import Controller, PlantRealization
from .plant import closed_loop_operator
from .spectral import rightmost_eigentriple_iterative, spectral_abscissa_dense

logger = logging.getLogger(__name__)

N_ACTUATORS = 2
N_NOISE = 2
DENSE_REDUCTION_LIMIT = 2500
SYMMETRY_TOL = 1e-12


class HeatProblemSpec(BaseModel):
    """
    m x m interior grid with diffusivity kappa, upwinded convection (cx, cy),
    two actuator regions and 2 to 4 sensor regions given as flat grid indices.
    """
    model_config = ConfigDict(frozen=True)

    m: int = Field(..., ge=2)
    kappa: float = Field(1.0, gt=0.0)
    convection: Tuple[float, float] = (0.0, 0.0)
    actuators: List[List[int]]
    sensors: List[List[int]]
    w_d: float = Field(1.0, gt=0.0)
    eta: float = Field(1e-2, gt=0.0)
    control_weight: float = Field(0.0, ge=0.0)
    seed: int = 0

    @field_validator("convection")
    @classmethod
    def _finite_convection(cls, value):
        if not all(np.isfinite(v) for v in value):
            raise ProblemSpecError(f"convection must be finite, got {value}")
        return value

    @model_validator(mode="after")
    def _check_regions(self):
        n_x = self.m * self.m
        if len(self.actuators) != N_ACTUATORS:
            raise ProblemSpecError(f"exactly {N_ACTUATORS} actuator regions required, got {len(self.actuators)}")
        if not 2 <= len(self.sensors) <= 4:
            raise ProblemSpecError(f"2 to 4 sensor regions required, got {len(self.sensors)}")
        for kind, regions in (("actuator", self.actuators), ("sensor", self.sensors)):
            for idx, region in enumerate(regions):
                if not region:
                    raise ProblemSpecError(f"{kind} region {idx} is empty")
                bad = [k for k in region if not 0 <= k < n_x]
                if bad:
                    raise ProblemSpecError(f"{kind} region {idx} has indices outside the grid: {bad[:5]}")
                if len(set(region)) != len(region):
                    raise ProblemSpecError(f"{kind} region {idx} repeats grid points")
        if set(self.actuators[0]) & set(self.actuators[1]):
            raise ProblemSpecError("actuator regions must be disjoint")
        return self

    @property
    def n_x(self) -> int:
        return self.m * self.m

    @property
    def n_y(self) -> int:
        return len(self.sensors)

    @property
    def h(self) -> float:
        return 1.0 / (self.m + 1)


def square_region(m: int, row: int, col: int, size: int) -> List[int]:
    """
    Flat indices of the size x size block whose top-left corner is (row, col), clipped to the grid.
    """
    rows = range(max(0, row), min(m, row + size))
    cols = range(max(0, col), min(m, col + size))
    return [i * m + j for i in rows for j in cols]


def default_regions(m: int, n_y: int) -> Tuple[List[List[int]], List[List[int]]]:
    """
    Two actuator patches on the main diagonal and n_y sensor patches off it.
    """
    size = max(1, m // 6)
    actuators = [square_region(m, m // 4, m // 4, size),
                 square_region(m, (3 * m) // 4 - size, (3 * m) // 4 - size, size)]
    anchors = [(m // 4, (3 * m) // 4 - size), ((3 * m) // 4 - size, m // 4),
               (m // 2 - size // 2, m // 2 - size // 2), (m // 8, m // 2)]
    sensors = [square_region(m, r, c, size) for r, c in anchors[:n_y]]
    return actuators, sensors


def heat_spec(m: int, n_y: int, kappa: float = 1.0, convection=(0.0, 0.0), **kwargs) -> HeatProblemSpec:
    actuators, sensors = default_regions(m, n_y)
    return HeatProblemSpec(m=m, kappa=kappa, convection=tuple(convection),
                           actuators=actuators, sensors=sensors, **kwargs)


def _second_difference(m: int, h: float) -> sp.csr_matrix:
    return sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1],
                    format="csr") / (h * h)


def _upwind(m: int, h: float, c: float) -> sp.csr_matrix:
    """
    First-order upwind discretization of -c du/dx with zero boundary values.
    """
    if c == 0.0:
        return sp.csr_matrix((m, m))
    a = abs(c) / h
    lower = max(c, 0.0) / h
    upper = max(-c, 0.0) / h
    return sp.diags([lower * np.ones(m - 1), -a * np.ones(m), upper * np.ones(m - 1)],
                    [-1, 0, 1], format="csr")


def heat_operator(spec: HeatProblemSpec) -> sp.csr_matrix:
    m, h = spec.m, spec.h
    eye = sp.identity(m, format="csr")
    L1 = _second_difference(m, h)
    cx, cy = spec.convection
    A = spec.kappa * (sp.kron(eye, L1) + sp.kron(L1, eye))
    A = A + sp.kron(eye, _upwind(m, h, cx)) + sp.kron(_upwind(m, h, cy), eye)
    return sp.csr_matrix(A)


def generate_fom(spec: HeatProblemSpec) -> PlantRealization:
    """
    Sparse FOM: z is the full state (plus rho*u when control_weight > 0),
    w is a weighted state disturbance plus two measurement noise channels.
    """
    n_x, n_y = spec.n_x, spec.n_y
    A1 = heat_operator(spec)

    B2 = np.zeros((n_x, N_ACTUATORS))
    for col, region in enumerate(spec.actuators):
        B2[region, col] = 1.0 / np.sqrt(len(region))
    C2 = np.zeros((n_y, n_x))
    for row, region in enumerate(spec.sensors):
        C2[row, region] = 1.0 / len(region)

    B1 = sp.hstack([spec.w_d * sp.identity(n_x), sp.csr_matrix((n_x, N_NOISE))], format="csr")
    C1 = sp.identity(n_x, format="csr")
    # noise enters y only, through the last N_NOISE columns of w
    D21 = np.hstack([np.zeros((n_y, n_x)), spec.eta * np.ones((n_y, N_NOISE))])
    D12 = None
    if spec.control_weight > 0.0:
        C1 = sp.vstack([C1, sp.csr_matrix((N_ACTUATORS, n_x))], format="csr")
        D12 = np.vstack([np.zeros((n_x, N_ACTUATORS)), spec.control_weight * np.eye(N_ACTUATORS)])
    plant = PlantRealization.from_blocks(A1=A1, B1=B1, B2=B2, C1=C1, C2=C2, D12=D12, D21=D21)
    logger.debug("generated FOM m=%d dims=%s", spec.m, plant.dims)
    return plant


class ProblemPair(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    fom: PlantRealization
    rom: PlantRealization
    basis: np.ndarray


def _rightmost_modes(A, r: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenvalues and eigenvectors ordered from the rightmost, at least r of them.
    """
    n = A.shape[0]
    if n <= DENSE_REDUCTION_LIMIT:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        if np.max(np.abs(dense - dense.T), initial=0.0) <= SYMMETRY_TOL * max(1.0, np.abs(dense).max()):
            values, vectors = sla.eigh(dense)
            return values[::-1].astype(complex), vectors[:, ::-1].astype(complex)
        try:
            values, vectors = sla.eig(dense)
        except sla.LinAlgError as e:
            raise ReductionError(f"eigendecomposition of A1 failed: {e}") from e
    else:
        k = min(n - 2, r + 2)
        try:
            # modes nearest the origin are the rightmost ones for a dissipative A1
            values, vectors = eigs(sp.csc_matrix(A), k=k, sigma=0.0, which="LM")
        except (ArpackError, ArpackNoConvergence, RuntimeError) as e:
            raise ReductionError(f"Arnoldi for the reduction basis failed: {e}") from e
    order = np.lexsort((-values.imag, -values.real))
    return values[order], vectors[:, order]


def modal_basis(A, r: int) -> np.ndarray:
    """
    Orthonormal real basis of the r rightmost eigenvectors; a complex pair
    contributes its real and imaginary parts and is never split, so the
    basis may have r + 1 columns.
    """
    values, vectors = _rightmost_modes(A, r)
    columns = []
    used = np.zeros(values.size, dtype=bool)
    for idx, lam in enumerate(values):
        if len(columns) >= r:
            break
        if used[idx]:
            continue
        used[idx] = True
        vec = vectors[:, idx]
        if abs(lam.imag) <= SYMMETRY_TOL * max(1.0, abs(lam)):
            columns.append(vec.real if np.linalg.norm(vec.real) >= np.linalg.norm(vec.imag) else vec.imag)
            continue
        partner = np.flatnonzero(~used & (np.abs(values - np.conj(lam)) <= 1e-8 * max(1.0, abs(lam))))
        if partner.size:
            used[partner[0]] = True
        columns.extend([vec.real, vec.imag])
    if len(columns) < r:
        raise ReductionError(f"only {len(columns)} modes available for order {r}")
    if len(columns) > r:
        logger.warning("order raised from %d to %d to keep a complex pair together", r, len(columns))
    V, _ = sla.qr(np.column_stack(columns), mode="economic")
    return V


def project(fom: PlantRealization, V: np.ndarray) -> PlantRealization:
    """
    Galerkin projection of the state blocks onto the columns of V.
    """
    A1 = fom.A1 @ V
    return PlantRealization(
        A1=V.T @ np.asarray(A1), B1=np.asarray(V.T @ fom.dense_block("B1")), B2=V.T @ fom.B2,
        C1=np.asarray(fom.C1 @ V), C2=fom.C2 @ V,
        D11=fom.D11, D12=fom.D12, D21=fom.D21, D22=fom.D22,
    )


def reduce_modal(fom: PlantRealization, r: int) -> ProblemPair:
    """
    Modal ROM of order r (r + 1 if a complex pair straddles the cut).
    """
    if not 1 <= r <= fom.n_x:
        raise ReductionError(f"reduced order must lie in [1, {fom.n_x}], got {r}")
    V = modal_basis(fom.A1, r)
    rom = project(fom, V)
    logger.info("modal ROM of order %d from n_x=%d", rom.n_x, fom.n_x)
    return ProblemPair(fom=fom, rom=rom, basis=V)


def generate_problem(spec: HeatProblemSpec, r: int) -> ProblemPair:
    return reduce_modal(generate_fom(spec), r)


def random_controller(dims: Tuple[int, int], n_K: int, seed: int, scale: float = 1e-2) -> Controller:
    """
    Controller with i.i.d. standard normal entries times scale, drawn from a
    PCG64 generator seeded with seed in flat-vector order.
    """
    n_u, n_y = dims
    rng = np.random.Generator(np.random.PCG64(seed))
    x = scale * rng.standard_normal(Controller.vector_length(n_K, n_u, n_y))
    return Controller.from_vector(x, n_K, n_u, n_y)


def open_loop_abscissa(plant: PlantRealization) -> float:
    """
    Spectral abscissa of A1, matrix-free for large sparse plants.
    """
    if plant.is_sparse and plant.n_x > DENSE_REDUCTION_LIMIT:
        K = Controller.zeros(0, plant.n_u, plant.n_y)
        return rightmost_eigentriple_iterative(closed_loop_operator(plant, K))[0]
    return spectral_abscissa_dense(plant.dense_block("A1"))[0]


class SuiteEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    spec: HeatProblemSpec
    r: int = Field(..., ge=1)
    n_K: int = Field(..., ge=0)


_SUITE = [
    # name, m, n_y, convection, r, n_K
    ("heat20a", 20, 2, (0.0, 0.0), 30, 4),
    ("heat20b", 20, 3, (0.0, 0.0), 40, 10),
    ("conv20a", 20, 4, (20.0, 5.0), 30, 10),
    ("conv20b", 20, 2, (-10.0, 25.0), 50, 4),
    ("heat25a", 25, 2, (0.0, 0.0), 40, 10),
    ("heat25b", 25, 4, (0.0, 0.0), 50, 4),
    ("conv25a", 25, 3, (30.0, 10.0), 40, 10),
    ("conv25b", 25, 2, (15.0, -15.0), 30, 10),
    ("heat30a", 30, 3, (0.0, 0.0), 50, 10),
    ("heat30b", 30, 4, (0.0, 0.0), 30, 4),
    ("conv30a", 30, 2, (40.0, 0.0), 50, 10),
    ("conv30b", 30, 4, (25.0, 25.0), 40, 4),
]


def default_suite(names: Optional[Sequence[str]] = None) -> List[SuiteEntry]:
    """
    The twelve default benchmark problems, optionally restricted to names.
    """
    entries = [
        SuiteEntry(name=name, spec=heat_spec(m, n_y, convection=conv, seed=idx), r=r, n_K=n_K)
        for idx, (name, m, n_y, conv, r, n_K) in enumerate(_SUITE, start=1)
    ]
    if names is None:
        return entries
    wanted = set(names)
    unknown = wanted - {e.name for e in entries}
    if unknown:
        raise ProblemSpecError(f"unknown suite problems: {sorted(unknown)}")
    return [e for e in entries if e.name in wanted]
