"""
State-space data models: partitioned plants and fixed-order controllers.
"""
from typing import Any, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .exceptions import DimensionMismatchError, NonzeroFeedthroughError

PLANT_BLOCKS = ("A1", "B1", "B2", "C1", "C2", "D11", "D12", "D21", "D22")
SPARSE_CAPABLE = ("A1", "B1", "C1")
CONTROLLER_BLOCKS = ("Ahat", "Bhat", "Chat", "Dhat")


def as_dense_block(value: Any) -> np.ndarray:
    """
    Coerce value to a read-only float64 2-D array. Scalars become 1x1.
    """
    if sp.issparse(value):
        value = value.toarray()
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D block, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def as_state_block(value: Any) -> Any:
    """
    Like as_dense_block, but keeps sparse input sparse (CSR).
    """
    if sp.issparse(value):
        return sp.csr_matrix(value, dtype=float)
    return as_dense_block(value)


def shape_of(block: Any) -> Tuple[int, int]:
    return tuple(int(k) for k in block.shape)


class PlantRealization(BaseModel):
    """
    Partitioned open-loop plant

        dx/dt = A1 x + B1 w + B2 u
            z = C1 x + D11 w + D12 u
            y = C2 x + D21 w + D22 u

    A1, B1 and C1 may be stored sparse (full-order models); the remaining
    blocks are dense. D22 must be identically zero.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    A1: Any
    B1: Any
    B2: np.ndarray
    C1: Any
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray

    @field_validator(*SPARSE_CAPABLE, mode="before")
    @classmethod
    def _coerce_state_block(cls, value):
        return as_state_block(value)

    @field_validator("B2", "C2", "D11", "D12", "D21", "D22", mode="before")
    @classmethod
    def _coerce_dense_block(cls, value):
        return as_dense_block(value)

    @model_validator(mode="after")
    def _check_dimensions(self):
        n_x = shape_of(self.A1)[0]
        n_w = shape_of(self.B1)[1]
        n_u = self.B2.shape[1]
        n_z = shape_of(self.C1)[0]
        n_y = self.C2.shape[0]
        expected = {
            "A1": (n_x, n_x), "B1": (n_x, n_w), "B2": (n_x, n_u),
            "C1": (n_z, n_x), "C2": (n_y, n_x),
            "D11": (n_z, n_w), "D12": (n_z, n_u),
            "D21": (n_y, n_w), "D22": (n_y, n_u),
        }
        for name, shape in expected.items():
            actual = shape_of(getattr(self, name))
            if actual != shape:
                raise DimensionMismatchError(
                    f"{name} has shape {actual}, expected {shape} for "
                    f"(n_x, n_w, n_u, n_z, n_y) = {(n_x, n_w, n_u, n_z, n_y)}"
                )
        if np.any(self.D22 != 0.0):
            raise NonzeroFeedthroughError(
                "D22 must be zero: the closed loop is not affine in the controller otherwise"
            )
        return self

    @classmethod
    def from_blocks(
        cls,
        A1, B1, B2, C1, C2,
        D11=None, D12=None, D21=None, D22=None,
    ) -> "PlantRealization":
        """
        Build a plant, filling omitted feedthrough blocks with zeros.
        """
        B1, C1 = as_state_block(B1), as_state_block(C1)
        B2, C2 = as_dense_block(B2), as_dense_block(C2)
        n_w, n_z = shape_of(B1)[1], shape_of(C1)[0]
        n_u, n_y = B2.shape[1], C2.shape[0]
        return cls(
            A1=A1, B1=B1, B2=B2, C1=C1, C2=C2,
            D11=np.zeros((n_z, n_w)) if D11 is None else D11,
            D12=np.zeros((n_z, n_u)) if D12 is None else D12,
            D21=np.zeros((n_y, n_w)) if D21 is None else D21,
            D22=np.zeros((n_y, n_u)) if D22 is None else D22,
        )

    @property
    def n_x(self) -> int:
        return shape_of(self.A1)[0]

    @property
    def n_w(self) -> int:
        return shape_of(self.B1)[1]

    @property
    def n_u(self) -> int:
        return self.B2.shape[1]

    @property
    def n_z(self) -> int:
        return shape_of(self.C1)[0]

    @property
    def n_y(self) -> int:
        return self.C2.shape[0]

    @property
    def dims(self) -> Tuple[int, int, int, int, int]:
        return (self.n_x, self.n_w, self.n_u, self.n_z, self.n_y)

    @property
    def io_dims(self) -> Tuple[int, int, int, int]:
        return (self.n_w, self.n_u, self.n_z, self.n_y)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.A1)

    def dense_block(self, name: str) -> np.ndarray:
        block = getattr(self, name)
        return block.toarray() if sp.issparse(block) else block


class Controller(BaseModel):
    """
    Fixed-order output-feedback controller (Ahat, Bhat, Chat, Dhat) of order n_K.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    Ahat: np.ndarray
    Bhat: np.ndarray
    Chat: np.ndarray
    Dhat: np.ndarray

    @field_validator(*CONTROLLER_BLOCKS, mode="before")
    @classmethod
    def _coerce_block(cls, value):
        return as_dense_block(value)

    @model_validator(mode="after")
    def _check_dimensions(self):
        n_u, n_y = self.Dhat.shape
        n_K = self.Ahat.shape[0]
        expected = {
            "Ahat": (n_K, n_K), "Bhat": (n_K, n_y),
            "Chat": (n_u, n_K), "Dhat": (n_u, n_y),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatchError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        return self

    @property
    def order(self) -> int:
        return self.Ahat.shape[0]

    @property
    def n_u(self) -> int:
        return self.Dhat.shape[0]

    @property
    def n_y(self) -> int:
        return self.Dhat.shape[1]

    @staticmethod
    def vector_length(n_K: int, n_u: int, n_y: int) -> int:
        return n_K * n_K + n_K * n_y + n_u * n_K + n_u * n_y

    @classmethod
    def zeros(cls, n_K: int, n_u: int, n_y: int) -> "Controller":
        return cls(
            Ahat=np.zeros((n_K, n_K)), Bhat=np.zeros((n_K, n_y)),
            Chat=np.zeros((n_u, n_K)), Dhat=np.zeros((n_u, n_y)),
        )

    @classmethod
    def from_vector(cls, x, n_K: int, n_u: int, n_y: int) -> "Controller":
        """
        Inverse of to_vector: blocks are stored row-major in the order Ahat, Bhat, Chat, Dhat.
        """
        x = np.asarray(x, dtype=float).ravel()
        if x.size != cls.vector_length(n_K, n_u, n_y):
            raise DimensionMismatchError(
                f"controller vector has length {x.size}, "
                f"expected {cls.vector_length(n_K, n_u, n_y)}"
            )
        shapes = [(n_K, n_K), (n_K, n_y), (n_u, n_K), (n_u, n_y)]
        blocks = []
        offset = 0
        for rows, cols in shapes:
            size = rows * cols
            blocks.append(x[offset:offset + size].reshape(rows, cols))
            offset += size
        return cls(Ahat=blocks[0], Bhat=blocks[1], Chat=blocks[2], Dhat=blocks[3])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.Ahat.ravel(), self.Bhat.ravel(),
                               self.Chat.ravel(), self.Dhat.ravel()])

    def matches(self, plant: PlantRealization) -> bool:
        return self.n_u == plant.n_u and self.n_y == plant.n_y


def check_compatible(plant: PlantRealization, K: Controller, what: Optional[str] = None) -> None:
    if not K.matches(plant):
        raise DimensionMismatchError(
            f"controller (n_u, n_y) = {(K.n_u, K.n_y)} does not match "
            f"{what or 'plant'} (n_u, n_y) = {(plant.n_u, plant.n_y)}"
        )
