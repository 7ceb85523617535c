"""
Text formats for plants, controllers and synthesis results, plus the
history CSV export.

A document starts with its version tag, then a dims line, then one block per
matrix:

    matrix NAME ROWS COLS dense      followed by ROWS lines of COLS values
    matrix NAME ROWS COLS sparse NNZ followed by NNZ lines "row col value" (1-based)
    matrix NAME ROWS COLS zero

and ends with "end". Values are written with 17 significant digits so that
reading back reproduces every float64 exactly.
"""
import csv
import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .config import Algorithm, Mode
from .exceptions import FileFormatError
from .models import CONTROLLER_BLOCKS, PLANT_BLOCKS, SPARSE_CAPABLE, Controller, PlantRealization
from .nsbfgs import SolveStatus

logger = logging.getLogger(__name__)

PLANT_TAG = "locsyn-plant-v1"
CONTROLLER_TAG = "locsyn-controller-v1"
RESULT_TAG = "locsyn-result-v1"
HISTORY_COLUMNS = ("phase", "iter", "norm", "alpha_rom", "alpha_fom", "seconds", "best")

PathLike = Union[str, Path]


def fmt(value: float) -> str:
    return "%.17g" % value


def _block_lines(name: str, block) -> Iterator[str]:
    rows, cols = block.shape
    if sp.issparse(block):
        coo = sp.coo_matrix(block)
        coo.sum_duplicates()
        order = np.lexsort((coo.col, coo.row))
        yield f"matrix {name} {rows} {cols} sparse {order.size}"
        for k in order:
            yield f"{coo.row[k] + 1} {coo.col[k] + 1} {fmt(coo.data[k])}"
        return
    block = np.asarray(block)
    if rows and cols and not np.any(block):
        yield f"matrix {name} {rows} {cols} zero"
        return
    yield f"matrix {name} {rows} {cols} dense"
    if not cols:
        return
    for row in block:
        yield " ".join(fmt(v) for v in row)


class _Reader:
    """
    Line cursor that skips blank lines and '#' comments and reports line numbers in errors.
    """

    def __init__(self, text: str, source: str = "<string>"):
        self.lines = text.splitlines()
        self.pos = 0
        self.source = source

    def error(self, message: str) -> FileFormatError:
        return FileFormatError(f"{self.source}:{self.pos}: {message}")

    def next(self) -> List[str]:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line and not line.startswith("#"):
                return line.split()
        raise self.error("unexpected end of document")

    def peek(self) -> Optional[List[str]]:
        saved = self.pos
        try:
            return self.next()
        except FileFormatError:
            return None
        finally:
            self.pos = saved

    def expect(self, *keywords: str) -> List[str]:
        tokens = self.next()
        if tokens[:len(keywords)] != list(keywords):
            raise self.error(f"expected {' '.join(keywords)!r}, got {' '.join(tokens)!r}")
        return tokens[len(keywords):]

    def ints(self, tokens: Sequence[str], count: int) -> List[int]:
        if len(tokens) != count:
            raise self.error(f"expected {count} integers, got {len(tokens)}")
        try:
            values = [int(t) for t in tokens]
        except ValueError as e:
            raise self.error(f"bad integer: {e}") from e
        if any(v < 0 for v in values):
            raise self.error(f"negative dimension in {values}")
        return values

    def floats(self, tokens: Sequence[str], count: int) -> np.ndarray:
        if len(tokens) != count:
            raise self.error(f"expected {count} values, got {len(tokens)}")
        try:
            return np.array([float(t) for t in tokens])
        except ValueError as e:
            raise self.error(f"bad number: {e}") from e

    def block(self) -> Tuple[str, object]:
        tokens = self.expect("matrix")
        if len(tokens) < 4:
            raise self.error("matrix header needs NAME ROWS COLS STORAGE")
        name, storage = tokens[0], tokens[3]
        rows, cols = self.ints(tokens[1:3], 2)
        if storage == "zero":
            return name, np.zeros((rows, cols))
        if storage == "dense":
            if not cols:
                # empty rows carry no data lines
                return name, np.zeros((rows, 0))
            data = np.empty((rows, cols))
            for i in range(rows):
                data[i] = self.floats(self.next(), cols)
            return name, data
        if storage == "sparse":
            if len(tokens) != 5:
                raise self.error("sparse header needs NNZ")
            nnz = self.ints(tokens[4:5], 1)[0]
            ri = np.empty(nnz, dtype=int)
            ci = np.empty(nnz, dtype=int)
            vals = np.empty(nnz)
            for k in range(nnz):
                parts = self.next()
                if len(parts) != 3:
                    raise self.error("sparse entry needs 'row col value'")
                i, j = self.ints(parts[:2], 2)
                if not (1 <= i <= rows and 1 <= j <= cols):
                    raise self.error(f"entry ({i}, {j}) outside a {rows}x{cols} block")
                ri[k], ci[k], vals[k] = i - 1, j - 1, self.floats(parts[2:], 1)[0]
            return name, sp.csr_matrix((vals, (ri, ci)), shape=(rows, cols))
        raise self.error(f"unknown storage {storage!r}")

    def blocks(self, names: Sequence[str]) -> Dict[str, object]:
        found: Dict[str, object] = {}
        while True:
            tokens = self.peek()
            if tokens is None or tokens[0] != "matrix":
                break
            name, data = self.block()
            if name not in names:
                raise self.error(f"unexpected block {name!r}")
            if name in found:
                raise self.error(f"block {name!r} given twice")
            found[name] = data
        missing = [n for n in names if n not in found]
        if missing:
            raise self.error(f"missing blocks {missing}")
        return found


def dumps_plant(plant: PlantRealization) -> str:
    lines = [PLANT_TAG, "dims " + " ".join(str(d) for d in plant.dims)]
    for name in PLANT_BLOCKS:
        lines.extend(_block_lines(name, getattr(plant, name)))
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads_plant(text: str, source: str = "<string>") -> PlantRealization:
    reader = _Reader(text, source)
    reader.expect(PLANT_TAG)
    n_x, n_w, n_u, n_z, n_y = reader.ints(reader.expect("dims"), 5)
    blocks = reader.blocks(PLANT_BLOCKS)
    reader.expect("end")
    for name, data in blocks.items():
        if sp.issparse(data) and name not in SPARSE_CAPABLE:
            blocks[name] = data.toarray()
    plant = PlantRealization(**blocks)
    if plant.dims != (n_x, n_w, n_u, n_z, n_y):
        raise FileFormatError(f"{source}: dims line {(n_x, n_w, n_u, n_z, n_y)} disagrees with blocks {plant.dims}")
    return plant


def _controller_lines(K: Controller) -> List[str]:
    lines = [CONTROLLER_TAG, f"dims {K.order} {K.n_u} {K.n_y}"]
    for name in CONTROLLER_BLOCKS:
        lines.extend(_block_lines(name, getattr(K, name)))
    lines.append("end")
    return lines


def dumps_controller(K: Controller) -> str:
    return "\n".join(_controller_lines(K)) + "\n"


def _read_controller(reader: _Reader) -> Controller:
    reader.expect(CONTROLLER_TAG)
    n_K, n_u, n_y = reader.ints(reader.expect("dims"), 3)
    blocks = reader.blocks(CONTROLLER_BLOCKS)
    reader.expect("end")
    K = Controller(**{k: (v.toarray() if sp.issparse(v) else v) for k, v in blocks.items()})
    if (K.order, K.n_u, K.n_y) != (n_K, n_u, n_y):
        raise reader.error(f"dims line {(n_K, n_u, n_y)} disagrees with blocks")
    return K


def loads_controller(text: str, source: str = "<string>") -> Controller:
    return _read_controller(_Reader(text, source))


def write_plant(plant: PlantRealization, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(dumps_plant(plant))
    return path


def read_plant(path: PathLike) -> PlantRealization:
    path = Path(path)
    return loads_plant(path.read_text(), str(path))


def write_controller(K: Controller, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(dumps_controller(K))
    return path


def read_controller(path: PathLike) -> Controller:
    path = Path(path)
    return loads_controller(path.read_text(), str(path))


# Result documents

_RESULT_SCALARS = ("F_best", "alpha_rom", "alpha_fom", "tracked_value", "total_seconds")
_RESULT_INTS = ("restabilizations", "iterations_a", "iterations_b")


def dumps_result(result) -> str:
    lines = [
        RESULT_TAG,
        f"algorithm {int(result.algorithm)}",
        f"mode {result.mode.value}",
        f"status {result.status.value}",
        f"solver_status {result.solver_status.value if result.solver_status else '-'}",
    ]
    lines += [f"{name} {fmt(getattr(result, name))}" for name in _RESULT_SCALARS]
    lines += [f"{name} {getattr(result, name)}" for name in _RESULT_INTS]
    lines += [f"seconds_{phase} {fmt(value)}" for phase, value in sorted(result.phase_seconds.items())]
    if result.message:
        lines.append("message " + " ".join(result.message.split()))
    lines.append("controller")
    lines.extend(_controller_lines(result.best_K))
    lines.append(f"history {len(result.history)}")
    lines.append(" ".join(HISTORY_COLUMNS))
    for rec in result.history:
        lines.append(f"{rec.phase} {rec.iter} " + " ".join(
            fmt(getattr(rec, c)) for c in HISTORY_COLUMNS[2:]))
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads_result(text: str, source: str = "<string>"):
    from .synthesis import HistoryRecord, SynthesisResult, SynthesisStatus

    reader = _Reader(text, source)
    reader.expect(RESULT_TAG)
    fields: Dict[str, object] = {"phase_seconds": {}}
    while True:
        tokens = reader.next()
        key = tokens[0]
        if key == "controller":
            break
        if len(tokens) < 2:
            raise reader.error(f"field {key!r} has no value")
        value = " ".join(tokens[1:])
        try:
            if key == "algorithm":
                fields[key] = Algorithm(int(value))
            elif key == "mode":
                fields[key] = Mode(value)
            elif key == "status":
                fields[key] = SynthesisStatus(value)
            elif key == "solver_status":
                fields[key] = None if value == "-" else SolveStatus(value)
            elif key in _RESULT_SCALARS:
                fields[key] = float(value)
            elif key in _RESULT_INTS:
                fields[key] = int(value)
            elif key.startswith("seconds_"):
                fields["phase_seconds"][key[len("seconds_"):]] = float(value)
            elif key == "message":
                fields[key] = value
            else:
                raise reader.error(f"unknown field {key!r}")
        except ValueError as e:
            raise reader.error(f"bad value for {key!r}: {e}") from e
    fields["best_K"] = _read_controller(reader)
    count = reader.ints(reader.expect("history"), 1)[0]
    header = reader.next()
    if tuple(header) != HISTORY_COLUMNS:
        raise reader.error(f"history header {header} differs from {list(HISTORY_COLUMNS)}")
    records = []
    for _ in range(count):
        parts = reader.next()
        if len(parts) != len(HISTORY_COLUMNS):
            raise reader.error("history row has the wrong number of columns")
        nums = reader.floats(parts[2:], len(HISTORY_COLUMNS) - 2)
        records.append(HistoryRecord(phase=parts[0], iter=reader.ints(parts[1:2], 1)[0],
                                     **dict(zip(HISTORY_COLUMNS[2:], nums.tolist()))))
    reader.expect("end")
    fields["history"] = records
    missing = [k for k in ("algorithm", "mode", "status", "F_best", "alpha_rom", "alpha_fom",
                           "tracked_value") if k not in fields]
    if missing:
        raise FileFormatError(f"{source}: missing fields {missing}")
    return SynthesisResult(**fields)


def write_result(result, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(dumps_result(result))
    return path


def read_result(path: PathLike):
    path = Path(path)
    return loads_result(path.read_text(), str(path))


def write_history_csv(records, path: PathLike) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(HISTORY_COLUMNS))
        writer.writeheader()
        for rec in records:
            writer.writerow({c: getattr(rec, c) for c in HISTORY_COLUMNS})
    return path
