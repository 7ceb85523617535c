"""
Benchmark harness: runs {Alg1, Alg2} x {R-only, R+F} plus two reference
arms on every problem of a suite manifest from one shared initial
controller per problem, writes one directory per cell and aggregates the
final-F and running-time tables from the result files alone.

The reference arms are Alg1 in R-only mode (the plain two-phase ROM-only
design) with loose stopping tests, once with the low-accuracy and once
with the high-accuracy norm tolerance.
"""
import asyncio
import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from .client import SynthesisClient
from .config import DELTA_HIGH, DELTA_LOW, Algorithm, Mode, SynthesisConfig, bench_threads
from .exceptions import FileFormatError, LocsynError
from .fileio import read_plant, read_result, write_controller, write_history_csv, write_result
from .probgen import random_controller

logger = logging.getLogger(__name__)

REFERENCE_STAT_TOL = 1e-6
REFERENCE_EVAL_DIST = 1e-6


class Arm(BaseModel):
    """
    One benchmark column. tag is empty for the four core arms; reference
    arms override the norm tolerance and the stopping tests.
    """
    model_config = ConfigDict(frozen=True)

    algorithm: Algorithm
    mode: Mode
    tag: str = ""
    norm_tol: Optional[float] = None
    stat_tol: Optional[float] = None
    eval_dist: Optional[float] = None

    @property
    def label(self) -> str:
        base = arm_label(self.algorithm, self.mode)
        return f"{base}@{self.tag}" if self.tag else base

    @property
    def slug(self) -> str:
        base = f"alg{int(self.algorithm)}-{self.mode.value}"
        return f"{base}-{self.tag}" if self.tag else base

    @property
    def reference(self) -> bool:
        return bool(self.tag)

    def configure(self, config: SynthesisConfig, seed: int,
                  time_limit: Optional[float] = None) -> SynthesisConfig:
        update = {"algorithm": self.algorithm, "mode": self.mode, "seed": seed}
        if self.norm_tol is not None:
            update["norm_tol"] = self.norm_tol
        if self.stat_tol is not None:
            update["stat_tol"] = self.stat_tol
        if self.eval_dist is not None:
            update["solver"] = config.solver.model_copy(update={"eval_dist": self.eval_dist})
        if time_limit is not None:
            update["time_limit"] = time_limit
        return config.model_copy(update=update)


CORE_ARMS: Tuple[Arm, ...] = (
    Arm(algorithm=Algorithm.ALG1, mode=Mode.R_ONLY),
    Arm(algorithm=Algorithm.ALG1, mode=Mode.R_PLUS_F),
    Arm(algorithm=Algorithm.ALG2, mode=Mode.R_ONLY),
    Arm(algorithm=Algorithm.ALG2, mode=Mode.R_PLUS_F),
)
REFERENCE_ARMS: Tuple[Arm, ...] = (
    Arm(algorithm=Algorithm.ALG1, mode=Mode.R_ONLY, tag="low", norm_tol=DELTA_LOW,
        stat_tol=REFERENCE_STAT_TOL, eval_dist=REFERENCE_EVAL_DIST),
    Arm(algorithm=Algorithm.ALG1, mode=Mode.R_ONLY, tag="high", norm_tol=DELTA_HIGH,
        stat_tol=REFERENCE_STAT_TOL, eval_dist=REFERENCE_EVAL_DIST),
)
ARMS: Tuple[Arm, ...] = REFERENCE_ARMS + CORE_ARMS
BASELINE = CORE_ARMS[0]
REPORTING_LIMIT = 1e-3
RESULT_FILE = "result.txt"
HISTORY_FILE = "history.csv"
ERROR_FILE = "error.txt"


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    fom: str
    rom: str
    n_K: int
    seed: int
    dims: Dict[str, int]
    alpha_fom_open: float
    alpha_rom_open: float
    r: int


class SuiteManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    problems: List[ManifestEntry]

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path) -> "SuiteManifest":
        path = Path(path)
        try:
            return cls.model_validate_json(path.read_text())
        except ValueError as e:
            raise FileFormatError(f"{path}: invalid manifest: {e}") from e

    @staticmethod
    def resolve(base: Path, entry: ManifestEntry) -> Tuple[Path, Path]:
        return base / entry.fom, base / entry.rom


def arm_label(algorithm: Algorithm, mode: Mode) -> str:
    return f"alg{int(algorithm)}/{mode.value}"


def cell_dir(outdir: Path, name: str, arm: Arm) -> Path:
    return Path(outdir) / name / arm.slug


def relative_differences(values: Sequence[Optional[float]]) -> List[str]:
    """
    Relative difference of each finite value from the smallest one: '---'
    for the best entry, '0.000' below the reporting limit, 'inf' for
    infinite values and 'fail' for missing cells.
    """
    finite = [v for v in values if v is not None and math.isfinite(v)]
    best = min(finite) if finite else None
    out = []
    for v in values:
        if v is None:
            out.append("fail")
        elif not math.isfinite(v):
            out.append("inf")
        elif v == best:
            out.append("---")
        else:
            rel = (v - best) / abs(best) if best != 0.0 else math.inf
            out.append("0.000" if rel < REPORTING_LIMIT else f"{rel:.3f}")
    return out


def _fmt_value(v: Optional[float]) -> str:
    if v is None:
        return "fail"
    return "inf" if not math.isfinite(v) else f"{v:.6g}"


def _ratio(v: Optional[float], base: Optional[float]) -> str:
    if v is None or base is None or base <= 0.0:
        return "-"
    return f"{v / base:.2f}"


class BenchTables(BaseModel):
    """
    Per-problem final F values and wall-clock seconds, one entry per arm
    label (None for failed cells). Times are also given relative to baseline.
    """
    problems: List[str]
    labels: List[str]
    baseline: str
    F: Dict[str, List[Optional[float]]]
    seconds: Dict[str, List[Optional[float]]]
    restabilizations: Dict[str, List[Optional[int]]]

    def f_rows(self) -> List[List[str]]:
        labels = self.labels
        rows = [["problem"] + labels]
        for i, name in enumerate(self.problems):
            values = [self.F[l][i] for l in labels]
            rows.append([name] + [_fmt_value(v) for v in values])
        rows.append(["relative difference"] + [""] * len(labels))
        for i, name in enumerate(self.problems):
            rows.append([name] + relative_differences([self.F[l][i] for l in labels]))
        return rows

    def time_rows(self) -> List[List[str]]:
        labels, base = self.labels, self.baseline
        others = [l for l in labels if l != base]
        rows = [["problem"] + [f"{l} s" for l in labels] + [f"{l} ratio" for l in others]]
        for i, name in enumerate(self.problems):
            secs = [self.seconds[l][i] for l in labels]
            rows.append([name] + [_fmt_value(s) for s in secs]
                        + [_ratio(self.seconds[l][i], self.seconds[base][i]) for l in others])
        return rows


def aggregate(outdir, names: Sequence[str], arms: Sequence[Arm] = ARMS) -> BenchTables:
    """
    Build the report tables from the per-cell result files. Times are
    compared with BASELINE, or with the first arm when BASELINE is absent.
    """
    labels = [arm.label for arm in arms]
    F = {l: [] for l in labels}
    seconds = {l: [] for l in labels}
    restab = {l: [] for l in labels}
    for name in names:
        for arm, label in zip(arms, labels):
            path = cell_dir(Path(outdir), name, arm) / RESULT_FILE
            try:
                result = read_result(path)
            except (OSError, LocsynError) as e:
                logger.warning("no usable result for %s %s: %s", name, label, e)
                F[label].append(None)
                seconds[label].append(None)
                restab[label].append(None)
                continue
            F[label].append(result.F_best)
            seconds[label].append(result.total_seconds)
            restab[label].append(result.restabilizations)
    baseline = BASELINE.label if BASELINE.label in labels else labels[0]
    return BenchTables(problems=list(names), labels=labels, baseline=baseline,
                       F=F, seconds=seconds, restabilizations=restab)


def write_table(rows: List[List[str]], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        csv.writer(f).writerows(rows)
    return path


def render_table(rows: List[List[str]]) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)


async def _run_cell(entry: ManifestEntry, base: Path, outdir: Path, arm: Arm,
                    config: SynthesisConfig, executor, timeout: Optional[float]) -> Tuple[str, str]:
    """
    One problem under one arm. timeout is passed down as the run's
    time_limit, so the worker stops by itself and still writes its result.
    """
    label = arm.label
    target = cell_dir(outdir, entry.name, arm)
    target.mkdir(parents=True, exist_ok=True)
    for stale in (RESULT_FILE, ERROR_FILE):
        (target / stale).unlink(missing_ok=True)
    try:
        fom_path, rom_path = SuiteManifest.resolve(base, entry)
        fom, rom = read_plant(fom_path), read_plant(rom_path)
    except (OSError, LocsynError) as e:
        (target / ERROR_FILE).write_text(f"Invalid problem files: {e}\n")
        return label, f"Invalid problem files: {e}"
    K0 = random_controller((rom.n_u, rom.n_y), entry.n_K, entry.seed)
    cfg = arm.configure(config, entry.seed, timeout)
    result, errstr = await SynthesisClient.synthesize(rom, fom, entry.n_K, cfg, K0, executor=executor)
    if result is None:
        logger.error("%s %s failed: %s", entry.name, label, errstr)
        (target / ERROR_FILE).write_text(errstr + "\n")
        return label, errstr
    write_result(result, target / RESULT_FILE)
    write_history_csv(result.history, target / HISTORY_FILE)
    write_controller(result.best_K, target / "controller.txt")
    logger.info("%s %s: F=%s status=%s (%.1f s)", entry.name, label,
                _fmt_value(result.F_best), result.status.value, result.total_seconds)
    return label, ""


async def run_bench(manifest_path, outdir, config: Optional[SynthesisConfig] = None,
                    threads: Optional[int] = None, names: Optional[Sequence[str]] = None,
                    timeout: Optional[float] = None,
                    arms: Sequence[Arm] = ARMS) -> BenchTables:
    """
    Run every cell, then aggregate. Failed cells leave an error file and the run continues.
    """
    manifest_path = Path(manifest_path)
    manifest = SuiteManifest.load(manifest_path)
    base = manifest_path.parent
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = [e for e in manifest.problems if names is None or e.name in names]
    config = config or SynthesisConfig()
    workers = bench_threads(threads)
    logger.info("bench: %d problems x %d arms on %d workers", len(entries), len(arms), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        tasks = [_run_cell(e, base, outdir, arm, config, pool, timeout)
                 for e in entries for arm in arms]
        outcomes = await asyncio.gather(*tasks)
    failures = [o for o in outcomes if o[1]]
    if failures:
        logger.warning("%d of %d cells failed", len(failures), len(outcomes))
    tables = aggregate(outdir, [e.name for e in entries], arms)
    write_table(tables.f_rows(), outdir / "final_f.csv")
    write_table(tables.time_rows(), outdir / "times.csv")
    return tables
