"""
Command-line interface: generate, synthesize, norm, validate, bench.

Exit codes: 0 success or stable, 1 usage or input error, 2 numerical
failure, 3 infinite F / infinite norm / unstable closed loop.
"""
import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from .__version__ import __version__
from .bench import ARMS, CORE_ARMS, ManifestEntry, SuiteManifest, render_table, run_bench
from .config import (
    DELTA_HIGH,
    DELTA_LOW,
    Algorithm,
    ArnoldiOptions,
    Mode,
    SynthesisConfig,
)
from .exceptions import InfiniteNormError, LocsynError, NumericalError, ProblemSpecError
from .fileio import read_controller, read_plant, write_controller, write_history_csv, write_plant, write_result
from .hinf_norm import linf_norm_bbbs
from .models import Controller
from .plant import assemble_closed_loop
from .probgen import HeatProblemSpec, default_suite, generate_fom, heat_spec, open_loop_abscissa, reduce_modal
from .synthesis import SynthesisProblem, SynthesisStatus, synthesize, validate_controller

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_INFINITE = 3

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"


class RunConfig(BaseModel):
    """
    Resolved options of one CLI invocation; written as config.json next to its outputs.
    """
    model_config = ConfigDict(frozen=True)

    command: str
    outdir: Optional[str] = None
    spec: Optional[HeatProblemSpec] = None
    r: Optional[int] = None
    suite: Optional[List[str]] = None
    fom: Optional[str] = None
    rom: Optional[str] = None
    plant: Optional[str] = None
    controller: Optional[str] = None
    manifest: Optional[str] = None
    n_K: Optional[int] = None
    synthesis: Optional[SynthesisConfig] = None
    tol: Optional[float] = None
    threads: Optional[int] = None
    timeout: Optional[float] = None
    core_only: bool = False

    def save(self, directory) -> Path:
        path = Path(directory) / CONFIG_FILE
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.model_validate_json(Path(path).read_text())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_synthesis_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alg", type=int, choices=[1, 2], default=2, help="Synthesis algorithm (default: 2)")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.R_PLUS_F.value,
                   help="Stability constraints: ROM only or ROM and FOM (default: r+f)")
    p.add_argument("--seed", type=int, default=0, help="Seed of the random initial controller")
    p.add_argument("--norm-tol", type=float, default=DELTA_HIGH, help="Relative BBBS tolerance")
    p.add_argument("--low-accuracy", action="store_true",
                   help=f"Use the low-accuracy norm tolerance {DELTA_LOW:g}")
    p.add_argument("--stat-tol", type=float, default=1e-8, help="Stationarity tolerance")
    p.add_argument("--phase-a-maxit", type=int, default=1000, help="Stabilization iteration budget")
    p.add_argument("--phase-b-maxit", type=int, default=1000,
                   help="Cumulative budget of the optimization phase")
    p.add_argument("--time-limit", type=float, help="Wall-clock limit of one run in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="locsyn", description="Fixed-order controller synthesis on ROM/FOM pairs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="Generate heat-flow FOM/ROM plant files")
    g.add_argument("--out", required=True, help="Output directory")
    g.add_argument("--spec", help="JSON file with a heat problem specification")
    g.add_argument("--suite", nargs="*", metavar="NAME",
                   help="Generate the default suite (all problems, or the named ones)")
    g.add_argument("--name", default="problem", help="Problem name in the manifest")
    g.add_argument("--m", type=int, default=20, help="Interior grid points per side")
    g.add_argument("--ny", type=int, default=2, help="Number of sensor regions (2-4)")
    g.add_argument("--kappa", type=float, default=1.0, help="Diffusivity")
    g.add_argument("--cx", type=float, default=0.0, help="Convection in x")
    g.add_argument("--cy", type=float, default=0.0, help="Convection in y")
    g.add_argument("--w-d", type=float, default=1.0, help="Disturbance weight")
    g.add_argument("--eta", type=float, default=1e-2, help="Measurement noise weight")
    g.add_argument("--control-weight", type=float, default=0.0, help="Control effort weight in z")
    g.add_argument("--seed", type=int, default=0, help="Seed recorded for the initial controller")
    g.add_argument("--r", type=int, help="ROM order (required without --suite)")
    g.add_argument("--nk", type=int, default=10, help="Controller order recorded in the manifest")

    s = sub.add_parser("synthesize", help="Run a synthesis algorithm")
    s.add_argument("--fom", required=True, help="FOM plant file")
    s.add_argument("--rom", required=True, help="ROM plant file")
    s.add_argument("--nk", type=int, required=True, help="Controller order")
    s.add_argument("--init", help="Initial controller file (default: seeded random)")
    s.add_argument("--out", required=True, help="Output directory")
    _add_synthesis_options(s)

    n = sub.add_parser("norm", help="L-infinity norm of a closed loop")
    n.add_argument("--plant", required=True, help="Plant file")
    n.add_argument("--controller", help="Controller file (default: open loop)")
    n.add_argument("--tol", type=float, default=DELTA_HIGH, help="Relative tolerance")

    v = sub.add_parser("validate", help="Check FOM closed-loop stability")
    v.add_argument("--fom", required=True, help="FOM plant file")
    v.add_argument("--controller", required=True, help="Controller file")
    v.add_argument("--arnoldi-tol", type=float, default=1e-10, help="Arnoldi convergence tolerance")
    v.add_argument("--dense-limit", type=int, default=2000, help="Largest n checked densely")

    b = sub.add_parser("bench", help="Run the benchmark arms on a suite manifest")
    b.add_argument("--manifest", required=True, help="Suite manifest written by generate")
    b.add_argument("--out", required=True, help="Output directory")
    b.add_argument("--problems", nargs="*", help="Restrict to these problem names")
    b.add_argument("--threads", type=int, help="Parallel cells (capped by LOCSYN_THREADS)")
    b.add_argument("--timeout", type=float, help="Per-cell time limit in seconds")
    b.add_argument("--core-only", action="store_true",
                   help="Skip the two Alg1 R-only reference arms")
    _add_synthesis_options(b)
    return parser


def _synthesis_config(args) -> SynthesisConfig:
    return SynthesisConfig(
        mode=Mode(args.mode), algorithm=Algorithm(args.alg),
        norm_tol=DELTA_LOW if args.low_accuracy else args.norm_tol,
        stat_tol=args.stat_tol, phase_a_maxit=args.phase_a_maxit,
        phase_b_maxit_cumulative=args.phase_b_maxit, seed=args.seed,
        time_limit=args.time_limit,
    )


def _manifest_entry(name: str, outdir: Path, subdir: str, spec: HeatProblemSpec, r: int,
                    n_K: int) -> ManifestEntry:
    if r >= spec.n_x:
        raise ProblemSpecError(f"ROM order r={r} must be smaller than n_x={spec.n_x}")
    pair = reduce_modal(generate_fom(spec), r)
    target = outdir / subdir if subdir else outdir
    target.mkdir(parents=True, exist_ok=True)
    write_plant(pair.fom, target / "fom.txt")
    write_plant(pair.rom, target / "rom.txt")
    fom = pair.fom
    prefix = f"{subdir}/" if subdir else ""
    entry = ManifestEntry(
        name=name, fom=prefix + "fom.txt", rom=prefix + "rom.txt", n_K=n_K, seed=spec.seed,
        dims=dict(zip(("n_x", "n_w", "n_u", "n_z", "n_y"), fom.dims)) | {"r": pair.rom.n_x},
        alpha_fom_open=open_loop_abscissa(fom), alpha_rom_open=open_loop_abscissa(pair.rom), r=pair.rom.n_x,
    )
    print(f"{name}: n_x={fom.n_x} n_w={fom.n_w} n_z={fom.n_z} n_u={fom.n_u} n_y={fom.n_y} "
          f"r={pair.rom.n_x} alpha(A1)={entry.alpha_fom_open:.6g}")
    return entry


def cmd_generate(args) -> Tuple[int, RunConfig]:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.suite is not None:
        suite = default_suite(args.suite or None)
        entries = [_manifest_entry(e.name, outdir, e.name, e.spec, e.r, e.n_K) for e in suite]
        config = RunConfig(command="generate", outdir=str(outdir), suite=[e.name for e in suite])
    else:
        if args.r is None:
            raise ProblemSpecError("--r is required unless --suite is given")
        if args.spec:
            spec = HeatProblemSpec.model_validate_json(Path(args.spec).read_text())
        else:
            spec = heat_spec(args.m, args.ny, kappa=args.kappa, convection=(args.cx, args.cy),
                             w_d=args.w_d, eta=args.eta, control_weight=args.control_weight,
                             seed=args.seed)
        entries = [_manifest_entry(args.name, outdir, "", spec, args.r, args.nk)]
        config = RunConfig(command="generate", outdir=str(outdir), spec=spec, r=args.r, n_K=args.nk)
    SuiteManifest(problems=entries).save(outdir / MANIFEST_FILE)
    config.save(outdir)
    return EXIT_OK, config


def cmd_synthesize(args) -> Tuple[int, RunConfig]:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _synthesis_config(args)
    config = RunConfig(command="synthesize", outdir=str(outdir), fom=args.fom, rom=args.rom,
                       controller=args.init, n_K=args.nk, synthesis=cfg)
    config.save(outdir)
    problem = SynthesisProblem(rom=read_plant(args.rom), fom=read_plant(args.fom), n_K=args.nk, config=cfg)
    K0 = read_controller(args.init) if args.init else None
    result = synthesize(problem, K0)
    write_result(result, outdir / "result.txt")
    write_history_csv(result.history, outdir / "history.csv")
    write_controller(result.best_K, outdir / "controller.txt")
    print(f"status: {result.status.value}")
    print(f"F: {result.F_best:.16g}")
    print(f"alpha_rom: {result.alpha_rom:.16g}")
    print(f"alpha_fom: {result.alpha_fom:.16g}")
    print(f"restabilizations: {result.restabilizations}")
    print("seconds: total {:.3f}, stabilization {:.3f}, optimization {:.3f}".format(
        result.total_seconds, result.phase_seconds.get("A", 0.0), result.phase_seconds.get("B", 0.0)))
    if result.status in (SynthesisStatus.NUMERICAL_FAILURE, SynthesisStatus.VERIFICATION_FAILED):
        print(f"{result.status.value}: {result.message}", file=sys.stderr)
        return EXIT_NUMERICAL, config
    return (EXIT_OK if result.finite else EXIT_INFINITE), config


def cmd_norm(args) -> Tuple[int, RunConfig]:
    config = RunConfig(command="norm", plant=args.plant, controller=args.controller, tol=args.tol)
    plant = read_plant(args.plant)
    K = read_controller(args.controller) if args.controller else Controller.zeros(0, plant.n_u, plant.n_y)
    try:
        result = linf_norm_bbbs(assemble_closed_loop(plant, K), tol=args.tol)
    except InfiniteNormError as e:
        print(f"norm: inf ({e})")
        return EXIT_INFINITE, config
    print(f"norm: {result.value:.16g}")
    print(f"omega: {result.omega:.16g}")
    print(f"certified: {result.certified}")
    print(f"iterations: {result.iterations}")
    return EXIT_OK, config


def cmd_validate(args) -> Tuple[int, RunConfig]:
    config = RunConfig(command="validate", fom=args.fom, controller=args.controller)
    report = validate_controller(read_plant(args.fom), read_controller(args.controller),
                                 ArnoldiOptions(tol=args.arnoldi_tol), dense_limit=args.dense_limit)
    print(f"n: {report.n}")
    print(f"alpha_iterative: {report.alpha_iterative:.16g}")
    if report.alpha_dense is not None:
        print(f"alpha_dense: {report.alpha_dense:.16g}")
    if report.mismatch:
        print(f"WARNING: dense and iterative abscissae differ by {report.disagreement:.3e}")
    print("STABLE" if report.stable else "UNSTABLE")
    return (EXIT_OK if report.stable else EXIT_INFINITE), config


def cmd_bench(args) -> Tuple[int, RunConfig]:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _synthesis_config(args)
    config = RunConfig(command="bench", outdir=str(outdir), manifest=args.manifest, synthesis=cfg,
                       suite=args.problems, threads=args.threads, timeout=args.timeout,
                       core_only=args.core_only)
    config.save(outdir)
    arms = CORE_ARMS if args.core_only else ARMS
    tables = asyncio.run(run_bench(args.manifest, outdir, cfg, args.threads, args.problems,
                                   args.timeout, arms))
    print("Final F(K)")
    print(render_table(tables.f_rows()))
    print()
    print("Wall-clock seconds")
    print(render_table(tables.time_rows()))
    return EXIT_OK, config


COMMANDS = {
    "generate": cmd_generate,
    "synthesize": cmd_synthesize,
    "norm": cmd_norm,
    "validate": cmd_validate,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        code, _ = COMMANDS[args.command](args)
        return code
    except NumericalError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (LocsynError, OSError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
