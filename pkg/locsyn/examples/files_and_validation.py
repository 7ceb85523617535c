import tempfile
from pathlib import Path

from locsyn.fileio import read_controller, read_plant, write_controller, write_plant
from locsyn.probgen import generate_problem, heat_spec, random_controller
from locsyn.synthesis import validate_controller


def main():
    pair = generate_problem(heat_spec(m=8, n_y=3), r=10)
    K = random_controller((pair.fom.n_u, pair.fom.n_y), n_K=3, seed=7)
    with tempfile.TemporaryDirectory() as tmp:
        fom_path = write_plant(pair.fom, Path(tmp) / "fom.txt")
        rom_path = write_plant(pair.rom, Path(tmp) / "rom.txt")
        k_path = write_controller(K, Path(tmp) / "controller.txt")
        fom, rom, K = read_plant(fom_path), read_plant(rom_path), read_controller(k_path)
    print("FOM dims:", fom.dims, "sparse A1:", fom.is_sparse)
    print("ROM dims:", rom.dims)
    report = validate_controller(fom, K)
    print("alpha iterative:", report.alpha_iterative)
    print("alpha dense:", report.alpha_dense)
    print("STABLE" if report.stable else "UNSTABLE")


if __name__ == "__main__":
    main()
