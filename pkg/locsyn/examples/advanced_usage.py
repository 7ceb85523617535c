import asyncio
import logging

from locsyn import Mode, SynthesisClient, SynthesisConfig
from locsyn.probgen import generate_problem, heat_spec, random_controller


async def run(pair, mode, K0):
    config = SynthesisConfig(mode=mode, phase_a_maxit=100, phase_b_maxit_cumulative=30, stat_tol=1e-6)
    result, errstr = await SynthesisClient.synthesize(pair.rom, pair.fom, n_K=K0.order, config=config, K0=K0)
    if result is None:
        print(f"[{mode.value}] Error:", errstr)
        return
    print(f"[{mode.value}] status={result.status.value} F={result.F_best:.6g} "
          f"alpha_rom={result.alpha_rom:.4g} alpha_fom={result.alpha_fom:.4g} "
          f"iterations={result.iterations_a}+{result.iterations_b}")


async def main():
    logging.basicConfig(level=logging.WARNING, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    pair = generate_problem(heat_spec(m=6, n_y=2, convection=(5.0, 0.0)), r=6)
    K0 = random_controller((pair.rom.n_u, pair.rom.n_y), n_K=2, seed=1)
    await asyncio.gather(*(run(pair, mode, K0) for mode in (Mode.R_ONLY, Mode.R_PLUS_F)))


if __name__ == "__main__":
    asyncio.run(main())
