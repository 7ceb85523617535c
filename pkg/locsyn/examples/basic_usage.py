import asyncio

import numpy as np

from locsyn import Controller, PlantRealization, SynthesisClient


async def main():
    # G(s) = 1/(s^2 + 0.2 s + 1) between w and z, measured and actuated at the same point
    plant = PlantRealization.from_blocks(
        A1=np.array([[0.0, 1.0], [-1.0, -0.2]]),
        B1=np.array([[0.0], [1.0]]),
        B2=np.array([[0.0], [1.0]]),
        C1=np.array([[1.0, 0.0]]),
        C2=np.array([[1.0, 0.0]]),
    )
    open_loop = Controller.zeros(0, plant.n_u, plant.n_y)
    result, errstr = await SynthesisClient.norm(plant, open_loop)
    print("Norm:", result.value if result else None)
    print("Peak frequency:", result.omega if result else None)
    print("Error:", errstr)

    damping = Controller(Ahat=np.zeros((0, 0)), Bhat=np.zeros((0, 1)),
                         Chat=np.zeros((1, 0)), Dhat=[[-0.5]])
    result, errstr = await SynthesisClient.norm(plant, damping)
    print("Norm with static gain -0.5:", result.value if result else None)
    print("Error:", errstr)


if __name__ == "__main__":
    asyncio.run(main())
