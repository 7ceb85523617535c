import asyncio

import numpy as np

from locsyn import Controller, PlantRealization, SynthesisClient
from locsyn.exceptions import NonzeroFeedthroughError


async def main():
    plant = PlantRealization.from_blocks(A1=[[-2.0]], B1=[[1.0]], B2=[[1.0]], C1=[[1.0]], C2=[[1.0]])

    # Example 1: negative controller order
    result, errstr = await SynthesisClient.synthesize(plant, plant, n_K=-1)
    print("[Negative order] Result:", result)
    print("[Negative order] Error:", errstr)

    # Example 2: controller with the wrong number of measurements
    wrong = Controller.zeros(0, 1, 2)
    result, errstr = await SynthesisClient.norm(plant, wrong)
    print("[Wrong controller] Result:", result)
    print("[Wrong controller] Error:", errstr)

    # Example 3: closed loop with an imaginary-axis pole
    marginal = Controller(Ahat=np.zeros((0, 0)), Bhat=np.zeros((0, 1)),
                          Chat=np.zeros((1, 0)), Dhat=[[2.0]])
    result, errstr = await SynthesisClient.norm(plant, marginal)
    print("[Marginal loop] Result:", result)
    print("[Marginal loop] Error:", errstr)

    # Example 4: nonzero D22 is rejected at construction
    try:
        PlantRealization.from_blocks(A1=[[-2.0]], B1=[[1.0]], B2=[[1.0]], C1=[[1.0]], C2=[[1.0]],
                                     D22=[[0.5]])
    except NonzeroFeedthroughError as e:
        print("[Nonzero D22] Error:", e)


if __name__ == "__main__":
    asyncio.run(main())
