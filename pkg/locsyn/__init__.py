from .__version__ import __version__
from .client import SynthesisClient
from .config import Algorithm, ArnoldiOptions, Mode, NormOptions, SolverOptions, SynthesisConfig
from .exceptions import LocsynError, NumericalError
from .models import Controller, PlantRealization
from .synthesis import SynthesisProblem, SynthesisResult, evaluate_F, synthesize

__all__ = [
    "__version__",
    "Algorithm",
    "ArnoldiOptions",
    "Controller",
    "LocsynError",
    "Mode",
    "NormOptions",
    "NumericalError",
    "PlantRealization",
    "SolverOptions",
    "SynthesisClient",
    "SynthesisConfig",
    "SynthesisProblem",
    "SynthesisResult",
    "evaluate_F",
    "synthesize",
]
