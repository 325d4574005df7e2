#
# License: See LICENSE.md file
#

__version__ = "1.0.0"

from . import logging # isort:skip

__all__ = [
    "ClassifierModel",
    "NetworkSpec",
    "TrainConfig",
    "PerturbConfig",
    "PipelineConfig",
    "DtConfig",
    "run_pipeline",
    "ablate",
    "evaluate",
]

from .core.network import ClassifierModel, NetworkSpec, TrainConfig # isort:skip
from .core.perturbation import PerturbConfig # isort:skip
from .detect.tree import DtConfig # isort:skip
from .detect.pipeline import PipelineConfig, ablate, run_pipeline # isort:skip
from .metrics import evaluate # isort:skip
