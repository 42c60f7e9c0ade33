"""Software model of a microcontroller-based phase analyzer for fiber links."""

from .dsp import DemodConfig, DemodPipeline, ParameterError, run_pipeline
from .link import SyncExperiment, run_two_board_experiment
from .signals import LinkScenario, NoiseSpec, ToneSpec

__version__ = "0.1.0"

__all__ = ["DemodConfig", "DemodPipeline", "ParameterError", "run_pipeline", "SyncExperiment",
           "run_two_board_experiment", "LinkScenario", "NoiseSpec", "ToneSpec"]
