"""Monte Carlo simulator of collective-emission cavity cooling of falling Cs atoms."""
from .core import CONSTANTS, AtomEnsemble, AtomEnsembleInit, Constants, DriveConfig, sample_ensemble
from .detection import TofPeakDecomposer, decompose_peaks, synthesize_tof
from .engine import EngineParams, RunRecord, Simulation, run_scenario
from .forces import ForceModelConfig
from .scenarios import Scenario, load_preset, load_scenario
from .spectrum import CavityGeometry, CavitySpectrum
from .zeeman import ThresholdModel

__version__ = "0.1.0"

__all__ = [
    "CONSTANTS", "AtomEnsemble", "AtomEnsembleInit", "CavityGeometry", "CavitySpectrum", "Constants",
    "DriveConfig", "EngineParams", "ForceModelConfig", "RunRecord", "Scenario", "Simulation",
    "ThresholdModel", "TofPeakDecomposer", "decompose_peaks", "load_preset", "load_scenario",
    "run_scenario", "sample_ensemble", "synthesize_tof",
]
