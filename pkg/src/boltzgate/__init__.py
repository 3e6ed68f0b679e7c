"""Boltzmann-machine gated attention for DNA sequence classification."""
from .attention import AttentionLayer, NoiseSource
from .data import SequenceRecord, SynthSpec, encode, load_tsv, synth_generate
from .energy import EnergyParams, StructureState, free_energy, total_energy
from .meanfield import SolverConfig, solve
from .model import BMClassifier, ModelConfig, load_checkpoint, save_checkpoint
from .structure import StructureExport, export_structure
from .training import EpochMetrics, TrainConfig, Trainer, evaluate

__version__ = "0.1.0"
