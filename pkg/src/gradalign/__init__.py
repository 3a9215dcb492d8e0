"""Training-free architecture scoring by per-sample gradient sign alignment."""

from .archspace import ArchGenome, SpaceSpec, build_network, decode_genome, sample_space
from .autodiff import GraphBuilder, NetworkInstance, forward_batch, per_sample_gradients
from .errors import DataError, GradAlignError, NumericalError, UsageError
from .harness import ProbeSet, build_probe, evaluate_metric, kendall_tau
from .metrics import METRICS, ScoreRecord, gradalign1, gradalign2, score_architecture
from .oracle import BenchmarkTable, TrainConfig, benchmark_space, generate_dataset

__all__ = [
    "ArchGenome",
    "SpaceSpec",
    "build_network",
    "decode_genome",
    "sample_space",
    "GraphBuilder",
    "NetworkInstance",
    "forward_batch",
    "per_sample_gradients",
    "DataError",
    "GradAlignError",
    "NumericalError",
    "UsageError",
    "ProbeSet",
    "build_probe",
    "evaluate_metric",
    "kendall_tau",
    "METRICS",
    "ScoreRecord",
    "gradalign1",
    "gradalign2",
    "score_architecture",
    "BenchmarkTable",
    "TrainConfig",
    "benchmark_space",
    "generate_dataset",
]
