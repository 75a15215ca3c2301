"""Deterministic simulator of communication-efficient federated training.

Implements skipping-based local training with control variates and pluggable
compression (fedcomloc with com/local/global variants), the fedavg,
sparse_fedavg, and scaffold baselines, non-iid Dirichlet data partitioning,
and exact communication-bit accounting, all in a single process.
"""

from .compressors import CompressorSpec, bit_cost, compose_topk_quant, quantize, top_k
from .core import axpy, derive_stream, l2_norm
from .data import (
    FederatedDataset,
    PartitionSpec,
    dirichlet_partition,
    load_idx,
    synth_classification,
)
from .fed import ClientState, FedConfig, RunResult, generate_coins, run, run_fedavg, run_fedcomloc, run_scaffold
from .harness import ConfigError, run_experiment, validate_config
from .metrics import BitLedger, RunRecord, total_cost
from .models import ModelSpec, evaluate, gradient, init_params, loss, param_count, sample_batch

__version__ = "0.1.0"

__all__ = [
    "BitLedger",
    "ClientState",
    "CompressorSpec",
    "ConfigError",
    "FedConfig",
    "FederatedDataset",
    "ModelSpec",
    "PartitionSpec",
    "RunRecord",
    "RunResult",
    "axpy",
    "bit_cost",
    "compose_topk_quant",
    "derive_stream",
    "dirichlet_partition",
    "evaluate",
    "generate_coins",
    "gradient",
    "init_params",
    "l2_norm",
    "load_idx",
    "loss",
    "param_count",
    "quantize",
    "run",
    "run_experiment",
    "run_fedavg",
    "run_fedcomloc",
    "run_scaffold",
    "sample_batch",
    "synth_classification",
    "top_k",
    "total_cost",
    "validate_config",
]
