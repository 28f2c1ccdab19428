"""Hierarchical multi-modal transformer for long-document classification.

Subpackages/modules
-------------------

 tensor    -- float64 tensors, recorded graphs, reverse-mode gradients
 bundles   -- feature bundles, the HMTB container, synthetic fixtures
 assembly  -- sentence pooling, image projection, sequence assembly
 mmt       -- section-level transformer
 dmmt      -- sentence-level multi-scale branches and dynamic fusion
 dmt       -- dynamic mask transfer between the two levels
 model     -- parameter set, forward pass, HMTP checkpoints
 trainer   -- AdamW loop, evaluation metrics
 gradcheck -- finite-difference verification
 cli       -- command-line interface
"""

from .bundles import (
    DatasetSplit,
    DocFeatureBundle,
    SynthSpec,
    read_hmtb,
    synth_generate,
    validate_bundle,
    write_hmtb,
)
from .config import TrainConfig, load_config, parse_config_text
from .gradcheck import model_gradient_check
from .model import (
    ModelParams,
    init_params,
    load_params,
    loss_ce,
    model_forward,
    save_params,
)
from .tensor import Graph, Tensor, backward, parameter
from .trainer import MetricsReport, compute_metrics, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit", "DocFeatureBundle", "SynthSpec", "read_hmtb",
    "synth_generate", "validate_bundle", "write_hmtb",
    "TrainConfig", "load_config", "parse_config_text",
    "model_gradient_check",
    "ModelParams", "init_params", "load_params", "loss_ce", "model_forward",
    "save_params",
    "Graph", "Tensor", "backward", "parameter",
    "MetricsReport", "compute_metrics", "evaluate", "train",
    "__version__",
]
