"""Linear attention, selective state-space models and the gated recurrence joining them."""

from .attention import (AttnParams, DenominatorClampWarning, Kernel, linear_attention_causal,
                        linear_attention_parallel, linear_attention_recurrent, softmax_attention)
from .blocks import BlockSpec, block_cost, block_forward, init_block
from .costs import CostReport, count_costs
from .model import MILA_B, MILA_S, MILA_T, ModelSpec, build_model, model_forward
from .numerics import DimensionError, NumericalDegeneracyError
from .posenc import Grid2D, PosEncKind, PosEncSpec
from .scan import scan_parallel, scan_serial
from .ssm import SsmParams, discretize, selective_scan_serial
from .unified import MixerConfig, UnifiedParams, preset, unified_forward

__version__ = "0.1.0"

__all__ = [
    "AttnParams", "BlockSpec", "CostReport", "DenominatorClampWarning", "DimensionError", "Grid2D", "Kernel",
    "MILA_B", "MILA_S", "MILA_T", "MixerConfig", "ModelSpec", "NumericalDegeneracyError", "PosEncKind",
    "PosEncSpec", "SsmParams", "UnifiedParams", "block_cost", "block_forward", "build_model", "count_costs",
    "discretize", "init_block", "linear_attention_causal", "linear_attention_parallel",
    "linear_attention_recurrent", "model_forward", "preset", "scan_parallel", "scan_serial",
    "selective_scan_serial", "softmax_attention", "unified_forward",
]
