"""Hadamard-domain quantized training for class-incremental learning."""

from .cil import IncrementalFCNClassifier
from .hadamard import HadamardTransformer, apply_block_hadamard, fwht_inplace, plan_blocks, sylvester
from .numerics import Rng, matmul_ref
from .qgemm import GemmStats, qgemm_backward_input, qgemm_backward_weight, qgemm_forward
from .quantizer import QuantConfig, QuantTensor, dequantize, quantize_nearest, quantize_stochastic

__version__ = "0.1.0"

__all__ = [
    "GemmStats",
    "HadamardTransformer",
    "IncrementalFCNClassifier",
    "QuantConfig",
    "QuantTensor",
    "Rng",
    "apply_block_hadamard",
    "dequantize",
    "fwht_inplace",
    "matmul_ref",
    "plan_blocks",
    "qgemm_backward_input",
    "qgemm_backward_weight",
    "qgemm_forward",
    "quantize_nearest",
    "quantize_stochastic",
    "sylvester",
]
