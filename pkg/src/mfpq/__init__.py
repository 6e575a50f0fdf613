"""Memory-free, parallel-trainable quantized spiking neural networks."""

from .network import MFPNetwork
from .neurons import (
    MFPLayer,
    NeuronConfig,
    SpikeTrain,
    StreamingState,
    TemporalMixMatrix,
    lif_step,
    mfp_folded_step,
    mfp_parallel_forward,
    mfp_streaming_step,
    network_forward,
    qlif_step,
)
from .numeric import LowerTriangular, matmul, tri_invert
from .quantization import BinaryLinear, QuantSpec, binarize, fold_thresholds, quantize_uniform, ste_grad

__version__ = "0.1.0"

__all__ = [
    "BinaryLinear",
    "LowerTriangular",
    "MFPLayer",
    "MFPNetwork",
    "NeuronConfig",
    "QuantSpec",
    "SpikeTrain",
    "StreamingState",
    "TemporalMixMatrix",
    "binarize",
    "fold_thresholds",
    "lif_step",
    "matmul",
    "mfp_folded_step",
    "mfp_parallel_forward",
    "mfp_streaming_step",
    "network_forward",
    "qlif_step",
    "quantize_uniform",
    "ste_grad",
    "tri_invert",
]
