from .batch import PaddedBatch
from .ops import (
    ACTIVATIONS,
    GATED,
    NormParams,
    activation,
    apply_mask,
    batch_norm,
    conv1d,
    conv_out_length,
    dropout,
    fold_batchnorm,
    layer_norm_masked,
    log_softmax,
    make_rng,
    same_padding,
    sequence_mask,
    weight_norm,
    weight_norm_reparam,
)
from .tensor import NonFiniteError, Tensor, add, add_n, as_tensor, backward, concat, mul, sum_all, zero_grad

__all__ = [
    "ACTIVATIONS",
    "GATED",
    "NonFiniteError",
    "NormParams",
    "PaddedBatch",
    "Tensor",
    "activation",
    "add",
    "add_n",
    "apply_mask",
    "as_tensor",
    "backward",
    "batch_norm",
    "concat",
    "conv1d",
    "conv_out_length",
    "dropout",
    "fold_batchnorm",
    "layer_norm_masked",
    "log_softmax",
    "make_rng",
    "mul",
    "same_padding",
    "sequence_mask",
    "sum_all",
    "weight_norm",
    "weight_norm_reparam",
    "zero_grad",
]
