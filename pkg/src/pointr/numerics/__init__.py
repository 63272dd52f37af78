from .checkpoint import CheckpointFormatError, load_tensors, save_tensors
from .gradcheck import probe_gradients, relative_error
from .nn import LayerNorm, Linear, Module, Parameter, kaiming_uniform
from .tensor import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    default_dtype,
    dropout,
    exp,
    gather_rows,
    get_default_dtype,
    layer_norm,
    leaky_relu,
    linear,
    matmul,
    max_over_axis,
    mean,
    mul,
    relu,
    reshape,
    row_norm,
    set_default_dtype,
    softmax,
    softmax_axis,
    sub,
    sum,
    transpose,
)
