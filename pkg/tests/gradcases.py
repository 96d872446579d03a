"""Shared per-op finite-difference cases (also run by the acceptance suite)."""

import numpy as np

from onetracker.autograd import Tensor, ops

# One finite-difference case per differentiable op (f64, random inputs, rel err <= 1e-4).
W3 = np.random.default_rng(7).standard_normal((3, 4, 5))
UNARY_CASES = {
    "relu": (lambda x: ops.relu(x), (3, 4, 5)),
    "gelu": (lambda x: ops.gelu(x), (3, 4, 5)),
    "sigmoid": (lambda x: ops.sigmoid(x), (3, 4, 5)),
    "exp": (lambda x: ops.exp(x), (3, 4)),
    "log": (lambda x: ops.log(x * x + 0.5), (3, 4)),
    "sqrt": (lambda x: ops.sqrt(x * x + 0.5), (3, 4)),
    "abs": (lambda x: ops.abs(x + 0.05), (3, 4)),
    "power": (lambda x: ops.power(x * x + 0.5, 1.5), (3, 4)),
    "neg": (lambda x: -x, (3, 4)),
    "clip": (lambda x: ops.clip(x, -0.5, 0.5), (3, 4)),
    "softmax": (lambda x: ops.softmax(x * 3.0, axis=-1), (3, 4, 5)),
    "softmax_axis0": (lambda x: ops.softmax(x, axis=0), (3, 4)),
    "layernorm": (lambda x: ops.layernorm(x, Tensor(np.linspace(0.5, 1.5, 5)), Tensor(np.linspace(-1, 1, 5))), (3, 4, 5)),
    "sum_axis": (lambda x: ops.sum(x, axis=1, keepdims=True), (3, 4, 5)),
    "mean_axes": (lambda x: ops.mean(x, axis=(0, 2)), (3, 4, 5)),
    "max_axis": (lambda x: ops.max(x, axis=-1), (3, 4, 5)),
    "reshape": (lambda x: ops.reshape(x, (12, 5)), (3, 4, 5)),
    "permute": (lambda x: ops.permute(x, (2, 0, 1)), (3, 4, 5)),
    "transpose_last2": (lambda x: ops.transpose_last2(x), (3, 4, 5)),
    "getitem": (lambda x: x[1:, ::2], (3, 4, 5)),
    "slice_firstdim": (lambda x: ops.slice_firstdim(x, 1, 3), (3, 4, 5)),
    "pad2d": (lambda x: ops.pad2d(x, 1), (2, 3, 3)),
    "concat": (lambda x: ops.concat([x, x * 2.0], axis=1), (3, 4, 5)),
    "mul_const_broadcast": (lambda x: x * Tensor(W3[0, 0]), (3, 4, 5)),
}


BINARY_CASES = {
    "add_broadcast": (ops.add, (3, 4), (4,)),
    "sub_broadcast": (ops.sub, (3, 1), (1, 4)),
    "mul": (ops.mul, (2, 3, 4), (2, 3, 4)),
    "div": (ops.div, (3, 4), (3, 4)),
    "maximum": (ops.maximum, (3, 4), (3, 4)),
    "minimum": (ops.minimum, (3, 4), (3, 4)),
    "matmul": (ops.matmul, (2, 3), (3, 4)),
    "matmul_batched": (ops.matmul, (2, 3, 4), (4, 5)),
    "matmul_batched_both": (ops.matmul, (2, 3, 4), (2, 4, 2)),
}
