"""
Parameter layout and forward functions for the temporal convolution stacks.
Parameters live in a ParamStore under dotted names; forward functions take
the Tensor leaves of that store.
"""
from typing import Dict, List

import numpy as np

from diffcore import ops
from diffcore.graph import Tensor, add
from diffcore.params import ParamStore

Params = Dict[str, Tensor]


def init_conv(store: ParamStore, name: str, c_out: int, c_in: int, kernel_size: int, rng: np.random.Generator):
    fan_in = c_in * kernel_size
    store.uniform(f"{name}.w", (c_out, c_in, kernel_size), fan_in, rng)
    store.uniform(f"{name}.b", (c_out,), fan_in, rng)


def conv(p: Params, name: str, x: Tensor, dilation: int = 1) -> Tensor:
    return ops.conv1d(x, p[f"{name}.w"], p[f"{name}.b"], dilation=dilation)


def init_res_block(store: ParamStore, name: str, width: int, kernel_size: int, rng: np.random.Generator):
    init_conv(store, f"{name}.conv1", width, width, kernel_size, rng)
    init_conv(store, f"{name}.conv2", width, width, 1, rng)


def res_block(p: Params, name: str, x: Tensor, dilation: int) -> Tensor:
    """x + conv2(relu(conv1_dilated(relu(x))))"""
    h = conv(p, f"{name}.conv1", ops.relu(x), dilation)
    h = conv(p, f"{name}.conv2", ops.relu(h))
    return add(x, h)


def init_tcn_stage(store: ParamStore, name: str, width: int, kernel_size: int, dilations: List[int],
                   rng: np.random.Generator):
    init_conv(store, f"{name}.conv", width, width, kernel_size, rng)
    for i, _ in enumerate(dilations):
        init_res_block(store, f"{name}.res{i}", width, kernel_size, rng)


def tcn_stage(p: Params, name: str, x: Tensor, dilations: List[int]) -> Tensor:
    h = conv(p, f"{name}.conv", x)
    for i, dilation in enumerate(dilations):
        h = res_block(p, f"{name}.res{i}", h, dilation)
    return h
