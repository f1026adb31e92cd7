"""Graph layers (attention, convolution, sampled-mean aggregation) over the
case graph, with a residual connection from the input features.

All layers keep width ``d`` equal to the feature dimension so the final
residual ``h = h_k + x`` type-checks without projection. Attention and
convolution neighbourhoods include a self-loop; the mean-aggregation layer
keeps the node's own vector explicitly via concatenation instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .gcg import GcgAdjacency, NodeFeatures


class Arch(str, Enum):
    GAT = "gat"
    GCN = "gcn"
    SAGE = "sage"


class Activation(str, Enum):
    ELU = "elu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class GnnConfig:
    arch: Arch = Arch.GAT
    layers: int = 2
    heads: int = 1
    dropout: float = 0.1
    activation: Activation = Activation.ELU
    dim: int = 128
    residual: bool = True
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.layers < 1:
            raise ValidationError("layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.heads < 1:
            raise ValidationError("heads must be >= 1")


@dataclass
class ModelParams:
    """Named parameter tensors; names are stable for checkpointing."""

    tensors: dict[str, ad.Tensor]

    def all(self) -> list[ad.Tensor]:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def named(self) -> list[tuple[str, ad.Tensor]]:
        return [(k, self.tensors[k]) for k in sorted(self.tensors)]


def _glorot(rng: np.random.Generator, shape: tuple[int, int], dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(config: GnnConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    d = config.dim
    tensors: dict[str, ad.Tensor] = {}
    for layer in range(config.layers):
        prefix = f"layers.{layer}"
        if config.arch is Arch.GAT:
            for head in range(config.heads):
                tensors[f"{prefix}.heads.{head}.W"] = ad.Tensor(
                    _glorot(rng, (d, d), dtype), requires_grad=True
                )
                tensors[f"{prefix}.heads.{head}.a"] = ad.Tensor(
                    _glorot(rng, (2 * d, 1), dtype), requires_grad=True
                )
        elif config.arch is Arch.GCN:
            tensors[f"{prefix}.W"] = ad.Tensor(
                _glorot(rng, (d, d), dtype), requires_grad=True
            )
        else:
            tensors[f"{prefix}.W"] = ad.Tensor(
                _glorot(rng, (2 * d, d), dtype), requires_grad=True
            )
        tensors[f"{prefix}.bias"] = ad.Tensor(
            np.zeros(d, dtype=dtype), requires_grad=True
        )
    return ModelParams(tensors=tensors)


def edge_arrays(a: np.ndarray, self_loops: bool) -> tuple[np.ndarray, np.ndarray]:
    """(src, dst) index arrays from a dense adjacency; dst ascending."""
    mat = a.astype(bool)
    if self_loops:
        mat = mat | np.eye(a.shape[0], dtype=bool)
    dst, src = np.nonzero(mat)
    return src.astype(np.int64), dst.astype(np.int64)


def _activate(t: ad.Tensor, activation: Activation) -> ad.Tensor:
    if activation is Activation.ELU:
        return ad.elu(t)
    return t


def gat_layer(
    h: ad.Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    n_nodes: int,
    head_params: list[tuple[ad.Tensor, ad.Tensor]],
    bias: ad.Tensor,
    activation: Activation,
    leaky_slope: float = 0.2,
    attention_out: list | None = None,
) -> ad.Tensor:
    """Attention layer: per-edge scores, softmax per destination, aggregate.

    Multi-head outputs are averaged so the width stays d. When
    ``attention_out`` is a list, the per-head edge attention arrays are
    appended to it (value copies, for inspection only).
    """
    d = h.shape[1]
    head_outs = []
    for w, a_vec in head_params:
        wh = ad.matmul(h, w)
        s_src = ad.matmul(wh, ad.gather_rows(a_vec, np.arange(d)))
        s_dst = ad.matmul(wh, ad.gather_rows(a_vec, np.arange(d, 2 * d)))
        e = ad.leaky_relu(
            ad.add(ad.gather_rows(s_src, src), ad.gather_rows(s_dst, dst)),
            slope=leaky_slope,
        )
        alpha = ad.segment_softmax(e, dst)
        if attention_out is not None:
            attention_out.append(alpha.data.reshape(-1).copy())
        msgs = ad.hadamard(ad.gather_rows(wh, src), alpha)
        head_outs.append(ad.scatter_add_rows(msgs, dst, n_nodes))
    agg = head_outs[0]
    for extra in head_outs[1:]:
        agg = ad.add(agg, extra)
    if len(head_outs) > 1:
        agg = ad.scale(agg, 1.0 / len(head_outs))
    return _activate(ad.add(agg, bias), activation)


def gcn_layer(
    h: ad.Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    n_nodes: int,
    w: ad.Tensor,
    bias: ad.Tensor,
    activation: Activation,
) -> ad.Tensor:
    """Symmetric-normalized convolution with self-loops."""
    deg = np.bincount(dst, minlength=n_nodes).astype(np.float64)
    coeff = 1.0 / np.sqrt(deg[src] * deg[dst])
    hw = ad.matmul(h, w)
    msgs = ad.hadamard(ad.gather_rows(hw, src), ad.Tensor(coeff[:, None]))
    agg = ad.scatter_add_rows(msgs, dst, n_nodes)
    return _activate(ad.add(agg, bias), activation)


def sage_layer(
    h: ad.Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    n_nodes: int,
    w: ad.Tensor,
    bias: ad.Tensor,
    activation: Activation,
) -> ad.Tensor:
    """Concat of the node vector with its neighbour mean (zero if isolated)."""
    neigh_sum = ad.scatter_add_rows(ad.gather_rows(h, src), dst, n_nodes)
    deg = np.bincount(dst, minlength=n_nodes).astype(np.float64)
    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    neigh_mean = ad.hadamard(neigh_sum, ad.Tensor(inv_deg[:, None]))
    cat = ad.concat_rows(h, neigh_mean)
    return _activate(ad.add(ad.matmul(cat, w), bias), activation)


def _layer_params(params: ModelParams, config: GnnConfig, layer: int):
    prefix = f"layers.{layer}"
    bias = params.tensors[f"{prefix}.bias"]
    if config.arch is Arch.GAT:
        heads = [
            (
                params.tensors[f"{prefix}.heads.{head}.W"],
                params.tensors[f"{prefix}.heads.{head}.a"],
            )
            for head in range(config.heads)
        ]
        return heads, bias
    return params.tensors[f"{prefix}.W"], bias


def _dropout_seed(seed: int, layer: int) -> int:
    return int(np.random.SeedSequence([seed, layer]).generate_state(1)[0])


def stack_features(features: NodeFeatures, dtype=None) -> np.ndarray:
    parts = [features.case_features]
    if features.charge_features.shape[0]:
        parts.append(features.charge_features)
    x = np.concatenate(parts, axis=0) if len(parts) > 1 else features.case_features
    return x.astype(dtype) if dtype is not None else x


def forward(
    adjacency: GcgAdjacency,
    features: NodeFeatures,
    params: ModelParams,
    config: GnnConfig,
    train: bool = False,
    seed: int = 0,
) -> ad.Tensor:
    """k layers over the graph, then the residual ``h = h_k + x``.

    Dropout hits the node matrix before each layer in training; evaluation
    is deterministic.
    """
    if config.dim != features.dim:
        raise ValidationError(
            f"config dim {config.dim} != feature dim {features.dim}"
        )
    param_dtype = params.all()[0].data.dtype if params.tensors else np.float32
    x_np = stack_features(features, dtype=param_dtype)
    n_nodes = adjacency.n + adjacency.m
    if x_np.shape[0] != n_nodes:
        raise ValidationError(
            f"{x_np.shape[0]} feature rows for {n_nodes} graph nodes"
        )
    x = ad.Tensor(x_np)
    self_loops = config.arch in (Arch.GAT, Arch.GCN)
    src, dst = edge_arrays(adjacency.a, self_loops=self_loops)

    h = x
    for layer in range(config.layers):
        h = ad.dropout(h, config.dropout, _dropout_seed(seed, layer), train)
        layer_p, bias = _layer_params(params, config, layer)
        if config.arch is Arch.GAT:
            h = gat_layer(
                h, src, dst, n_nodes, layer_p, bias, config.activation,
                config.leaky_slope,
            )
        elif config.arch is Arch.GCN:
            h = gcn_layer(h, src, dst, n_nodes, layer_p, bias, config.activation)
        else:
            h = sage_layer(h, src, dst, n_nodes, layer_p, bias, config.activation)
    if config.residual:
        h = ad.add(h, x)
    return h
