"""Graph encoder: edge-typed graph convolutions, then LSTM aggregation.

The convolution accepts the adjacency slices as tensors, so the same code
path serves discrete molecule tensors (wrapped as constants) and the
continuous edge probabilities produced by the decoder. Degree
normalization treats zero degrees as zero, which keeps isolated nodes and
absent edge types well defined.
"""

from __future__ import annotations

import numpy as np

from .chem import GraphTensors
from .nn import Linear, LSTMCell
from .tensor import (
    ParameterStore,
    Tensor,
    add,
    constant,
    matmul,
    mul,
    relu,
    rsqrt_safe,
    slice_axis,
    transpose,
)


def adjacency_tensors(gt: GraphTensors, dtype=np.float32) -> list[Tensor]:
    """Per-bond-type adjacency slices wrapped as constant tensors."""
    return [constant(gt.adjacency[:, :, k], dtype=dtype) for k in range(gt.adjacency.shape[2])]


def normalize_adjacency(edges: list[Tensor]) -> list[Tensor]:
    """Symmetric degree normalization per edge type: d^(-1/2) A d^(-1/2)."""
    out = []
    for a in edges:
        n = a.shape[0]
        ones = Tensor(np.ones((n, 1)), dtype=a.data.dtype)
        degree = matmul(a, ones)
        scale = rsqrt_safe(degree)
        out.append(mul(mul(a, scale), transpose(scale)))
    return out


class GcnLayer:
    """One relational convolution: per-type neighbor mixing plus a self map."""

    def __init__(self, store: ParameterStore, prefix: str, in_dim: int, out_dim: int, edge_types: int):
        self.type_weights = [
            store.parameter(f"{prefix}.W_e.{k}", (in_dim, out_dim)) for k in range(edge_types)
        ]
        self.self_weight = store.parameter(f"{prefix}.W_s", (in_dim, out_dim))

    def __call__(self, feats: Tensor, norm_adj: list[Tensor]) -> Tensor:
        acc = matmul(feats, self.self_weight)
        for adj_k, weight_k in zip(norm_adj, self.type_weights):
            acc = add(acc, matmul(adj_k, matmul(feats, weight_k)))
        return relu(acc)


class GcnStack:
    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        in_dim: int,
        hidden: int,
        out_dim: int,
        layers: int,
        edge_types: int,
    ):
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.layers = [
            GcnLayer(store, f"{prefix}.{k}", dims[k], dims[k + 1], edge_types)
            for k in range(layers)
        ]

    def __call__(self, edges: list[Tensor], feats: Tensor) -> Tensor:
        norm_adj = normalize_adjacency(edges)
        for layer in self.layers:
            feats = layer(feats, norm_adj)
        return feats


class GraphEncoder:
    """Produces node embeddings and a fixed-width latent code for a graph."""

    def __init__(
        self,
        store: ParameterStore,
        atom_dim: int = 9,
        edge_types: int = 4,
        hidden: int = 128,
        embed_dim: int = 128,
        gcn_layers: int = 3,
        latent: int = 56,
    ):
        self.latent = latent
        self.embed_dim = embed_dim
        self.dtype = store.dtype
        self.gcn = GcnStack(store, "encoder.gcn", atom_dim, hidden, embed_dim, gcn_layers, edge_types)
        self.agg_lstm = LSTMCell(store, "encoder.agg.lstm", embed_dim, hidden)
        self.agg_out = Linear(store, "encoder.agg.out", hidden, latent)

    def node_embeddings(self, gt: GraphTensors) -> Tensor:
        feats = constant(gt.nodes, dtype=self.dtype)
        return self.gcn(adjacency_tensors(gt, dtype=self.dtype), feats)

    def aggregate(self, embeds: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """Latent code from node embeddings.

        With ``rng`` given (training) the rows are fed to the aggregation
        LSTM in one fresh uniform permutation; without it (evaluation) the
        canonical node order is used.
        """
        n = embeds.shape[0]
        order = rng.permutation(n) if rng is not None else range(n)
        rows = [slice_axis(embeds, 0, int(i), int(i) + 1) for i in order]
        return self.agg_out(self.agg_lstm.run(rows))

    def encode(self, gt: GraphTensors, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        embeds = self.node_embeddings(gt)
        return embeds, self.aggregate(embeds, rng)
