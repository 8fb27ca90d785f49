"""Graph decoder: autoregressive node-embedding generation and factorized decoding.

The generator unrolls an LSTM conditioned on the latent code; each
embedding then contributes an atom-type distribution, bilinear per-type
edge scores against every other embedding, and a keep probability that
doubles as the stop signal. The whole path is differentiable, and the
parameter count does not depend on how many steps are unrolled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chem import (
    ATOM_SYMBOLS,
    BOND_DIM,
    BondType,
    MolecularGraph,
    check_valence,
    is_connected,
)
from .nn import MLP, Linear, LSTMCell
from .tensor import (
    ParameterStore,
    Tensor,
    add,
    concat,
    constant,
    matmul,
    mul,
    sigmoid,
    slice_axis,
    softmax_rows,
    transpose,
    xavier_uniform,
)


@dataclass
class ProbabilisticGraph:
    """Continuous relaxation of a graph: edge/node distributions plus keep probs.

    ``edges[k]`` is an (n,n) tensor of type-k bond probabilities, exactly
    symmetric with a zero diagonal; ``nodes`` rows are softmax atom-type
    distributions; ``exist`` is an (m,1) column of keep probabilities, one
    per generated step (m is n or n+1 depending on the producing path).
    """

    edges: list[Tensor]
    nodes: Tensor
    exist: Tensor

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    def edge_array(self) -> np.ndarray:
        return np.stack([e.data for e in self.edges], axis=2)

    def node_array(self) -> np.ndarray:
        return self.nodes.data

    def exist_array(self) -> np.ndarray:
        return self.exist.data.reshape(-1)


class EmbeddingGenerator:
    """LSTM that emits one node embedding per step, conditioned on the latent."""

    def __init__(
        self,
        store: ParameterStore,
        cond_dim: int,
        embed_dim: int = 128,
        hidden: int = 128,
    ):
        self.cond_dim = cond_dim
        self.embed_dim = embed_dim
        self.start = store.parameter("decoder.gen.start", (1, embed_dim), xavier_uniform)
        self.input_mlp = MLP(store, "decoder.gen.input", [cond_dim + embed_dim, hidden, hidden])
        self.lstm = LSTMCell(store, "decoder.gen.lstm", hidden, hidden)
        self.embed_mlp = MLP(store, "decoder.gen.embed", [hidden + cond_dim, hidden, embed_dim])

    def step(self, cond: Tensor, prev_embed: Tensor, state) -> tuple[Tensor, tuple]:
        x = self.input_mlp(concat([cond, prev_embed], axis=1))
        h, c = self.lstm.step(x, state)
        embed = self.embed_mlp(concat([h, cond], axis=1))
        return embed, (h, c)


class FactorizationDecoder:
    """Maps a block of embeddings back to edge, node and keep probabilities."""

    def __init__(self, store: ParameterStore, embed_dim: int = 128, atom_dim: int = 9, edge_types: int = BOND_DIM):
        self.edge_types = edge_types
        self.factors = store.parameter("decoder.fact.factors", (edge_types, embed_dim))
        self.node_out = Linear(store, "decoder.fact.node", embed_dim, atom_dim)
        self.exist_mlp = MLP(store, "decoder.fact.exist", [embed_dim, 64, 1])

    def edge_probs(self, embeds: Tensor) -> list[Tensor]:
        """Per-type bond probabilities, symmetrized exactly, diagonal zeroed."""
        n = embeds.shape[0]
        offdiag = constant(1.0 - np.eye(n), dtype=embeds.data.dtype)
        out = []
        for k in range(self.edge_types):
            factor_row = slice_axis(self.factors, 0, k, k + 1)
            scores = matmul(mul(embeds, factor_row), transpose(embeds))
            # a+b == b+a in IEEE arithmetic, so this symmetrization is exact
            sym = mul(add(scores, transpose(scores)), 0.5)
            out.append(mul(sigmoid(sym), offdiag))
        return out

    def node_probs(self, embeds: Tensor) -> Tensor:
        return softmax_rows(self.node_out(embeds))

    def keep_probs(self, embeds: Tensor) -> Tensor:
        return sigmoid(self.exist_mlp(embeds))


class GraphDecoder:
    """Embedding generator plus factorization heads, with both unroll modes."""

    def __init__(
        self,
        store: ParameterStore,
        cond_dim: int,
        embed_dim: int = 128,
        hidden: int = 128,
        atom_dim: int = 9,
        edge_types: int = BOND_DIM,
    ):
        self.generator = EmbeddingGenerator(store, cond_dim, embed_dim, hidden)
        self.heads = FactorizationDecoder(store, embed_dim, atom_dim, edge_types)

    def generate_embeddings(
        self,
        cond: Tensor,
        n_max: int,
        teacher: Tensor | None = None,
        mix_prob: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> tuple[list[Tensor], Tensor]:
        """Unroll the generator; returns per-step embeddings and keep probabilities.

        With a teacher block (training) the unroll runs ``len(teacher)+1``
        steps and each step's input is the teacher embedding with
        probability ``mix_prob``, else the previous model output. Without a
        teacher (inference) the unroll stops after the first step whose
        keep probability falls below 0.5, or at ``n_max`` steps.
        """
        state = self.generator.lstm.initial_state()
        prev = self.generator.start
        embeds: list[Tensor] = []
        keeps: list[Tensor] = []
        steps = (teacher.shape[0] + 1) if teacher is not None else n_max
        for t in range(steps):
            embed, state = self.generator.step(cond, prev, state)
            embeds.append(embed)
            keep = self.heads.keep_probs(embed)
            keeps.append(keep)
            if teacher is None and keep.item() < 0.5:
                break
            if t + 1 < steps:
                if teacher is not None and t < teacher.shape[0]:
                    if mix_prob >= 1.0:
                        use_teacher = True
                    elif mix_prob <= 0.0:
                        use_teacher = False
                    else:
                        if rng is None:
                            raise ValueError("mixed teacher forcing needs an rng")
                        use_teacher = rng.random() < mix_prob
                    prev = slice_axis(teacher, 0, t, t + 1) if use_teacher else embed
                else:
                    prev = embed
        return embeds, concat(keeps, axis=0)

    def decode(self, embeds: list[Tensor], node_count: int, keeps: Tensor) -> ProbabilisticGraph:
        """Decode the first ``node_count`` embeddings into a probabilistic graph."""
        block = concat(embeds[:node_count], axis=0)
        return ProbabilisticGraph(
            edges=self.heads.edge_probs(block),
            nodes=self.heads.node_probs(block),
            exist=keeps,
        )

    def decode_training(
        self,
        cond: Tensor,
        teacher: Tensor,
        mix_prob: float,
        rng: np.random.Generator | None,
    ) -> ProbabilisticGraph:
        """Teacher-aware unroll of n+1 steps; graph decoded from the first n."""
        embeds, keeps = self.generate_embeddings(cond, 0, teacher, mix_prob, rng)
        return self.decode(embeds, teacher.shape[0], keeps)

    def decode_inference(self, cond: Tensor, n_max: int) -> ProbabilisticGraph | None:
        """Free-running unroll; ``None`` when the very first step is rejected."""
        embeds, keeps = self.generate_embeddings(cond, n_max)
        node_count = _kept_prefix(keeps.data.reshape(-1))
        if node_count == 0:
            return None
        return self.decode(embeds, node_count, keeps)


def _kept_prefix(exist: np.ndarray) -> int:
    count = 0
    for p in exist:
        if p >= 0.5:
            count += 1
        else:
            break
    return count


def discretize(pg: ProbabilisticGraph) -> MolecularGraph | None:
    """Threshold a probabilistic graph into a molecule, or ``None`` if invalid.

    Nodes are the prefix of steps whose keep probability is at least 0.5;
    atoms take the argmax type; a pair gets a bond of its argmax type only
    when that probability is at least 0.5. Valence violations and
    disconnected results are invalid.
    """
    node_count = min(_kept_prefix(pg.exist_array()), pg.n)
    if node_count < 1:
        return None
    node_arr = pg.node_array()
    edge_arr = pg.edge_array()
    atoms = tuple(ATOM_SYMBOLS[int(k)] for k in np.argmax(node_arr[:node_count], axis=1))
    bonds = set()
    for i in range(node_count):
        for j in range(i + 1, node_count):
            k_star = int(np.argmax(edge_arr[i, j]))
            if edge_arr[i, j, k_star] >= 0.5:
                bonds.add((i, j, BondType(k_star)))
    graph = MolecularGraph(atoms, frozenset(bonds))
    if not check_valence(graph) or not is_connected(graph):
        return None
    return graph
