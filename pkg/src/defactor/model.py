"""Full autoencoder assembly over a shared parameter store."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chem import ATOM_DIM, BOND_DIM, GraphTensors, MolecularGraph, tensorize
from .decoder import GraphDecoder, ProbabilisticGraph, discretize
from .encoder import GraphEncoder
from .tensor import ParameterStore, Tensor


@dataclass(frozen=True)
class ModelDims:
    atom_dim: int = ATOM_DIM
    edge_types: int = BOND_DIM
    gcn_layers: int = 3
    hidden: int = 128
    embed_dim: int = 128
    latent: int = 56
    property_dims: int = 0  # width of the property block appended to the latent

    @property
    def cond_dim(self) -> int:
        return self.latent + self.property_dims


class Autoencoder:
    """Encoder and decoder wired to one store; parameter names are stable."""

    def __init__(self, store: ParameterStore, dims: ModelDims):
        self.store = store
        self.dims = dims
        self.encoder = GraphEncoder(
            store,
            atom_dim=dims.atom_dim,
            edge_types=dims.edge_types,
            hidden=dims.hidden,
            embed_dim=dims.embed_dim,
            gcn_layers=dims.gcn_layers,
            latent=dims.latent,
        )
        self.decoder = GraphDecoder(
            store,
            cond_dim=dims.cond_dim,
            embed_dim=dims.embed_dim,
            hidden=dims.hidden,
            atom_dim=dims.atom_dim,
            edge_types=dims.edge_types,
        )

    def encode(self, gt: GraphTensors, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Node embeddings and latent code; pass an rng only in training mode."""
        return self.encoder.encode(gt, rng)

    def decode_inference(self, cond: Tensor, n_max: int) -> ProbabilisticGraph | None:
        return self.decoder.decode_inference(cond, n_max)

    def reconstruct(self, gt: GraphTensors, n_max: int) -> MolecularGraph | None:
        """Deterministic round trip through the latent code."""
        _, latent = self.encode(gt)
        pg = self.decode_inference(latent, n_max)
        return discretize(pg) if pg is not None else None

    def reconstruct_molecule(self, g: MolecularGraph, n_max: int) -> MolecularGraph | None:
        return self.reconstruct(tensorize(g), n_max)


def build_autoencoder(seed: int, dims: ModelDims | None = None) -> Autoencoder:
    dims = dims or ModelDims()
    return Autoencoder(ParameterStore(seed=seed), dims)
