"""Differentiable edge-factorization autoencoder for molecular graphs."""

from .chem import (
    BondType,
    Fingerprint,
    GraphTensors,
    MolecularGraph,
    check_valence,
    detensorize,
    fingerprint,
    parse_smiles,
    proxy_logp,
    tanimoto,
    tensorize,
    to_smiles,
)
from .tensor import ParameterStore, Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "BondType",
    "Fingerprint",
    "GraphTensors",
    "MolecularGraph",
    "ParameterStore",
    "Tape",
    "Tensor",
    "check_valence",
    "detensorize",
    "fingerprint",
    "parse_smiles",
    "proxy_logp",
    "tanimoto",
    "tensorize",
    "to_smiles",
    "__version__",
]
