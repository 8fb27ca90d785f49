"""Seeded generator for small valid molecules from the supported vocabulary.

Used to build desk-scale corpora (3-12 heavy atoms) without shipping any
external dataset. Every emitted SMILES parses back to a connected,
valence-legal graph.
"""

from __future__ import annotations

import numpy as np

from .chem import (
    MAX_VALENCE,
    BondType,
    MolecularGraph,
    check_valence,
    is_connected,
    parse_smiles,
    to_smiles,
)

_ATOM_CHOICES = ("C", "C", "C", "C", "C", "C", "N", "O", "F", "Cl", "Br", "S", "P", "I")

# rings legal under this artifact's valence rules (no fused aromatics)
_AROMATIC_RING_SIZES = (5, 6)


def _spare_valence(atoms: list[str], bonds: set[tuple[int, int, BondType]], idx: int) -> float:
    used = sum(bt.order for i, j, bt in bonds if idx in (i, j))
    return MAX_VALENCE[atoms[idx]] - used


def _random_aromatic_ring(rng: np.random.Generator) -> tuple[list[str], set]:
    size = int(rng.choice(_AROMATIC_RING_SIZES))
    atoms = ["C"] * size
    # at most one non-carbon ring member keeps every variant valence-legal
    if rng.random() < 0.5:
        atoms[int(rng.integers(size))] = "N" if rng.random() < 0.7 else "S"
    bonds = set()
    for k in range(size):
        i, j = sorted((k, (k + 1) % size))
        bonds.add((i, j, BondType.AROMATIC))
    return atoms, bonds


def random_molecule(rng: np.random.Generator, n_atoms: int) -> MolecularGraph:
    """One random connected, valence-legal molecule with ``n_atoms`` heavy atoms."""
    while True:
        built = _try_build(rng, n_atoms)
        if built is not None:
            return built


def _try_build(rng: np.random.Generator, n_atoms: int) -> MolecularGraph | None:
    atoms: list[str] = []
    bonds: set[tuple[int, int, BondType]] = set()

    if n_atoms >= 5 and rng.random() < 0.3:
        atoms, bonds = _random_aromatic_ring(rng)
    else:
        atoms = [str(rng.choice(_ATOM_CHOICES))]

    while len(atoms) < n_atoms:
        # attach a fresh atom to any site with spare valence
        sites = [i for i in range(len(atoms)) if _spare_valence(atoms, bonds, i) >= 1.0]
        if not sites:
            return None  # e.g. a lone halogen saturated immediately; rebuild
        anchor = int(rng.choice(sites))
        spare = _spare_valence(atoms, bonds, anchor)
        sym = str(rng.choice(_ATOM_CHOICES))
        order = BondType.SINGLE
        if spare >= 2.0 and MAX_VALENCE[sym] >= 2 and rng.random() < 0.25:
            order = BondType.DOUBLE
        if spare >= 3.0 and MAX_VALENCE[sym] >= 3 and rng.random() < 0.08:
            order = BondType.TRIPLE
        atoms.append(sym)
        bonds.add((anchor, len(atoms) - 1, order))

    # occasionally close an aliphatic ring
    if n_atoms >= 4 and rng.random() < 0.35:
        candidates = [
            (i, j)
            for i in range(len(atoms))
            for j in range(i + 1, len(atoms))
            if not any((i, j) == (a, b) for a, b, _ in bonds)
            and _spare_valence(atoms, bonds, i) >= 1.0
            and _spare_valence(atoms, bonds, j) >= 1.0
        ]
        if candidates:
            i, j = candidates[int(rng.integers(len(candidates)))]
            bonds.add((i, j, BondType.SINGLE))

    graph = MolecularGraph(tuple(atoms), frozenset(bonds))
    assert check_valence(graph) and is_connected(graph)
    return graph


def generate_corpus(
    seed: int, count: int, min_atoms: int = 3, max_atoms: int = 12
) -> list[str]:
    """Deterministic list of ``count`` unique SMILES strings.

    Each string is produced by serializing a random molecule and verified
    to re-parse; duplicates are skipped.
    """
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < count:
        n_atoms = int(rng.integers(min_atoms, max_atoms + 1))
        smiles = to_smiles(random_molecule(rng, n_atoms))
        if smiles in seen:
            continue
        parse_smiles(smiles)
        seen.add(smiles)
        out.append(smiles)
    return out
