"""Molecular graphs over a small organic vocabulary, with a SMILES codec.

The graph model is deliberately narrow: nine heavy-atom types, four bond
orders, implicit hydrogens, no charges and no stereochemistry. Node order
is canonical and equals the order atoms appear in the defining SMILES
string. All types here are immutable and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

ATOM_SYMBOLS = ("C", "N", "O", "F", "P", "S", "Cl", "Br", "I")
ATOM_DIM = len(ATOM_SYMBOLS)
MAX_VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1, "P": 5, "S": 6, "Cl": 1, "Br": 1, "I": 1}

_ATOM_INDEX = {sym: i for i, sym in enumerate(ATOM_SYMBOLS)}
_AROMATIC_INPUT = {"c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_TWO_LETTER = ("Cl", "Br")
_UNSUPPORTED_CHARS = set("[]%@+/\\.*~$")

FINGERPRINT_BITS = 2048


class SmilesError(ValueError):
    """Base class for SMILES codec failures."""


class MalformedInput(SmilesError):
    pass


class UnknownAtom(SmilesError):
    pass


class UnbalancedRing(SmilesError):
    pass


class UnsupportedFeature(SmilesError):
    pass


class ValenceViolation(SmilesError):
    pass


class BondType(Enum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def order(self) -> float:
        """Contribution of one bond of this type to an atom's valence."""
        return (1.0, 2.0, 3.0, 1.5)[self.value]


BOND_DIM = len(BondType)

_BOND_FROM_CHAR = {
    "-": BondType.SINGLE,
    "=": BondType.DOUBLE,
    "#": BondType.TRIPLE,
    ":": BondType.AROMATIC,
}
_CHAR_FROM_BOND = {b: c for c, b in _BOND_FROM_CHAR.items()}


@dataclass(frozen=True)
class MolecularGraph:
    """Node-typed, edge-typed undirected graph with canonical node order.

    ``atoms`` is an ordered tuple of symbols from :data:`ATOM_SYMBOLS`;
    ``bonds`` is a frozenset of ``(i, j, BondType)`` with ``i < j``, no
    self-loops, and at most one bond per pair.
    """

    atoms: tuple[str, ...]
    bonds: frozenset[tuple[int, int, BondType]]

    def __post_init__(self):
        if len(self.atoms) < 1:
            raise ValueError("a molecular graph needs at least one atom")
        for sym in self.atoms:
            if sym not in _ATOM_INDEX:
                raise UnknownAtom(f"atom symbol {sym!r} outside vocabulary")
        seen_pairs = set()
        for i, j, bt in self.bonds:
            if not (0 <= i < j < len(self.atoms)):
                raise ValueError(f"bond ({i},{j}) out of range or not i<j")
            if not isinstance(bt, BondType):
                raise ValueError(f"bad bond type {bt!r}")
            if (i, j) in seen_pairs:
                raise ValueError(f"duplicate bond between {i} and {j}")
            seen_pairs.add((i, j))

    @property
    def n(self) -> int:
        return len(self.atoms)

    def neighbors(self) -> list[list[tuple[int, BondType]]]:
        """Adjacency lists, each sorted by neighbor index."""
        adj: list[list[tuple[int, BondType]]] = [[] for _ in self.atoms]
        for i, j, bt in self.bonds:
            adj[i].append((j, bt))
            adj[j].append((i, bt))
        for lst in adj:
            lst.sort()
        return adj


@dataclass(frozen=True)
class GraphTensors:
    """Dense binary tensor form: adjacency (n,n,e) and one-hot nodes (n,d)."""

    adjacency: np.ndarray
    nodes: np.ndarray

    @property
    def n(self) -> int:
        return self.nodes.shape[0]


@dataclass(frozen=True)
class Fingerprint:
    """Fixed-width bit vector stored as an integer bitmask."""

    bits: int
    width: int = FINGERPRINT_BITS

    def count(self) -> int:
        return bin(self.bits).count("1")


# -- parsing ---------------------------------------------------------------


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string from the supported grammar subset.

    Supported: bare atom symbols from the vocabulary (lowercase c/n/o/p/s
    for aromatic atoms), bond symbols ``- = # :``, branches ``()``, and
    single-digit ring closures. Bracket atoms, charges, isotopes, stereo
    markers, two-digit ``%nn`` closures and disconnections are rejected
    with :class:`UnsupportedFeature`. Hydrogens stay implicit.

    A bond written without a symbol is single, except between two aromatic
    atoms where it becomes aromatic if the bond lies on a ring and single
    otherwise.
    """
    if not isinstance(text, str) or not text.strip():
        raise MalformedInput("empty SMILES string")
    if not text.isascii():
        raise MalformedInput("SMILES must be ASCII")
    s = text.strip()

    atoms: list[str] = []
    aromatic: list[bool] = []
    # pair -> (BondType, implicit_aromatic flag)
    bonds: dict[tuple[int, int], tuple[BondType, bool]] = {}
    prev: int | None = None
    pending: BondType | None = None
    branch_stack: list[int] = []
    open_rings: dict[str, tuple[int, BondType | None]] = {}

    def add_bond(i: int, j: int, explicit: BondType | None) -> None:
        if i == j:
            raise MalformedInput(f"self-bond on atom {i}")
        pair = (i, j) if i < j else (j, i)
        if pair in bonds:
            raise MalformedInput(f"duplicate bond between atoms {pair[0]} and {pair[1]}")
        if explicit is not None:
            bonds[pair] = (explicit, False)
        elif aromatic[i] and aromatic[j]:
            bonds[pair] = (BondType.AROMATIC, True)
        else:
            bonds[pair] = (BondType.SINGLE, False)

    def add_atom(symbol: str, is_aromatic: bool) -> None:
        nonlocal prev, pending
        atoms.append(symbol)
        aromatic.append(is_aromatic)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending)
        elif pending is not None:
            raise MalformedInput("bond symbol before the first atom")
        pending = None
        prev = idx

    pos = 0
    while pos < len(s):
        ch = s[pos]
        if s.startswith(_TWO_LETTER, pos):
            add_atom(s[pos : pos + 2], False)
            pos += 2
        elif ch in _ATOM_INDEX:
            add_atom(ch, False)
            pos += 1
        elif ch in _AROMATIC_INPUT:
            add_atom(_AROMATIC_INPUT[ch], True)
            pos += 1
        elif ch in _BOND_FROM_CHAR:
            if pending is not None:
                raise MalformedInput(f"two bond symbols in a row at position {pos}")
            pending = _BOND_FROM_CHAR[ch]
            pos += 1
        elif ch.isdigit():
            if prev is None:
                raise MalformedInput("ring closure digit before any atom")
            if ch in open_rings:
                other, opening_bond = open_rings.pop(ch)
                if opening_bond is not None and pending is not None and opening_bond != pending:
                    raise MalformedInput(f"conflicting bond symbols on ring closure {ch}")
                add_bond(other, prev, opening_bond if opening_bond is not None else pending)
            else:
                open_rings[ch] = (prev, pending)
            pending = None
            pos += 1
        elif ch == "(":
            if prev is None:
                raise MalformedInput("branch before any atom")
            if pending is not None:
                raise MalformedInput("bond symbol before '('")
            branch_stack.append(prev)
            pos += 1
        elif ch == ")":
            if pending is not None:
                raise MalformedInput("dangling bond symbol before ')'")
            if not branch_stack:
                raise MalformedInput("unmatched ')'")
            prev = branch_stack.pop()
            pos += 1
        elif ch in _UNSUPPORTED_CHARS:
            raise UnsupportedFeature(f"{ch!r} is outside the supported SMILES subset")
        elif ch.isalpha():
            raise UnknownAtom(f"atom symbol {ch!r} outside vocabulary")
        else:
            raise MalformedInput(f"unexpected character {ch!r} at position {pos}")

    if open_rings:
        digits = ", ".join(sorted(open_rings))
        raise UnbalancedRing(f"unclosed ring closure digit(s): {digits}")
    if branch_stack:
        raise MalformedInput("unclosed '('")
    if pending is not None:
        raise MalformedInput("dangling bond symbol at end of input")

    # Implicit aromatic bonds only survive inside rings.
    ring_pairs = _cycle_pairs(len(atoms), list(bonds))
    final_bonds = set()
    for (i, j), (bt, implicit) in bonds.items():
        if implicit and (i, j) not in ring_pairs:
            bt = BondType.SINGLE
        final_bonds.add((i, j, bt))

    graph = MolecularGraph(tuple(atoms), frozenset(final_bonds))
    offender = _valence_offender(graph)
    if offender is not None:
        idx, load = offender
        raise ValenceViolation(
            f"atom {idx} ({graph.atoms[idx]}) carries bond order {load:g}, "
            f"max is {MAX_VALENCE[graph.atoms[idx]]}"
        )
    return graph


# -- serialization ---------------------------------------------------------


def to_smiles(g: MolecularGraph) -> str:
    """Serialize a valid graph; depth-first from node 0, lowest index first.

    Re-parsing the result yields a graph isomorphic to ``g``.
    """
    adj = g.neighbors()
    bond_of = {}
    for i, j, bt in g.bonds:
        bond_of[(i, j)] = bt
        bond_of[(j, i)] = bt
    aromatic = [any(bt is BondType.AROMATIC for _, bt in nbrs) for nbrs in adj]
    ring_pairs = _cycle_pairs(g.n, [(i, j) for i, j, _ in g.bonds])

    # First pass: DFS tree and ring-closure (back) edges.
    visit_order: dict[int, int] = {}
    tree_children: dict[int, list[int]] = {i: [] for i in range(g.n)}
    back_edges: list[tuple[int, int]] = []  # (ancestor, descendant)
    seen_back = set()
    stack = [(0, -1)]
    while stack:
        node, parent = stack.pop()
        if node in visit_order:
            continue
        visit_order[node] = len(visit_order)
        if parent >= 0:
            tree_children[parent].append(node)
        # push in reverse so lowest-index neighbors are visited first
        for nbr, _ in reversed(adj[node]):
            if nbr == parent:
                continue
            if nbr in visit_order:
                pair = (nbr, node) if visit_order[nbr] < visit_order[node] else (node, nbr)
                if pair not in seen_back:
                    seen_back.add(pair)
                    back_edges.append(pair)
            else:
                stack.append((nbr, node))
    if len(visit_order) != g.n:
        raise ValueError("graph is disconnected; cannot serialize as one SMILES")

    opens: dict[int, list[tuple[int, int]]] = {i: [] for i in range(g.n)}
    closes: dict[int, list[tuple[int, int]]] = {i: [] for i in range(g.n)}
    for anc, desc in back_edges:
        opens[anc].append((anc, desc))
        closes[desc].append((anc, desc))
    for i in range(g.n):
        opens[i].sort(key=lambda p: visit_order[p[1]])
        closes[i].sort(key=lambda p: visit_order[p[0]])

    def bond_char(i: int, j: int) -> str:
        bt = bond_of[(i, j)]
        pair = (i, j) if i < j else (j, i)
        if bt is BondType.SINGLE:
            # keep the bond single on re-parse when both atoms are aromatic
            return "-" if (aromatic[i] and aromatic[j]) else ""
        if bt is BondType.AROMATIC:
            if aromatic[i] and aromatic[j] and pair in ring_pairs:
                return ""
            return ":"
        return _CHAR_FROM_BOND[bt]

    digit_for: dict[tuple[int, int], str] = {}
    free_digits = list("1234567890")

    out: list[str] = []

    def emit(node: int) -> None:
        sym = g.atoms[node]
        out.append(sym.lower() if aromatic[node] and len(sym) == 1 else sym)
        for pair in opens[node]:
            if not free_digits:
                raise ValueError("more than 10 concurrently open rings")
            d = free_digits.pop(0)
            digit_for[pair] = d
            out.append(bond_char(*pair) + d)
        for pair in closes[node]:
            d = digit_for.pop(pair)
            free_digits.insert(0, d)
            out.append(bond_char(*pair) + d)
        children = sorted(tree_children[node])
        for k, child in enumerate(children):
            last = k == len(children) - 1
            piece = bond_char(node, child)
            if last:
                out.append(piece)
                emit(child)
            else:
                out.append("(" + piece)
                emit(child)
                out.append(")")

    emit(0)
    return "".join(out)


# -- tensor forms ----------------------------------------------------------


def tensorize(g: MolecularGraph) -> GraphTensors:
    """Binary adjacency tensor (n,n,e) and one-hot node tensor (n,d)."""
    n = g.n
    adjacency = np.zeros((n, n, BOND_DIM), dtype=np.float32)
    nodes = np.zeros((n, ATOM_DIM), dtype=np.float32)
    for i, sym in enumerate(g.atoms):
        nodes[i, _ATOM_INDEX[sym]] = 1.0
    for i, j, bt in g.bonds:
        adjacency[i, j, bt.value] = 1.0
        adjacency[j, i, bt.value] = 1.0
    return GraphTensors(adjacency, nodes)


def detensorize(t: GraphTensors) -> MolecularGraph:
    """Exact inverse of :func:`tensorize`."""
    atoms = tuple(ATOM_SYMBOLS[int(k)] for k in np.argmax(t.nodes, axis=1))
    bonds = set()
    n = t.n
    for i in range(n):
        for j in range(i + 1, n):
            hits = np.flatnonzero(t.adjacency[i, j] == 1.0)
            if hits.size:
                bonds.add((i, j, BondType(int(hits[0]))))
    return MolecularGraph(atoms, frozenset(bonds))


# -- validity and descriptors ----------------------------------------------


def _valence_offender(g: MolecularGraph) -> tuple[int, float] | None:
    load = [0.0] * g.n
    for i, j, bt in g.bonds:
        load[i] += bt.order
        load[j] += bt.order
    for idx, sym in enumerate(g.atoms):
        if load[idx] > MAX_VALENCE[sym] + 1e-9:
            return idx, load[idx]
    return None


def check_valence(g: MolecularGraph) -> bool:
    """True iff every atom's summed bond order stays within its maximum."""
    return _valence_offender(g) is None


def is_connected(g: MolecularGraph) -> bool:
    if g.n == 1:
        return True
    adj = g.neighbors()
    seen = {0}
    frontier = [0]
    while frontier:
        node = frontier.pop()
        for nbr, _ in adj[node]:
            if nbr not in seen:
                seen.add(nbr)
                frontier.append(nbr)
    return len(seen) == g.n


def _cycle_pairs(n: int, pairs: list[tuple[int, int]]) -> set[tuple[int, int]]:
    """Pairs whose bond lies on some cycle (i.e. edges that are not bridges)."""
    adj: list[set[int]] = [set() for _ in range(n)]
    for i, j in pairs:
        adj[i].add(j)
        adj[j].add(i)

    def reachable_without(src: int, dst: int, skip: tuple[int, int]) -> bool:
        seen = {src}
        frontier = [src]
        while frontier:
            node = frontier.pop()
            if node == dst:
                return True
            for nbr in adj[node]:
                if (node, nbr) in (skip, skip[::-1]) or (nbr, node) in (skip, skip[::-1]):
                    continue
                if nbr not in seen:
                    seen.add(nbr)
                    frontier.append(nbr)
        return False

    return {(i, j) for i, j in pairs if reachable_without(i, j, (i, j))}


def ring_bond_count(g: MolecularGraph) -> int:
    return len(_cycle_pairs(g.n, [(i, j) for i, j, _ in g.bonds]))


_PROXY_WEIGHT = {
    "C": 0.40,
    "F": 0.60,
    "Cl": 0.60,
    "Br": 0.60,
    "I": 0.60,
    "S": 0.25,
    "O": -0.80,
    "N": -1.00,
    "P": -0.50,
}
_PROXY_RING_WEIGHT = 0.10


def proxy_logp(g: MolecularGraph) -> float:
    """Deterministic closed-form lipophilicity proxy.

    A fixed linear form over atom counts plus a ring-bond term. The
    coefficients are constants of this artifact, not chemistry ground
    truth; the value is invariant under node reordering.
    """
    total = sum(_PROXY_WEIGHT[sym] for sym in g.atoms)
    total += _PROXY_RING_WEIGHT * ring_bond_count(g)
    return round(total, 10)


# -- fingerprints ----------------------------------------------------------


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _environment(g: MolecularGraph, adj, node: int, radius: int) -> str:
    sym = g.atoms[node]
    if radius == 0:
        return sym
    inner = sorted(
        _CHAR_FROM_BOND[bt] + _environment(g, adj, nbr, radius - 1) for nbr, bt in adj[node]
    )
    return sym + "(" + ",".join(inner) + ")"


def fingerprint(g: MolecularGraph) -> Fingerprint:
    """Hash every node's radius-0/1/2 neighborhood into a 2048-bit vector.

    Deterministic across runs and platforms (FNV-1a over the canonical
    neighborhood string, reduced mod 2048).
    """
    adj = g.neighbors()
    bits = 0
    for node in range(g.n):
        for radius in (0, 1, 2):
            env = _environment(g, adj, node, radius)
            bits |= 1 << (_fnv1a64(env.encode("ascii")) % FINGERPRINT_BITS)
    return Fingerprint(bits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b|; 1.0 when both fingerprints are empty."""
    if a.width != b.width:
        raise ValueError(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = a.bits | b.bits
    if union == 0:
        return 1.0
    inter = a.bits & b.bits
    return bin(inter).count("1") / bin(union).count("1")


# -- dataset files ----------------------------------------------------------


def read_smiles_lines(path: str | Path) -> list[tuple[int, str]]:
    """Read a dataset file: one SMILES per line, '#' comments and blanks skipped.

    Returns (line_number, smiles) pairs, 1-based line numbers.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            out.append((lineno, line))
    return out


def load_dataset(path: str | Path) -> list[MolecularGraph]:
    """Parse every molecule in a dataset file; errors carry the line number."""
    graphs = []
    for lineno, line in read_smiles_lines(path):
        try:
            graphs.append(parse_smiles(line))
        except SmilesError as exc:
            raise type(exc)(f"line {lineno}: {exc}") from exc
    return graphs
