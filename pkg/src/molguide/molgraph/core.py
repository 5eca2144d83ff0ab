"""Vocabulary and complete-graph molecule representation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

BOND_NAMES = ("none", "single", "double", "triple")
BOND_ORDERS = (0, 1, 2, 3)

# (symbol, charge) -> allowed total bond orders (heavy-atom bonds; implicit H fill the rest)
DEFAULT_VALENCES: dict[tuple[str, int], tuple[int, ...]] = {
    ("C", 0): (4,),
    ("N", -1): (2,),
    ("N", 0): (3,),
    ("N", 1): (4,),
    ("O", -1): (1,),
    ("O", 0): (2,),
    ("O", 1): (3,),
    ("F", 0): (1,),
    ("S", -1): (1, 3, 5),
    ("S", 0): (2, 4, 6),
    ("S", 1): (3, 5),
    ("Cl", 0): (1,),
    ("Br", 0): (1,),
    ("P", 0): (3, 5),
    ("P", 1): (4,),
    ("I", 0): (1,),
}


class VocabularyError(ValueError):
    pass


def _charge_str(charge: int) -> str:
    if charge == 0:
        return ""
    return "+" if charge == 1 else "-" if charge == -1 else f"{charge:+d}"


@dataclass(frozen=True)
class Vocabulary:
    """Fixed enumeration of node categories (symbol, charge) and edge categories.

    Index order is part of every persisted artifact: two artifacts interoperate
    only when their vocabularies compare equal.
    """

    node_categories: tuple[tuple[str, int], ...]
    edge_categories: tuple[str, ...] = BOND_NAMES
    valences: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        if len(set(self.node_categories)) != len(self.node_categories):
            raise VocabularyError("duplicate node category")
        if tuple(self.edge_categories) != BOND_NAMES:
            raise VocabularyError(f"edge categories must be {BOND_NAMES}")
        if len(self.valences) != len(self.node_categories):
            raise VocabularyError("valence table must cover every node category")
        object.__setattr__(
            self, "_index", {cat: i for i, cat in enumerate(self.node_categories)}
        )

    @classmethod
    def default(cls) -> "Vocabulary":
        cats = tuple(DEFAULT_VALENCES)
        return cls(cats, BOND_NAMES, tuple(DEFAULT_VALENCES[c] for c in cats))

    @classmethod
    def from_categories(cls, cats: Iterable[tuple[str, int]]) -> "Vocabulary":
        cats = tuple((s, int(c)) for s, c in cats)
        missing = [c for c in cats if c not in DEFAULT_VALENCES]
        if missing:
            raise VocabularyError(f"no valence entry for {missing}")
        return cls(cats, BOND_NAMES, tuple(DEFAULT_VALENCES[c] for c in cats))

    @property
    def n_node(self) -> int:
        return len(self.node_categories)

    @property
    def n_edge(self) -> int:
        return len(self.edge_categories)

    @property
    def symbols(self) -> set[str]:
        return {s for s, _ in self.node_categories}

    def node_index(self, symbol: str, charge: int = 0) -> int:
        try:
            return self._index[(symbol, charge)]
        except KeyError:
            raise VocabularyError(f"{symbol}{_charge_str(charge)} not in vocabulary") from None

    def has(self, symbol: str, charge: int = 0) -> bool:
        return (symbol, charge) in self._index

    def label(self, idx: int) -> str:
        s, c = self.node_categories[idx]
        return s + _charge_str(c)

    def to_json(self) -> dict:
        return {
            "node_categories": [[s, c] for s, c in self.node_categories],
            "edge_categories": list(self.edge_categories),
            "valences": [list(v) for v in self.valences],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        return cls(
            tuple((s, int(c)) for s, c in d["node_categories"]),
            tuple(d["edge_categories"]),
            tuple(tuple(int(x) for x in v) for v in d["valences"]),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2


def pair_index(i: int, j: int, n: int) -> int:
    """Row-major position of the unordered pair (i, j) in the upper triangle."""
    if i > j:
        i, j = j, i
    if i == j or j >= n:
        raise IndexError((i, j, n))
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def triu_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, 1)


@dataclass(frozen=True)
class MolecularGraph:
    """Complete graph over heavy atoms.

    ``nodes`` holds node-category indices; ``edges`` holds one edge-category
    index per unordered pair in row-major upper-triangular order, 0 = no bond.
    """

    nodes: tuple[int, ...]
    edges: tuple[int, ...]
    vocab: Vocabulary = field(default_factory=Vocabulary.default, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.nodes)
        if n < 1:
            raise ValueError("graph needs at least one node")
        if len(self.edges) != n_pairs(n):
            raise ValueError(f"expected {n_pairs(n)} edge entries, got {len(self.edges)}")
        object.__setattr__(self, "nodes", tuple(int(x) for x in self.nodes))
        object.__setattr__(self, "edges", tuple(int(x) for x in self.edges))
        if any(not 0 <= x < self.vocab.n_node for x in self.nodes):
            raise VocabularyError("node index out of range")
        if any(not 0 <= x < self.vocab.n_edge for x in self.edges):
            raise VocabularyError("edge index out of range")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_bonds(
        cls,
        atoms: Sequence[tuple[str, int]],
        bonds: Iterable[tuple[int, int, int]],
        vocab: Vocabulary | None = None,
    ) -> "MolecularGraph":
        vocab = vocab or Vocabulary.default()
        nodes = [vocab.node_index(s, c) for s, c in atoms]
        n = len(nodes)
        edges = [0] * n_pairs(n)
        for i, j, order in bonds:
            edges[pair_index(i, j, n)] = int(order)
        return cls(tuple(nodes), tuple(edges), vocab)

    def edge(self, i: int, j: int) -> int:
        return self.edges[pair_index(i, j, self.n)]

    def bonds(self) -> list[tuple[int, int, int]]:
        iu, ju = triu_pairs(self.n)
        return [(int(i), int(j), e) for i, j, e in zip(iu, ju, self.edges) if e]

    def adjacency(self) -> np.ndarray:
        """Dense symmetric bond-order matrix."""
        a = np.zeros((self.n, self.n), dtype=np.int64)
        iu, ju = triu_pairs(self.n)
        a[iu, ju] = self.edges
        a[ju, iu] = self.edges
        return a

    def neighbors(self) -> list[list[tuple[int, int]]]:
        nbrs: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for i, j, e in self.bonds():
            nbrs[i].append((j, e))
            nbrs[j].append((i, e))
        return nbrs

    def atoms(self) -> list[tuple[str, int]]:
        return [self.vocab.node_categories[x] for x in self.nodes]

    def permute(self, perm: Sequence[int]) -> "MolecularGraph":
        """Relabel so that new node k is old node ``perm[k]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.n)):
            raise ValueError("not a permutation")
        a = self.adjacency()[np.ix_(perm, perm)]
        iu, ju = triu_pairs(self.n)
        return MolecularGraph(
            tuple(self.nodes[p] for p in perm), tuple(a[iu, ju].tolist()), self.vocab
        )

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "nodes": [[s, c] for s, c in self.atoms()],
            "edges": [[i, j, e] for i, j, e in self.bonds()],
        }

    @classmethod
    def from_json(cls, d: dict, vocab: Vocabulary | None = None) -> "MolecularGraph":
        atoms = [(s, int(c)) for s, c in d["nodes"]]
        if len(atoms) != d["n"]:
            raise ValueError("node count does not match 'n'")
        for i, j, _ in d["edges"]:
            if not 0 <= i < j < len(atoms):
                raise ValueError(f"edge ({i}, {j}) must satisfy 0 <= i < j < n")
        return cls.from_bonds(atoms, [tuple(e) for e in d["edges"]], vocab)
