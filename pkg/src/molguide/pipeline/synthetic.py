"""Computable stand-in activities for the bundled corpus.

Each property is a boolean function of the heavy-atom graph. The labeler
turns it into an activity CSV (100 nM if the property holds, 50 uM
otherwise) so the classifier pipeline runs unchanged.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Iterable

from ..molgraph import MolecularGraph, smiles_write

ACTIVE_NM = 100.0
INACTIVE_NM = 50000.0

HALOGENS = {"F", "Cl", "Br", "I"}


def _count(g: MolecularGraph, symbols: set[str]) -> int:
    return sum(1 for s, _ in g.atoms() if s in symbols)


def has_ring(g: MolecularGraph) -> bool:
    # a connected graph with at least n bonds contains a cycle
    return len(g.bonds()) >= g.n


def has_carbonyl(g: MolecularGraph) -> bool:
    atoms = g.atoms()
    return any(e == 2 and {atoms[i][0], atoms[j][0]} == {"C", "O"} for i, j, e in g.bonds())


PROPERTIES: dict[str, Callable[[MolecularGraph], bool]] = {
    "n2": lambda g: _count(g, {"N"}) >= 2,
    "halogen": lambda g: _count(g, HALOGENS) >= 1,
    "ring": has_ring,
    "carbonyl": has_carbonyl,
    "o2": lambda g: _count(g, {"O"}) >= 2,
    "n_and_o": lambda g: _count(g, {"N"}) >= 1 and _count(g, {"O"}) >= 1,
}


def satisfies(name: str, g: MolecularGraph) -> bool:
    try:
        return PROPERTIES[name](g)
    except KeyError:
        raise KeyError(f"unknown synthetic property {name!r}; known: {sorted(PROPERTIES)}") from None


def fraction(name: str, graphs: Iterable[MolecularGraph]) -> float:
    """Share of ``graphs`` satisfying the property (invalid graphs count as not satisfying)."""
    from ..molgraph import valence_check

    graphs = list(graphs)
    if not graphs:
        return 0.0
    return sum(1 for g in graphs if valence_check(g) and satisfies(name, g)) / len(graphs)


def write_activity_csv(graphs: Iterable[MolecularGraph], name: str, path: str | Path, target_id: str | None = None) -> int:
    target_id = target_id or name
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "activity_nM", "target_id"])
        for g in graphs:
            w.writerow([smiles_write(g), ACTIVE_NM if satisfies(name, g) else INACTIVE_NM, target_id])
            n += 1
    return n
