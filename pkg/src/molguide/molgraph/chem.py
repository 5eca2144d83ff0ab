"""Valence rules, connectivity, and canonical labelling."""
from __future__ import annotations

from .core import BOND_ORDERS, MolecularGraph


def is_connected(g: MolecularGraph) -> bool:
    if g.n == 1:
        return True
    nbrs = g.neighbors()
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v, _ in nbrs[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == g.n


def bond_order_sums(g: MolecularGraph) -> list[int]:
    tot = [0] * g.n
    for i, j, e in g.bonds():
        tot[i] += BOND_ORDERS[e]
        tot[j] += BOND_ORDERS[e]
    return tot


def valence_ok(g: MolecularGraph) -> bool:
    """Every atom's heavy-atom bond order fits under one of its allowed valences."""
    tot = bond_order_sums(g)
    return all(t <= max(g.vocab.valences[x]) for t, x in zip(tot, g.nodes))


def valence_check(g: MolecularGraph) -> bool:
    """Chemical validity: no over-valent atom and a single connected fragment."""
    return valence_ok(g) and is_connected(g)


# --- canonical labelling -------------------------------------------------


def _rank(keys: list) -> list[int]:
    order = sorted(set(keys))
    pos = {k: i for i, k in enumerate(order)}
    return [pos[k] for k in keys]


def _refine(colors: list[int], nbrs: list[list[tuple[int, int]]]) -> list[int]:
    """Iterate neighbourhood-signature refinement until the partition is stable."""
    n_cls = len(set(colors))
    while True:
        sigs = [
            (colors[i], tuple(sorted((e, colors[j]) for j, e in nbrs[i])))
            for i in range(len(colors))
        ]
        new = _rank(sigs)
        k = len(set(new))
        if k == n_cls:
            return new
        colors, n_cls = new, k


def _serialize(g: MolecularGraph, order: list[int]) -> tuple:
    pos = {v: k for k, v in enumerate(order)}
    labels = tuple(g.vocab.node_categories[g.nodes[v]] for v in order)
    bonds = tuple(sorted((min(pos[i], pos[j]), max(pos[i], pos[j]), e) for i, j, e in g.bonds()))
    return labels, bonds


def canonical_order(g: MolecularGraph) -> list[int]:
    """Node order shared by all isomorphic copies of ``g``.

    Colour refinement with individualisation; ties are broken by trying every
    candidate of the first non-singleton cell and keeping the lexicographically
    smallest serialisation. Candidates that are structural twins (same colour
    and same neighbourhood) are interchangeable, so only one per twin group is
    explored.
    """
    nbrs = g.neighbors()
    init = _rank([(g.vocab.node_categories[x], ) for x in g.nodes])
    best: list = [None, None]

    def search(colors: list[int]) -> None:
        colors = _refine(colors, nbrs)
        if len(set(colors)) == len(colors):
            order = sorted(range(len(colors)), key=colors.__getitem__)
            ser = _serialize(g, order)
            if best[0] is None or ser < best[0]:
                best[0], best[1] = ser, order
            return
        counts: dict[int, int] = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        target = min(c for c, k in counts.items() if k > 1)
        cell = [i for i, c in enumerate(colors) if c == target]
        tried: list[int] = []
        for v in cell:
            if any(_are_twins(u, v, nbrs) for u in tried):
                continue
            tried.append(v)
            # individualise v: strictly below the rest of its cell
            new = [2 * c + (c == target and i != v) for i, c in enumerate(colors)]
            search(_rank(new))

    search(init)
    return best[1]


def _are_twins(u: int, v: int, nbrs) -> bool:
    nu = {j: e for j, e in nbrs[u] if j != v}
    nv = {j: e for j, e in nbrs[v] if j != u}
    return nu == nv


def canonical_key(g: MolecularGraph) -> str:
    """String identical for isomorphic graphs, distinct otherwise (molecular graphs)."""
    labels, bonds = _serialize(g, canonical_order(g))
    atoms = ",".join(s + ("" if c == 0 else f"{c:+d}") for s, c in labels)
    return atoms + "|" + ",".join(f"{i}-{j}:{e}" for i, j, e in bonds)
