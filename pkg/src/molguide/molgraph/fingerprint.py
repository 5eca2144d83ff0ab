"""Hashed simple-path fingerprints and Tanimoto similarity."""
from __future__ import annotations

import hashlib

import numpy as np

from .core import MolecularGraph


class WidthMismatch(ValueError):
    pass


def path_labels(g: MolecularGraph, max_path_len: int = 7) -> set[tuple[int, ...]]:
    """All simple paths with at most ``max_path_len`` bonds, as direction-free label tuples.

    A path a0-b1-a1-...-ak is labelled (node0, bond1, node1, ..., nodek) using
    category indices; the smaller of the two reading directions is kept.
    """
    nbrs = g.neighbors()
    out: set[tuple[int, ...]] = set()

    def walk(path: list[int], labels: list[int]) -> None:
        t = tuple(labels)
        out.add(min(t, t[::-1]))
        if len(path) > max_path_len:
            return
        u = path[-1]
        for v, e in nbrs[u]:
            if v in path:
                continue
            path.append(v)
            labels += [e, g.nodes[v]]
            walk(path, labels)
            del labels[-2:]
            path.pop()

    for s in range(g.n):
        walk([s], [g.nodes[s]])
    return out


def _bit(label: tuple[int, ...], n_bits: int) -> int:
    h = hashlib.blake2b(",".join(map(str, label)).encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") % n_bits


def fingerprint(g: MolecularGraph, max_path_len: int = 7, n_bits: int = 2048) -> np.ndarray:
    """Boolean bit vector of hashed path labels."""
    if n_bits < 64:
        raise ValueError("n_bits must be >= 64")
    fp = np.zeros(n_bits, dtype=bool)
    for lab in path_labels(g, max_path_len):
        fp[_bit(lab, n_bits)] = True
    return fp


def tanimoto(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise WidthMismatch(f"{a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def bulk_tanimoto(query: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Tanimoto of one fingerprint against each row of ``refs``."""
    refs = np.atleast_2d(refs)
    if refs.shape[1] != query.shape[0]:
        raise WidthMismatch(f"{query.shape} vs {refs.shape}")
    inter = (refs & query).sum(1)
    union = (refs | query).sum(1)
    return np.where(union > 0, inter / np.maximum(union, 1), 0.0)
