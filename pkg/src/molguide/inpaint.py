"""Fragment-constrained sampling by replacement inpainting.

The fragment sits on node indices ``0..f-1``. After the prior draw and after
every reverse step the fragment's nodes and internal pairs are overwritten
with a fresh forward sample of the fragment at the new noise level, which is
the fragment itself once the level reaches 0. Pairs between a fragment node
and a free node are left to the sampler.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .denoiser import GraphDenoiser
from .diffusion import NoiseSchedule, corrupt, sample_categorical
from .graphbatch import DenseBatch, fill_padding
from .guidance import GenerateOptions, GuidanceSpec, generate
from .molgraph import MolecularGraph, Vocabulary
from .molgraph.chem import valence_ok


class ConstraintTooLarge(ValueError):
    pass


class InvalidFragment(ValueError):
    pass


@dataclass(frozen=True)
class FragmentConstraint:
    """``fragment=None`` is the empty constraint (plain generation)."""

    fragment: MolecularGraph | None
    anchor_indices: tuple[int, ...] = field(default=())
    frozen_edges: frozenset = field(default=frozenset())

    def __post_init__(self):
        f = self.size
        if not self.anchor_indices:
            object.__setattr__(self, "anchor_indices", tuple(range(f)))
        if not self.frozen_edges:
            object.__setattr__(self, "frozen_edges", frozenset((i, j) for i in range(f) for j in range(i + 1, f)))
        if self.anchor_indices != tuple(range(f)):
            # complete-graph attention is equivariant, so the first f slots lose nothing
            raise ValueError("fragments are anchored on node indices 0..f-1")
        if self.frozen_edges != {(i, j) for i in range(f) for j in range(i + 1, f)}:
            raise ValueError("frozen edges must be exactly the fragment's internal pairs")
        if f and not valence_ok(self.fragment):
            raise InvalidFragment("fragment exceeds an allowed valence")

    @property
    def size(self) -> int:
        return 0 if self.fragment is None else self.fragment.n

    @classmethod
    def empty(cls) -> "FragmentConstraint":
        return cls(None)

    def matches(self, g: MolecularGraph) -> bool:
        """Exact categorical match of nodes and internal pairs at the anchors."""
        f = self.size
        if f == 0:
            return True
        if g.n < f:
            return False
        if tuple(g.nodes[:f]) != tuple(self.fragment.nodes):
            return False
        return all(g.edge(i, j) == self.fragment.edge(i, j) for i, j in self.frozen_edges)


def load_constraint(path: str | Path, vocab: Vocabulary | None = None) -> tuple[FragmentConstraint, int]:
    """Read Graph JSON plus ``total_n``; returns the constraint and total node count."""
    d = json.loads(Path(path).read_text())
    if "total_n" not in d:
        raise ValueError(f"{path}: missing total_n")
    frag = MolecularGraph.from_json(d, vocab)
    return FragmentConstraint(frag), int(d["total_n"])


class ReplacementClamp:
    """Overwrites the fragment slots with q(x_t | fragment) samples."""

    def __init__(self, constraint: FragmentConstraint, schedule: NoiseSchedule):
        self.constraint = constraint
        self.schedule = schedule
        self.f = f = constraint.size
        if f == 0:
            return
        frag = constraint.fragment
        self.x0 = F.one_hot(torch.tensor(frag.nodes, dtype=torch.long), frag.vocab.n_node)
        adj = torch.from_numpy(frag.adjacency()).long() if f > 1 else torch.zeros(f, f, dtype=torch.long)
        self.e0 = F.one_hot(adj, frag.vocab.n_edge)
        self.iu = torch.triu_indices(f, f, 1)

    def __call__(self, state: DenseBatch, t: int, gen: torch.Generator) -> DenseBatch:
        f = self.f
        if f == 0:
            return state
        B = state.X.shape[0]
        X, E = state.X.clone(), state.E.clone()
        if t == 0:
            X[:, :f] = self.x0.to(X.dtype)
            E[:, :f, :f] = self.e0.to(E.dtype)
        else:
            tt = torch.full((B,), t, dtype=torch.long)
            px = corrupt(self.x0.double().expand(B, -1, -1), tt[:, None], self.schedule, "node")
            xi = sample_categorical(px, gen)
            X[:, :f] = F.one_hot(xi, X.shape[-1]).to(X.dtype)
            if f > 1:
                i, j = self.iu
                pe = corrupt(self.e0[i, j].double().expand(B, -1, -1), tt[:, None], self.schedule, "edge")
                ei = F.one_hot(sample_categorical(pe, gen), E.shape[-1]).to(E.dtype)
                E[:, i, j] = ei
                E[:, j, i] = ei
        X, E = fill_padding(X, E, state.mask)
        return DenseBatch(X, E, state.mask)


def constrained_generate(
    denoiser: GraphDenoiser,
    spec: GuidanceSpec,
    constraint: FragmentConstraint,
    schedule: NoiseSchedule,
    n_molecules: int,
    total_n: int,
    vocab: Vocabulary,
    opts: GenerateOptions | None = None,
) -> tuple[list[MolecularGraph], list[dict]]:
    """Guided sampling of ``total_n``-node graphs that contain ``constraint.fragment`` at 0..f-1."""
    if total_n < constraint.size:
        raise ConstraintTooLarge(f"fragment has {constraint.size} nodes but total_n is {total_n}")
    if total_n > denoiser.cfg.n_max:
        raise ConstraintTooLarge(f"total_n {total_n} exceeds the denoiser's n_max {denoiser.cfg.n_max}")
    if total_n < 1:
        raise ValueError("total_n must be >= 1")
    clamp = ReplacementClamp(constraint, schedule) if constraint.size else None
    sizes: Sequence[int] = np.full(n_molecules, total_n, dtype=int)
    return generate(denoiser, spec, schedule, n_molecules, None, vocab, opts, clamp=clamp, sizes=sizes)
