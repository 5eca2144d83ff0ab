"""Dense padded batches of graph distributions for the networks and samplers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .diffusion import GraphDistribution
from .molgraph import MolecularGraph, Vocabulary


@dataclass
class DenseBatch:
    X: torch.Tensor  # (B, N, K_v)
    E: torch.Tensor  # (B, N, N, K_e), symmetric
    mask: torch.Tensor  # (B, N) bool

    @property
    def sizes(self) -> list[int]:
        return self.mask.sum(1).tolist()

    def pair_mask(self) -> torch.Tensor:
        """(B, N, N) bool, true for valid off-diagonal pairs."""
        m = self.mask.unsqueeze(1) & self.mask.unsqueeze(2)
        eye = torch.eye(self.mask.shape[1], dtype=torch.bool, device=m.device)
        return m & ~eye

    def clone(self) -> "DenseBatch":
        return DenseBatch(self.X.clone(), self.E.clone(), self.mask.clone())

    def to(self, dtype) -> "DenseBatch":
        return DenseBatch(self.X.to(dtype), self.E.to(dtype), self.mask)


def fill_padding(X: torch.Tensor, E: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Put one-hot category 0 on padded nodes and on diagonal/padded edges."""
    B, N, kv = X.shape
    pm = mask.unsqueeze(1) & mask.unsqueeze(2)
    pm = pm & ~torch.eye(N, dtype=torch.bool, device=X.device)
    e0 = torch.zeros(E.shape[-1], dtype=E.dtype)
    e0[0] = 1
    x0 = torch.zeros(kv, dtype=X.dtype)
    x0[0] = 1
    X = torch.where(mask.unsqueeze(-1), X, x0)
    E = torch.where(pm.unsqueeze(-1), E, e0)
    return X, E


def from_distributions(dists: Sequence[GraphDistribution], n_max: int | None = None, dtype=torch.float64) -> DenseBatch:
    n_max = n_max or max(d.n for d in dists)
    kv = dists[0].node_probs.shape[1]
    ke = dists[0].edge_probs.shape[1]
    B = len(dists)
    X = torch.zeros(B, n_max, kv, dtype=dtype)
    E = torch.zeros(B, n_max, n_max, ke, dtype=dtype)
    mask = torch.zeros(B, n_max, dtype=torch.bool)
    for b, d in enumerate(dists):
        n = d.n
        X[b, :n] = torch.as_tensor(d.node_probs, dtype=dtype)
        if n > 1:
            iu, ju = np.triu_indices(n, 1)
            ep = torch.as_tensor(d.edge_probs, dtype=dtype)
            E[b, iu, ju] = ep
            E[b, ju, iu] = ep
        mask[b, :n] = True
    X, E = fill_padding(X, E, mask)
    return DenseBatch(X, E, mask)


def from_graphs(graphs: Sequence[MolecularGraph], n_max: int | None = None, dtype=torch.float32) -> DenseBatch:
    n_max = n_max or max(g.n for g in graphs)
    vocab = graphs[0].vocab
    B = len(graphs)
    xi = torch.zeros(B, n_max, dtype=torch.long)
    ei = torch.zeros(B, n_max, n_max, dtype=torch.long)
    mask = torch.zeros(B, n_max, dtype=torch.bool)
    for b, g in enumerate(graphs):
        xi[b, : g.n] = torch.tensor(g.nodes)
        if g.n > 1:
            a = torch.from_numpy(g.adjacency())
            ei[b, : g.n, : g.n] = a
        mask[b, : g.n] = True
    X = torch.nn.functional.one_hot(xi, vocab.n_node).to(dtype)
    E = torch.nn.functional.one_hot(ei, vocab.n_edge).to(dtype)
    X, E = fill_padding(X, E, mask)
    return DenseBatch(X, E, mask)


def to_distributions(batch: DenseBatch) -> list[GraphDistribution]:
    out = []
    for b, n in enumerate(batch.sizes):
        iu, ju = np.triu_indices(n, 1)
        out.append(
            GraphDistribution(
                batch.X[b, :n].detach().double().numpy(),
                batch.E[b, iu, ju].detach().double().numpy().reshape(len(iu), batch.E.shape[-1]),
            )
        )
    return out


def to_graphs(batch: DenseBatch, vocab: Vocabulary) -> list[MolecularGraph]:
    xi = batch.X.argmax(-1)
    ei = batch.E.argmax(-1)
    out = []
    for b, n in enumerate(batch.sizes):
        iu, ju = np.triu_indices(n, 1)
        out.append(MolecularGraph(tuple(xi[b, :n].tolist()), tuple(ei[b, iu, ju].tolist()), vocab))
    return out


def symmetric_pair_grad(gE: torch.Tensor) -> torch.Tensor:
    """Gradient w.r.t. an unordered pair when both (i,j) and (j,i) carry it."""
    return gE + gE.transpose(1, 2)
