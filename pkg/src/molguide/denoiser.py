"""Noise-conditioned graph transformer predicting clean graphs from noisy ones.

Each layer updates the node and edge streams with gated residuals,

    f_X <- f_X + G_X(c_X) * Attention_X(Norm_X(f_X, c_X)),   X in {node, edge}

where ``Norm_X`` is a layer norm whose scale/shift come from the noise
conditioning vector ``c_X`` and ``G_X`` is a linear gate. Node updates are
FiLM-modulated by the global and edge streams; edge updates come from the
per-head attention scores of their endpoint nodes. The global stream is
updated inside the attention block.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import GraphDistribution, NoiseSchedule, ShapeMismatch, corrupt, sample_categorical
from .graphbatch import DenseBatch, fill_padding, from_distributions, from_graphs
from .molgraph import MolecularGraph, VocabularyError

log = logging.getLogger(__name__)


@dataclass
class DenoiserConfig:
    n_node: int
    n_edge: int = 4
    n_layers: int = 4
    n_heads: int = 4
    d_v: int = 64
    d_e: int = 32
    d_g: int = 64
    d_cond: int = 32
    d_ff: int = 128
    d_score: int = 32  # per-pair attention-score width
    n_max: int = 13  # normaliser for the node-count feature

    def __post_init__(self):
        if self.d_v % self.n_heads or self.d_score % self.n_heads:
            raise ValueError("d_v and d_score must be divisible by n_heads")

    @classmethod
    def full_scale(cls, n_node: int) -> "DenoiserConfig":
        return cls(n_node=n_node, n_layers=12, n_heads=4, d_v=128, d_e=64, d_g=128)

    def to_json(self) -> dict:
        return asdict(self)


N_STRUCT = 6  # degree, bond-order sum, closed-walk counts of length 3..6


def structural_features(E: torch.Tensor, pair_mask: torch.Tensor) -> torch.Tensor:
    """Per-node degree, bond-order sum and closed-walk counts from the bond (non-"none") mass."""
    A = (1.0 - E[..., 0]) * pair_mask
    deg = A.sum(-1)
    orders = torch.arange(E.shape[-1], dtype=E.dtype)
    valence = ((E * orders).sum(-1) * pair_mask).sum(-1)
    feats = [deg / 4.0, valence / 4.0]
    Ak = A @ A
    for _ in range(3, 7):
        Ak = Ak @ A
        feats.append(torch.log1p(torch.diagonal(Ak, dim1=-2, dim2=-1).clamp_min(0)))
    return torch.stack(feats, -1)


class AdaNorm(nn.Module):
    """LayerNorm without affine terms, then scale/shift generated from a condition."""

    def __init__(self, dim: int, d_cond: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False)
        self.affine = nn.Linear(d_cond, 2 * dim)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        scale, shift = self.affine(c).chunk(2, -1)
        while scale.dim() < x.dim():
            scale, shift = scale.unsqueeze(1), shift.unsqueeze(1)
        return self.norm(x) * (1 + scale) + shift


def _masked_mean(x: torch.Tensor, m: torch.Tensor, dim: int) -> torch.Tensor:
    m = m.unsqueeze(-1).to(x.dtype)
    return (x * m).sum(dim) / m.sum(dim).clamp_min(1.0)


class NodeEdgeAttention(nn.Module):
    """Multi-head attention whose pairwise scores are FiLM-modulated by edges.

    The pair stream is kept on the upper triangle (B, P, d); scores are
    symmetrised so each unordered pair has a single state.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        dv, de, dg, ds, H = cfg.d_v, cfg.d_e, cfg.d_g, cfg.d_score, cfg.n_heads
        self.H, self.ds, self.dh = H, ds // H, dv // H
        self.q = nn.Linear(dv, ds)
        self.k = nn.Linear(dv, ds)
        self.v = nn.Linear(dv, dv)
        self.e_mul = nn.Linear(de, ds)
        self.e_add = nn.Linear(de, ds)
        self.y_e_mul = nn.Linear(dg, ds)
        self.y_e_add = nn.Linear(dg, ds)
        self.y_x_mul = nn.Linear(dg, dv)
        self.y_x_add = nn.Linear(dg, dv)
        self.x_out = nn.Linear(dv, dv)
        self.e_out = nn.Linear(ds, de)
        self.y_out = nn.Sequential(nn.Linear(dg + dv + de, dg), nn.SiLU(), nn.Linear(dg, dg))

    def forward(self, X, E, y, mask, pmask, iu, ju):
        B, N, _ = X.shape
        Q, K = self.q(X), self.k(X)
        scores = (Q[:, iu] * K[:, ju] + Q[:, ju] * K[:, iu]) / (2 * math.sqrt(self.ds))
        scores = scores * (self.e_mul(E) + 1) + self.e_add(E)  # (B, P, ds)

        new_e = self.y_e_add(y)[:, None] + (self.y_e_mul(y)[:, None] + 1) * scores
        dE = self.e_out(new_e) * pmask.unsqueeze(-1)

        head = scores.view(B, -1, self.H, self.ds).sum(-1)  # (B, P, H)
        dense = X.new_zeros(B, N, N, self.H)
        dense[:, iu, ju] = head
        dense[:, ju, iu] = head
        valid = (mask[:, :, None] & mask[:, None, :]) & ~torch.eye(N, dtype=torch.bool)
        attn = torch.softmax(dense.masked_fill(~valid.unsqueeze(-1), -1e4), dim=2) * valid.unsqueeze(-1)
        V = self.v(X).view(B, N, self.H, self.dh)
        wV = torch.einsum("bijh,bjhd->bihd", attn, V).flatten(2)
        new_x = self.y_x_add(y)[:, None] + (self.y_x_mul(y)[:, None] + 1) * wV
        dX = self.x_out(new_x) * mask.unsqueeze(-1)

        pooled = torch.cat([y, _masked_mean(X, mask, 1), _masked_mean(E, pmask, 1)], -1)
        y = y + self.y_out(pooled)
        return dX, dE, y


class DenoiserLayer(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        dv, de, dc = cfg.d_v, cfg.d_e, cfg.d_cond
        self.norm_v = AdaNorm(dv, dc)
        self.norm_e = AdaNorm(de, dc)
        self.attn = NodeEdgeAttention(cfg)
        self.gate_v = nn.Linear(dc, dv)
        self.gate_e = nn.Linear(dc, de)
        self.ff_norm_v = AdaNorm(dv, dc)
        self.ff_norm_e = AdaNorm(de, dc)
        self.ff_v = nn.Sequential(nn.Linear(dv, cfg.d_ff), nn.SiLU(), nn.Linear(cfg.d_ff, dv))
        self.ff_e = nn.Sequential(nn.Linear(de, 2 * de), nn.SiLU(), nn.Linear(2 * de, de))
        self.ff_gate_v = nn.Linear(dc, dv)
        self.ff_gate_e = nn.Linear(dc, de)
        self.norm_y = nn.LayerNorm(cfg.d_g)

    def gates(self):
        return (self.gate_v, self.gate_e, self.ff_gate_v, self.ff_gate_e)

    def forward(self, X, E, y, cv, ce, mask, pmask, iu, ju):
        dX, dE, y = self.attn(self.norm_v(X, cv), self.norm_e(E, ce), self.norm_y(y), mask, pmask, iu, ju)
        X = X + self.gate_v(cv)[:, None] * dX
        E = E + self.gate_e(ce)[:, None] * dE
        X = X + self.ff_gate_v(cv)[:, None] * self.ff_v(self.ff_norm_v(X, cv)) * mask.unsqueeze(-1)
        E = E + self.ff_gate_e(ce)[:, None] * self.ff_e(self.ff_norm_e(E, ce)) * pmask.unsqueeze(-1)
        return X, E, y


class NoiseEmbedding(nn.Module):
    def __init__(self, d_cond: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(2, d_cond), nn.SiLU(), nn.Linear(d_cond, d_cond))

    def forward(self, level: torch.Tensor) -> torch.Tensor:
        level = level.unsqueeze(-1)
        return self.net(torch.cat([level, 1.0 - level], -1))


class GraphDenoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.embed_v = NoiseEmbedding(cfg.d_cond)
        self.embed_e = NoiseEmbedding(cfg.d_cond)
        self.in_x = nn.Sequential(nn.Linear(cfg.n_node + N_STRUCT, cfg.d_v), nn.SiLU(), nn.Linear(cfg.d_v, cfg.d_v))
        self.in_e = nn.Sequential(nn.Linear(cfg.n_edge, cfg.d_e), nn.SiLU(), nn.Linear(cfg.d_e, cfg.d_e))
        self.in_y = nn.Linear(cfg.d_v + cfg.d_e + cfg.d_cond + 1, cfg.d_g)
        self.layers = nn.ModuleList(DenoiserLayer(cfg) for _ in range(cfg.n_layers))
        self.out_x = nn.Sequential(nn.Linear(cfg.d_v, cfg.d_v), nn.SiLU(), nn.Linear(cfg.d_v, cfg.n_node))
        self.out_e = nn.Sequential(nn.Linear(cfg.d_e, cfg.d_e), nn.SiLU(), nn.Linear(cfg.d_e, cfg.n_edge))
        for layer in self.layers:
            for g in layer.gates():
                nn.init.zeros_(g.weight)
                nn.init.zeros_(g.bias)

    def noise_embed(self, level_v: torch.Tensor, level_e: torch.Tensor):
        return self.embed_v(level_v), self.embed_e(level_e)

    def forward(self, batch: DenseBatch, level_v: torch.Tensor, level_e: torch.Tensor):
        """Return (node_logits (B,N,K_v), edge_logits (B,N,N,K_e) symmetric)."""
        X, mask = batch.X, batch.mask
        B, N, _ = X.shape
        iu, ju = torch.triu_indices(N, N, 1)
        pm_dense = batch.pair_mask()
        pmask = pm_dense[:, iu, ju]
        X = X * mask.unsqueeze(-1)
        E = batch.E[:, iu, ju] * pmask.unsqueeze(-1)  # (B, P, K_e)
        cv, ce = self.noise_embed(level_v, level_e)
        feats = structural_features(batch.E * pm_dense.unsqueeze(-1), pm_dense)
        Xh = self.in_x(torch.cat([X, feats], -1)) * mask.unsqueeze(-1)
        Eh = self.in_e(E) * pmask.unsqueeze(-1)
        n_frac = mask.sum(1, keepdim=True).to(X.dtype) / self.cfg.n_max
        y = self.in_y(torch.cat([_masked_mean(Xh, mask, 1), _masked_mean(Eh, pmask, 1), cv, n_frac], -1))
        for layer in self.layers:
            Xh, Eh, y = layer(Xh, Eh, y, cv, ce, mask, pmask, iu, ju)
        node_logits = self.out_x(Xh)
        pair_logits = self.out_e(Eh)
        edge_logits = pair_logits.new_zeros(B, N, N, self.cfg.n_edge)
        edge_logits[:, iu, ju] = pair_logits
        edge_logits[:, ju, iu] = pair_logits
        return node_logits, edge_logits


# --- functional surface ---------------------------------------------------


def _levels(schedule: NoiseSchedule, t, B: int, dtype) -> torch.Tensor:
    t = torch.as_tensor(t).expand(B) if np.ndim(t) == 0 else torch.as_tensor(t)
    return torch.as_tensor(schedule.alpha_bar, dtype=dtype)[t]


def batch_logits(model: GraphDenoiser, batch: DenseBatch, t, schedule: NoiseSchedule):
    dtype = next(model.parameters()).dtype
    b = batch.to(dtype)
    lv = _levels(schedule, t, b.X.shape[0], dtype)
    return model(b, lv, lv)


def denoiser_forward(model: GraphDenoiser, gt: GraphDistribution, t: int, schedule: NoiseSchedule) -> dict:
    """Logits of the clean-graph prediction for one graph (edges in upper-triangular order)."""
    if gt.node_probs.shape[1] != model.cfg.n_node or gt.edge_probs.shape[1] != model.cfg.n_edge:
        raise ShapeMismatch("input categories do not match the denoiser vocabulary")
    schedule.check(t)
    batch = from_distributions([gt])
    nl, el = batch_logits(model, batch, t, schedule)
    iu, ju = np.triu_indices(gt.n, 1)
    return {"node_logits": nl[0], "edge_logits": el[0, iu, ju]}


def denoiser_loss(
    node_logits: torch.Tensor,
    edge_logits: torch.Tensor,
    x0: DenseBatch,
    edge_weight: float = 5.0,
) -> torch.Tensor:
    """Mean node cross-entropy plus ``edge_weight`` times mean edge cross-entropy.

    Edges are counted once per unordered pair (upper triangle).
    """
    if node_logits.shape != x0.X.shape or edge_logits.shape != x0.E.shape:
        raise ShapeMismatch(f"{tuple(node_logits.shape)} vs {tuple(x0.X.shape)}")
    mask = x0.mask
    N = mask.shape[1]
    upper = x0.pair_mask() & torch.ones(N, N, dtype=torch.bool).triu(1)
    node_ce = -(x0.X * F.log_softmax(node_logits, -1)).sum(-1)[mask].mean()
    if upper.any():
        edge_ce = -(x0.E * F.log_softmax(edge_logits, -1)).sum(-1)[upper].mean()
    else:
        edge_ce = node_ce.new_zeros(())
    return node_ce + edge_weight * edge_ce


def noisy_batch(
    x0: DenseBatch, t: torch.Tensor, schedule: NoiseSchedule, gen: torch.Generator
) -> DenseBatch:
    """Corrupt each feature independently with q(x_t | x_0) and return one-hot samples."""
    px = corrupt(x0.X.double(), t[:, None], schedule, "node")
    pe = corrupt(x0.E.double(), t[:, None, None], schedule, "edge")
    xi = sample_categorical(px, gen)
    N = x0.mask.shape[1]
    ei = sample_categorical(pe, gen).triu(1)
    ei = ei + ei.transpose(1, 2)
    X = F.one_hot(xi, x0.X.shape[-1]).to(x0.X.dtype)
    E = F.one_hot(ei, x0.E.shape[-1]).to(x0.E.dtype)
    X, E = fill_padding(X, E, x0.mask)
    return DenseBatch(X, E, x0.mask)


@dataclass
class TrainOptions:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 5e-4
    edge_weight: float = 5.0
    seed: int = 0
    grad_clip: float = 1.0
    deterministic: bool = True
    log_every: int = 10
    max_minutes: float | None = None


@dataclass
class TrainResult:
    model: nn.Module
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def check_vocabulary(graphs: Sequence[MolecularGraph], n_node: int) -> None:
    for g in graphs:
        if g.vocab.n_node != n_node or max(g.nodes) >= n_node:
            raise VocabularyError("dataset molecule outside the model vocabulary")


def seeded_init(module_factory, seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return module_factory()


def train_denoiser(
    graphs: Sequence[MolecularGraph],
    cfg: DenoiserConfig,
    schedule: NoiseSchedule,
    opts: TrainOptions | None = None,
) -> TrainResult:
    opts = opts or TrainOptions()
    if not graphs:
        raise ValueError("empty dataset")
    check_vocabulary(graphs, cfg.n_node)
    if opts.deterministic:
        torch.set_num_threads(1)
    model = seeded_init(lambda: GraphDenoiser(cfg), opts.seed)
    optim = torch.optim.Adam(model.parameters(), lr=opts.lr)
    gen = torch.Generator().manual_seed(opts.seed + 1)
    order_rng = np.random.default_rng(opts.seed + 2)
    # batches grouped by size bucket keep padding low
    n_max = max(g.n for g in graphs)
    dense = from_graphs(graphs, n_max=n_max)
    res = TrainResult(model)
    t0 = time.time()
    for epoch in range(opts.epochs):
        perm = order_rng.permutation(len(graphs))
        tot, cnt = 0.0, 0
        for s in range(0, len(perm), opts.batch_size):
            idx = torch.as_tensor(perm[s : s + opts.batch_size])
            n_b = int(dense.mask[idx].sum(1).max())
            x0 = DenseBatch(dense.X[idx, :n_b], dense.E[idx, :n_b, :n_b], dense.mask[idx, :n_b])
            t = torch.randint(1, schedule.T + 1, (len(idx),), generator=gen)
            xt = noisy_batch(x0, t, schedule, gen)
            nl, el = batch_logits(model, xt, t, schedule)
            loss = denoiser_loss(nl, el, x0, opts.edge_weight)
            optim.zero_grad()
            loss.backward()
            if opts.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), opts.grad_clip)
            optim.step()
            tot += loss.item() * len(idx)
            cnt += len(idx)
        res.losses.append(tot / cnt)
        if not math.isfinite(res.losses[-1]):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        if opts.log_every and epoch % opts.log_every == 0:
            log.info("denoiser epoch %d loss %.4f (%.0fs)", epoch, res.losses[-1], time.time() - t0)
        if opts.max_minutes and time.time() - t0 > 60 * opts.max_minutes:
            log.warning("stopping after %d epochs: time budget reached", epoch + 1)
            break
    res.seconds = time.time() - t0
    model.eval()
    return res
