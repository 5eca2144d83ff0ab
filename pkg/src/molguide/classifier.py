"""Noisy-graph activity classifiers.

Edge-conditioned message passing (one weight matrix per bond type, so the
"none" category carries no message) with GRU updates, a gated attention-sum
readout and an MLP head producing one logit. Inputs may be soft: every
message is linear in the edge probabilities, which keeps input gradients
meaningful for guidance.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .denoiser import check_vocabulary, noisy_batch, seeded_init
from .diffusion import GraphDistribution, NoiseSchedule, ShapeMismatch, snr_weight
from .graphbatch import DenseBatch, from_distributions, from_graphs
from .molgraph import MolecularGraph, canonical_key, fingerprint
from .molgraph.fingerprint import bulk_tanimoto

log = logging.getLogger(__name__)

ACTIVE_NM = 1000.0
INACTIVE_NM = 10000.0


class NonPositiveActivity(ValueError):
    pass


class DegenerateLabels(ValueError):
    pass


class InsufficientPool(UserWarning):
    pass


def activity_label(v: float) -> float:
    """Map an activity (nM) to [0, 1]: 1 below 1 uM, 0 from 10 uM, log-linear between."""
    if not v > 0:
        raise NonPositiveActivity(f"activity must be positive, got {v}")
    if v < ACTIVE_NM:
        return 1.0
    if v >= INACTIVE_NM:
        return 0.0
    return (math.log(INACTIVE_NM) - math.log(v)) / (math.log(INACTIVE_NM) - math.log(ACTIVE_NM))


@dataclass
class ActivityRecord:
    molecule: MolecularGraph
    activity_nM: float | None
    target_id: str

    @property
    def label(self) -> float:
        return 0.0 if self.activity_nM is None else activity_label(self.activity_nM)


@dataclass
class ClassifierConfig:
    n_node: int
    n_edge: int = 4
    hidden: int = 64
    n_mp_layers: int = 3

    def to_json(self) -> dict:
        return asdict(self)


class GraphClassifier(nn.Module):
    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.embed = nn.Linear(cfg.n_node + 2, h)
        # one message matrix per bond type (edge categories 1..K_e-1)
        self.msg = nn.ParameterList(
            nn.Parameter(torch.randn(cfg.n_edge - 1, h, h) / math.sqrt(h)) for _ in range(cfg.n_mp_layers)
        )
        self.gru = nn.GRUCell(h, h)
        self.gate = nn.Linear(h, 1)
        self.proj = nn.Linear(h, h)
        self.head = nn.Sequential(nn.Linear(h + 2, h), nn.SiLU(), nn.Linear(h, 1))

    def forward(self, X: torch.Tensor, E: torch.Tensor, mask: torch.Tensor, level: torch.Tensor) -> torch.Tensor:
        B, N, _ = X.shape
        pm = (mask[:, :, None] & mask[:, None, :]) & ~torch.eye(N, dtype=torch.bool)
        X = X * mask.unsqueeze(-1)
        E = E * pm.unsqueeze(-1)
        lv = torch.stack([level, 1.0 - level], -1)
        h = F.silu(self.embed(torch.cat([X, lv[:, None].expand(B, N, 2)], -1)))
        bonds = E[..., 1:]  # (B, N, N, K_e - 1)
        for W in self.msg:
            hw = torch.einsum("bjd,kde->bjke", h, W)
            m = torch.einsum("bijk,bjke->bie", bonds, hw)
            h = self.gru(m.reshape(B * N, -1), h.reshape(B * N, -1)).view(B, N, -1)
        h = h * mask.unsqueeze(-1)
        w = torch.sigmoid(self.gate(h)) * mask.unsqueeze(-1)
        r = (w * self.proj(h)).sum(1) / 4.0
        return self.head(torch.cat([r, lv], -1)).squeeze(-1)


def batch_logit(model: GraphClassifier, batch: DenseBatch, t, schedule: NoiseSchedule) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    B = batch.X.shape[0]
    tt = torch.as_tensor(t).expand(B) if np.ndim(t) == 0 else torch.as_tensor(t)
    level = torch.as_tensor(schedule.alpha_bar, dtype=dtype)[tt]
    return model(batch.X.to(dtype), batch.E.to(dtype), batch.mask, level)


def classifier_forward(model: GraphClassifier, g: GraphDistribution, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    if g.node_probs.shape[1] != model.cfg.n_node or g.edge_probs.shape[1] != model.cfg.n_edge:
        raise ShapeMismatch("input categories do not match the classifier vocabulary")
    schedule.check(t, lo=0)
    return batch_logit(model, from_distributions([g]), t, schedule)[0]


def snr_weighted_bce(z: torch.Tensor, y: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """-(1/N) sum_i w_i [y_i log s(z_i) + (1 - y_i) log(1 - s(z_i))], via log-sigmoid."""
    if not (z.shape == y.shape == w.shape) or z.numel() == 0:
        raise ValueError(f"length mismatch: {tuple(z.shape)}, {tuple(y.shape)}, {tuple(w.shape)}")
    ll = y * F.logsigmoid(z) + (1 - y) * F.logsigmoid(-z)
    return -(ll * w).sum() / z.numel()


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-based ROC AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both classes")
    from .molgraph.metrics import _midranks

    ranks = _midranks(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def negative_sample(
    actives: Sequence[MolecularGraph],
    pool: Sequence[MolecularGraph],
    sim_threshold: float = 0.6,
    ratio: int = 10,
    rng: np.random.Generator | None = None,
    fp_kwargs: dict | None = None,
) -> tuple[list[MolecularGraph], bool]:
    """Draw up to ``ratio * len(actives)`` pool molecules dissimilar to every active.

    Returns (selection, short) where ``short`` flags that fewer qualifying
    molecules existed than requested.
    """
    rng = rng or np.random.default_rng(0)
    fp_kwargs = fp_kwargs or {}
    active_keys = {canonical_key(g) for g in actives}
    if any(canonical_key(g) in active_keys for g in pool):
        raise ValueError("pool must be disjoint from actives")
    afp = np.stack([fingerprint(g, **fp_kwargs) for g in actives]) if actives else None
    qualifying = []
    for i, g in enumerate(pool):
        if afp is None or bulk_tanimoto(fingerprint(g, **fp_kwargs), afp).max() < sim_threshold:
            qualifying.append(i)
    want = ratio * len(actives)
    short = len(qualifying) < want
    if short:
        warnings.warn(f"only {len(qualifying)} qualifying negatives for {want} requested", InsufficientPool)
    picks = rng.permutation(len(qualifying))[: min(want, len(qualifying))]
    return [pool[qualifying[k]] for k in sorted(picks)], short


@dataclass
class ClassifierTrainOptions:
    max_epochs: int = 1000
    patience: int = 30
    batch_size: int = 64
    lr: float = 3e-4
    clean_fraction: float = 0.1
    seed: int = 0
    deterministic: bool = True
    log_every: int = 10


@dataclass
class ClassifierResult:
    model: GraphClassifier
    train_losses: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int = -1
    test_auc: float | None = None
    split: dict = field(default_factory=dict)
    seconds: float = 0.0


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded 8:1:1 train/validation/test split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, n // 10)
    n_test = max(1, n // 10)
    return perm[n_val + n_test :], perm[:n_val], perm[n_val : n_val + n_test]


def _sample_steps(n: int, schedule: NoiseSchedule, clean_fraction: float, gen: torch.Generator) -> torch.Tensor:
    t = torch.randint(1, schedule.T + 1, (n,), generator=gen)
    clean = torch.rand(n, generator=gen) < clean_fraction
    return torch.where(clean, torch.zeros_like(t), t)


def _noisy(x0: DenseBatch, t: torch.Tensor, schedule: NoiseSchedule, gen: torch.Generator) -> DenseBatch:
    return noisy_batch(x0, t, schedule, gen)


def evaluate_auc(
    model: GraphClassifier,
    graphs: Sequence[MolecularGraph],
    labels: Sequence[float],
    schedule: NoiseSchedule,
    t: int | torch.Tensor = 0,
    seed: int = 0,
) -> float:
    """AUC of the classifier on graphs corrupted to step ``t`` (0 = clean)."""
    x0 = from_graphs(graphs)
    gen = torch.Generator().manual_seed(seed)
    tt = torch.as_tensor(t).expand(len(graphs)) if np.ndim(t) == 0 else torch.as_tensor(t)
    batch = _noisy(x0, tt, schedule, gen) if bool((tt > 0).any()) else x0
    with torch.no_grad():
        z = batch_logit(model, batch, tt, schedule)
    return auc(z.numpy(), np.asarray(labels) >= 0.5)


def train_classifier(
    records: Sequence[ActivityRecord],
    cfg: ClassifierConfig,
    schedule: NoiseSchedule,
    opts: ClassifierTrainOptions | None = None,
) -> ClassifierResult:
    """SNR-weighted BCE on noised molecules; early stopping on validation AUC."""
    opts = opts or ClassifierTrainOptions()
    if not records:
        raise ValueError("empty dataset")
    graphs = [r.molecule for r in records]
    labels = np.array([r.label for r in records], dtype=np.float64)
    if len(set((labels >= 0.5).tolist())) < 2:
        raise DegenerateLabels("need both active and inactive records")
    check_vocabulary(graphs, cfg.n_node)
    if opts.deterministic:
        torch.set_num_threads(1)

    tr, va, te = split_indices(len(records), opts.seed)
    for name, idx in (("validation", va), ("test", te)):
        if len(set((labels[idx] >= 0.5).tolist())) < 2:
            raise DegenerateLabels(f"{name} split has a single class")
    model = seeded_init(lambda: GraphClassifier(cfg), opts.seed)
    optim = torch.optim.Adam(model.parameters(), lr=opts.lr, weight_decay=0.0)
    gen = torch.Generator().manual_seed(opts.seed + 1)
    order_rng = np.random.default_rng(opts.seed + 2)
    n_max = max(g.n for g in graphs)
    dense = from_graphs(graphs, n_max=n_max)
    y_all = torch.as_tensor(labels, dtype=torch.float32)
    snr = torch.as_tensor(snr_weight(schedule, np.arange(schedule.T + 1)), dtype=torch.float32)

    # fixed noisy validation copy: same corruption every epoch
    val_gen = torch.Generator().manual_seed(opts.seed + 3)
    va_t = _sample_steps(len(va), schedule, opts.clean_fraction, val_gen)
    va_x0 = DenseBatch(dense.X[va], dense.E[va], dense.mask[va])
    va_batch = _noisy(va_x0, va_t, schedule, val_gen)
    va_labels = labels[va] >= 0.5

    res = ClassifierResult(model, split={"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()})
    best_state, best_auc, stale = None, -1.0, 0
    t0 = time.time()
    for epoch in range(opts.max_epochs):
        model.train()
        perm = tr[order_rng.permutation(len(tr))]
        tot = 0.0
        for s in range(0, len(perm), opts.batch_size):
            idx = torch.as_tensor(perm[s : s + opts.batch_size])
            n_b = int(dense.mask[idx].sum(1).max())
            x0 = DenseBatch(dense.X[idx, :n_b], dense.E[idx, :n_b, :n_b], dense.mask[idx, :n_b])
            t = _sample_steps(len(idx), schedule, opts.clean_fraction, gen)
            xt = _noisy(x0, t, schedule, gen)
            z = batch_logit(model, xt, t, schedule)
            loss = snr_weighted_bce(z, y_all[idx], snr[t])
            optim.zero_grad()
            loss.backward()
            optim.step()
            tot += loss.item() * len(idx)
        res.train_losses.append(tot / len(tr))
        model.eval()
        with torch.no_grad():
            zv = batch_logit(model, va_batch, va_t, schedule).numpy()
        v_auc = auc(zv, va_labels)
        res.val_auc.append(v_auc)
        if v_auc > best_auc:
            best_auc, stale, res.best_epoch = v_auc, 0, epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
        if opts.log_every and epoch % opts.log_every == 0:
            log.info("classifier epoch %d loss %.4f val AUC %.3f", epoch, res.train_losses[-1], v_auc)
        if stale >= opts.patience:
            break
    model.load_state_dict(best_state)
    model.eval()
    res.test_auc = evaluate_auc(model, [graphs[i] for i in te], labels[te], schedule, 0)
    res.seconds = time.time() - t0
    return res
