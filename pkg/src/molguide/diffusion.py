"""Categorical diffusion over node and edge features.

Conventions: transition matrices are column-stochastic, ``Q[j, i] = q(x_t = j |
x_{t-1} = i)``, so a one-hot column ``x`` is pushed forward as ``Q @ x``. Step
``t = 0`` is the clean data; ``alpha_bar[0] = 1``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import torch

from .molgraph import MolecularGraph, n_pairs

Space = Literal["node", "edge"]


class MissingMarginals(ValueError):
    pass


class StepOutOfRange(IndexError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    alpha: np.ndarray  # length T + 1, alpha[0] = 1
    alpha_bar: np.ndarray  # length T + 1, alpha_bar[0] = 1
    kind: str
    prior_v: np.ndarray
    prior_e: np.ndarray
    snr_clip: tuple[float, float] = (0.05, 5.0)

    def prior(self, space: Space) -> np.ndarray:
        return self.prior_v if space == "node" else self.prior_e

    def check(self, t: int, lo: int = 1) -> None:
        if not lo <= t <= self.T:
            raise StepOutOfRange(f"t={t} outside [{lo}, {self.T}]")

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "kind": self.kind,
            "alpha": [float(a) for a in self.alpha[1:]],
            "prior_v": [float(p) for p in self.prior_v],
            "prior_e": [float(p) for p in self.prior_e],
            "snr_clip": list(self.snr_clip),
        }

    @classmethod
    def from_json(cls, d: dict) -> "NoiseSchedule":
        alpha = np.concatenate([[1.0], np.asarray(d["alpha"], dtype=np.float64)])
        return cls(
            T=int(d["T"]),
            alpha=alpha,
            alpha_bar=np.cumprod(alpha),
            kind=d["kind"],
            prior_v=np.asarray(d["prior_v"], dtype=np.float64),
            prior_e=np.asarray(d["prior_e"], dtype=np.float64),
            snr_clip=tuple(d["snr_clip"]),
        )

    def digest(self) -> str:
        d = self.to_json()
        d["alpha"] = [a.hex() for a in d["alpha"]]
        d["prior_v"] = [p.hex() for p in d["prior_v"]]
        d["prior_e"] = [p.hex() for p in d["prior_e"]]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cosine_alpha_bar(T: int, s: float = 0.008) -> np.ndarray:
    steps = np.arange(T + 1, dtype=np.float64) / T
    f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
    return f / f[0]


def build_schedule(
    T: int = 500,
    kind: str = "marginal",
    marginals: tuple[Sequence[float], Sequence[float]] | None = None,
    n_node: int | None = None,
    n_edge: int = 4,
    snr_clip: tuple[float, float] = (0.05, 5.0),
) -> NoiseSchedule:
    """Cosine schedule; ``marginals`` = (node frequencies, edge frequencies)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if kind == "marginal":
        if marginals is None:
            raise MissingMarginals("marginal transitions need category frequencies")
        pv = np.asarray(marginals[0], dtype=np.float64)
        pe = np.asarray(marginals[1], dtype=np.float64)
        pv, pe = pv / pv.sum(), pe / pe.sum()
    elif kind == "uniform":
        if marginals is not None:
            n_node, n_edge = len(marginals[0]), len(marginals[1])
        if n_node is None:
            raise ValueError("uniform schedule needs n_node")
        pv = np.full(n_node, 1.0 / n_node)
        pe = np.full(n_edge, 1.0 / n_edge)
    else:
        raise ValueError(f"unknown transition kind {kind!r}")
    ab = cosine_alpha_bar(T)
    alpha = np.clip(ab[1:] / ab[:-1], 0.001, 1.0)
    alpha = np.concatenate([[1.0], alpha])
    return NoiseSchedule(T, alpha, np.cumprod(alpha), kind, pv, pe, tuple(snr_clip))


def _mix(coef: float, prior: np.ndarray) -> np.ndarray:
    k = len(prior)
    return coef * np.eye(k) + (1.0 - coef) * np.outer(prior, np.ones(k))


def transition_matrix(schedule: NoiseSchedule, t: int, space: Space) -> np.ndarray:
    schedule.check(t)
    return _mix(schedule.alpha[t], schedule.prior(space))


def cumulative_matrix(
    schedule: NoiseSchedule, t: int, space: Space, method: str = "closed"
) -> np.ndarray:
    """Q_bar_t = Q_t ... Q_1, either in closed form or by explicit products."""
    schedule.check(t, lo=0)
    if method == "closed":
        return _mix(schedule.alpha_bar[t], schedule.prior(space))
    q = np.eye(len(schedule.prior(space)))
    for s in range(1, t + 1):
        q = transition_matrix(schedule, s, space) @ q
    return q


def forward_sample(
    x0: int, t: int, schedule: NoiseSchedule, space: Space, rng: np.random.Generator
) -> int:
    schedule.check(t, lo=0)
    if t == 0:
        return int(x0)
    col = cumulative_matrix(schedule, t, space)[:, x0]
    return int(rng.choice(len(col), p=col))


def posterior(x0: int, xt: int, t: int, schedule: NoiseSchedule, space: Space) -> np.ndarray:
    """q(x_{t-1} | x_0, x_t) as a probability vector."""
    schedule.check(t)
    k = len(schedule.prior(space))
    if t == 1:
        out = np.zeros(k)
        out[x0] = 1.0
        return out
    q_t = transition_matrix(schedule, t, space)
    qb = cumulative_matrix(schedule, t - 1, space)
    un = q_t[xt, :] * qb[:, x0]
    return un / un.sum()


@dataclass
class GraphDistribution:
    """Per-feature categorical distributions for a single graph."""

    node_probs: np.ndarray  # (n, K_v)
    edge_probs: np.ndarray  # (n(n-1)/2, K_e)

    def __post_init__(self):
        self.node_probs = np.asarray(self.node_probs, dtype=np.float64)
        self.edge_probs = np.asarray(self.edge_probs, dtype=np.float64)
        n = self.node_probs.shape[0]
        if self.edge_probs.shape[0] != n_pairs(n):
            raise ShapeMismatch(f"{n} nodes need {n_pairs(n)} edge rows")

    @property
    def n(self) -> int:
        return self.node_probs.shape[0]

    def validate(self, tol: float = 1e-9) -> None:
        for p in (self.node_probs, self.edge_probs):
            if p.size and (np.any(p < 0) or np.max(np.abs(p.sum(-1) - 1.0)) > tol):
                raise ValueError("rows must be probability vectors")

    @classmethod
    def from_graph(cls, g: MolecularGraph) -> "GraphDistribution":
        v = np.eye(g.vocab.n_node)[list(g.nodes)]
        e = np.eye(g.vocab.n_edge)[list(g.edges)].reshape(len(g.edges), g.vocab.n_edge)
        return cls(v, e)

    def argmax_graph(self, vocab) -> MolecularGraph:
        return MolecularGraph(
            tuple(self.node_probs.argmax(-1).tolist()),
            tuple(self.edge_probs.argmax(-1).tolist()) if len(self.edge_probs) else (),
            vocab,
        )


def reverse_step(
    gt: GraphDistribution, x0_pred: GraphDistribution, t: int, schedule: NoiseSchedule
) -> GraphDistribution:
    """Unconditional reverse distribution: sum over x0 of posterior times x0 prediction."""
    if gt.node_probs.shape != x0_pred.node_probs.shape or gt.edge_probs.shape != x0_pred.edge_probs.shape:
        raise ShapeMismatch("x0 prediction and G_t shapes differ")
    schedule.check(t)
    out = []
    for space, xt, p0 in (
        ("node", gt.node_probs, x0_pred.node_probs),
        ("edge", gt.edge_probs, x0_pred.edge_probs),
    ):
        t_ = torch.from_numpy(xt)
        out.append(
            reverse_probs(t_, torch.from_numpy(p0), t, schedule, space).numpy()
        )
    return GraphDistribution(out[0], out[1])


def _mats(schedule: NoiseSchedule, t: int, space: Space, like: torch.Tensor):
    kw = dict(dtype=like.dtype, device=like.device)
    q_t = torch.as_tensor(transition_matrix(schedule, t, space), **kw)
    qb_t = torch.as_tensor(cumulative_matrix(schedule, t, space), **kw)
    qb_prev = torch.as_tensor(cumulative_matrix(schedule, t - 1, space), **kw)
    return q_t, qb_t, qb_prev


def reverse_probs(
    xt: torch.Tensor, x0_probs: torch.Tensor, t: int, schedule: NoiseSchedule, space: Space
) -> torch.Tensor:
    """Batched reverse mixture for one-hot ``xt`` rows (last dim = categories).

    p(x_{t-1} = j) = Q_t[x_t, j] * sum_x0 Qbar_{t-1}[j, x0] p(x0) / Qbar_t[x_t, x0]
    """
    if t == 1:
        return x0_probs.clone()
    q_t, qb_t, qb_prev = _mats(schedule, t, space, x0_probs)
    left = xt @ q_t  # row x_t of Q_t
    denom = xt @ qb_t  # Qbar_t[x_t, x0]
    right = (x0_probs / denom) @ qb_prev.T
    p = left * right
    return p / p.sum(-1, keepdim=True)


def corrupt(x0: torch.Tensor, t: torch.Tensor, schedule: NoiseSchedule, space: Space) -> torch.Tensor:
    """Probabilities of x_t given one-hot x0 rows; ``t`` broadcast per leading row."""
    ab = torch.as_tensor(schedule.alpha_bar, dtype=x0.dtype)[t]
    prior = torch.as_tensor(schedule.prior(space), dtype=x0.dtype)
    while ab.dim() < x0.dim():
        ab = ab.unsqueeze(-1)
    return ab * x0 + (1 - ab) * prior


def snr_weight(schedule: NoiseSchedule, t) -> np.ndarray | float:
    """alpha_bar / (1 - alpha_bar), clipped; t = 0 maps to the upper clip."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T):
        raise StepOutOfRange(f"t outside [0, {schedule.T}]")
    ab = schedule.alpha_bar[t_arr]
    with np.errstate(divide="ignore"):
        snr = np.where(ab < 1.0, ab / np.maximum(1.0 - ab, 1e-300), np.inf)
    out = np.clip(snr, *schedule.snr_clip)
    return float(out) if np.ndim(out) == 0 else out


def sample_categorical(probs: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Inverse-CDF draw per row; deterministic given the generator state."""
    flat = probs.reshape(-1, probs.shape[-1])
    u = torch.rand(flat.shape[0], 1, generator=gen, dtype=flat.dtype)
    cdf = flat.cumsum(-1)
    idx = (cdf < u * cdf[:, -1:]).sum(-1).clamp_max(flat.shape[-1] - 1)
    return idx.reshape(probs.shape[:-1])


def sample_prior(n: int, schedule: NoiseSchedule, rng: np.random.Generator) -> GraphDistribution:
    if n < 1:
        raise ValueError("n must be >= 1")
    kv, ke = len(schedule.prior_v), len(schedule.prior_e)
    v = rng.choice(kv, size=n, p=schedule.prior_v)
    e = rng.choice(ke, size=n_pairs(n), p=schedule.prior_e)
    return GraphDistribution(np.eye(kv)[v], np.eye(ke)[e].reshape(-1, ke))


def dataset_marginals(graphs: Sequence[MolecularGraph]) -> tuple[np.ndarray, np.ndarray]:
    """Node-category and edge-category frequencies over all nodes and all pairs."""
    vocab = graphs[0].vocab
    nv = np.zeros(vocab.n_node)
    ne = np.zeros(vocab.n_edge)
    for g in graphs:
        np.add.at(nv, list(g.nodes), 1)
        np.add.at(ne, list(g.edges), 1)
    # unseen categories keep a tiny mass so every transition stays irreducible
    nv, ne = nv + 1e-3, ne + 1e-3
    return nv / nv.sum(), ne / ne.sum()
