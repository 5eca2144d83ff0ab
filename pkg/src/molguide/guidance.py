"""Classifier-guided reverse diffusion with positive and negative terms.

Every reverse step combines two first-order approximations of
p(x_{t-1} | x_t, y):

* path A tilts the unconditional reverse distribution by the classifier
  gradient taken at its expectation (classifier evaluated at step t-1);
* path B tilts the clean-graph prediction by the gradient taken at the
  predicted x0 marginals (classifier at t=0) and pushes the tilted
  prediction through the posterior.

The two per-feature distributions are merged by a normalised geometric mean.
A tilt is ``p_k * exp(scale * g_k)`` renormalised, with ``g`` the weighted
sum of d log p(y | G) / dG over all terms (y = 0 terms push away).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .classifier import GraphClassifier, batch_logit
from .denoiser import GraphDenoiser, batch_logits
from .diffusion import GraphDistribution, NoiseSchedule, ShapeMismatch, reverse_probs, sample_categorical
from .graphbatch import DenseBatch, fill_padding, from_distributions, symmetric_pair_grad, to_distributions, to_graphs
from .molgraph import MolecularGraph, Vocabulary


class DigestMismatch(ValueError):
    pass


@dataclass
class GuidanceTerm:
    classifier: GraphClassifier
    target: int = 1
    weight: float = 1.0
    name: str = ""
    schedule_digest: str | None = None
    vocab_digest: str | None = None

    def __post_init__(self):
        if self.target not in (0, 1):
            raise ValueError("target must be 0 or 1")
        if not self.weight > 0:
            raise ValueError("guidance weights must be positive")


@dataclass
class GuidanceSpec:
    terms: list[GuidanceTerm] = field(default_factory=list)
    scale: float = 100.0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("scale must be >= 0")

    @property
    def active(self) -> bool:
        return bool(self.terms) and self.scale > 0


def check_digests(spec: GuidanceSpec, schedule: NoiseSchedule, vocab: Vocabulary | None = None) -> None:
    for term in spec.terms:
        if term.schedule_digest is not None and term.schedule_digest != schedule.digest():
            raise DigestMismatch(f"classifier {term.name!r} was trained with a different schedule")
        if vocab is not None and term.vocab_digest is not None and term.vocab_digest != vocab.digest():
            raise DigestMismatch(f"classifier {term.name!r} uses a different vocabulary")


def _edge_mask(mask: torch.Tensor) -> torch.Tensor:
    N = mask.shape[1]
    return (mask[:, :, None] & mask[:, None, :]) & ~torch.eye(N, dtype=torch.bool)


def batch_guidance_gradient(
    term: GuidanceTerm, ref: DenseBatch, t: int, schedule: NoiseSchedule
) -> tuple[torch.Tensor, torch.Tensor]:
    """d log p(y | G) / dG at ``ref``; edge gradients are per unordered pair, stored symmetric."""
    model = term.classifier
    dtype = next(model.parameters()).dtype
    X = ref.X.detach().to(dtype).requires_grad_(True)
    E = ref.E.detach().to(dtype).requires_grad_(True)
    with torch.enable_grad():
        z = batch_logit(model, DenseBatch(X, E, ref.mask), t, schedule)
        logp = F.logsigmoid(z) if term.target == 1 else F.logsigmoid(-z)
        gX, gE = torch.autograd.grad(logp.sum(), [X, E])
    gE = symmetric_pair_grad(gE) * _edge_mask(ref.mask).unsqueeze(-1)
    gX = gX * ref.mask.unsqueeze(-1)
    return gX.to(ref.X.dtype), gE.to(ref.E.dtype)


def guidance_gradient(term: GuidanceTerm, g_ref: GraphDistribution, t: int, schedule: NoiseSchedule) -> GraphDistribution:
    """Single-graph gradient; returned in the GraphDistribution layout (not normalised)."""
    if g_ref.node_probs.shape[1] != term.classifier.cfg.n_node:
        raise ShapeMismatch("reference graph does not match the classifier vocabulary")
    if term.schedule_digest is not None and term.schedule_digest != schedule.digest():
        raise DigestMismatch("classifier schedule digest differs")
    gX, gE = batch_guidance_gradient(term, from_distributions([g_ref]), t, schedule)
    iu, ju = np.triu_indices(g_ref.n, 1)
    return _raw_distribution(gX[0].numpy(), gE[0, iu, ju].numpy().reshape(len(iu), gE.shape[-1]))


def _raw_distribution(node: np.ndarray, edge: np.ndarray) -> GraphDistribution:
    d = GraphDistribution.__new__(GraphDistribution)
    d.node_probs, d.edge_probs = node, edge
    return d


def tilt_distribution(base: torch.Tensor, g: torch.Tensor, scale: float) -> torch.Tensor:
    """base * exp(scale * g), renormalised along the last axis (max-shifted)."""
    base = torch.as_tensor(base)
    g = torch.as_tensor(g, dtype=base.dtype)
    if scale == 0:
        return base.clone()
    logits = scale * g
    logits = logits - logits.max(-1, keepdim=True).values
    out = base * torch.exp(logits)
    return out / out.sum(-1, keepdim=True)


def combined_gradient(spec: GuidanceSpec, ref: DenseBatch, t: int, schedule: NoiseSchedule):
    gX = torch.zeros_like(ref.X)
    gE = torch.zeros_like(ref.E)
    for term in spec.terms:
        tx, te = batch_guidance_gradient(term, ref, t, schedule)
        gX = gX + term.weight * tx
        gE = gE + term.weight * te
    return gX, gE


def _geo_mean(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    r = torch.sqrt(p * q)
    return r / r.sum(-1, keepdim=True)


def guided_step_probs(
    xt: DenseBatch,
    denoiser: GraphDenoiser,
    spec: GuidanceSpec,
    t: int,
    schedule: NoiseSchedule,
    paths: tuple[str, ...] = ("A", "B"),
) -> tuple[torch.Tensor, torch.Tensor]:
    """Guided distributions over G_{t-1} for a one-hot batch ``xt`` (float64).

    Returns node probabilities (B, N, K_v) and symmetric edge probabilities
    (B, N, N, K_e); padded entries hold category 0.
    """
    schedule.check(t)
    xt = xt.to(torch.float64)
    with torch.no_grad():
        nl, el = batch_logits(denoiser, xt, t, schedule)
    x0X = torch.softmax(nl.double(), -1)
    x0E = torch.softmax(el.double(), -1)
    x0 = DenseBatch(*fill_padding(x0X, x0E, xt.mask), xt.mask)
    baseX = reverse_probs(xt.X, x0.X, t, schedule, "node")
    baseE = reverse_probs(xt.E, x0.E, t, schedule, "edge")
    base = DenseBatch(*fill_padding(baseX, baseE, xt.mask), xt.mask)
    if not spec.active:
        return _combine_paths(base, base, paths)

    # path A: tilt the unconditional step around its expectation
    gX, gE = combined_gradient(spec, base, t - 1, schedule)
    pA = DenseBatch(
        tilt_distribution(base.X, gX, spec.scale), tilt_distribution(base.E, gE, spec.scale), xt.mask
    )
    # path B: tilt the x0 prediction, then push through the posterior
    gX0, gE0 = combined_gradient(spec, x0, 0, schedule)
    x0t = DenseBatch(
        tilt_distribution(x0.X, gX0, spec.scale), tilt_distribution(x0.E, gE0, spec.scale), xt.mask
    )
    pBX = reverse_probs(xt.X, x0t.X, t, schedule, "node")
    pBE = reverse_probs(xt.E, x0t.E, t, schedule, "edge")
    pB = DenseBatch(*fill_padding(pBX, pBE, xt.mask), xt.mask)
    return _combine_paths(pA, pB, paths)


def _combine_paths(pA: DenseBatch, pB: DenseBatch, paths) -> tuple[torch.Tensor, torch.Tensor]:
    if tuple(paths) == ("A",):
        X, E = pA.X, pA.E
    elif tuple(paths) == ("B",):
        X, E = pB.X, pB.E
    else:
        X, E = _geo_mean(pA.X, pB.X), _geo_mean(pA.E, pB.E)
    return fill_padding(X, E, pA.mask)


def sample_state(
    pX: torch.Tensor, pE: torch.Tensor, mask: torch.Tensor, gen: torch.Generator | None, argmax: bool = False
) -> DenseBatch:
    """Draw one-hot graphs from per-feature probabilities (edges drawn once per pair)."""
    if argmax:
        xi, ei = pX.argmax(-1), pE.argmax(-1)
    else:
        xi, ei = sample_categorical(pX, gen), sample_categorical(pE, gen)
    ei = ei.triu(1)
    ei = ei + ei.transpose(1, 2)
    X = F.one_hot(xi, pX.shape[-1]).to(pX.dtype)
    E = F.one_hot(ei, pE.shape[-1]).to(pE.dtype)
    return DenseBatch(*fill_padding(X, E, mask), mask)


def guided_reverse_step(
    gt: GraphDistribution,
    denoiser: GraphDenoiser,
    spec: GuidanceSpec,
    t: int,
    schedule: NoiseSchedule,
    gen: torch.Generator,
) -> GraphDistribution:
    """One guided reverse step for a single one-hot graph; argmax at t = 1."""
    if gt.node_probs.shape[1] != denoiser.cfg.n_node or gt.edge_probs.shape[1] != denoiser.cfg.n_edge:
        raise ShapeMismatch("graph categories do not match the denoiser")
    check_digests(spec, schedule)
    xt = from_distributions([gt])
    pX, pE = guided_step_probs(xt, denoiser, spec, t, schedule)
    return to_distributions(sample_state(pX, pE, xt.mask, gen, argmax=t == 1))[0]


# --- generation -----------------------------------------------------------


class SizeSampler:
    """Node counts drawn from an empirical size histogram."""

    def __init__(self, sizes: Sequence[int]):
        counts = np.bincount(np.asarray(sizes, dtype=int))
        self.values = np.nonzero(counts)[0]
        self.probs = counts[self.values] / counts.sum()

    def __call__(self, rng: np.random.Generator, k: int) -> np.ndarray:
        return rng.choice(self.values, size=k, p=self.probs)

    def to_json(self) -> dict:
        return {"values": self.values.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "SizeSampler":
        obj = cls.__new__(cls)
        obj.values = np.asarray(d["values"], dtype=int)
        obj.probs = np.asarray(d["probs"], dtype=float)
        return obj


# clamp(state, t, gen) -> state: hook applied to the prior draw (t = T) and after every step
Clamp = Callable[[DenseBatch, int, torch.Generator], DenseBatch]


def prior_state(sizes: Sequence[int], schedule: NoiseSchedule, gen: torch.Generator) -> DenseBatch:
    B, N = len(sizes), int(max(sizes))
    mask = torch.arange(N)[None, :] < torch.as_tensor(sizes)[:, None]
    pX = torch.as_tensor(schedule.prior_v).expand(B, N, -1)
    pE = torch.as_tensor(schedule.prior_e).expand(B, N, N, -1)
    return sample_state(pX, pE, mask, gen)


@dataclass
class GenerateOptions:
    chunk_size: int = 250
    seed: int = 0
    paths: tuple[str, ...] = ("A", "B")
    progress: bool = False


def run_chain(
    sizes: Sequence[int],
    denoiser: GraphDenoiser,
    spec: GuidanceSpec,
    schedule: NoiseSchedule,
    gen: torch.Generator,
    clamp: Clamp | None = None,
    paths: tuple[str, ...] = ("A", "B"),
    progress: bool = False,
) -> DenseBatch:
    state = prior_state(sizes, schedule, gen)
    if clamp is not None:
        state = clamp(state, schedule.T, gen)
    steps = range(schedule.T, 0, -1)
    if progress:
        from tqdm import tqdm

        steps = tqdm(steps, leave=False)
    for t in steps:
        pX, pE = guided_step_probs(state, denoiser, spec, t, schedule, paths)
        state = sample_state(pX, pE, state.mask, gen, argmax=t == 1)
        if clamp is not None:
            state = clamp(state, t - 1, gen)
    return state


def score_graphs(graphs: Sequence[MolecularGraph], classifiers: dict, schedule: NoiseSchedule) -> list[dict]:
    """sigma(z) at t = 0 for each named classifier."""
    from .graphbatch import from_graphs

    if not graphs:
        return []
    out = [dict() for _ in graphs]
    batch = from_graphs(graphs)
    for name, model in classifiers.items():
        with torch.no_grad():
            s = torch.sigmoid(batch_logit(model, batch, 0, schedule)).tolist()
        for rec, v in zip(out, s):
            rec[name] = float(v)
    return out


def generate(
    denoiser: GraphDenoiser,
    spec: GuidanceSpec,
    schedule: NoiseSchedule,
    n_molecules: int,
    size_sampler: Callable[[np.random.Generator, int], np.ndarray],
    vocab: Vocabulary,
    opts: GenerateOptions | None = None,
    clamp: Clamp | None = None,
    sizes: Sequence[int] | None = None,
) -> tuple[list[MolecularGraph], list[dict]]:
    """Sample molecules; returns graphs and per-molecule classifier scores at t = 0.

    Molecules are processed in size-sorted chunks; chunk ``k`` draws from its
    own generator seeded with (seed, k), so results depend only on the seed.
    """
    opts = opts or GenerateOptions()
    check_digests(spec, schedule, vocab)
    if n_molecules == 0:
        return [], []
    if sizes is None:
        sizes = size_sampler(np.random.default_rng(opts.seed), n_molecules)
    sizes = np.asarray(sizes, dtype=int)
    order = np.argsort(sizes, kind="stable")
    graphs: list[MolecularGraph | None] = [None] * n_molecules
    for k, s in enumerate(range(0, n_molecules, opts.chunk_size)):
        idx = order[s : s + opts.chunk_size]
        gen = torch.Generator().manual_seed(int(np.random.SeedSequence([opts.seed, k]).generate_state(1)[0]))
        state = run_chain(sizes[idx].tolist(), denoiser, spec, schedule, gen, clamp, opts.paths, opts.progress)
        for i, g in zip(idx, to_graphs(state, vocab)):
            graphs[i] = g
    classifiers = {(term.name or f"term{j}"): term.classifier for j, term in enumerate(spec.terms)}
    return graphs, score_graphs(graphs, classifiers, schedule)
