"""Desk-scale experiment helpers shared by ``scripts/`` and the acceptance suite.

Artifacts (one denoiser, one classifier per synthetic property) are built
through the CLI so the experiments exercise the same code path a user would.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from ..guidance import GenerateOptions, GuidanceSpec, GuidanceTerm, SizeSampler, generate
from ..inpaint import FragmentConstraint, constrained_generate
from ..molgraph import MolecularGraph
from ..molgraph.chem import valence_check
from . import checkpoint, synthetic
from .cli import main as cli_main

log = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parents[3]
CORPUS = ROOT / "data" / "corpus.smi"
ARTIFACTS = ROOT / "artifacts"
DESK_PROPERTIES = ("n2", "halogen", "n_and_o", "carbonyl", "o2")


def _run(argv: list[str]) -> None:
    code = cli_main([str(a) for a in argv])
    if code:
        raise RuntimeError(f"molguide {argv[0]} exited with {code}")


def build_artifacts(
    out: str | Path = ARTIFACTS,
    corpus: str | Path = CORPUS,
    properties: Sequence[str] = DESK_PROPERTIES,
    denoiser_epochs: int | None = None,
    seed: int = 0,
    force: bool = False,
) -> Path:
    """Train whatever is missing under ``out``; existing checkpoints are kept."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    den = out / "denoiser.ckpt"
    if force or not den.exists():
        argv = ["train-denoiser", "--data", corpus, "--out", den, "--seed", seed]
        if denoiser_epochs:
            argv += ["--epochs", denoiser_epochs]
        _run(argv)
    for prop in properties:
        clf = out / f"clf_{prop}.ckpt"
        if not force and clf.exists():
            continue
        csv = out / f"activity_{prop}.csv"
        _run(["synth-activity", "--data", corpus, "--property", prop, "--target-id", prop, "--out", csv])
        _run(["train-classifier", "--data", csv, "--target-id", prop, "--schedule-from", den, "--out", clf, "--seed", seed])
    return out


@dataclass
class DeskModels:
    denoiser: torch.nn.Module
    schedule: object
    vocab: object
    sizes: SizeSampler
    classifiers: dict = field(default_factory=dict)
    test_auc: dict = field(default_factory=dict)

    @classmethod
    def load(cls, root: str | Path = ARTIFACTS, properties: Sequence[str] = DESK_PROPERTIES) -> "DeskModels":
        root = Path(root)
        den = checkpoint.load(root / "denoiser.ckpt")
        m = cls(checkpoint.to_model(den).eval(), den.noise_schedule, den.vocab, SizeSampler.from_json(den.extra["size_distribution"]))
        for prop in properties:
            ck = checkpoint.load(root / f"clf_{prop}.ckpt")
            m.classifiers[prop] = (checkpoint.to_model(ck).eval(), ck)
            m.test_auc[prop] = ck.extra.get("test_auc")
        return m

    def term(self, prop: str, target: int = 1, weight: float = 1.0) -> GuidanceTerm:
        model, ck = self.classifiers[prop]
        return GuidanceTerm(model, target, weight, prop, ck.schedule_digest, ck.vocab.digest())

    def spec(self, terms: Sequence[tuple], scale: float = 100.0) -> GuidanceSpec:
        """``terms`` are ``(property, target[, weight])`` tuples."""
        return GuidanceSpec([self.term(*t) for t in terms], scale)

    def sample(self, spec: GuidanceSpec, n: int, seed: int = 0, chunk_size: int = 250) -> list[MolecularGraph]:
        with torch.no_grad():
            graphs, _ = generate(self.denoiser, spec, self.schedule, n, self.sizes, self.vocab, GenerateOptions(chunk_size, seed))
        return graphs

    def sample_constrained(
        self, spec: GuidanceSpec, fragment: MolecularGraph, total_n: int, n: int, seed: int = 0
    ) -> list[MolecularGraph]:
        with torch.no_grad():
            graphs, _ = constrained_generate(
                self.denoiser, spec, FragmentConstraint(fragment), self.schedule, n, total_n, self.vocab, GenerateOptions(seed=seed)
            )
        return graphs


def fractions(graphs: Sequence[MolecularGraph], properties: Sequence[str]) -> dict[str, float]:
    return {p: synthetic.fraction(p, graphs) for p in properties}


def guided_shift(models: DeskModels, n: int = 500, seed: int = 0, scale: float = 100.0, a: str = "n2", b: str = "halogen", c: str = "n_and_o") -> dict:
    """Property fractions under each guidance setup of the desk experiment.

    ``a`` is the guided property, ``b`` a nearly disjoint partner for dual
    guidance and ``c`` an overlapping off-target for selectivity.
    """
    setups = {
        "unconditional": [],
        "positive": [(a, 1)],
        "negative": [(a, 0)],
        "dual": [(a, 1, 0.5), (b, 1, 0.5)],
        "selective": [(a, 1), (c, 0)],
    }
    props = (a, b, c)
    out = {"n": n, "seed": seed, "scale": scale, "properties": {"a": a, "b": b, "c": c}, "runs": {}}
    for name, terms in setups.items():
        t0 = time.time()
        graphs = models.sample(models.spec(terms, scale), n, seed)
        fr = fractions(graphs, props)
        fr["validity"] = sum(map(valence_check, graphs)) / n
        fr["seconds"] = time.time() - t0
        out["runs"][name] = fr
        log.info("%s: %s", name, json.dumps(fr))
    return out
