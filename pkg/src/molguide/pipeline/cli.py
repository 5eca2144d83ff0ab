"""Command line: ``python -m molguide <subcommand> ...``.

Exit codes: 0 ok, 2 bad arguments, 3 data error, 4 training diverged,
5 digest mismatch between cooperating artifacts.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from ..classifier import (
    ActivityRecord,
    ClassifierConfig,
    ClassifierTrainOptions,
    DegenerateLabels,
    negative_sample,
    train_classifier,
)
from ..denoiser import DenoiserConfig, TrainOptions, train_denoiser
from ..diffusion import build_schedule, dataset_marginals
from ..graphbatch import from_graphs
from ..guidance import DigestMismatch, GenerateOptions, SizeSampler, check_digests, generate
from ..inpaint import ConstraintTooLarge, InvalidFragment, constrained_generate, load_constraint
from ..molgraph import Vocabulary, canonical_key, read_smiles_file, smiles_parse
from ..molgraph.smiles import write_smiles_file
from ..molgraph.metrics import EmptyInput
from . import checkpoint, report, synthetic
from .io import DataError, load_defaults, load_guidance, read_activity_csv, read_molecules

log = logging.getLogger("molguide")

EXIT_ARGS, EXIT_DATA, EXIT_NAN, EXIT_DIGEST = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _deterministic():
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


# --- subcommands ------------------------------------------------------------


def cmd_train_denoiser(a, d):
    vocab = Vocabulary.default()
    graphs = read_molecules(a.data, vocab)
    sd = d["schedule"]
    schedule = build_schedule(a.T or sd["T"], a.transition or sd["kind"], dataset_marginals(graphs), n_node=vocab.n_node)
    model_kw = dict(d["denoiser"]["model"])
    if a.config:
        model_kw.update(json.loads(Path(a.config).read_text()))
    cfg = DenoiserConfig(n_node=vocab.n_node, n_max=max(max(g.n for g in graphs), 1), **model_kw)
    tr = dict(d["denoiser"]["train"])
    for key in ("epochs", "lr", "batch_size"):
        if getattr(a, key) is not None:
            tr[key] = getattr(a, key)
    opts = TrainOptions(seed=a.seed, max_minutes=a.max_minutes, **tr)
    try:
        res = train_denoiser(graphs, cfg, schedule, opts)
    except FloatingPointError as exc:
        raise CliError(EXIT_NAN, f"training diverged: {exc}") from None
    sizes = SizeSampler([g.n for g in graphs])
    ck = checkpoint.from_model(
        res.model, "denoiser", vocab, schedule, a.seed, {"size_distribution": sizes.to_json(), "epochs": len(res.losses)}
    )
    checkpoint.save(ck, a.out)
    with open(Path(str(a.out) + ".loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for k, v in enumerate(res.losses):
            w.writerow([k, repr(v)])
    print(f"wrote {a.out} ({len(res.losses)} epochs, final loss {res.losses[-1]:.4f})")


def cmd_train_classifier(a, d):
    den = checkpoint.load(a.schedule_from)
    vocab, schedule = den.vocab, den.noise_schedule
    records = read_activity_csv(a.data, a.target_id, vocab)
    cd = d["classifier"]
    if a.negatives_pool:
        actives = [r.molecule for r in records if r.label >= 0.5]
        taken = {canonical_key(r.molecule) for r in records}
        pool = [g for g in read_molecules(a.negatives_pool, vocab, strict=False) if canonical_key(g) not in taken]
        thr = a.sim_threshold if a.sim_threshold is not None else cd["sim_threshold"]
        ratio = a.neg_ratio if a.neg_ratio is not None else cd["neg_ratio"]
        negs, short = negative_sample(actives, pool, thr, ratio, np.random.default_rng(a.seed))
        records = [r for r in records if r.label >= 0.5] + [ActivityRecord(g, None, a.target_id) for g in negs]
        print(f"negative sampling: {len(negs)} negatives for {len(actives)} actives" + (" (pool short)" if short else ""))
    model_kw = dict(cd["model"])
    if a.hidden:
        model_kw["hidden"] = a.hidden
    tr = dict(cd["train"])
    for key, attr in (("max_epochs", "epochs"), ("patience", "patience"), ("lr", "lr")):
        if getattr(a, attr) is not None:
            tr[key] = getattr(a, attr)
    try:
        res = train_classifier(records, ClassifierConfig(n_node=vocab.n_node, **model_kw), schedule, ClassifierTrainOptions(seed=a.seed, **tr))
    except DegenerateLabels as exc:
        raise CliError(EXIT_DATA, f"degenerate labels: {exc}") from None
    extra = {"target_id": a.target_id, "test_auc": res.test_auc, "best_epoch": res.best_epoch}
    checkpoint.save(checkpoint.from_model(res.model, "classifier", vocab, schedule, a.seed, extra), a.out)
    with open(Path(str(a.out) + ".auc.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_auc"])
        for k, (l, v) in enumerate(zip(res.train_losses, res.val_auc)):
            w.writerow([k, repr(l), repr(v)])
    print(f"test AUC {res.test_auc:.4f}")


def cmd_generate(a, d):
    den = checkpoint.load(a.denoiser)
    if den.kind != "denoiser":
        raise CliError(EXIT_ARGS, f"{a.denoiser} is not a denoiser checkpoint")
    vocab, schedule = den.vocab, den.noise_schedule
    spec = load_guidance(a.guidance, d["guidance"]["scale"])
    if a.scale is not None:
        spec.scale = a.scale
    try:
        check_digests(spec, schedule, vocab)
    except DigestMismatch as exc:
        raise CliError(EXIT_DIGEST, str(exc)) from None
    model = checkpoint.to_model(den)
    opts = GenerateOptions(chunk_size=a.chunk_size or d["generate"]["chunk_size"], seed=a.seed)
    with torch.no_grad():
        if a.fragment:
            constraint, total_n = load_constraint(a.fragment, vocab)
            graphs, scores = constrained_generate(model, spec, constraint, schedule, a.n, total_n, vocab, opts)
        else:
            sizes = SizeSampler.from_json(den.extra["size_distribution"])
            graphs, scores = generate(model, spec, schedule, a.n, sizes, vocab, opts)
    recs = report.molecule_records(graphs, scores)
    write_smiles_file(a.out, report.smiles_lines(recs))
    report.write_jsonl(a.records or Path(str(a.out) + ".jsonl"), recs)
    n_valid = sum(r["valid"] for r in recs)
    print(f"wrote {len(recs)} molecules ({n_valid} valid) to {a.out}")


def _load_records(path: str) -> list[dict]:
    p = Path(path)
    if p.suffix == ".jsonl":
        return report.read_jsonl(p)
    recs = []
    for k, line in enumerate(p.read_text().splitlines()):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        recs.append({"index": k, "smiles": s.lstrip("!"), "valid": not s.startswith("!"), "classifier_scores": {}})
    return recs


def cmd_evaluate(a, d):
    vocab = Vocabulary.default()
    recs = _load_records(a.generated)
    if not recs:
        raise CliError(EXIT_DATA, f"{a.generated}: no generated molecules")
    graphs = []
    for r in recs:
        try:
            graphs.append(smiles_parse(r["smiles"], vocab))
        except Exception as exc:
            raise CliError(EXIT_DATA, f"{a.generated}: record {r.get('index')}: {exc}") from None
    train_keys = {canonical_key(g) for g in read_molecules(a.train_keys, vocab, strict=False)}
    sets = {"generated": recs}
    for item in a.score_sets or []:
        name, _, path = item.partition("=")
        if not path:
            raise CliError(EXIT_ARGS, f"--score-sets expects NAME=PATH, got {item!r}")
        sets[name] = _load_records(path)
        if not sets[name]:
            raise CliError(EXIT_DATA, f"{path}: empty score set")
    rep = report.build_report(graphs, train_keys, sets, bins=a.bins or d["report"]["bins"])
    report.validate_report(rep)
    text = json.dumps(rep, indent=2, sort_keys=True)
    if a.out:
        Path(a.out).write_text(text + "\n")
    print(text)


def cmd_scorecheck(a, d):
    ck = checkpoint.load(a.classifier)
    if ck.kind != "classifier":
        raise CliError(EXIT_ARGS, f"{a.classifier} is not a classifier checkpoint")
    model, vocab, schedule = checkpoint.to_model(ck), ck.vocab, ck.noise_schedule
    rows, good = [], []
    for lineno, text, g in read_smiles_file(a.inp, vocab):
        if isinstance(g, Exception):
            rows.append([lineno, text, "", f"{type(g).__name__}: {g}"])
        else:
            rows.append([lineno, text, None, ""])
            good.append((len(rows) - 1, g))
    if good:
        from ..classifier import batch_logit

        with torch.no_grad():
            z = batch_logit(model, from_graphs([g for _, g in good]), 0, schedule)
        for (k, _), s in zip(good, torch.sigmoid(z).tolist()):
            rows[k][2] = f"{s:.6f}"
    out = open(a.out, "w", newline="") if a.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["line", "smiles", "score", "error"])
        w.writerows(rows)
    finally:
        if a.out:
            out.close()
    n_err = sum(1 for r in rows if r[3])
    if n_err:
        print(f"warning: {n_err} line(s) could not be parsed", file=sys.stderr)


def cmd_synth_activity(a, d):
    graphs = read_molecules(a.data, Vocabulary.default())
    n = synthetic.write_activity_csv(graphs, a.property, a.out, a.target_id)
    frac = np.mean([synthetic.satisfies(a.property, g) for g in graphs])
    print(f"wrote {n} rows to {a.out} ({frac:.3f} active)")


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="molguide", description="Guided discrete diffusion for molecular graphs.")
    p.add_argument("--defaults", help="JSON overriding the shipped defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-denoiser", help="train the graph denoiser")
    s.add_argument("--data", required=True, help="SMILES file")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--config", help="JSON with DenoiserConfig overrides")
    s.add_argument("--T", type=int)
    s.add_argument("--transition", choices=["marginal", "uniform"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--max-minutes", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_denoiser)

    s = sub.add_parser("train-classifier", help="train a noisy-graph activity classifier")
    s.add_argument("--data", required=True, help="activity CSV: smiles,activity_nM,target_id")
    s.add_argument("--target-id", required=True)
    s.add_argument("--schedule-from", required=True, help="denoiser checkpoint whose schedule and vocabulary to use")
    s.add_argument("--out", required=True)
    s.add_argument("--negatives-pool", help="SMILES file of candidate negatives")
    s.add_argument("--sim-threshold", type=float, help="max Tanimoto to any active (default 0.6)")
    s.add_argument("--neg-ratio", type=int, help="negatives per active (default 10)")
    s.add_argument("--epochs", type=int, help="maximum epochs")
    s.add_argument("--patience", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--hidden", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("generate", help="sample molecules, optionally guided and fragment-constrained")
    s.add_argument("--denoiser", required=True)
    s.add_argument("--guidance", help="GuidanceSpec JSON (may have no terms)")
    s.add_argument("--fragment", help="Graph JSON with total_n")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=float, help="override the guidance scale")
    s.add_argument("--chunk-size", type=int)
    s.add_argument("--out", required=True, help="SMILES output; records go to OUT.jsonl unless --records")
    s.add_argument("--records")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="metrics, score histograms and comparisons")
    s.add_argument("--generated", required=True, help="JSONL records or SMILES file")
    s.add_argument("--train-keys", required=True, help="training SMILES file")
    s.add_argument("--score-sets", nargs="*", metavar="NAME=PATH")
    s.add_argument("--bins", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("scorecheck", help="score SMILES with a classifier at t=0")
    s.add_argument("--classifier", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_scorecheck)

    s = sub.add_parser("synth-activity", help="label a SMILES file with a synthetic property")
    s.add_argument("--data", required=True)
    s.add_argument("--property", required=True, choices=sorted(synthetic.PROPERTIES))
    s.add_argument("--target-id")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_activity)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    _deterministic()
    if getattr(a, "n", 1) is not None and getattr(a, "n", 1) < 0:
        parser.print_usage(sys.stderr)
        print("error: --n must be >= 0", file=sys.stderr)
        return EXIT_ARGS
    try:
        defaults = load_defaults(a.defaults)
        a.func(a, defaults)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, EmptyInput, InvalidFragment, ConstraintTooLarge, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DigestMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIGEST
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    return 0


if __name__ == "__main__":
    sys.exit(main())
