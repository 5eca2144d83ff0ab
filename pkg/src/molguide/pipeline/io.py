"""Dataset ingestion and guidance-spec loading for the command line."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from ..classifier import ActivityRecord, NonPositiveActivity
from ..guidance import GuidanceSpec, GuidanceTerm
from ..molgraph import SmilesError, Vocabulary, read_smiles_file, smiles_parse
from ..molgraph.core import VocabularyError
from . import checkpoint

DEFAULTS_PATH = Path(__file__).with_name("defaults.json")


class DataError(ValueError):
    """Bad input data; the CLI maps it to exit code 3."""


def load_defaults(path: str | Path | None = None) -> dict:
    base = json.loads(DEFAULTS_PATH.read_text())
    if path is None:
        return base
    return _merge(base, json.loads(Path(path).read_text()))


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def read_molecules(path: str | Path, vocab: Vocabulary | None = None, strict: bool = True):
    """Parse a SMILES file; in strict mode the first bad line raises DataError."""
    graphs = []
    for lineno, text, g in read_smiles_file(path, vocab):
        if isinstance(g, Exception):
            if strict:
                raise DataError(f"{path}:{lineno}: {type(g).__name__}: {g}")
            continue
        graphs.append(g)
    if not graphs:
        raise DataError(f"{path}: no molecules")
    return graphs


def read_activity_csv(path: str | Path, target_id: str | None = None, vocab: Vocabulary | None = None) -> list[ActivityRecord]:
    """Rows ``smiles,activity_nM,target_id``; row numbers in errors count the header as row 1."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"smiles", "activity_nM", "target_id"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            if target_id is not None and row["target_id"] != target_id:
                continue
            try:
                v = float(row["activity_nM"])
            except ValueError:
                raise DataError(f"{path}: row {row_no}: activity {row['activity_nM']!r} is not a number") from None
            if not (v > 0 and math.isfinite(v)):
                raise DataError(f"{path}: row {row_no}: nonpositive activity {row['activity_nM']}")
            try:
                g = smiles_parse(row["smiles"], vocab)
            except (SmilesError, VocabularyError) as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from None
            try:
                out.append(ActivityRecord(g, v, row["target_id"]))
            except NonPositiveActivity as exc:  # pragma: no cover - guarded above
                raise DataError(f"{path}: row {row_no}: {exc}") from None
    if not out:
        raise DataError(f"{path}: no rows for target {target_id!r}")
    return out


def load_guidance(path: str | Path | None, default_scale: float = 100.0) -> GuidanceSpec:
    """GuidanceSpec JSON; classifier paths resolve relative to the JSON file."""
    if path is None:
        return GuidanceSpec([], default_scale)
    path = Path(path)
    d = json.loads(path.read_text())
    terms = []
    for k, t in enumerate(d.get("terms", [])):
        cpath = Path(t["classifier"])
        if not cpath.is_absolute():
            cpath = path.parent / cpath
        ck = checkpoint.load(cpath)
        if ck.kind != "classifier":
            raise DataError(f"{cpath} is a {ck.kind} checkpoint, not a classifier")
        name = t.get("name") or ck.extra.get("target_id") or cpath.stem
        terms.append(
            GuidanceTerm(
                checkpoint.to_model(ck),
                target=int(t.get("target", 1)),
                weight=float(t.get("weight", 1.0)),
                name=name,
                schedule_digest=ck.schedule_digest,
                vocab_digest=ck.vocab.digest(),
            )
        )
    return GuidanceSpec(terms, float(d.get("scale", default_scale)))
