"""Per-molecule records and the aggregate run report."""
from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..molgraph import MolecularGraph, bhattacharyya, canonical_key, generation_metrics, histogram, mann_whitney_u, smiles_write, valence_check

SCHEMA_PATH = Path(__file__).with_name("report.schema.json")


def molecule_records(graphs: Sequence[MolecularGraph], scores: Sequence[dict]) -> list[dict]:
    out = []
    for k, (g, sc) in enumerate(zip(graphs, scores)):
        valid = valence_check(g)
        out.append(
            {
                "index": k,
                "smiles": smiles_write(g, check=False),
                "canonical_key": canonical_key(g),
                "valid": valid,
                "classifier_scores": {name: round(float(v), 8) for name, v in sc.items()},
            }
        )
    return out


def smiles_lines(records: Sequence[dict]) -> list[str]:
    """One line per molecule; invalid ones carry a leading '!' so SMILES consumers can skip them."""
    return [r["smiles"] if r["valid"] else "!" + r["smiles"] for r in records]


def write_jsonl(path: str | Path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _score_table(records: Sequence[dict]) -> dict[str, list[float]]:
    table: dict[str, list[float]] = {}
    for r in records:
        for name, v in r.get("classifier_scores", {}).items():
            table.setdefault(name, []).append(float(v))
    return table


def threshold_summary(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"ge_0.5": 0.0, "ge_0.8": 0.0, "lt_0.1": 0.0}
    return {"ge_0.5": float(np.mean(v >= 0.5)), "ge_0.8": float(np.mean(v >= 0.8)), "lt_0.1": float(np.mean(v < 0.1))}


def build_report(
    graphs: Sequence[MolecularGraph],
    training_keys,
    score_sets: dict[str, Sequence[dict]],
    bins: int = 20,
) -> dict:
    """Metrics for ``graphs`` plus histograms, thresholds and pairwise comparisons of the named score sets."""
    tables = {name: _score_table(recs) for name, recs in score_sets.items()}
    histograms, thresholds = {}, {}
    edges = np.linspace(0.0, 1.0, bins + 1).tolist()
    for name, table in tables.items():
        histograms[name] = {
            cid: {"edges": edges, "probs": histogram(v, bins).tolist(), "n": len(v)} for cid, v in table.items() if v
        }
        thresholds[name] = {cid: threshold_summary(v) for cid, v in table.items() if v}
    comparisons = []
    for a, b in itertools.combinations(tables, 2):
        for cid in sorted(set(tables[a]) & set(tables[b])):
            va, vb = tables[a][cid], tables[b][cid]
            if not va or not vb:
                continue
            bc = bhattacharyya(histogram(va, bins), histogram(vb, bins))
            comparisons.append(
                {
                    "a": a,
                    "b": b,
                    "classifier": cid,
                    "bhattacharyya": min(1.0, float(bc)),
                    "mann_whitney": mann_whitney_u(va, vb),
                }
            )
    return {
        "n_generated": len(graphs),
        "metrics": generation_metrics(graphs, training_keys),
        "histograms": histograms,
        "thresholds": thresholds,
        "comparisons": comparisons,
    }


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, json.loads(SCHEMA_PATH.read_text()))
