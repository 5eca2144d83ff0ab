"""Build the bundled desk-scale corpus from a kekulized SMILES list.

Default source is the NCI open-database sample shipped with RDKit
(``rdkit/Data/NCI/first_5K.smi``, public domain). Molecules are kept when they
parse under the default vocabulary, pass the validity check, have at most
``--max-atoms`` heavy atoms, and are not duplicates.

    python scripts/build_corpus.py --src /path/to/first_5K.smi --out data/corpus.smi
"""
import argparse

from molguide.molgraph import canonical_key, read_smiles_file, valence_check


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--src", required=True)
    ap.add_argument("--out", default="data/corpus.smi")
    ap.add_argument("--max-atoms", type=int, default=13)
    ap.add_argument("--min-atoms", type=int, default=3)
    args = ap.parse_args()

    seen = set()
    kept = []
    for _, s, g in read_smiles_file(args.src):
        if isinstance(g, Exception) or not valence_check(g):
            continue
        if not args.min_atoms <= g.n <= args.max_atoms:
            continue
        key = canonical_key(g)
        if key in seen:
            continue
        seen.add(key)
        kept.append(s)
    with open(args.out, "w") as fh:
        fh.write("# Desk-scale corpus: kekulized molecules from the NCI open database sample\n")
        fh.write(f"# filter: default vocabulary, {args.min_atoms}-{args.max_atoms} heavy atoms, valid, deduplicated\n")
        for s in kept:
            fh.write(s + "\n")
    print(f"wrote {len(kept)} molecules to {args.out}")


if __name__ == "__main__":
    main()
