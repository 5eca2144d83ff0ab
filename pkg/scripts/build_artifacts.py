"""Train the desk denoiser and one classifier per synthetic property into ``artifacts/``.

Goes through the ``molguide`` CLI, so the checkpoints are exactly what
``python3 -m molguide train-denoiser`` / ``train-classifier`` would write.
Existing checkpoints are reused unless ``--force`` is given.

    python3 scripts/build_artifacts.py --epochs 500
"""
import argparse
import logging

from molguide.pipeline import desk


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(desk.ARTIFACTS))
    ap.add_argument("--corpus", default=str(desk.CORPUS))
    ap.add_argument("--epochs", type=int, help="denoiser epochs (default from defaults.json)")
    ap.add_argument("--properties", nargs="+", default=list(desk.DESK_PROPERTIES))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--force", action="store_true")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    desk.build_artifacts(a.out, a.corpus, a.properties, a.epochs, a.seed, a.force)


if __name__ == "__main__":
    main()
