from pathlib import Path

import pytest
import torch

from molguide.molgraph import read_smiles_file

ROOT = Path(__file__).resolve().parents[1]
CORPUS = ROOT / "data" / "corpus.smi"

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def corpus_smiles():
    return [s for _, s, g in read_smiles_file(CORPUS) if not isinstance(g, Exception)]


@pytest.fixture(scope="session")
def corpus():
    return [g for _, _, g in read_smiles_file(CORPUS)]


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
