from .core import (
    BOND_NAMES,
    MolecularGraph,
    Vocabulary,
    VocabularyError,
    n_pairs,
    pair_index,
    triu_pairs,
)
from .chem import canonical_key, canonical_order, is_connected, valence_check
from .smiles import (
    InvalidGraph,
    SmilesError,
    UnbalancedParenthesis,
    UnclosedRing,
    UnknownElement,
    UnsupportedToken,
    read_smiles_file,
    smiles_parse,
    smiles_write,
)
from .fingerprint import WidthMismatch, fingerprint, tanimoto
from .metrics import (
    BinMismatch,
    EmptyInput,
    NotNormalized,
    bhattacharyya,
    generation_metrics,
    histogram,
    mann_whitney_u,
)
