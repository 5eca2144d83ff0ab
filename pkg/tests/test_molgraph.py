import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molguide.molgraph import (
    BinMismatch,
    EmptyInput,
    InvalidGraph,
    MolecularGraph,
    NotNormalized,
    UnbalancedParenthesis,
    UnclosedRing,
    UnknownElement,
    UnsupportedToken,
    Vocabulary,
    WidthMismatch,
    bhattacharyya,
    canonical_key,
    fingerprint,
    generation_metrics,
    mann_whitney_u,
    pair_index,
    smiles_parse,
    smiles_write,
    tanimoto,
    valence_check,
)
from molguide.molgraph.fingerprint import _bit, path_labels

V = Vocabulary.default()


def bonds_of(g):
    return {(i, j): e for i, j, e in g.bonds()}


# --- vocabulary / graph ---------------------------------------------------


def test_vocabulary_is_bijective_and_whitelisted():
    cats = V.node_categories
    assert len(set(cats)) == len(cats)
    for k, (s, c) in enumerate(cats):
        assert V.node_index(s, c) == k
    assert not V.has("C", -1)
    assert V.edge_categories == ("none", "single", "double", "triple")


def test_vocabulary_json_roundtrip_and_digest():
    v2 = Vocabulary.from_json(V.to_json())
    assert v2 == V and v2.digest() == V.digest()
    other = Vocabulary.from_categories([("C", 0), ("N", 0), ("O", 0)])
    assert other.digest() != V.digest()


def test_pair_index_row_major():
    n = 5
    expect = {p: k for k, p in enumerate((i, j) for i in range(n) for j in range(i + 1, n))}
    for (i, j), k in expect.items():
        assert pair_index(i, j, n) == k == pair_index(j, i, n)


def test_graph_json_roundtrip():
    g = smiles_parse("C[N+](=O)[O-]")
    d = g.to_json()
    assert d["n"] == 4
    assert all(i < j for i, j, _ in d["edges"])
    assert MolecularGraph.from_json(d) == g


# --- SMILES ---------------------------------------------------------------


def test_parse_single_atom():
    g = smiles_parse("C")
    assert g.n == 1 and g.atoms() == [("C", 0)] and g.bonds() == []


def test_parse_kekule_benzene():
    g = smiles_parse("C1=CC=CC=C1")
    assert g.n == 6 and all(a == ("C", 0) for a in g.atoms())
    # hand trace: C0=C1, C1-C2, C2=C3, C3-C4, C4=C5, ring closure C5-C0 single
    assert bonds_of(g) == {(0, 1): 2, (1, 2): 1, (2, 3): 2, (3, 4): 1, (4, 5): 2, (0, 5): 1}
    assert sum(1 for e in g.edges if e == 0) == 15 - 6


def test_parse_bracket_charges():
    g = smiles_parse("C[N+](=O)[O-]")
    assert g.atoms() == [("C", 0), ("N", 1), ("O", 0), ("O", -1)]
    assert bonds_of(g) == {(0, 1): 1, (1, 2): 2, (1, 3): 1}


def test_parse_branches_and_triple():
    g = smiles_parse("CC(C#N)(O)Cl")
    assert g.atoms() == [("C", 0), ("C", 0), ("C", 0), ("N", 0), ("O", 0), ("Cl", 0)]
    assert bonds_of(g) == {(0, 1): 1, (1, 2): 1, (2, 3): 3, (1, 4): 1, (1, 5): 1}


def test_parse_ring_bond_order_on_either_side():
    a = smiles_parse("C=1CCC1")
    b = smiles_parse("C1CCC=1")
    assert bonds_of(a)[(0, 3)] == 2 and bonds_of(b)[(0, 3)] == 2


def test_parse_percent_ring_label():
    assert canonical_key(smiles_parse("C%12CC%12")) == canonical_key(smiles_parse("C1CC1"))


@pytest.mark.parametrize(
    "text, err",
    [
        ("c1ccccc1", UnsupportedToken),
        ("[13CH4]", UnsupportedToken),
        ("C[C@H](N)O", UnsupportedToken),
        ("C/C=C/C", UnsupportedToken),
        ("C1CC", UnclosedRing),
        ("CC(C", UnbalancedParenthesis),
        ("CC)C", UnbalancedParenthesis),
        ("[Si]", UnknownElement),
        ("[Na+]", UnknownElement),
        ("[C-]#N", UnknownElement),
        ("[N+2]", UnknownElement),
    ],
)
def test_parse_errors(text, err):
    with pytest.raises(err):
        smiles_parse(text)


def test_bracket_hydrogens_are_dropped():
    assert smiles_parse("[NH4+]").atoms() == [("N", 1)]
    assert smiles_parse("C[NH3+]").atoms() == [("C", 0), ("N", 1)]


def test_write_single_atom():
    assert smiles_write(smiles_parse("C")) == "C"


def test_write_benzene_roundtrip():
    g = smiles_parse("C1=CC=CC=C1")
    s = smiles_write(g)
    assert s.islower() is False and "c" not in s
    assert canonical_key(smiles_parse(s)) == canonical_key(g)


def test_write_is_deterministic_under_permutation():
    g = smiles_parse("OC1=C(Cl)C=C(C=C1[N+]([O-])=O)[N+]([O-])=O")
    rng = random.Random(3)
    outs = set()
    for _ in range(10):
        perm = list(range(g.n))
        rng.shuffle(perm)
        outs.add(smiles_write(g.permute(perm)))
    assert len(outs) == 1


def test_write_rejects_invalid():
    g = MolecularGraph.from_bonds([("C", 0), ("C", 0)], [])
    with pytest.raises(InvalidGraph):
        smiles_write(g)
    assert smiles_write(g, check=False) == "C.C"


def test_corpus_roundtrip(corpus):
    for g in corpus:
        assert canonical_key(smiles_parse(smiles_write(g))) == canonical_key(g)


def test_parse_agrees_with_rdkit_heavy_atom_graph(corpus_smiles):
    Chem = pytest.importorskip("rdkit.Chem")
    for s in corpus_smiles[:300]:
        m = Chem.MolFromSmiles(s, sanitize=False)
        g = smiles_parse(s)
        assert m.GetNumAtoms() == g.n
        assert [(a.GetSymbol(), a.GetFormalCharge()) for a in m.GetAtoms()] == g.atoms()
        rb = {
            (min(b.GetBeginAtomIdx(), b.GetEndAtomIdx()), max(b.GetBeginAtomIdx(), b.GetEndAtomIdx())): int(
                b.GetBondTypeAsDouble()
            )
            for b in m.GetBonds()
        }
        assert rb == bonds_of(g)


# --- validity -------------------------------------------------------------


def star(center, n_arms, arm=("C", 0)):
    return MolecularGraph.from_bonds([center] + [arm] * n_arms, [(0, k, 1) for k in range(1, n_arms + 1)])


def test_valence_examples():
    assert valence_check(star(("C", 0), 4))
    assert not valence_check(star(("C", 0), 5))
    assert valence_check(star(("N", 1), 4))
    assert not valence_check(star(("N", 0), 4))


def test_validity_requires_connectivity():
    assert not valence_check(smiles_parse("CC.O"))
    assert valence_check(smiles_parse("C"))


def test_hypervalent_sulfur_allowed():
    assert valence_check(smiles_parse("CS(=O)(=O)O"))


@given(st.randoms(use_true_random=False))
@settings(max_examples=50, deadline=None)
def test_valence_check_permutation_invariant(rnd):
    g = smiles_parse("CC(=O)NC1=CC=C(O)C=C1")
    bad = star(("C", 0), 5)
    for h in (g, bad):
        perm = list(range(h.n))
        rnd.shuffle(perm)
        assert valence_check(h.permute(perm)) == valence_check(h)


# --- canonical key --------------------------------------------------------


def test_canonical_key_permutation(corpus):
    rng = random.Random(0)
    for g in corpus[::20]:
        k = canonical_key(g)
        for _ in range(5):
            perm = list(range(g.n))
            rng.shuffle(perm)
            assert canonical_key(g.permute(perm)) == k


def test_canonical_key_distinguishes_bond_orders():
    assert canonical_key(smiles_parse("C1=CC=CC=C1")) != canonical_key(smiles_parse("C1CCCCC1"))


def test_canonical_key_highly_symmetric_graphs_are_fast():
    # a 12-arm star has 12! automorphisms; twin pruning keeps this instant
    g = star(("S", 0), 6, ("F", 0))
    assert canonical_key(g) == canonical_key(g.permute([3, 1, 0, 2, 6, 5, 4]))
    big = MolecularGraph.from_bonds([("C", 0)] * 13, [])
    assert canonical_key(big).startswith("C,C")


def test_canonical_key_distinguishes_non_isomorphic_regular_graphs():
    # two 6-cycles vs one 12-cycle: colour refinement alone cannot split these
    c12 = [(i, (i + 1) % 12, 1) for i in range(12)]
    two6 = [(i, (i + 1) % 6, 1) for i in range(6)] + [(6 + i, 6 + (i + 1) % 6, 1) for i in range(6)]
    a = MolecularGraph.from_bonds([("C", 0)] * 12, c12)
    b = MolecularGraph.from_bonds([("C", 0)] * 12, two6)
    assert canonical_key(a) != canonical_key(b)


# --- fingerprint / tanimoto -----------------------------------------------


def brute_force_paths(g, max_len):
    """Every node sequence of distinct, consecutively bonded atoms, by exhaustion."""
    adj = g.adjacency()
    out = set()
    for k in range(1, max_len + 2):
        for seq in itertools.permutations(range(g.n), k):
            if all(adj[a, b] for a, b in zip(seq, seq[1:])):
                lab = [g.nodes[seq[0]]]
                for a, b in zip(seq, seq[1:]):
                    lab += [int(adj[a, b]), g.nodes[b]]
                t = tuple(lab)
                out.add(min(t, t[::-1]))
    return out


@pytest.mark.parametrize("smi", ["C", "O", "CCO", "C1=CC=CC=C1", "CC(C)(C)N"])
def test_path_enumeration_matches_brute_force(smi):
    g = smiles_parse(smi)
    assert path_labels(g, 7) == brute_force_paths(g, 7)


def test_fingerprint_methane_vs_water_against_enumeration():
    m, w = smiles_parse("C"), smiles_parse("O")
    bits_m = {_bit(p, 2048) for p in brute_force_paths(m, 7)}
    bits_w = {_bit(p, 2048) for p in brute_force_paths(w, 7)}
    expect = len(bits_m & bits_w) / len(bits_m | bits_w)
    assert tanimoto(fingerprint(m), fingerprint(w)) == expect == 0.0


def test_fingerprint_identity_and_determinism(corpus):
    for g in corpus[:50]:
        a, b = fingerprint(g), fingerprint(g)
        assert np.array_equal(a, b)
        assert tanimoto(a, b) == 1.0


def test_fingerprint_rejects_narrow_width():
    with pytest.raises(ValueError):
        fingerprint(smiles_parse("C"), n_bits=32)


def test_tanimoto_definition():
    a = np.zeros(64, bool)
    b = np.zeros(64, bool)
    a[[0, 1, 2, 3, 4]] = True
    b[[3, 4, 5, 6, 7]] = True
    assert tanimoto(a, b) == 2 / 8 == 0.25
    c = np.zeros(64, bool)
    c[10] = True
    assert tanimoto(a, c) == 0.0
    assert tanimoto(np.zeros(64, bool), np.zeros(64, bool)) == 0.0
    with pytest.raises(WidthMismatch):
        tanimoto(a, np.zeros(128, bool))


@given(st.lists(st.booleans(), min_size=64, max_size=64), st.lists(st.booleans(), min_size=64, max_size=64))
def test_tanimoto_symmetric_bounded(x, y):
    a, b = np.array(x), np.array(y)
    assert tanimoto(a, b) == tanimoto(b, a)
    assert 0.0 <= tanimoto(a, b) <= 1.0
    if a.any():
        assert tanimoto(a, a) == 1.0


# --- generation metrics ---------------------------------------------------


def test_generation_metrics_all_good():
    gens = [smiles_parse(s) for s in ["CCO", "CCN", "CCC"]]
    m = generation_metrics(gens, set())
    assert m == {"validity": 1.0, "uniqueness": 1.0, "novelty": 1.0, "available_ratio": 1.0}


def test_generation_metrics_counting():
    valid = [smiles_parse(s) for s in ["CCO", "CCO", "CCN", "CCC", "CCCl"]]
    invalid = [star(("C", 0), 5)] * 3 + [smiles_parse("C.C")] * 2
    train = {canonical_key(smiles_parse("CCO")), canonical_key(smiles_parse("CCC"))}
    m = generation_metrics(valid + invalid, train)
    # counting oracle: 5/10 valid, 4 distinct of 5, 2 of the 4 novel
    assert m["validity"] == 0.5
    assert m["uniqueness"] == 0.8
    assert m["novelty"] == 0.5
    assert m["available_ratio"] == 2 / 10


def test_generation_metrics_empty():
    with pytest.raises(EmptyInput):
        generation_metrics([], set())


@given(st.lists(st.sampled_from(["CCO", "CCN", "C.C", "CC(C)(C)(C)C", "C1CC1", "O"]), min_size=1, max_size=15))
@settings(max_examples=40, deadline=None)
def test_generation_metrics_bounds(smis):
    gens = [smiles_parse(s) for s in smis]
    m = generation_metrics(gens, {canonical_key(smiles_parse("O"))})
    assert all(0.0 <= v <= 1.0 for v in m.values())
    assert m["available_ratio"] <= m["validity"]


# --- statistics -----------------------------------------------------------


def test_bhattacharyya_examples():
    p = np.array([0.5, 0.5])
    assert bhattacharyya(p, p) == pytest.approx(1.0)
    assert bhattacharyya([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert bhattacharyya([0.5, 0.5], [0.25, 0.75]) == pytest.approx(math.sqrt(0.125) + math.sqrt(0.375))
    assert bhattacharyya([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.96593, abs=1e-5)
    with pytest.raises(BinMismatch):
        bhattacharyya([1.0], [0.5, 0.5])
    with pytest.raises(NotNormalized):
        bhattacharyya([0.5, 0.6], [0.5, 0.5])


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=10), st.randoms(use_true_random=False))
def test_bhattacharyya_symmetric(w, rnd):
    p = np.array(w) / np.sum(w)
    q = np.array(rnd.sample(list(p), len(p)))
    assert bhattacharyya(p, q) == pytest.approx(bhattacharyya(q, p), abs=1e-12)
    assert bhattacharyya(p, p) == pytest.approx(1.0, abs=1e-12)


def brute_force_u_pvalue(a, b):
    """Exact permutation p-value by enumerating all assignments of pooled midranks."""
    pooled = np.concatenate([a, b])
    from scipy.stats import rankdata

    r = rankdata(pooled)
    na = len(a)
    u_obs = r[:na].sum() - na * (na + 1) / 2
    us = [r[list(c)].sum() - na * (na + 1) / 2 for c in itertools.combinations(range(len(pooled)), na)]
    us = np.array(us)
    lo = np.mean(us <= u_obs + 1e-9)
    hi = np.mean(us >= u_obs - 1e-9)
    return u_obs, min(1.0, 2 * min(lo, hi))


def test_mann_whitney_examples():
    assert mann_whitney_u([1, 2], [3, 4])["U"] == 0
    r = mann_whitney_u([1, 2, 3], [1, 2, 3])
    assert r["U"] == 4.5 and r["p_two_sided"] >= 0.99
    x = np.linspace(0, 1, 30)
    assert mann_whitney_u(x, x)["p_two_sided"] >= 0.99
    with pytest.raises(EmptyInput):
        mann_whitney_u([], [1.0])


@pytest.mark.parametrize("seed", range(6))
def test_mann_whitney_exact_against_enumeration(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 5, size=rng.integers(1, 6)).astype(float)
    b = rng.integers(0, 5, size=rng.integers(1, 8)).astype(float)
    u, p = brute_force_u_pvalue(a, b)
    r = mann_whitney_u(a, b)
    assert r["U"] == pytest.approx(u)
    assert r["p_two_sided"] == pytest.approx(p, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_mann_whitney_normal_matches_scipy(seed):
    from scipy.stats import mannwhitneyu

    rng = np.random.default_rng(seed)
    a = np.round(rng.normal(size=40), 1)
    b = np.round(rng.normal(0.3, size=55), 1)
    ref = mannwhitneyu(a, b, method="asymptotic", use_continuity=True)
    r = mann_whitney_u(a, b)
    assert r["U"] == pytest.approx(ref.statistic)
    assert r["p_two_sided"] == pytest.approx(ref.pvalue, rel=1e-9)
