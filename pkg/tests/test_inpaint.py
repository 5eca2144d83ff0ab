import numpy as np
import pytest
import torch

from molguide.classifier import ClassifierConfig, GraphClassifier
from molguide.denoiser import DenoiserConfig, GraphDenoiser
from molguide.diffusion import build_schedule
from molguide.graphbatch import from_graphs
from molguide.guidance import GenerateOptions, GuidanceSpec, GuidanceTerm, generate, run_chain
from molguide.inpaint import (
    ConstraintTooLarge,
    FragmentConstraint,
    InvalidFragment,
    ReplacementClamp,
    constrained_generate,
    load_constraint,
)
from molguide.molgraph import MolecularGraph, Vocabulary, canonical_key, smiles_parse

V = Vocabulary.default()
TINY = DenoiserConfig(n_node=V.n_node, n_layers=1, n_heads=2, d_v=8, d_e=4, d_g=8, d_cond=4, d_ff=8, d_score=4)


def setup(seed=0):
    torch.manual_seed(seed)
    den = GraphDenoiser(TINY).double().eval()
    with torch.no_grad():
        for layer in den.layers:
            for g in layer.gates():
                g.weight.normal_(0, 0.3)
    rng = np.random.default_rng(0)
    s = build_schedule(15, "marginal", (rng.dirichlet(np.ones(V.n_node)), np.array([0.7, 0.2, 0.07, 0.03])))
    return den, s


def test_constraint_defaults_and_validation():
    frag = smiles_parse("C(=O)N")
    c = FragmentConstraint(frag)
    assert c.anchor_indices == (0, 1, 2)
    assert c.frozen_edges == {(0, 1), (0, 2), (1, 2)}
    with pytest.raises(ValueError):
        FragmentConstraint(frag, anchor_indices=(2, 1, 0))
    with pytest.raises(InvalidFragment):
        FragmentConstraint(MolecularGraph.from_bonds([("O", 0)] + [("C", 0)] * 3, [(0, 1, 1), (0, 2, 1), (0, 3, 1)]))
    # open valences are fine
    FragmentConstraint(smiles_parse("C=C"))


def test_matches():
    c = FragmentConstraint(smiles_parse("C=O"))
    assert c.matches(smiles_parse("C(=O)CN"))
    assert not c.matches(smiles_parse("CC=O"))
    assert not c.matches(smiles_parse("C"))


def test_clamp_exact_at_zero_and_noised_before():
    den, s = setup()
    frag = smiles_parse("C1=CC=C1")
    clamp = ReplacementClamp(FragmentConstraint(frag), s)
    state = from_graphs([smiles_parse("CCCCCC")] * 4, dtype=torch.float64)
    out = clamp(state, 0, torch.Generator().manual_seed(0))
    ref = from_graphs([frag], dtype=torch.float64)
    assert torch.equal(out.X[:, :4], ref.X[0, :4].expand(4, -1, -1))
    assert torch.equal(out.E[:, :4, :4], ref.E[0].expand(4, -1, -1, -1))
    # boundary and free pairs untouched
    assert torch.equal(out.E[:, 4:], state.E[:, 4:])
    assert torch.equal(out.E[:, :4, 4:], state.E[:, :4, 4:])
    noisy = clamp(state, s.T, torch.Generator().manual_seed(0))
    assert torch.equal(noisy.E, noisy.E.transpose(1, 2))
    assert torch.all(noisy.X.sum(-1) == 1)


def test_clamp_frequencies_follow_forward_marginal():
    _, s = setup()
    frag = smiles_parse("N")
    clamp = ReplacementClamp(FragmentConstraint(frag), s)
    state = from_graphs([smiles_parse("CC")] * 4000, dtype=torch.float64)
    out = clamp(state, 5, torch.Generator().manual_seed(1))
    freq = out.X[:, 0].mean(0).numpy()
    k = V.node_index("N", 0)
    want = s.alpha_bar[5] * np.eye(V.n_node)[k] + (1 - s.alpha_bar[5]) * s.prior_v
    assert np.max(np.abs(freq - want)) < 0.03


def test_every_sample_contains_fragment():
    den, s = setup()
    clf = GraphClassifier(ClassifierConfig(n_node=V.n_node, hidden=8, n_mp_layers=1)).double()
    spec = GuidanceSpec([GuidanceTerm(clf, 1)], scale=3.0)
    c = FragmentConstraint(smiles_parse("C(=O)N"))
    graphs, scores = constrained_generate(den, spec, c, s, 30, 7, V, GenerateOptions(chunk_size=16, seed=2))
    assert len(graphs) == 30 and len(scores) == 30
    assert all(g.n == 7 and c.matches(g) for g in graphs)


def test_whole_molecule_fragment_is_reproduced():
    den, s = setup()
    frag = smiles_parse("CC(=O)NC1=CC=CC=C1")
    graphs, _ = constrained_generate(den, GuidanceSpec(), FragmentConstraint(frag), s, 5, frag.n, V)
    assert all(canonical_key(g) == canonical_key(frag) and g == frag for g in graphs)


def test_empty_fragment_matches_generate():
    den, s = setup()
    sizes = [6] * 8
    a, _ = constrained_generate(den, GuidanceSpec(), FragmentConstraint.empty(), s, 8, 6, V, GenerateOptions(seed=4))
    b, _ = generate(den, GuidanceSpec(), s, 8, None, V, GenerateOptions(seed=4), sizes=sizes)
    assert a == b


def test_empty_fragment_step_distribution_identity():
    from molguide.guidance import guided_step_probs, prior_state

    den, s = setup()
    gen = torch.Generator().manual_seed(0)
    state = prior_state([6, 6, 6], s, gen)
    clamp = ReplacementClamp(FragmentConstraint.empty(), s)
    clamped = clamp(state, 7, torch.Generator().manual_seed(1))
    spec = GuidanceSpec([], 0.0)
    p1 = guided_step_probs(state, den, spec, 7, s)
    p2 = guided_step_probs(clamped, den, spec, 7, s)
    assert torch.max(torch.abs(p1[0] - p2[0])) < 1e-12 and torch.max(torch.abs(p1[1] - p2[1])) < 1e-12


def test_too_large():
    den, s = setup()
    with pytest.raises(ConstraintTooLarge):
        constrained_generate(den, GuidanceSpec(), FragmentConstraint(smiles_parse("CCCC")), s, 2, 3, V)
    with pytest.raises(ConstraintTooLarge):
        constrained_generate(den, GuidanceSpec(), FragmentConstraint(smiles_parse("CCCC")), s, 2, 40, V)


def test_load_constraint(tmp_path):
    frag = smiles_parse("C(=O)N")
    d = frag.to_json()
    d["total_n"] = 9
    p = tmp_path / "frag.json"
    import json

    p.write_text(json.dumps(d))
    c, n = load_constraint(p, V)
    assert n == 9 and c.fragment == frag
    del d["total_n"]
    p.write_text(json.dumps(d))
    with pytest.raises(ValueError):
        load_constraint(p, V)
