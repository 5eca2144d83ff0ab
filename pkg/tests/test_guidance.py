import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from molguide.classifier import ClassifierConfig, GraphClassifier
from molguide.denoiser import DenoiserConfig, GraphDenoiser
from molguide.diffusion import GraphDistribution, build_schedule, reverse_step, sample_prior
from molguide.graphbatch import from_distributions, from_graphs, to_graphs
from molguide.guidance import (
    DigestMismatch,
    GenerateOptions,
    GuidanceSpec,
    GuidanceTerm,
    SizeSampler,
    batch_guidance_gradient,
    check_digests,
    combined_gradient,
    generate,
    guidance_gradient,
    guided_reverse_step,
    guided_step_probs,
    tilt_distribution,
)
from molguide.molgraph import Vocabulary, smiles_parse

V = Vocabulary.default()
KV, KE = V.n_node, 4
TINY = DenoiserConfig(n_node=KV, n_layers=1, n_heads=2, d_v=8, d_e=4, d_g=8, d_cond=4, d_ff=8, d_score=4)


class LinearClassifier(torch.nn.Module):
    """z = <wX, X> + <wE, E> + b summed over real nodes / pairs."""

    def __init__(self, wX, wE, b=0.0):
        super().__init__()
        self.cfg = ClassifierConfig(n_node=KV)
        self.wX = torch.nn.Parameter(torch.as_tensor(wX, dtype=torch.float64))
        self.wE = torch.nn.Parameter(torch.as_tensor(wE, dtype=torch.float64))
        self.b = torch.nn.Parameter(torch.tensor(float(b), dtype=torch.float64))

    def forward(self, X, E, mask, level):
        N = X.shape[1]
        pm = (mask[:, :, None] & mask[:, None, :]) & ~torch.eye(N, dtype=torch.bool)
        zx = (X * self.wX * mask[..., None]).sum((1, 2))
        ze = (E * self.wE * pm[..., None]).sum((1, 2, 3)) / 2
        return zx + ze + self.b


class FixedDenoiser(torch.nn.Module):
    """Returns the same clean-graph logits whatever the input."""

    def __init__(self, node_logits, edge_logits=None):
        super().__init__()
        self.cfg = DenoiserConfig(n_node=KV)
        self.nl = torch.nn.Parameter(torch.as_tensor(node_logits, dtype=torch.float64))
        self.el = torch.nn.Parameter(torch.as_tensor(edge_logits if edge_logits is not None else np.zeros(KE), dtype=torch.float64))

    def forward(self, batch, lv, le):
        B, N, _ = batch.X.shape
        return self.nl.expand(B, N, KV).clone(), self.el.expand(B, N, N, KE).clone()


def sched(T=20):
    rng = np.random.default_rng(0)
    return build_schedule(T, "marginal", (rng.dirichlet(np.ones(KV)), np.array([0.7, 0.2, 0.07, 0.03])))


def tiny_denoiser(seed=0):
    torch.manual_seed(seed)
    m = GraphDenoiser(TINY).double()
    with torch.no_grad():
        for layer in m.layers:
            for g in layer.gates():
                g.weight.normal_(0, 0.3)
    return m.eval()


def tiny_classifier(seed=0):
    torch.manual_seed(seed)
    return GraphClassifier(ClassifierConfig(n_node=KV, hidden=8, n_mp_layers=2)).double()


def onehot_batch(n=5, B=3, seed=0):
    rng = np.random.default_rng(seed)
    s = sched()
    return from_distributions([sample_prior(n, s, rng) for _ in range(B)])


# --- tilt -----------------------------------------------------------------


def test_tilt_normalized_nonnegative():
    rng = np.random.default_rng(0)
    base = torch.as_tensor(rng.dirichlet(np.ones(6), 20))
    g = torch.as_tensor(rng.normal(size=(20, 6)))
    for scale in (0.0, 1.0, 100.0, 1e4):
        p = tilt_distribution(base, g, scale)
        assert torch.all(p >= 0)
        assert torch.max(torch.abs(p.sum(-1) - 1)) < 1e-9


def test_tilt_closed_form():
    base = torch.tensor([0.2, 0.3, 0.5], dtype=torch.float64)
    g = torch.tensor([1.0, -1.0, 0.0], dtype=torch.float64)
    w = np.array([0.2 * np.e ** 2, 0.3 * np.e ** -2, 0.5])
    assert np.allclose(tilt_distribution(base, g, 2.0).numpy(), w / w.sum(), atol=1e-15)


@given(
    st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
    st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    st.floats(0, 50),
    st.floats(0, 50),
)
def test_tilt_argmax_monotone(b, g, s1, s2):
    base = torch.tensor(b, dtype=torch.float64)
    base = base / base.sum()
    grad = torch.tensor(g, dtype=torch.float64)
    k = int(torch.argmax(grad))
    lo, hi = sorted((s1, s2))
    assert tilt_distribution(base, grad, hi)[k] >= tilt_distribution(base, grad, lo)[k] - 1e-12


# --- gradients ------------------------------------------------------------


def test_guidance_gradient_matches_finite_differences():
    clf = tiny_classifier()
    s = sched()
    rng = np.random.default_rng(1)
    g = GraphDistribution(rng.dirichlet(np.ones(KV), 4), rng.dirichlet(np.ones(KE), 6))
    term = GuidanceTerm(clf, target=1)
    grad = guidance_gradient(term, g, 3, s)

    def logp(dist):
        b = from_distributions([dist])
        z = clf(b.X, b.E, b.mask, torch.tensor([s.alpha_bar[3]], dtype=torch.float64))
        return torch.nn.functional.logsigmoid(z).item()

    h = 1e-6
    for arr_name, idx in (("node_probs", (1, 2)), ("node_probs", (3, 0)), ("edge_probs", (2, 1)), ("edge_probs", (5, 3))):
        up = GraphDistribution(g.node_probs.copy(), g.edge_probs.copy())
        dn = GraphDistribution(g.node_probs.copy(), g.edge_probs.copy())
        getattr(up, arr_name)[idx] += h
        getattr(dn, arr_name)[idx] -= h
        fd = (logp(up) - logp(dn)) / (2 * h)
        an = getattr(grad, arr_name)[idx]
        assert abs(an - fd) <= 1e-6 * max(1.0, abs(fd)), (arr_name, idx, an, fd)


def test_negative_target_gradient_is_log_one_minus_sigma():
    clf = tiny_classifier(2)
    s = sched()
    b = onehot_batch()
    gp = batch_guidance_gradient(GuidanceTerm(clf, 1), b, 4, s)
    gn = batch_guidance_gradient(GuidanceTerm(clf, 0), b, 4, s)
    # d log s(z) = (1 - s) dz and d log(1 - s(z)) = -s dz, so gp - gn = dz
    X = b.X.clone().requires_grad_(True)
    z = clf(X, b.E, b.mask, torch.full((3,), s.alpha_bar[4], dtype=torch.float64))
    (dz,) = torch.autograd.grad(z.sum(), X)
    assert torch.allclose(gp[0] - gn[0], dz * b.mask[..., None], atol=1e-12)


def test_weight_additivity():
    clf = tiny_classifier(3)
    s = sched()
    b = onehot_batch()
    two = GuidanceSpec([GuidanceTerm(clf, 1, 0.7), GuidanceTerm(clf, 1, 1.8)], scale=5.0)
    one = GuidanceSpec([GuidanceTerm(clf, 1, 2.5)], scale=5.0)
    for a, c in zip(combined_gradient(two, b, 3, s), combined_gradient(one, b, 3, s)):
        assert torch.max(torch.abs(a - c)) < 1e-10
    den = tiny_denoiser()
    for a, c in zip(guided_step_probs(b, den, two, 3, s), guided_step_probs(b, den, one, 3, s)):
        assert torch.max(torch.abs(a - c)) < 1e-10


# --- guided step identities -----------------------------------------------


@pytest.mark.parametrize("t", [1, 2, 10, 20])
def test_zero_scale_identity(t):
    den = tiny_denoiser()
    s = sched()
    b = onehot_batch(seed=t)
    spec = GuidanceSpec([GuidanceTerm(tiny_classifier(), 1)], scale=0.0)
    pX, pE = guided_step_probs(b, den, spec, t, s)
    uX, uE = guided_step_probs(b, den, GuidanceSpec(), t, s)
    # reference: the single-graph unconditional reverse mixture
    from molguide.denoiser import denoiser_forward
    from molguide.graphbatch import to_distributions

    for k, gt in enumerate(to_distributions(b)):
        out = denoiser_forward(den, gt, t, s)
        x0 = GraphDistribution(torch.softmax(out["node_logits"], -1).detach().numpy(), torch.softmax(out["edge_logits"], -1).detach().numpy())
        ref = reverse_step(gt, x0, t, s)
        n = gt.n
        iu, ju = np.triu_indices(n, 1)
        assert np.max(np.abs(pX[k, :n].numpy() - ref.node_probs)) < 1e-12
        assert np.max(np.abs(pE[k, iu, ju].numpy() - ref.edge_probs)) < 1e-12
    assert torch.max(torch.abs(pX - uX)) < 1e-12 and torch.max(torch.abs(pE - uE)) < 1e-12


def test_constant_classifier_paths_coincide():
    s = sched()
    b = onehot_batch()
    const = LinearClassifier(np.zeros(KV), np.zeros(KE), b=0.4)
    spec = GuidanceSpec([GuidanceTerm(const, 1)], scale=100.0)
    den = tiny_denoiser()
    u = guided_step_probs(b, den, GuidanceSpec(), 5, s)
    for paths in (("A",), ("B",), ("A", "B")):
        g = guided_step_probs(b, den, spec, 5, s, paths)
        assert torch.max(torch.abs(g[0] - u[0])) < 1e-12 and torch.max(torch.abs(g[1] - u[1])) < 1e-12


def reverse_1feature(xt, p0, t, s):
    """Reverse mixture for one node feature, summed explicitly over x0."""
    K = len(p0)
    Qt = s.alpha[t] * np.eye(K) + (1 - s.alpha[t]) * np.outer(s.prior_v, np.ones(K))
    qb = lambda u: s.alpha_bar[u] * np.eye(K) + (1 - s.alpha_bar[u]) * np.outer(s.prior_v, np.ones(K))
    if t == 1:
        return p0.copy()
    out = np.zeros(K)
    for x0 in range(K):
        post = Qt[xt, :] * qb(t - 1)[:, x0]
        out += p0[x0] * post / post.sum()
    return out


@pytest.mark.parametrize("t", [2, 7, 20])
def test_one_feature_linear_classifier_closed_form(t):
    s = sched()
    rng = np.random.default_rng(t)
    w = rng.normal(size=KV) * 0.5
    bias = 0.3
    logits = rng.normal(size=KV)
    den = FixedDenoiser(logits)
    scale = 3.0
    spec = GuidanceSpec([GuidanceTerm(LinearClassifier(w, np.zeros(KE), bias), 1)], scale=scale)
    xt_cat = V.node_index("O", 0)
    xt = from_graphs([smiles_parse("O")], dtype=torch.float64)

    p0 = np.exp(logits - logits.max())
    p0 /= p0.sum()
    base = reverse_1feature(xt_cat, p0, t, s)
    sig = lambda z: 1 / (1 + np.exp(-z))
    gA = (1 - sig(w @ base + bias)) * w
    pA = base * np.exp(scale * gA)
    pA /= pA.sum()
    gB = (1 - sig(w @ p0 + bias)) * w
    p0t = p0 * np.exp(scale * gB)
    p0t /= p0t.sum()
    pB = reverse_1feature(xt_cat, p0t, t, s)
    both = np.sqrt(pA * pB)
    both /= both.sum()
    for paths, want in ((("A",), pA), (("B",), pB), (("A", "B"), both)):
        got = guided_step_probs(xt, den, spec, t, s, paths)[0][0, 0].numpy()
        assert np.max(np.abs(got - want)) < 1e-10, paths


def test_guided_reverse_step_final_is_argmax():
    den = tiny_denoiser()
    s = sched()
    gt = sample_prior(4, s, np.random.default_rng(0))
    out = guided_reverse_step(gt, den, GuidanceSpec(), 1, s, torch.Generator().manual_seed(0))
    from molguide.denoiser import denoiser_forward

    ref = denoiser_forward(den, gt, 1, s)
    assert np.array_equal(out.node_probs.argmax(-1), ref["node_logits"].argmax(-1).numpy())
    assert np.all(out.node_probs.max(-1) == 1.0)


# --- digests and generation -----------------------------------------------


def test_digest_mismatch_raises():
    s = sched()
    term = GuidanceTerm(tiny_classifier(), 1, schedule_digest="0" * 16)
    with pytest.raises(DigestMismatch):
        check_digests(GuidanceSpec([term]), s)
    term = GuidanceTerm(tiny_classifier(), 1, schedule_digest=s.digest(), vocab_digest="x")
    with pytest.raises(DigestMismatch):
        check_digests(GuidanceSpec([term]), s, V)
    check_digests(GuidanceSpec([GuidanceTerm(tiny_classifier(), 1, schedule_digest=s.digest(), vocab_digest=V.digest())]), s, V)


def test_term_validation():
    with pytest.raises(ValueError):
        GuidanceTerm(tiny_classifier(), 2)
    with pytest.raises(ValueError):
        GuidanceTerm(tiny_classifier(), 1, weight=0.0)
    with pytest.raises(ValueError):
        GuidanceSpec(scale=-1)


def test_size_sampler_frequencies_and_json():
    sizes = [3] * 10 + [5] * 30
    ss = SizeSampler(sizes)
    draws = ss(np.random.default_rng(0), 4000)
    assert set(draws) == {3, 5}
    assert abs(np.mean(draws == 5) - 0.75) < 0.03
    back = SizeSampler.from_json(ss.to_json())
    assert np.array_equal(back(np.random.default_rng(1), 50), ss(np.random.default_rng(1), 50))


def test_generate_deterministic_counts_and_scores():
    den = tiny_denoiser()
    s = sched()
    clf = tiny_classifier()
    spec = GuidanceSpec([GuidanceTerm(clf, 1, name="a"), GuidanceTerm(clf, 0, name="b")], scale=2.0)
    ss = SizeSampler([3, 4, 6])
    a, sa = generate(den, spec, s, 7, ss, V, GenerateOptions(chunk_size=3, seed=5))
    b, sb = generate(den, spec, s, 7, ss, V, GenerateOptions(chunk_size=3, seed=5))
    assert a == b and sa == sb
    assert len(a) == 7 and all(set(r) == {"a", "b"} for r in sa)
    assert all(0.0 <= v <= 1.0 for r in sa for v in r.values())
    c, _ = generate(den, spec, s, 7, ss, V, GenerateOptions(chunk_size=3, seed=6))
    assert c != a
    assert generate(den, spec, s, 0, ss, V) == ([], [])
