import mpmath
import numpy as np
import pytest

from globalastar.global_model import (
    ComputationGraph,
    ModelConfigError,
    ModelDims,
    ParameterStore,
    dropout_mask,
    log_sigmoid,
    score_global,
)
from globalastar.hypergraph import from_bracket, to_bracket
from globalastar.local_model import SupertagTable
from globalastar.oracle import StraightLineScorer, enumerate_parses
from globalastar.synthetic import FIGURE1_GOLD, FIGURE1_SENTENCE, ToyGrammar, figure1_lexicon

from conftest import SMALL, random_small_params


def fig1_params(seed=0, dims=SMALL):
    lex = figure1_lexicon()
    return random_small_params(FIGURE1_SENTENCE, lex.categories(), seed=seed, dims=dims)


def encode_tree(graph, tree):
    for n in tree.nodes():
        graph.score(n)


def test_zero_parameters_score_log_half():
    lex = figure1_lexicon()
    p = ParameterStore.initialize(FIGURE1_SENTENCE, lex.categories(), SMALL)
    for t in p.tensors.values():
        t[...] = 0.0
    graph = ComputationGraph(p, FIGURE1_SENTENCE)
    for n in from_bracket(FIGURE1_GOLD).nodes():
        assert graph.score(n) == pytest.approx(np.log(0.5), abs=1e-15)


def test_score_examples():
    assert score_global(np.zeros(3), np.ones(3)) == pytest.approx(np.log(0.5))
    assert score_global(np.array([1.0]), np.array([-1000.0])) == pytest.approx(-1000.0)
    assert -1e-300 <= score_global(np.array([1.0]), np.array([1000.0])) <= 0.0


def test_non_positivity_against_high_precision():
    rng = np.random.default_rng(0)
    mpmath.mp.dps = 50
    for _ in range(10_000):
        z = float(rng.uniform(-1e3, 1e3)) * (10.0 ** -rng.integers(0, 4))
        with np.errstate(over="raise", invalid="raise"):
            s = score_global(np.array([1.0]), np.array([z]))
        assert s <= 0.0
        ref = -mpmath.log1p(mpmath.exp(-mpmath.mpf(z)))
        assert abs(s - float(ref)) <= 1e-10 * max(1.0, abs(float(ref)))


def test_oracle_matches_incremental_scores():
    toy = ToyGrammar(seed=1)
    for seed, s in enumerate(toy.sentences(30, 1, 6)):
        p = random_small_params(toy.lexicon.entries, toy.lexicon.categories(), seed=seed)
        table = SupertagTable.from_lexicon(toy.lexicon, s.words)
        graph = ComputationGraph(p, s.words)
        oracle = StraightLineScorer(p, s.words)
        for tree, _ in enumerate_parses(table)[:5]:
            for n in tree.nodes():
                assert graph.score(n) == pytest.approx(oracle.node_score(n), abs=1e-12)


def test_incremental_and_one_pass_encoding_agree():
    p = fig1_params()
    a = ComputationGraph(p, FIGURE1_SENTENCE)
    b = ComputationGraph(p, FIGURE1_SENTENCE)
    t1 = from_bracket(FIGURE1_GOLD)
    t2 = from_bracket(FIGURE1_GOLD)
    # interleave leaves and parents in one graph, strict post-order in the other
    order = sorted(t1.nodes(), key=lambda n: (not n.is_leaf, n.size))
    one = {str(n.span) + str(n.category): a.score(n) for n in order}
    two = {str(n.span) + str(n.category): b.score(n) for n in t2.nodes()}
    assert one == two


def test_missing_rule_block_raises():
    p = fig1_params()
    del p.tensors["tree.FORWARD_APPLY.W_i"]
    graph = ComputationGraph(p, FIGURE1_SENTENCE)
    with pytest.raises(ModelConfigError):
        encode_tree(graph, from_bracket(FIGURE1_GOLD))


def test_leaf_state_range():
    graph = ComputationGraph(fig1_params(), FIGURE1_SENTENCE)
    graph.leaf_state(3)
    with pytest.raises(IndexError):
        graph.leaf_state(4)


def test_delexicalized_leaves_ignore_words():
    dims = ModelDims(word=3, category=2, hidden=3, leaf_input="none")
    p = fig1_params(dims=dims)
    other = ["Spoons", "bend", "like", "bananas"]
    a = ComputationGraph(p, FIGURE1_SENTENCE)
    b = ComputationGraph(p, other)
    ta, tb = from_bracket(FIGURE1_GOLD), from_bracket(FIGURE1_GOLD)
    assert [a.score(n) for n in ta.nodes()] == [b.score(n) for n in tb.nodes()]


# -- gradients --------------------------------------------------------------


def fd_check(params, words, trees_and_weights, mask=None, step=1e-5, per_block=8, seed=0):
    graph = ComputationGraph(params, words, mask)
    seeds = {}
    for tree, w in trees_and_weights:
        for n in tree.nodes():
            graph.score(n)
            seeds[n] = seeds.get(n, 0.0) + w
    grads = graph.backward(seeds)

    def loss():
        sc = StraightLineScorer(params, words, mask)
        return sum(w * sc.tree_global(t) for t, w in trees_and_weights)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in params.tensors.items():
        flat = t.reshape(-1)
        g = grads[name].reshape(-1)
        idx = rng.choice(flat.size, size=min(per_block, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            up = loss()
            flat[i] = old - step
            down = loss()
            flat[i] = old
            fd = (up - down) / (2 * step)
            denom = max(abs(fd), abs(g[i]))
            if denom > 1e-7:
                worst = max(worst, abs(fd - g[i]) / denom)
            else:
                assert abs(fd - g[i]) < 1e-9
    return worst


def test_gradient_single_tree():
    p = fig1_params(seed=3)
    assert fd_check(p, FIGURE1_SENTENCE, [(from_bracket(FIGURE1_GOLD), 1.0)]) < 1e-4


def test_gradient_with_unary_and_signed_seeds():
    toy = ToyGrammar(seed=5)
    sents = [s for s in toy.sentences(60, 3, 5) if any(n.rule.kind.value == "UNARY" for n in s.gold.nodes())]
    s = sents[0]
    p = random_small_params(toy.lexicon.entries, toy.lexicon.categories(), seed=7)
    table = SupertagTable.from_lexicon(toy.lexicon, s.words)
    other = [t for t, _ in enumerate_parses(table)][-1]
    assert fd_check(p, s.words, [(s.gold, -1.0), (other, 1.0)]) < 1e-4


def test_gradient_with_dropout_mask():
    p = fig1_params(seed=4)
    mask = dropout_mask(np.random.default_rng(0), 4, SMALL.word, 0.4)
    assert fd_check(p, FIGURE1_SENTENCE, [(from_bracket(FIGURE1_GOLD), 1.0)], mask=mask) < 1e-4


def test_empty_seeds_give_zero_gradient():
    p = fig1_params()
    graph = ComputationGraph(p, FIGURE1_SENTENCE)
    encode_tree(graph, from_bracket(FIGURE1_GOLD))
    assert all(not np.any(g) for g in graph.backward({}).values())


def test_cancelling_seeds_give_zero_gradient():
    p = fig1_params()
    graph = ComputationGraph(p, FIGURE1_SENTENCE)
    tree = from_bracket(FIGURE1_GOLD)
    encode_tree(graph, tree)
    g1 = graph.backward({n: 1.0 for n in tree.nodes()})
    g2 = graph.backward({n: -1.0 for n in tree.nodes()})
    for k in g1:
        np.testing.assert_allclose(g1[k] + g2[k], 0.0, atol=1e-15)


def test_shared_subtrees_accumulate_like_disjoint_copies():
    toy = ToyGrammar(seed=8, max_distractors=3)
    for s in toy.sentences(30, 4, 6):
        table = SupertagTable.from_lexicon(toy.lexicon, s.words)
        parses = [t for t, _ in enumerate_parses(table)]
        if len(parses) >= 2:
            break
    p = random_small_params(toy.lexicon.entries, toy.lexicon.categories(), seed=9)
    a, b = parses[0], parses[1]
    shared = ComputationGraph(p, s.words)
    encode_tree(shared, a)
    encode_tree(shared, b)  # reuses a's units where subtrees coincide
    seeds = {}
    for t in (a, b):
        for n in t.nodes():
            seeds[n] = seeds.get(n, 0.0) + 1.0
    g_shared = shared.backward(seeds)
    total = p.zeros_like()
    for text in (a, b):
        copy = from_bracket(to_bracket(text))
        g = ComputationGraph(p, s.words)
        encode_tree(g, copy)
        for k, v in g.backward({n: 1.0 for n in copy.nodes()}).items():
            total[k] += v
    for k in total:
        np.testing.assert_allclose(g_shared[k], total[k], rtol=1e-10, atol=1e-13)


# -- parameters -------------------------------------------------------------


def test_initialization_is_seeded():
    a = fig1_params(seed=2)
    b = fig1_params(seed=2)
    assert all(np.array_equal(a[k], b[k]) for k in a.tensors)
    lex = figure1_lexicon()
    c = ParameterStore.initialize(FIGURE1_SENTENCE, lex.categories(), seed=5)
    assert c.words[0] == "<unk>" and c.word_id("unseen") == 0


def test_serialization_round_trip_is_bit_stable(tmp_path):
    p = fig1_params(seed=6)
    path = tmp_path / "m.json"
    p.save(path)
    q = ParameterStore.load(path)
    assert q.words == p.words and q.categories == p.categories and q.dims == p.dims
    assert all(np.array_equal(p[k], q[k]) for k in p.tensors)
    ta, tb = from_bracket(FIGURE1_GOLD), from_bracket(FIGURE1_GOLD)
    ga, gb = ComputationGraph(p, FIGURE1_SENTENCE), ComputationGraph(q, FIGURE1_SENTENCE)
    assert [ga.score(n) for n in ta.nodes()] == [gb.score(n) for n in tb.nodes()]


def test_load_rejects_bad_shapes(tmp_path):
    p = fig1_params()
    data = p.to_json()
    data["tensors"]["score.W"] = [0.0]
    with pytest.raises(ModelConfigError):
        ParameterStore.from_json(data)
    data = p.to_json()
    data["format_version"] = 99
    with pytest.raises(ModelConfigError):
        ParameterStore.from_json(data)


def test_dropout_mask_is_inverted():
    m = dropout_mask(np.random.default_rng(0), 2000, 10, 0.4)
    assert set(np.unique(m)) <= {0.0, 1.0 / 0.6}
    assert abs(m.mean() - 1.0) < 0.02


def test_log_sigmoid_vectorized():
    z = np.array([-800.0, 0.0, 800.0])
    out = log_sigmoid(z)
    assert np.all(out <= 0) and np.isfinite(out).all()
