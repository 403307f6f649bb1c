from types import SimpleNamespace

import numpy as np
import pytest

from rnsent import tensor as T
from rnsent import trees
from rnsent.encoders import VARIANTS, EncoderConfig, SentenceEncoder, bow_encode, pool
from rnsent.errors import InvalidTreeError
from rnsent.gradcheck import gradient_check
from rnsent.layers import BiLSTM, PairMLP
from rnsent.model import RelationNetModel
from rnsent.params import ParameterStore
from rnsent.tasks import cross_entropy

from conftest import padded_batch

D = 6  # object width (hidden 3 per direction)


def make_encoder(variant="flat-rn", tree_mode="latent", seed=0, **kw):
    kw = {"embedding_dim": 4, "hidden_dim": D // 2, "mlp_dim": 5, "dropout": 0.0, **kw}
    cfg = EncoderConfig(variant=variant, tree_mode=tree_mode, **kw)
    store = ParameterStore()
    return SentenceEncoder(cfg, store, np.random.default_rng(seed)), store


def objects(rng, n, B=1):
    return T.Tensor(rng.normal(size=(B, n, D)))


def ones_mask(n, B=1):
    return np.ones((B, n), dtype=bool)


def onehot(heads):
    return T.Tensor(trees.marginals_from_tree(heads)[None])


# config


@pytest.mark.parametrize("kw", [
    {"variant": "nope"},
    {"tree_mode": "none", "variant": "recurrent-rn"},
    {"tree_mode": "latent", "variant": "bow"},
    {"steps": 0},
    {"hidden_dim": 0},
    {"dropout": 1.0},
    {"root_mode": "double"},
])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        EncoderConfig(**kw)


# BiLSTM


def test_bilstm_single_word_shape(rng):
    lstm = BiLSTM(ParameterStore(), "b", 4, 3, rng)
    assert lstm(rng.normal(size=(1, 1, 4)), ones_mask(1)).shape == (1, 1, 6)


def test_bilstm_zero_weights_zero_output(rng):
    store = ParameterStore()
    lstm = BiLSTM(store, "b", 4, 3, rng)
    for p in store:
        p.data[...] = 0.0
    np.testing.assert_array_equal(lstm(np.zeros((2, 5, 4)), ones_mask(5, 2)).data, 0.0)


def test_bilstm_rejects_empty(rng):
    with pytest.raises(ValueError):
        BiLSTM(ParameterStore(), "b", 4, 3, rng)(np.zeros((1, 0, 4)), np.zeros((1, 0), bool))


def test_bilstm_reversal_swaps_directions(rng):
    # only holds when both directions share weights
    store = ParameterStore()
    lstm = BiLSTM(store, "b", 4, 3, rng)
    for name in ("w_in", "w_h", "bias"):
        store[f"b.bwd.{name}"].data[...] = store[f"b.fwd.{name}"].data
    x = rng.normal(size=(1, 5, 4))
    out = lstm(x, ones_mask(5)).data[0]
    rev = lstm(x[:, ::-1], ones_mask(5)).data[0]
    np.testing.assert_allclose(rev[::-1, :3], out[:, 3:], atol=1e-14)
    np.testing.assert_allclose(rev[::-1, 3:], out[:, :3], atol=1e-14)


def test_bilstm_padding_does_not_leak(rng):
    lstm = BiLSTM(ParameterStore(), "b", 4, 3, rng)
    x = rng.normal(size=(1, 5, 4))
    mask = np.array([[True, True, True, False, False]])
    a = lstm(x, mask).data
    x[0, 3:] = 100.0
    b = lstm(x, mask).data
    np.testing.assert_array_equal(a[0, :3], b[0, :3])
    np.testing.assert_array_equal(b[0, 3:], 0.0)


# relation MLP


def test_pair_mlp_zero_weights_is_residual(rng):
    store = ParameterStore()
    g = PairMLP(store, "g", 3, 6, rng)
    for p in store:
        p.data[...] = 0.0
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    np.testing.assert_allclose(g(a, b).data, np.concatenate([a, b], axis=-1))


def test_pair_mlp_is_ordered(rng):
    g = PairMLP(ParameterStore(), "g", 3, 5, rng)
    a, b = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    assert not np.allclose(g(a, b).data, g(b, a).data)


def test_pair_mlp_grid_matches_pairs(rng):
    g = PairMLP(ParameterStore(), "g", 3, 5, rng)
    a, b = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 3, 3))
    G = g.grid(a, b).data
    for i in range(4):
        for j in range(3):
            np.testing.assert_allclose(G[:, i, j], g(a[:, i], b[:, j]).data, atol=1e-14)


def test_pair_mlp_width_mismatch(rng):
    g = PairMLP(ParameterStore(), "g", 3, 5, rng)
    with pytest.raises(ValueError):
        g(np.zeros(4), np.zeros(3))


def test_pair_mlp_gradient(rng):
    store = ParameterStore()
    g = PairMLP(store, "g", 3, 5, rng)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    report = gradient_check(lambda: T.reduce_sum(T.tanh(g(a, b))), list(store))
    assert report.max_error <= 1e-5


# flat RN


def test_flat_single_word_is_f_of_zero(rng):
    enc, _ = make_encoder(tree_mode="none")
    out = enc.rn_flat(objects(rng, 1), ones_mask(1)).data
    np.testing.assert_allclose(out, enc.f(np.zeros((1, 5))).data)


@pytest.mark.parametrize("agg", ["sum", "max"])
def test_flat_permutation_invariant(rng, agg):
    enc, _ = make_encoder(tree_mode="none", aggregation=agg)
    O = objects(rng, 4)
    perm = rng.permutation(4)
    a = enc.rn_flat(O, ones_mask(4)).data
    b = enc.rn_flat(T.Tensor(O.data[:, perm]), ones_mask(4)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_flat_two_words_manual(rng):
    enc, _ = make_encoder(tree_mode="none")
    O = objects(rng, 2)
    o1, o2 = O.data[:, 0], O.data[:, 1]
    agg = np.maximum(enc.g(o1, o2).data, enc.g(o2, o1).data)
    np.testing.assert_allclose(enc.rn_flat(O, ones_mask(2)).data, enc.f(agg).data, atol=1e-14)


# supervised and latent tree RN


def test_supervised_single_word(rng):
    enc, _ = make_encoder(tree_mode="supervised")
    O_ext = enc.extend(objects(rng, 1))
    expected = enc.f(enc.g(O_ext.data[:, 0], O_ext.data[:, 1])).data
    np.testing.assert_allclose(enc.rn_supervised(O_ext, [[0]], ones_mask(1)).data, expected)


@pytest.mark.parametrize("agg", ["sum", "max"])
def test_supervised_chain_manual(rng, agg):
    enc, _ = make_encoder(tree_mode="supervised", aggregation=agg)
    O_ext = enc.extend(objects(rng, 3))
    o = O_ext.data[0]
    terms = np.concatenate([enc.g(o[[h]], o[[m]]).data for h, m in [(0, 1), (1, 2), (2, 3)]])
    agg_v = terms.sum(0) if agg == "sum" else terms.max(0)
    out = enc.rn_supervised(O_ext, [[0, 1, 2]], ones_mask(3)).data[0]
    np.testing.assert_allclose(out, enc.f(agg_v[None]).data[0], atol=1e-14)


def test_supervised_rejects_invalid_tree(rng):
    enc, _ = make_encoder(tree_mode="supervised")
    with pytest.raises(InvalidTreeError):
        enc(rng.normal(size=(1, 2, 4)), ones_mask(2), heads=[[2, 1]])


def test_supervised_requires_heads(rng):
    enc, _ = make_encoder(tree_mode="supervised")
    with pytest.raises(ValueError):
        enc(rng.normal(size=(1, 2, 4)), ones_mask(2))


@pytest.mark.parametrize("agg", ["sum", "max"])
def test_latent_onehot_equals_supervised(rng, agg):
    enc, _ = make_encoder(aggregation=agg)
    for n in range(1, 6):
        O_ext = enc.extend(objects(rng, n))
        ts = trees.enumerate_trees(n)
        t = ts[rng.integers(len(ts))]
        a = enc.rn_latent(O_ext, onehot(t), ones_mask(n)).data
        b = enc.rn_supervised(O_ext, [t], ones_mask(n)).data
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_latent_uniform_two_words_manual(rng):
    enc, _ = make_encoder(aggregation="sum")
    O_ext = enc.extend(objects(rng, 2))
    P = trees.tree_marginals(np.ones((3, 2)) * trees.arc_mask(2)).data
    o = O_ext.data[0]
    agg = sum(P[h, m - 1] * enc.g(o[[h]], o[[m]]).data for h, m in [(0, 1), (0, 2), (1, 2), (2, 1)])
    out = enc.rn_latent(O_ext, T.Tensor(P[None]), ones_mask(2)).data[0]
    np.testing.assert_allclose(out, enc.f(agg).data[0], atol=1e-14)


def test_latent_output_scale_invariant(rng):
    enc, _ = make_encoder()
    O_ext = enc.extend(objects(rng, 4))
    psi = trees.potentials_from_scores(enc.arc_scores(O_ext)).data
    a = enc.rn_latent(O_ext, trees.tree_marginals(psi), ones_mask(4)).data
    b = enc.rn_latent(O_ext, trees.tree_marginals(7.3 * psi), ones_mask(4)).data
    np.testing.assert_allclose(a, b, atol=1e-8)


# potentials


def test_zero_potential_weights_give_ones(rng):
    enc, _ = make_encoder()
    for p in (enc.pot_w, enc.pot_u, enc.pot_v, enc.pot_b):
        p.data[...] = 0.0
    psi, _ = enc.edge_potentials(enc.extend(objects(rng, 3)), ones_mask(3))
    np.testing.assert_array_equal(psi.data[0], trees.arc_mask(3).astype(float))
    P = trees.tree_marginals(enc.edge_potentials(enc.extend(objects(rng, 2)), ones_mask(2))[0]).data[0]
    np.testing.assert_allclose(P[0], [2 / 3, 2 / 3])


def test_potential_clamp(rng):
    enc, _ = make_encoder()
    enc.pot_b.data[...] = 100.0
    psi, scores = enc.edge_potentials(enc.extend(objects(rng, 2)), ones_mask(2))
    assert scores.data.max() == 30.0
    assert np.isfinite(psi.data).all() and psi.data.max() == pytest.approx(np.exp(30.0))


# intra-attention


def test_intra_supervised_single_word(rng):
    enc, _ = make_encoder("intra-attn", "supervised")
    O_ext = enc.extend(objects(rng, 1))
    _, extras = enc.intra_supervised(O_ext, [[0]], ones_mask(1))
    expected = enc.f(enc.g(O_ext.data[:, 0], O_ext.data[:, 1])).data
    np.testing.assert_allclose(extras["parent"].data[:, 0], expected)


def test_intra_supervised_range_and_parent_dependence(rng):
    enc, _ = make_encoder("intra-attn", "supervised")
    O = objects(rng, 2)
    s, _ = enc.intra_supervised(enc.extend(O), [[0, 1]], ones_mask(2))
    assert (np.abs(s.data) < 1).all()
    O2 = O.data.copy()
    O2[:, 0] = 0.0
    s2, _ = enc.intra_supervised(enc.extend(T.Tensor(O2)), [[0, 1]], ones_mask(2))
    assert not np.allclose(s.data[:, 1], s2.data[:, 1])


def test_intra_latent_onehot_parent_and_leaf(rng):
    enc, _ = make_encoder("intra-attn", "latent")
    O_ext = enc.extend(objects(rng, 3))
    t = [0, 1, 1]
    _, lat = enc.intra_latent(O_ext, onehot(t), ones_mask(3))
    o = O_ext.data[0]
    ref = enc.f(enc.g(o[t], o[1:])).data
    np.testing.assert_allclose(lat["parent"].data[0], ref, atol=1e-10)
    leaf = enc.f(np.zeros((1, 5))).data[0]
    np.testing.assert_allclose(lat["child"].data[0, 2], leaf)
    assert not np.allclose(lat["child"].data[0, 0], leaf)


# recurrent RN


@pytest.mark.parametrize("tree_mode", ["supervised", "latent"])
def test_recurrent_one_step_is_identity(rng, tree_mode):
    enc, _ = make_encoder("recurrent-rn", tree_mode)
    O = objects(rng, 3)
    P = onehot([0, 1, 2])
    out = enc.recurrent(enc.extend(O), ones_mask(3), heads=[[0, 1, 2]], marginals=None if tree_mode == "supervised" else P, steps=1)
    np.testing.assert_array_equal(out.data, O.data)


def test_recurrent_chain_perturbation(rng):
    enc, _ = make_encoder("recurrent-rn", "supervised")
    O = objects(rng, 3)
    O2 = O.data.copy()
    O2[:, 0] = 0.0
    for steps in (2, 3):
        a = enc.recurrent(enc.extend(O), ones_mask(3), heads=[[0, 1, 2]], steps=steps).data
        b = enc.recurrent(enc.extend(T.Tensor(O2)), ones_mask(3), heads=[[0, 1, 2]], steps=steps).data
        # word 2's parent is word 1, so o_1 reaches h_2 after one round
        assert not np.allclose(a[0, 1], b[0, 1])
    # o_1 reaches h_3 only through h_2, which needs two rounds
    a = enc.recurrent(enc.extend(O), ones_mask(3), heads=[[0, 1, 2]], steps=2).data
    b = enc.recurrent(enc.extend(T.Tensor(O2)), ones_mask(3), heads=[[0, 1, 2]], steps=2).data
    np.testing.assert_array_equal(a[0, 2], b[0, 2])
    a = enc.recurrent(enc.extend(O), ones_mask(3), heads=[[0, 1, 2]], steps=3).data
    b = enc.recurrent(enc.extend(T.Tensor(O2)), ones_mask(3), heads=[[0, 1, 2]], steps=3).data
    assert not np.allclose(a[0, 2], b[0, 2])


def test_recurrent_single_word_finite(rng):
    enc, _ = make_encoder("recurrent-rn", "supervised")
    out = enc.recurrent(enc.extend(objects(rng, 1)), ones_mask(1), heads=[[0]])
    assert np.isfinite(out.data).all()


def test_recurrent_onehot_parent_message(rng):
    enc, _ = make_encoder("recurrent-rn", "latent")
    H_ext = enc.extend(objects(rng, 4))
    t = [0, 1, 1, 3]
    parent, _ = enc.messages_latent(H_ext, onehot(t))
    np.testing.assert_allclose(parent.data, enc.parent_messages_supervised(H_ext, [t]).data, atol=1e-10)


# pooling, bag of words, structured attention


def test_pool(rng):
    W = rng.normal(size=(1, 4, 3))
    mask = ones_mask(4)
    np.testing.assert_array_equal(pool(W[:, :1], ones_mask(1)).data, W[:, 0])
    np.testing.assert_array_equal(pool(W[:, ::-1], mask).data, pool(W, mask).data)
    dup = np.concatenate([W, W[:, :1]], axis=1)
    np.testing.assert_array_equal(pool(dup, ones_mask(5)).data, pool(W, mask).data)


def test_pool_ignores_padding():
    W = np.array([[[1.0, -5.0], [9.0, 9.0]]])
    np.testing.assert_array_equal(pool(W, [[True, False]]).data, [[1.0, -5.0]])


def test_bow(rng):
    E = rng.normal(size=(1, 3, 4))
    np.testing.assert_allclose(bow_encode(E[:, :1], ones_mask(1)).data, E[:, 0])
    np.testing.assert_allclose(bow_encode(E[:, ::-1], ones_mask(3)).data, bow_encode(E, ones_mask(3)).data)
    twice = np.concatenate([E[:, :1], E[:, :1]], axis=1)
    np.testing.assert_allclose(bow_encode(twice, ones_mask(2)).data, E[:, 0])


def test_structured_attention_onehot_context_is_parent(rng):
    enc, _ = make_encoder("structured-attn-baseline", "latent")
    O_ext = enc.extend(objects(rng, 3))
    _, extras = enc.structured_attention(O_ext, onehot([2, 0, 2]), ones_mask(3))
    np.testing.assert_allclose(extras["parent"].data[0], O_ext.data[0, [2, 0, 2]])


def test_structured_attention_uniform_two_words(rng):
    enc, _ = make_encoder("structured-attn-baseline", "latent")
    O_ext = enc.extend(objects(rng, 2))
    P = trees.tree_marginals(np.ones((3, 2)) * trees.arc_mask(2)).data
    _, extras = enc.structured_attention(O_ext, T.Tensor(P[None]), ones_mask(2))
    o = O_ext.data[0]
    np.testing.assert_allclose(extras["parent"].data[0, 0], (2 * o[0] + o[2]) / 3)
    np.testing.assert_allclose(extras["child"].data[0, 0], o[2] / 3)


def test_structured_attention_differs_from_intra(rng):
    enc, store = make_encoder("structured-attn-baseline", "latent")
    intra, _ = make_encoder("intra-attn", "latent")
    O_ext = enc.extend(objects(rng, 3))
    P = onehot([0, 1, 1])
    a, _ = enc.structured_attention(O_ext, P, ones_mask(3))
    b, _ = intra.intra_latent(O_ext, P, ones_mask(3))
    assert a.shape == b.shape and not np.allclose(a.data, b.data)


# whole encoders


ALL_COMBOS = [
    ("flat-rn", "none"), ("flat-rn", "supervised"), ("flat-rn", "latent"),
    ("intra-attn", "none"), ("intra-attn", "supervised"), ("intra-attn", "latent"),
    ("recurrent-rn", "supervised"), ("recurrent-rn", "latent"),
    ("structured-attn-baseline", "supervised"), ("structured-attn-baseline", "latent"),
    ("bow", "none"), ("bilstm-max", "none"),
]


def test_every_variant_covered():
    assert {v for v, _ in ALL_COMBOS} == set(VARIANTS)


@pytest.mark.parametrize("variant,tree_mode", ALL_COMBOS)
def test_batching_equivalence(rng, variant, tree_mode):
    cfg = EncoderConfig(embedding_dim=4, hidden_dim=3, mlp_dim=5, variant=variant, tree_mode=tree_mode, dropout=0.0)
    model = RelationNetModel(cfg, 8, 3, np.random.default_rng(1))
    ids, mask, heads = padded_batch(rng, [3, 1, 5, 2])
    out = model.encode(ids, mask, heads)
    assert out.sentence.shape == (4, cfg.output_dim)
    assert np.isfinite(out.sentence.data).all()
    for b, L in enumerate(mask.sum(1)):
        single = model.encode(ids[b : b + 1, :L], mask[b : b + 1, :L], heads[b : b + 1, :L])
        np.testing.assert_allclose(out.sentence.data[b], single.sentence.data[0], atol=1e-10, rtol=0)


def test_dropout_only_with_rng(rng):
    cfg = EncoderConfig(embedding_dim=4, hidden_dim=3, mlp_dim=5, variant="bilstm-max", tree_mode="none", dropout=0.5)
    model = RelationNetModel(cfg, 8, 3, np.random.default_rng(1))
    ids, mask, _ = padded_batch(rng, [4, 4])
    a = model.encode(ids, mask).sentence.data
    np.testing.assert_array_equal(a, model.encode(ids, mask).sentence.data)
    assert not np.allclose(a, model.encode(ids, mask, rng=np.random.default_rng(0)).sentence.data)


def test_empty_sentence_rejected():
    enc, _ = make_encoder()
    with pytest.raises(ValueError):
        enc(np.zeros((2, 3, 4)), np.array([[True, False, False], [False, False, False]]))


@pytest.mark.parametrize("variant", ["intra-attn", "recurrent-rn"])
def test_latent_gradient_end_to_end(rng, variant):
    cfg = EncoderConfig(embedding_dim=3, hidden_dim=2, mlp_dim=3, variant=variant, tree_mode="latent",
                        dropout=0.0, steps=3)
    model = RelationNetModel(cfg, 6, 2, np.random.default_rng(2))
    ids, mask, _ = padded_batch(rng, [2, 3], vocab=6)
    batch = SimpleNamespace(ids=ids, mask=mask, heads=None)
    report = gradient_check(lambda: cross_entropy(model.logits(batch), [0, 1]), model.parameters)
    assert report.max_error <= 1e-4, report.worst
    assert not set(report.unresolved) - {"enc.potential.v", "enc.potential.b"}
