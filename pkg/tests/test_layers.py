import numpy as np
import pytest

import gradcases
import reference as ref
from multires import numerics as nx
from multires.layers import (BahdanauAttention, BiGRU, Embedding, GRUCell, Linear, MultiHeadAttention,
                             TransformerDecoderLayer, bahdanau_attend, bigru_encode, embed, gru_cell,
                             transformer_decoder_layer)
from multires.numerics import Tensor


@pytest.mark.parametrize("name", sorted(gradcases.CASES))
def test_layer_gradients(name):
    loss, params = gradcases.CASES[name](100)
    assert nx.grad_check(loss, params) < 1e-4


def test_embedding_lookup_and_gradient_counts_rows():
    table = Embedding(4, 3, np.random.default_rng(0))
    out = embed(np.array([[0, 2, 2]]), table)
    assert np.array_equal(out.data[0], table.weights.data[[0, 2, 2]])
    table.zero_grad()
    nx.backward(nx.sum(out))
    assert np.array_equal(table.weights.grad, [[1.0] * 3, [0.0] * 3, [2.0] * 3, [0.0] * 3])


def test_embedding_rejects_out_of_range():
    table = Embedding(4, 3, np.random.default_rng(0))
    with pytest.raises(IndexError):
        embed(np.array([4]), table)


def test_gru_zero_params_keep_zero_state():
    cell = GRUCell(3, 2, np.random.default_rng(0))
    for p in cell.parameters():
        p.data[...] = 0.0
    h = gru_cell(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 2))), cell)
    assert np.array_equal(h.data, np.zeros((1, 2)))


def test_gru_matches_hand_formula():
    rng = np.random.default_rng(4)
    cell = GRUCell(3, 2, rng)
    for p in cell.parameters():
        p.data[...] = rng.normal(size=p.shape)
    x, h = rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
    got = gru_cell(Tensor(x), Tensor(h), cell).data
    assert np.allclose(got, ref.gru_cell(x, h, cell), atol=1e-12, rtol=0)


def test_gru_hidden_width_mismatch():
    cell = GRUCell(3, 2, np.random.default_rng(0))
    with pytest.raises(nx.ShapeError):
        gru_cell(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 4))), cell)


def test_bigru_matches_reference_and_context():
    rng = np.random.default_rng(5)
    enc = BiGRU(3, 2, rng)
    x = rng.normal(size=(1, 4, 3))
    out, ctx = bigru_encode(Tensor(x), enc.fwd, enc.bwd)
    r_out, r_ctx = ref.bigru(x[0], enc.fwd, enc.bwd)
    assert out.shape == (1, 4, 4)
    assert np.allclose(out.data[0], r_out, atol=1e-12)
    assert np.allclose(ctx.data[0], r_ctx, atol=1e-12)


def test_bigru_reversal_swaps_directions():
    rng = np.random.default_rng(6)
    enc = BiGRU(3, 2, rng)
    x = rng.normal(size=(1, 5, 3))
    out, ctx = bigru_encode(Tensor(x), enc.fwd, enc.bwd)
    out_r, ctx_r = bigru_encode(Tensor(x[:, ::-1].copy()), enc.bwd, enc.fwd)
    swap = lambda a: np.concatenate([a[..., 2:], a[..., :2]], axis=-1)  # noqa: E731
    assert np.allclose(out_r.data[0], swap(out.data[0])[::-1], atol=1e-12)
    assert np.allclose(ctx_r.data, swap(ctx.data), atol=1e-12)


def test_bigru_mask_equals_unpadded_run():
    rng = np.random.default_rng(7)
    enc = BiGRU(3, 2, rng)
    x = rng.normal(size=(1, 5, 3))
    short_out, short_ctx = enc(Tensor(x[:, :3]))
    padded = np.concatenate([x[:, :3], rng.normal(size=(1, 2, 3))], axis=1)
    out, ctx = enc(Tensor(padded), np.array([[1, 1, 1, 0, 0]], bool))
    assert np.allclose(out.data[:, :3], short_out.data, atol=1e-12)
    assert np.allclose(ctx.data, short_ctx.data, atol=1e-12)


def test_bigru_empty_sequence_raises():
    enc = BiGRU(3, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        enc(Tensor(np.zeros((1, 0, 3))))


def test_bahdanau_matches_direct_evaluation():
    rng = np.random.default_rng(8)
    att = BahdanauAttention(4, 3, 5, rng)
    att.b.data[...] = rng.normal(size=5)
    q, keys = rng.normal(size=(1, 4)), rng.normal(size=(1, 3, 3))
    ctx, w = bahdanau_attend(Tensor(q), Tensor(keys), att)
    r_ctx, r_w = ref.bahdanau(q[0], keys[0], att)
    assert abs(w.data.sum() - 1.0) < 1e-12
    assert np.allclose(w.data[0], r_w, atol=1e-12)
    assert np.allclose(ctx.data[0], r_ctx, atol=1e-12)


def test_bahdanau_masked_keys_get_no_weight():
    rng = np.random.default_rng(9)
    att = BahdanauAttention(2, 2, 2, rng)
    _, w = att(Tensor(rng.normal(size=(1, 2))), Tensor(rng.normal(size=(1, 4, 2))),
               np.array([[1, 1, 0, 0]], bool))
    assert np.array_equal(w.data[0, 2:], [0.0, 0.0])
    assert abs(w.data.sum() - 1.0) < 1e-12


def test_bahdanau_empty_keys():
    att = BahdanauAttention(2, 2, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        bahdanau_attend(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 0, 2))), att)


def test_decoder_layer_hand_trace():
    rng = np.random.default_rng(10)
    layer = TransformerDecoderLayer(4, 1, rng)
    for ln in (layer.norm_self, layer.norm_cross, layer.norm_ffn):
        ln.gain.data[...] = rng.normal(size=4)
        ln.bias.data[...] = rng.normal(size=4)
    labels, feats = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    got = transformer_decoder_layer(Tensor(labels[None]), Tensor(feats[None]), layer).data[0]
    assert got.shape == (2, 4)
    assert np.allclose(got, ref.decoder_layer(labels, feats, layer), atol=1e-12)


def test_decoder_layer_multihead_matches_reference():
    rng = np.random.default_rng(11)
    layer = TransformerDecoderLayer(8, 4, rng)
    labels, feats = rng.normal(size=(3, 8)), rng.normal(size=(5, 8))
    got = layer(Tensor(labels[None]), Tensor(feats[None])).data[0]
    assert np.allclose(got, ref.decoder_layer(labels, feats, layer), atol=1e-12)


def test_decoder_layer_validation():
    layer = TransformerDecoderLayer(4, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer(Tensor(np.zeros((1, 0, 4))), Tensor(np.zeros((1, 3, 4))))
    with pytest.raises(nx.ShapeError):
        layer(Tensor(np.zeros((1, 2, 4))), Tensor(np.zeros((1, 3, 6))))
    with pytest.raises(ValueError):
        MultiHeadAttention(6, 4, np.random.default_rng(0))


def test_named_parameters_and_state_dict_round_trip():
    rng = np.random.default_rng(0)
    layer = TransformerDecoderLayer(4, 2, rng)
    names = [n for n, _ in layer.named_parameters()]
    assert "self_attn.q.W" in names and "norm_ffn.gain" in names
    assert len(names) == len(set(names))
    state = layer.state_dict()
    other = TransformerDecoderLayer(4, 2, np.random.default_rng(1))
    other.load_state_dict(state)
    assert all(np.array_equal(state[k], v) for k, v in other.state_dict().items())


def test_initialisation_scale():
    lin = Linear(16, 8, np.random.default_rng(0))
    assert np.abs(lin.W.data).max() <= 0.25
    assert np.array_equal(lin.b.data, np.zeros(8))
