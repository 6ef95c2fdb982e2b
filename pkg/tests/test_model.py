import dataclasses

import numpy as np
import pytest

from docnmt.context import PositionMode, assemble
from docnmt.errors import EmptyPrefix, IdOutOfRange, IndexOutOfRange, ModelError, PositionOverflow
from docnmt.model import EncoderBatch, ModelConfig, Transformer, param_shapes
from docnmt.numerics import Graph, Tensor, backward, ops
from docnmt.numerics.gradcheck import numeric_grad, relative_error

from helpers import random_input, tiny_config, tiny_model


def test_param_table_matches_params():
    cfg = tiny_config(enc_layers=3, dec_layers=1)
    m = Transformer(cfg)
    shapes = param_shapes(cfg)
    assert list(m.params) == list(shapes)
    for name, t in m.params.items():
        assert t.shape == shapes[name]
    assert shapes["encoder.embed.segment"] == (2, 16)
    assert sum(1 for n in shapes if n.startswith("encoder.layer.2.")) == 16


def test_config_validation():
    with pytest.raises(ModelError):
        ModelConfig(src_vocab=10, tgt_vocab=10, d_model=10, n_heads=3)


def test_encoder_shape_and_determinism(rng):
    m = tiny_model()
    x = random_input(rng, min_ctx=1)
    a = m.encode(x)
    b = m.encode(x)
    assert a.hidden.shape == (1, len(x), 16)
    np.testing.assert_array_equal(a.hidden.data, b.hidden.data)
    assert np.all(np.isfinite(a.hidden.data))


def test_context_influences_source_states():
    m = tiny_model()
    src = [10, 11, 12]
    a = m.encode(assemble([[20, 21, 22]], src, 32, "reversed"))
    b = m.encode(assemble([[30, 31, 32]], src, 32, "reversed"))
    diff = np.abs(a.hidden.data[0, 4:] - b.hidden.data[0, 4:]).max()
    assert diff > 1e-6


def test_batched_matches_single(rng):
    m = tiny_model()
    xs = [random_input(rng, min_ctx=1) for _ in range(4)]
    batched = m.encode(EncoderBatch.collate(xs))
    for i, x in enumerate(xs):
        single = m.encode(x)
        np.testing.assert_allclose(batched.hidden.data[i, : len(x)], single.hidden.data[0], atol=1e-12)


def test_cross_attention_rows_cover_source_only(rng):
    m = tiny_model()
    x = random_input(rng, min_ctx=2)
    trace = []
    m.decode([[2, 7, 8, 9]], m.encode(x), trace=trace)
    start, end = x.source_span
    assert trace
    for _, w in trace:
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(w[..., :start] == 0.0)
        assert np.all(w[..., start:end] > 0.0)


def _noise_context(enc, rng):
    hidden = enc.hidden.data.copy()
    noise = rng.normal(0, 10, size=hidden.shape)
    hidden[enc.context_mask] = noise[enc.context_mask]
    return dataclasses.replace(enc, hidden=Tensor(hidden))


def test_context_mask_blackout(rng):
    m = tiny_model()
    for _ in range(10):
        x = random_input(rng, min_ctx=1)
        enc = m.encode(x)
        noisy = _noise_context(enc, rng)
        prefix = [[2, 6, 7]]
        np.testing.assert_array_equal(m.decode(prefix, enc).data, m.decode(prefix, noisy).data)
        off = m.decode(prefix, enc, use_context_mask=False).data
        off_noisy = m.decode(prefix, noisy, use_context_mask=False).data
        assert np.abs(off - off_noisy).max() > 1e-3


def test_decoder_is_causal(rng):
    m = tiny_model()
    enc = m.encode(random_input(rng))
    a = m.decode([[2, 6, 7, 8]], enc).data
    b = m.decode([[2, 6, 7, 40]], enc).data
    np.testing.assert_allclose(a[:, :3], b[:, :3], atol=1e-12)


def test_decoder_errors(rng):
    m = tiny_model()
    enc = m.encode(random_input(rng))
    with pytest.raises(EmptyPrefix):
        m.decode(np.zeros((1, 0), dtype=np.int64), enc)
    with pytest.raises(ModelError):
        m.decode([[6, 7]], enc)
    with pytest.raises(IdOutOfRange):
        m.decode([[2, 99]], enc)


def test_encoder_errors():
    m = tiny_model(max_positions=8)
    with pytest.raises(PositionOverflow):
        m.encode(assemble([], list(range(6, 16)), 512, "sequential"))
    with pytest.raises(IdOutOfRange):
        m.encode(assemble([], [6, 99], 8, "sequential"))


class TestMLMHead:
    def test_empty(self, rng):
        m = tiny_model()
        out = m.mlm_logits(m.encode(random_input(rng)), [])
        assert out.shape == (0, 50)

    def test_shape(self, rng):
        m = tiny_model()
        x = random_input(rng, min_ctx=1)
        assert m.mlm_logits(m.encode(x), [0, len(x) - 1]).shape == (2, 50)

    def test_out_of_range(self, rng):
        m = tiny_model()
        x = random_input(rng)
        with pytest.raises(IndexOutOfRange):
            m.mlm_logits(m.encode(x), [len(x)])

    def test_tied_embedding_gradient(self, rng):
        m = tiny_model(src_vocab=12, tgt_vocab=12)
        x = random_input(rng, vocab=12, min_ctx=1)
        positions = [0, len(x) - 1]
        targets = [7, 9]
        table = m.params["encoder.embed.token"]

        def loss():
            return ops.cross_entropy(m.mlm_logits(m.encode(x), positions), targets)

        with Graph() as g:
            total = loss()
        backward(g, total)
        num = numeric_grad(lambda: float(loss().data), table.data)
        assert relative_error(table.grad, num) < 1e-5


def test_reversed_positions_stable_at_embedding_layer(rng):
    m = tiny_model()
    src = [10, 11, 12, 13]
    seen = []
    for n_ctx in range(5):
        ctx = [list(rng.integers(6, 50, size=3)) for _ in range(n_ctx)]
        x = assemble(ctx, src, 32, PositionMode.REVERSED)
        emb = m.embed_source(EncoderBatch.collate([x])).data[0]
        seen.append(emb[x.source_span[0] :])
    for e in seen[1:]:
        np.testing.assert_array_equal(e, seen[0])


def test_segment_flip_changes_by_segment_difference():
    m = tiny_model()
    x = assemble([[20, 21]], [10, 11], 32, "reversed")
    b = EncoderBatch.collate([x])
    base = m.embed_source(b).data[0]
    b.segment_ids[0, 0] = 1
    flipped = m.embed_source(b).data[0]
    seg = m.params["encoder.embed.segment"].data
    np.testing.assert_allclose(flipped[0] - base[0], seg[1] - seg[0], atol=1e-12)
    np.testing.assert_array_equal(flipped[1:], base[1:])


def test_segment_embeddings_can_be_disabled():
    x = assemble([[20, 21]], [10, 11], 32, "reversed")
    on = tiny_model()
    off = tiny_model(use_segment_embeddings=False)
    b = EncoderBatch.collate([x])
    diff = on.embed_source(b).data - off.embed_source(b).data
    seg = on.params["encoder.embed.segment"].data
    np.testing.assert_allclose(diff[0], seg[b.segment_ids[0]], atol=1e-12)


def test_dropout_train_mode_is_seeded(rng):
    m = tiny_model(dropout=0.3)
    x = random_input(rng)
    a = m.encode(x, train=True, rng=np.random.default_rng(5)).hidden.data
    b = m.encode(x, train=True, rng=np.random.default_rng(5)).hidden.data
    c = m.encode(x).hidden.data
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - c).max() > 0
