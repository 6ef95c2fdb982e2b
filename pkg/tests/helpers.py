"""Shared builders for tests."""

from docnmt.context import PositionMode, assemble
from docnmt.model import ModelConfig, Transformer


def tiny_config(**kw):
    base = dict(
        src_vocab=50, tgt_vocab=50, d_model=16, n_heads=2, d_ffn=32, enc_layers=2, dec_layers=2,
        max_positions=32, dropout=0.0, dtype="float64", init_std=0.3,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(seed=0, **kw):
    return Transformer(tiny_config(**kw), seed=seed)


def random_input(rng, vocab=50, max_ctx=3, max_len=5, mode=PositionMode.REVERSED, min_ctx=0, limit=32):
    n_ctx = int(rng.integers(min_ctx, max_ctx + 1))
    ctx = [list(rng.integers(6, vocab, size=int(rng.integers(1, max_len + 1)))) for _ in range(n_ctx)]
    src = list(rng.integers(6, vocab, size=int(rng.integers(1, max_len + 1))))
    return assemble(ctx, src, limit, mode)


def random_target(rng, vocab=50, max_len=5):
    body = list(rng.integers(6, vocab, size=int(rng.integers(1, max_len + 1))))
    return tuple([2] + body + [3])
