"""Pre-norm Transformer encoder-decoder with context-aware encoder inputs.

The encoder embeds each position as token + segment + position (segment and
position ids come from :func:`docnmt.context.assemble`) and attends over the
whole extended input. Decoder cross-attention skips every position flagged in
the context mask, so only source states reach the output. An MLM head over
encoder states shares its output matrix with the source token embedding.

All computation is batched: a batch of extended inputs is right-padded to a
common length, and padded keys are masked out of every attention.

Parameter names and shapes (``d`` = d_model, ``f`` = d_ffn, weights are
stored input-major so a layer computes ``x @ W + b``)::

    encoder.embed.token                 [src_vocab, d]
    encoder.embed.segment               [2, d]
    encoder.embed.position              [max_positions, d]
    encoder.layer.{i}.attn_norm.{gain,bias}          [d]
    encoder.layer.{i}.attn.{q,k,v,o}.weight          [d, d]
    encoder.layer.{i}.attn.{q,k,v,o}.bias            [d]
    encoder.layer.{i}.ffn_norm.{gain,bias}           [d]
    encoder.layer.{i}.ffn.in.weight / .bias          [d, f] / [f]
    encoder.layer.{i}.ffn.out.weight / .bias         [f, d] / [d]
    encoder.final_norm.{gain,bias}      [d]
    decoder.embed.token                 [tgt_vocab, d]
    decoder.embed.position              [max_positions, d]
    decoder.layer.{i}.self_attn_norm / cross_attn_norm / ffn_norm .{gain,bias}
    decoder.layer.{i}.self_attn.* / cross_attn.*     as encoder attn
    decoder.layer.{i}.ffn.*                          as encoder ffn
    decoder.final_norm.{gain,bias}      [d]
    output.weight / output.bias         [d, tgt_vocab] / [tgt_vocab]
    mlm.transform.weight / .bias        [d, d] / [d]
    mlm.norm.{gain,bias}                [d]
    mlm.bias                            [src_vocab]
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .context import ExtendedInput, PositionMode
from .corpus import BOS_ID, PAD_ID
from .errors import EmptyPrefix, IdOutOfRange, IndexOutOfRange, ModelError, PositionOverflow
from .numerics import Tensor, ops


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    d_model: int = 32
    n_heads: int = 2
    d_ffn: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    max_positions: int = 512
    dropout: float = 0.1
    position_mode: PositionMode = PositionMode.REVERSED
    use_segment_embeddings: bool = True
    use_context_mask: bool = True
    dtype: str = "float32"
    init_std: float = 0.02
    layer_norm_eps: float = 1e-6

    def __post_init__(self):
        self.position_mode = PositionMode(self.position_mode)
        if self.d_model % self.n_heads:
            raise ModelError("d_model must be divisible by n_heads")
        for key in ("src_vocab", "tgt_vocab", "d_model", "n_heads", "d_ffn", "enc_layers", "dec_layers", "max_positions"):
            if getattr(self, key) <= 0:
                raise ModelError(f"{key} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["position_mode"] = self.position_mode.value
        return d


_ATTN = ("q", "k", "v", "o")


def _attn_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    out = {}
    for p in _ATTN:
        out[f"{prefix}.{p}.weight"] = (d, d)
        out[f"{prefix}.{p}.bias"] = (d,)
    return out


def _norm_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.gain": (d,), f"{prefix}.bias": (d,)}


def _ffn_shapes(prefix: str, d: int, f: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.in.weight": (d, f),
        f"{prefix}.in.bias": (f,),
        f"{prefix}.out.weight": (f, d),
        f"{prefix}.out.bias": (d,),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """The full name -> shape table, in a stable order."""
    d, f = cfg.d_model, cfg.d_ffn
    shapes: dict[str, tuple[int, ...]] = {
        "encoder.embed.token": (cfg.src_vocab, d),
        "encoder.embed.segment": (2, d),
        "encoder.embed.position": (cfg.max_positions, d),
    }
    for i in range(cfg.enc_layers):
        p = f"encoder.layer.{i}"
        shapes.update(_norm_shapes(f"{p}.attn_norm", d))
        shapes.update(_attn_shapes(f"{p}.attn", d))
        shapes.update(_norm_shapes(f"{p}.ffn_norm", d))
        shapes.update(_ffn_shapes(f"{p}.ffn", d, f))
    shapes.update(_norm_shapes("encoder.final_norm", d))
    shapes["decoder.embed.token"] = (cfg.tgt_vocab, d)
    shapes["decoder.embed.position"] = (cfg.max_positions, d)
    for i in range(cfg.dec_layers):
        p = f"decoder.layer.{i}"
        shapes.update(_norm_shapes(f"{p}.self_attn_norm", d))
        shapes.update(_attn_shapes(f"{p}.self_attn", d))
        shapes.update(_norm_shapes(f"{p}.cross_attn_norm", d))
        shapes.update(_attn_shapes(f"{p}.cross_attn", d))
        shapes.update(_norm_shapes(f"{p}.ffn_norm", d))
        shapes.update(_ffn_shapes(f"{p}.ffn", d, f))
    shapes.update(_norm_shapes("decoder.final_norm", d))
    shapes["output.weight"] = (d, cfg.tgt_vocab)
    shapes["output.bias"] = (cfg.tgt_vocab,)
    shapes["mlm.transform.weight"] = (d, d)
    shapes["mlm.transform.bias"] = (d,)
    shapes.update(_norm_shapes("mlm.norm", d))
    shapes["mlm.bias"] = (cfg.src_vocab,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, cfg.init_std, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


@dataclass
class EncoderBatch:
    """Right-padded batch of extended inputs (all arrays are [B, L])."""

    token_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    pad_mask: np.ndarray
    context_mask: np.ndarray
    source_spans: list[tuple[int, int]] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.token_ids.shape

    @classmethod
    def collate(cls, inputs: Sequence[ExtendedInput]) -> "EncoderBatch":
        b = len(inputs)
        n = max(len(x) for x in inputs)
        tok = np.full((b, n), PAD_ID, dtype=np.int64)
        seg = np.zeros((b, n), dtype=np.int64)
        pos = np.zeros((b, n), dtype=np.int64)
        pad = np.ones((b, n), dtype=bool)
        ctx = np.ones((b, n), dtype=bool)
        for i, x in enumerate(inputs):
            m = len(x)
            tok[i, :m] = x.token_ids
            seg[i, :m] = x.segment_ids
            pos[i, :m] = x.position_ids
            pad[i, :m] = False
            ctx[i, :m] = x.context_mask
        return cls(tok, seg, pos, pad, ctx, [x.source_span for x in inputs])


@dataclass
class EncoderOutput:
    hidden: Tensor  # [B, L, d_model]
    context_mask: np.ndarray  # [B, L], True = hidden from the decoder (context, [SEP], padding)
    pad_mask: np.ndarray  # [B, L]


def collate_targets(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


class Transformer:
    """Parameters plus the forward computations that read them."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    # -- building blocks -------------------------------------------------

    def _linear(self, x: Tensor, prefix: str) -> Tensor:
        return ops.add(ops.matmul(x, self.params[f"{prefix}.weight"]), self.params[f"{prefix}.bias"])

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        return ops.layer_norm(x, p[f"{prefix}.gain"], p[f"{prefix}.bias"], self.config.layer_norm_eps)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.config.n_heads
        return ops.transpose(ops.reshape(x, (b, n, h, d // h)), (0, 2, 1, 3))

    def _attention(self, xq: Tensor, xkv: Tensor, prefix: str, mask: np.ndarray, trace: list | None) -> Tensor:
        """Multi-head attention; ``mask`` is [B, Lq, Lk] or [B, 1, Lk], True = blocked."""
        b, nq, d = xq.shape
        q = self._split_heads(self._linear(xq, f"{prefix}.q"))
        k = self._split_heads(self._linear(xkv, f"{prefix}.k"))
        v = self._split_heads(self._linear(xkv, f"{prefix}.v"))
        scores = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(d // self.config.n_heads))
        weights = ops.masked_softmax(scores, mask[:, None, :, :])
        if trace is not None:
            trace.append((prefix, weights.data))
        ctx = ops.matmul(weights, v)
        ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, nq, d))
        return self._linear(ctx, f"{prefix}.o")

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        return self._linear(ops.gelu(self._linear(x, f"{prefix}.in")), f"{prefix}.out")

    def _drop(self, x: Tensor, train: bool, rng) -> Tensor:
        return ops.dropout(x, self.config.dropout, rng, train)

    # -- encoder -----------------------------------------------------------

    def _validate(self, batch: EncoderBatch) -> None:
        cfg = self.config
        if batch.position_ids.max(initial=0) >= cfg.max_positions:
            raise PositionOverflow(
                f"position id {int(batch.position_ids.max())} >= max_positions {cfg.max_positions}"
            )
        tok = batch.token_ids
        if tok.size and (tok.min() < 0 or tok.max() >= cfg.src_vocab):
            raise IdOutOfRange(f"source token id outside [0, {cfg.src_vocab})")

    def embed_source(self, batch: EncoderBatch) -> Tensor:
        """Summed token + segment + position embeddings, before dropout."""
        p = self.params
        x = ops.add(
            ops.embedding(p["encoder.embed.token"], batch.token_ids),
            ops.embedding(p["encoder.embed.position"], batch.position_ids),
        )
        if self.config.use_segment_embeddings:
            x = ops.add(x, ops.embedding(p["encoder.embed.segment"], batch.segment_ids))
        return x

    def encode(self, x: ExtendedInput | EncoderBatch, train: bool = False, rng=None) -> EncoderOutput:
        """Run the encoder. A single input is treated as a batch of one."""
        batch = EncoderBatch.collate([x]) if isinstance(x, ExtendedInput) else x
        self._validate(batch)
        h = self._drop(self.embed_source(batch), train, rng)
        self_mask = batch.pad_mask[:, None, :]
        for i in range(self.config.enc_layers):
            p = f"encoder.layer.{i}"
            n = self._norm(h, f"{p}.attn_norm")
            h = ops.add(h, self._drop(self._attention(n, n, f"{p}.attn", self_mask, None), train, rng))
            h = ops.add(h, self._drop(self._ffn(self._norm(h, f"{p}.ffn_norm"), f"{p}.ffn"), train, rng))
        h = self._norm(h, "encoder.final_norm")
        return EncoderOutput(h, batch.context_mask | batch.pad_mask, batch.pad_mask)

    # -- decoder -----------------------------------------------------------

    def cross_mask(self, enc: EncoderOutput, use_context_mask: bool | None = None) -> np.ndarray:
        use = self.config.use_context_mask if use_context_mask is None else use_context_mask
        return enc.context_mask if use else enc.pad_mask

    def decode_hidden(
        self,
        prefix,
        enc: EncoderOutput,
        train: bool = False,
        rng=None,
        use_context_mask: bool | None = None,
        trace: list | None = None,
    ) -> Tensor:
        tgt = np.atleast_2d(np.asarray(prefix, dtype=np.int64))
        if tgt.shape[1] == 0:
            raise EmptyPrefix("target prefix is empty")
        if np.any(tgt[:, 0] != BOS_ID):
            raise ModelError("target prefix must start with [BOS]")
        cfg = self.config
        b, t = tgt.shape
        if t > cfg.max_positions:
            raise PositionOverflow(f"target prefix length {t} > max_positions {cfg.max_positions}")
        if tgt.min() < 0 or tgt.max() >= cfg.tgt_vocab:
            raise IdOutOfRange(f"target token id outside [0, {cfg.tgt_vocab})")
        if enc.hidden.shape[0] != b:
            if enc.hidden.shape[0] != 1:
                raise ModelError("prefix batch does not match encoder batch")
            enc = _expand(enc, b)
        p = self.params
        h = ops.add(
            ops.embedding(p["decoder.embed.token"], tgt),
            ops.embedding(p["decoder.embed.position"], np.arange(t)),
        )
        h = self._drop(h, train, rng)
        causal = np.triu(np.ones((t, t), dtype=bool), k=1)[None, :, :] | (tgt == PAD_ID)[:, None, :]
        causal[:, :, 0] = False
        cross = self.cross_mask(enc, use_context_mask)[:, None, :]
        for i in range(cfg.dec_layers):
            q = f"decoder.layer.{i}"
            n = self._norm(h, f"{q}.self_attn_norm")
            h = ops.add(h, self._drop(self._attention(n, n, f"{q}.self_attn", causal, None), train, rng))
            n = self._norm(h, f"{q}.cross_attn_norm")
            h = ops.add(h, self._drop(self._attention(n, enc.hidden, f"{q}.cross_attn", cross, trace), train, rng))
            h = ops.add(h, self._drop(self._ffn(self._norm(h, f"{q}.ffn_norm"), f"{q}.ffn"), train, rng))
        return self._norm(h, "decoder.final_norm")

    def project(self, h: Tensor) -> Tensor:
        return self._linear(h, "output")

    def decode(self, prefix, enc: EncoderOutput, train: bool = False, rng=None, **kw) -> Tensor:
        """Next-token logits [B, T, tgt_vocab] for every prefix position."""
        return self.project(self.decode_hidden(prefix, enc, train, rng, **kw))

    # -- masked language model head ------------------------------------------

    def mlm_logits(self, enc: EncoderOutput, positions) -> Tensor:
        """Source-vocabulary logits at ``positions``.

        ``positions`` holds flat indices into the [B*L] grid of encoder states;
        for a single input these are plain sequence indices.
        """
        b, n, d = enc.hidden.shape
        idx = np.asarray(positions, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= b * n):
            raise IndexOutOfRange(f"MLM position outside [0, {b * n})")
        p = self.params
        if idx.size == 0:
            return Tensor(np.zeros((0, self.config.src_vocab), dtype=self.dtype))
        rows = ops.take_rows(ops.reshape(enc.hidden, (b * n, d)), idx)
        h = self._norm(ops.gelu(self._linear(rows, "mlm.transform")), "mlm.norm")
        return ops.add(ops.matmul(h, ops.swap_last(p["encoder.embed.token"])), p["mlm.bias"])


def _expand(enc: EncoderOutput, b: int) -> EncoderOutput:
    """Broadcast a single encoded input across ``b`` decoder rows."""
    zeros = Tensor(np.zeros((b, 1, 1), dtype=enc.hidden.dtype))
    return EncoderOutput(
        ops.add(enc.hidden, zeros),
        np.repeat(enc.context_mask, b, axis=0),
        np.repeat(enc.pad_mask, b, axis=0),
    )
