"""Masked-language-model corruption and the joint translation + MLM loss.

The training objective is the translation NLL of the target given the
(possibly corrupted) extended input, plus the NLL of the original tokens at
the corrupted positions, weighted by ``mlm_weight`` (1 by default).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .context import ExtendedInput, PositionMode, assemble, select_context
from .corpus import BOS_ID, EOS_ID, MASK_ID, PAD_ID, SPECIALS
from .errors import TrainingDiverged
from .model import EncoderBatch, Transformer, collate_targets
from .numerics import Tensor, ops

MASK_RATE = 0.16
MASK_CAP = 20


@dataclass(frozen=True)
class Example:
    """One training pair: an assembled source and a target wrapped in [BOS] ... [EOS]."""

    source: ExtendedInput
    target: tuple[int, ...]

    @classmethod
    def build(cls, source: ExtendedInput, target_ids: Sequence[int]) -> "Example":
        return cls(source, (BOS_ID, *target_ids, EOS_ID))

    @property
    def size(self) -> int:
        """Token count for batching: the larger of source and target."""
        return max(len(self.source), len(self.target))


def apply_mlm_masking(
    x: ExtendedInput,
    rng: np.random.Generator,
    vocab_size: int,
    rate: float = MASK_RATE,
    cap: int = MASK_CAP,
) -> tuple[ExtendedInput, list[int], list[int]]:
    """Corrupt random positions of ``x`` for MLM prediction.

    Every non-separator position is picked independently with probability
    ``rate``; if more than ``cap`` are picked a uniform subset of ``cap`` is
    kept, and if none are picked one is drawn uniformly. Picked positions
    become [MASK] 80% of the time, a random regular token 10%, and stay
    unchanged 10%.

    Returns the corrupted input, the sorted picked positions and the
    original token ids at those positions.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("rate must be in (0, 1)")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    start = x.source_span[0]
    sep = start - 1 if start > 0 else -1
    candidates = np.array([i for i in range(len(x)) if i != sep], dtype=np.int64)
    if candidates.size == 0:
        return x, [], []
    picked = candidates[rng.random(candidates.size) < rate]
    if picked.size > cap:
        picked = np.sort(rng.choice(picked, size=cap, replace=False))
    elif picked.size == 0:
        picked = candidates[rng.integers(candidates.size)][None]

    tokens = list(x.token_ids)
    originals = [tokens[i] for i in picked]
    n_regular = vocab_size - len(SPECIALS)
    for i in picked:
        r = rng.random()
        if r < 0.8 or n_regular <= 0:
            tokens[i] = MASK_ID
        elif r < 0.9:
            tokens[i] = len(SPECIALS) + int(rng.integers(n_regular))
    return x.replace_tokens(tokens), [int(i) for i in picked], originals


@dataclass
class MaskedBatch:
    inputs: list[ExtendedInput]
    masked_positions: list[list[int]]
    originals: list[list[int]]
    targets: list[tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def num_masked(self) -> int:
        return sum(len(m) for m in self.masked_positions)


def make_batch(
    examples: Sequence[Example],
    rng: np.random.Generator | None = None,
    vocab_size: int | None = None,
    mlm: bool = False,
    rate: float = MASK_RATE,
    cap: int = MASK_CAP,
) -> MaskedBatch:
    """Collect examples into a batch, corrupting sources when ``mlm`` is on."""
    inputs, positions, originals = [], [], []
    for ex in examples:
        if mlm:
            x, m, o = apply_mlm_masking(ex.source, rng, vocab_size, rate, cap)
        else:
            x, m, o = ex.source, [], []
        inputs.append(x)
        positions.append(m)
        originals.append(o)
    return MaskedBatch(inputs, positions, originals, [ex.target for ex in examples])


def translation_nll(model: Transformer, batch: MaskedBatch, enc, train=False, rng=None, smoothing=0.0) -> Tensor:
    """Mean per-token NLL of the targets (teacher forcing)."""
    y = collate_targets(batch.targets)
    y_in, y_out = y[:, :-1], y[:, 1:]
    h = model.decode_hidden(y_in, enc, train, rng)
    b, t, d = h.shape
    keep = np.flatnonzero(y_out.reshape(-1) != PAD_ID)
    rows = ops.take_rows(ops.reshape(h, (b * t, d)), keep)
    logits = model.project(rows)
    return ops.cross_entropy(logits, y_out.reshape(-1)[keep], smoothing)


def mlm_nll(model: Transformer, batch: MaskedBatch, enc) -> Tensor | None:
    """Mean NLL of the original tokens at masked positions; None when nothing is masked."""
    if batch.num_masked == 0:
        return None
    n = enc.hidden.shape[1]
    flat = [b * n + k for b, ms in enumerate(batch.masked_positions) for k in ms]
    targets = [t for os in batch.originals for t in os]
    return ops.cross_entropy(model.mlm_logits(enc, flat), targets)


def joint_loss(
    model: Transformer,
    batch: MaskedBatch,
    train: bool = False,
    rng=None,
    mlm_weight: float = 1.0,
    smoothing: float = 0.0,
    translation: bool = True,
) -> tuple[Tensor, Tensor | None, Tensor | None]:
    """Return ``(total, nll, mlm)``.

    ``nll`` or ``mlm`` is None when that term is absent (``translation=False``
    for encoder-only pretraining, or no masked positions). When the MLM term
    is absent ``total`` is the nll tensor itself.
    """
    enc = model.encode(EncoderBatch.collate(batch.inputs), train, rng)
    nll = translation_nll(model, batch, enc, train, rng, smoothing) if translation else None
    mlm = mlm_nll(model, batch, enc)
    if nll is None and mlm is None:
        raise ValueError("batch has neither a translation nor an MLM term")
    if mlm is None:
        total = nll
    elif nll is None:
        total = mlm if mlm_weight == 1.0 else ops.scale(mlm, mlm_weight)
    else:
        total = ops.add(nll, mlm if mlm_weight == 1.0 else ops.scale(mlm, mlm_weight))
    if not np.isfinite(total.data).all():
        raise TrainingDiverged(f"non-finite loss {float(total.data)}")
    return total, nll, mlm


def examples_from_documents(
    src_docs: Sequence[Sequence[Sequence[int]]],
    tgt_docs: Sequence[Sequence[Sequence[int]]],
    scope: str,
    limit: int,
    mode: PositionMode | str,
) -> list[Example]:
    """One example per sentence, with context drawn from the same document only."""
    out = []
    for src, tgt in zip(src_docs, tgt_docs):
        for j, (s, t) in enumerate(zip(src, tgt)):
            x = assemble(select_context(src, j, scope), s, limit, mode)
            out.append(Example.build(x, t))
    return out
