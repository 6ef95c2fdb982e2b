"""Beam search with the GNMT length penalty."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .context import ExtendedInput
from .corpus import BOS_ID, EOS_ID, PAD_ID
from .model import EncoderOutput, Transformer

# never generated: padding, and a second sentence start
BANNED = (PAD_ID, BOS_ID)


def length_penalty(length: int, alpha: float = 1.0) -> float:
    if length < 1:
        raise ValueError("length must be >= 1")
    return ((5.0 + length) / 6.0) ** alpha


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]  # starts with [BOS]
    log_prob: float
    finished: bool = False

    @property
    def length(self) -> int:
        """Generated tokens, [EOS] included, [BOS] excluded."""
        return len(self.tokens) - 1

    def score(self, alpha: float = 1.0) -> float:
        return self.log_prob / length_penalty(max(self.length, 1), alpha)

    @property
    def output(self) -> tuple[int, ...]:
        """Generated tokens without [BOS]/[EOS]."""
        body = self.tokens[1:]
        return body[:-1] if self.finished else body


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def next_log_probs(model: Transformer, prefixes: list[tuple[int, ...]], enc: EncoderOutput) -> np.ndarray:
    logits = model.decode(np.array(prefixes, dtype=np.int64), enc).data[:, -1, :]
    logp = _log_softmax(logits)
    logp[:, list(BANNED)] = -np.inf
    return logp


def _best(pool: list[Hypothesis], alpha: float) -> Hypothesis:
    return min(pool, key=lambda h: (-h.score(alpha), h.tokens))


def default_max_len(x: ExtendedInput) -> int:
    return 2 * len(x.source_ids) + 10


def beam_search(
    model: Transformer,
    x: ExtendedInput,
    beam: int = 4,
    max_len: int | None = None,
    alpha: float = 1.0,
    encoder_hook: Callable[[EncoderOutput], EncoderOutput] | None = None,
) -> Hypothesis:
    """Best hypothesis under ``log_prob / length_penalty``.

    Each step expands every live hypothesis by every allowed token and keeps
    the ``beam`` best candidates by log-probability (ties: lexicographically
    smaller token ids). Candidates ending in [EOS] leave the beam as finished.
    Search stops once no live hypothesis can still beat the best finished
    one, or at ``max_len`` generated tokens, where live hypotheses are
    force-finished.

    ``encoder_hook`` may rewrite the encoder output before decoding (used to
    check that masked context states cannot influence the result).
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    max_len = default_max_len(x) if max_len is None else max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    cap = min(max_len, model.config.max_positions - 1)
    enc = model.encode(x)
    if encoder_hook is not None:
        enc = encoder_hook(enc)

    live = [Hypothesis((BOS_ID,), 0.0)]
    finished: list[Hypothesis] = []
    for step in range(1, cap + 1):
        logp = next_log_probs(model, [h.tokens for h in live], enc)
        scores = np.array([h.log_prob for h in live])[:, None] + logp
        candidates: list[tuple[float, tuple[int, ...]]] = []
        k = min(beam, scores.shape[1])
        for row, h in enumerate(live):
            s = scores[row]
            threshold = np.partition(s, -k)[-k]
            for tok in np.flatnonzero((s >= threshold) & np.isfinite(s)):
                candidates.append((float(s[tok]), h.tokens + (int(tok),)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for lp, toks in candidates[:beam]:
            if toks[-1] == EOS_ID:
                finished.append(Hypothesis(toks, lp, True))
            else:
                live.append(Hypothesis(toks, lp))
        if not live:
            break
        if finished:
            best = max(h.score(alpha) for h in finished)
            # log-probs only fall, and the penalty is largest at the cap
            bound = max(h.log_prob for h in live) / length_penalty(cap, alpha)
            if best >= bound:
                live = []
                break
    finished.extend(live)
    return _best(finished, alpha)


def greedy_decode(model: Transformer, x: ExtendedInput, max_len: int | None = None) -> Hypothesis:
    max_len = default_max_len(x) if max_len is None else max_len
    cap = min(max_len, model.config.max_positions - 1)
    enc = model.encode(x)
    tokens, total = (BOS_ID,), 0.0
    for _ in range(cap):
        logp = next_log_probs(model, [tokens], enc)[0]
        tok = int(np.argmax(logp))
        tokens += (tok,)
        total += float(logp[tok])
        if tok == EOS_ID:
            return Hypothesis(tokens, total, True)
    return Hypothesis(tokens, total)
