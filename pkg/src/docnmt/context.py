"""Assembly of the extended encoder input: context, [SEP], then the source.

Segment ids mark the source (1) against context and separator (0); position
ids are either left-to-right or "reversed", where the source block is
numbered first so its positions never depend on how much context precedes it.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .corpus import SEP_ID
from .errors import EmptySource, SourceTooLong

DEFAULT_LIMIT = 512


class PositionMode(str, enum.Enum):
    SEQUENTIAL = "sequential"
    REVERSED = "reversed"


@dataclass(frozen=True)
class ExtendedInput:
    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    position_ids: tuple[int, ...]
    source_span: tuple[int, int]
    context_mask: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def source_ids(self) -> tuple[int, ...]:
        start, end = self.source_span
        return self.token_ids[start:end]

    @property
    def context_length(self) -> int:
        """Number of context tokens, excluding [SEP]."""
        return max(self.source_span[0] - 1, 0)

    def replace_tokens(self, token_ids: Sequence[int]) -> "ExtendedInput":
        """Same layout with different token ids (used by MLM masking)."""
        if len(token_ids) != len(self.token_ids):
            raise ValueError("replacement must keep the sequence length")
        return ExtendedInput(
            tuple(token_ids), self.segment_ids, self.position_ids, self.source_span, self.context_mask
        )


def assemble(
    context_sentences: Sequence[Sequence[int]],
    source: Sequence[int],
    limit: int = DEFAULT_LIMIT,
    mode: PositionMode | str = PositionMode.REVERSED,
    sep_id: int = SEP_ID,
) -> ExtendedInput:
    """Concatenate ``context_sentences`` (oldest first), [SEP] and ``source``.

    When the result would exceed ``limit`` the oldest context tokens are
    dropped; [SEP] goes too if no context token survives.
    """
    mode = PositionMode(mode)
    n_src = len(source)
    if n_src == 0:
        raise EmptySource("source sentence is empty")
    if n_src > limit:
        raise SourceTooLong(f"source has {n_src} tokens, limit is {limit}")

    context = [t for sent in context_sentences for t in sent]
    room = limit - n_src - 1
    context = context[len(context) - room :] if room > 0 else []

    prefix = context + [sep_id] if context else []
    n_pre = len(prefix)
    tokens = tuple(prefix) + tuple(source)
    total = len(tokens)

    if mode is PositionMode.SEQUENTIAL:
        positions = tuple(range(total))
    else:
        # source 0..n_src-1, [SEP] n_src, context n_src+1.. left to right
        ctx_pos = [n_src + 1 + i for i in range(len(context))]
        sep_pos = [n_src] if context else []
        positions = tuple(ctx_pos + sep_pos + list(range(n_src)))

    return ExtendedInput(
        token_ids=tokens,
        segment_ids=(0,) * n_pre + (1,) * n_src,
        position_ids=positions,
        source_span=(n_pre, total),
        context_mask=(True,) * n_pre + (False,) * n_src,
    )


def cross_attention_mask(x: ExtendedInput) -> tuple[bool, ...]:
    """Positions the decoder may not attend to (context and [SEP])."""
    return x.context_mask


def select_context(sentences: Sequence[Sequence[int]], index: int, scope: str) -> list[Sequence[int]]:
    """Preceding same-document sentences for sentence ``index``.

    ``scope`` is ``none``, ``small`` (the immediately previous sentence) or
    ``large`` (everything before it; ``assemble`` enforces the length cap).
    """
    if scope == "none" or index == 0:
        return []
    if scope == "small":
        return [sentences[index - 1]]
    if scope == "large":
        return list(sentences[:index])
    raise ValueError(f"unknown context scope {scope!r}")
