"""Corpus-level BLEU-4 on pre-tokenized text, single reference, no smoothing.

Unsmoothed BLEU is 0 whenever any n-gram order has no match anywhere in the
corpus, which is common for very small test sets.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyCorpus, LengthMismatch

MAX_ORDER = 4


@dataclass
class BleuReport:
    bleu: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: list[int]
    totals: list[int]

    def lines(self) -> list[str]:
        out = [f"bleu={self.bleu:.4f}"]
        out += [f"p{n + 1}={p:.6f}" for n, p in enumerate(self.precisions)]
        out += [f"brevity_penalty={self.brevity_penalty:.6f}", f"hyp_len={self.hyp_len}", f"ref_len={self.ref_len}"]
        return out

    def summary(self) -> str:
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.bleu:.2f}, {ps} (BP={self.brevity_penalty:.3f}, "
            f"ratio={self.hyp_len / max(self.ref_len, 1):.3f}, hyp_len={self.hyp_len}, ref_len={self.ref_len})"
        )


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> BleuReport:
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyCorpus("no sentences to score")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) > 0.0:
        bleu = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    else:
        bleu = 0.0
    return BleuReport(bleu, precisions, bp, hyp_len, ref_len, matches, totals)
