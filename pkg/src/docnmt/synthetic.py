"""Synthetic parallel documents whose translation needs earlier sentences.

Each document opens with a sentence carrying a topic marker (``mA`` or
``mB``). Every later sentence contains the ambiguous word ``amb``, which
translates to ``AMB_A`` or ``AMB_B`` depending on the document's marker.
All other words translate one-to-one (``wK`` -> ``WK``). A sentence-level
model can do no better than chance on ``amb``; a model that reads the
preceding sentences can be perfect.

Ordinary words follow a sparse bigram chain (each word has two possible
successors), so the source side also carries structure a masked language
model can learn from monolingual text alone.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .context import DEFAULT_LIMIT, PositionMode
from .corpus import Document, Vocab, build_vocab, document_sentences
from .model import EncoderBatch, Transformer, collate_targets
from .objective import Example, examples_from_documents, make_batch

AMBIGUOUS = "amb"
MARKERS = {"A": "mA", "B": "mB"}
SENSES = {"A": "AMB_A", "B": "AMB_B"}


def _walk(rng: np.random.Generator, n_words: int, length: int) -> list[int]:
    ids = [int(rng.integers(n_words))]
    while len(ids) < length:
        prev = ids[-1]
        ids.append((3 * prev + 1) % n_words if rng.random() < 0.5 else (7 * prev + 2) % n_words)
    return ids


def generate_documents(
    n_docs: int,
    seed: int = 0,
    n_words: int = 20,
    sentences: tuple[int, int] = (2, 4),
    words_per_sentence: tuple[int, int] = (2, 5),
) -> list[Document]:
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_docs):
        topic = "A" if rng.random() < 0.5 else "B"
        n_sent = int(rng.integers(sentences[0], sentences[1] + 1))
        src, tgt = [], []
        for s in range(n_sent):
            length = int(rng.integers(words_per_sentence[0], words_per_sentence[1] + 1))
            ids = _walk(rng, n_words, length)
            words = [f"w{i}" for i in ids]
            trans = [f"W{i}" for i in ids]
            k = int(rng.integers(len(words) + 1))
            if s == 0:
                words.insert(k, MARKERS[topic])
                trans.insert(k, MARKERS[topic].upper())
            else:
                words.insert(k, AMBIGUOUS)
                trans.insert(k, SENSES[topic])
            src.append(words)
            tgt.append(trans)
        docs.append(Document(d, src, tgt))
    return docs


def write_corpus(docs: Sequence[Document], src_path: str | Path, tgt_path: str | Path) -> None:
    with open(src_path, "w", encoding="utf-8") as fs, open(tgt_path, "w", encoding="utf-8") as ft:
        for doc in docs:
            for s, t in zip(doc.sentences, doc.targets):
                fs.write(" ".join(s) + "\n")
                ft.write(" ".join(t) + "\n")
            fs.write("\n")
            ft.write("\n")


@dataclass
class SyntheticTask:
    src_vocab: Vocab
    tgt_vocab: Vocab
    train_docs: list[Document]
    test_docs: list[Document]

    @classmethod
    def create(cls, n_train: int = 2000, n_test: int = 200, seed: int = 0, **shape) -> "SyntheticTask":
        """Vocabularies come from the training split only; ``shape`` goes to :func:`generate_documents`."""
        docs = generate_documents(n_train + n_test, seed, **shape)
        train, test = docs[:n_train], docs[n_train:]
        return cls(
            build_vocab(document_sentences(train, "source"), 1000),
            build_vocab(document_sentences(train, "target"), 1000),
            train,
            test,
        )

    def ids(self, docs: Sequence[Document]):
        src = [[self.src_vocab.encode(s) for s in d.sentences] for d in docs]
        tgt = [[self.tgt_vocab.encode(t) for t in d.targets] for d in docs]
        return src, tgt

    def examples(
        self, docs: Sequence[Document], scope: str, mode: PositionMode | str = PositionMode.REVERSED,
        limit: int = DEFAULT_LIMIT,
    ) -> list[Example]:
        src, tgt = self.ids(docs)
        return examples_from_documents(src, tgt, scope, limit, mode)


def disambiguation_accuracy(model: Transformer, examples: Sequence[Example], tgt_vocab: Vocab, batch_size: int = 128) -> float:
    """Fraction of ``amb`` occurrences translated to the right sense.

    Teacher-forced: at the target position holding the sense, the model's
    arg-max prediction must be exactly that sense token.
    """
    senses = {tgt_vocab.index[s] for s in SENSES.values() if s in tgt_vocab.index}
    hits = total = 0
    relevant = [ex for ex in examples if senses & set(ex.target)]
    for i in range(0, len(relevant), batch_size):
        group = relevant[i : i + batch_size]
        batch = make_batch(group)
        enc = model.encode(EncoderBatch.collate(batch.inputs))
        y = collate_targets(batch.targets)
        logits = model.decode(y[:, :-1], enc).data
        pred = logits.argmax(axis=-1)
        gold = y[:, 1:]
        where = np.isin(gold, list(senses))
        hits += int((pred[where] == gold[where]).sum())
        total += int(where.sum())
    return hits / total if total else float("nan")
