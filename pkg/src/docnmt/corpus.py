"""Document-aware corpus loading, vocabularies and id encoding.

Corpus format: UTF-8, one whitespace-pretokenized sentence per line, a blank
line ends a document. Parallel data is two line-aligned files with the same
blank-line layout.
"""
from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import AlignmentMismatch, CorpusError, EmptyCorpus, UnknownId

PAD, UNK, BOS, EOS, SEP, MASK = "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, BOS, EOS, SEP, MASK)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID, MASK_ID = range(6)


@dataclass
class Document:
    id: int
    sentences: list[list[str]]
    targets: list[list[str]] | None = None

    def __len__(self) -> int:
        return len(self.sentences)


def _read_blocks(path: Path) -> list[list[list[str]]]:
    blocks: list[list[list[str]]] = []
    current: list[list[str]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split()
            if tokens:
                current.append(tokens)
            elif current:
                blocks.append(current)
                current = []
    if current:
        blocks.append(current)
    return blocks


def load_documents(path: str | Path, target_path: str | Path | None = None) -> list[Document]:
    """Read a (optionally parallel) corpus into documents.

    Blank lines separate documents; runs of blank lines and trailing blank
    lines are ignored, so every sentence is non-empty.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    src = _read_blocks(path)
    if not src:
        raise EmptyCorpus(f"no sentences in {path}")
    tgt = None
    if target_path is not None:
        target_path = Path(target_path)
        if not target_path.exists():
            raise AlignmentMismatch(f"target file not found: {target_path}")
        tgt = _read_blocks(target_path)
        if [len(d) for d in src] != [len(d) for d in tgt]:
            raise AlignmentMismatch(
                f"{path} and {target_path} disagree on document/sentence layout "
                f"({sum(map(len, src))} vs {sum(map(len, tgt))} sentences)"
            )
    return [
        Document(i, sents, None if tgt is None else tgt[i]) for i, sents in enumerate(src)
    ]


class Vocab:
    """Token <-> id mapping with the six special tokens pinned to ids 0-5."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise CorpusError("vocab must start with the special tokens in fixed order")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusError("duplicate token in vocab")

    pad = PAD_ID
    unk = UNK_ID
    bos = BOS_ID
    eos = EOS_ID
    sep = SEP_ID
    mask = MASK_ID

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        n = len(self.tokens)
        for i in ids:
            if not 0 <= i < n:
                raise UnknownId(f"id {i} outside vocab of size {n}")
            out.append(self.tokens[i])
        return out

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh])


def build_vocab(sentences: Iterable[Sequence[str]], max_size: int, min_count: int = 1) -> Vocab:
    """Specials first, then tokens by descending frequency, ties lexicographic."""
    if max_size <= len(SPECIALS):
        raise CorpusError("max_size must exceed the number of special tokens")
    counts = Counter(t for sent in sentences for t in sent if t not in SPECIALS)
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(list(SPECIALS) + ranked[: max_size - len(SPECIALS)])


def document_sentences(docs: Iterable[Document], side: str = "source") -> Iterable[list[str]]:
    for d in docs:
        yield from (d.sentences if side == "source" else d.targets or [])


# Binarized corpus: magic, then a little-endian int32 stream in which every
# sentence is its ids followed by SENT_END and every document ends with DOC_END.
BIN_MAGIC = b"DID1"
SENT_END = -1
DOC_END = -2


def save_binarized(docs: Sequence[Sequence[Sequence[int]]], path: str | Path) -> None:
    stream: list[int] = []
    for doc in docs:
        for sent in doc:
            stream.extend(sent)
            stream.append(SENT_END)
        stream.append(DOC_END)
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(struct.pack(f"<{len(stream)}i", *stream))


def load_binarized(path: str | Path) -> list[list[list[int]]]:
    raw = Path(path).read_bytes()
    if raw[:4] != BIN_MAGIC:
        raise CorpusError(f"{path} is not a binarized corpus")
    body = raw[4:]
    if len(body) % 4:
        raise CorpusError(f"{path} is truncated")
    values = struct.unpack(f"<{len(body) // 4}i", body)
    docs: list[list[list[int]]] = []
    doc: list[list[int]] = []
    sent: list[int] = []
    for v in values:
        if v == SENT_END:
            doc.append(sent)
            sent = []
        elif v == DOC_END:
            docs.append(doc)
            doc = []
        else:
            sent.append(v)
    if sent or doc:
        raise CorpusError(f"{path} ends mid-document")
    return docs


def count_boundaries(path: str | Path) -> int:
    raw = Path(path).read_bytes()[4:]
    return sum(1 for (v,) in struct.iter_unpack("<i", raw) if v == DOC_END)
