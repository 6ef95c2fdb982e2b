"""NTC1 named-tensor checkpoints and pretrained-encoder initialisation.

NTC1 layout (little-endian)::

    b"NTC1"  u32 entry_count
    entry_count x { u16 name_len, name (UTF-8), u8 dtype (0=f32, 1=f64),
                    u8 rank, rank x u32 dim, raw row-major data }
    optional trailer: b"META" u32 pair_count
                      pair_count x { u16 key_len, key, u32 value_len, value }

The trailer is omitted when there is no metadata, so an empty checkpoint is
exactly 8 bytes.

Encoder tensors follow the names in :mod:`docnmt.model`. A pretrained
language model converted to this naming (``encoder.embed.*``,
``encoder.layer.{i}.*``, ``encoder.final_norm.*``) can initialise the
translation encoder with :func:`init_encoder`.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, CheckpointError, DuplicateName, ShapeMismatch, TruncatedFile

MAGIC = b"NTC1"
META_MAGIC = b"META"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class Checkpoint:
    """Ordered name -> array map plus string metadata."""

    def __init__(self, entries: dict[str, np.ndarray] | None = None, metadata: dict[str, str] | None = None):
        self.entries: dict[str, np.ndarray] = {}
        self.metadata: dict[str, str] = dict(metadata or {})
        for name, arr in (entries or {}).items():
            self.add(name, arr)

    def add(self, name: str, arr) -> None:
        if name in self.entries:
            raise DuplicateName(name)
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        self.entries[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint) or self.metadata != other.metadata:
            return False
        if list(self.entries) != list(other.entries):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.entries.values(), other.entries.values())
        )

    @classmethod
    def from_params(cls, params, prefix: str = "", metadata: dict[str, str] | None = None) -> "Checkpoint":
        return cls(
            {name: t.data.copy() for name, t in params.items() if name.startswith(prefix)}, metadata
        )


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<I", len(ckpt.entries))]
    for name, arr in ckpt.entries.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    if ckpt.metadata:
        out.append(META_MAGIC + struct.pack("<I", len(ckpt.metadata)))
        for k, v in ckpt.metadata.items():
            kb, vb = k.encode("utf-8"), v.encode("utf-8")
            out.append(struct.pack("<H", len(kb)) + kb + struct.pack("<I", len(vb)) + vb)
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {buf[:4]!r}")
    r = _Reader(buf)
    r.take(4)
    (count,) = r.unpack("<I")
    ckpt = Checkpoint()
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _DTYPES:
            raise BadMagic(f"{name}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I")
        dt = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(size), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        ckpt.add(name, arr)
    if r.pos < len(buf):
        if r.take(4) != META_MAGIC:
            raise BadMagic("unexpected bytes after the last entry")
        (pairs,) = r.unpack("<I")
        for _ in range(pairs):
            (kn,) = r.unpack("<H")
            k = r.take(kn).decode("utf-8")
            (vn,) = r.unpack("<I")
            ckpt.metadata[k] = r.take(vn).decode("utf-8")
        if r.pos != len(buf):
            raise BadMagic("trailing bytes after metadata")
    return ckpt


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return from_bytes(raw)


@dataclass
class InitReport:
    initialized: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)  # checkpoint entries left unused
    missing: list[str] = field(default_factory=list)  # encoder params absent from the checkpoint
    shape_mismatched: list[str] = field(default_factory=list)

    def summary(self) -> str:
        return (
            f"initialized={len(self.initialized)} skipped={len(self.skipped)} "
            f"missing={len(self.missing)} shape_mismatched={len(self.shape_mismatched)}"
        )


_LAYER = re.compile(r"^encoder\.layer\.(\d+)\.")


def is_encoder_side(name: str) -> bool:
    """Tensors a pretrained LM may initialise: the encoder (incl. the tied token table)."""
    return name.startswith("encoder.")


def _width(ckpt: Checkpoint) -> int | None:
    for name in ("encoder.embed.token", "encoder.final_norm.gain"):
        if name in ckpt:
            return ckpt[name].shape[-1]
    return None


def init_encoder(model, ckpt: Checkpoint, strict: bool = False) -> InitReport:
    """Copy matching encoder tensors from ``ckpt`` into ``model`` in place.

    Layers are matched by index, so a deeper checkpoint contributes its bottom
    ``enc_layers`` layers. A longer position table is truncated to
    ``max_positions`` rows. Decoder, output and MLM-head parameters are never
    touched. A checkpoint of a different model width matches nothing, even
    tensors whose shape happens to agree. Shape mismatches are reported, or
    raised when ``strict``; either way nothing is copied unless every
    planned copy is valid.
    """
    report = InitReport()
    used: set[str] = set()
    plan: list[tuple[str, np.ndarray]] = []
    width = _width(ckpt)
    wrong_width = width is not None and width != model.config.d_model
    for name, tensor in model.params.items():
        if not is_encoder_side(name):
            continue
        if name not in ckpt:
            report.missing.append(name)
            continue
        used.add(name)
        src = ckpt[name]
        target_shape = tensor.data.shape
        if name == "encoder.embed.position" and src.ndim == 2 and src.shape[1] == target_shape[1] and src.shape[0] > target_shape[0]:
            src = src[: target_shape[0]]
        if wrong_width or src.shape != target_shape:
            report.shape_mismatched.append(name)
            continue
        plan.append((name, src))
    if strict and report.shape_mismatched:
        first = report.shape_mismatched[0]
        raise ShapeMismatch(
            f"{first}: checkpoint {ckpt[first].shape} vs model {model.params[first].data.shape}"
            f" ({len(report.shape_mismatched)} mismatched)"
        )
    for name, src in plan:
        tensor = model.params[name]
        tensor.data = src.astype(tensor.data.dtype, copy=True)
        report.initialized.append(name)
    report.skipped = [n for n in ckpt.entries if n not in used]
    return report


def checkpoint_layers(ckpt: Checkpoint) -> int:
    idx = [int(m.group(1)) for n in ckpt.entries if (m := _LAYER.match(n))]
    return max(idx) + 1 if idx else 0
