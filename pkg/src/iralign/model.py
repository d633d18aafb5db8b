"""Model bundle and its binary checkpoint format.

Layout, all little-endian: magic "S2VY", u32 format version, u32 metadata
length, metadata JSON (sorted keys, no timestamps), then tensors sorted by
name as (u32 name length, name bytes, u32 rank, u64 per dim, float32 data).
Identical bundles serialize to identical bytes, so run determinism can be
checked by hashing files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .encoders import EncoderProfile, HieParams, SeqParams

MAGIC = b"S2VY"
FORMAT_VERSION = 1
NORM_PLACEMENT = "post"

TASKS = ("re", "wr", "ut")


class CorruptCheckpoint(Exception):
    pass


class VocabHashMismatch(Exception):
    pass


@dataclass
class ClassifierParams:
    task: str
    input_dim: int
    dropout: float
    tensors: dict[str, ad.Tensor]


@dataclass
class ModelBundle:
    profile: EncoderProfile
    seq: Optional[SeqParams]
    hie: Optional[HieParams]
    classifiers: dict[str, ClassifierParams]
    vocab_hash: str
    metadata: dict = field(default_factory=dict)
    frozen: bool = False

    def all_tensors(self) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}
        if self.seq is not None:
            out.update(self.seq.tensors)
        if self.hie is not None:
            out.update(self.hie.tensors)
        for clf in self.classifiers.values():
            out.update(clf.tensors)
        return out

    def encoder_tensors(self) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}
        if self.seq is not None:
            out.update(self.seq.tensors)
        if self.hie is not None:
            out.update(self.hie.tensors)
        return out

    def fused_dim(self) -> int:
        dim = 0
        if self.seq is not None:
            dim += self.seq.d_seq
        if self.hie is not None:
            dim += self.hie.d_hie
        return dim


def init_classifier_params(
    task: str,
    input_dim: int,
    rng: np.random.Generator,
    dropout: float = 0.3,
    hidden: Optional[int] = None,
    dtype=np.float32,
) -> ClassifierParams:
    """Two ReLU hidden layers and a single sigmoid output unit."""
    if hidden is None:
        hidden = max(8, input_dim // 2)
    std1 = 1.0 / np.sqrt(input_dim)
    std2 = 1.0 / np.sqrt(hidden)
    p = f"clf.{task}"
    t = {
        f"{p}.h1.w": ad.Tensor(rng.normal(0.0, std1, (input_dim, hidden)).astype(dtype)),
        f"{p}.h1.b": ad.Tensor(np.zeros(hidden, dtype=dtype)),
        f"{p}.h2.w": ad.Tensor(rng.normal(0.0, std2, (hidden, hidden)).astype(dtype)),
        f"{p}.h2.b": ad.Tensor(np.zeros(hidden, dtype=dtype)),
        f"{p}.out.w": ad.Tensor(rng.normal(0.0, std2, (hidden, 1)).astype(dtype)),
        f"{p}.out.b": ad.Tensor(np.zeros(1, dtype=dtype)),
    }
    return ClassifierParams(task, input_dim, dropout, t)


def _profile_dict(profile: EncoderProfile) -> dict:
    return {
        "name": profile.name,
        "seq_layers": profile.seq_layers,
        "heads": profile.heads,
        "d_seq": profile.d_seq,
        "max_len": profile.max_len,
        "hie_layers": profile.hie_layers,
        "d_hie": profile.d_hie,
        "ff_mult": profile.ff_mult,
    }


def _tensor_block(name: str, arr: np.ndarray) -> bytes:
    name_bytes = name.encode("utf-8")
    parts = [struct.pack("<I", len(name_bytes)), name_bytes]
    parts.append(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        parts.append(struct.pack("<Q", dim))
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def tensors_bytes(tensors: dict[str, ad.Tensor]) -> bytes:
    return b"".join(
        _tensor_block(name, tensors[name].data) for name in sorted(tensors)
    )


def checkpoint_bytes(bundle: ModelBundle) -> bytes:
    meta = {
        "format": FORMAT_VERSION,
        "norm_placement": NORM_PLACEMENT,
        "profile": _profile_dict(bundle.profile),
        "views": {
            "seq": bundle.seq is not None,
            "hie": bundle.hie is not None,
        },
        "vocab_size": (
            bundle.seq.tensors["seq.embed"].shape[0] if bundle.seq is not None else 0
        ),
        "classifiers": {
            task: {"input_dim": clf.input_dim, "dropout": clf.dropout}
            for task, clf in sorted(bundle.classifiers.items())
        },
        "vocab_hash": bundle.vocab_hash,
        "frozen": bundle.frozen,
        "extra": bundle.metadata,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join(
        [
            MAGIC,
            struct.pack("<I", FORMAT_VERSION),
            struct.pack("<I", len(meta_bytes)),
            meta_bytes,
            tensors_bytes(bundle.all_tensors()),
        ]
    )


def model_hash(bundle: ModelBundle) -> str:
    return hashlib.sha256(checkpoint_bytes(bundle)).hexdigest()


def write_checkpoint(bundle: ModelBundle, path) -> str:
    blob = checkpoint_bytes(bundle)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpoint("unexpected end of file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    @property
    def done(self) -> bool:
        return self.pos == len(self.blob)


def read_checkpoint(path, expect_vocab_hash: Optional[str] = None) -> ModelBundle:
    """Rebuild a bundle; verifies the stored vocabulary hash when given one."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported format version {version}")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    if expect_vocab_hash is not None and meta["vocab_hash"] != expect_vocab_hash:
        raise VocabHashMismatch(
            f"checkpoint built for vocabulary {meta['vocab_hash'][:12]}..."
        )

    tensors: dict[str, ad.Tensor] = {}
    while not r.done:
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u64() for _ in range(rank))
        n_items = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(4 * n_items), dtype="<f4").reshape(dims)
        tensors[name] = ad.Tensor(data.astype(np.float32))

    prof = meta["profile"]
    profile = EncoderProfile(
        prof["name"],
        prof["seq_layers"],
        prof["heads"],
        prof["d_seq"],
        prof["max_len"],
        prof["hie_layers"],
        prof["d_hie"],
        prof["ff_mult"],
    )
    seq = None
    if meta["views"]["seq"]:
        seq_t = {k: v for k, v in tensors.items() if k.startswith("seq.")}
        seq = SeqParams(
            profile.seq_layers,
            profile.heads,
            profile.d_seq,
            profile.max_len,
            profile.ff_mult,
            seq_t,
        )
    hie = None
    if meta["views"]["hie"]:
        hie_t = {k: v for k, v in tensors.items() if k.startswith("hie.")}
        hie = HieParams(profile.hie_layers, profile.d_hie, hie_t)
    classifiers = {}
    for task, info in meta["classifiers"].items():
        clf_t = {k: v for k, v in tensors.items() if k.startswith(f"clf.{task}.")}
        classifiers[task] = ClassifierParams(
            task, info["input_dim"], info["dropout"], clf_t
        )
    return ModelBundle(
        profile=profile,
        seq=seq,
        hie=hie,
        classifiers=classifiers,
        vocab_hash=meta["vocab_hash"],
        metadata=meta.get("extra", {}),
        frozen=meta.get("frozen", False),
    )
