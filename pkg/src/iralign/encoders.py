"""Dual encoders: self-attention over token ids and graph attention over
program graphs, fused by concatenation into one feature vector per function.

Both encoders are pure functions of (parameters, input); parameters live in
flat name-to-tensor dicts so checkpoints can serialize them generically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad
from .graphs import (
    EdgeKind,
    IrGraph,
    NUM_NODE_KINDS,
    NUM_OP_KINDS,
    NUM_SCOPE_KINDS,
    node_feature_indices,
)


class IdOutOfRange(Exception):
    pass


class EmptyGraph(Exception):
    pass


class DimensionMismatch(Exception):
    pass


@dataclass(frozen=True)
class EncoderProfile:
    name: str
    seq_layers: int
    heads: int
    d_seq: int
    max_len: int
    hie_layers: int
    d_hie: int
    ff_mult: int = 2

    def __post_init__(self):
        if self.d_seq % self.heads != 0:
            raise ValueError(f"d_seq {self.d_seq} not divisible by heads {self.heads}")
        if self.d_hie % 4 != 0:
            raise ValueError(f"d_hie {self.d_hie} must be a multiple of 4")


PROFILES = {
    "desk": EncoderProfile("desk", 2, 4, 32, 128, 2, 32),
    "paper": EncoderProfile("paper", 6, 8, 128, 512, 3, 128),
    "toy": EncoderProfile("toy", 1, 1, 8, 16, 1, 8),
}


@dataclass
class SeqParams:
    layers: int
    heads: int
    d_seq: int
    max_len: int
    ff_mult: int
    tensors: dict[str, ad.Tensor]


@dataclass
class HieParams:
    layers: int
    d_hie: int
    tensors: dict[str, ad.Tensor]


def _normal(rng, std, shape, dtype):
    return ad.Tensor(rng.normal(0.0, std, size=shape).astype(dtype))


def _zeros(shape, dtype):
    return ad.Tensor(np.zeros(shape, dtype=dtype))


def _ones(shape, dtype):
    return ad.Tensor(np.ones(shape, dtype=dtype))


# Graph-side init gains. Without them the graph view starts an order of
# magnitude weaker than the sequential view, so fusion, the alignment
# loss, and the classifier would all be dominated by one view at init.
_HIE_EMBED_GAIN = 2.5
_HIE_PROJ_GAIN = 2.0


def init_seq_params(
    vocab_size: int,
    profile: EncoderProfile,
    rng: np.random.Generator,
    dtype=np.float32,
) -> SeqParams:
    d = profile.d_seq
    d_ff = d * profile.ff_mult
    t: dict[str, ad.Tensor] = {}
    t["seq.embed"] = _normal(rng, 0.1, (vocab_size, d), dtype)
    t["seq.pos"] = _normal(rng, 0.1, (profile.max_len, d), dtype)
    proj_std = 1.0 / np.sqrt(d)
    for i in range(profile.seq_layers):
        p = f"seq.L{i}"
        for name in ("wq", "wk", "wv", "wo"):
            t[f"{p}.{name}"] = _normal(rng, proj_std, (d, d), dtype)
        t[f"{p}.ff1.w"] = _normal(rng, proj_std, (d, d_ff), dtype)
        t[f"{p}.ff1.b"] = _zeros((d_ff,), dtype)
        t[f"{p}.ff2.w"] = _normal(rng, 1.0 / np.sqrt(d_ff), (d_ff, d), dtype)
        t[f"{p}.ff2.b"] = _zeros((d,), dtype)
        for ln in ("ln1", "ln2"):
            t[f"{p}.{ln}.g"] = _ones((d,), dtype)
            t[f"{p}.{ln}.b"] = _zeros((d,), dtype)
    return SeqParams(
        profile.seq_layers, profile.heads, d, profile.max_len, profile.ff_mult, t
    )


def init_hie_params(
    profile: EncoderProfile, rng: np.random.Generator, dtype=np.float32
) -> HieParams:
    d = profile.d_hie
    t: dict[str, ad.Tensor] = {}
    emb_std = 0.1 * _HIE_EMBED_GAIN
    t["hie.node_kind"] = _normal(rng, emb_std, (NUM_NODE_KINDS, d // 2), dtype)
    t["hie.op_kind"] = _normal(rng, emb_std, (NUM_OP_KINDS, d // 4), dtype)
    t["hie.scope_kind"] = _normal(rng, emb_std, (NUM_SCOPE_KINDS, d // 4), dtype)
    base_std = 1.0 / np.sqrt(d)
    for i in range(profile.hie_layers):
        p = f"hie.L{i}"
        t[f"{p}.w"] = _normal(rng, _HIE_PROJ_GAIN * base_std, (d, d), dtype)
        t[f"{p}.b"] = _zeros((d,), dtype)
        t[f"{p}.a_src"] = _normal(rng, base_std, (d,), dtype)
        t[f"{p}.a_dst"] = _normal(rng, base_std, (d,), dtype)
        t[f"{p}.edge"] = _zeros((NUM_EDGE_SLOTS,), dtype)
    return HieParams(profile.hie_layers, d, t)


def _layer_norm(x: ad.Tensor, g: ad.Tensor, b: ad.Tensor, eps: float = 1e-5) -> ad.Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return g * (centered / (var + eps).sqrt()) + b


PAD_ID = 0
_MASK_BIAS = -1e9


def seq_encode(
    ids: np.ndarray,
    p: SeqParams,
    capture: Optional[list] = None,
) -> ad.Tensor:
    """Encode a (batch, length) id array into (batch, d_seq) features.

    PAD positions are masked out of attention and excluded from the final
    mean pool, so trailing padding cannot change the result. When capture
    is a list, per-layer attention weights are appended to it.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    vocab_size = p.tensors["seq.embed"].shape[0]
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise IdOutOfRange(f"ids must be in [0, {vocab_size})")
    batch, length = ids.shape
    if length > p.max_len:
        raise IdOutOfRange(f"length {length} exceeds max_len {p.max_len}")

    d, heads = p.d_seq, p.heads
    dk = d // heads
    dtype = p.tensors["seq.embed"].dtype
    not_pad = (ids != PAD_ID).astype(dtype)
    key_bias = np.where(ids == PAD_ID, _MASK_BIAS, 0.0).astype(dtype)
    key_bias = key_bias[:, None, None, :]  # broadcast over heads and queries

    x = ad.take(p.tensors["seq.embed"], ids) + p.tensors["seq.pos"][:length]
    for i in range(p.layers):
        pre = f"seq.L{i}"
        flat = x.reshape(batch * length, d)
        q = (flat @ p.tensors[f"{pre}.wq"]).reshape(batch, length, heads, dk)
        k = (flat @ p.tensors[f"{pre}.wk"]).reshape(batch, length, heads, dk)
        v = (flat @ p.tensors[f"{pre}.wv"]).reshape(batch, length, heads, dk)
        q = q.transpose(0, 2, 1, 3)
        k = k.transpose(0, 2, 1, 3)
        v = v.transpose(0, 2, 1, 3)
        scores = (q @ k.transpose(0, 1, 3, 2)) * float(1.0 / np.sqrt(dk)) + key_bias
        attn = ad.softmax(scores, axis=-1)
        if capture is not None:
            capture.append(np.array(attn.data))
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(batch * length, d)
        out = (ctx @ p.tensors[f"{pre}.wo"]).reshape(batch, length, d)
        x = _layer_norm(x + out, p.tensors[f"{pre}.ln1.g"], p.tensors[f"{pre}.ln1.b"])
        flat = x.reshape(batch * length, d)
        h = (flat @ p.tensors[f"{pre}.ff1.w"] + p.tensors[f"{pre}.ff1.b"]).relu()
        ff = (h @ p.tensors[f"{pre}.ff2.w"] + p.tensors[f"{pre}.ff2.b"]).reshape(
            batch, length, d
        )
        x = _layer_norm(x + ff, p.tensors[f"{pre}.ln2.g"], p.tensors[f"{pre}.ln2.b"])

    weights = not_pad[:, :, None]
    counts = not_pad.sum(axis=1)
    if np.any(counts == 0):
        raise IdOutOfRange("a sequence contains only PAD tokens")
    return (x * weights).sum(axis=1) * (1.0 / counts)[:, None]


# Directed message slots: one per (edge kind, direction) plus a self loop.
EDGE_SLOT = {
    (EdgeKind.AST, False): 0,
    (EdgeKind.AST, True): 1,
    (EdgeKind.DATA, False): 2,
    (EdgeKind.DATA, True): 3,
    (EdgeKind.CTRL, False): 4,
    (EdgeKind.CTRL, True): 5,
}
SELF_SLOT = 6
NUM_EDGE_SLOTS = 7


@dataclass
class GraphBatch:
    node_kind_idx: np.ndarray
    op_kind_idx: np.ndarray
    scope_kind_idx: np.ndarray
    graph_ids: np.ndarray
    msg_src: np.ndarray
    msg_dst: np.ndarray
    msg_kind: np.ndarray
    num_graphs: int

    @property
    def num_nodes(self) -> int:
        return len(self.node_kind_idx)

    @staticmethod
    def from_graphs(graph_list: Iterable[IrGraph]) -> "GraphBatch":
        node_parts = []
        op_parts = []
        scope_parts = []
        gid_parts = []
        src_parts = []
        dst_parts = []
        kind_parts = []
        offset = 0
        count = 0
        for gid, g in enumerate(graph_list):
            count += 1
            node_idx, op_idx, scope_idx = node_feature_indices(g)
            n = len(node_idx)
            node_parts.append(node_idx)
            op_parts.append(op_idx)
            scope_parts.append(scope_idx)
            gid_parts.append(np.full(n, gid, dtype=np.int64))
            src = []
            dst = []
            kinds = []
            for s, t, kind in g.edges:
                src.append(s + offset)
                dst.append(t + offset)
                kinds.append(EDGE_SLOT[(kind, False)])
                src.append(t + offset)
                dst.append(s + offset)
                kinds.append(EDGE_SLOT[(kind, True)])
            for v in range(n):
                src.append(v + offset)
                dst.append(v + offset)
                kinds.append(SELF_SLOT)
            src_parts.append(np.array(src, dtype=np.int64))
            dst_parts.append(np.array(dst, dtype=np.int64))
            kind_parts.append(np.array(kinds, dtype=np.int64))
            offset += n
        if count == 0 or offset == 0:
            raise EmptyGraph("no nodes in graph batch")
        return GraphBatch(
            np.concatenate(node_parts),
            np.concatenate(op_parts),
            np.concatenate(scope_parts),
            np.concatenate(gid_parts),
            np.concatenate(src_parts),
            np.concatenate(dst_parts),
            np.concatenate(kind_parts),
            count,
        )


def hie_encode(
    batch: GraphBatch,
    p: HieParams,
    capture: Optional[list] = None,
) -> ad.Tensor:
    """Encode a graph batch into (num_graphs, d_hie) features.

    Each layer sends messages along both edge directions plus a self loop;
    attention over a node's incoming messages carries a per-(kind, direction)
    logit offset. Output is the per-graph mean over node states.
    """
    if batch.num_nodes == 0:
        raise EmptyGraph("no nodes")
    x = ad.concat(
        [
            ad.take(p.tensors["hie.node_kind"], batch.node_kind_idx),
            ad.take(p.tensors["hie.op_kind"], batch.op_kind_idx),
            ad.take(p.tensors["hie.scope_kind"], batch.scope_kind_idx),
        ],
        axis=1,
    )
    n = batch.num_nodes
    for i in range(p.layers):
        pre = f"hie.L{i}"
        h = x @ p.tensors[f"{pre}.w"]
        h_src = h[batch.msg_src]
        h_dst = h[batch.msg_dst]
        score_src = (h_src * p.tensors[f"{pre}.a_src"]).sum(axis=1)
        score_dst = (h_dst * p.tensors[f"{pre}.a_dst"]).sum(axis=1)
        logits = (score_src + score_dst).leaky_relu(0.2) + ad.take(
            p.tensors[f"{pre}.edge"], batch.msg_kind
        )
        alpha = ad.segment_softmax(logits, batch.msg_dst, n)
        if capture is not None:
            capture.append((np.array(alpha.data), batch.msg_dst.copy()))
        messages = alpha.reshape(-1, 1) * h_src
        agg = ad.segment_sum(messages, batch.msg_dst, n)
        x = (agg + p.tensors[f"{pre}.b"]).elu()

    counts = np.bincount(batch.graph_ids, minlength=batch.num_graphs)
    pooled = ad.segment_sum(x, batch.graph_ids, batch.num_graphs)
    return pooled * (1.0 / counts)[:, None].astype(x.dtype)


def fuse_features(h_seq: Optional[ad.Tensor], h_hie: Optional[ad.Tensor]) -> ad.Tensor:
    """Concatenate the two views; either may be absent for ablations."""
    if h_seq is None and h_hie is None:
        raise DimensionMismatch("both views absent")
    if h_seq is None:
        return h_hie
    if h_hie is None:
        return h_seq
    if h_seq.shape[0] != h_hie.shape[0]:
        raise DimensionMismatch(f"batch sizes differ: {h_seq.shape} vs {h_hie.shape}")
    return ad.concat([h_seq, h_hie], axis=1)
