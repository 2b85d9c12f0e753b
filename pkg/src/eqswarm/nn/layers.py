"""Layer zoo: linear/MLP blocks, masked multi-head self-attention with a
position-wise feedforward residual, mean-aggregation graph convolution and
the role-bucketed encoder that pools and concatenates per-role summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from ..graphs import RoleGraphBatch, RoleGraphs
from ..sim import Role
from .tensor import Tensor, as_tensor, concat

# Additive attention bias for masked keys; exp() underflows to exactly zero,
# so padded nodes receive softmax weight 0 and padding never changes results.
MASK_NEG = -1e30


@dataclass
class LinearParams:
    w: Tensor  # (d_in, d_out)
    b: Tensor  # (d_out,)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """Affine map over the last axis; collapses leading axes into one GEMM."""
    if x.shape[-1] != p.w.shape[0]:
        raise ContractError(
            f"linear expects last dim {p.w.shape[0]}, got {x.shape[-1]}"
        )
    lead = x.shape[:-1]
    y = x.reshape(-1, x.shape[-1]) @ p.w + p.b
    return y.reshape(*lead, p.w.shape[1])


@dataclass
class MlpParams:
    layers: list[LinearParams]


def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    """ReLU MLP; no activation after the last layer."""
    h = x
    for i, layer in enumerate(p.layers):
        h = linear(h, layer)
        if i + 1 < len(p.layers):
            h = h.relu()
    return h


@dataclass
class AttentionLayerParams:
    """One residual self-attention block.

    Projections are stored head-combined: wq/wk/wv are (d, H*dh) with head h
    occupying columns [h*dh, (h+1)*dh).  `ff` is the two-layer position-wise
    feedforward applied to the concatenated head outputs before the residual
    addition.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    ff: MlpParams
    heads: int

    @property
    def head_dim(self) -> int:
        return self.wq.shape[1] // self.heads


def attention_layer_forward(
    x: Tensor, p: AttentionLayerParams, mask: np.ndarray | None = None
) -> Tensor:
    """Dense multi-head self-attention with residual feedforward:
    out_u = x_u + ff(concat_h sum_v softmax_v(q_u.k_v / sqrt(dh)) v_v).

    `x` is (B, n, d); `mask` is (B, n) with 1.0 for real nodes.  Rows whose
    mask is 0 still produce (finite) values but are excluded as keys, so they
    cannot influence real nodes.
    """
    if x.ndim != 3:
        raise ContractError(f"attention input must be (B, n, d), got {x.shape}")
    b, n, d = x.shape
    h = p.heads
    dh = p.head_dim
    if h * dh != d or p.wq.shape[0] != d:
        raise ContractError(
            f"attention width mismatch: d={d}, heads={h}, head_dim={dh}"
        )
    x2 = x.reshape(b * n, d)
    q = (x2 @ p.wq).reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    k = (x2 @ p.wk).reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    v = (x2 @ p.wv).reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    if mask is not None:
        logits = logits + ((1.0 - mask) * MASK_NEG)[:, None, None, :]
    att = logits.softmax(-1)
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b * n, d)
    z = mlp_forward(ctx, p.ff)
    return x + z.reshape(b, n, d)


def masked_mean_pool(h: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over real nodes; an all-masked sample pools to the zero vector."""
    count = np.maximum(mask.sum(axis=1), 1.0)[:, None]
    return (h * mask[:, :, None]).sum(axis=1) / count


@dataclass
class RoleEncoderParams:
    embed: LinearParams  # node features -> d
    layers: list[AttentionLayerParams]


@dataclass
class EncoderParams:
    schema: tuple[Role, ...]
    roles: dict[Role, RoleEncoderParams] = field(default_factory=dict)
    d_model: int = 0


def encode_batch(batch: RoleGraphBatch, enc: EncoderParams) -> Tensor:
    """Embed, attend and pool each role bucket, then concatenate summaries in
    schema order: (B, |schema| * d).  Empty buckets contribute zeros."""
    for r in batch.schema:
        if r not in enc.roles:
            raise ContractError(f"no encoder parameters for role {r.name}")
    b = batch.size
    parts: list[Tensor] = []
    for role in batch.schema:
        feats = batch.feats[role]
        if feats.shape[1] == 0:
            parts.append(Tensor(np.zeros((b, enc.d_model), dtype=feats.dtype)))
            continue
        rp = enc.roles[role]
        mask = batch.masks[role]
        hid = linear(as_tensor(feats), rp.embed)
        for layer in rp.layers:
            hid = attention_layer_forward(hid, layer, mask)
        parts.append(masked_mean_pool(hid, mask))
    return concat(parts, axis=-1)


def encode(graphs: RoleGraphs, enc: EncoderParams) -> np.ndarray:
    """Single-observer convenience wrapper around encode_batch."""
    batch = RoleGraphBatch.from_graphs([graphs])
    return encode_batch(batch, enc).data[0]


def gcn_layer_forward(
    x: Tensor, adjacency: np.ndarray, p: LinearParams, activate: bool = True
) -> Tensor:
    """Degree-normalized mean aggregation followed by a linear map and ReLU.

    `adjacency` is (B, n, n) 0/1, symmetric with self-loops (padded rows must
    keep their self-loop so degrees stay positive).
    """
    if x.ndim != 3 or adjacency.shape != (x.shape[0], x.shape[1], x.shape[1]):
        raise ContractError(
            f"gcn shapes mismatch: x {x.shape}, adjacency {adjacency.shape}"
        )
    deg = adjacency.sum(axis=-1, keepdims=True)
    agg = as_tensor(adjacency / deg) @ x
    out = linear(agg, p)
    return out.relu() if activate else out
