"""Role-partitioned dense subgraphs over canonicalized observations.

Every observer gets one bucket per role in the scenario's schema: a singleton
"self" bucket plus one bucket per entity role, each holding 4-wide node
features [x, y, vx, vy] in the observer's frame.  Occluded entities are
dropped (masked in the batched form).  Bucket width depends on the number of
roles only, never on the team size, which is what makes trained encoders
transfer across agent counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import CanonicalObservation
from .errors import ContractError
from .sim import EntityLayout, Role

NODE_FEATURE_DIM = 4


@dataclass
class RoleGraphs:
    """Per-role node feature matrices for a single observer."""

    schema: tuple[Role, ...]
    nodes: dict[Role, np.ndarray]  # role -> (n_r, 4); n_r may be 0

    def total_nodes(self) -> int:
        return sum(m.shape[0] for m in self.nodes.values())


def build_role_graphs(
    obs: CanonicalObservation, role_schema: tuple[Role, ...]
) -> RoleGraphs:
    """Route each visible neighbor into its role bucket (schema order, entity
    index order inside a bucket); the observer occupies the self bucket."""
    if Role.SELF not in role_schema:
        raise ContractError("role schema must contain the self role")
    buckets: dict[Role, list[np.ndarray]] = {r: [] for r in role_schema}
    self_feat = np.zeros(NODE_FEATURE_DIM)
    self_feat[:2] = obs.self_speed
    buckets[Role.SELF].append(self_feat)
    for _, role, p_rel, v_rel in obs.neighbors:
        if role not in buckets:
            raise ContractError(f"neighbor role {role.name} absent from schema")
        buckets[role].append(np.concatenate([p_rel, v_rel]))
    nodes = {
        r: (np.stack(rows) if rows else np.zeros((0, NODE_FEATURE_DIM)))
        for r, rows in buckets.items()
    }
    return RoleGraphs(schema=tuple(role_schema), nodes=nodes)


@dataclass
class RoleGraphBatch:
    """A batch of role graphs padded to common per-role widths.

    feats[r] is (B, n_r, 4) and masks[r] is (B, n_r) with 1.0 marking real
    nodes.  Masked attention plus masked mean pooling make padded rows exact
    no-ops, so a padded batch encodes identically to its unpadded members.
    """

    schema: tuple[Role, ...]
    feats: dict[Role, np.ndarray]
    masks: dict[Role, np.ndarray]

    @property
    def size(self) -> int:
        return self.feats[Role.SELF].shape[0]

    def select(self, idx: np.ndarray) -> "RoleGraphBatch":
        return RoleGraphBatch(
            schema=self.schema,
            feats={r: f[idx] for r, f in self.feats.items()},
            masks={r: m[idx] for r, m in self.masks.items()},
        )

    @staticmethod
    def concat(batches: list["RoleGraphBatch"]) -> "RoleGraphBatch":
        schema = batches[0].schema
        return RoleGraphBatch(
            schema=schema,
            feats={
                r: np.concatenate([b.feats[r] for b in batches]) for r in schema
            },
            masks={
                r: np.concatenate([b.masks[r] for b in batches]) for r in schema
            },
        )

    @staticmethod
    def from_graphs(
        graphs: list[RoleGraphs], dtype=np.float64
    ) -> "RoleGraphBatch":
        schema = graphs[0].schema
        feats: dict[Role, np.ndarray] = {}
        masks: dict[Role, np.ndarray] = {}
        for r in schema:
            width = max(g.nodes[r].shape[0] for g in graphs)
            f = np.zeros((len(graphs), width, NODE_FEATURE_DIM), dtype=dtype)
            m = np.zeros((len(graphs), width), dtype=dtype)
            for b, g in enumerate(graphs):
                k = g.nodes[r].shape[0]
                f[b, :k] = g.nodes[r]
                m[b, :k] = 1.0
            feats[r], masks[r] = f, m
        return RoleGraphBatch(schema=schema, feats=feats, masks=masks)


@dataclass(frozen=True)
class ObserverSpec:
    """Static bucket membership for all observers of one role."""

    role: Role
    slots: np.ndarray  # (A_r,) indices into the controllable-agent list
    entity_idx: np.ndarray  # (A_r,) matching entity indices
    members: dict[Role, np.ndarray]  # role -> (A_r, n_q) entity indices


def observer_specs(
    layout: EntityLayout, schema: tuple[Role, ...]
) -> dict[Role, ObserverSpec]:
    """Precompute, per observer role, which entity indices land in which
    bucket.  Membership is static within an episode; occlusion only masks."""
    ctrl = layout.controllable
    specs: dict[Role, ObserverSpec] = {}
    observer_roles = sorted({Role(int(layout.roles[i])) for i in ctrl})
    for r in observer_roles:
        slots = np.nonzero(layout.roles[ctrl] == r)[0]
        entity_idx = ctrl[slots]
        members: dict[Role, np.ndarray] = {}
        for q in schema:
            if q == Role.SELF:
                continue
            q_idx = np.nonzero(layout.roles == q)[0]
            if q == r:
                rows = [q_idx[q_idx != e] for e in entity_idx]
                members[q] = (
                    np.stack(rows) if rows else np.zeros((0, 0), dtype=np.int64)
                )
            else:
                members[q] = np.tile(q_idx, (len(slots), 1))
        specs[r] = ObserverSpec(
            role=r, slots=slots, entity_idx=entity_idx, members=members
        )
    return specs


def build_graph_batch(
    spec: ObserverSpec,
    schema: tuple[Role, ...],
    p_rel: np.ndarray,  # (E, A, n, 2) canonical positions per observer
    v_rel: np.ndarray,  # (E, A, n, 2)
    speeds: np.ndarray,  # (E, A) observer speeds
    visible: np.ndarray,  # (E, A, n) bool
    dtype=np.float64,
) -> RoleGraphBatch:
    """Vectorized bucket construction for every observer of `spec.role` in
    every environment; batch axis is E*A_r (env-major)."""
    n_envs = p_rel.shape[0]
    slots = spec.slots
    batch = n_envs * len(slots)
    feats: dict[Role, np.ndarray] = {}
    masks: dict[Role, np.ndarray] = {}

    self_feat = np.zeros((batch, 1, NODE_FEATURE_DIM), dtype=dtype)
    self_feat[:, 0, 0] = speeds[:, slots].reshape(batch)
    feats[Role.SELF] = self_feat
    masks[Role.SELF] = np.ones((batch, 1), dtype=dtype)

    for q in schema:
        if q == Role.SELF:
            continue
        mem = spec.members[q]  # (A_r, n_q)
        n_q = mem.shape[1]
        if n_q == 0:
            feats[q] = np.zeros((batch, 0, NODE_FEATURE_DIM), dtype=dtype)
            masks[q] = np.zeros((batch, 0), dtype=dtype)
            continue
        sl = slots[:, None]
        p = p_rel[:, sl, mem]  # (E, A_r, n_q, 2)
        v = v_rel[:, sl, mem]
        vis = visible[:, sl, mem]
        f = np.concatenate([p, v], axis=-1).reshape(batch, n_q, NODE_FEATURE_DIM)
        m = vis.reshape(batch, n_q).astype(dtype)
        feats[q] = (f * m[..., None]).astype(dtype, copy=False)
        masks[q] = m
    return RoleGraphBatch(schema=tuple(schema), feats=feats, masks=masks)
