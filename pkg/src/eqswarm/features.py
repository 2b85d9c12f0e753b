"""Per-architecture observation construction from batched world states.

One ObsBundle per (vectorized) step carries everything any architecture
needs: visibility, canonical frames and relative coordinates.  Extractors
turn a bundle into per-observer-role network inputs:

- graph buckets (canonicalized role subgraphs) for the attention pipeline,
- flat global-frame vectors for the plain MLP baseline,
- flat canonicalized vectors for the agent-frame MLP baseline,
- homogeneous visible-entity graphs for the GCN baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import frames_for, relative_features
from .graphs import ObserverSpec, RoleGraphBatch, build_graph_batch, observer_specs
from .sim import EntityLayout, Role, visibility_matrix


@dataclass
class ObsBundle:
    """Batched per-step observation ingredients for all observers."""

    positions: np.ndarray  # (E, n, 2)
    velocities: np.ndarray  # (E, n, 2)
    layout: EntityLayout
    schema: tuple[Role, ...]
    visible: np.ndarray  # (E, A, n) bool
    rotations: np.ndarray  # (E, A, 2, 2)
    origins: np.ndarray  # (E, A, 2)
    p_rel: np.ndarray  # (E, A, n, 2)
    v_rel: np.ndarray  # (E, A, n, 2)
    speeds: np.ndarray  # (E, A)


def compute_bundle(
    positions: np.ndarray,
    velocities: np.ndarray,
    layout: EntityLayout,
    schema: tuple[Role, ...],
    occlusion: bool = True,
) -> ObsBundle:
    """All observation ingredients for a batch of worlds.  `occlusion=False`
    grants full visibility (used for training-time critic inputs)."""
    ctrl = layout.controllable
    if occlusion:
        visible = visibility_matrix(positions, layout)
    else:
        visible = np.ones(
            positions.shape[:-2] + (len(ctrl), layout.n_entities), dtype=bool
        )
    rot, origins = frames_for(positions, velocities, ctrl)
    p_rel, v_rel = relative_features(positions, velocities, rot, origins)
    v = velocities[..., ctrl, :]
    speeds = np.sqrt(np.sum(v * v, axis=-1))
    return ObsBundle(
        positions=positions,
        velocities=velocities,
        layout=layout,
        schema=schema,
        visible=visible,
        rotations=rot,
        origins=origins,
        p_rel=p_rel,
        v_rel=v_rel,
        speeds=speeds,
    )


def graph_packs(
    bundle: ObsBundle, specs: dict[Role, ObserverSpec], dtype=np.float64
) -> dict[Role, RoleGraphBatch]:
    """Canonicalized role-bucket batches, one per observer role."""
    return {
        r: build_graph_batch(
            spec,
            bundle.schema,
            bundle.p_rel,
            bundle.v_rel,
            bundle.speeds,
            bundle.visible,
            dtype=dtype,
        )
        for r, spec in specs.items()
    }


def _flat_assemble(
    bundle: ObsBundle, spec: ObserverSpec, local: bool, dtype
) -> np.ndarray:
    """Flat per-observer vector: self block, then [p, v] per other
    controllable agent (entity-index order), then [p] per passive entity.
    Occluded entries are zeroed."""
    lay = bundle.layout
    ctrl = lay.controllable
    passive = np.nonzero(~lay.movable)[0]
    n_envs = bundle.positions.shape[0]
    slots = spec.slots
    b = n_envs * len(slots)

    others = np.stack([ctrl[ctrl != e] for e in spec.entity_idx])  # (A_r, K)
    sl = slots[:, None]
    if local:
        self_block = np.zeros((n_envs, len(slots), 2))
        self_block[..., 0] = bundle.speeds[:, slots]
        src_p, src_v = bundle.p_rel, bundle.v_rel
    else:
        self_block = np.concatenate(
            [
                bundle.positions[:, spec.entity_idx],
                bundle.velocities[:, spec.entity_idx],
            ],
            axis=-1,
        )
        src_p = np.broadcast_to(
            bundle.positions[:, None], bundle.p_rel.shape
        )
        src_v = np.broadcast_to(
            bundle.velocities[:, None], bundle.v_rel.shape
        )

    vis_o = bundle.visible[:, sl, others][..., None]
    other_block = np.concatenate(
        [src_p[:, sl, others] * vis_o, src_v[:, sl, others] * vis_o], axis=-1
    )
    parts = [self_block, other_block.reshape(n_envs, len(slots), -1)]
    if len(passive) > 0:
        pas = np.tile(passive, (len(slots), 1))
        vis_p = bundle.visible[:, sl, pas][..., None]
        passive_block = src_p[:, sl, pas] * vis_p
        parts.append(passive_block.reshape(n_envs, len(slots), -1))
    return np.concatenate(parts, axis=-1).reshape(b, -1).astype(dtype, copy=False)


def flat_obs_dim(layout: EntityLayout, local: bool) -> int:
    n_ctrl = layout.n_controllable
    n_passive = layout.n_entities - n_ctrl
    self_dim = 2 if local else 4
    return self_dim + 4 * (n_ctrl - 1) + 2 * n_passive


def flat_packs(
    bundle: ObsBundle,
    specs: dict[Role, ObserverSpec],
    local: bool,
    dtype=np.float64,
) -> dict[Role, np.ndarray]:
    return {
        r: _flat_assemble(bundle, spec, local, dtype) for r, spec in specs.items()
    }


@dataclass
class GcnPack:
    """Homogeneous visible-entity graph per observer."""

    feats: np.ndarray  # (B, n, 4 + |schema|)
    adjacency: np.ndarray  # (B, n, n) dense over visible nodes, self-loops kept
    mask: np.ndarray  # (B, n)

    @property
    def size(self) -> int:
        return self.feats.shape[0]

    def select(self, idx: np.ndarray) -> "GcnPack":
        return GcnPack(self.feats[idx], self.adjacency[idx], self.mask[idx])

    @staticmethod
    def concat(packs: list["GcnPack"]) -> "GcnPack":
        return GcnPack(
            np.concatenate([p.feats for p in packs]),
            np.concatenate([p.adjacency for p in packs]),
            np.concatenate([p.mask for p in packs]),
        )


def gcn_feat_dim(schema: tuple[Role, ...]) -> int:
    return 4 + len(schema)


def gcn_packs(
    bundle: ObsBundle, specs: dict[Role, ObserverSpec], dtype=np.float64
) -> dict[Role, GcnPack]:
    """Raw global-frame node features [p, v, role one-hot] over all visible
    entities; the observer's node carries the self marker instead of its role
    slot.  Dense adjacency over visible nodes with self-loops everywhere."""
    lay = bundle.layout
    schema = bundle.schema
    n = lay.n_entities
    n_envs = bundle.positions.shape[0]
    role_slot = np.array([schema.index(Role(int(r))) for r in lay.roles])
    base_onehot = np.zeros((n, len(schema)))
    base_onehot[np.arange(n), role_slot] = 1.0

    packs: dict[Role, GcnPack] = {}
    for r, spec in specs.items():
        slots = spec.slots
        a_r = len(slots)
        b = n_envs * a_r
        vis = bundle.visible[:, slots]  # (E, A_r, n)
        feats = np.zeros((n_envs, a_r, n, 4 + len(schema)), dtype=dtype)
        feats[..., 0:2] = bundle.positions[:, None]
        feats[..., 2:4] = bundle.velocities[:, None]
        feats[..., 4:] = base_onehot
        for j, e_idx in enumerate(spec.entity_idx):
            feats[:, j, e_idx, 4:] = 0.0
            feats[:, j, e_idx, 4 + schema.index(Role.SELF)] = 1.0
        feats *= vis[..., None]
        adj = (vis[..., :, None] & vis[..., None, :]).astype(dtype)
        ar = np.arange(n)
        adj[..., ar, ar] = 1.0
        packs[r] = GcnPack(
            feats=feats.reshape(b, n, -1),
            adjacency=adj.reshape(b, n, n),
            mask=vis.reshape(b, n).astype(dtype),
        )
    return packs


def build_specs(layout: EntityLayout, schema: tuple[Role, ...]):
    return observer_specs(layout, schema)
