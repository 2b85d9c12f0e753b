"""Agent-centric canonical frames.

Each agent gets a local orthonormal basis whose x-axis follows its velocity
and whose y-axis is the +90-degree rotation of x, sign-flipped to make an
acute angle with the direction towards the team's center of mass.  Mapping
observations into this frame removes global rotation, translation and
reflection; mapping the policy's local action back out restores equivariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import EntityState, Role, WorldState

# Below this speed the velocity direction is numerically meaningless and the
# frame falls back to the global x-axis.
VELOCITY_EPS = 1e-8

# +90 degree rotation.
J = np.array([[0.0, -1.0], [1.0, 0.0]])

GLOBAL_X = np.array([1.0, 0.0])


@dataclass
class CanonicalFrame:
    """Local orthonormal frame of one agent: rotation columns and origin."""

    rotation: np.ndarray  # (2, 2), columns are the local x/y axes
    origin: np.ndarray  # (2,)

    @property
    def handedness(self) -> float:
        return float(np.sign(np.linalg.det(self.rotation)))


@dataclass
class CanonicalObservation:
    """An agent's visible surroundings expressed in its own frame."""

    self_speed: np.ndarray  # (2,) == [|v|, 0]
    neighbors: list[tuple[int, Role, np.ndarray, np.ndarray]]
    # (entity index, role, position in frame, velocity in frame)


def frame_axes(
    velocity: np.ndarray, to_com: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Local axes from a velocity and the vector towards the center of mass.
    Broadcasts over leading batch dims ((..., 2) inputs)."""
    speed = np.sqrt(np.sum(velocity * velocity, axis=-1, keepdims=True))
    x = np.where(speed > VELOCITY_EPS, velocity / np.where(speed > 0, speed, 1.0), GLOBAL_X)
    jx = x @ J.T  # J @ x row-wise
    jd = to_com @ J.T
    s = np.sum(x * jd, axis=-1, keepdims=True)
    sign = np.where(s >= 0.0, 1.0, -1.0)  # sgn(0) := +1
    y = sign * jx
    return x, y


def build_frame(
    agent: EntityState, center_of_mass: np.ndarray, global_x: np.ndarray = GLOBAL_X
) -> CanonicalFrame:
    """Construct the agent's canonical frame.  `global_x` is the fixed world
    x-axis used as fallback when the agent is (numerically) at rest."""
    speed = float(np.linalg.norm(agent.velocity))
    if speed > VELOCITY_EPS:
        x = agent.velocity / speed
    else:
        x = np.asarray(global_x, dtype=np.float64)
    d = np.asarray(center_of_mass, dtype=np.float64) - agent.position
    s = float(x @ (J @ d))
    sign = 1.0 if s >= 0.0 else -1.0
    y = sign * (J @ x)
    return CanonicalFrame(rotation=np.column_stack([x, y]), origin=agent.position.copy())


def center_of_mass(state: WorldState) -> np.ndarray:
    """Arithmetic mean of the controllable agents' positions (passive
    landmarks/obstacles excluded)."""
    ctrl = state.layout.controllable
    return state.positions[ctrl].mean(axis=0)


def frames_for(positions: np.ndarray, velocities: np.ndarray, ctrl: np.ndarray):
    """Vectorized frames for every controllable agent.

    positions/velocities are (..., n, 2); returns (rotations (..., A, 2, 2),
    origins (..., A, 2)).  Rotation columns are the local axes.
    """
    p = positions[..., ctrl, :]
    v = velocities[..., ctrl, :]
    com = p.mean(axis=-2, keepdims=True)
    x, y = frame_axes(v, com - p)
    rot = np.stack([x, y], axis=-1)  # columns
    return rot, p


def canonicalize(
    state: WorldState, observer: int, visible: set[int], frame: CanonicalFrame
) -> CanonicalObservation:
    """Express the observer's visible neighborhood in its canonical frame.

    Positions become R^T (p_j - p_i), velocities R^T v_j, and the observer's
    own velocity collapses to [|v|, 0].  Occluded entities are absent.
    """
    lay = state.layout
    self_idx = int(lay.controllable[observer])
    rt = frame.rotation.T
    speed = float(np.linalg.norm(state.velocities[self_idx]))
    neighbors = []
    for j in sorted(visible):
        if j == self_idx:
            continue
        p_rel = rt @ (state.positions[j] - frame.origin)
        v_rel = rt @ state.velocities[j]
        neighbors.append((j, Role(int(lay.roles[j])), p_rel, v_rel))
    return CanonicalObservation(
        self_speed=np.array([speed, 0.0]), neighbors=neighbors
    )


def decanonicalize_action(frame: CanonicalFrame, local_action: np.ndarray) -> np.ndarray:
    """Rotate a local-frame action back into the world frame."""
    return frame.rotation @ np.asarray(local_action, dtype=np.float64)


def relative_features(
    positions: np.ndarray, velocities: np.ndarray, rotations: np.ndarray, origins: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched canonical coordinates of every entity for every observer.

    positions/velocities: (..., n, 2); rotations: (..., A, 2, 2); origins:
    (..., A, 2).  Returns (p_rel, v_rel), each (..., A, n, 2), where entry
    (a, j) is entity j expressed in observer a's frame.
    """
    delta = positions[..., None, :, :] - origins[..., :, None, :]
    # R^T d for column-convention R: einsum over the row index.
    p_rel = np.einsum("...aij,...ani->...anj", rotations, delta)
    v_rel = np.einsum("...aij,...ani->...anj", rotations, velocities[..., None, :, :])
    return p_rel, v_rel
