"""Deterministic 2D particle worlds: cooperative coverage (spread) and
pursuit-evasion with line-of-sight occlusion (tag).

All physics kernels broadcast over arbitrary leading batch dimensions so a
single world and a vectorized bank of worlds share one code path (and hence
produce bit-identical trajectories).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .errors import ConfigError, ContractError

SPREAD = "spread"
TAG = "tag"

INIT_UNIFORM = "uniform"
INIT_LEFT = "left"
INIT_RIGHT = "right"

_INITS = (INIT_UNIFORM, INIT_LEFT, INIT_RIGHT)

# Per-contact capture bonus in tag (MPE convention; shared across the
# pursuer team, individual for the struck evader).
CAPTURE_BONUS = 10.0

# Gap (in units of contact_margin) beyond which the soft contact force is
# clamped to exactly zero; the softplus tail out there is < 1e-17 of the
# force scale.
_CONTACT_BAND = 40.0


class Role(IntEnum):
    SELF = 0  # used only at graph-construction time
    AGENT = 1
    PURSUER = 2
    EVADER = 3
    OBSTACLE = 4
    LANDMARK = 5


@dataclass
class EntityState:
    """Physical state and static attributes of one world entity."""

    position: np.ndarray  # (2,)
    velocity: np.ndarray  # (2,)
    radius: float
    role: Role
    movable: bool
    max_speed: float  # np.inf when unbounded
    accel: float
    collidable: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative description of one scenario instance."""

    scenario: str
    agents: int = 0
    landmarks: int = 0
    pursuers: int = 0
    evaders: int = 0
    obstacles: int = 0
    horizon: int = 25
    dt: float = 0.1
    damping: float = 0.25
    mass: float = 1.0
    contact_stiffness: float = 100.0
    contact_margin: float = 1e-3
    init: str = INIT_UNIFORM
    bounds: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.scenario not in (SPREAD, TAG):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scenario == SPREAD:
            if self.agents < 1 or self.agents != self.landmarks:
                raise ConfigError(
                    f"spread requires agents == landmarks >= 1, "
                    f"got {self.agents} agents / {self.landmarks} landmarks"
                )
            if self.pursuers or self.evaders or self.obstacles:
                raise ConfigError("spread takes no pursuers/evaders/obstacles")
        else:
            if self.pursuers < 1 or self.evaders < 1:
                raise ConfigError(
                    f"tag requires >=1 pursuer and >=1 evader, "
                    f"got {self.pursuers}/{self.evaders}"
                )
            if self.agents or self.landmarks:
                raise ConfigError("tag takes no agents/landmarks")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.init not in _INITS:
            raise ConfigError(f"unknown init distribution {self.init!r}")
        if self.bounds <= 0 or self.dt <= 0 or self.mass <= 0:
            raise ConfigError("bounds, dt and mass must be positive")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError("damping must lie in [0, 1)")


def spread_config(n: int = 3, **kw) -> ScenarioConfig:
    cfg = ScenarioConfig(scenario=SPREAD, agents=n, landmarks=n, **kw)
    cfg.validate()
    return cfg


def tag_config(
    pursuers: int = 3, evaders: int = 2, obstacles: int = 2, horizon: int = 100, **kw
) -> ScenarioConfig:
    cfg = ScenarioConfig(
        scenario=TAG,
        pursuers=pursuers,
        evaders=evaders,
        obstacles=obstacles,
        horizon=horizon,
        **kw,
    )
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class EntityLayout:
    """Static per-entity attributes, shared by every state of one scenario."""

    roles: np.ndarray  # (n,) int
    radii: np.ndarray  # (n,)
    movable: np.ndarray  # (n,) bool
    collidable: np.ndarray  # (n,) bool
    max_speed: np.ndarray  # (n,)
    accel: np.ndarray  # (n,)
    controllable: np.ndarray = field(init=False)  # indices of action takers
    obstacle_idx: np.ndarray = field(init=False)

    def __post_init__(self):
        ctrl = np.nonzero(self.movable)[0]
        obj = object.__setattr__
        obj(self, "controllable", ctrl)
        obj(self, "obstacle_idx", np.nonzero(self.roles == Role.OBSTACLE)[0])

    @property
    def n_entities(self) -> int:
        return len(self.roles)

    @property
    def n_controllable(self) -> int:
        return len(self.controllable)


def build_layout(config: ScenarioConfig) -> EntityLayout:
    """Entity ordering: controllable agents first (pursuers before evaders in
    tag), then passive entities (landmarks / obstacles)."""
    config.validate()
    rows: list[tuple[Role, float, bool, bool, float, float]] = []
    if config.scenario == SPREAD:
        rows += [(Role.AGENT, 0.15, True, True, np.inf, 5.0)] * config.agents
        rows += [(Role.LANDMARK, 0.05, False, False, 0.0, 0.0)] * config.landmarks
    else:
        rows += [(Role.PURSUER, 0.075, True, True, 1.0, 3.0)] * config.pursuers
        rows += [(Role.EVADER, 0.05, True, True, 1.3, 4.0)] * config.evaders
        rows += [(Role.OBSTACLE, 0.2, False, True, 0.0, 0.0)] * config.obstacles
    roles, radii, movable, collidable, max_speed, accel = zip(*rows)
    return EntityLayout(
        roles=np.array(roles, dtype=np.int64),
        radii=np.array(radii, dtype=np.float64),
        movable=np.array(movable, dtype=bool),
        collidable=np.array(collidable, dtype=bool),
        max_speed=np.array(max_speed, dtype=np.float64),
        accel=np.array(accel, dtype=np.float64),
    )


def role_schema(config: ScenarioConfig) -> tuple[Role, ...]:
    """Ordered role list used for graph bucketing and parameter sharing."""
    if config.scenario == SPREAD:
        return (Role.SELF, Role.AGENT, Role.LANDMARK)
    return (Role.SELF, Role.PURSUER, Role.EVADER, Role.OBSTACLE)


def controllable_roles(config: ScenarioConfig) -> tuple[Role, ...]:
    if config.scenario == SPREAD:
        return (Role.AGENT,)
    return (Role.PURSUER, Role.EVADER)


@dataclass
class WorldState:
    """Positions/velocities of all entities at one timestep."""

    config: ScenarioConfig
    layout: EntityLayout
    positions: np.ndarray  # (n, 2)
    velocities: np.ndarray  # (n, 2)
    time_step: int = 0

    @property
    def bounds(self) -> float:
        return self.config.bounds

    @property
    def entities(self) -> list[EntityState]:
        lay = self.layout
        return [
            EntityState(
                position=self.positions[i].copy(),
                velocity=self.velocities[i].copy(),
                radius=float(lay.radii[i]),
                role=Role(int(lay.roles[i])),
                movable=bool(lay.movable[i]),
                max_speed=float(lay.max_speed[i]),
                accel=float(lay.accel[i]),
                collidable=bool(lay.collidable[i]),
            )
            for i in range(lay.n_entities)
        ]


def _sample_box(rng: np.random.Generator, n: int, lo: np.ndarray, hi: np.ndarray):
    return lo + (hi - lo) * rng.random((n, 2))


def reset(config: ScenarioConfig, seed: int) -> WorldState:
    """Fresh world with positions drawn from the configured init distribution
    and all velocities zero.  Identical (config, seed) pairs give bit-identical
    states."""
    layout = build_layout(config)
    rng = np.random.default_rng(seed)
    b = config.bounds
    if config.init == INIT_LEFT:
        agent_lo, agent_hi = np.array([-b, -b]), np.array([0.0, b])
    elif config.init == INIT_RIGHT:
        agent_lo, agent_hi = np.array([0.0, -b]), np.array([b, b])
    else:
        agent_lo, agent_hi = np.array([-b, -b]), np.array([b, b])

    n_ctrl = layout.n_controllable
    n_passive = layout.n_entities - n_ctrl
    positions = np.empty((layout.n_entities, 2), dtype=np.float64)
    positions[:n_ctrl] = _sample_box(rng, n_ctrl, agent_lo, agent_hi)
    # Passive entities (landmarks/obstacles) sit uniformly inside 90% of the
    # arena regardless of the agent init distribution.
    passive_lo = np.array([-0.9 * b, -0.9 * b])
    positions[n_ctrl:] = _sample_box(rng, n_passive, passive_lo, -passive_lo)
    return WorldState(
        config=config,
        layout=layout,
        positions=positions,
        velocities=np.zeros((layout.n_entities, 2), dtype=np.float64),
        time_step=0,
    )


# ---------------------------------------------------------------------------
# Physics kernels (broadcast over leading batch dims)
# ---------------------------------------------------------------------------


def _soft_penetration(dist, dist_min, margin):
    """Softplus penetration depth; exactly zero outside the activation band."""
    gap = dist - dist_min
    pen = np.logaddexp(0.0, -gap / margin) * margin
    return np.where(gap >= _CONTACT_BAND * margin, 0.0, pen)


def pairwise_contact_forces(
    positions: np.ndarray, layout: EntityLayout, stiffness: float, margin: float
) -> np.ndarray:
    """Net soft-contact force on every entity, (..., n, 2)."""
    delta = positions[..., :, None, :] - positions[..., None, :, :]  # a - b
    dist = np.sqrt(np.sum(delta * delta, axis=-1))
    dist_min = layout.radii[:, None] + layout.radii[None, :]
    active = np.outer(layout.collidable, layout.collidable).copy()
    np.fill_diagonal(active, False)

    pen = _soft_penetration(dist, dist_min, margin) * active
    # Coincident centers: push along a fixed fallback axis at the d=0 magnitude.
    degenerate = (dist == 0.0) & active
    safe = np.where(dist > 0.0, dist, 1.0)
    direction = delta / safe[..., None]
    fallback = np.zeros_like(direction)
    fallback[..., 0] = 1.0
    direction = np.where(degenerate[..., None], fallback, direction)
    forces = stiffness * pen[..., None] * direction
    return forces.sum(axis=-2)


def contact_force(
    a: EntityState, b: EntityState, stiffness: float = 100.0, margin: float = 1e-3
) -> np.ndarray:
    """Soft repulsive force exerted on entity `a` by entity `b`."""
    if not (a.collidable and b.collidable):
        return np.zeros(2)
    delta = a.position - b.position
    dist = float(np.sqrt(np.sum(delta * delta)))
    dist_min = a.radius + b.radius
    pen = float(_soft_penetration(np.float64(dist), dist_min, margin))
    if pen == 0.0:
        return np.zeros(2)
    direction = delta / dist if dist > 0.0 else np.array([1.0, 0.0])
    return stiffness * pen * direction


def integrate(
    positions: np.ndarray,
    velocities: np.ndarray,
    control_forces: np.ndarray,
    layout: EntityLayout,
    config: ScenarioConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """One semi-implicit Euler step: damp, apply force, cap speed, move."""
    contact = pairwise_contact_forces(
        positions, layout, config.contact_stiffness, config.contact_margin
    )
    force = control_forces + contact
    vel = velocities * (1.0 - config.damping) + force / config.mass * config.dt
    vel = np.where(layout.movable[:, None], vel, 0.0)

    speed = np.sqrt(np.sum(vel * vel, axis=-1))
    cap = layout.max_speed
    over = (speed > cap) & np.isfinite(cap)
    scale = np.where(over, cap / np.where(speed > 0.0, speed, 1.0), 1.0)
    vel = vel * scale[..., None]

    pos = positions + vel * config.dt
    pos = np.where(layout.movable[:, None], pos, positions)
    return pos, vel


def control_forces_from_actions(
    actions: np.ndarray, layout: EntityLayout
) -> np.ndarray:
    """Expand per-agent actions (..., A, 2) to per-entity forces (..., n, 2),
    scaling by each agent's force gain."""
    shape = actions.shape[:-2] + (layout.n_entities, 2)
    forces = np.zeros(shape, dtype=actions.dtype)
    ctrl = layout.controllable
    forces[..., ctrl, :] = actions * layout.accel[ctrl, None]
    return forces


def step(
    state: WorldState, actions: np.ndarray
) -> tuple[WorldState, np.ndarray, bool]:
    """Advance one timestep.  `actions` is (A, 2) for the A controllable
    agents; returns (next_state, per-agent rewards, done)."""
    layout = state.layout
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (layout.n_controllable, 2):
        raise ContractError(
            f"expected actions of shape {(layout.n_controllable, 2)}, "
            f"got {actions.shape}"
        )
    if not np.all(np.isfinite(actions)):
        raise ContractError("actions contain NaN or Inf")

    forces = control_forces_from_actions(actions, layout)
    pos, vel = integrate(state.positions, state.velocities, forces, layout, state.config)
    new_state = WorldState(
        config=state.config,
        layout=layout,
        positions=pos,
        velocities=vel,
        time_step=state.time_step + 1,
    )
    rewards = scenario_rewards(new_state)
    done = new_state.time_step >= state.config.horizon
    return new_state, rewards, done


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


def _spread_rewards_arrays(positions: np.ndarray, layout: EntityLayout) -> np.ndarray:
    agent_idx = layout.controllable
    land_idx = np.nonzero(layout.roles == Role.LANDMARK)[0]
    ap = positions[..., agent_idx, :]
    lp = positions[..., land_idx, :]
    delta = lp[..., :, None, :] - ap[..., None, :, :]  # (..., L, A, 2)
    dist = np.sqrt(np.sum(delta * delta, axis=-1))
    coverage = -dist.min(axis=-1).sum(axis=-1)  # shared term, (...,)

    pair = ap[..., :, None, :] - ap[..., None, :, :]
    pd = np.sqrt(np.sum(pair * pair, axis=-1))
    touch = pd < (layout.radii[agent_idx][:, None] + layout.radii[agent_idx][None, :])
    ar = np.arange(len(agent_idx))
    touch[..., ar, ar] = False
    collisions = touch.sum(axis=-1).astype(np.float64)
    return coverage[..., None] - collisions


def spread_rewards(state: WorldState) -> np.ndarray:
    """Shared coverage term (negated sum of per-landmark min distances) plus a
    -1 individual penalty per overlapping agent pair member."""
    if state.config.scenario != SPREAD:
        raise ContractError("spread_rewards requires a spread scenario")
    return _spread_rewards_arrays(state.positions, state.layout)


def _boundary_penalty(positions: np.ndarray, bounds: float) -> np.ndarray:
    """Smooth keep-in penalty per agent: zero inside 90% of the arena, linear
    up to the wall, exponentially growing (capped at 10) beyond it.  Applied
    per coordinate."""
    u = np.abs(positions) / bounds
    lin = (u - 0.9) * 10.0
    expo = np.minimum(np.exp(2.0 * u - 2.0), 10.0)
    b = np.where(u < 0.9, 0.0, np.where(u < 1.0, lin, expo))
    return b.sum(axis=-1)


def _tag_rewards_arrays(positions: np.ndarray, layout: EntityLayout, bounds: float):
    p_idx = np.nonzero(layout.roles == Role.PURSUER)[0]
    e_idx = np.nonzero(layout.roles == Role.EVADER)[0]
    pp = positions[..., p_idx, :]
    ep = positions[..., e_idx, :]
    delta = pp[..., :, None, :] - ep[..., None, :, :]  # (..., P, E, 2)
    dist = np.sqrt(np.sum(delta * delta, axis=-1))
    touch = dist < (layout.radii[p_idx][:, None] + layout.radii[e_idx][None, :])

    captures_total = touch.sum(axis=(-2, -1)).astype(np.float64)  # (...,)
    captures_per_evader = touch.sum(axis=-2).astype(np.float64)  # (..., E)

    ctrl = layout.controllable
    rewards = -_boundary_penalty(positions[..., ctrl, :], bounds)
    n_p = len(p_idx)
    rewards[..., :n_p] += CAPTURE_BONUS * captures_total[..., None]
    rewards[..., n_p:] -= CAPTURE_BONUS * captures_per_evader
    return rewards


def tag_rewards(state: WorldState) -> np.ndarray:
    """Team-shared capture bonus for pursuers, individual capture penalty for
    evaders, keep-in boundary penalty for every agent."""
    if state.config.scenario != TAG:
        raise ContractError("tag_rewards requires a tag scenario")
    return _tag_rewards_arrays(state.positions, state.layout, state.config.bounds)


def scenario_rewards(state: WorldState) -> np.ndarray:
    if state.config.scenario == SPREAD:
        return spread_rewards(state)
    return tag_rewards(state)


# ---------------------------------------------------------------------------
# Observation model (line-of-sight occlusion by obstacle disks)
# ---------------------------------------------------------------------------


def visibility_matrix(positions: np.ndarray, layout: EntityLayout) -> np.ndarray:
    """Boolean (..., A, n) matrix: entry (i, j) is True when observer i sees
    entity j.  An entity is occluded when the segment observer->entity passes
    through any obstacle disk; obstacles themselves and the observer are
    always visible."""
    ctrl = layout.controllable
    obs_idx = layout.obstacle_idx
    a = positions[..., ctrl, :]  # (..., A, 2)
    p = positions[..., None, :, :]  # (..., 1, n, 2) targets
    visible_shape = positions.shape[:-2] + (len(ctrl), layout.n_entities)
    if len(obs_idx) == 0:
        return np.ones(visible_shape, dtype=bool)

    seg = p - a[..., :, None, :]  # (..., A, n, 2)
    c = positions[..., obs_idx, :]  # (..., O, 2)
    rel = c[..., None, None, :, :] - a[..., :, None, None, :]  # (..., A, 1, O, 2) - broadcast
    # Closest point on each segment to each obstacle center.
    seg_sq = np.sum(seg * seg, axis=-1)[..., None]  # (..., A, n, 1)
    t = np.sum(seg[..., None, :] * rel, axis=-1) / np.where(seg_sq > 0.0, seg_sq, 1.0)
    t = np.clip(t, 0.0, 1.0)  # (..., A, n, O)
    closest = seg[..., None, :] * t[..., None] - rel  # (..., A, n, O, 2)
    d2 = np.sum(closest * closest, axis=-1)
    blocked = (d2 < (layout.radii[obs_idx] ** 2)) & (seg_sq > 0.0)
    visible = ~np.any(blocked, axis=-1)
    visible[..., obs_idx] = True  # obstacles always visible
    # Observer sees itself.
    ar = np.arange(len(ctrl))
    visible[..., ar, ctrl] = True
    return visible


def visible_entities(state: WorldState, observer: int) -> set[int]:
    """Indices of entities the given controllable agent can currently see.
    `observer` indexes the controllable-agent list."""
    if not 0 <= observer < state.layout.n_controllable:
        raise ContractError(f"observer {observer} is not a controllable agent")
    vis = visibility_matrix(state.positions, state.layout)
    return set(np.nonzero(vis[observer])[0].tolist())


# ---------------------------------------------------------------------------
# Vectorized bank of worlds
# ---------------------------------------------------------------------------


class VecWorld:
    """E independent worlds of one scenario stepped in lockstep.

    One instance must not be stepped from two contexts simultaneously; banks
    for different workers should be separate instances.
    """

    def __init__(self, config: ScenarioConfig, seeds: list[int]):
        config.validate()
        self.config = config
        self.layout = build_layout(config)
        self.n_envs = len(seeds)
        self.positions = np.empty((self.n_envs, self.layout.n_entities, 2))
        self.velocities = np.empty_like(self.positions)
        self.time_step = 0
        self.reset_all(seeds)

    def reset_all(self, seeds: list[int]) -> None:
        if len(seeds) != self.n_envs:
            raise ContractError("seed count must match env count")
        for e, seed in enumerate(seeds):
            st = reset(self.config, seed)
            self.positions[e] = st.positions
            self.velocities[e] = st.velocities
        self.time_step = 0

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, bool]:
        """Advance every world by one step.  `actions` is (E, A, 2); returns
        (rewards (E, A), done)."""
        layout = self.layout
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n_envs, layout.n_controllable, 2):
            raise ContractError(
                f"expected actions of shape "
                f"{(self.n_envs, layout.n_controllable, 2)}, got {actions.shape}"
            )
        if not np.all(np.isfinite(actions)):
            raise ContractError("actions contain NaN or Inf")
        forces = control_forces_from_actions(actions, layout)
        self.positions, self.velocities = integrate(
            self.positions, self.velocities, forces, layout, self.config
        )
        self.time_step += 1
        if self.config.scenario == SPREAD:
            rewards = _spread_rewards_arrays(self.positions, layout)
        else:
            rewards = _tag_rewards_arrays(self.positions, layout, self.config.bounds)
        return rewards, self.time_step >= self.config.horizon

    def state(self, e: int) -> WorldState:
        return WorldState(
            config=self.config,
            layout=self.layout,
            positions=self.positions[e].copy(),
            velocities=self.velocities[e].copy(),
            time_step=self.time_step,
        )
