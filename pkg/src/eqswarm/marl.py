"""Multi-agent PPO on vectorized particle worlds.

One update cycle: collect whole episodes through the canonicalize -> bucket
-> encode -> act pipeline (or a baseline's feature path), estimate advantages
with GAE, then run clipped-surrogate epochs per role.  Competitive scenarios
update every role simultaneously from disjoint batches (self-play).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import features as feat
from .errors import ConfigError, ContractError, TrainingError
from .features import GcnPack, ObsBundle
from .graphs import RoleGraphBatch
from .nn import Adam, Tensor, clip_grad_norm, no_grad
from .policy import (
    ARCH_CANON_ATTN,
    ARCH_GCN,
    ARCH_MLP,
    ARCH_MLP_LOCAL,
    ArchConfig,
    LOCAL_FRAME_ARCHS,
    Policy,
    build_policy,
    cap_norm,
    evaluate_actions,
    parameters_of,
    policy_heads,
)
from .sim import Role, ScenarioConfig, VecWorld, build_layout, controllable_roles, role_schema


@dataclass(frozen=True)
class TrainConfig:
    """MAPPO hyperparameters (standard settings)."""

    total_steps: int = 200_000
    rollout_length: int = 625  # env steps per update, spread across envs
    ppo_epochs: int = 10
    minibatches: int = 4
    clip_eps: float = 0.2
    lr: float = 5e-4
    lr_decay: bool = True  # linear decay to zero over the run
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    value_clip: float = 0.0  # 0 disables the clipped value loss
    max_grad_norm: float = 0.5
    gamma: float = 0.99
    lam: float = 0.95
    seed: int = 0
    eval_interval: int = 0  # env steps between deterministic evals (0 = off)
    eval_episodes: int = 10

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ConfigError("clip_eps must be positive")
        if self.total_steps < 1 or self.rollout_length < 1:
            raise ConfigError("total_steps and rollout_length must be positive")
        if self.ppo_epochs < 1 or self.minibatches < 1:
            raise ConfigError("ppo_epochs and minibatches must be >= 1")


@dataclass
class RolloutBatch:
    """Stored trajectories for one role, enough to re-evaluate log-probs and
    values without re-simulation."""

    role: Role
    pack: object  # arch-specific observation batch, row-aligned with actions
    critic_pack: object | None
    actions: np.ndarray  # (M, 2) pre-cap samples in the policy's action frame
    log_probs: np.ndarray  # (M,)
    rewards: np.ndarray  # (T, K)
    values: np.ndarray  # (T, K)
    dones: np.ndarray  # (T, K)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.actions)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over (T, K) arrays.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    """
    if not (rewards.shape == values.shape == dones.shape):
        raise ContractError("rewards/values/dones must share one shape")
    if bootstrap.shape != rewards.shape[1:]:
        raise ContractError("bootstrap values must match the batch width")
    horizon = rewards.shape[0]
    adv = np.zeros_like(values)
    last = np.zeros_like(bootstrap)
    next_values = bootstrap
    for t in range(horizon - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_values = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Exact zero-mean/unit-variance normalization (no epsilon fudge, so the
    post-normalization invariants hold to float precision)."""
    centered = adv - adv.mean()
    std = centered.std()
    if std > 1e-12:
        centered = centered / std
    return centered


# ---------------------------------------------------------------------------
# Rollout collection
# ---------------------------------------------------------------------------


def _extract_packs(arch_name: str, bundle: ObsBundle, specs):
    if arch_name == ARCH_CANON_ATTN:
        return feat.graph_packs(bundle, specs)
    if arch_name == ARCH_MLP:
        return feat.flat_packs(bundle, specs, local=False)
    if arch_name == ARCH_MLP_LOCAL:
        return feat.flat_packs(bundle, specs, local=True)
    if arch_name == ARCH_GCN:
        return feat.gcn_packs(bundle, specs)
    raise ConfigError(f"unknown arch {arch_name!r}")


def _concat_packs(packs: list):
    first = packs[0]
    if isinstance(first, RoleGraphBatch):
        return RoleGraphBatch.concat(packs)
    if isinstance(first, GcnPack):
        return GcnPack.concat(packs)
    return np.concatenate(packs)


def select_pack(pack, idx: np.ndarray):
    if isinstance(pack, (RoleGraphBatch, GcnPack)):
        return pack.select(idx)
    return pack[idx]


@dataclass
class Collector:
    """Rollout machinery bound to one scenario and one policy map."""

    config: ScenarioConfig
    policies: dict[Role, Policy]
    n_envs: int
    env_rng: np.random.Generator
    sample_rng: np.random.Generator

    def __post_init__(self):
        self.layout = build_layout(self.config)
        self.schema = role_schema(self.config)
        self.specs = feat.build_specs(self.layout, self.schema)
        self.roles = sorted(self.policies.keys())
        self.has_occlusion = len(self.layout.obstacle_idx) > 0
        seeds = self._draw_seeds()
        self.vec = VecWorld(self.config, seeds)

    def _draw_seeds(self) -> list[int]:
        return [int(s) for s in self.env_rng.integers(0, 2**62, size=self.n_envs)]

    def step_packs(self):
        """Observation packs for the current state: (actor, critic, bundle)."""
        bundle = feat.compute_bundle(
            self.vec.positions, self.vec.velocities, self.layout, self.schema
        )
        packs = {}
        critic_packs = {}
        for role in self.roles:
            arch = self.policies[role].arch.name
            packs[role] = _extract_packs(arch, bundle, {role: self.specs[role]})[role]
        if self.has_occlusion:
            full = replace(bundle, visible=np.ones_like(bundle.visible))
            for role in self.roles:
                arch = self.policies[role].arch.name
                critic_packs[role] = _extract_packs(
                    arch, full, {role: self.specs[role]}
                )[role]
        else:
            critic_packs = {role: None for role in self.roles}
        return packs, critic_packs, bundle

    def act_all(self, packs, critic_packs, bundle, deterministic: bool):
        """Per-role action sampling; returns (global actions (E, A, 2), store)."""
        n_envs = self.vec.n_envs
        a_total = self.layout.n_controllable
        global_actions = np.zeros((n_envs, a_total, 2))
        store = {}
        for role in self.roles:
            policy = self.policies[role]
            with no_grad():
                mu, value = policy_heads(policy, packs[role], critic_packs[role])
            mu_d = mu.data
            if deterministic:
                raw = mu_d
                log_probs = np.zeros(len(mu_d))
            else:
                std = np.exp(policy.log_std.data)
                eps = self.sample_rng.standard_normal(mu_d.shape)
                raw = mu_d + std * eps
                z = (raw - mu_d) / std
                log_probs = (
                    -0.5 * np.sum(z * z, axis=-1)
                    - np.sum(policy.log_std.data)
                    - np.log(2.0 * np.pi)
                )
            capped = cap_norm(raw, policy.arch.a_max)
            slots = self.specs[role].slots
            local = capped.reshape(n_envs, len(slots), 2)
            if policy.arch.name in LOCAL_FRAME_ARCHS:
                rot = bundle.rotations[:, slots]
                world = np.einsum("eaij,eaj->eai", rot, local)
            else:
                world = local
            global_actions[:, slots] = world
            store[role] = (raw, log_probs, value.data)
        return global_actions, store

    def collect(self, steps: int) -> tuple[dict[Role, RolloutBatch], dict]:
        """Run `steps` env steps (counted across the bank: n_envs per tick)
        in whole episodes and return per-role batches plus reward stats."""
        horizon = self.config.horizon
        if steps % (self.n_envs * horizon) != 0:
            raise ConfigError(
                f"collection steps {steps} must be a multiple of "
                f"n_envs*horizon = {self.n_envs * horizon}"
            )
        episodes = steps // (self.n_envs * horizon)
        per_role: dict[Role, dict] = {
            r: {"packs": [], "critic": [], "actions": [], "logp": [],
                "rewards": [], "values": [], "dones": []}
            for r in self.roles
        }
        episode_returns: dict[Role, list[float]] = {r: [] for r in self.roles}

        for _ in range(episodes):
            ep_rewards = {r: [] for r in self.roles}
            for t in range(horizon):
                packs, critic_packs, bundle = self.step_packs()
                actions, store = self.act_all(packs, critic_packs, bundle, False)
                rewards, done = self.vec.step(actions)
                for role in self.roles:
                    raw, logp, values = store[role]
                    slots = self.specs[role].slots
                    rec = per_role[role]
                    rec["packs"].append(packs[role])
                    if critic_packs[role] is not None:
                        rec["critic"].append(critic_packs[role])
                    rec["actions"].append(raw)
                    rec["logp"].append(logp)
                    rec["rewards"].append(rewards[:, slots].reshape(-1))
                    rec["values"].append(values)
                    rec["dones"].append(
                        np.full(len(values), 1.0 if done else 0.0)
                    )
                    ep_rewards[role].append(rewards[:, slots])
            for role in self.roles:
                # per-agent episode returns, averaged over agents
                ret = np.sum(ep_rewards[role], axis=0)  # (E, A_r)
                episode_returns[role].extend(ret.mean(axis=-1).tolist())
            self.vec.reset_all(self._draw_seeds())

        batches = {}
        for role in self.roles:
            rec = per_role[role]
            batches[role] = RolloutBatch(
                role=role,
                pack=_concat_packs(rec["packs"]),
                critic_pack=_concat_packs(rec["critic"]) if rec["critic"] else None,
                actions=np.concatenate(rec["actions"]),
                log_probs=np.concatenate(rec["logp"]),
                rewards=np.stack(rec["rewards"]),
                values=np.stack(rec["values"]),
                dones=np.stack(rec["dones"]),
            )
        stats = {
            role: float(np.mean(episode_returns[role])) for role in self.roles
        }
        return batches, stats


def collect_rollouts(
    config: ScenarioConfig,
    policies: dict[Role, Policy],
    steps: int,
    n_envs: int,
    env_rng: np.random.Generator,
    sample_rng: np.random.Generator,
) -> tuple[dict[Role, RolloutBatch], dict]:
    """Convenience one-shot collection (fresh env bank)."""
    col = Collector(config, policies, n_envs, env_rng, sample_rng)
    return col.collect(steps)


# ---------------------------------------------------------------------------
# PPO update
# ---------------------------------------------------------------------------


def finalize_batch(batch: RolloutBatch, gamma: float, lam: float) -> None:
    """Attach normalized advantages and returns (terminal bootstrap zero:
    collection always ends on episode boundaries)."""
    bootstrap = np.zeros(batch.rewards.shape[1])
    adv, rets = compute_gae(
        batch.rewards, batch.values, batch.dones, bootstrap, gamma, lam
    )
    batch.returns = rets.reshape(-1)
    batch.advantages = normalize_advantages(adv.reshape(-1))


def ppo_update(
    batches: dict[Role, RolloutBatch],
    policies: dict[Role, Policy],
    optimizers: dict[Role, Adam],
    config: TrainConfig,
    shuffle_rng: np.random.Generator,
    lr: float | None = None,
) -> dict[Role, dict]:
    """Clipped-surrogate epochs over shuffled minibatches, one optimizer step
    per minibatch, all roles updated from their own disjoint batches."""
    stats: dict[Role, dict] = {}
    for role in sorted(batches.keys()):
        batch = batches[role]
        policy = policies[role]
        opt = optimizers[role]
        params = parameters_of(policy)
        if batch.advantages is None or batch.returns is None:
            raise ContractError("finalize_batch must run before ppo_update")
        m = batch.size
        agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "n": 0}
        for _ in range(config.ppo_epochs):
            perm = shuffle_rng.permutation(m)
            for chunk in np.array_split(perm, config.minibatches):
                pack_mb = select_pack(batch.pack, chunk)
                critic_mb = (
                    select_pack(batch.critic_pack, chunk)
                    if batch.critic_pack is not None
                    else None
                )
                logp, value, entropy = evaluate_actions(
                    pack_mb, batch.actions[chunk], policy, critic_mb
                )
                adv = batch.advantages[chunk]
                rets = batch.returns[chunk]
                ratio = (logp - batch.log_probs[chunk]).exp()
                clipped = ratio.clip(1.0 - config.clip_eps, 1.0 + config.clip_eps)
                surrogate = -(ratio * adv).minimum(clipped * adv).mean()
                if config.value_clip > 0.0:
                    old_v = batch.values.reshape(-1)[chunk]
                    v_clip = Tensor(old_v) + (value - old_v).clip(
                        -config.value_clip, config.value_clip
                    )
                    err = ((value - rets) ** 2.0).maximum((v_clip - rets) ** 2.0)
                    value_loss = err.mean() * 0.5
                else:
                    value_loss = ((value - rets) ** 2.0).mean() * 0.5
                loss = (
                    surrogate
                    + value_loss * config.value_coef
                    - entropy * config.entropy_coef
                )
                if not np.isfinite(loss.data):
                    raise TrainingError(
                        f"non-finite loss for role {role.name}: "
                        f"policy={surrogate.data}, value={value_loss.data}"
                    )
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(params, config.max_grad_norm)
                opt.step(lr=lr)
                agg["policy_loss"] += float(surrogate.data)
                agg["value_loss"] += float(value_loss.data)
                agg["entropy"] += float(entropy.data)
                agg["n"] += 1
        n = max(agg.pop("n"), 1)
        stats[role] = {k: v / n for k, v in agg.items()}
    return stats


# ---------------------------------------------------------------------------
# Full training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    policies: dict[Role, Policy]
    archs: dict[Role, ArchConfig]
    metrics: list[dict]
    scenario: ScenarioConfig
    train_config: TrainConfig
    steps_done: int


def resolve_archs(
    arch: ArchConfig | dict[Role, ArchConfig], config: ScenarioConfig
) -> dict[Role, ArchConfig]:
    roles = controllable_roles(config)
    if isinstance(arch, ArchConfig):
        return {r: arch for r in roles}
    missing = [r.name for r in roles if r not in arch]
    if missing:
        raise ConfigError(f"no arch given for roles: {missing}")
    return {r: arch[r] for r in roles}


def train(
    scenario: ScenarioConfig,
    train_config: TrainConfig,
    arch: ArchConfig | dict[Role, ArchConfig],
    initial_policies: dict[Role, Policy] | None = None,
    metrics_hook=None,
    log=None,
) -> TrainResult:
    """Run MAPPO until `total_steps` env steps; returns trained per-role
    policies and the metrics log (one row per update)."""
    scenario.validate()
    train_config.validate()
    archs = resolve_archs(arch, scenario)
    if train_config.rollout_length % scenario.horizon != 0:
        raise ConfigError(
            f"rollout_length {train_config.rollout_length} must be a multiple "
            f"of the horizon {scenario.horizon}"
        )
    n_envs = train_config.rollout_length // scenario.horizon

    root = np.random.SeedSequence(train_config.seed)
    init_ss, env_ss, sample_ss, shuffle_ss, eval_ss = root.spawn(5)
    init_rng = np.random.default_rng(init_ss)
    layout = build_layout(scenario)

    if initial_policies is not None:
        policies = dict(initial_policies)
        for role in sorted(policies.keys()):
            if policies[role].arch != archs[role]:
                raise ConfigError(
                    f"warm-start policy arch mismatch for role {role.name}"
                )
    else:
        policies = {
            role: build_policy(archs[role], role, scenario, layout, init_rng)
            for role in controllable_roles(scenario)
        }
    optimizers = {
        role: Adam(parameters_of(policies[role]), lr=train_config.lr)
        for role in sorted(policies.keys())
    }
    collector = Collector(
        scenario,
        policies,
        n_envs,
        np.random.default_rng(env_ss),
        np.random.default_rng(sample_ss),
    )
    shuffle_rng = np.random.default_rng(shuffle_ss)
    eval_seed = int(np.random.default_rng(eval_ss).integers(0, 2**62))

    updates = train_config.total_steps // train_config.rollout_length
    metrics: list[dict] = []
    steps_done = 0
    next_eval = train_config.eval_interval
    t_start = time.perf_counter()
    for update in range(updates):
        lr = train_config.lr
        if train_config.lr_decay:
            lr = train_config.lr * (1.0 - update / max(updates, 1))
        batches, reward_stats = collector.collect(train_config.rollout_length)
        for batch in batches.values():
            finalize_batch(batch, train_config.gamma, train_config.lam)
        loss_stats = ppo_update(
            batches, policies, optimizers, train_config, shuffle_rng, lr=lr
        )
        steps_done += train_config.rollout_length
        row: dict = {"step": steps_done, "lr": lr}
        for role in sorted(policies.keys()):
            tag = role.name.lower()
            row[f"{tag}_reward"] = reward_stats[role]
            row[f"{tag}_policy_loss"] = loss_stats[role]["policy_loss"]
            row[f"{tag}_value_loss"] = loss_stats[role]["value_loss"]
            row[f"{tag}_entropy"] = loss_stats[role]["entropy"]
        if train_config.eval_interval and steps_done >= next_eval:
            from .evaluation import evaluate  # local import: avoids a cycle

            report = evaluate(
                policies,
                scenario,
                episodes=train_config.eval_episodes,
                seeds=[eval_seed],
            )
            for role_tag, value in report.mean_by_role.items():
                row[f"eval_{role_tag}"] = value
            next_eval += train_config.eval_interval
        metrics.append(row)
        if metrics_hook is not None:
            metrics_hook(row)
        if log is not None and (update % 10 == 0 or update == updates - 1):
            el = time.perf_counter() - t_start
            pretty = {r.name.lower(): round(v, 3) for r, v in reward_stats.items()}
            log(
                f"update {update + 1}/{updates} step {steps_done} "
                f"reward {pretty} ({el:.1f}s)"
            )
    return TrainResult(
        policies=policies,
        archs=archs,
        metrics=metrics,
        scenario=scenario,
        train_config=train_config,
        steps_done=steps_done,
    )
