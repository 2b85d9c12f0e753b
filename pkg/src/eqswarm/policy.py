"""Per-role actor-critic policies.

The main pipeline (`canon_attn`) encodes canonicalized role subgraphs with
attention, reads a Gaussian action head in the agent's local frame and
rotates the sampled action back into the world.  Baselines share the Gaussian
machinery but swap the feature trunk: flat global observations (`mlp`), flat
canonicalized observations (`mlp_local`) and a homogeneous-graph GCN (`gcn`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .canonical import CanonicalFrame
from .errors import ConfigError, ContractError
from .features import GcnPack, flat_obs_dim, gcn_feat_dim
from .graphs import NODE_FEATURE_DIM, RoleGraphBatch, RoleGraphs
from .nn import (
    AttentionLayerParams,
    EncoderParams,
    LinearParams,
    MlpParams,
    RoleEncoderParams,
    Tensor,
    encode_batch,
    gcn_layer_forward,
    masked_mean_pool,
    mlp_forward,
    orthogonal,
    parameter,
)
from .nn import no_grad as nn_no_grad
from .sim import EntityLayout, Role, ScenarioConfig, role_schema

LOG_2PI = math.log(2.0 * math.pi)

ARCH_CANON_ATTN = "canon_attn"
ARCH_MLP = "mlp"
ARCH_MLP_LOCAL = "mlp_local"
ARCH_GCN = "gcn"

ARCHS = (ARCH_CANON_ATTN, ARCH_MLP, ARCH_MLP_LOCAL, ARCH_GCN)

# Architectures whose encoders accept any team size.
SIZE_AGNOSTIC_ARCHS = (ARCH_CANON_ATTN, ARCH_GCN)

# Architectures whose actions live in the agent's canonical frame and must be
# rotated back into the world.
LOCAL_FRAME_ARCHS = (ARCH_CANON_ATTN, ARCH_MLP_LOCAL)


@dataclass(frozen=True)
class ArchConfig:
    """Network sizes shared by all policies of a run."""

    name: str = ARCH_CANON_ATTN
    d_model: int = 32
    heads: int = 4
    d_ff: int = 64
    attn_layers: int = 2
    gcn_layers: int = 2
    head_hidden: tuple[int, ...] = (64, 64)
    log_std_init: float = -0.5
    a_max: float = 1.0

    def validate(self) -> None:
        if self.name not in ARCHS:
            raise ConfigError(f"unknown arch {self.name!r}; choose from {ARCHS}")
        if self.d_model % self.heads != 0:
            raise ConfigError("d_model must be divisible by heads")


def _linear_params(rng, d_in: int, d_out: int, gain: float) -> LinearParams:
    return LinearParams(
        w=parameter(orthogonal(rng, d_in, d_out, gain)),
        b=parameter(np.zeros(d_out)),
    )


def _mlp_params(rng, dims: list[int], final_gain: float = 1.0) -> MlpParams:
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        gain = final_gain if i == len(dims) - 2 else math.sqrt(2.0)
        layers.append(_linear_params(rng, a, b, gain))
    return MlpParams(layers=layers)


def _attention_params(rng, arch: ArchConfig) -> AttentionLayerParams:
    d = arch.d_model
    return AttentionLayerParams(
        wq=parameter(orthogonal(rng, d, d)),
        wk=parameter(orthogonal(rng, d, d)),
        wv=parameter(orthogonal(rng, d, d)),
        ff=_mlp_params(rng, [d, arch.d_ff, d]),
        heads=arch.heads,
    )


def _named_mlp(prefix: str, p: MlpParams):
    for i, layer in enumerate(p.layers):
        yield f"{prefix}/{i}/w", layer.w
        yield f"{prefix}/{i}/b", layer.b


@dataclass
class RolePolicy:
    """Graph-attention actor-critic for one controllable role; all agents of
    the role share these parameters."""

    role: Role
    schema: tuple[Role, ...]
    arch: ArchConfig
    encoder: EncoderParams
    actor: MlpParams
    log_std: Tensor
    critic: MlpParams

    def features(self, pack: RoleGraphBatch) -> Tensor:
        return encode_batch(pack, self.encoder)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for r in self.schema:
            rp = self.encoder.roles[r]
            tag = f"encoder/{r.name.lower()}"
            out.append((f"{tag}/embed/w", rp.embed.w))
            out.append((f"{tag}/embed/b", rp.embed.b))
            for li, lp in enumerate(rp.layers):
                out.append((f"{tag}/layer{li}/wq", lp.wq))
                out.append((f"{tag}/layer{li}/wk", lp.wk))
                out.append((f"{tag}/layer{li}/wv", lp.wv))
                out.extend(_named_mlp(f"{tag}/layer{li}/ff", lp.ff))
        out.extend(_named_mlp("actor", self.actor))
        out.append(("log_std", self.log_std))
        out.extend(_named_mlp("critic", self.critic))
        return out


@dataclass
class FlatPolicy:
    """MLP actor-critic on a fixed-width observation vector."""

    role: Role
    arch: ArchConfig
    obs_dim: int
    actor: MlpParams
    log_std: Tensor
    critic: MlpParams

    def features(self, pack: np.ndarray) -> Tensor:
        if pack.shape[-1] != self.obs_dim:
            raise ContractError(
                f"observation width {pack.shape[-1]} != policy width "
                f"{self.obs_dim} (fixed-width architecture)"
            )
        return Tensor(pack)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(_named_mlp("actor", self.actor))
        out.append(("log_std", self.log_std))
        out.extend(_named_mlp("critic", self.critic))
        return out


@dataclass
class GcnPolicy:
    """GCN actor-critic over the homogeneous visible-entity graph."""

    role: Role
    arch: ArchConfig
    feat_dim: int
    gcn: list[LinearParams]
    actor: MlpParams
    log_std: Tensor
    critic: MlpParams

    def features(self, pack: GcnPack) -> Tensor:
        h = Tensor(pack.feats)
        for layer in self.gcn:
            h = gcn_layer_forward(h, pack.adjacency, layer)
        return masked_mean_pool(h, pack.mask)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.gcn):
            out.append((f"gcn/{i}/w", layer.w))
            out.append((f"gcn/{i}/b", layer.b))
        out.extend(_named_mlp("actor", self.actor))
        out.append(("log_std", self.log_std))
        out.extend(_named_mlp("critic", self.critic))
        return out


Policy = RolePolicy | FlatPolicy | GcnPolicy


def build_policy(
    arch: ArchConfig,
    role: Role,
    config: ScenarioConfig,
    layout: EntityLayout,
    rng: np.random.Generator,
) -> Policy:
    arch.validate()
    schema = role_schema(config)
    heads = list(arch.head_hidden)
    if arch.name == ARCH_CANON_ATTN:
        enc = EncoderParams(schema=schema, d_model=arch.d_model)
        for r in schema:
            enc.roles[r] = RoleEncoderParams(
                embed=_linear_params(
                    rng, NODE_FEATURE_DIM, arch.d_model, math.sqrt(2.0)
                ),
                layers=[
                    _attention_params(rng, arch) for _ in range(arch.attn_layers)
                ],
            )
        width = len(schema) * arch.d_model
        return RolePolicy(
            role=role,
            schema=schema,
            arch=arch,
            encoder=enc,
            actor=_mlp_params(rng, [width] + heads + [2], final_gain=0.01),
            log_std=parameter(np.full(2, arch.log_std_init)),
            critic=_mlp_params(rng, [width] + heads + [1]),
        )
    if arch.name in (ARCH_MLP, ARCH_MLP_LOCAL):
        obs_dim = flat_obs_dim(layout, local=arch.name == ARCH_MLP_LOCAL)
        return FlatPolicy(
            role=role,
            arch=arch,
            obs_dim=obs_dim,
            actor=_mlp_params(rng, [obs_dim] + heads + [2], final_gain=0.01),
            log_std=parameter(np.full(2, arch.log_std_init)),
            critic=_mlp_params(rng, [obs_dim] + heads + [1]),
        )
    feat_dim = gcn_feat_dim(schema)
    dims = [feat_dim] + [arch.d_model] * arch.gcn_layers
    return GcnPolicy(
        role=role,
        arch=arch,
        feat_dim=feat_dim,
        gcn=[
            _linear_params(rng, a, b, math.sqrt(2.0))
            for a, b in zip(dims[:-1], dims[1:])
        ],
        actor=_mlp_params(rng, [arch.d_model] + heads + [2], final_gain=0.01),
        log_std=parameter(np.full(2, arch.log_std_init)),
        critic=_mlp_params(rng, [arch.d_model] + heads + [1]),
    )


def parameters_of(policy: Policy) -> list[Tensor]:
    return [t for _, t in policy.named_parameters()]


# ---------------------------------------------------------------------------
# Gaussian action machinery
# ---------------------------------------------------------------------------


def policy_heads(
    policy: Policy, pack, critic_pack=None
) -> tuple[Tensor, Tensor]:
    """(action mean (B, 2), value (B,)) under the current parameters.  When
    `critic_pack` is given the value head reads features of that pack instead
    (training-time full-visibility critic)."""
    feats = policy.features(pack)
    mu = mlp_forward(feats, policy.actor)
    cfeats = feats if critic_pack is None else policy.features(critic_pack)
    value = mlp_forward(cfeats, policy.critic).reshape(-1)
    return mu, value


def gaussian_log_prob(actions: np.ndarray, mu: Tensor, log_std: Tensor) -> Tensor:
    """Diagonal-Gaussian log density of fixed actions, (B,)."""
    std = log_std.exp()
    z = (Tensor(actions) - mu) / std
    return (z * z).sum(axis=-1) * -0.5 - log_std.sum() - LOG_2PI


def gaussian_entropy(log_std: Tensor) -> Tensor:
    """Closed-form entropy of the 2D diagonal Gaussian."""
    return log_std.sum() + (1.0 + LOG_2PI)


def cap_norm(actions: np.ndarray, a_max: float) -> np.ndarray:
    """Radially rescale rows whose norm exceeds the cap.  Radial capping
    commutes with rotations, unlike per-component clipping."""
    norms = np.sqrt(np.sum(actions * actions, axis=-1, keepdims=True))
    scale = np.where(norms > a_max, a_max / np.where(norms > 0, norms, 1.0), 1.0)
    return actions * scale


@dataclass
class ActionSample:
    """One agent's sampled action with bookkeeping for PPO."""

    local_action: np.ndarray  # capped, in the agent's frame
    global_action: np.ndarray  # rotated back into the world frame
    log_prob: float  # density of the pre-cap sample
    value: float


def act(
    graphs: RoleGraphs,
    frame: CanonicalFrame,
    policy: RolePolicy,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
) -> ActionSample:
    """Sample (or take the mean of) the local Gaussian action for one agent
    and rotate it into the world frame."""
    pack = RoleGraphBatch.from_graphs([graphs])
    with nn_no_grad():
        mu, value = policy_heads(policy, pack)
    mu_d = mu.data[0]
    if deterministic:
        raw = mu_d
    else:
        if rng is None:
            raise ContractError("stochastic act() needs an rng")
        raw = mu_d + np.exp(policy.log_std.data) * rng.standard_normal(2)
    log_prob = float(
        gaussian_log_prob(raw[None, :], mu, policy.log_std).data[0]
    )
    local = cap_norm(raw[None, :], policy.arch.a_max)[0]
    return ActionSample(
        local_action=local,
        global_action=frame.rotation @ local,
        log_prob=log_prob,
        value=float(value.data[0]),
    )


def evaluate_actions(
    pack,
    actions: np.ndarray,
    policy: Policy,
    critic_pack=None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Log-probabilities, values and entropy of stored (pre-cap) actions under
    the current parameters; used by the PPO surrogate."""
    size = pack.size if hasattr(pack, "size") else pack.shape[0]
    if len(actions) != size:
        raise ContractError(
            f"batch length mismatch: {len(actions)} actions vs {size} observations"
        )
    mu, value = policy_heads(policy, pack, critic_pack)
    log_probs = gaussian_log_prob(actions, mu, policy.log_std)
    return log_probs, value, gaussian_entropy(policy.log_std)
