"""
Dual-prior motion model
=======================
A conditional VAE over motion transitions with two latent groups:
z_m for the body state x and z_g for the ground interaction g.

    posterior encoders   q(z_m | x_prev, x_curr),  q(z_g | g_prev, g_curr)
    conditional priors   p(z_m | x_prev),          p(z_g | g_prev)
    shared decoder       (z_m, z_g, x_prev, g_prev) -> x_prev + dx, g_hat, contact logits

Also holds the training objective, autoregressive rollout from the priors and
teacher-forced reconstruction from the posteriors.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.errors import ConfigError, DimensionError, NumericError, RolloutDivergenceError
from ..body.skeleton import DTYPE, as_tensor
from ..body.ground import GroundPlane, interaction_vector
from .networks import GaussianParams, ModelConfig, build_mlp, kl_diag_gaussians, sample_latent

logger = logging.getLogger(__name__)

LOSS_TERMS = ("recon_x", "recon_g", "kl_m", "kl_g", "consist", "contact")
TRAINING_MODES = ("teacher_forced", "rollout")
ROLLOUT_MODES = ("sample", "mean")
_STD_FLOOR = 0.05


@dataclass
class DecoderOutput:
    x_hat: torch.Tensor
    g_hat: torch.Tensor
    contact_logits: torch.Tensor


@dataclass
class TransitionBatch:
    """Windows of L+1 consecutive frames; frame 0 is the conditioning state.

    states (B, L+1, 207), interactions (B, L+1, 46), contacts (B, L+1, 9),
    plane_normal (B, 3), plane_offset (B,).
    """
    states: torch.Tensor
    interactions: torch.Tensor
    contacts: torch.Tensor
    plane_normal: torch.Tensor
    plane_offset: torch.Tensor

    def __post_init__(self):
        size = self.states.shape[0]
        parts = (self.interactions, self.contacts, self.plane_normal, self.plane_offset)
        if any(p.shape[0] != size for p in parts):
            raise DimensionError("TransitionBatch parts have different batch sizes.")
        if self.states.shape[1] < 2:
            raise DimensionError("TransitionBatch windows need at least two frames.")

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def plane(self) -> GroundPlane:
        return GroundPlane(self.plane_normal, self.plane_offset)

    @property
    def x_prev(self):
        return self.states[:, 0]

    @property
    def x_curr(self):
        return self.states[:, 1]

    @property
    def g_prev(self):
        return self.interactions[:, 0]

    @property
    def g_curr(self):
        return self.interactions[:, 1]

    @property
    def c_curr(self):
        return self.contacts[:, 1]

    def select(self, index) -> "TransitionBatch":
        return TransitionBatch(self.states[index], self.interactions[index], self.contacts[index],
                               self.plane_normal[index], self.plane_offset[index])


@dataclass
class LossBreakdown:
    total: torch.Tensor
    terms: Dict[str, torch.Tensor]
    per_item: torch.Tensor

    def as_floats(self):
        return {"total": float(self.total), **{k: float(v) for k, v in self.terms.items()}}


@dataclass
class RolloutResult:
    """Steps 1..T of a decoded sequence."""
    states: torch.Tensor
    interactions: torch.Tensor
    contact_logits: torch.Tensor

    @property
    def contact_probs(self):
        return torch.sigmoid(self.contact_logits)


@dataclass
class LatentRollout(RolloutResult):
    """Differentiable rollout from given latents plus the prior evaluated at every step."""
    prior_motion: GaussianParams = None
    prior_interaction: GaussianParams = None


class DualPriorModel(nn.Module):
    """Posterior encoders, conditional priors and the shared decoder with its three heads."""

    def __init__(self, config: Optional[ModelConfig] = None):
        super().__init__()
        self.config = config or ModelConfig()
        c = self.config
        s, g, k_m, k_g = c.state_dim, c.interaction_dim, c.latent_dim_motion, c.latent_dim_interaction
        self.motion_encoder = build_mlp(2 * s, c.motion_width, c.motion_depth, 2 * k_m, c.activation)
        self.interaction_encoder = build_mlp(2 * g, c.interaction_width, c.interaction_depth, 2 * k_g, c.activation)
        self.motion_prior = build_mlp(s, c.motion_width, c.motion_depth, 2 * k_m, c.activation)
        self.interaction_prior = build_mlp(g, c.interaction_width, c.interaction_depth, 2 * k_g, c.activation)
        self.shared_decoder = build_mlp(k_m + k_g + s + g, c.decoder_width, c.decoder_depth, None, c.activation)
        self.state_head = nn.Linear(c.decoder_width, s).to(DTYPE)
        self.interaction_head = nn.Linear(c.decoder_width, g).to(DTYPE)
        self.contact_head = nn.Linear(c.decoder_width, c.contact_dim).to(DTYPE)
        self.register_buffer("x_mean", torch.zeros(s, dtype=DTYPE))
        self.register_buffer("x_std", torch.ones(s, dtype=DTYPE))
        self.register_buffer("g_mean", torch.zeros(g, dtype=DTYPE))
        self.register_buffer("g_std", torch.ones(g, dtype=DTYPE))

    # -- input normalization ---------------------------------------------------

    def set_normalization(self, x_mean, x_std, g_mean, g_std):
        """Stores input statistics; outputs stay in physical units."""
        with torch.no_grad():
            self.x_mean.copy_(as_tensor(x_mean))
            self.x_std.copy_(as_tensor(x_std).clamp_min(_STD_FLOOR))
            self.g_mean.copy_(as_tensor(g_mean))
            self.g_std.copy_(as_tensor(g_std).clamp_min(_STD_FLOOR))

    def _nx(self, x):
        return (x - self.x_mean) / self.x_std

    def _ng(self, g):
        return (g - self.g_mean) / self.g_std

    def _check(self, tensor, dim, name):
        if tensor.shape[-1] != dim:
            raise DimensionError(f"{name} must have last dim {dim}, got {tuple(tensor.shape)}.")

    # -- networks --------------------------------------------------------------

    def encode_motion(self, x_prev, x_curr) -> GaussianParams:
        self._check(x_prev, self.config.state_dim, "x_prev")
        self._check(x_curr, self.config.state_dim, "x_curr")
        return GaussianParams.from_output(self.motion_encoder(torch.cat([self._nx(x_prev), self._nx(x_curr)], -1)))

    def encode_interaction(self, g_prev, g_curr) -> GaussianParams:
        self._check(g_prev, self.config.interaction_dim, "g_prev")
        self._check(g_curr, self.config.interaction_dim, "g_curr")
        return GaussianParams.from_output(self.interaction_encoder(torch.cat([self._ng(g_prev), self._ng(g_curr)], -1)))

    def prior_motion(self, x_prev) -> GaussianParams:
        self._check(x_prev, self.config.state_dim, "x_prev")
        return GaussianParams.from_output(self.motion_prior(self._nx(x_prev)))

    def prior_interaction(self, g_prev) -> GaussianParams:
        self._check(g_prev, self.config.interaction_dim, "g_prev")
        return GaussianParams.from_output(self.interaction_prior(self._ng(g_prev)))

    def decode(self, z_m, z_g, x_prev, g_prev) -> DecoderOutput:
        """x_hat = x_prev + state head; interaction and contact heads are direct."""
        self._check(z_m, self.config.latent_dim_motion, "z_m")
        self._check(z_g, self.config.latent_dim_interaction, "z_g")
        self._check(x_prev, self.config.state_dim, "x_prev")
        self._check(g_prev, self.config.interaction_dim, "g_prev")
        h = self.shared_decoder(torch.cat([z_m, z_g, self._nx(x_prev), self._ng(g_prev)], -1))
        return DecoderOutput(
            x_hat=x_prev + self.state_head(h),
            g_hat=self.interaction_head(h),
            contact_logits=self.contact_head(h),
        )


# =============================================================================
# TRAINING OBJECTIVE
# =============================================================================

def loss_terms_from_outputs(x_curr, g_curr, c_curr, plane: GroundPlane, out: DecoderOutput,
                            q_m: GaussianParams, p_m: GaussianParams,
                            q_g: GaussianParams, p_g: GaussianParams) -> Dict[str, torch.Tensor]:
    """Unweighted per-item terms (batch shape) from raw decoder outputs."""
    consistency_target = interaction_vector(out.x_hat, plane)
    return {
        "recon_x": ((x_curr - out.x_hat) ** 2).sum(-1),
        "recon_g": ((g_curr - out.g_hat) ** 2).sum(-1),
        "kl_m": kl_diag_gaussians(q_m, p_m),
        "kl_g": kl_diag_gaussians(q_g, p_g),
        "consist": ((out.g_hat - consistency_target) ** 2).sum(-1),
        "contact": F.binary_cross_entropy_with_logits(out.contact_logits, c_curr.to(out.contact_logits.dtype),
                                                      reduction="none").sum(-1),
    }


def training_loss(model: DualPriorModel, batch: TransitionBatch, mode: str = "teacher_forced",
                  weights: Optional[Dict[str, float]] = None, seed: Optional[int] = None,
                  generator: Optional[torch.Generator] = None, kl_scale: float = 1.0,
                  sample_posterior: bool = True) -> LossBreakdown:
    """Weighted ELBO-style loss averaged over the window steps and the batch.

    teacher_forced conditions every step on the true previous frame; rollout
    feeds the model's own previous prediction forward inside the window.
    """
    if mode not in TRAINING_MODES:
        raise ConfigError(f"Unknown training mode '{mode}'.")
    weights = {**model.config.loss_weights(), **(weights or {})}
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(int(seed))
    plane = batch.plane

    x_prev, g_prev = batch.states[:, 0], batch.interactions[:, 0]
    accumulated = {name: 0.0 for name in LOSS_TERMS}
    for t in range(1, batch.steps + 1):
        x_curr, g_curr = batch.states[:, t], batch.interactions[:, t]
        q_m = model.encode_motion(x_prev, x_curr)
        q_g = model.encode_interaction(g_prev, g_curr)
        p_m = model.prior_motion(x_prev)
        p_g = model.prior_interaction(g_prev)
        if sample_posterior:
            z_m, z_g = sample_latent(q_m, generator=generator), sample_latent(q_g, generator=generator)
        else:
            z_m, z_g = q_m.mean, q_g.mean
        out = model.decode(z_m, z_g, x_prev, g_prev)
        step_terms = loss_terms_from_outputs(x_curr, g_curr, batch.contacts[:, t], plane, out, q_m, p_m, q_g, p_g)
        for name, value in step_terms.items():
            accumulated[name] = accumulated[name] + value / batch.steps
        if mode == "rollout":
            x_prev, g_prev = out.x_hat, out.g_hat
        else:
            x_prev, g_prev = x_curr, g_curr

    per_item = 0.0
    terms = {}
    for name in LOSS_TERMS:
        value = accumulated[name]
        if not bool(torch.isfinite(value).all()):
            raise NumericError(name)
        scale = kl_scale if name.startswith("kl") else 1.0
        per_item = per_item + weights[name] * scale * value
        terms[name] = value.mean()
    return LossBreakdown(total=per_item.mean(), terms=terms, per_item=per_item)


# =============================================================================
# INFERENCE
# =============================================================================

def rollout(model: DualPriorModel, x0, g0, T: int, mode: str = "mean", seed: Optional[int] = None,
            plane: Optional[GroundPlane] = None) -> RolloutResult:
    """Autoregressive generation from the conditional priors (steps 1..T)."""
    if T < 1:
        raise ConfigError(f"Rollout length must be at least 1, got {T}.")
    if mode not in ROLLOUT_MODES:
        raise ConfigError(f"Unknown rollout mode '{mode}'.")
    x_prev = as_tensor(x0)
    g_prev = interaction_vector(x_prev, plane) if plane is not None else as_tensor(g0)
    generator = torch.Generator().manual_seed(int(seed or 0)) if mode == "sample" else None

    states, interactions, logits = [], [], []
    with torch.no_grad():
        for step in range(1, T + 1):
            p_m, p_g = model.prior_motion(x_prev), model.prior_interaction(g_prev)
            if mode == "sample":
                z_m, z_g = sample_latent(p_m, generator=generator), sample_latent(p_g, generator=generator)
            else:
                z_m, z_g = p_m.mean, p_g.mean
            out = model.decode(z_m, z_g, x_prev, g_prev)
            if not (torch.isfinite(out.x_hat).all() and torch.isfinite(out.g_hat).all()):
                raise RolloutDivergenceError(step)
            states.append(out.x_hat)
            interactions.append(out.g_hat)
            logits.append(out.contact_logits)
            x_prev, g_prev = out.x_hat, out.g_hat
    return RolloutResult(torch.stack(states), torch.stack(interactions), torch.stack(logits))


def rollout_latents(model: DualPriorModel, x0, g0, z_m, z_g) -> LatentRollout:
    """Differentiable decode chain driven by given latents z_m (T, k_m), z_g (T, k_g)."""
    x_prev, g_prev = x0, g0
    states, interactions, logits = [], [], []
    prior_means_m, prior_logvars_m, prior_means_g, prior_logvars_g = [], [], [], []
    for t in range(z_m.shape[0]):
        p_m, p_g = model.prior_motion(x_prev), model.prior_interaction(g_prev)
        prior_means_m.append(p_m.mean)
        prior_logvars_m.append(p_m.log_variance)
        prior_means_g.append(p_g.mean)
        prior_logvars_g.append(p_g.log_variance)
        out = model.decode(z_m[t], z_g[t], x_prev, g_prev)
        states.append(out.x_hat)
        interactions.append(out.g_hat)
        logits.append(out.contact_logits)
        x_prev, g_prev = out.x_hat, out.g_hat
    return LatentRollout(
        states=torch.stack(states),
        interactions=torch.stack(interactions),
        contact_logits=torch.stack(logits),
        prior_motion=GaussianParams(torch.stack(prior_means_m), torch.stack(prior_logvars_m)),
        prior_interaction=GaussianParams(torch.stack(prior_means_g), torch.stack(prior_logvars_g)),
    )


def posterior_means(model: DualPriorModel, x_seq, g_seq):
    """Posterior means of every consecutive pair: (T, k_m), (T, k_g) for T+1 frames."""
    x_seq, g_seq = as_tensor(x_seq), as_tensor(g_seq)
    q_m = model.encode_motion(x_seq[:-1], x_seq[1:])
    q_g = model.encode_interaction(g_seq[:-1], g_seq[1:])
    return q_m.mean, q_g.mean


def track_latents(model: DualPriorModel, x0, g0, x_targets, g_targets):
    """Posterior means along the model's own rollout: z_t = mean q(x_hat_{t-1}, target_t).

    Decoding the returned (T, k_m), (T, k_g) latents from (x0, g0) with
    rollout_latents reproduces the tracked sequence as long as every step
    decodes to finite values.
    """
    x_prev, g_prev = as_tensor(x0), as_tensor(g0)
    x_targets, g_targets = as_tensor(x_targets), as_tensor(g_targets)
    motion, interaction = [], []
    with torch.no_grad():
        for t in range(x_targets.shape[0]):
            z_m = model.encode_motion(x_prev, x_targets[t]).mean
            z_g = model.encode_interaction(g_prev, g_targets[t]).mean
            motion.append(z_m)
            interaction.append(z_g)
            out = model.decode(z_m, z_g, x_prev, g_prev)
            if torch.isfinite(out.x_hat).all() and torch.isfinite(out.g_hat).all():
                x_prev, g_prev = out.x_hat, out.g_hat
            else:
                # resync on a non-finite step so later latents stay finite
                x_prev, g_prev = x_targets[t], g_targets[t]
    return torch.stack(motion), torch.stack(interaction)


def reconstruct(model: DualPriorModel, x_seq, g_seq, seed: Optional[int] = None) -> RolloutResult:
    """Teacher-forced reconstruction: every step decoded from the true previous frame.

    Latents are posterior means, or posterior samples when a seed is given.
    """
    x_seq, g_seq = as_tensor(x_seq), as_tensor(g_seq)
    with torch.no_grad():
        q_m = model.encode_motion(x_seq[:-1], x_seq[1:])
        q_g = model.encode_interaction(g_seq[:-1], g_seq[1:])
        if seed is None:
            z_m, z_g = q_m.mean, q_g.mean
        else:
            generator = torch.Generator().manual_seed(int(seed))
            z_m, z_g = sample_latent(q_m, generator=generator), sample_latent(q_g, generator=generator)
        out = model.decode(z_m, z_g, x_seq[:-1], g_seq[:-1])
    return RolloutResult(out.x_hat, out.g_hat, out.contact_logits)
