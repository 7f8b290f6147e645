"""
Fitting objective
=================
Variables, settings and loss terms of the latent-space motion fit.

Five terms are evaluated on one decoder rollout of the current variables:
    prior        -sum_t log N(z_t | prior of the previous rolled-out frame)
    pconsist     sum_t ||g_t - f(x_t, plane)||^2 over rolled-out frames 1..T
    data         Geman-McClure penalty of FK joints against observations
    reg_smooth   sum of squared joint accelerations
    reg_contact  normal velocity and distance of joints predicted in contact
"""

from dataclasses import dataclass, fields
from typing import Dict, Optional

import torch

from ..core.errors import ConfigError
from ..body.skeleton import DTYPE, STATE_LAYOUT, SkeletonDef, as_tensor, compute_velocities, forward_kinematics
from ..body.ground import DEFAULT_D_THRESH, GroundPlane, interaction_vector, normalize_plane
from ..model.dual_prior import DualPriorModel, LatentRollout, rollout_latents

TERMS = ("prior", "pconsist", "data", "reg_smooth", "reg_contact")
PLANE_INITS = ("horizontal", "foot_fit")


@dataclass
class OptimConfig:
    lambda_prior: float = 0.1
    lambda_pconsist: float = 1.0
    lambda_data: float = 1.0
    lambda_reg_smooth: float = 0.1
    lambda_reg_contact: float = 0.1
    stage1_iters: int = 200
    stage2_iters: int = 800
    init_iters: int = 300
    init_smooth_weight: float = 10.0
    step_size: float = 1.0
    tolerance: float = 1e-7
    data_scale_3d: float = 0.25
    data_scale_2d: float = 25.0
    d_thresh: float = DEFAULT_D_THRESH
    observation: str = "3d"
    plane_init: str = "horizontal"
    optimize_bone_scale: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_prior", "lambda_pconsist", "lambda_data", "lambda_reg_smooth", "lambda_reg_contact",
                     "init_smooth_weight", "tolerance"):
            if getattr(self, name) < 0:
                raise ConfigError(f"fitting.{name} must be non-negative.")
        for name in ("stage1_iters", "stage2_iters", "init_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"fitting.{name} must be non-negative.")
        if self.step_size <= 0 or self.data_scale_3d <= 0 or self.data_scale_2d <= 0 or self.d_thresh <= 0:
            raise ConfigError("fitting.step_size, data scales and d_thresh must be positive.")
        if self.observation not in ("3d", "2d"):
            raise ConfigError(f"fitting.observation must be '3d' or '2d', got '{self.observation}'.")
        if self.plane_init not in PLANE_INITS:
            raise ConfigError(f"fitting.plane_init must be one of {PLANE_INITS}.")

    def weights(self) -> Dict[str, float]:
        return {
            "prior": self.lambda_prior,
            "pconsist": self.lambda_pconsist,
            "data": self.lambda_data,
            "reg_smooth": self.lambda_reg_smooth,
            "reg_contact": self.lambda_reg_contact,
        }


@dataclass
class OptimVariables:
    """x0 (207,), g0 (46,), z_m (T, k_m), z_g (T, k_g), optional plane_raw (4,) and bone_scale ()."""
    x0: torch.Tensor
    g0: torch.Tensor
    z_m: torch.Tensor
    z_g: torch.Tensor
    plane_raw: Optional[torch.Tensor] = None
    bone_scale: Optional[torch.Tensor] = None

    @property
    def steps(self) -> int:
        return self.z_m.shape[0]

    def blocks(self) -> Dict[str, torch.Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    def detached(self) -> "OptimVariables":
        return OptimVariables(**{name: t.detach().clone() for name, t in self.blocks().items()})

    def replace(self, **blocks) -> "OptimVariables":
        values = self.blocks()
        values.update(blocks)
        return OptimVariables(**values)


# =============================================================================
# TERMS
# =============================================================================

def geman_mcclure(residual_sq: torch.Tensor, scale: float) -> torch.Tensor:
    """s^2 r^2 / (s^2 + r^2); saturates at s^2."""
    s2 = scale ** 2
    return s2 * residual_sq / (s2 + residual_sq)


def loss_prior(roll: LatentRollout, z_m: torch.Tensor, z_g: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood of the latents under the conditional priors along the rollout."""
    return -(roll.prior_motion.log_prob(z_m).sum() + roll.prior_interaction.log_prob(z_g).sum())


def loss_pconsist(roll: LatentRollout, plane: GroundPlane) -> torch.Tensor:
    return ((roll.interactions - interaction_vector(roll.states, plane)) ** 2).sum()


def loss_data(joints: torch.Tensor, target: torch.Tensor, scale: float, camera=None) -> torch.Tensor:
    """Robust joint residuals; with a camera, joints are projected and target holds pixels."""
    predicted = joints if camera is None else camera.project(joints)
    return geman_mcclure(((predicted - target) ** 2).sum(-1), scale).sum()


def loss_reg_smooth(joints: torch.Tensor) -> torch.Tensor:
    accel = joints[2:] - 2.0 * joints[1:-1] + joints[:-2]
    return (accel ** 2).sum()


def loss_reg_contact(joints: torch.Tensor, contact_probs: torch.Tensor, plane: GroundPlane,
                     skeleton: SkeletonDef, fps: float, d_thresh: float = DEFAULT_D_THRESH) -> torch.Tensor:
    """For frames 1..T: contact joints with probability > 0.5 should stay still and near the plane.

    joints holds frames 0..T; contact_probs holds frames 1..T.
    """
    contact = list(skeleton.contact_joint_indices)
    velocities = compute_velocities(joints, fps)[1:, contact]
    positions = joints[1:, contact]
    mask = (contact_probs.detach() > 0.5).to(joints.dtype)
    normal_velocity = (velocities * plane.normal).sum(-1)
    distance = (positions * plane.normal).sum(-1) + plane.offset
    gap = torch.clamp(distance.abs() - d_thresh, min=0.0)
    return (mask * (normal_velocity ** 2 + gap ** 2)).sum()


def loss_reg(joints, contact_probs, plane, skeleton, fps, d_thresh=DEFAULT_D_THRESH) -> torch.Tensor:
    return loss_reg_smooth(joints) + loss_reg_contact(joints, contact_probs, plane, skeleton, fps, d_thresh)


# =============================================================================
# PROBLEM
# =============================================================================

@dataclass
class Evaluation:
    terms: Dict[str, torch.Tensor]
    total: torch.Tensor
    roll: LatentRollout
    states: torch.Tensor
    joints: torch.Tensor
    plane: GroundPlane


class FitProblem:
    """Binds model, skeleton, observations and plane setting; evaluates the objective for variables."""

    def __init__(self, model: DualPriorModel, skeleton: SkeletonDef, observations, config: OptimConfig,
                 plane: Optional[GroundPlane] = None):
        self.model = model
        self.skeleton = skeleton
        self.config = config
        self.fps = observations.fps
        self.fixed_plane = plane
        self.camera = None
        if config.observation == "2d":
            if not observations.has_2d:
                raise ConfigError("2D fitting needs observations with joints_2d and a camera.")
            self.camera = observations.camera
            self.target = as_tensor(observations.joints_2d)
            self.data_scale = config.data_scale_2d
        else:
            self.target = as_tensor(observations.joints_3d)
            self.data_scale = config.data_scale_3d

    @property
    def unknown_ground(self) -> bool:
        return self.fixed_plane is None

    def plane_of(self, variables: OptimVariables) -> GroundPlane:
        if self.unknown_ground:
            return normalize_plane(variables.plane_raw)
        return self.fixed_plane

    def g0_of(self, variables: OptimVariables, plane: GroundPlane) -> torch.Tensor:
        """In the unknown-ground setting g0 always follows x0 and the current plane."""
        if self.unknown_ground:
            return interaction_vector(variables.x0, plane)
        return variables.g0

    def roll(self, variables: OptimVariables):
        plane = self.plane_of(variables)
        g0 = self.g0_of(variables, plane)
        roll = rollout_latents(self.model, variables.x0, g0, variables.z_m, variables.z_g)
        states = torch.cat([variables.x0.unsqueeze(0), roll.states], dim=0)
        pose = STATE_LAYOUT.pose(states)
        joints = forward_kinematics(self.skeleton, pose, bone_scale=variables.bone_scale)
        return roll, states, joints, plane

    def evaluate(self, variables: OptimVariables, weights: Optional[Dict[str, float]] = None) -> Evaluation:
        weights = weights if weights is not None else self.config.weights()
        roll, states, joints, plane = self.roll(variables)
        terms = {
            "prior": loss_prior(roll, variables.z_m, variables.z_g),
            "pconsist": loss_pconsist(roll, plane),
            "data": loss_data(joints, self.target, self.data_scale, self.camera),
            "reg_smooth": loss_reg_smooth(joints),
            "reg_contact": loss_reg_contact(joints, roll.contact_probs, plane, self.skeleton, self.fps,
                                            self.config.d_thresh),
        }
        total = sum(weights[name] * terms[name] for name in TERMS)
        return Evaluation(terms=terms, total=total, roll=roll, states=states, joints=joints, plane=plane)

    def objective(self, variables: OptimVariables, weights: Optional[Dict[str, float]] = None) -> torch.Tensor:
        return self.evaluate(variables, weights).total

    # per-term views in the (vars, model) form
    def loss_prior(self, variables):
        roll, _, _, _ = self.roll(variables)
        return loss_prior(roll, variables.z_m, variables.z_g)

    def loss_pconsist(self, variables):
        roll, _, _, plane = self.roll(variables)
        return loss_pconsist(roll, plane)

    def loss_data(self, variables):
        _, _, joints, _ = self.roll(variables)
        return loss_data(joints, self.target, self.data_scale, self.camera)

    def loss_reg(self, variables):
        roll, _, joints, plane = self.roll(variables)
        return loss_reg(joints, roll.contact_probs, plane, self.skeleton, self.fps, self.config.d_thresh)


def default_bone_scale(skeleton: SkeletonDef) -> torch.Tensor:
    return torch.tensor(float(skeleton.bone_scale), dtype=DTYPE)
