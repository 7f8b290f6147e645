"""
Human-ground interaction
========================
Ground planes, the per-frame interaction state g = [d, v] and contact labels.

g holds 23 signed distances (the root point r first, then joints 0..21) and the
velocity of the same 23 points projected on the plane normal.
"""

from dataclasses import dataclass

import torch

from ..core.errors import DegeneratePlaneError, DimensionError
from .skeleton import DTYPE, STATE_LAYOUT, MotionState, SkeletonDef, as_tensor, unflatten_state

INTERACTION_POINTS = 23
INTERACTION_DIM = 2 * INTERACTION_POINTS
DEFAULT_D_THRESH = 0.08
DEFAULT_V_THRESH = 0.5
_MIN_NORMAL_NORM = 1e-8


@dataclass
class GroundPlane:
    """Plane {p : normal . p + offset = 0}; normal (..., 3) is unit length, offset (...)."""
    normal: torch.Tensor
    offset: torch.Tensor

    @classmethod
    def horizontal(cls, height=0.0, up=(0.0, 0.0, 1.0)) -> "GroundPlane":
        normal = as_tensor(up)
        normal = normal / normal.norm()
        return cls(normal=normal, offset=torch.as_tensor(-float(height), dtype=DTYPE))

    @property
    def raw(self) -> torch.Tensor:
        return torch.cat([self.normal, self.offset.unsqueeze(-1)], dim=-1)

    @property
    def point(self) -> torch.Tensor:
        """The plane point closest to the origin (Q = -offset * normal)."""
        return -self.offset.unsqueeze(-1) * self.normal

    def flipped(self) -> "GroundPlane":
        return GroundPlane(-self.normal, -self.offset)

    def detach(self) -> "GroundPlane":
        return GroundPlane(self.normal.detach().clone(), self.offset.detach().clone())

    def tolist(self):
        return self.raw.detach().tolist()


@dataclass
class InteractionState:
    """Signed distances d (..., 23) in meters and normal velocities v (..., 23) in m/s."""
    distances: torch.Tensor
    normal_velocities: torch.Tensor

    def as_vector(self) -> torch.Tensor:
        return torch.cat([self.distances, self.normal_velocities], dim=-1)

    @classmethod
    def from_vector(cls, g) -> "InteractionState":
        g = as_tensor(g)
        if g.shape[-1] != INTERACTION_DIM:
            raise DimensionError(f"Interaction vectors must have length {INTERACTION_DIM}, got {g.shape[-1]}.")
        return cls(g[..., :INTERACTION_POINTS], g[..., INTERACTION_POINTS:])


def normalize_plane(raw) -> GroundPlane:
    """Unconstrained 4-vector (or batch of them) -> unit-normal GroundPlane."""
    raw = as_tensor(raw)
    if raw.shape[-1] != 4:
        raise DimensionError(f"Plane parameters must have length 4, got {raw.shape[-1]}.")
    norm = raw[..., :3].norm(dim=-1)
    if bool((norm < _MIN_NORMAL_NORM).any()):
        raise DegeneratePlaneError(f"Plane normal norm {float(norm.min()):.3e} is below {_MIN_NORMAL_NORM}.")
    return GroundPlane(normal=raw[..., :3] / norm.unsqueeze(-1), offset=raw[..., 3] / norm)


def signed_distance(plane: GroundPlane, point) -> torch.Tensor:
    """n . p + offset; negative below the plane."""
    point = as_tensor(point)
    return (point * plane.normal).sum(-1) + plane.offset


def orient_plane(plane: GroundPlane, joints) -> GroundPlane:
    """Flips the plane so the mean joint position is on its non-negative side."""
    mean_point = as_tensor(joints).reshape(-1, 3).mean(0)
    if float(signed_distance(plane, mean_point)) < 0:
        return plane.flipped()
    return plane


def _interaction_points(x):
    """(positions, velocities) of the 23 interaction points, root point first."""
    if not isinstance(x, MotionState):
        x = unflatten_state(x, STATE_LAYOUT.joint_count)
    positions = torch.cat([x.pose.root_translation.unsqueeze(-2), x.joint_positions], dim=-2)
    velocities = torch.cat([x.root_velocity.unsqueeze(-2), x.joint_velocities], dim=-2)
    return positions, velocities


def interaction_from_state(x, plane: GroundPlane) -> InteractionState:
    """f(x, plane): distances and normal velocities of [r, J_0..J_21].

    x is a MotionState or flat (..., 207) states; the plane may carry the same
    leading batch shape as x.
    """
    positions, velocities = _interaction_points(x)
    normal = plane.normal.unsqueeze(-2)
    offset = plane.offset.unsqueeze(-1)
    distances = (positions * normal).sum(-1) + offset
    normal_velocities = (velocities * normal).sum(-1)
    return InteractionState(distances, normal_velocities)


def interaction_vector(states, plane: GroundPlane) -> torch.Tensor:
    """Flat (..., 46) [d, v] for flat states."""
    return interaction_from_state(states, plane).as_vector()


def contact_labels(g, skeleton: SkeletonDef, d_thresh: float = DEFAULT_D_THRESH,
                   v_thresh: float = DEFAULT_V_THRESH) -> torch.Tensor:
    """(..., 9) labels in {0, 1}: |d| < d_thresh and |v| < v_thresh for each contact joint."""
    if d_thresh <= 0 or v_thresh <= 0:
        raise ValueError("Contact thresholds must be positive.")
    if not isinstance(g, InteractionState):
        g = InteractionState.from_vector(g)
    # interaction entry 0 is the root point, joint j sits at 1 + j
    index = [1 + j for j in skeleton.contact_joint_indices]
    near = g.distances[..., index].abs() < d_thresh
    still = g.normal_velocities[..., index].abs() < v_thresh
    return (near & still).to(torch.int8)


def interaction_sequence(seq) -> InteractionState:
    """Per-frame interaction state (T, 23) of a MotionSequence."""
    return interaction_from_state(as_tensor(seq.states), seq.plane)
