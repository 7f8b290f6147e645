"""
Rigid kinematic body model
==========================
A 22-joint skeleton standing in for a parametric body mesh:
- axis-angle <-> rotation matrix conversions
- forward kinematics from (root translation, root orientation, joint angles)
- finite-difference velocities at the sequence frame rate
- the flat motion-state layout (r, r_dot, phi, phi_dot, theta, J, J_dot)

All tensor math runs in float64 torch so it can sit inside autograd graphs.
"""

import os
import math
import functools
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import torch
import yaml

from ..core.errors import ConfigError, DimensionError

DTYPE = torch.float64
DEFAULT_FPS = 30.0
CONTACT_JOINT_COUNT = 9
DEFAULT_SKELETON_PATH = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs", "skeleton.yaml"
)

# Below this squared angle the Rodrigues coefficients switch to their series.
_SMALL_ANGLE_SQ = 1e-8


def as_tensor(value, dtype=DTYPE):
    """Converts arrays / lists / tensors to a float64 tensor (no copy for tensors)."""
    if isinstance(value, torch.Tensor):
        return value.to(dtype)
    return torch.as_tensor(np.asarray(value), dtype=dtype)


# =============================================================================
# SKELETON DEFINITION
# =============================================================================

@dataclass(frozen=True)
class SkeletonDef:
    """Tree-structured skeleton: topology, rest-pose bone vectors and global scale."""
    joint_names: Tuple[str, ...]
    parent_index: Tuple[int, ...]
    rest_offset: np.ndarray
    bone_scale: float = 1.0
    contact_joint_indices: Tuple[int, ...] = (10, 11, 7, 8, 4, 5, 20, 21, 0)

    def __post_init__(self):
        offsets = np.array(self.rest_offset, dtype=np.float64)
        count = len(self.parent_index)
        if offsets.shape != (count, 3):
            raise DimensionError(f"rest_offset must be ({count}, 3), got {offsets.shape}.")
        offsets.setflags(write=False)
        object.__setattr__(self, "rest_offset", offsets)
        object.__setattr__(self, "parent_index", tuple(int(p) for p in self.parent_index))
        object.__setattr__(self, "contact_joint_indices", tuple(int(c) for c in self.contact_joint_indices))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        self.validate()

    @property
    def joint_count(self) -> int:
        return len(self.parent_index)

    def validate(self):
        count = self.joint_count
        if len(self.joint_names) != count:
            raise ConfigError(f"Expected {count} joint names, got {len(self.joint_names)}.")
        if count < 1 or self.parent_index[0] != -1:
            raise ConfigError("Joint 0 must be the root (parent -1).")
        for child, parent in enumerate(self.parent_index[1:], start=1):
            if not 0 <= parent < child:
                raise ConfigError(f"Joint {child} has parent {parent}; parents must precede children.")
        if not (self.bone_scale > 0 and math.isfinite(self.bone_scale)):
            raise ConfigError(f"bone_scale must be positive, got {self.bone_scale}.")
        contacts = self.contact_joint_indices
        if len(contacts) != CONTACT_JOINT_COUNT or len(set(contacts)) != CONTACT_JOINT_COUNT:
            raise ConfigError("contact_joint_indices needs exactly 9 distinct joints.")
        if any(not 0 <= c < count for c in contacts):
            raise ConfigError("contact_joint_indices out of range.")

    def with_bone_scale(self, bone_scale: float) -> "SkeletonDef":
        return replace(self, bone_scale=float(bone_scale))

    def index_of(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise ConfigError(f"Unknown joint name: {name}") from None

    @classmethod
    def from_yaml(cls, path: str) -> "SkeletonDef":
        """Loads a skeleton config (joints listed parent-first, names for parents and contacts)."""
        try:
            with open(path, "r") as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Could not read skeleton config '{path}': {e}") from e

        joints = data.get("joints")
        if not joints:
            raise ConfigError(f"Skeleton config '{path}' lists no joints.")
        names = [j["name"] for j in joints]
        parents = []
        for j in joints:
            parent = j.get("parent")
            if parent is None:
                parents.append(-1)
            elif parent not in names:
                raise ConfigError(f"Joint '{j['name']}' references unknown parent '{parent}'.")
            else:
                parents.append(names.index(parent))
        contacts = [names.index(c) if c in names else -1 for c in data.get("contact_joints", [])]
        return cls(
            joint_names=tuple(names),
            parent_index=tuple(parents),
            rest_offset=np.array([j["offset"] for j in joints], dtype=np.float64),
            bone_scale=float(data.get("bone_scale", 1.0)),
            contact_joint_indices=tuple(contacts),
        )


@functools.lru_cache(maxsize=1)
def default_skeleton() -> SkeletonDef:
    """The shipped 22-joint skeleton."""
    return SkeletonDef.from_yaml(DEFAULT_SKELETON_PATH)


def load_skeleton(path: Optional[str] = None) -> SkeletonDef:
    return default_skeleton() if not path else SkeletonDef.from_yaml(path)


# =============================================================================
# STATE CONTAINERS AND LAYOUT
# =============================================================================

@dataclass
class Pose:
    """Root translation r (m), root orientation phi and body joint angles theta (axis-angle, rad)."""
    root_translation: torch.Tensor
    root_orientation: torch.Tensor
    joint_angles: torch.Tensor


@dataclass
class MotionState:
    """Per-frame body state x."""
    pose: Pose
    joint_positions: torch.Tensor
    root_velocity: torch.Tensor
    root_angular_velocity: torch.Tensor
    joint_velocities: torch.Tensor


@dataclass(frozen=True)
class StateLayout:
    """Offsets of each component inside the flattened state vector."""
    joint_count: int = 22

    @property
    def dim(self) -> int:
        return 12 + 3 * (self.joint_count - 1) + 6 * self.joint_count

    @property
    def root_translation(self):
        return slice(0, 3)

    @property
    def root_velocity(self):
        return slice(3, 6)

    @property
    def root_orientation(self):
        return slice(6, 9)

    @property
    def root_angular_velocity(self):
        return slice(9, 12)

    @property
    def joint_angles(self):
        return slice(12, 12 + 3 * (self.joint_count - 1))

    @property
    def joint_positions(self):
        start = 12 + 3 * (self.joint_count - 1)
        return slice(start, start + 3 * self.joint_count)

    @property
    def joint_velocities(self):
        start = 12 + 3 * (self.joint_count - 1) + 3 * self.joint_count
        return slice(start, start + 3 * self.joint_count)

    def joints(self, states: torch.Tensor) -> torch.Tensor:
        """(..., D) -> (..., J, 3) joint positions."""
        return states[..., self.joint_positions].reshape(*states.shape[:-1], self.joint_count, 3)

    def joint_vels(self, states: torch.Tensor) -> torch.Tensor:
        return states[..., self.joint_velocities].reshape(*states.shape[:-1], self.joint_count, 3)

    def pose(self, states: torch.Tensor) -> Pose:
        return Pose(
            root_translation=states[..., self.root_translation],
            root_orientation=states[..., self.root_orientation],
            joint_angles=states[..., self.joint_angles].reshape(*states.shape[:-1], self.joint_count - 1, 3),
        )


STATE_LAYOUT = StateLayout()
STATE_DIM = STATE_LAYOUT.dim


def flatten_state(x: MotionState) -> torch.Tensor:
    """MotionState -> (..., D) vector in layout order."""
    batch = x.joint_positions.shape[:-2]
    return torch.cat([
        x.pose.root_translation,
        x.root_velocity,
        x.pose.root_orientation,
        x.root_angular_velocity,
        x.pose.joint_angles.reshape(*batch, -1),
        x.joint_positions.reshape(*batch, -1),
        x.joint_velocities.reshape(*batch, -1),
    ], dim=-1)


def unflatten_state(v: torch.Tensor, joint_count: int = 22) -> MotionState:
    layout = StateLayout(joint_count)
    v = as_tensor(v)
    if v.shape[-1] != layout.dim:
        raise DimensionError(f"State vector must have length {layout.dim}, got {v.shape[-1]}.")
    return MotionState(
        pose=layout.pose(v),
        joint_positions=layout.joints(v),
        root_velocity=v[..., layout.root_velocity],
        root_angular_velocity=v[..., layout.root_angular_velocity],
        joint_velocities=layout.joint_vels(v),
    )


# =============================================================================
# ROTATIONS
# =============================================================================

def skew(v: torch.Tensor) -> torch.Tensor:
    """(..., 3) -> (..., 3, 3) cross-product matrix."""
    zero = torch.zeros_like(v[..., 0])
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return torch.stack([
        torch.stack([zero, -z, y], dim=-1),
        torch.stack([z, zero, -x], dim=-1),
        torch.stack([-y, x, zero], dim=-1),
    ], dim=-2)


def axis_angle_to_matrix(aa: torch.Tensor) -> torch.Tensor:
    """Rodrigues' formula, R = I + A*K + B*K^2 with K = skew(aa) (unnormalized axis)."""
    aa = as_tensor(aa)
    theta_sq = (aa * aa).sum(-1)
    small = theta_sq < _SMALL_ANGLE_SQ
    safe_sq = torch.where(small, torch.ones_like(theta_sq), theta_sq)
    theta = torch.sqrt(safe_sq)
    a = torch.where(small, 1.0 - theta_sq / 6.0 + theta_sq ** 2 / 120.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta_sq / 24.0 + theta_sq ** 2 / 720.0, (1.0 - torch.cos(theta)) / safe_sq)
    k = skew(aa)
    eye = torch.eye(3, dtype=aa.dtype).expand(k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def matrix_to_quaternion(rot: torch.Tensor) -> torch.Tensor:
    """(..., 3, 3) -> (..., 4) unit quaternion (w, x, y, z) with w >= 0."""
    m = as_tensor(rot)
    m00, m01, m02 = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    m10, m11, m12 = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    m20, m21, m22 = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    diag = torch.stack([
        1.0 + m00 + m11 + m22,
        1.0 + m00 - m11 - m22,
        1.0 - m00 + m11 - m22,
        1.0 - m00 - m11 + m22,
    ], dim=-1)
    s = 2.0 * torch.sqrt(diag.clamp_min(1e-12))
    candidates = torch.stack([
        torch.stack([s[..., 0] / 4, (m21 - m12) / s[..., 0], (m02 - m20) / s[..., 0], (m10 - m01) / s[..., 0]], -1),
        torch.stack([(m21 - m12) / s[..., 1], s[..., 1] / 4, (m01 + m10) / s[..., 1], (m02 + m20) / s[..., 1]], -1),
        torch.stack([(m02 - m20) / s[..., 2], (m01 + m10) / s[..., 2], s[..., 2] / 4, (m12 + m21) / s[..., 2]], -1),
        torch.stack([(m10 - m01) / s[..., 3], (m02 + m20) / s[..., 3], (m12 + m21) / s[..., 3], s[..., 3] / 4], -1),
    ], dim=-2)
    best = diag.argmax(-1)
    index = best[..., None, None].expand(*best.shape, 1, 4)
    quat = torch.gather(candidates, -2, index).squeeze(-2)
    quat = quat / quat.norm(dim=-1, keepdim=True)
    return torch.where(quat[..., :1] < 0, -quat, quat)


def matrix_to_axis_angle(rot: torch.Tensor) -> torch.Tensor:
    """Inverse of axis_angle_to_matrix, angle in [0, pi]."""
    quat = matrix_to_quaternion(rot)
    vec = quat[..., 1:]
    vec_norm = vec.norm(dim=-1, keepdim=True)
    angle = 2.0 * torch.atan2(vec_norm, quat[..., :1])
    scale = torch.where(vec_norm > 1e-12, angle / vec_norm.clamp_min(1e-12), torch.full_like(vec_norm, 2.0))
    return vec * scale


def canonicalize_axis_angle(aa: torch.Tensor) -> torch.Tensor:
    """Wraps the rotation angle into [0, 2*pi), keeping the axis."""
    aa = as_tensor(aa)
    angle = aa.norm(dim=-1, keepdim=True)
    wrapped = torch.remainder(angle, 2.0 * math.pi)
    scale = torch.where(angle > 0, wrapped / angle.clamp_min(1e-300), torch.ones_like(angle))
    return aa * scale


# =============================================================================
# KINEMATICS
# =============================================================================

def forward_kinematics(skeleton: SkeletonDef, pose: Pose, bone_scale=None) -> torch.Tensor:
    """Joint positions (..., J, 3) of a pose.

    Joint 0 sits at r; every child is its parent's position plus the parent's
    accumulated rotation applied to bone_scale * rest_offset.
    """
    count = skeleton.joint_count
    angles = as_tensor(pose.joint_angles)
    if angles.shape[-2:] != (count - 1, 3):
        raise DimensionError(f"joint_angles must end in ({count - 1}, 3), got {tuple(angles.shape)}.")
    scale = skeleton.bone_scale if bone_scale is None else bone_scale
    offsets = torch.as_tensor(skeleton.rest_offset, dtype=angles.dtype) * scale

    local = axis_angle_to_matrix(angles)
    global_rot = [axis_angle_to_matrix(pose.root_orientation)]
    positions = [as_tensor(pose.root_translation)]
    for child in range(1, count):
        parent = skeleton.parent_index[child]
        bone = (global_rot[parent] @ offsets[child].unsqueeze(-1)).squeeze(-1)
        positions.append(positions[parent] + bone)
        global_rot.append(global_rot[parent] @ local[..., child - 1, :, :])
    return torch.stack(positions, dim=-2)


def compute_velocities(positions, fps: float, dim: int = 0) -> torch.Tensor:
    """Backward differences along `dim` times fps; the first frame copies the second."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}.")
    positions = as_tensor(positions)
    length = positions.shape[dim]
    if length < 2:
        return torch.zeros_like(positions)
    diff = (positions.narrow(dim, 1, length - 1) - positions.narrow(dim, 0, length - 1)) * fps
    return torch.cat([diff.narrow(dim, 0, 1), diff], dim=dim)


def states_from_poses(skeleton: SkeletonDef, root_translation, root_orientation, joint_angles,
                      fps: float, bone_scale=None) -> torch.Tensor:
    """Builds a kinematically exact (T, D) state sequence from per-frame pose parameters."""
    pose = Pose(as_tensor(root_translation), as_tensor(root_orientation), as_tensor(joint_angles))
    joints = forward_kinematics(skeleton, pose, bone_scale=bone_scale)
    state = MotionState(
        pose=pose,
        joint_positions=joints,
        root_velocity=compute_velocities(pose.root_translation, fps),
        root_angular_velocity=compute_velocities(pose.root_orientation, fps),
        joint_velocities=compute_velocities(joints, fps),
    )
    return flatten_state(state)


def bone_lengths(skeleton: SkeletonDef, joints: torch.Tensor) -> torch.Tensor:
    """(..., J, 3) -> (..., J-1) distance of every non-root joint to its parent."""
    parents = list(skeleton.parent_index[1:])
    return (joints[..., 1:, :] - joints[..., parents, :]).norm(dim=-1)


def rest_bone_lengths(skeleton: SkeletonDef) -> np.ndarray:
    return skeleton.bone_scale * np.linalg.norm(skeleton.rest_offset[1:], axis=-1)
