"""
Synthetic motion
================
Analytic ground-truth clips (walk, jump, sit, crouch, stand) with exact
kinematics, a known ground plane and contact labels, plus the observation
side: Gaussian joint noise, pinhole projection and hip-height strata.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch

from ..core.errors import ConfigError, DimensionError, ProjectionError
from ..body.skeleton import (
    DEFAULT_FPS, DTYPE, STATE_LAYOUT, MotionState, SkeletonDef, as_tensor, axis_angle_to_matrix,
    default_skeleton, forward_kinematics, matrix_to_axis_angle, states_from_poses, unflatten_state, Pose,
)
from ..body.ground import (
    DEFAULT_D_THRESH, DEFAULT_V_THRESH, GroundPlane, contact_labels, interaction_from_state, signed_distance,
)

logger = logging.getLogger(__name__)

MOTION_KINDS = ("walk", "jump", "sit", "crouch", "stand")
HIP_HEIGHT_BUCKETS = ("0-0.3", "0.3-0.6", "0.6-1.0")
GRAVITY = 9.81

# joint indices in the default skeleton
PELVIS, L_HIP, R_HIP, SPINE1, L_KNEE, R_KNEE = 0, 1, 2, 3, 4, 5
L_ANKLE, R_ANKLE, L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW = 7, 8, 16, 17, 18, 19
ARMS_DOWN = 1.2


@dataclass
class MotionSequence:
    """Ground-truth clip: (T, 207) states in the flat layout, plane and (T, 9) contacts."""
    fps: float
    states: np.ndarray
    plane: GroundPlane
    contacts: np.ndarray
    meta: Dict = field(default_factory=dict)
    bone_scale: float = 1.0
    predicted_contacts: Optional[np.ndarray] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.contacts = np.asarray(self.contacts, dtype=np.int8)
        if self.states.ndim != 2 or self.states.shape[1] != STATE_LAYOUT.dim:
            raise DimensionError(f"states must be (T, {STATE_LAYOUT.dim}), got {self.states.shape}.")
        if self.contacts.shape != (self.states.shape[0], 9):
            raise DimensionError(f"contacts must be (T, 9), got {self.contacts.shape}.")

    @property
    def num_frames(self) -> int:
        return self.states.shape[0]

    @property
    def kind(self) -> str:
        return self.meta.get("kind", "unknown")

    def joints(self) -> np.ndarray:
        return self.states[:, STATE_LAYOUT.joint_positions].reshape(-1, STATE_LAYOUT.joint_count, 3)

    def joint_velocities(self) -> np.ndarray:
        return self.states[:, STATE_LAYOUT.joint_velocities].reshape(-1, STATE_LAYOUT.joint_count, 3)

    def state(self, t: int) -> MotionState:
        return unflatten_state(torch.as_tensor(self.states[t], dtype=DTYPE))

    def pose_params(self):
        """(root_translation, root_orientation, joint_angles) arrays over all frames."""
        layout = STATE_LAYOUT
        return (
            self.states[:, layout.root_translation],
            self.states[:, layout.root_orientation],
            self.states[:, layout.joint_angles].reshape(-1, layout.joint_count - 1, 3),
        )


@dataclass
class Camera:
    """Pinhole camera; world point X maps to camera coordinates rotation @ X + translation."""
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("Camera focal lengths must be positive.")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), fx=1000.0, fy=1000.0, cx=512.0, cy=512.0) -> "Camera":
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        forward = target - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        return cls(fx, fy, cx, cy, rotation, -rotation @ eye)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)

    def to_camera(self, points) -> torch.Tensor:
        points = as_tensor(points)
        rotation = torch.as_tensor(self.rotation, dtype=points.dtype)
        translation = torch.as_tensor(self.translation, dtype=points.dtype)
        return points @ rotation.T + translation

    def project(self, points) -> torch.Tensor:
        """(..., 3) world points -> (..., 2) pixels. No depth check."""
        cam = self.to_camera(points)
        u = self.fx * cam[..., 0] / cam[..., 2] + self.cx
        v = self.fy * cam[..., 1] / cam[..., 2] + self.cy
        return torch.stack([u, v], dim=-1)


def default_camera() -> Camera:
    """Camera 4 m in front of the origin at chest height, looking along +y."""
    return Camera.look_at(eye=(0.0, -4.0, 1.0), target=(0.0, 0.0, 1.0))


@dataclass
class ObservationSequence:
    """Observed joints y: noisy 3D positions and optional 2D pixels with their camera."""
    fps: float
    joints_3d: np.ndarray
    joints_2d: Optional[np.ndarray] = None
    camera: Optional[Camera] = None
    noise_sigma: float = 0.0
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.joints_3d = np.asarray(self.joints_3d, dtype=np.float64)
        if self.joints_3d.ndim != 3 or self.joints_3d.shape[1:] != (STATE_LAYOUT.joint_count, 3):
            raise DimensionError(f"joints_3d must be (T, {STATE_LAYOUT.joint_count}, 3), got {self.joints_3d.shape}.")
        if self.joints_2d is not None:
            self.joints_2d = np.asarray(self.joints_2d, dtype=np.float64)
            if self.camera is None:
                raise ConfigError("2D observations need a camera.")
            if self.joints_2d.shape != self.joints_3d.shape[:2] + (2,):
                raise DimensionError(f"joints_2d must be (T, {STATE_LAYOUT.joint_count}, 2), got {self.joints_2d.shape}.")

    @property
    def num_frames(self) -> int:
        return self.joints_3d.shape[0]

    @property
    def has_2d(self) -> bool:
        return self.joints_2d is not None


# =============================================================================
# GENERATORS
# =============================================================================

def _smoothstep(t, center, width):
    return 1.0 / (1.0 + np.exp(-(t - center) / width))


def _base_pose(frames):
    angles = np.zeros((frames, 21, 3))
    angles[:, L_SHOULDER - 1, 1] = ARMS_DOWN
    angles[:, R_SHOULDER - 1, 1] = -ARMS_DOWN
    return angles


def _leg_bend(angles, side_hip, side_knee, side_ankle, amount):
    """Squat-like bend keeping the foot flat: hip a, knee -2a, ankle a (about the lateral axis)."""
    angles[:, side_hip - 1, 0] += amount
    angles[:, side_knee - 1, 0] += -2.0 * amount
    angles[:, side_ankle - 1, 0] += amount


def _walk(t, duration, rng):
    frames = len(t)
    cadence = rng.uniform(0.9, 1.1)
    speed = rng.uniform(1.0, 1.4)
    phase = 2.0 * math.pi * cadence * t
    angles = _base_pose(frames)
    swing = 0.35 * np.sin(phase)
    angles[:, L_HIP - 1, 0] = swing
    angles[:, R_HIP - 1, 0] = -swing
    angles[:, L_KNEE - 1, 0] = -0.2 * (1.0 - np.cos(phase))
    angles[:, R_KNEE - 1, 0] = -0.2 * (1.0 + np.cos(phase))
    angles[:, L_SHOULDER - 1, 0] = -0.2 * np.sin(phase)
    angles[:, R_SHOULDER - 1, 0] = 0.2 * np.sin(phase)
    heading = rng.uniform(-math.pi, math.pi)
    direction = np.array([-math.sin(heading), math.cos(heading), 0.0])
    translation = np.outer(speed * t, direction)
    orientation = np.tile([0.0, 0.0, heading], (frames, 1))
    return translation, orientation, angles, np.zeros(frames)


def _jump(t, duration, rng):
    frames = len(t)
    angles = _base_pose(frames)
    takeoff = 0.4 * duration
    flight = min(0.5, 0.35 * duration)
    landing = takeoff + flight
    depth = rng.uniform(0.4, 0.5)
    bend = np.where(t < takeoff, depth * np.sin(math.pi * t / takeoff), 0.0)
    absorb = (t >= landing) & (t < landing + 0.3 * duration)
    bend = np.where(absorb, 0.8 * depth * np.sin(math.pi * (t - landing) / (0.3 * duration)), bend)
    for hip, knee, ankle in ((L_HIP, L_KNEE, L_ANKLE), (R_HIP, R_KNEE, R_ANKLE)):
        _leg_bend(angles, hip, knee, ankle, bend)
    tau = t - takeoff
    launch = 0.5 * GRAVITY * flight
    lift = np.where((tau > 0) & (tau < flight), launch * tau - 0.5 * GRAVITY * tau ** 2, 0.0)
    heading = rng.uniform(-math.pi, math.pi)
    translation = np.zeros((frames, 3))
    orientation = np.tile([0.0, 0.0, heading], (frames, 1))
    return translation, orientation, angles, lift


def _sit(t, duration, rng):
    frames = len(t)
    angles = _base_pose(frames)
    s = _smoothstep(t, 0.4 * duration, 0.08 * duration)
    for hip, ankle in ((L_HIP, L_ANKLE), (R_HIP, R_ANKLE)):
        angles[:, hip - 1, 0] = s * math.pi / 2
        angles[:, ankle - 1, 0] = -s * math.pi / 2
    angles[:, SPINE1 - 1, 0] = -0.2 * s
    heading = rng.uniform(-math.pi, math.pi)
    translation = np.zeros((frames, 3))
    orientation = np.tile([0.0, 0.0, heading], (frames, 1))
    return translation, orientation, angles, np.zeros(frames)


def _crouch(t, duration, rng):
    frames = len(t)
    angles = _base_pose(frames)
    cycles = rng.integers(1, 3)
    bend = 1.2 * np.sin(math.pi * cycles * t / duration) ** 2
    for hip, knee, ankle in ((L_HIP, L_KNEE, L_ANKLE), (R_HIP, R_KNEE, R_ANKLE)):
        _leg_bend(angles, hip, knee, ankle, bend)
    angles[:, L_ELBOW - 1, 2] = 0.8 * bend
    angles[:, R_ELBOW - 1, 2] = -0.8 * bend
    heading = rng.uniform(-math.pi, math.pi)
    translation = np.zeros((frames, 3))
    orientation = np.tile([0.0, 0.0, heading], (frames, 1))
    return translation, orientation, angles, np.zeros(frames)


def _stand(t, duration, rng):
    frames = len(t)
    angles = _base_pose(frames)
    heading = rng.uniform(-math.pi, math.pi)
    translation = np.zeros((frames, 3))
    orientation = np.tile([0.0, 0.0, heading], (frames, 1))
    return translation, orientation, angles, np.zeros(frames)


_GENERATORS = {"walk": _walk, "jump": _jump, "sit": _sit, "crouch": _crouch, "stand": _stand}


def generate_sequence(kind: str, duration_s: float = 3.0, fps: float = DEFAULT_FPS, seed: int = 0,
                      skeleton: Optional[SkeletonDef] = None, d_thresh: float = DEFAULT_D_THRESH,
                      v_thresh: float = DEFAULT_V_THRESH) -> MotionSequence:
    """Deterministic analytic clip of `kind` on the plane z = 0.

    The root height of every frame is set so the lowest joint touches the
    ground (jumps add their ballistic lift on top).
    """
    if kind not in _GENERATORS:
        raise ConfigError(f"Unknown motion kind '{kind}'. Choose from: {', '.join(MOTION_KINDS)}")
    if duration_s < 1.0:
        raise ConfigError(f"duration_s must be at least 1 s, got {duration_s}.")
    if fps < 10:
        raise ConfigError(f"fps must be at least 10, got {fps}.")
    skeleton = skeleton or default_skeleton()

    frames = int(round(duration_s * fps))
    t = np.arange(frames, dtype=np.float64) / fps
    rng = np.random.default_rng(seed)
    start = rng.uniform(-1.0, 1.0, size=2)
    translation, orientation, angles, lift = _GENERATORS[kind](t, duration_s, rng)
    translation = translation + np.array([start[0], start[1], 0.0])

    grounded = forward_kinematics(skeleton, Pose(as_tensor(translation), as_tensor(orientation), as_tensor(angles)))
    lowest = grounded[..., 2].min(dim=-1).values.numpy()
    translation[:, 2] += lift - lowest

    states = states_from_poses(skeleton, translation, orientation, angles, fps)
    plane = GroundPlane.horizontal(0.0)
    contacts = contact_labels(interaction_from_state(states, plane), skeleton, d_thresh, v_thresh)
    logger.debug("generated %s clip: %d frames, seed %d", kind, frames, seed)
    return MotionSequence(
        fps=float(fps),
        states=states.numpy(),
        plane=plane,
        contacts=contacts.numpy(),
        meta={"generator": "groundmotion.synth", "kind": kind, "seed": int(seed), "duration_s": float(duration_s)},
        bone_scale=float(skeleton.bone_scale),
    )


# =============================================================================
# OBSERVATIONS
# =============================================================================

def perturb_observations(seq: MotionSequence, sigma: float, seed: int) -> ObservationSequence:
    """True joints plus i.i.d. N(0, sigma^2) noise per coordinate."""
    if sigma < 0:
        raise ConfigError(f"sigma must be non-negative, got {sigma}.")
    joints = torch.as_tensor(seq.joints(), dtype=DTYPE)
    generator = torch.Generator().manual_seed(int(seed))
    noise = torch.randn(joints.shape, generator=generator, dtype=DTYPE) * sigma
    return ObservationSequence(
        fps=seq.fps,
        joints_3d=(joints + noise).numpy(),
        noise_sigma=float(sigma),
        meta={**seq.meta, "noise_seed": int(seed)},
    )


def project_to_camera(seq, camera: Camera) -> ObservationSequence:
    """Pinhole projection of a MotionSequence (or of an observation's 3D joints)."""
    if isinstance(seq, ObservationSequence):
        joints, sigma = seq.joints_3d, seq.noise_sigma
    else:
        joints, sigma = seq.joints(), 0.0
    cam = camera.to_camera(joints)
    depth = cam[..., 2]
    bad = (depth <= 0).nonzero()
    if len(bad):
        frame, joint = (int(i) for i in bad[0])
        raise ProjectionError(frame, float(depth[frame, joint]))
    pixels = camera.project(joints)
    return ObservationSequence(
        fps=seq.fps,
        joints_3d=np.array(joints, dtype=np.float64),
        joints_2d=pixels.numpy(),
        camera=camera,
        noise_sigma=sigma,
        meta=dict(seq.meta),
    )


# =============================================================================
# STRATA AND WORLD TRANSFORMS
# =============================================================================

def min_hip_height(seq: MotionSequence) -> float:
    pelvis = torch.as_tensor(seq.joints()[:, PELVIS], dtype=DTYPE)
    return float(signed_distance(seq.plane, pelvis).min())


def hip_height_bucket(height: float) -> str:
    """Half-open levels [0, 0.3), [0.3, 0.6), [0.6, inf)."""
    if height < 0.3:
        return HIP_HEIGHT_BUCKETS[0]
    if height < 0.6:
        return HIP_HEIGHT_BUCKETS[1]
    return HIP_HEIGHT_BUCKETS[2]


def stratify_by_hip_height(sequences) -> Dict[str, List[int]]:
    """Partitions sequence indices by minimum pelvis height above the ground."""
    if not len(sequences):
        raise ValueError("stratify_by_hip_height needs at least one sequence.")
    buckets = {label: [] for label in HIP_HEIGHT_BUCKETS}
    for index, seq in enumerate(sequences):
        buckets[hip_height_bucket(min_hip_height(seq))].append(index)
    return buckets


def tilt_rotation(angle_deg: float, axis_heading: float) -> np.ndarray:
    """Rotation by angle_deg about the horizontal axis (cos h, sin h, 0)."""
    axis = np.array([math.cos(axis_heading), math.sin(axis_heading), 0.0])
    return axis_angle_to_matrix(as_tensor(axis * math.radians(angle_deg))).numpy()


def random_tilt(max_deg: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return tilt_rotation(rng.uniform(0.0, max_deg), rng.uniform(0.0, 2.0 * math.pi))


def transform_sequence(seq: MotionSequence, rotation, translation=(0.0, 0.0, 0.0),
                       skeleton: Optional[SkeletonDef] = None) -> MotionSequence:
    """Re-expresses a clip in the world frame p' = rotation @ p + translation.

    Poses are rebuilt through FK so the result keeps exact kinematics;
    the plane moves with the body and contacts are unchanged.
    """
    skeleton = (skeleton or default_skeleton()).with_bone_scale(seq.bone_scale)
    rotation = as_tensor(rotation)
    translation = as_tensor(translation)
    root_t, root_o, angles = (as_tensor(a) for a in seq.pose_params())
    new_t = root_t @ rotation.T + translation
    new_o = matrix_to_axis_angle(rotation @ axis_angle_to_matrix(root_o))
    states = states_from_poses(skeleton, new_t, new_o, angles, seq.fps)
    normal = rotation @ seq.plane.normal
    plane = GroundPlane(normal=normal, offset=seq.plane.offset - normal @ translation)
    return MotionSequence(
        fps=seq.fps,
        states=states.numpy(),
        plane=plane,
        contacts=seq.contacts.copy(),
        meta={**seq.meta, "world_rotation": rotation.tolist(), "world_translation": translation.tolist()},
        bone_scale=seq.bone_scale,
        predicted_contacts=None if seq.predicted_contacts is None else seq.predicted_contacts.copy(),
    )
