"""
Latent motion fitting
=====================
Initialization and the two-stage fit of (x0, g0, z_m, z_g[, plane, bone scale])
to observed joints, with the ground plane either given or recovered.

Stage 0  per-frame pose fit with a smoothness penalty (LBFGS), root orientation
         seeded by a rigid alignment of the pelvis/hips/spine triangle
Stage 1  latents frozen; x0 (+ plane) against data + smoothness
Stage 2  all variables against the full objective

Stages 1 and 2 run LBFGS with a strong-Wolfe line search one iteration at a
time; an iterate that would raise the stage objective ends the stage.
"""

import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
from tqdm import tqdm

from ..core.errors import DimensionError, FitDivergenceError, NumericError
from ..body.skeleton import (
    DTYPE, STATE_LAYOUT, Pose, SkeletonDef, as_tensor, default_skeleton, forward_kinematics,
    matrix_to_axis_angle, states_from_poses,
)
from ..body.ground import GroundPlane, contact_labels, interaction_vector, orient_plane
from ..data.synth import MotionSequence, ObservationSequence
from ..model.dual_prior import DualPriorModel, track_latents
from .losses import TERMS, FitProblem, OptimConfig, OptimVariables, default_bone_scale

logger = logging.getLogger(__name__)

# pelvis, hips and spine1 move rigidly with the root orientation
TORSO_JOINTS = (0, 1, 2, 3)
FOOT_JOINTS = (7, 8, 10, 11)


@dataclass
class StageReport:
    name: str
    variables: List[str]
    weights: Dict[str, float]
    iterations: int = 0
    converged: bool = False
    initial: Dict[str, float] = field(default_factory=dict)
    final: Dict[str, float] = field(default_factory=dict)
    rows: List[Dict] = field(default_factory=list)


@dataclass
class FitReport:
    setting: str
    stages: List[StageReport] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return bool(self.stages) and self.stages[-1].converged

    @property
    def iterations(self) -> int:
        return sum(s.iterations for s in self.stages)

    def to_dict(self):
        return {"setting": self.setting, "converged": self.converged, "iterations": self.iterations,
                "stages": [asdict(s) for s in self.stages]}


# =============================================================================
# INITIALIZATION
# =============================================================================

def kabsch_rotations(template, observed) -> torch.Tensor:
    """Per-frame rotation R minimizing ||R @ template_k + t - observed_k|| (no scale).

    template (K, 3), observed (T, K, 3) -> (T, 3, 3).
    """
    a = template - template.mean(0)
    b = observed - observed.mean(-2, keepdim=True)
    h = a.T.unsqueeze(0) @ b
    u, _, vt = torch.linalg.svd(h)
    v = vt.transpose(-1, -2)
    d = torch.sign(torch.det(v @ u.transpose(-1, -2)))
    fix = torch.diag_embed(torch.stack([torch.ones_like(d), torch.ones_like(d), d], -1))
    return v @ fix @ u.transpose(-1, -2)


def stage0_fit(observations: ObservationSequence, skeleton: SkeletonDef, config: OptimConfig) -> torch.Tensor:
    """Draft (T+1, 207) states: per-frame least-squares pose fit plus a smoothness penalty."""
    target = as_tensor(observations.joints_3d)
    frames = target.shape[0]
    rest = forward_kinematics(skeleton, Pose(torch.zeros(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE),
                                             torch.zeros(skeleton.joint_count - 1, 3, dtype=DTYPE)))
    torso = list(TORSO_JOINTS)
    rotations = kabsch_rotations(rest[torso], target[:, torso])

    translation = target[:, 0].clone().requires_grad_(True)
    orientation = matrix_to_axis_angle(rotations).requires_grad_(True)
    angles = torch.zeros(frames, skeleton.joint_count - 1, 3, dtype=DTYPE, requires_grad=True)

    if config.init_iters > 0:
        optimizer = torch.optim.LBFGS([translation, orientation, angles], lr=1.0, max_iter=config.init_iters,
                                      line_search_fn="strong_wolfe", tolerance_grad=1e-10, tolerance_change=1e-14)

        def closure():
            optimizer.zero_grad()
            joints = forward_kinematics(skeleton, Pose(translation, orientation, angles))
            accel = joints[2:] - 2.0 * joints[1:-1] + joints[:-2]
            loss = ((joints - target) ** 2).sum() + config.init_smooth_weight * (accel ** 2).sum() \
                + 1e-3 * (angles ** 2).sum()
            loss.backward()
            return loss

        optimizer.step(closure)

    with torch.no_grad():
        return states_from_poses(skeleton, translation, orientation, angles, observations.fps)


def guess_plane(joints, method: str = "horizontal") -> GroundPlane:
    """Initial ground: horizontal through the lowest joint, or a fit through the lowest foot points."""
    joints = as_tensor(joints)
    horizontal = GroundPlane.horizontal(float(joints[..., 2].min()))
    if method == "horizontal":
        return orient_plane(horizontal, joints)

    feet = joints[:, list(FOOT_JOINTS)]
    lowest = feet[..., 2].argsort(dim=-1)[:, :2]
    points = torch.gather(feet, 1, lowest.unsqueeze(-1).expand(-1, -1, 3)).reshape(-1, 3)
    centered = points - points.mean(0)
    _, singular, vt = torch.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    # degenerate when foot points are (nearly) collinear or the fit is far from horizontal
    if singular[1] < 1e-3 or singular[2] > 0.5 * singular[1] or abs(float(normal[2])) < math.cos(math.radians(45)):
        logger.debug("foot plane fit degenerate; using the horizontal guess")
        return orient_plane(horizontal, joints)
    plane = GroundPlane(normal=normal, offset=-(normal @ points.mean(0)))
    return orient_plane(plane, joints)


def initialize(observations: ObservationSequence, model: DualPriorModel, plane: Optional[GroundPlane] = None,
               config: Optional[OptimConfig] = None, skeleton: Optional[SkeletonDef] = None,
               initial_plane: Optional[GroundPlane] = None) -> OptimVariables:
    """Stage-0 draft, then latents tracked along the decoded rollout toward the draft.

    With `plane` the ground is fixed; without it plane_raw is added, starting
    from `initial_plane` or a guess from the observed joints.
    """
    config = config or OptimConfig()
    skeleton = skeleton or default_skeleton()
    target = observations.joints_3d
    if target.shape[0] < 2:
        raise DimensionError(f"Fitting needs at least 2 observation frames, got {target.shape[0]}.")
    if not np.isfinite(target).all() or (observations.has_2d and not np.isfinite(observations.joints_2d).all()):
        raise NumericError("observations", "Observations contain non-finite values.")

    draft = stage0_fit(observations, skeleton, config)
    if plane is not None:
        current = plane
    elif initial_plane is not None:
        current = initial_plane
    else:
        current = guess_plane(target, config.plane_init)

    with torch.no_grad():
        g_draft = interaction_vector(draft, current)
        z_m, z_g = track_latents(model, draft[0], g_draft[0], draft[1:], g_draft[1:])
    return OptimVariables(
        x0=draft[0].clone(),
        g0=g_draft[0].clone(),
        z_m=z_m.detach().clone(),
        z_g=z_g.detach().clone(),
        plane_raw=current.raw.detach().clone() if plane is None else None,
        bone_scale=default_bone_scale(skeleton),
    )


# =============================================================================
# DESCENT
# =============================================================================

def _floats(evaluation):
    return {**{name: float(evaluation.terms[name]) for name in TERMS}, "total": float(evaluation.total)}


def descend(problem: FitProblem, variables: OptimVariables, names, weights: Dict[str, float], iters: int,
            stage: StageReport, progress: bool = False,
            on_iteration: Optional[Callable[[Dict], None]] = None) -> OptimVariables:
    """LBFGS on the weighted objective over the named variable blocks, never accepting an increase."""
    config = problem.config
    current = variables.detached()

    with torch.no_grad():
        start = problem.evaluate(current, weights)
    stage.initial = _floats(start)
    if not math.isfinite(stage.initial["total"]):
        raise FitDivergenceError(f"{stage.name}: objective is not finite at the start.", current, None)

    leaves = {n: getattr(current, n).detach().clone().requires_grad_(True) for n in names}
    optimizer = torch.optim.LBFGS(list(leaves.values()), lr=config.step_size, max_iter=1,
                                  line_search_fn="strong_wolfe", tolerance_grad=1e-12, tolerance_change=1e-15)
    base = current

    for it in tqdm(range(iters), desc=stage.name, unit="it", disable=not progress):
        captured = {}

        def closure():
            optimizer.zero_grad()
            evaluation = problem.evaluate(base.replace(**leaves), weights)
            if not torch.isfinite(evaluation.total):
                if not captured:
                    raise FitDivergenceError(f"{stage.name}: objective diverged at iteration {it}.", current, None)
                # trial point of the line search; an infinite value makes it backtrack
                return torch.tensor(math.inf, dtype=DTYPE)
            evaluation.total.backward()
            if not captured:
                captured.update(_floats(evaluation))
            return evaluation.total

        optimizer.step(closure)
        row = {"stage": stage.name, "iteration": it, **captured}
        stage.rows.append(row)
        if on_iteration:
            on_iteration(row)

        candidate = base.replace(**{n: leaf.detach().clone() for n, leaf in leaves.items()})
        with torch.no_grad():
            value = float(problem.objective(candidate, weights))
        stage.iterations = it + 1
        if not math.isfinite(value) or value > row["total"]:
            stage.converged = True
            break
        current = candidate
        if (row["total"] - value) / max(abs(row["total"]), 1e-12) < config.tolerance:
            stage.converged = True
            break

    with torch.no_grad():
        stage.final = _floats(problem.evaluate(current, weights))
    if iters == 0:
        stage.converged = True
    logger.info("%s: %d iterations, objective %.6f -> %.6f", stage.name, stage.iterations,
                stage.initial["total"], stage.final["total"])
    return current


def _stage_plan(problem: FitProblem, config: OptimConfig):
    extra = []
    if problem.unknown_ground:
        extra.append("plane_raw")
    if config.optimize_bone_scale:
        extra.append("bone_scale")
    weights = config.weights()
    stage1_weights = {name: (weights[name] if name in ("data", "reg_smooth") else 0.0) for name in TERMS}
    stage2_vars = ["x0", "z_m", "z_g"] + ([] if problem.unknown_ground else ["g0"]) + extra
    return [
        ("stage1", ["x0"] + extra, stage1_weights, config.stage1_iters),
        ("stage2", stage2_vars, weights, config.stage2_iters),
    ]


def run_stages(problem: FitProblem, variables: OptimVariables, setting: str, progress: bool = False,
               on_iteration: Optional[Callable[[Dict], None]] = None):
    report = FitReport(setting=setting)
    for name, names, weights, iters in _stage_plan(problem, problem.config):
        stage = StageReport(name=name, variables=list(names), weights=dict(weights))
        report.stages.append(stage)
        try:
            variables = descend(problem, variables, names, weights, iters, stage, progress, on_iteration)
        except FitDivergenceError as e:
            e.report = report
            logger.error("%s", e)
            raise
    return variables, report


def to_sequence(problem: FitProblem, variables: OptimVariables, observations: ObservationSequence,
                setting: str) -> MotionSequence:
    """Decoded fit re-expressed through FK so it is kinematically exact."""
    with torch.no_grad():
        evaluation = problem.evaluate(variables)
        layout = STATE_LAYOUT
        states = evaluation.states
        bone_scale = float(variables.bone_scale) if variables.bone_scale is not None else problem.skeleton.bone_scale
        skeleton = problem.skeleton.with_bone_scale(bone_scale)
        fitted = states_from_poses(
            skeleton, states[:, layout.root_translation], states[:, layout.root_orientation],
            states[:, layout.joint_angles].reshape(-1, layout.joint_count - 1, 3), observations.fps,
        )
        plane = evaluation.plane.detach()
        contacts = contact_labels(interaction_vector(fitted, plane), skeleton, d_thresh=problem.config.d_thresh)
        probs = evaluation.roll.contact_probs
        probs = torch.cat([probs[:1], probs], dim=0)
    return MotionSequence(
        fps=observations.fps,
        states=fitted.numpy(),
        plane=plane,
        contacts=contacts.numpy(),
        meta={**observations.meta, "fit": setting},
        bone_scale=bone_scale,
        predicted_contacts=probs.numpy(),
    )


def fit_fixed_ground(observations: ObservationSequence, plane: GroundPlane, model: DualPriorModel,
                     config: Optional[OptimConfig] = None, skeleton: Optional[SkeletonDef] = None,
                     initial: Optional[OptimVariables] = None, progress: bool = False,
                     on_iteration: Optional[Callable[[Dict], None]] = None):
    """Fit with a known ground plane. Returns (MotionSequence, FitReport)."""
    config = config or OptimConfig()
    skeleton = skeleton or default_skeleton()
    problem = FitProblem(model, skeleton, observations, config, plane=plane)
    variables = initial or initialize(observations, model, plane=plane, config=config, skeleton=skeleton)
    variables, report = run_stages(problem, variables, "fixed_ground", progress, on_iteration)
    return to_sequence(problem, variables, observations, "fixed_ground"), report


def fit_with_ground(observations: ObservationSequence, model: DualPriorModel, config: Optional[OptimConfig] = None,
                    skeleton: Optional[SkeletonDef] = None, initial_plane: Optional[GroundPlane] = None,
                    progress: bool = False, on_iteration: Optional[Callable[[Dict], None]] = None):
    """Fit motion and ground plane together. Returns (MotionSequence, GroundPlane, FitReport)."""
    config = config or OptimConfig()
    skeleton = skeleton or default_skeleton()
    problem = FitProblem(model, skeleton, observations, config, plane=None)
    variables = initialize(observations, model, config=config, skeleton=skeleton, initial_plane=initial_plane)
    variables, report = run_stages(problem, variables, "with_ground", progress, on_iteration)
    seq = to_sequence(problem, variables, observations, "with_ground")
    return seq, seq.plane, report
