import math
import os
import sys
import unittest

import numpy as np
import torch

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from fixtures import random_rotation, tiny_model

from groundmotion.core.errors import ConfigError, DimensionError, FitDivergenceError, NumericError
from groundmotion.body.skeleton import STATE_LAYOUT, default_skeleton
from groundmotion.body.ground import GroundPlane, interaction_vector, normalize_plane
from groundmotion.data.synth import (
    Camera, ObservationSequence, default_camera, generate_sequence, perturb_observations, project_to_camera,
)
from groundmotion.model.dual_prior import rollout_latents
from groundmotion.fitting.losses import (
    TERMS, FitProblem, OptimConfig, geman_mcclure, loss_data, loss_pconsist, loss_prior, loss_reg_contact,
    loss_reg_smooth,
)
from groundmotion.fitting.optimizer import (
    fit_fixed_ground, fit_with_ground, guess_plane, initialize, kabsch_rotations, to_sequence,
)


def quick_config(**changes):
    values = dict(init_iters=10, stage1_iters=3, stage2_iters=3)
    values.update(changes)
    return OptimConfig(**values)


def block_gradient_error(problem, variables, name, count=20, h=1e-6, seed=0):
    """Relative error of autograd against central differences on one variable block."""
    base = getattr(variables, name).detach().clone()
    leaf = base.clone().requires_grad_(True)
    total = problem.objective(variables.replace(**{name: leaf}))
    (grad,) = torch.autograd.grad(total, leaf)
    generator = torch.Generator().manual_seed(seed)
    index = torch.randperm(base.numel(), generator=generator)[:count]
    numeric = []
    with torch.no_grad():
        for i in index.tolist():
            values = []
            for step in (h, -h):
                moved = base.clone().reshape(-1)
                moved[i] += step
                values.append(float(problem.objective(variables.replace(**{name: moved.reshape(base.shape)}))))
            numeric.append((values[0] - values[1]) / (2 * h))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    analytic = grad.reshape(-1)[index]
    scale = max(float(numeric.norm()), float(analytic.norm()), 1e-12)
    return float((analytic - numeric).norm()) / scale


class FitCase(unittest.TestCase):
    def setUp(self):
        self.skeleton = default_skeleton()
        self.model = tiny_model(seed=0)
        self.seq = generate_sequence("walk", duration_s=1.0, seed=0)
        self.obs = perturb_observations(self.seq, 0.02, seed=1)


class TestTerms(FitCase):
    def test_geman_mcclure(self):
        self.assertEqual(float(geman_mcclure(torch.tensor(0.0, dtype=torch.float64), 0.25)), 0.0)
        outlier = float(geman_mcclure(torch.tensor(100.0, dtype=torch.float64), 1.0))
        self.assertLess(outlier, 1.01)
        self.assertGreater(outlier, 0.98)

    def test_data_term(self):
        joints = torch.from_numpy(self.seq.joints())
        self.assertEqual(float(loss_data(joints, joints, 0.25)), 0.0)
        target = torch.from_numpy(self.obs.joints_3d)
        expected = 0.0
        for t in range(joints.shape[0]):
            for j in range(22):
                r2 = float(((joints[t, j] - target[t, j]) ** 2).sum())
                expected += 0.0625 * r2 / (0.0625 + r2)
        self.assertAlmostEqual(float(loss_data(joints, target, 0.25)), expected, places=9)

    def test_data_term_with_camera(self):
        camera = default_camera()
        joints = torch.from_numpy(self.seq.joints())
        pixels = camera.project(joints)
        self.assertEqual(float(loss_data(joints, pixels, 25.0, camera)), 0.0)
        shifted = float(loss_data(joints, pixels + 3.0, 25.0, camera))
        per_joint = 625.0 * 18.0 / (625.0 + 18.0)
        self.assertAlmostEqual(shifted, per_joint * joints.shape[0] * 22, places=6)

    def test_smoothness(self):
        t = torch.arange(10, dtype=torch.float64)[:, None, None]
        linear = 0.5 + 0.1 * t * torch.ones(10, 22, 3, dtype=torch.float64)
        self.assertLess(float(loss_reg_smooth(linear)), 1e-20)
        bumped = linear.clone()
        bumped[5, 0, 2] += 0.1
        self.assertAlmostEqual(float(loss_reg_smooth(bumped)), 0.01 + 0.04 + 0.01, places=12)

    def test_contact_term(self):
        seq = generate_sequence("stand", duration_s=1.0, seed=0)
        joints = torch.from_numpy(seq.joints())
        plane = seq.plane
        low = torch.full((seq.num_frames - 1, 9), 0.1, dtype=torch.float64)
        self.assertEqual(float(loss_reg_contact(joints, low, plane, self.skeleton, seq.fps)), 0.0)

        high = torch.full((seq.num_frames - 1, 9), 0.9, dtype=torch.float64)
        expected = 0.0
        for t in range(1, seq.num_frames):
            for joint in self.skeleton.contact_joint_indices:
                gap = max(abs(float(joints[t, joint, 2])) - 0.08, 0.0)
                expected += gap ** 2
        value = float(loss_reg_contact(joints, high, plane, self.skeleton, seq.fps))
        self.assertAlmostEqual(value, expected, places=9)
        self.assertGreater(value, 0.0)

    def test_prior_term_is_quadratic(self):
        x0 = torch.from_numpy(self.seq.states[0])
        g0 = interaction_vector(x0, self.seq.plane)
        z_m = torch.zeros(5, 4, dtype=torch.float64)
        z_g = torch.zeros(5, 3, dtype=torch.float64)
        roll = rollout_latents(self.model, x0, g0, z_m, z_g)
        means_m, means_g = roll.prior_motion.mean.detach(), roll.prior_interaction.mean.detach()
        base = float(loss_prior(roll, means_m, means_g))
        constant = 0.5 * float((roll.prior_motion.log_variance + math.log(2 * math.pi)).sum()
                               + (roll.prior_interaction.log_variance + math.log(2 * math.pi)).sum())
        self.assertAlmostEqual(base, constant, places=9)

        def excess(delta):
            moved = means_m.clone()
            moved[2, 1] += delta
            return float(loss_prior(roll, moved, means_g)) - base

        variance = float(torch.exp(roll.prior_motion.log_variance[2, 1]))
        self.assertAlmostEqual(excess(0.3), 0.09 / (2 * variance), places=9)
        self.assertAlmostEqual(excess(0.6), 4 * excess(0.3), places=9)

    def test_pconsist_term(self):
        x0 = torch.from_numpy(self.seq.states[0])
        g0 = interaction_vector(x0, self.seq.plane)
        roll = rollout_latents(self.model, x0, g0, torch.zeros(4, 4, dtype=torch.float64),
                               torch.zeros(4, 3, dtype=torch.float64))
        roll.interactions = interaction_vector(roll.states, self.seq.plane).detach()
        self.assertEqual(float(loss_pconsist(roll, self.seq.plane)), 0.0)
        roll.interactions[2, 5] += 0.01
        self.assertAlmostEqual(float(loss_pconsist(roll, self.seq.plane)), 1e-4, places=12)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            OptimConfig(observation="4d")
        with self.assertRaises(ConfigError):
            OptimConfig(step_size=0.0)
        self.assertEqual(set(OptimConfig().weights()), set(TERMS))


class TestInitialization(FitCase):
    def test_fixed_plane_g0(self):
        variables = initialize(self.obs, self.model, plane=self.seq.plane, config=quick_config(), skeleton=self.skeleton)
        self.assertIsNone(variables.plane_raw)
        self.assertTrue(torch.allclose(variables.g0, interaction_vector(variables.x0, self.seq.plane), atol=1e-12))
        self.assertEqual(tuple(variables.z_m.shape), (self.seq.num_frames - 1, 4))
        self.assertEqual(tuple(variables.z_g.shape), (self.seq.num_frames - 1, 3))

    def test_draft_close_to_observations(self):
        seq = generate_sequence("stand", duration_s=1.0, seed=0)
        obs = perturb_observations(seq, 0.02, seed=2)
        variables = initialize(obs, self.model, plane=seq.plane, config=quick_config(init_iters=200))
        first = STATE_LAYOUT.joints(variables.x0).numpy()
        rms = float(np.sqrt(((first - obs.joints_3d[0]) ** 2).sum(-1).mean()))
        self.assertLess(rms, 3 * 0.02 * math.sqrt(3))

    def test_noiseless_observations_fit_better(self):
        clean = perturb_observations(self.seq, 0.0, seed=0)
        config = quick_config(init_iters=200)
        losses = []
        for obs in (clean, self.obs):
            problem = FitProblem(self.model, self.skeleton, obs, config, plane=self.seq.plane)
            variables = initialize(obs, self.model, plane=self.seq.plane, config=config)
            losses.append(float(loss_data(problem.roll(variables)[2][:1], problem.target[:1], 0.25)))
        self.assertLess(losses[0], losses[1])

    def test_unknown_ground_adds_plane(self):
        variables = initialize(self.obs, self.model, config=quick_config())
        self.assertEqual(tuple(variables.plane_raw.shape), (4,))
        plane = normalize_plane(variables.plane_raw)
        self.assertGreater(float(plane.normal[2]), 0.99)

    def test_too_few_frames(self):
        obs = ObservationSequence(fps=30.0, joints_3d=self.obs.joints_3d[:1])
        with self.assertRaises(DimensionError):
            initialize(obs, self.model)

    def test_non_finite_observations(self):
        joints = self.obs.joints_3d.copy()
        joints[3, 4, 0] = np.nan
        with self.assertRaises(NumericError):
            initialize(ObservationSequence(fps=30.0, joints_3d=joints), self.model)

    def test_guess_plane(self):
        joints = torch.from_numpy(self.seq.joints())
        horizontal = guess_plane(joints, "horizontal")
        self.assertAlmostEqual(float(horizontal.offset), -float(joints[..., 2].min()), places=12)
        fitted = guess_plane(joints, "foot_fit")
        self.assertGreater(float(fitted.normal[2]), 0.9)

    def test_kabsch_recovers_rotation(self):
        generator = torch.Generator().manual_seed(0)
        template = torch.randn(5, 3, generator=generator, dtype=torch.float64)
        rotations = torch.stack([random_rotation(generator) for _ in range(3)])
        observed = template @ rotations.transpose(-1, -2) + torch.tensor([0.3, -1.0, 2.0], dtype=torch.float64)
        self.assertTrue(torch.allclose(kabsch_rotations(template, observed), rotations, atol=1e-10))


class TestObjective(FitCase):
    def setUp(self):
        super().setUp()
        with torch.no_grad():
            # keep predicted contact probabilities away from the 0.5 mask threshold
            self.model.contact_head.bias.fill_(3.0)
        self.config = quick_config(optimize_bone_scale=True)

    def test_plane_scale_invariance(self):
        problem = FitProblem(self.model, self.skeleton, self.obs, self.config)
        variables = initialize(self.obs, self.model, config=self.config)
        a = problem.evaluate(variables)
        b = problem.evaluate(variables.replace(plane_raw=3.7 * variables.plane_raw))
        for name in TERMS:
            self.assertAlmostEqual(float(a.terms[name]), float(b.terms[name]),
                                   delta=1e-9 * max(1.0, abs(float(a.terms[name]))), msg=name)

    def test_gradients_fixed_ground(self):
        problem = FitProblem(self.model, self.skeleton, self.obs, self.config, plane=self.seq.plane)
        variables = initialize(self.obs, self.model, plane=self.seq.plane, config=self.config)
        for name in ("x0", "g0", "z_m", "z_g", "bone_scale"):
            self.assertLess(block_gradient_error(problem, variables, name), 1e-4, name)

    def test_gradients_with_ground(self):
        problem = FitProblem(self.model, self.skeleton, self.obs, self.config)
        variables = initialize(self.obs, self.model, config=self.config)
        for name in ("x0", "z_m", "z_g", "plane_raw"):
            self.assertLess(block_gradient_error(problem, variables, name), 1e-4, name)

    def test_2d_needs_camera(self):
        with self.assertRaises(ConfigError):
            FitProblem(self.model, self.skeleton, self.obs, quick_config(observation="2d"), plane=self.seq.plane)


class TestFit(FitCase):
    def test_zero_budget_returns_initialization(self):
        config = quick_config(stage1_iters=0, stage2_iters=0)
        fitted, report = fit_fixed_ground(self.obs, self.seq.plane, self.model, config, self.skeleton)
        problem = FitProblem(self.model, self.skeleton, self.obs, config, plane=self.seq.plane)
        variables = initialize(self.obs, self.model, plane=self.seq.plane, config=config, skeleton=self.skeleton)
        expected = to_sequence(problem, variables, self.obs, "fixed_ground")
        np.testing.assert_allclose(fitted.states, expected.states, atol=1e-12)
        self.assertEqual(report.iterations, 0)
        self.assertTrue(report.converged)

    def test_zero_budget_keeps_initial_plane(self):
        config = quick_config(stage1_iters=0, stage2_iters=0)
        _, plane, report = fit_with_ground(self.obs, self.model, config, self.skeleton,
                                           initial_plane=self.seq.plane)
        self.assertTrue(torch.allclose(plane.normal, self.seq.plane.normal, atol=1e-12))
        self.assertAlmostEqual(float(plane.offset), float(self.seq.plane.offset), places=12)
        self.assertEqual(report.setting, "with_ground")

    def test_output_shapes(self):
        fitted, report = fit_fixed_ground(self.obs, self.seq.plane, self.model, quick_config(), self.skeleton)
        self.assertEqual(fitted.states.shape, self.seq.states.shape)
        self.assertEqual(fitted.contacts.shape, (self.seq.num_frames, 9))
        self.assertEqual(fitted.predicted_contacts.shape, (self.seq.num_frames, 9))
        self.assertEqual([s.name for s in report.stages], ["stage1", "stage2"])
        self.assertEqual(report.to_dict()["setting"], "fixed_ground")

    def test_descent_is_monotone_and_complete(self):
        config = quick_config(stage1_iters=6, stage2_iters=6)
        rows = []
        _, _, report = fit_with_ground(self.obs, self.model, config, self.skeleton, on_iteration=rows.append)
        self.assertEqual(len(rows), report.iterations)
        for stage in report.stages:
            totals = [row["total"] for row in stage.rows] + [stage.final["total"]]
            for before, after in zip(totals, totals[1:]):
                self.assertLessEqual(after, before + 1e-9 * abs(before))
            for row in stage.rows + [stage.initial, stage.final]:
                weighted = sum(stage.weights[name] * row[name] for name in TERMS)
                self.assertAlmostEqual(weighted, row["total"], delta=1e-8 * max(1.0, abs(row["total"])))
        self.assertEqual(report.stages[0].weights["prior"], 0.0)
        self.assertNotIn("g0", report.stages[1].variables)
        self.assertIn("plane_raw", report.stages[1].variables)

    def test_data_only_objective_does_not_increase(self):
        weights_off = dict(lambda_prior=0.0, lambda_pconsist=0.0, lambda_reg_smooth=0.0, lambda_reg_contact=0.0)
        config = quick_config(stage1_iters=5, stage2_iters=5, **weights_off)
        _, report = fit_fixed_ground(self.obs, self.seq.plane, self.model, config, self.skeleton)
        self.assertLessEqual(report.stages[-1].final["data"], report.stages[0].initial["data"])
        self.assertIn("g0", report.stages[1].variables)

    def test_fit_from_2d(self):
        center = self.seq.joints()[:, 0].mean(0)
        camera = Camera.look_at(center + np.array([0.0, -4.0, 0.0]), center)
        obs = project_to_camera(self.obs, camera)
        config = quick_config(observation="2d")
        fitted, report = fit_fixed_ground(obs, self.seq.plane, self.model, config, self.skeleton)
        self.assertLessEqual(report.stages[-1].final["total"], report.stages[-1].initial["total"])
        self.assertEqual(fitted.num_frames, self.seq.num_frames)

    def test_divergence_is_reported(self):
        with torch.no_grad():
            self.model.state_head.bias.fill_(float("nan"))
        with self.assertRaises(FitDivergenceError) as ctx:
            fit_fixed_ground(self.obs, self.seq.plane, self.model, quick_config(), self.skeleton)
        self.assertIsInstance(ctx.exception, NumericError)
        self.assertIsNotNone(ctx.exception.report)

    def test_horizontal_plane_default(self):
        plane = GroundPlane.horizontal(0.0)
        fitted, _ = fit_fixed_ground(self.obs, plane, self.model, quick_config(stage1_iters=0, stage2_iters=0))
        self.assertTrue(torch.equal(fitted.plane.normal, plane.normal))


if __name__ == '__main__':
    unittest.main()
