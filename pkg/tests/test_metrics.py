import json
import math
import os
import sys
import tempfile
import unittest

import numpy as np
import torch

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from fixtures import random_rotation

from groundmotion.core.errors import DimensionError
from groundmotion.body.ground import GroundPlane
from groundmotion.data.synth import MOTION_KINDS, generate_sequence, tilt_rotation, transform_sequence
from groundmotion.eval.metrics import (
    METRICS, accel_mag, contact_accuracy, evaluate, mpjpe, mpjpe_g, mpjpe_pa, plane_cos, procrustes_align,
    weighted_mean,
)


def random_joints(frames=4, seed=0):
    return np.random.default_rng(seed).normal(size=(frames, 22, 3))


def procrustes_reference(pred, gt):
    """Frame-by-frame orthogonal Procrustes via SVD."""
    out = np.empty_like(pred)
    for t in range(pred.shape[0]):
        p = pred[t] - pred[t].mean(0)
        g = gt[t] - gt[t].mean(0)
        u, _, vt = np.linalg.svd(p.T @ g)
        d = np.sign(np.linalg.det(vt.T @ u.T))
        rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
        out[t] = p @ rotation.T + gt[t].mean(0)
    return out


class TestJointErrors(unittest.TestCase):
    def test_identical(self):
        joints = random_joints()
        self.assertEqual(mpjpe_g(joints, joints), 0.0)
        self.assertEqual(mpjpe(joints, joints), 0.0)
        self.assertEqual(mpjpe(joints.copy() * 1e3, joints * 1e3), 0.0)
        self.assertLess(mpjpe_pa(joints, joints), 1e-9)

    def test_translation(self):
        joints = random_joints()
        shifted = joints + np.array([0.1, 0.0, 0.0])
        self.assertAlmostEqual(mpjpe_g(shifted, joints), 100.0, places=9)
        self.assertLess(mpjpe(shifted, joints), 1e-9)

    def test_per_joint_reference(self):
        pred, gt = random_joints(seed=1), random_joints(seed=2)
        total = 0.0
        for t in range(4):
            for j in range(22):
                aligned = pred[t, j] - pred[t, 0] + gt[t, 0]
                total += np.linalg.norm(aligned - gt[t, j])
        self.assertAlmostEqual(mpjpe(pred, gt), 1000.0 * total / 88, places=8)

    def test_procrustes_removes_rigid_motion(self):
        gt = random_joints(seed=3)
        rotation = random_rotation(torch.Generator().manual_seed(3)).numpy()
        pred = gt @ rotation.T + np.array([1.0, -2.0, 0.5])
        self.assertLess(mpjpe_pa(pred, gt), 1e-6)

    def test_procrustes_matches_reference(self):
        pred, gt = random_joints(seed=4), random_joints(seed=5)
        np.testing.assert_allclose(procrustes_align(pred, gt), procrustes_reference(pred, gt), atol=1e-10)

    def test_procrustes_degenerate_frame(self):
        gt = random_joints(frames=1, seed=6)
        pred = np.ones((1, 22, 3))
        aligned = procrustes_align(pred, gt)
        self.assertTrue(np.all(np.isfinite(aligned)))
        np.testing.assert_allclose(aligned[0], np.broadcast_to(gt[0].mean(0), (22, 3)), atol=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            mpjpe_g(random_joints(frames=3), random_joints(frames=4))


class TestOtherMetrics(unittest.TestCase):
    def test_contact_accuracy(self):
        gt = np.array([[1, 0, 1, 0]])
        self.assertEqual(contact_accuracy(gt, gt), 1.0)
        self.assertEqual(contact_accuracy(np.array([[1, 1, 1, 0]]), gt), 0.75)

    def test_accel_mag(self):
        t = np.arange(6, dtype=np.float64)[:, None, None]
        linear = 0.01 * t * np.ones((6, 22, 3))
        self.assertLess(accel_mag(linear), 1e-9)
        self.assertEqual(accel_mag(linear[:2]), 0.0)
        bumped = np.zeros((3, 22, 3))
        bumped[1, :, 2] = -0.001
        self.assertAlmostEqual(accel_mag(bumped), 2.0, places=9)

    def test_plane_cos(self):
        up = GroundPlane.horizontal(0.0)
        self.assertAlmostEqual(plane_cos(up, up), 1.0)
        self.assertAlmostEqual(plane_cos(up.flipped(), up), 1.0)
        wall = GroundPlane(torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64), torch.tensor(0.0, dtype=torch.float64))
        self.assertAlmostEqual(plane_cos(wall, up), 0.0)
        tilted = GroundPlane(torch.from_numpy(tilt_rotation(10.0, 0.0) @ np.array([0.0, 0.0, 1.0])),
                             torch.tensor(0.0, dtype=torch.float64))
        self.assertAlmostEqual(plane_cos(tilted, up), math.cos(math.radians(10.0)), places=12)
        self.assertAlmostEqual(plane_cos([0.0, 0.0, 2.0, 1.0], [0.0, 0.0, 1.0, 0.0]), 1.0)

    def test_weighted_mean(self):
        rows = [{"frames": 10, "value": 1.0}, {"frames": 30, "value": 3.0}]
        self.assertAlmostEqual(weighted_mean(rows, "value"), 2.5)
        self.assertTrue(math.isnan(weighted_mean([], "value")))


class TestEvaluate(unittest.TestCase):
    def setUp(self):
        self.sequences = [generate_sequence(kind, duration_s=1.0, seed=i) for i, kind in enumerate(MOTION_KINDS)]

    def test_perfect_predictions(self):
        report = evaluate(self.sequences, self.sequences)
        for name in ("mpjpe", "mpjpe_g", "mpjpe_pa", "accel_mag"):
            self.assertIn(name, report.overall)
        self.assertLess(report.overall["mpjpe"], 1e-9)
        self.assertLess(report.overall["mpjpe_g"], 1e-9)
        self.assertEqual(report.overall["contact_accuracy"], 1.0)
        self.assertAlmostEqual(report.overall["plane_cos"], 1.0)
        self.assertEqual(set(METRICS) - set(report.overall), set())

    def test_buckets_partition(self):
        report = evaluate(self.sequences, self.sequences, names=list(MOTION_KINDS))
        self.assertEqual(sum(b["count"] for b in report.buckets.values()), len(self.sequences))
        self.assertEqual(report.overall["frames"], sum(s.num_frames for s in self.sequences))
        self.assertGreaterEqual(report.buckets["0-0.3"]["count"], 1)
        self.assertEqual([row["name"] for row in report.sequences], list(MOTION_KINDS))

    def test_frame_weighted_overall(self):
        long_walk = generate_sequence("walk", duration_s=3.0, seed=0)
        short_walk = generate_sequence("walk", duration_s=1.0, seed=1)
        shifted = []
        for seq, shift in ((long_walk, 0.01), (short_walk, 0.05)):
            shifted.append(transform_sequence(seq, np.eye(3), np.array([shift, 0.0, 0.0])))
        report = evaluate(shifted, [long_walk, short_walk])
        expected = (10.0 * 90 + 50.0 * 30) / 120
        self.assertAlmostEqual(report.overall["mpjpe_g"], expected, places=6)

    def test_hardest_set(self):
        tilted = transform_sequence(self.sequences[0], tilt_rotation(20.0, 0.0))
        preds = [tilted] + self.sequences[1:]
        report = evaluate(preds, self.sequences, hardest_fraction=0.01)
        self.assertEqual(report.hardest["count"], 1)
        self.assertAlmostEqual(report.hardest["plane_cos"], math.cos(math.radians(20.0)), places=9)

    def test_predicted_contacts_are_thresholded(self):
        seq = self.sequences[4]
        pred = generate_sequence("stand", duration_s=1.0, seed=4)
        pred.predicted_contacts = np.where(seq.contacts > 0, 0.9, 0.1)
        report = evaluate([pred], [seq])
        self.assertEqual(report.overall["contact_accuracy"], 1.0)

    def test_length_mismatch(self):
        with self.assertRaises(DimensionError):
            evaluate(self.sequences[:2], self.sequences[:3])
        with self.assertRaises(DimensionError):
            evaluate([generate_sequence("walk", duration_s=2.0)], [generate_sequence("walk", duration_s=1.0)])

    def test_save(self):
        report = evaluate(self.sequences, self.sequences)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "eval_report.json")
            report.save(path)
            with open(path) as f:
                data = json.load(f)
        self.assertEqual(len(data["sequences"]), len(self.sequences))
        self.assertIn("0.6-1.0", data["buckets"])


if __name__ == '__main__':
    unittest.main()
