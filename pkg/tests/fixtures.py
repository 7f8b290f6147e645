"""Small models and clips shared by the test modules."""

import os
import sys

import numpy as np
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from groundmotion.body.skeleton import SkeletonDef
from groundmotion.model.networks import ModelConfig
from groundmotion.model.dual_prior import DualPriorModel
from groundmotion.data.synth import MOTION_KINDS, generate_sequence
from groundmotion.model.training import TrainConfig, dataset_from_sequences, train


def tiny_config(**overrides):
    values = dict(
        latent_dim_motion=4,
        latent_dim_interaction=3,
        motion_width=16,
        motion_depth=2,
        interaction_width=8,
        interaction_depth=2,
        decoder_width=16,
        decoder_depth=2,
        activation="tanh",
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_model(seed=0, **overrides):
    torch.manual_seed(seed)
    model = DualPriorModel(tiny_config(**overrides))
    model.eval()
    return model


def chain_skeleton(joints=10, bone=(0.0, 0.0, 1.0)):
    """Straight chain 0 -> 1 -> ... with identical bones; contacts are joints 0..8."""
    offsets = np.zeros((joints, 3))
    offsets[1:] = bone
    return SkeletonDef(
        joint_names=tuple(f"j{i}" for i in range(joints)),
        parent_index=tuple([-1] + list(range(joints - 1))),
        rest_offset=offsets,
        contact_joint_indices=tuple(range(9)),
    )


def random_rotation(generator):
    q, r = torch.linalg.qr(torch.randn(3, 3, generator=generator, dtype=torch.float64))
    q = q * torch.sign(torch.diagonal(r))
    if torch.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# End-to-end thresholds for the small trained prior in test_acceptance.py.
DENOISE_SIGMA = 0.04
DENOISE_PASS_FRACTION = 0.9
DENOISE_MEDIAN_IMPROVEMENT = 0.25
TILT_DEG = 20.0
TILT_SIGMA = 0.02
PLANE_COS_MIN = 0.95
PLANE_PASS_FRACTION = 0.8
ROLLOUT_STEPS = 90
ROLLOUT_CONSISTENCY_M = 0.1


def trained_prior(seed=0, epochs=40):
    """Small prior trained on every motion kind; shared by the end-to-end tests."""
    sequences = [generate_sequence(kind, duration_s=2.0, seed=100 + 10 * i + k)
                 for i, kind in enumerate(MOTION_KINDS) for k in range(3)]
    dataset = dataset_from_sequences(sequences, window=4)
    torch.manual_seed(seed)
    model = DualPriorModel(ModelConfig(
        latent_dim_motion=16, latent_dim_interaction=8,
        motion_width=64, motion_depth=2, interaction_width=32, interaction_depth=2,
        decoder_width=64, decoder_depth=2, w_consist=10.0,
    ))
    config = TrainConfig(epochs=epochs, batch_size=32, learning_rate=2e-3, window=4, rollout_every=2, seed=seed)
    result = train(model, dataset, config, progress=False)
    return result.model
