"""
Training and checkpoints
========================
Window datasets built from motion sequences, the alternating
teacher-forced / rollout training loop, and versioned checkpoints.
"""

import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import torch
from tqdm import tqdm

from ..core.errors import CheckpointConfigError, CheckpointError, ConfigError, NumericError
from ..body.skeleton import DTYPE
from ..body.ground import interaction_vector
from .dual_prior import DualPriorModel, LossBreakdown, TransitionBatch, training_loss
from .networks import ModelConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "groundmotion-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-4
    grad_clip: float = 5.0
    kl_anneal_fraction: float = 0.1
    rollout_every: int = 2
    window: int = 4
    stride: int = 1
    seed: int = 0
    estimate_normalization: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.window < 1 or self.stride < 1:
            raise ConfigError("training.epochs must be >= 0; batch_size, window and stride >= 1.")
        if self.learning_rate < 0 or self.grad_clip <= 0:
            raise ConfigError("training.learning_rate must be >= 0 and grad_clip > 0.")
        if not 0.0 <= self.kl_anneal_fraction <= 1.0:
            raise ConfigError("training.kl_anneal_fraction must lie in [0, 1].")
        if self.rollout_every < 0:
            raise ConfigError("training.rollout_every must be >= 0.")


@dataclass
class TrainResult:
    model: DualPriorModel
    loss_curve: List[Dict] = field(default_factory=list)
    initial_loss: Optional[Dict] = None
    final_loss: Optional[Dict] = None
    optimizer_state: Optional[Dict] = None
    epochs_completed: int = 0


# =============================================================================
# DATASET
# =============================================================================

def dataset_from_sequences(sequences: Sequence, window: int = 4, stride: int = 1) -> TransitionBatch:
    """All length-(window+1) windows of every sequence, g derived from x and the sequence plane."""
    states, interactions, contacts, normals, offsets = [], [], [], [], []
    for seq in sequences:
        x = torch.as_tensor(seq.states, dtype=DTYPE)
        if x.shape[0] < window + 1:
            logger.warning("skipping %s clip with %d frames (window %d)", seq.kind, x.shape[0], window)
            continue
        g = interaction_vector(x, seq.plane)
        c = torch.as_tensor(seq.contacts, dtype=DTYPE)
        starts = range(0, x.shape[0] - window, stride)
        for s in starts:
            states.append(x[s:s + window + 1])
            interactions.append(g[s:s + window + 1])
            contacts.append(c[s:s + window + 1])
            normals.append(seq.plane.normal)
            offsets.append(seq.plane.offset)
    if not states:
        raise ConfigError("No training windows: sequences are shorter than the window.")
    return TransitionBatch(
        states=torch.stack(states),
        interactions=torch.stack(interactions).detach(),
        contacts=torch.stack(contacts),
        plane_normal=torch.stack(normals).to(DTYPE),
        plane_offset=torch.stack(offsets).to(DTYPE),
    )


def estimate_normalization(model: DualPriorModel, dataset: TransitionBatch):
    x = dataset.states.reshape(-1, dataset.states.shape[-1])
    g = dataset.interactions.reshape(-1, dataset.interactions.shape[-1])
    model.set_normalization(x.mean(0), x.std(0), g.mean(0), g.std(0))


# =============================================================================
# TRAINING LOOP
# =============================================================================

def epoch_mode(epoch: int, rollout_every: int) -> str:
    """Every `rollout_every`-th epoch trains in rollout mode; 0 disables it."""
    if rollout_every and (epoch + 1) % rollout_every == 0:
        return "rollout"
    return "teacher_forced"


def kl_scale_for(epoch: int, config: TrainConfig) -> float:
    """Linear ramp from 0 over the first kl_anneal_fraction of the epochs."""
    anneal_epochs = math.ceil(config.kl_anneal_fraction * config.epochs)
    if anneal_epochs <= 0:
        return 1.0
    return min(1.0, epoch / anneal_epochs)


def epoch_generator(seed: int, epoch: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed) * 1_000_003 + int(epoch))


def evaluate_loss(model: DualPriorModel, dataset: TransitionBatch, mode: str = "teacher_forced",
                  seed: int = 0) -> LossBreakdown:
    """Full-dataset loss at full KL weight with a fixed latent draw."""
    with torch.no_grad():
        return training_loss(model, dataset, mode=mode, seed=seed)


def train(model: DualPriorModel, dataset: TransitionBatch, config: Optional[TrainConfig] = None,
          start_epoch: int = 0, optimizer_state: Optional[Dict] = None,
          on_epoch: Optional[Callable[[Dict], None]] = None, progress: bool = True) -> TrainResult:
    """Adam with gradient-norm clipping, alternating teacher-forced and rollout epochs.

    Each epoch draws its shuffle and latent noise from (seed, epoch), so a run
    resumed from a checkpoint at epoch k continues exactly like an
    uninterrupted one.
    """
    config = config or TrainConfig()
    if start_epoch == 0 and config.estimate_normalization:
        estimate_normalization(model, dataset)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    if optimizer_state:
        optimizer.load_state_dict(optimizer_state)

    result = TrainResult(model=model)
    result.initial_loss = evaluate_loss(model, dataset, seed=config.seed).as_floats()
    logger.info("initial loss %.6f on %d windows", result.initial_loss["total"], dataset.size)

    epochs = range(start_epoch, config.epochs)
    for epoch in tqdm(epochs, desc="Training", unit="epoch", disable=not progress):
        mode = epoch_mode(epoch, config.rollout_every)
        kl_scale = kl_scale_for(epoch, config)
        generator = epoch_generator(config.seed, epoch)
        order = torch.randperm(dataset.size, generator=generator)
        sums = {}
        batches = 0
        model.train()
        for start in range(0, dataset.size, config.batch_size):
            batch = dataset.select(order[start:start + config.batch_size])
            try:
                loss = training_loss(model, batch, mode=mode, generator=generator, kl_scale=kl_scale)
            except NumericError as e:
                logger.error("training diverged at epoch %d: %s", epoch, e)
                raise NumericError(e.term, f"Training diverged at epoch {epoch}: {e}") from e
            optimizer.zero_grad()
            loss.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            for name, value in loss.as_floats().items():
                sums[name] = sums.get(name, 0.0) + value
            batches += 1

        row = {"epoch": epoch, "mode": mode, "kl_scale": kl_scale, **{k: v / batches for k, v in sums.items()}}
        result.loss_curve.append(row)
        logger.info("epoch %d (%s) loss %.6f", epoch, mode, row["total"])
        if on_epoch:
            on_epoch(row)

    model.eval()
    result.final_loss = evaluate_loss(model, dataset, seed=config.seed).as_floats()
    result.optimizer_state = optimizer.state_dict()
    result.epochs_completed = max(start_epoch, config.epochs)
    return result


# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_weights(path, model: DualPriorModel, epoch: int = 0, optimizer_state: Optional[Dict] = None,
                 train_config: Optional[TrainConfig] = None):
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": asdict(train_config) if train_config else None,
        "state_dict": model.state_dict(),
        "epoch": int(epoch),
        "optimizer": optimizer_state,
    }, path)
    logger.debug("saved checkpoint %s at epoch %d", path, epoch)


@dataclass
class LoadedCheckpoint:
    model: DualPriorModel
    epoch: int
    optimizer_state: Optional[Dict]
    train_config: Optional[Dict]


def load_weights(path, expected_config: Optional[ModelConfig] = None) -> LoadedCheckpoint:
    """Loads a checkpoint; a differing expected_config is rejected."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"Checkpoint not found: {path}") from None
    except Exception as e:
        raise CheckpointError(f"Could not read checkpoint '{path}': {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"'{path}' is not a groundmotion checkpoint.")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"'{path}' has checkpoint version {payload.get('version')}.")

    config = ModelConfig.from_dict(payload["model_config"])
    if expected_config is not None and expected_config != config:
        changed = [k for k, v in expected_config.to_dict().items() if payload["model_config"].get(k) != v]
        raise CheckpointConfigError(f"Checkpoint config differs in: {', '.join(changed)}")
    model = DualPriorModel(config)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        raise CheckpointError(f"Checkpoint weights do not match their config: {e}") from e
    model.eval()
    return LoadedCheckpoint(model, int(payload.get("epoch", 0)), payload.get("optimizer"), payload.get("train_config"))
