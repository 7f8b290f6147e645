"""
Network building blocks
=======================
Model configuration, diagonal Gaussians and the MLP factory shared by the
encoders, priors and decoder.
"""

from dataclasses import asdict, dataclass, fields
from typing import Optional

import torch
import torch.nn as nn

from ..core.errors import ConfigError, DimensionError
from ..body.skeleton import DTYPE, STATE_DIM
from ..body.ground import INTERACTION_DIM

LOGVAR_MIN = -12.0
LOGVAR_MAX = 8.0

ACTIVATIONS = {
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
    "elu": nn.ELU,
    "gelu": nn.GELU,
    "softplus": nn.Softplus,
}


@dataclass
class ModelConfig:
    """Dimensions, network shapes and training-loss weights of the dual-prior CVAE."""
    latent_dim_motion: int = 48
    latent_dim_interaction: int = 16
    motion_width: int = 512
    motion_depth: int = 4
    interaction_width: int = 128
    interaction_depth: int = 4
    decoder_width: int = 512
    decoder_depth: int = 4
    state_dim: int = STATE_DIM
    interaction_dim: int = INTERACTION_DIM
    contact_dim: int = 9
    activation: str = "relu"
    w_recon_x: float = 1.0
    w_recon_g: float = 1.0
    w_kl_m: float = 1e-3
    w_kl_g: float = 1e-3
    w_consist: float = 1.0
    w_contact: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self):
        dims = ("latent_dim_motion", "latent_dim_interaction", "motion_width", "motion_depth",
                "interaction_width", "interaction_depth", "decoder_width", "decoder_depth",
                "state_dim", "interaction_dim", "contact_dim")
        for name in dims:
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"model.{name} must be a positive integer, got {value!r}.")
        if self.state_dim != STATE_DIM or self.interaction_dim != INTERACTION_DIM:
            raise ConfigError(f"state_dim/interaction_dim must be {STATE_DIM}/{INTERACTION_DIM} for this skeleton.")
        for name in self.loss_weight_names():
            if getattr(self, name) < 0:
                raise ConfigError(f"model.{name} must be non-negative.")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"Unknown activation '{self.activation}'. Choose from: {', '.join(ACTIVATIONS)}")

    @staticmethod
    def loss_weight_names():
        return ("w_recon_x", "w_recon_g", "w_kl_m", "w_kl_g", "w_consist", "w_contact")

    def loss_weights(self):
        return {name[2:]: getattr(self, name) for name in self.loss_weight_names()}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown model config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


class GaussianParams:
    """Diagonal Gaussian; log-variance is clamped to [LOGVAR_MIN, LOGVAR_MAX] on construction."""

    def __init__(self, mean: torch.Tensor, log_variance: torch.Tensor):
        if mean.shape != log_variance.shape:
            raise DimensionError(f"mean {tuple(mean.shape)} and log_variance {tuple(log_variance.shape)} differ.")
        self.mean = mean
        self.log_variance = log_variance.clamp(LOGVAR_MIN, LOGVAR_MAX)

    @classmethod
    def from_output(cls, out: torch.Tensor) -> "GaussianParams":
        mean, log_variance = out.chunk(2, dim=-1)
        return cls(mean, log_variance)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_variance)

    def log_prob(self, z: torch.Tensor) -> torch.Tensor:
        """Log-density summed over the last dim, normalization included."""
        return -0.5 * (
            (z - self.mean) ** 2 * torch.exp(-self.log_variance)
            + self.log_variance
            + torch.log(torch.tensor(2.0 * torch.pi, dtype=z.dtype))
        ).sum(-1)

    def __getitem__(self, index) -> "GaussianParams":
        return GaussianParams(self.mean[index], self.log_variance[index])


def sample_latent(params: GaussianParams, seed: Optional[int] = None,
                  generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Reparameterized draw mean + exp(log_var / 2) * eps."""
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(int(seed))
    eps = torch.randn(params.mean.shape, generator=generator, dtype=params.mean.dtype)
    return params.mean + params.std * eps


def kl_diag_gaussians(q: GaussianParams, p: GaussianParams) -> torch.Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last dim."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise DimensionError(f"KL between Gaussians of dims {q.dim} and {p.dim}.")
    var_ratio = torch.exp(q.log_variance - p.log_variance)
    mahalanobis = (q.mean - p.mean) ** 2 * torch.exp(-p.log_variance)
    return 0.5 * (var_ratio + mahalanobis - 1.0 - (q.log_variance - p.log_variance)).sum(-1)


def build_mlp(in_dim: int, width: int, depth: int, out_dim: Optional[int], activation: str) -> nn.Sequential:
    """`depth` hidden Linear+activation layers, then an optional linear output layer."""
    act = ACTIVATIONS[activation]
    layers = []
    dim = in_dim
    for _ in range(depth):
        layers += [nn.Linear(dim, width), act()]
        dim = width
    if out_dim is not None:
        layers.append(nn.Linear(dim, out_dim))
    return nn.Sequential(*layers).to(DTYPE)
