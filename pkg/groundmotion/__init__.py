__version__ = "0.3.0"
# groundmotion: ground-aware motion prior and latent-space motion reconstruction.
