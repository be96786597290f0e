"""Class-agnostic viewpoint estimation with a pose-aware contrastive loss,
at desk scale on synthetic data."""

__version__ = "0.1.0"
