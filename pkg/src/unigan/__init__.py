"""Conditional GAN training with teacher-assigned artificial labels, at desk scale."""

from .trainer import RunConfig, RunReport, train

__all__ = ["RunConfig", "RunReport", "train"]
__version__ = "0.1.0"
