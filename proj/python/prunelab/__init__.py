"""Desk-scale pruning laboratory for transformer language models."""

from ._core import Model, ModelConfig, PrunelabError, Vocabulary

__all__ = ["Model", "ModelConfig", "PrunelabError", "Vocabulary"]
