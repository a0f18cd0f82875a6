"""Logical constraints as differentiable dual-variable distributional losses."""

from . import encoder, formula, model, trainer, variational

__all__ = ["encoder", "formula", "model", "trainer", "variational", "harness"]
__version__ = "0.1.0"
