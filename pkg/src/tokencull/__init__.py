"""tokencull: adaptive visual-token pruning for a toy volumetric
transformer, with surrogate-gradient training and a verification harness."""

__version__ = "0.1.0"
