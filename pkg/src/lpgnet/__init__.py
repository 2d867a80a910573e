"""LPGNet: parallel interaction attention and dual-gated fusion for multimodal
emotion recognition, on a small float64 autodiff engine."""

__version__ = "0.1.0"
