"""Federated gated-attention multiple-instance learning with Gaussian weight noise."""

__version__ = "0.1.0"
