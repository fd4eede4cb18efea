"""Layered 3D Gaussian scenes from a single RGB image and a two-layer
depth map: initialization, activation-based composition, differentiable
splat rendering, loss-driven refinement, and view-synthesis evaluation."""

__version__ = "0.1.0"
