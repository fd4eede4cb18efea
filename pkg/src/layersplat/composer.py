"""Combine base Gaussians with raw deltas through per-attribute activations.

Every attribute is updated as gamma(gamma^-1(base) + eta * delta).  The
position update runs in the screen-ray parameterization (x/z, y/z, 1/z):
x/z and y/z get identity updates, 1/z a softplus-domain update, so a pure
depth delta slides the Gaussian along its camera ray.  Color, scale and
opacity use sigmoid-domain updates; rotation is an additive update followed
by renormalization to a unit quaternion.

Metric scales are mapped into the sigmoid's (0, 1) domain by dividing by
the set's canonical-unit constant smax before the logit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .types import DeltaSet, DomainError, GaussianSet

# Keeps logits finite when base colors/opacities sit exactly at 0 or 1.
SIGMOID_EPS = 1e-5


@dataclass(frozen=True)
class ActivationSpec:
    """Per-attribute activation and delta scale.

    Defaults: position x/z, y/z -> identity with eta 1e-3; position 1/z ->
    softplus with eta 1e-3; color -> sigmoid with eta 1e-1; rotation ->
    identity with eta 1; scale -> sigmoid with eta 1; alpha -> sigmoid
    with eta 1.
    """

    eta_position_xy: float = 1e-3
    eta_position_invz: float = 1e-3
    eta_color: float = 1e-1
    eta_rotation: float = 1.0
    eta_scale: float = 1.0
    eta_alpha: float = 1.0

    activation_position_xy: str = "identity"
    activation_position_invz: str = "softplus"
    activation_color: str = "sigmoid"
    activation_rotation: str = "identity"
    activation_scale: str = "sigmoid"
    activation_alpha: str = "sigmoid"


DEFAULT_ACTIVATIONS = ActivationSpec()


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    return np.log(p) - np.log1p(-p)


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """ln(e^y - 1); for y > 30 the identity is exact to double precision."""
    y = np.asarray(y, dtype=np.float64)
    small = y <= 30.0
    out = np.where(small, np.log(np.expm1(np.where(small, y, 1.0))), y)
    return out


def _clamped_logit(p):
    pc = np.clip(p, SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    return logit(pc), pc


class ComposeBackwardResult(NamedTuple):
    """Gradients of a scalar loss w.r.t. the raw deltas and the base set."""

    d_position: np.ndarray  # (N, 3) in (x/z, y/z, 1/z) channels
    d_scale: np.ndarray
    d_rotation: np.ndarray
    d_color: np.ndarray
    d_opacity: np.ndarray
    base_position: np.ndarray  # (N, 3) w.r.t. base (x, y, z)
    base_scale: np.ndarray


def compose(
    base: GaussianSet, delta: DeltaSet, spec: ActivationSpec = DEFAULT_ACTIVATIONS
) -> GaussianSet:
    if (base.grid_w, base.grid_h, base.layers) != (
        delta.grid_w,
        delta.grid_h,
        delta.layers,
    ):
        raise DomainError("base and delta grids differ")
    z = base.positions[:, 2]
    if np.any(z <= 0):
        raise DomainError("base inverse depth must be positive")
    for name, arr in (
        ("positions", base.positions),
        ("scales", base.scales),
        ("rotations", base.rotations),
        ("colors", base.colors),
        ("opacities", base.opacities),
    ):
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"base {name} contain non-finite values")

    # Position: screen-ray channels (x/z, y/z, 1/z).
    a = base.positions[:, 0] / z
    b = base.positions[:, 1] / z
    u = 1.0 / z
    a2 = a + spec.eta_position_xy * delta.d_position[:, 0]
    b2 = b + spec.eta_position_xy * delta.d_position[:, 1]
    t_u = softplus_inverse(u) + spec.eta_position_invz * delta.d_position[:, 2]
    u2 = softplus(t_u)
    if np.any(u2 <= 0):
        raise DomainError("composed inverse depth is not positive")
    z2 = 1.0 / u2
    positions = np.stack([a2 * z2, b2 * z2, z2], axis=1)

    # Scale: sigmoid update in canonical units s / smax.
    t_s = _clamped_logit(base.scales / base.smax)[0] + spec.eta_scale * delta.d_scale
    scales = base.smax * sigmoid(t_s)

    # Rotation: additive update, then renormalize.
    v = base.rotations + spec.eta_rotation * delta.d_rotation
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("rotation update collapsed a quaternion to zero")
    rotations = v / norms

    t_c = _clamped_logit(base.colors)[0] + spec.eta_color * delta.d_color
    colors = sigmoid(t_c)

    t_o = _clamped_logit(base.opacities)[0] + spec.eta_alpha * delta.d_opacity
    opacities = sigmoid(t_o)

    return GaussianSet(
        grid_w=base.grid_w,
        grid_h=base.grid_h,
        positions=positions,
        scales=scales,
        rotations=rotations,
        colors=colors,
        opacities=opacities,
        smax=base.smax,
        layers=base.layers,
    )


def compose_backward(
    base: GaussianSet,
    delta: DeltaSet,
    g_position: np.ndarray,
    g_scale: np.ndarray,
    g_rotation: np.ndarray,
    g_color: np.ndarray,
    g_opacity: np.ndarray,
    spec: ActivationSpec = DEFAULT_ACTIVATIONS,
) -> ComposeBackwardResult:
    """Pull loss gradients on the composed attributes back to the raw
    deltas (and to the base position/scale, for depth-map optimization)."""
    z = base.positions[:, 2]
    a = base.positions[:, 0] / z
    b = base.positions[:, 1] / z
    u = 1.0 / z

    a2 = a + spec.eta_position_xy * delta.d_position[:, 0]
    b2 = b + spec.eta_position_xy * delta.d_position[:, 1]
    t_u = softplus_inverse(u) + spec.eta_position_invz * delta.d_position[:, 2]
    u2 = softplus(t_u)
    z2 = 1.0 / u2

    # x' = a2/u2, y' = b2/u2, z' = 1/u2.
    g_a2 = g_position[:, 0] * z2
    g_b2 = g_position[:, 1] * z2
    g_u2 = -z2 * (
        g_position[:, 0] * a2 * z2 + g_position[:, 1] * b2 * z2 + g_position[:, 2] * z2
    )
    g_tu = g_u2 * sigmoid(t_u)  # d softplus = sigmoid

    d_position = np.stack(
        [
            spec.eta_position_xy * g_a2,
            spec.eta_position_xy * g_b2,
            spec.eta_position_invz * g_tu,
        ],
        axis=1,
    )

    # Base position: a = x/z, b = y/z, u = 1/z.
    # d softplus_inverse(u)/du = 1/(1 - e^-u).
    g_u = g_tu / (-np.expm1(-u))
    gx = g_a2 / z
    gy = g_b2 / z
    gz = -(g_a2 * a + g_b2 * b) / z - g_u / (z * z)
    base_position = np.stack([gx, gy, gz], axis=1)

    # Scale.
    cs_raw = base.scales / base.smax
    lg, cs = _clamped_logit(cs_raw)
    t_s = lg + spec.eta_scale * delta.d_scale
    sig_s = sigmoid(t_s)
    g_ts = g_scale * base.smax * sig_s * (1.0 - sig_s)
    d_scale = spec.eta_scale * g_ts
    unclamped = (cs_raw > SIGMOID_EPS) & (cs_raw < 1.0 - SIGMOID_EPS)
    base_scale = np.where(
        unclamped, g_ts / (cs * (1.0 - cs)) / base.smax, 0.0
    )

    # Rotation: r' = v/|v|.
    v = base.rotations + spec.eta_rotation * delta.d_rotation
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    r2 = v / norms
    g_v = (g_rotation - r2 * np.sum(r2 * g_rotation, axis=1, keepdims=True)) / norms
    d_rotation = spec.eta_rotation * g_v

    # Color and opacity.
    t_c = _clamped_logit(base.colors)[0] + spec.eta_color * delta.d_color
    sig_c = sigmoid(t_c)
    d_color = spec.eta_color * g_color * sig_c * (1.0 - sig_c)

    t_o = _clamped_logit(base.opacities)[0] + spec.eta_alpha * delta.d_opacity
    sig_o = sigmoid(t_o)
    d_opacity = spec.eta_alpha * g_opacity * sig_o * (1.0 - sig_o)

    return ComposeBackwardResult(
        d_position=d_position,
        d_scale=d_scale,
        d_rotation=d_rotation,
        d_color=d_color,
        d_opacity=d_opacity,
        base_position=base_position,
        base_scale=base_scale,
    )
