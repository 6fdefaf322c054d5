"""Patchwise affine feature enhancement.

A feature map is split into an M x N patch grid; each patch j gets its own
per-channel affine pair, ``out[j] = sigma[j] * f[j] + mu[j]``.  Parameters
initialize to the identity (sigma = 1, mu = 0) so training starts from a
no-op.  Spatial dims that do not divide evenly fall back to pad-to-fit
semantics: pixels map to patch ``floor(i / ceil(dim / patches))``, which
equals edge-replication padding plus cropping for a pointwise transform.

``maybe_enhance`` implements the probabilistic application used during
fine-tuning; every call consumes exactly one Bernoulli draw.  Each
application bumps ``apply_count`` so evaluation paths can prove the
transform stayed off.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .rng import Rng

ENHANCE_MODES = ("mu_and_sigma", "sigma_only")


def patch_axis_index(dim: int, patches: int) -> np.ndarray:
    """Per-pixel patch index along one axis."""
    step = math.ceil(dim / patches)
    return np.minimum(np.arange(dim) // step, patches - 1)


@dataclass
class EnhanceParams:
    """Learnable per-patch affine field over a (C, M, N) grid."""

    e_mu: Tensor
    e_sigma: Tensor
    grid: tuple[int, int]
    mode: str = "mu_and_sigma"
    apply_count: int = field(default=0, compare=False)

    def trainable(self) -> list[Tensor]:
        if self.mode == "sigma_only":
            return [self.e_sigma]
        return [self.e_mu, self.e_sigma]

    @property
    def channels(self) -> int:
        return self.e_mu.shape[0]

    def params_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.e_mu.values.tobytes())
        h.update(self.e_sigma.values.tobytes())
        return h.hexdigest()


def init_enhance_params(channels: int, grid: tuple[int, int] = (7, 7), mode: str = "mu_and_sigma") -> EnhanceParams:
    if mode not in ENHANCE_MODES:
        raise ConfigError(f"unknown enhancement mode {mode!r}")
    m, n = grid
    if m < 1 or n < 1:
        raise ConfigError("patch grid must be at least 1x1")
    mu = ad.parameter(np.zeros((channels, m, n)))
    sigma = ad.parameter(np.ones((channels, m, n)))
    return EnhanceParams(mu, sigma, (m, n), mode)


def enhance(f_s: Tensor, params: EnhanceParams) -> Tensor:
    """Apply the per-patch affine field; differentiable in f_s, mu, sigma."""
    if f_s.values.ndim != 3:
        raise ShapeError("enhance: feature map must be (C, H, W)")
    if f_s.shape[0] != params.channels:
        raise ShapeError(f"enhance: channel mismatch {f_s.shape[0]} vs {params.channels}")
    _, h, w = f_s.shape
    m, n = params.grid
    iy = patch_axis_index(h, m)
    ix = patch_axis_index(w, n)
    sigma = ad.patch_broadcast(params.e_sigma, iy, ix)
    mu = ad.patch_broadcast(params.e_mu, iy, ix)
    params.apply_count += 1
    return ad.add(ad.mul(sigma, f_s), mu)


def maybe_enhance(f_s: Tensor, params: EnhanceParams, p: float, rng: Rng) -> tuple[Tensor, bool]:
    """With probability p return enhance(f_s); always consumes one draw."""
    if not (0.0 <= p <= 1.0):
        raise ConfigError(f"probability must lie in [0, 1], got {p}")
    if rng.bernoulli(p):
        return enhance(f_s, params), True
    return f_s, False


def global_variant(f_s: Tensor, params_1x1: EnhanceParams) -> Tensor:
    """Single affine pair over the whole map; requires a 1x1 grid."""
    if params_1x1.grid != (1, 1):
        raise ConfigError("global_variant requires a 1x1 patch grid")
    return enhance(f_s, params_1x1)


def apply_style_field(values: np.ndarray, sigma: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Non-differentiable twin of enhance() for scene rendering."""
    _, h, w = values.shape
    m, n = sigma.shape[1:]
    iy = patch_axis_index(h, m)
    ix = patch_axis_index(w, n)
    s = sigma[:, iy[:, None], ix[None, :]]
    b = mu[:, iy[:, None], ix[None, :]]
    return s * values + b
