"""Log-polar-like foveal resampling.

A regular output grid ``(u, v)`` in ``[-1, 1]^2`` is pulled toward the
center by ``(u', v') = ln(sqrt(u^2 + v^2) + 1) * (u, v)`` and the source
image is read bilinearly at the warped coordinates. The largest radius,
a grid corner at ``sqrt(2)``, lands at ``ln(sqrt(2) + 1) < 1`` per axis, so
samples never leave the source image and no clamping is needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_WARPED = float(np.log(np.sqrt(2.0) + 1.0))


def warp(u, v):
    """Warp grid coordinates; accepts scalars or arrays."""
    scale = np.log(np.sqrt(np.square(u) + np.square(v)) + 1.0)
    return scale * u, scale * v


def pixel_centers(size: int) -> np.ndarray:
    """Normalized coordinates of pixel centers, ``(i + 0.5) / size`` mapped to [-1, 1]."""
    return 2.0 * (np.arange(size) + 0.5) / size - 1.0


@dataclass(frozen=True)
class WarpGrid:
    out_size: int
    u: np.ndarray  # (out, out) warped horizontal coordinate, column axis
    v: np.ndarray  # (out, out) warped vertical coordinate, row axis

    @property
    def coords(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=-1)


def build_grid(out_size: int, foveate: bool = True) -> WarpGrid:
    """Warped sampling grid; ``foveate=False`` gives a uniform (identity) grid."""
    if out_size < 2:
        raise ValueError(f"out_size must be >= 2, got {out_size}")
    c = pixel_centers(out_size)
    V, U = np.meshgrid(c, c, indexing="ij")
    if foveate:
        U, V = warp(U, V)
    U.flags.writeable = False
    V.flags.writeable = False
    return WarpGrid(out_size, U, V)


def sample(src: np.ndarray, grid: WarpGrid) -> np.ndarray:
    """Bilinearly sample an ``(H, W)`` or ``(H, W, C)`` image at the grid coordinates."""
    src = np.asarray(src)
    if src.shape[0] < 2 or src.shape[1] < 2:
        raise ValueError(f"source image must be at least 2x2, got {src.shape[:2]}")
    H, W = src.shape[:2]
    x = (grid.u + 1.0) * 0.5 * W - 0.5
    y = (grid.v + 1.0) * 0.5 * H - 0.5
    x = np.clip(x, 0.0, W - 1.0)
    y = np.clip(y, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x).astype(int), W - 2)
    y0 = np.minimum(np.floor(y).astype(int), H - 2)
    fx = x - x0
    fy = y - y0
    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = src[y0, x0] * (1 - fx) + src[y0, x0 + 1] * fx
    bot = src[y0 + 1, x0] * (1 - fx) + src[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def foveate(src: np.ndarray, out_size: int = 64) -> np.ndarray:
    return sample(src, build_grid(out_size))
