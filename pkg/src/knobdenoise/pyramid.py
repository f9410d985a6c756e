"""Gaussian / Laplacian pyramids and the bilinear resampler they share.

Sample-grid convention used everywhere in the package: a plane at scale
``1/s`` has its pixel ``i`` sitting on full-resolution pixel ``s*i``. This is
the grid produced by "blur then keep even indices" and by stride-2
convolutions with padding 1, so decimation, upsampling and the parameter
network all agree on where a coarse sample lives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, ShapeError

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def max_levels(shape) -> int:
    return int(math.floor(math.log2(min(shape)))) - 1


def blur5(p: np.ndarray) -> np.ndarray:
    """Separable [1,4,6,4,1]/16 blur with reflect borders."""
    q = np.pad(p, 2, mode="reflect")
    k = BINOMIAL5
    rows = k[0] * q[:, :-4] + k[1] * q[:, 1:-3] + k[2] * q[:, 2:-2] + k[3] * q[:, 3:-1] + k[4] * q[:, 4:]
    return k[0] * rows[:-4] + k[1] * rows[1:-3] + k[2] * rows[2:-2] + k[3] * rows[3:-1] + k[4] * rows[4:]


def downsample(p: np.ndarray) -> np.ndarray:
    return blur5(p)[::2, ::2]


def build_gaussian_pyramid(p: np.ndarray, levels: int) -> list[np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    if levels < 1:
        raise InvariantError("levels must be >= 1")
    if levels > max_levels(p.shape):
        raise InvariantError(f"{levels} pyramid levels is too many for a {p.shape[1]}x{p.shape[0]} plane")
    pyr = [p]
    for _ in range(levels - 1):
        pyr.append(downsample(pyr[-1]))
    return pyr


def _axis_taps(coords: np.ndarray, n_in: int):
    src = np.clip(coords, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def sample_grid(p: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear samples of ``p`` on the separable grid ``ys x xs`` (edge-clamped)."""
    y0, y1, fy = _axis_taps(np.asarray(ys, float), p.shape[0])
    x0, x1, fx = _axis_taps(np.asarray(xs, float), p.shape[1])
    fx = fx[None, :]
    rows0 = p[y0]
    rows1 = p[y1]
    top = rows0[:, x0] * (1 - fx) + rows0[:, x1] * fx
    bot = rows1[:, x0] * (1 - fx) + rows1[:, x1] * fx
    fy = fy[:, None]
    return top * (1 - fy) + bot * fy


def sample_grid_adjoint(g: np.ndarray, src_shape, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Transpose of :func:`sample_grid`: scatters grid-space values back onto the source."""
    y0, y1, fy = _axis_taps(np.asarray(ys, float), src_shape[0])
    x0, x1, fx = _axis_taps(np.asarray(xs, float), src_shape[1])
    tmp = np.zeros((src_shape[0], g.shape[1]))
    np.add.at(tmp, y0, g * (1 - fy)[:, None])
    np.add.at(tmp, y1, g * fy[:, None])
    out_t = np.zeros((src_shape[1], src_shape[0]))
    np.add.at(out_t, x0, (tmp * (1 - fx)[None, :]).T)
    np.add.at(out_t, x1, (tmp * fx[None, :]).T)
    return out_t.T


def resample(p: np.ndarray, shape, scale: float) -> np.ndarray:
    """Bilinear sampling of ``p`` where output pixel ``x`` reads source ``x*scale``."""
    h, w = shape
    return sample_grid(p, np.arange(h) * scale, np.arange(w) * scale)


def upsample2(p: np.ndarray, shape) -> np.ndarray:
    """Bilinear x2 upsampling to exactly ``shape``."""
    return resample(p, shape, 0.5)


@dataclass
class LaplacianPyramid:
    bands: list            # band-pass planes at scales 1, 1/2, 1/4
    residual: np.ndarray   # low-pass at 1/8

    @property
    def shapes(self):
        return [b.shape for b in self.bands] + [self.residual.shape]


N_BANDS = 3


def build_laplacian(p: np.ndarray, n_bands: int = N_BANDS) -> LaplacianPyramid:
    p = np.asarray(p, dtype=np.float64)
    if min(p.shape) < 2 ** (n_bands + 2):
        raise InvariantError(f"plane {p.shape} too small for a {n_bands}-band pyramid")
    g = build_gaussian_pyramid(p, n_bands + 1)
    bands = [g[k] - upsample2(g[k + 1], g[k].shape) for k in range(n_bands)]
    return LaplacianPyramid(bands, g[-1])


def collapse_partial(pyr: LaplacianPyramid) -> list[np.ndarray]:
    """Partial reconstructions, finest first: element ``k`` is the image at band ``k``'s scale."""
    cur = pyr.residual
    partial = []
    for band in reversed(pyr.bands):
        if band.shape[0] < cur.shape[0] or band.shape[1] < cur.shape[1]:
            raise ShapeError(f"band {band.shape} cannot sit above level {cur.shape}")
        cur = band + upsample2(cur, band.shape)
        partial.append(cur)
    return partial[::-1]


def collapse_laplacian(pyr: LaplacianPyramid) -> np.ndarray:
    return collapse_partial(pyr)[0]
