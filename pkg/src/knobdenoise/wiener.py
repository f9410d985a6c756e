"""Temporal merging of aligned frames with a tiled frequency-domain Wiener filter.

Tiles are 8x8 with a stride of 4. A sine window is applied before the forward
transform and again after the inverse, so the squared window sums to one over
the overlap and plain overlap-add reconstructs the input. Each alternate
frame's spectrum is pulled toward the reference per frequency by

    A = |D|^2 / (|D|^2 + c * sigma2),   D = T_ref - T_alt,

and the merged tile is the mean over the reference and the four shrunk
alternates. Luma reads ``sigma2_luma``; Cb and Cr both read ``sigma2_chroma``.
"""

from __future__ import annotations

import numpy as np

from .errors import InvariantError, ShapeError
from .flow import AlignedSet
from .media import Frame
from .paramnet import ParamMaps
from .pyramid import sample_grid, sample_grid_adjoint

TILE = 8
STRIDE = TILE // 2
WIENER_C = 8.0
N_MERGE = 5

_W1 = np.sin(np.pi * (np.arange(TILE) + 0.5) / TILE)
WINDOW = np.outer(_W1, _W1)


def dft8x8(tile: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT over the last two axes (each must be 8)."""
    tile = np.asarray(tile)
    if tile.shape[-2:] != (TILE, TILE):
        raise ShapeError(f"expected an 8x8 block, got {tile.shape}")
    return np.fft.fft2(tile, norm="ortho")


def idft8x8(spec: np.ndarray) -> np.ndarray:
    spec = np.asarray(spec)
    if spec.shape[-2:] != (TILE, TILE):
        raise ShapeError(f"expected an 8x8 block, got {spec.shape}")
    return np.fft.ifft2(spec, norm="ortho")


def _shrinkage(t0, alt, sigma2, c, forced=None):
    """Shrinkage weights A plus the intermediates (D, |D|^2, denominator) the gradient reuses."""
    d = t0 - alt
    d2 = d.real ** 2 + d.imag ** 2
    denom = d2 + c * sigma2
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(denom > 0, d2 / np.where(denom > 0, denom, 1.0), 1.0)
    if forced is not None:
        a = np.where(forced, 1.0, a)
    return a, d, d2, denom


def wiener_merge_tile(t0, alts, sigma2, c: float = WIENER_C, forced=None):
    """Merge a reference spectrum with alternate spectra.

    ``t0`` and each element of ``alts`` share a shape ending in (8, 8); leading
    axes are treated as a batch. ``sigma2`` broadcasts against the batch shape
    (add two trailing unit axes for per-tile values). ``forced[z]`` marks tiles
    where alternate ``z`` must be rejected outright.
    """
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 < 0):
        raise InvariantError("sigma2 must be non-negative")
    if c <= 0:
        raise InvariantError("tuning constant c must be positive")
    acc = np.array(t0, dtype=np.complex128, copy=True)
    for z, alt in enumerate(alts):
        a, d, _, _ = _shrinkage(t0, alt, sigma2, c, None if forced is None else forced[z])
        acc += alt + a * d
    return acc / (1 + len(alts))


# --------------------------------------------------------------------------
# tiling

class _TileLayout:
    """Tile starts at -4, 0, 4, ... so every pixel sits under exactly 2x2 tiles."""

    def __init__(self, shape):
        h, w = shape
        self.shape = shape
        self.last_y = ((h - 1) // STRIDE) * STRIDE
        self.last_x = ((w - 1) // STRIDE) * STRIDE
        self.ny = self.last_y // STRIDE + 2
        self.nx = self.last_x // STRIDE + 2
        self.pad = ((STRIDE, self.last_y + TILE - h), (STRIDE, self.last_x + TILE - w))
        self.starts_y = np.arange(self.ny) * STRIDE - STRIDE
        self.starts_x = np.arange(self.nx) * STRIDE - STRIDE

    def padded(self, p: np.ndarray, mode="reflect") -> np.ndarray:
        if mode == "reflect" and (max(self.pad[0]) >= p.shape[0] or max(self.pad[1]) >= p.shape[1]):
            mode = "symmetric"
        if mode == "zero":
            return np.pad(p, self.pad)
        return np.pad(p, self.pad, mode=mode)

    def tiles(self, padded: np.ndarray) -> np.ndarray:
        """(ny, nx, 8, 8) tiles from a padded plane."""
        cy, cx = self.ny + 1, self.nx + 1
        cells = padded.reshape(cy, STRIDE, cx, STRIDE).transpose(0, 2, 1, 3)
        out = np.empty((self.ny, self.nx, TILE, TILE), dtype=padded.dtype)
        s = STRIDE
        out[..., :s, :s] = cells[:-1, :-1]
        out[..., :s, s:] = cells[:-1, 1:]
        out[..., s:, :s] = cells[1:, :-1]
        out[..., s:, s:] = cells[1:, 1:]
        return out

    def overlap_add(self, tiles: np.ndarray) -> np.ndarray:
        cy, cx = self.ny + 1, self.nx + 1
        s = STRIDE
        cells = np.zeros((cy, cx, s, s))
        cells[:-1, :-1] += tiles[..., :s, :s]
        cells[:-1, 1:] += tiles[..., :s, s:]
        cells[1:, :-1] += tiles[..., s:, :s]
        cells[1:, 1:] += tiles[..., s:, s:]
        return cells.transpose(0, 2, 1, 3).reshape(cy * s, cx * s)

    def crop(self, padded: np.ndarray) -> np.ndarray:
        h, w = self.shape
        return padded[STRIDE:STRIDE + h, STRIDE:STRIDE + w]

    def sigma_coords(self):
        """Tile centers expressed on the 1/8-resolution map grid (cell i sits on pixel 8i)."""
        c = (TILE - 1) / 2.0
        return (self.starts_y + c) / TILE, (self.starts_x + c) / TILE


def _check_maps(shape, sigma2_map):
    exp = (-(-shape[0] // TILE), -(-shape[1] // TILE))
    if sigma2_map.shape != exp:
        raise ShapeError(f"sigma2 map is {sigma2_map.shape}, expected {exp} for a {shape} frame")
    if np.any(sigma2_map < 0) or not np.all(np.isfinite(sigma2_map)):
        raise InvariantError("sigma2 map must be finite and non-negative")


def _prepare(layout, ref, alts, masks):
    spectra = [dft8x8(layout.tiles(layout.padded(p)) * WINDOW) for p in [ref] + list(alts)]
    forced = [layout.tiles(layout.padded(m)).min(axis=(-2, -1)) < 1.0 for m in masks]
    return spectra[0], spectra[1:], [f[..., None, None] for f in forced]


def _partition(layout) -> np.ndarray:
    n = np.broadcast_to(WINDOW * WINDOW, (layout.ny, layout.nx, TILE, TILE))
    return layout.overlap_add(n)


def merge_plane(ref, alts, masks, sigma2_map, c: float = WIENER_C, passthrough: bool = False) -> np.ndarray:
    """Wiener-merge one plane. ``passthrough`` skips merging (windowed OLA only)."""
    layout = _TileLayout(ref.shape)
    _check_maps(ref.shape, sigma2_map)
    t0, talts, forced = _prepare(layout, ref, alts, masks)
    if passthrough:
        merged = t0
    else:
        sy, sx = layout.sigma_coords()
        s2 = sample_grid(sigma2_map, sy, sx)[..., None, None]
        merged = wiener_merge_tile(t0, talts, s2, c, forced)
    out = layout.overlap_add(idft8x8(merged).real * WINDOW)
    return layout.crop(out / _partition(layout))


def _channel_groups(aligned: AlignedSet, maps: ParamMaps):
    frames = aligned.frames
    for ci, s2 in ((0, maps.sigma2_luma), (1, maps.sigma2_chroma), (2, maps.sigma2_chroma)):
        planes = [f.planes[ci] for f in frames]
        yield ci, planes[0], planes[1:], s2


def merge_frame(aligned: AlignedSet, maps: ParamMaps, c: float = WIENER_C) -> Frame:
    masks = aligned.masks
    out = [merge_plane(ref, alts, masks, s2, c) for _, ref, alts, s2 in _channel_groups(aligned, maps)]
    return Frame(*out, index=aligned.target.index)


def d_merge_d_sigma2(aligned: AlignedSet, maps: ParamMaps, upstream, c: float = WIENER_C):
    """Gradient of ``sum(upstream * merge_frame(aligned, maps))`` w.r.t. the two sigma2 maps.

    ``upstream`` is a Frame or a (3, H, W) array. Returns ``(g_luma, g_chroma)``
    shaped like the maps.
    """
    up = upstream.to_array() if isinstance(upstream, Frame) else np.asarray(upstream, dtype=np.float64)
    shape = aligned.target.shape
    layout = _TileLayout(shape)
    part = _partition(layout)
    sy, sx = layout.sigma_coords()
    grads = {0: np.zeros(maps.sigma2_luma.shape), 1: np.zeros(maps.sigma2_chroma.shape)}
    for ci, ref, alts, s2map in _channel_groups(aligned, maps):
        _check_maps(shape, s2map)
        t0, talts, forced = _prepare(layout, ref, alts, aligned.masks)
        s2 = sample_grid(s2map, sy, sx)[..., None, None]
        dmerged = np.zeros_like(t0)
        for z, alt in enumerate(talts):
            a, d, d2, denom = _shrinkage(t0, alt, s2, c, forced[z])
            with np.errstate(invalid="ignore", divide="ignore"):
                da = np.where(denom > 0, -c * d2 / np.where(denom > 0, denom, 1.0) ** 2, 0.0)
            da = np.where(forced[z], 0.0, da)
            dmerged += da * d
        dmerged /= N_MERGE
        # adjoint of crop(OLA(window * real(idft(.))) / partition)
        g_pad = np.zeros(part.shape)
        h, w = shape
        g_pad[STRIDE:STRIDE + h, STRIDE:STRIDE + w] = up[ci] / part[STRIDE:STRIDE + h, STRIDE:STRIDE + w]
        g_tiles = layout.tiles(g_pad) * WINDOW
        per_tile = np.sum(g_tiles * idft8x8(dmerged).real, axis=(-2, -1))
        grads[0 if ci == 0 else 1] += sample_grid_adjoint(per_tile, s2map.shape, sy, sx)
    return grads[0], grads[1]
