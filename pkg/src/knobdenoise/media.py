"""Frames, clips, colorspace conversion and Y4M / PNG-sequence I/O.

Planes are 2-D float64 numpy arrays with nominal range [0, 1]. Frames are
always stored 4:4:4; 4:2:0 only exists at the file boundary.
"""

from __future__ import annotations

import glob
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import InvariantError, MediaIOError, ShapeError

Y4M_MAGIC = b"YUV4MPEG2"


def check_plane(p: np.ndarray, name: str = "plane") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvariantError(f"{name} contains non-finite values")
    return p


@dataclass(frozen=True, eq=False)
class Frame:
    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray
    index: int = 0

    def __post_init__(self):
        y = check_plane(self.y, "y")
        cb = check_plane(self.cb, "cb")
        cr = check_plane(self.cr, "cr")
        if not (y.shape == cb.shape == cr.shape):
            raise ShapeError(f"plane shapes differ: {y.shape} {cb.shape} {cr.shape}")
        if self.index < 0:
            raise InvariantError("frame index must be >= 0")
        for name, arr in (("y", y), ("cb", cb), ("cr", cr)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.cb, self.cr

    def to_array(self) -> np.ndarray:
        """Stack as a (3, H, W) array (a fresh, writable copy)."""
        return np.stack(self.planes)

    @classmethod
    def from_array(cls, arr: np.ndarray, index: int = 0) -> "Frame":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ShapeError(f"expected (3, H, W) array, got {arr.shape}")
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy(), index)

    def replace(self, y=None, cb=None, cr=None, index=None) -> "Frame":
        return Frame(
            self.y if y is None else y,
            self.cb if cb is None else cb,
            self.cr if cr is None else cr,
            self.index if index is None else index,
        )


@dataclass(frozen=True, eq=False)
class Clip:
    frames: tuple[Frame, ...]
    frame_rate: Fraction = Fraction(30)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = tuple(self.frames)
        if self.frame_rate <= 0:
            raise InvariantError("frame rate must be positive")
        if frames:
            shape = frames[0].shape
            for i, f in enumerate(frames):
                if f.shape != shape:
                    raise ShapeError(f"frame {i} has shape {f.shape}, expected {shape}")
            # renumber so indices are contiguous from 0
            frames = tuple(f if f.index == i else f.replace(index=i) for i, f in enumerate(frames))
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "frame_rate", Fraction(self.frame_rate))

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Clip(self.frames[i], self.frame_rate)
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        if not self.frames:
            raise InvariantError("empty clip has no shape")
        return self.frames[0].shape

    @classmethod
    def from_arrays(cls, arrays: Iterable[np.ndarray], frame_rate=30) -> "Clip":
        return cls(tuple(Frame.from_array(a, i) for i, a in enumerate(arrays)), Fraction(frame_rate))


# --------------------------------------------------------------------------
# colorspace (BT.601 full range)

KR, KG, KB = 0.299, 0.587, 0.114
CB_SCALE = 0.564
CR_SCALE = 0.713


def _ycbcr_unclamped(r, g, b):
    y = KR * r + KG * g + KB * b
    return y, 0.5 + (b - y) * CB_SCALE, 0.5 + (r - y) * CR_SCALE


def _rgb_unclamped(y, cb, cr):
    r = y + (cr - 0.5) / CR_SCALE
    b = y + (cb - 0.5) / CB_SCALE
    g = (y - KR * r - KB * b) / KG
    return r, g, b


def rgb_to_ycbcr(r, g, b):
    """Works on scalars or arrays; outputs are clamped to [0, 1]."""
    y, cb, cr = _ycbcr_unclamped(np.asarray(r, float), np.asarray(g, float), np.asarray(b, float))
    out = tuple(np.clip(c, 0.0, 1.0) for c in (y, cb, cr))
    if np.ndim(r) == 0 and np.ndim(g) == 0 and np.ndim(b) == 0:
        return tuple(float(c) for c in out)
    return out


def ycbcr_to_rgb(y, cb, cr):
    """Exact algebraic inverse of :func:`rgb_to_ycbcr` before clamping."""
    r, g, b = _rgb_unclamped(np.asarray(y, float), np.asarray(cb, float), np.asarray(cr, float))
    out = tuple(np.clip(c, 0.0, 1.0) for c in (r, g, b))
    if np.ndim(y) == 0 and np.ndim(cb) == 0 and np.ndim(cr) == 0:
        return tuple(float(c) for c in out)
    return out


def frame_from_rgb(rgb: np.ndarray, index: int = 0) -> Frame:
    """``rgb`` is (H, W, 3) in [0, 1] or uint8."""
    rgb = np.asarray(rgb)
    if rgb.dtype == np.uint8:
        rgb = rgb.astype(np.float64) / 255.0
    y, cb, cr = rgb_to_ycbcr(rgb[..., 0], rgb[..., 1], rgb[..., 2])
    return Frame(y, cb, cr, index)


def frame_to_rgb8(frame: Frame) -> np.ndarray:
    r, g, b = ycbcr_to_rgb(*frame.planes)
    return quantize8(np.stack([r, g, b], axis=-1))


def quantize8(v: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-up."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


# --------------------------------------------------------------------------
# Y4M

_SUPPORTED_C = {
    "420": "420", "420jpeg": "420", "420paldv": "420", "420mpeg2": "420",
    "444": "444",
}


def _parse_y4m_header(line: bytes) -> dict:
    parts = line.split()
    if not parts or parts[0] != Y4M_MAGIC:
        raise MediaIOError("missing YUV4MPEG2 signature")
    hdr = {"C": "420", "F": Fraction(30), "raw": line}
    for tok in parts[1:]:
        tag, val = chr(tok[0]), tok[1:].decode("ascii", "replace")
        try:
            if tag == "W":
                hdr["W"] = int(val)
            elif tag == "H":
                hdr["H"] = int(val)
            elif tag == "F":
                num, den = val.split(":")
                hdr["F"] = Fraction(int(num), int(den))
            elif tag == "C":
                if val not in _SUPPORTED_C:
                    raise MediaIOError(f"unsupported Y4M colorspace/subsampling C{val}")
                hdr["C"] = _SUPPORTED_C[val]
        except (ValueError, ZeroDivisionError) as exc:
            raise MediaIOError(f"malformed Y4M header token {tok!r}") from exc
    if "W" not in hdr or "H" not in hdr or hdr["W"] <= 0 or hdr["H"] <= 0:
        raise MediaIOError("Y4M header lacks valid W/H")
    return hdr


def upsample_chroma_420(c: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear 2x upsampling of center-sited 4:2:0 chroma to ``shape``."""
    h, w = shape
    ys = np.clip((np.arange(h) - 0.5) / 2.0, 0, c.shape[0] - 1)
    xs = np.clip((np.arange(w) - 0.5) / 2.0, 0, c.shape[1] - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, c.shape[0] - 1)
    x1 = np.minimum(x0 + 1, c.shape[1] - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = c[y0][:, x0] * (1 - fx) + c[y0][:, x1] * fx
    bot = c[y1][:, x0] * (1 - fx) + c[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def downsample_chroma_420(c: np.ndarray) -> np.ndarray:
    """2x2 box average (edge-replicated for odd sizes)."""
    h, w = c.shape
    c = np.pad(c, ((0, h % 2), (0, w % 2)), mode="edge")
    return 0.25 * (c[0::2, 0::2] + c[1::2, 0::2] + c[0::2, 1::2] + c[1::2, 1::2])


def read_y4m(path) -> Clip:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise MediaIOError(f"cannot read {path}: {exc}") from exc
    nl = data.find(b"\n")
    if nl < 0:
        raise MediaIOError("malformed Y4M header (no newline)")
    hdr = _parse_y4m_header(data[:nl])
    w, h = hdr["W"], hdr["H"]
    if hdr["C"] == "444":
        cw, ch = w, h
    else:
        cw, ch = (w + 1) // 2, (h + 1) // 2
    frame_bytes = w * h + 2 * cw * ch
    pos = nl + 1
    frames = []
    while pos < len(data):
        fnl = data.find(b"\n", pos)
        if fnl < 0 or not data[pos:fnl].startswith(b"FRAME"):
            raise MediaIOError(f"missing FRAME marker at byte {pos}")
        pos = fnl + 1
        payload = data[pos:pos + frame_bytes]
        if len(payload) != frame_bytes:
            raise MediaIOError(f"truncated frame payload in frame {len(frames)}")
        pos += frame_bytes
        buf = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
        y = buf[: w * h].reshape(h, w)
        cb = buf[w * h: w * h + cw * ch].reshape(ch, cw)
        cr = buf[w * h + cw * ch:].reshape(ch, cw)
        if hdr["C"] == "420":
            cb = upsample_chroma_420(cb, (h, w))
            cr = upsample_chroma_420(cr, (h, w))
        frames.append(Frame(y, cb, cr, len(frames)))
    return Clip(tuple(frames), hdr["F"], {"y4m_header": hdr["raw"].decode("ascii", "replace")})


def y4m_bytes(clip: Clip, subsampling: str = "444") -> bytes:
    if len(clip) == 0:
        raise InvariantError("cannot write an empty clip")
    if subsampling not in ("444", "420"):
        raise InvariantError(f"unsupported subsampling {subsampling}")
    h, w = clip.shape
    fr = clip.frame_rate
    chunks = [f"YUV4MPEG2 W{w} H{h} F{fr.numerator}:{fr.denominator} Ip A1:1 C{subsampling}\n".encode()]
    for f in clip:
        planes = [f.y, f.cb, f.cr]
        if subsampling == "420":
            planes = [f.y, downsample_chroma_420(f.cb), downsample_chroma_420(f.cr)]
        chunks.append(b"FRAME\n")
        chunks.extend(quantize8(p).tobytes() for p in planes)
    return b"".join(chunks)


def write_y4m(clip: Clip, path, subsampling: str = "444") -> None:
    # Frames validate finiteness on construction; serialize fully before touching disk.
    payload = y4m_bytes(clip, subsampling)
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise MediaIOError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# PNG

_NUM_RE = re.compile(r"(\d+)")


def _numeric_key(path: str):
    nums = _NUM_RE.findall(Path(path).stem)
    return (int(nums[-1]) if nums else -1, path)


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise MediaIOError(f"cannot decode {path}: {exc}") from exc


def read_png_sequence(directory, pattern: str = "*.png", frame_rate=30) -> Clip:
    paths = sorted(glob.glob(os.path.join(str(directory), pattern)), key=_numeric_key)
    if not paths:
        raise MediaIOError(f"no files match {pattern!r} in {directory}")
    frames = []
    for i, p in enumerate(paths):
        rgb = read_png(p)
        if frames and rgb.shape[:2] != frames[0].shape:
            raise ShapeError(f"{p} is {rgb.shape[1]}x{rgb.shape[0]}, expected "
                             f"{frames[0].shape[1]}x{frames[0].shape[0]}")
        frames.append(frame_from_rgb(rgb, i))
    return Clip(tuple(frames), Fraction(frame_rate))


def encode_png(rgb8: np.ndarray) -> bytes:
    import io

    bio = io.BytesIO()
    Image.fromarray(rgb8, mode="RGB").save(bio, format="PNG")
    return bio.getvalue()


def write_png_sequence(clip: Clip, directory, stem: str = "frame") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for f in clip:
        p = directory / f"{stem}_{f.index:05d}.png"
        Image.fromarray(frame_to_rgb8(f), mode="RGB").save(p)
        out.append(p)
    return out


def stack_clip(clip: Clip) -> np.ndarray:
    """(T, 3, H, W) array of a clip."""
    return np.stack([f.to_array() for f in clip])


def clip_like(frames: Sequence[np.ndarray], template: Clip) -> Clip:
    return Clip(tuple(Frame.from_array(a, i) for i, a in enumerate(frames)), template.frame_rate)
