"""Synthetic degradations for building noisy test clips.

Besides white and spatially correlated Gaussian noise there is a small
block-based codec simulator (8x8 DCT, uniform quantizer, 16x16 full-search
motion compensation, I/P GOPs). Its P-frames copy most of the previous
reconstruction, which is what makes compressed noise persist across frames.
"""

from __future__ import annotations

import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter

from .errors import CodecError, EncoderUnavailableError, InvariantError
from .media import Clip, Frame, read_y4m, stack_clip, clip_like, write_y4m

MB = 16
BLOCK = 8
SEARCH = 8


@dataclass(frozen=True)
class DegradeSpec:
    awgn_variance: float = 0.0
    correlated: float | None = None
    codec: str = "none"          # none | sim | external
    q: int = 28
    crf: int = 23
    gop: int = 12
    seed: int = 0
    encoder_cmd: str | None = None

    def __post_init__(self):
        if not 0 <= self.awgn_variance <= 100:
            raise InvariantError("awgn_variance must lie in [0, 100] (8-bit scale)")
        if self.correlated is not None and self.correlated <= 0:
            raise InvariantError("correlated blur sigma must be positive")
        if self.codec not in ("none", "sim", "external"):
            raise InvariantError(f"unknown codec {self.codec!r}")
        if not 1 <= self.q <= 51:
            raise InvariantError("q must lie in [1, 51]")
        if not 0 <= self.crf <= 51:
            raise InvariantError("crf must lie in [0, 51]")
        if self.gop < 1:
            raise InvariantError("gop must be >= 1")


def _check_variance(v):
    if v < 0:
        raise InvariantError("noise variance must be non-negative")


def add_awgn(clip: Clip, variance_8bit: float, seed: int = 0) -> Clip:
    """I.i.d. Gaussian noise with ``sigma = sqrt(variance) / 255`` on every plane, then clamp."""
    _check_variance(variance_8bit)
    if variance_8bit == 0:
        return clip
    rng = np.random.default_rng(seed)
    sigma = np.sqrt(variance_8bit) / 255.0
    arr = stack_clip(clip)
    noisy = np.clip(arr + rng.normal(0.0, sigma, arr.shape), 0.0, 1.0)
    return clip_like(noisy, clip)


def add_correlated_noise(clip: Clip, variance_8bit: float, blur_sigma: float, seed: int = 0) -> Clip:
    """White noise blurred per plane by a Gaussian, rescaled to the requested variance."""
    _check_variance(variance_8bit)
    if blur_sigma <= 0:
        raise InvariantError("blur_sigma must be positive")
    rng = np.random.default_rng(seed)
    arr = stack_clip(clip)
    white = rng.normal(0.0, 1.0, arr.shape)
    field = gaussian_filter(white, sigma=(0, 0, blur_sigma, blur_sigma), mode="wrap")
    # analytic std of a blurred unit-variance field: the kernel's L2 norm
    std = np.sqrt(np.sum(_gauss_taps(blur_sigma, arr.shape[-2]) ** 2)
                  * np.sum(_gauss_taps(blur_sigma, arr.shape[-1]) ** 2))
    field *= (np.sqrt(variance_8bit) / 255.0) / std
    return clip_like(np.clip(arr + field, 0.0, 1.0), clip)


def _gauss_taps(sigma: float, n: int) -> np.ndarray:
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return gaussian_filter(impulse, sigma, mode="wrap")


# --------------------------------------------------------------------------
# codec simulator

def quant_step(q: int) -> float:
    """Quantizer step in 8-bit units; doubles every 6 quality steps."""
    return 2.0 ** ((q - 4) / 6.0)


def _blocks(p: np.ndarray) -> np.ndarray:
    h, w = p.shape
    return p.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _unblocks(b: np.ndarray) -> np.ndarray:
    nby, nbx = b.shape[:2]
    return b.transpose(0, 2, 1, 3).reshape(nby * BLOCK, nbx * BLOCK)


INTRA_OFFSET = 1.0 / 3.0
INTER_OFFSET = 1.0 / 6.0


def code_residual(p: np.ndarray, step: float, offset: float = INTRA_OFFSET) -> np.ndarray:
    """8x8 orthonormal DCT, dead-zone uniform quantization, dequantization, inverse DCT.

    ``level = sign(c) * floor(|c| / step + offset)``; offsets below 1/2 widen the
    zero bin, so small inter residuals are dropped and the prediction survives.
    """
    coef = dctn(_blocks(p), axes=(-2, -1), norm="ortho")
    coef = np.sign(coef) * np.floor(np.abs(coef) / step + offset) * step
    return _unblocks(idctn(coef, axes=(-2, -1), norm="ortho"))


def motion_search(cur: np.ndarray, ref: np.ndarray, radius: int = SEARCH) -> np.ndarray:
    """Full-search block matching on 16x16 macroblocks. Returns (nby, nbx, 2) integer (dy, dx).

    Candidates are visited zero vector first, then by increasing |dy|+|dx|, so ties keep the
    shortest vector.
    """
    h, w = cur.shape
    padded = np.pad(ref, radius, mode="edge")
    cands = sorted(((dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
                   key=lambda d: (abs(d[0]) + abs(d[1]), d))
    nby, nbx = h // MB, w // MB
    sads = np.empty((len(cands), nby, nbx))
    for i, (dy, dx) in enumerate(cands):
        shifted = padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
        sads[i] = np.abs(cur - shifted).reshape(nby, MB, nbx, MB).sum(axis=(1, 3))
    best = np.argmin(sads, axis=0)
    return np.array(cands)[best]


def motion_compensate(ref: np.ndarray, mvs: np.ndarray) -> np.ndarray:
    h, w = ref.shape
    radius = SEARCH
    padded = np.pad(ref, radius, mode="edge")
    out = np.empty_like(ref)
    for by in range(mvs.shape[0]):
        for bx in range(mvs.shape[1]):
            dy, dx = mvs[by, bx]
            y, x = by * MB, bx * MB
            out[y:y + MB, x:x + MB] = padded[radius + y + dy:radius + y + dy + MB,
                                             radius + x + dx:radius + x + dx + MB]
    return out


def compress_sim(clip: Clip, q: int = 28, gop: int = 12) -> Clip:
    """Encode/decode ``clip`` through the block codec simulator.

    Works in 8-bit units internally. Frames are reflect-padded to a multiple
    of 16 and cropped back afterwards.
    """
    if len(clip) == 0:
        raise InvariantError("cannot compress an empty clip")
    if gop < 1:
        raise InvariantError("gop must be >= 1")
    step = quant_step(q)
    h, w = clip.shape
    ph, pw = (-h) % MB, (-w) % MB
    mode = "reflect" if ph < h and pw < w else "symmetric"
    arr = np.pad(stack_clip(clip) * 255.0, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
    recon = np.empty_like(arr)
    for t in range(arr.shape[0]):
        cur = arr[t]
        if t % gop == 0:
            rec = np.stack([code_residual(p, step) for p in cur])
        else:
            prev = recon[t - 1]
            mvs = motion_search(cur[0], prev[0])
            pred = np.stack([motion_compensate(p, mvs) for p in prev])
            rec = pred + np.stack([code_residual(c - p, step, INTER_OFFSET) for c, p in zip(cur, pred)])
        recon[t] = np.clip(rec, 0.0, 255.0)
    out = recon[:, :, :h, :w] / 255.0
    return clip_like(out, clip)


# --------------------------------------------------------------------------
# external encoder

def transcode_external(clip: Clip, crf: int, encoder_cmd: str, timeout: float = 600.0) -> Clip:
    """Round-trip ``clip`` through an external command.

    ``encoder_cmd`` is a template with ``{input}``, ``{output}`` and ``{crf}``
    placeholders. The command must read the Y4M at ``{input}`` and leave a
    Y4M at ``{output}`` (chain encode and decode in a shell wrapper if needed).
    """
    if not 0 <= crf <= 51:
        raise InvariantError("crf must lie in [0, 51]")
    with tempfile.TemporaryDirectory(prefix="knobdenoise-") as tmp:
        src = Path(tmp) / "input.y4m"
        dst = Path(tmp) / "output.y4m"
        argv = [a.format(input=str(src), output=str(dst), crf=crf) for a in shlex.split(encoder_cmd)]
        if not argv:
            raise InvariantError("empty encoder command")
        if shutil.which(argv[0]) is None:
            raise EncoderUnavailableError(f"encoder binary {argv[0]!r} not found on this host")
        write_y4m(clip, src, subsampling="420")
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout)
        except FileNotFoundError as exc:
            raise EncoderUnavailableError(str(exc)) from exc
        if proc.returncode != 0:
            raise CodecError(f"encoder exited with {proc.returncode}: {proc.stderr.decode(errors='replace')[-500:]}")
        if not dst.exists():
            raise CodecError("encoder produced no output file")
        out = read_y4m(dst)
    if len(out) != len(clip) or out.shape != clip.shape:
        raise CodecError(f"encoder returned {len(out)} frames of {out.shape}, expected {len(clip)} of {clip.shape}")
    return Clip(out.frames, clip.frame_rate)


def degrade(clip: Clip, spec: DegradeSpec) -> Clip:
    out = clip
    if spec.correlated is not None:
        out = add_correlated_noise(out, spec.awgn_variance, spec.correlated, spec.seed)
    elif spec.awgn_variance > 0:
        out = add_awgn(out, spec.awgn_variance, spec.seed)
    if spec.codec == "sim":
        out = compress_sim(out, spec.q, spec.gop)
    elif spec.codec == "external":
        if not spec.encoder_cmd:
            raise InvariantError("external codec needs an encoder command template")
        out = transcode_external(out, spec.crf, spec.encoder_cmd)
    return out


def temporal_residual_correlation(degraded: Clip, clean: Clip, frames=None) -> float:
    """Mean Pearson correlation between consecutive frames' luma residuals (degraded - clean)."""
    d = stack_clip(degraded)[:, 0] - stack_clip(clean)[:, 0]
    idx = range(len(d) - 1) if frames is None else frames
    rs = []
    for t in idx:
        a, b = d[t].ravel(), d[t + 1].ravel()
        if a.std() == 0 or b.std() == 0:
            continue
        rs.append(np.corrcoef(a, b)[0, 1])
    return float(np.mean(rs)) if rs else 0.0
