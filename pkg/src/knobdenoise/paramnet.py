"""The small parameter-prediction network and its weight container.

Three 3x3 stride-2 convolutions (PReLU between them) turn aligned frames,
their Sobel gradients and validity masks into 1/8-resolution features. Six
1x1 heads read those features and, after a softplus, give the Wiener noise
variance maps and the per-level bilateral sigma pyramids for luma and chroma.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InvariantError, MediaIOError, ShapeError
from .flow import AlignedSet
from .pyramid import resample

N_INPUT = 25
WIDTH = 32
N_LEVELS = 3
MAGIC = b"RFCW1"

HEADS = {
    "head_sigma2_luma": 1,
    "head_sigma2_chroma": 1,
    "head_sigmad_luma": N_LEVELS,
    "head_sigmad_chroma": N_LEVELS,
    "head_sigmar_luma": N_LEVELS,
    "head_sigmar_chroma": N_LEVELS,
}


def weight_shapes() -> "OrderedDict[str, tuple]":
    shapes = OrderedDict()
    cin = N_INPUT
    for i in (1, 2, 3):
        shapes[f"conv{i}.weight"] = (WIDTH, cin, 3, 3)
        shapes[f"conv{i}.bias"] = (WIDTH,)
        cin = WIDTH
    shapes["prelu1"] = (1,)
    shapes["prelu2"] = (1,)
    for name, ch in HEADS.items():
        shapes[f"{name}.weight"] = (ch, WIDTH, 1, 1)
        shapes[f"{name}.bias"] = (ch,)
    return shapes


class NetWeights:
    """Named float32 tensors with the fixed layout from :func:`weight_shapes`.

    Supports elementwise ``+``/``-`` so profiles compose as ``theta0 + delta``.
    """

    def __init__(self, tensors):
        expected = weight_shapes()
        tensors = OrderedDict((k, np.asarray(v, dtype=np.float32)) for k, v in tensors.items())
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        if missing or extra:
            raise ShapeError(f"weight set mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(tensors[name])):
                raise InvariantError(f"tensor {name!r} contains non-finite values")
            tensors[name].setflags(write=False)
        self.tensors = OrderedDict((k, tensors[k]) for k in expected)

    def __getitem__(self, name) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def _zip(self, other, op):
        if not isinstance(other, NetWeights):
            return NotImplemented
        return NetWeights(OrderedDict((k, op(v, other[k])) for k, v in self.items()))

    def __add__(self, other):
        return self._zip(other, np.add)

    def __sub__(self, other):
        return self._zip(other, np.subtract)

    def __neg__(self):
        return NetWeights(OrderedDict((k, -v) for k, v in self.items()))

    def __eq__(self, other):
        if not isinstance(other, NetWeights):
            return NotImplemented
        return all(np.array_equal(v, other[k]) for k, v in self.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def replace(self, **updates) -> "NetWeights":
        t = OrderedDict(self.tensors)
        for k, v in updates.items():
            t[k.replace("__", ".")] = v
        return NetWeights(t)

    @classmethod
    def zeros(cls) -> "NetWeights":
        return cls(OrderedDict((k, np.zeros(s, np.float32)) for k, s in weight_shapes().items()))

    @classmethod
    def random(cls, seed=0, scale=1.0) -> "NetWeights":
        rng = np.random.default_rng(seed)
        t = OrderedDict()
        for k, s in weight_shapes().items():
            fan_in = int(np.prod(s[1:])) if len(s) > 1 else 1
            t[k] = rng.normal(0.0, scale / np.sqrt(fan_in), s)
        return cls(t)

    # -- RFCW1 serialization ------------------------------------------------

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<I", len(self.tensors))]
        for name, arr in self.tensors.items():
            bname = name.encode("utf-8")
            out.append(struct.pack("<I", len(bname)))
            out.append(bname)
            out.append(struct.pack("<I", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.astype("<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "NetWeights":
        if not data.startswith(MAGIC):
            raise MediaIOError("bad magic: not an RFCW1 weight file")
        try:
            pos = len(MAGIC)
            (count,) = struct.unpack_from("<I", data, pos)
            pos += 4
            tensors = OrderedDict()
            for _ in range(count):
                (nlen,) = struct.unpack_from("<I", data, pos)
                pos += 4
                name = data[pos:pos + nlen].decode("utf-8")
                pos += nlen
                (rank,) = struct.unpack_from("<I", data, pos)
                pos += 4
                dims = struct.unpack_from(f"<{rank}I", data, pos)
                pos += 4 * rank
                n = int(np.prod(dims)) if rank else 1
                if pos + 4 * n > len(data):
                    raise MediaIOError(f"truncated data for tensor {name!r}")
                tensors[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims).copy()
                pos += 4 * n
        except (struct.error, UnicodeDecodeError) as exc:
            raise MediaIOError(f"corrupt RFCW1 file: {exc}") from exc
        return cls(tensors)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "NetWeights":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise MediaIOError(f"cannot read {path}: {exc}") from exc
        return cls.from_bytes(data)


# --------------------------------------------------------------------------
# elementwise pieces

def prelu(x, a):
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, x, a * x)
    return float(out) if out.ndim == 0 else out


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    # ln(1 + e^x) written to stay finite for large |x|
    out = np.where(x > 20, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 20))))
    return float(out) if out.ndim == 0 else out


def inverse_softplus(y, floor=1e-6):
    """ln(e^y - 1), with y clamped to ``floor`` from below."""
    y = np.maximum(np.asarray(y, dtype=np.float64), floor)
    out = np.where(y > 20, y + np.log(-np.expm1(-y)), np.log(np.expm1(y)))
    return float(out) if out.ndim == 0 else out


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def sobel_gradients(p: np.ndarray):
    """Sobel responses (cross-correlation with SOBEL_X / SOBEL_Y, mirrored borders).

    Evaluated separably with the central difference taken first, so flat
    regions give exact zeros.
    """
    q = np.pad(np.asarray(p, dtype=np.float64), 1, mode="reflect")
    dx = q[:, 2:] - q[:, :-2]
    dy = q[2:, :] - q[:-2, :]
    gx = dx[:-2] + 2.0 * dx[1:-1] + dx[2:]
    gy = dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]
    return gx, gy


def conv2d_s2(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation, stride 2, zero padding 1. ``x`` is (C, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    cout, cin, kh, kw = weight.shape
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {cin}")
    _, h, w = x.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((cin, kh * kw, ho, wo))
    for ky in range(kh):
        for kx in range(kw):
            cols[:, ky * kw + kx] = xp[:, ky:ky + 2 * ho:2, kx:kx + 2 * wo:2]
    out = weight.reshape(cout, -1) @ cols.reshape(cin * kh * kw, ho * wo)
    out += np.asarray(bias, dtype=np.float64)[:, None]
    return out.reshape(cout, ho, wo)


def conv1x1(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    wmat = np.asarray(weight, dtype=np.float64).reshape(weight.shape[0], c)
    return (wmat @ x.reshape(c, -1) + np.asarray(bias, np.float64)[:, None]).reshape(-1, h, w)


# --------------------------------------------------------------------------
# parameter maps and knobs

@dataclass(frozen=True, eq=False)
class ParamMaps:
    sigma2_luma: np.ndarray      # 1/8 resolution, noise variance in [0,1]^2 units
    sigma2_chroma: np.ndarray
    sigmad_luma: tuple           # 3 planes, level k at ceil(dims / 2^k)
    sigmad_chroma: tuple
    sigmar_luma: tuple
    sigmar_chroma: tuple

    def all_planes(self):
        yield self.sigma2_luma
        yield self.sigma2_chroma
        for group in (self.sigmad_luma, self.sigmad_chroma, self.sigmar_luma, self.sigmar_chroma):
            yield from group

    @classmethod
    def constant(cls, shape, sigma2=0.0, sigmad=(1.5, 1.5, 2.0), sigmar=0.05, chroma=None) -> "ParamMaps":
        """Spatially uniform maps for a frame of ``shape``; ``chroma`` overrides as a dict."""
        chroma = chroma or {}
        h, w = shape
        s2 = (-(-h // 8), -(-w // 8))
        lv = [(-(-h // 2 ** k), -(-w // 2 ** k)) for k in range(N_LEVELS)]

        def pyr(val):
            vals = val if np.ndim(val) else [val] * N_LEVELS
            return tuple(np.full(s, float(v)) for s, v in zip(lv, vals))

        return cls(
            np.full(s2, float(sigma2)),
            np.full(s2, float(chroma.get("sigma2", sigma2))),
            pyr(sigmad), pyr(chroma.get("sigmad", sigmad)),
            pyr(sigmar), pyr(chroma.get("sigmar", sigmar)),
        )


KNOB_NAMES = ("sigma2_luma", "sigma2_chroma", "sigmad_luma", "sigmad_chroma", "sigmar_luma", "sigmar_chroma")
KNOB_MAX = 4.0


@dataclass(frozen=True)
class Knobs:
    k_sigma2_luma: float = 1.0
    k_sigma2_chroma: float = 1.0
    k_sigmad_luma: float = 1.0
    k_sigmad_chroma: float = 1.0
    k_sigmar_luma: float = 1.0
    k_sigmar_chroma: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not np.isfinite(v) or v < 0:
                raise InvariantError(f"knob {f.name} must be a finite non-negative number, got {v}")
            if v > KNOB_MAX:
                raise InvariantError(f"knob {f.name}={v} exceeds the maximum {KNOB_MAX}")
            object.__setattr__(self, f.name, v)

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))

    @classmethod
    def from_sequence(cls, values) -> "Knobs":
        values = list(values)
        if len(values) != 6:
            raise InvariantError(f"expected 6 knob values, got {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def parse(cls, text: str) -> "Knobs":
        try:
            values = [float(v) for v in text.split(",")]
        except ValueError as exc:
            raise InvariantError(f"malformed knob list {text!r}") from exc
        return cls.from_sequence(values)

    @classmethod
    def uniform(cls, temporal=1.0, spatial_d=1.0, spatial_r=1.0) -> "Knobs":
        return cls(temporal, temporal, spatial_d, spatial_d, spatial_r, spatial_r)


def apply_knobs(maps: ParamMaps, k: Knobs) -> ParamMaps:
    if not isinstance(k, Knobs):
        k = Knobs.from_sequence(k)
    return ParamMaps(
        maps.sigma2_luma * k.k_sigma2_luma,
        maps.sigma2_chroma * k.k_sigma2_chroma,
        tuple(p * k.k_sigmad_luma for p in maps.sigmad_luma),
        tuple(p * k.k_sigmad_chroma for p in maps.sigmad_chroma),
        tuple(p * k.k_sigmar_luma for p in maps.sigmar_luma),
        tuple(p * k.k_sigmar_chroma for p in maps.sigmar_chroma),
    )


# --------------------------------------------------------------------------
# network

MIN_NET_SIZE = 32


def chroma_energy(frame) -> np.ndarray:
    return (frame.cb - 0.5) ** 2 + (frame.cr - 0.5) ** 2


def assemble_net_input(aligned: AlignedSet) -> np.ndarray:
    """(25, H, W): 5 luma, 5 chroma energy, 10 Sobel (gx, gy per luma), 5 masks."""
    frames = aligned.frames
    lumas = [f.y for f in frames]
    chans = list(lumas)
    chans += [chroma_energy(f) for f in frames]
    for y in lumas:
        chans.extend(sobel_gradients(y))
    chans.append(np.ones(aligned.target.shape))
    chans.extend(aligned.masks)
    return np.stack(chans)


def run_trunk(x: np.ndarray, theta: NetWeights) -> np.ndarray:
    h = conv2d_s2(x, theta["conv1.weight"], theta["conv1.bias"])
    h = prelu(h, float(theta["prelu1"][0]))
    h = conv2d_s2(h, theta["conv2.weight"], theta["conv2.bias"])
    h = prelu(h, float(theta["prelu2"][0]))
    return conv2d_s2(h, theta["conv3.weight"], theta["conv3.bias"])


def _pyramid_from_head(maps8: np.ndarray, shape) -> tuple:
    h, w = shape
    out = []
    for k in range(N_LEVELS):
        lvl = (-(-h // 2 ** k), -(-w // 2 ** k))
        out.append(resample(maps8[k], lvl, 2 ** k / 8.0))
    return tuple(out)


def predict_param_maps(aligned: AlignedSet, theta: NetWeights) -> ParamMaps:
    shape = aligned.target.shape
    if min(shape) < MIN_NET_SIZE:
        raise InvariantError(f"parameter prediction needs frames of at least {MIN_NET_SIZE} px")
    feats = run_trunk(assemble_net_input(aligned), theta)
    heads = {n: softplus(conv1x1(feats, theta[f"{n}.weight"], theta[f"{n}.bias"])) for n in HEADS}
    return ParamMaps(
        heads["head_sigma2_luma"][0],
        heads["head_sigma2_chroma"][0],
        _pyramid_from_head(heads["head_sigmad_luma"], shape),
        _pyramid_from_head(heads["head_sigmad_chroma"], shape),
        _pyramid_from_head(heads["head_sigmar_luma"], shape),
        _pyramid_from_head(heads["head_sigmar_chroma"], shape),
    )


# --------------------------------------------------------------------------
# shipped defaults

DEFAULT_SIGMA = 0.02
DEFAULT_SIGMAD = (1.5, 1.5, 2.0)
THETA0_SEED = 20240


def build_default_theta0() -> NetWeights:
    """Deterministically regenerate the shipped default weights.

    The trunk is He-initialised from a fixed seed; head kernels are zero and
    head biases encode a generic mild-noise setting, so the untrained default
    yields spatially uniform maps until a profile delta is added.
    """
    base = NetWeights.random(THETA0_SEED, scale=np.sqrt(2.0))
    upd = {}
    for name, ch in HEADS.items():
        upd[f"{name}.weight"] = np.zeros((ch, WIDTH, 1, 1), np.float32)
    upd["prelu1"] = np.array([0.25], np.float32)
    upd["prelu2"] = np.array([0.25], np.float32)
    s2 = inverse_softplus(DEFAULT_SIGMA ** 2)
    sr = inverse_softplus(2 * DEFAULT_SIGMA)
    upd["head_sigma2_luma.bias"] = np.array([s2], np.float32)
    upd["head_sigma2_chroma.bias"] = np.array([s2], np.float32)
    upd["head_sigmar_luma.bias"] = np.full(N_LEVELS, sr, np.float32)
    upd["head_sigmar_chroma.bias"] = np.full(N_LEVELS, sr, np.float32)
    sd = inverse_softplus(np.array(DEFAULT_SIGMAD))
    upd["head_sigmad_luma.bias"] = sd.astype(np.float32)
    upd["head_sigmad_chroma.bias"] = sd.astype(np.float32)
    return NetWeights(OrderedDict((k, upd.get(k, v)) for k, v in base.items()))


THETA0_PATH = Path(__file__).with_name("assets") / "theta0.rfcw"


def default_theta0() -> NetWeights:
    return NetWeights.load(THETA0_PATH)
