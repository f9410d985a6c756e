"""Knob-steerable video denoising: flow-aligned Wiener merge plus bilateral pyramid filtering."""

from .engine import EngineConfig, bench, denoise_clip, denoise_frame
from .errors import (CodecError, DenoiseError, EncoderUnavailableError, InvariantError, MediaIOError,
                     ShapeError)
from .media import Clip, Frame, read_y4m, write_y4m
from .paramnet import Knobs, ParamMaps
from .profiler import NoiseProfile, classical_profile

__version__ = "0.1.0"

__all__ = [
    "Clip", "CodecError", "DenoiseError", "EncoderUnavailableError", "EngineConfig", "Frame",
    "InvariantError", "Knobs", "MediaIOError", "NoiseProfile", "ParamMaps", "ShapeError", "bench",
    "classical_profile", "denoise_clip", "denoise_frame", "read_y4m", "write_y4m",
]
