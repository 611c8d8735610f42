"""Audio loading and resampling for model inference.

The resampler is a Kaiser-windowed sinc interpolator; stimuli are peak
normalized before inference so checkpoint activations do not depend on the
recording level.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class AudioError(ValueError):
    pass


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a RIFF/WAVE file (16-bit PCM or 32-bit float) as mono float64."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise AudioError(f"{path}: truncated chunk {cid!r}")
        if cid == b"fmt ":
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise AudioError(f"{path}: missing fmt or data chunk")
    audio_format, n_channels, sample_rate, _, block_align, bits = fmt
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload[:len(payload) - len(payload) % block_align], "<i2")
        x = raw.astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        raw = np.frombuffer(payload[:len(payload) - len(payload) % block_align], "<f4")
        x = raw.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported encoding (format={audio_format}, bits={bits})")
    if n_channels > 1:
        x = x[:(x.size // n_channels) * n_channels].reshape(-1, n_channels).mean(axis=1)
    return np.ascontiguousarray(x), int(sample_rate)


def peak_normalize(x: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        return x.copy()
    return x / peak


def resample_sinc(x: np.ndarray, sr_in: int, sr_out: int, half_width: int = 32,
                  beta: float = 8.0) -> np.ndarray:
    """Windowed-sinc resampling to an arbitrary target rate.

    Each output sample interpolates the input with a Kaiser-windowed sinc
    centered at the fractional source position; the kernel is lowpassed to the
    narrower of the two Nyquist limits.
    """
    x = np.asarray(x, dtype=float)
    if sr_in <= 0 or sr_out <= 0:
        raise AudioError("sample rates must be positive")
    if sr_in == sr_out or x.size == 0:
        return x.copy()
    ratio = sr_out / sr_in
    n_out = int(round(x.size * ratio))
    cutoff = min(1.0, ratio)  # relative to the input Nyquist
    positions = np.arange(n_out) / ratio
    base = np.floor(positions).astype(int)
    frac = positions - base
    offsets = np.arange(-half_width + 1, half_width + 1)
    idx = base[:, None] + offsets[None, :]
    valid = (idx >= 0) & (idx < x.size)
    t = offsets[None, :] - frac[:, None]
    kernel = cutoff * np.sinc(cutoff * t)
    w = t / half_width
    win = np.where(np.abs(w) <= 1.0, np.i0(beta * np.sqrt(np.maximum(0.0, 1 - w**2)))
                   / np.i0(beta), 0.0)
    kernel *= win
    samples = np.where(valid, x[np.clip(idx, 0, x.size - 1)], 0.0)
    return np.einsum("ij,ij->i", samples, kernel)
