"""Spectro-temporal modulation baseline: cochlear envelope front end plus a
110-filter modulation bank.

The front end is an ERB-spaced bank of half-overlapping cosine filters applied
in the frequency domain; subband magnitudes (analytic-signal envelopes) are
power-law compressed and resampled to a common frame rate.  The modulation
stage convolves the resulting envelope with oriented 2-D Gabor kernels tuned
to (spectral scale, temporal rate) pairs, squares the output, and averages
over time within each frequency channel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal as ssig

from .errors import DataValidationError, DegenerateInputError

SCALES = (0.0625, 0.125, 0.25, 0.5, 1.0, 2.0)        # cycles/erb
RATES = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)  # Hz

# Gabor geometry: carrier cycles per Gaussian sigma, and the truncation radius.
_CYCLES_TIME = 0.35
_CYCLES_SPECTRAL = 0.5
_EXTENT_SIGMA = 2.5
_SPECTRAL_ONLY_SIGMA_T = _CYCLES_TIME / RATES[1]       # seconds (lowpass in time)
_TEMPORAL_ONLY_SIGMA_ERB = _CYCLES_SPECTRAL / SCALES[0]  # erb

DEFAULT_PAD_FREQ = 800
DEFAULT_PAD_TIME = 211


def erb_scale(freq_hz):
    """Frequency in Hz to position on the ERB-number scale."""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(freq_hz, dtype=float))


def erb_scale_inv(erb):
    return (np.power(10.0, np.asarray(erb, dtype=float) / 21.4) - 1.0) / 0.00437


# ---------------------------------------------------------------------------
# Waveform IO
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = self.samples
        if s.ndim != 1:
            raise DataValidationError("waveform must be mono 1-D")
        if self.sample_rate <= 0:
            raise DataValidationError("sample_rate must be positive")
        if not np.all(np.isfinite(s)):
            raise DataValidationError("waveform contains non-finite samples")
        if s.size and (s.min() < -1.0 or s.max() > 1.0):
            raise DataValidationError("waveform samples must lie in [-1, 1]")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file (16-bit PCM or 32-bit float), averaged to mono."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DataValidationError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise DataValidationError(f"{path}: truncated chunk {cid!r}")
        if cid == b"fmt ":
            if size < 16:
                raise DataValidationError(f"{path}: malformed fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise DataValidationError(f"{path}: missing fmt or data chunk")
    audio_format, n_channels, sample_rate, _, block_align, bits = fmt
    if n_channels < 1 or block_align == 0:
        raise DataValidationError(f"{path}: malformed channel layout")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload[:len(payload) - len(payload) % block_align], dtype="<i2")
        x = raw.astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        raw = np.frombuffer(payload[:len(payload) - len(payload) % block_align], dtype="<f4")
        x = raw.astype(np.float64)
    else:
        raise DataValidationError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits}); "
            "expected 16-bit PCM or 32-bit float"
        )
    if n_channels > 1:
        x = x[:(x.size // n_channels) * n_channels].reshape(-1, n_channels).mean(axis=1)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return Waveform(samples=np.ascontiguousarray(x), sample_rate=int(sample_rate))


# ---------------------------------------------------------------------------
# Cochlear envelope front end
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TFRepresentation:
    """Compressed subband envelope: channels x frames."""

    envelope: np.ndarray
    center_freqs: np.ndarray
    frame_rate: float

    def __post_init__(self):
        e = self.envelope
        if e.ndim != 2 or e.shape[0] < 2:
            raise DataValidationError("envelope must be F x T with F >= 2")
        if e.shape[0] != len(self.center_freqs):
            raise DataValidationError("one center frequency required per channel")
        if np.any(e < 0) or not np.all(np.isfinite(e)):
            raise DataValidationError("envelope must be finite and non-negative")
        if self.frame_rate <= 0:
            raise DataValidationError("frame_rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.envelope.shape[0]

    @property
    def erb_spacing(self) -> float:
        erbs = erb_scale(self.center_freqs)
        return float(np.mean(np.diff(erbs)))


def cochlear_envelope(w: Waveform, n_channels: int = 211, out_rate: float = 200.0,
                      f_lo: float = 50.0, f_hi: Optional[float] = None,
                      compression: float = 0.3) -> TFRepresentation:
    """Subband envelope via an ERB-spaced cosine filterbank.

    Each channel is a half-overlapping raised-cosine window on the ERB axis;
    the analytic signal of each subband gives the envelope, which is compressed
    by ``x**compression`` and polyphase-resampled to ``out_rate``.
    """
    if n_channels < 2:
        raise DataValidationError("need at least 2 channels")
    if w.duration_s < 0.05:
        raise DegenerateInputError(f"input too short ({w.duration_s * 1000:.1f} ms < 50 ms)")
    sr = w.sample_rate
    if f_hi is None:
        f_hi = 0.45 * sr
    x = w.samples
    n = x.size
    spectrum = np.fft.fft(x)
    freqs = np.fft.fftfreq(n, d=1.0 / sr)

    e_lo, e_hi = float(erb_scale(f_lo)), float(erb_scale(f_hi))
    centers_erb = np.linspace(e_lo, e_hi, n_channels)
    spacing = centers_erb[1] - centers_erb[0]
    center_freqs = erb_scale_inv(centers_erb)

    erb_abs = erb_scale(np.maximum(np.abs(freqs), 1e-6))
    # Analytic-signal multiplier: keep DC and Nyquist once, double the rest of
    # the positive half, zero the negative half.
    analytic = np.zeros(n)
    analytic[0] = 1.0
    if n % 2 == 0:
        analytic[1:n // 2] = 2.0
        analytic[n // 2] = 1.0
    else:
        analytic[1:(n + 1) // 2] = 2.0
    ratio = Fraction(out_rate).limit_denominator(10**6) / Fraction(sr)
    up, down = ratio.numerator, ratio.denominator

    rows = []
    for ci in range(n_channels):
        gain = np.cos(0.5 * np.pi * np.clip((erb_abs - centers_erb[ci]) / spacing, -1.0, 1.0))
        gain[np.abs(erb_abs - centers_erb[ci]) > spacing] = 0.0
        env = np.abs(np.fft.ifft(spectrum * gain * analytic))
        env = np.power(env, compression)
        env = ssig.resample_poly(env, up, down)
        rows.append(np.maximum(env, 0.0))
    return TFRepresentation(
        envelope=np.asarray(rows),
        center_freqs=np.asarray(center_freqs),
        frame_rate=float(out_rate),
    )


# ---------------------------------------------------------------------------
# Modulation filter bank
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModulationFilterSpec:
    kind: str                      # joint_up | joint_down | spectral_only | temporal_only
    scale: Optional[float] = None  # cycles/erb
    rate: Optional[float] = None   # Hz

    def __post_init__(self):
        if self.kind not in ("joint_up", "joint_down", "spectral_only", "temporal_only"):
            raise DataValidationError(f"unknown filter kind {self.kind!r}")
        if self.kind in ("joint_up", "joint_down", "spectral_only"):
            if self.scale not in SCALES:
                raise DataValidationError(f"scale {self.scale} not in ladder {SCALES}")
        elif self.scale is not None:
            raise DataValidationError("temporal_only filters carry no scale")
        if self.kind in ("joint_up", "joint_down", "temporal_only"):
            if self.rate not in RATES:
                raise DataValidationError(f"rate {self.rate} not in ladder {RATES}")
        elif self.rate is not None:
            raise DataValidationError("spectral_only filters carry no rate")


def default_modulation_bank() -> tuple[ModulationFilterSpec, ...]:
    """Canonical 110-filter bank: 96 joint (up and down), 6 spectral, 8 temporal."""
    bank = []
    for kind in ("joint_up", "joint_down"):
        for s in SCALES:
            for r in RATES:
                bank.append(ModulationFilterSpec(kind=kind, scale=s, rate=r))
    for s in SCALES:
        bank.append(ModulationFilterSpec(kind="spectral_only", scale=s))
    for r in RATES:
        bank.append(ModulationFilterSpec(kind="temporal_only", rate=r))
    assert len(bank) == 110
    return tuple(bank)


_KERNEL_CACHE: dict = {}


def modulation_kernel(spec: ModulationFilterSpec, erb_spacing: float,
                      frame_rate: float) -> np.ndarray:
    """Zero-mean, unit-energy 2-D Gabor kernel on the (channel, frame) grid.

    Upward filters carry ``cos(2*pi*(s*phi - r*t))`` so their passband matches
    ripples whose spectral peak drifts upward over time; downward filters use
    the opposite temporal sign.
    """
    key = (spec, round(erb_spacing, 12), round(frame_rate, 6))
    if key in _KERNEL_CACHE:
        return _KERNEL_CACHE[key]
    if spec.kind == "spectral_only":
        sigma_erb = _CYCLES_SPECTRAL / spec.scale
        sigma_t = _SPECTRAL_ONLY_SIGMA_T
    elif spec.kind == "temporal_only":
        sigma_erb = _TEMPORAL_ONLY_SIGMA_ERB
        sigma_t = _CYCLES_TIME / spec.rate
    else:
        sigma_erb = _CYCLES_SPECTRAL / spec.scale
        sigma_t = _CYCLES_TIME / spec.rate
    half_f = int(np.ceil(_EXTENT_SIGMA * sigma_erb / erb_spacing))
    half_t = int(np.ceil(_EXTENT_SIGMA * sigma_t * frame_rate))
    phi = np.arange(-half_f, half_f + 1) * erb_spacing      # erb offsets
    tau = np.arange(-half_t, half_t + 1) / frame_rate       # second offsets
    g_phi = np.exp(-phi ** 2 / (2 * sigma_erb ** 2))
    g_tau = np.exp(-tau ** 2 / (2 * sigma_t ** 2))

    # cos(2*pi*(a*phi + b*tau)) splits into separable cos/sin factors; each
    # carrier-bearing factor is made exactly zero-sum against its Gaussian so
    # the kernel rejects inputs that are constant along either axis.
    a = spec.scale if spec.kind != "temporal_only" else 0.0
    if spec.kind == "joint_up":
        b = -spec.rate
    elif spec.kind == "joint_down":
        b = spec.rate
    elif spec.kind == "temporal_only":
        b = spec.rate
    else:
        b = 0.0

    def _factors(grid, gauss, freq):
        if freq == 0.0:
            return gauss, np.zeros_like(gauss)
        fc = gauss * np.cos(2 * np.pi * freq * grid)
        fc = fc - (fc.sum() / gauss.sum()) * gauss
        fs = gauss * np.sin(2 * np.pi * freq * grid)
        return fc, fs

    uc, us = _factors(phi, g_phi, a)
    vc, vs = _factors(tau, g_tau, b)
    k = np.outer(uc, vc) - np.outer(us, vs)
    k = k / np.linalg.norm(k)
    _KERNEL_CACHE[key] = k
    return k


def modulation_feature_matrix(tf: TFRepresentation,
                              bank: Optional[Sequence[ModulationFilterSpec]] = None,
                              pad_freq: int = DEFAULT_PAD_FREQ,
                              pad_time: int = DEFAULT_PAD_TIME) -> np.ndarray:
    """Filter responses squared and time-averaged per channel: (n_filters, F).

    Convolution is linear (zero-padded); the pad arguments bound the admissible
    kernel footprint, mirroring an explicit zero-pad of the envelope.
    """
    bank = tuple(bank) if bank is not None else default_modulation_bank()
    env = tf.envelope
    F, T = env.shape
    d_erb = tf.erb_spacing
    out = np.empty((len(bank), F))
    for bi, spec in enumerate(bank):
        k = modulation_kernel(spec, d_erb, tf.frame_rate)
        if k.shape[0] > F + 2 * pad_freq or k.shape[1] > T + 2 * pad_time:
            raise DataValidationError(
                f"filter {spec} kernel {k.shape} exceeds padded input "
                f"({F + 2 * pad_freq}, {T + 2 * pad_time})"
            )
        conv = ssig.fftconvolve(env, k, mode="same")
        out[bi] = np.mean(conv * conv, axis=1)
    return out


def modulation_features(tf: TFRepresentation,
                        bank: Optional[Sequence[ModulationFilterSpec]] = None,
                        pad_freq: int = DEFAULT_PAD_FREQ,
                        pad_time: int = DEFAULT_PAD_TIME) -> np.ndarray:
    """Flattened (filter-major) modulation feature vector of length n_filters * F."""
    return modulation_feature_matrix(tf, bank, pad_freq, pad_time).ravel()


def extract_stm_matrix(catalog, base_dir=None, n_channels: int = 211,
                       out_rate: float = 200.0) -> np.ndarray:
    """Run the full baseline over a catalog's audio files: one feature row per stimulus."""
    base = Path(base_dir) if base_dir is not None else Path(".")
    rows = []
    for e in catalog.entries:
        if not e.audio_path:
            raise DataValidationError(f"{e.stimulus_id}: catalog entry has no audio_path")
        w = load_wav(base / e.audio_path)
        tf = cochlear_envelope(w, n_channels=n_channels, out_rate=out_rate)
        rows.append(modulation_features(tf))
    return np.asarray(rows)
