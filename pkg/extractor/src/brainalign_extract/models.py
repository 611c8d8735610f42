"""Checkpoint loading and forward passes for small dense audio models.

Checkpoints are NPZ archives holding a framing config plus a stack of dense
layers ("W0"/"b0", "W1"/"b1", ...).  The waveform front end feeds raw frames;
the spectrogram front end feeds log magnitudes of Hann-windowed frames.
Inference is deterministic: no dropout, no sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .registry import RegistryError


@dataclass(frozen=True)
class ToyCheckpoint:
    frame_length: int
    hop_length: int
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def input_dim(self, input_kind: str) -> int:
        return self.frame_length if input_kind == "waveform" \
            else self.frame_length // 2 + 1


def load_checkpoint(path) -> ToyCheckpoint:
    path = Path(path)
    if not path.exists():
        raise RegistryError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        if "frame_length" not in data or "hop_length" not in data:
            raise RegistryError(f"{path}: checkpoint missing framing config")
        frame_length = int(data["frame_length"])
        hop_length = int(data["hop_length"])
        weights, biases = [], []
        i = 0
        while f"W{i}" in data:
            if f"b{i}" not in data:
                raise RegistryError(f"{path}: W{i} has no matching b{i}")
            weights.append(np.asarray(data[f"W{i}"], dtype=float))
            biases.append(np.asarray(data[f"b{i}"], dtype=float))
            i += 1
    if not weights:
        raise RegistryError(f"{path}: checkpoint has no layers")
    for li in range(1, len(weights)):
        if weights[li].shape[0] != weights[li - 1].shape[1]:
            raise RegistryError(f"{path}: layer {li} shape mismatch")
    return ToyCheckpoint(frame_length=frame_length, hop_length=hop_length,
                         weights=tuple(weights), biases=tuple(biases))


def frame_signal(x: np.ndarray, frame_length: int, hop_length: int) -> np.ndarray:
    if x.size < frame_length:
        x = np.pad(x, (0, frame_length - x.size))
    n_frames = 1 + (x.size - frame_length) // hop_length
    idx = np.arange(frame_length)[None, :] + hop_length * np.arange(n_frames)[:, None]
    return x[idx]


def forward_activations(ckpt: ToyCheckpoint, x: np.ndarray, input_kind: str
                        ) -> list[np.ndarray]:
    """Per-layer frame activations: a list of (n_frames, D_l) matrices."""
    frames = frame_signal(x, ckpt.frame_length, ckpt.hop_length)
    if input_kind == "spectrogram":
        window = np.hanning(ckpt.frame_length)
        h = np.log1p(np.abs(np.fft.rfft(frames * window, axis=1)))
    else:
        h = frames
    if h.shape[1] != ckpt.weights[0].shape[0]:
        raise RegistryError(
            f"front end emits {h.shape[1]} dims but layer 0 expects "
            f"{ckpt.weights[0].shape[0]}"
        )
    acts = []
    for W, b in zip(ckpt.weights, ckpt.biases):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    return acts
