import json
import wave

import numpy as np
import pytest

CATEGORIES = (
    "mechanical_sounds", "human_vocalizations", "human_non_vocal_sounds",
    "english_speech", "non_english_speech", "environmental_sound", "music",
    "animal_vocalizations", "animal_non_vocal_sounds", "song", "nature_sounds",
)


def write_wav(path, samples, sr):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sr)
        data = np.clip(np.asarray(samples), -1, 1)
        fh.writeframes((data * 32767).astype("<i2").tobytes())


def write_toy_checkpoint(path, in_dim, dims, seed=0):
    rng = np.random.default_rng(seed)
    arrays = {"frame_length": np.array(in_dim), "hop_length": np.array(in_dim // 2)}
    prev = in_dim
    for i, d in enumerate(dims):
        arrays[f"W{i}"] = 0.3 * rng.standard_normal((prev, d))
        arrays[f"b{i}"] = 0.05 * rng.standard_normal(d)
        prev = d
    np.savez(path, **arrays)
    return path


@pytest.fixture
def toy_setup(tmp_path):
    """Catalog of 3 stimuli (one duplicated), a 2-layer checkpoint, a registry."""
    sr = 8000
    rng = np.random.default_rng(7)
    tone = 0.4 * np.sin(2 * np.pi * 330 * np.arange(sr) / sr)
    noise = 0.2 * rng.standard_normal(sr)
    write_wav(tmp_path / "a.wav", tone, sr)
    write_wav(tmp_path / "b.wav", noise, sr)
    catalog = {
        "entries": [
            {"stimulus_id": "s0", "category": CATEGORIES[0], "audio_path": "a.wav",
             "duration_s": 1.0},
            {"stimulus_id": "s1", "category": CATEGORIES[1], "audio_path": "b.wav",
             "duration_s": 1.0},
            {"stimulus_id": "s2", "category": CATEGORIES[2], "audio_path": "a.wav",
             "duration_s": 1.0},
        ]
    }
    (tmp_path / "catalog.json").write_text(json.dumps(catalog))
    write_toy_checkpoint(tmp_path / "toy.npz", in_dim=64, dims=(12, 6))
    registry = [{
        "model_id": "toy",
        "checkpoint": "toy.npz",
        "input": "waveform",
        "sample_rate": sr,
        "pooling": "mean_over_time",
    }]
    (tmp_path / "models.json").write_text(json.dumps(registry))
    return tmp_path
