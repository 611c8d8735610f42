import struct
import wave

import numpy as np
import pytest

from brainalign.errors import DataValidationError, DegenerateInputError
from brainalign.stm import (
    RATES,
    SCALES,
    ModulationFilterSpec,
    TFRepresentation,
    Waveform,
    cochlear_envelope,
    default_modulation_bank,
    erb_scale_inv,
    load_wav,
    modulation_feature_matrix,
    modulation_features,
)


def _write_pcm16(path, samples, sr, channels=1):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(sr)
        data = np.clip(samples, -1, 1)
        fh.writeframes((data * 32767).astype("<i2").tobytes())


def _write_float32(path, samples, sr):
    data = np.asarray(samples, dtype="<f4").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    fmt = struct.pack("<HHIIHH", 3, 1, sr, sr * 4, 4, 32)
    body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(header + body)


class TestLoadWav:
    def test_two_second_mono(self, tmp_path):
        sr = 16000
        t = np.arange(sr * 2) / sr
        _write_pcm16(tmp_path / "a.wav", 0.5 * np.sin(2 * np.pi * 440 * t), sr)
        w = load_wav(tmp_path / "a.wav")
        assert w.samples.size == 32000
        assert w.sample_rate == sr
        assert np.abs(w.samples).max() <= 1.0

    def test_stereo_channel_mean(self, tmp_path):
        sr = 8000
        left = np.full(100, 0.5)
        right = np.full(100, -0.1)
        inter = np.empty(200)
        inter[0::2] = left
        inter[1::2] = right
        _write_pcm16(tmp_path / "st.wav", inter, sr, channels=2)
        w = load_wav(tmp_path / "st.wav")
        assert w.samples.size == 100
        assert np.allclose(w.samples, 0.2, atol=1e-3)

    def test_float32_payload(self, tmp_path):
        sr = 8000
        x = 0.25 * np.sin(2 * np.pi * 100 * np.arange(800) / sr)
        _write_float32(tmp_path / "f.wav", x, sr)
        w = load_wav(tmp_path / "f.wav")
        assert np.allclose(w.samples, x, atol=1e-7)

    def test_unsupported_encoding(self, tmp_path):
        data = np.zeros(10, dtype="<i2").tobytes()
        header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
        fmt = struct.pack("<HHIIHH", 7, 1, 8000, 8000, 1, 8)  # mu-law
        body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
        body += b"data" + struct.pack("<I", len(data)) + data
        (tmp_path / "mu.wav").write_bytes(header + body)
        with pytest.raises(DataValidationError, match="unsupported encoding"):
            load_wav(tmp_path / "mu.wav")

    def test_truncated_file(self, tmp_path):
        sr = 8000
        _write_pcm16(tmp_path / "t.wav", np.zeros(100), sr)
        blob = (tmp_path / "t.wav").read_bytes()
        (tmp_path / "t.wav").write_bytes(blob[:60])
        with pytest.raises(DataValidationError, match="truncated"):
            load_wav(tmp_path / "t.wav")

    def test_catalog_durations(self, tmp_path):
        # Canonical clips are 2 s; loaded duration must agree with the catalog.
        sr = 16000
        _write_pcm16(tmp_path / "c.wav", np.zeros(sr * 2), sr)
        w = load_wav(tmp_path / "c.wav")
        assert w.duration_s == pytest.approx(2.0)


class TestCochlearEnvelope:
    def test_tone_concentrates_in_nearest_channel(self):
        sr = 16000
        t = np.arange(sr * 2) / sr
        w = Waveform(samples=0.5 * np.sin(2 * np.pi * 1000 * t), sample_rate=sr)
        tf = cochlear_envelope(w, n_channels=64, out_rate=200)
        energy = (tf.envelope ** 2).mean(axis=1)
        assert int(np.argmax(energy)) == int(np.argmin(np.abs(tf.center_freqs - 1000.0)))

    def test_silence_gives_zero_envelope(self):
        w = Waveform(samples=np.zeros(16000), sample_rate=16000)
        tf = cochlear_envelope(w, n_channels=32)
        assert tf.envelope.max() == 0.0

    def test_white_noise_no_dominant_channel(self):
        # Bound frozen from a 50-seed pilot run: max/median channel-energy
        # ratios stayed below 1.65; assert a 2.5 safety bound.
        for seed in range(3):
            x = np.clip(np.random.default_rng(seed).standard_normal(32000) * 0.2, -1, 1)
            tf = cochlear_envelope(Waveform(samples=x, sample_rate=16000), n_channels=64)
            energy = (tf.envelope ** 2).mean(axis=1)
            assert energy.max() / np.median(energy) < 2.5

    def test_frame_rate_and_shape(self):
        w = Waveform(samples=np.random.default_rng(0).uniform(-1, 1, 16000),
                     sample_rate=16000)
        tf = cochlear_envelope(w, n_channels=40, out_rate=200)
        assert tf.envelope.shape[0] == 40
        assert tf.envelope.shape[1] == pytest.approx(200, abs=1)
        assert tf.frame_rate == 200.0

    def test_too_short_input(self):
        w = Waveform(samples=np.zeros(400), sample_rate=16000)  # 25 ms
        with pytest.raises(DegenerateInputError, match="too short"):
            cochlear_envelope(w)


def _uniform_tf(env, d_erb=0.1, start=5.0, frame_rate=200.0):
    erbs = np.arange(env.shape[0]) * d_erb + start
    return TFRepresentation(envelope=env, center_freqs=erb_scale_inv(erbs),
                            frame_rate=frame_rate)


TEMPORAL_BANK = tuple(ModulationFilterSpec(kind="temporal_only", rate=r) for r in RATES)
SPECTRAL_BANK = tuple(ModulationFilterSpec(kind="spectral_only", scale=s) for s in SCALES)


class TestModulationBank:
    def test_bank_counts(self):
        bank = default_modulation_bank()
        kinds = [s.kind for s in bank]
        assert len(bank) == 110
        assert kinds.count("joint_up") == 48
        assert kinds.count("joint_down") == 48
        assert kinds.count("spectral_only") == 6
        assert kinds.count("temporal_only") == 8

    def test_feature_vector_length(self):
        env = np.abs(np.random.default_rng(0).standard_normal((24, 400))) * 0.1
        tf = _uniform_tf(env)
        feats = modulation_features(tf)
        assert feats.shape == (110 * 24,)

    def test_zero_envelope_zero_features(self):
        tf = _uniform_tf(np.zeros((24, 400)))
        assert np.all(modulation_features(tf) == 0.0)

    def test_am_tone_rate_argmax(self):
        # 8 Hz amplitude modulation in one channel; support long enough for
        # the slowest filter to fully overlap, so edge transients stay small.
        F, T, fr = 80, 1600, 200.0
        tt = np.arange(T) / fr
        env = np.zeros((F, T))
        env[40] = 1.0 + np.cos(2 * np.pi * 8.0 * tt)
        resp = modulation_feature_matrix(_uniform_tf(env), bank=TEMPORAL_BANK).sum(axis=1)
        assert TEMPORAL_BANK[int(np.argmax(resp))].rate == 8.0

    def test_static_ripple_scale_argmax(self):
        F, T = 400, 300
        erbs = np.arange(F) * 0.15 + 2.0
        env = np.tile((1.0 + np.cos(2 * np.pi * 1.0 * erbs))[:, None], (1, T))
        tf = TFRepresentation(envelope=env, center_freqs=erb_scale_inv(erbs),
                              frame_rate=200.0)
        resp = modulation_feature_matrix(tf, bank=SPECTRAL_BANK).sum(axis=1)
        assert SPECTRAL_BANK[int(np.argmax(resp))].scale == 1.0

    def test_time_reversal_swaps_direction(self):
        F, T, fr = 80, 400, 200.0
        erbs = np.arange(F) * 0.1 + 5.0
        tt = np.arange(T) / fr
        phase = 2 * np.pi * (0.5 * erbs[:, None] - 4.0 * tt[None, :])  # upward drift
        env = 1.0 + 0.8 * np.cos(phase)
        joint = tuple(s for s in default_modulation_bank() if s.kind.startswith("joint"))
        tf_fwd = TFRepresentation(envelope=env, center_freqs=erb_scale_inv(erbs),
                                  frame_rate=fr)
        tf_rev = TFRepresentation(envelope=env[:, ::-1].copy(),
                                  center_freqs=erb_scale_inv(erbs), frame_rate=fr)
        fwd = modulation_feature_matrix(tf_fwd, bank=joint).sum(axis=1)
        rev = modulation_feature_matrix(tf_rev, bank=joint).sum(axis=1)
        best_fwd = joint[int(np.argmax(fwd))]
        best_rev = joint[int(np.argmax(rev))]
        assert best_fwd.kind == "joint_up"
        assert best_rev.kind == "joint_down"
        assert (best_fwd.scale, best_fwd.rate) == (best_rev.scale, best_rev.rate) == (0.5, 4.0)

    def test_energy_scaling_is_quadratic(self):
        env = np.abs(np.random.default_rng(3).standard_normal((30, 400))) * 0.2
        tf1 = _uniform_tf(env)
        tf3 = _uniform_tf(3.0 * env)
        f1 = modulation_feature_matrix(tf1, bank=TEMPORAL_BANK)
        f3 = modulation_feature_matrix(tf3, bank=TEMPORAL_BANK)
        nz = f1 > 1e-15
        assert np.allclose(f3[nz] / f1[nz], 9.0, rtol=1e-9)

    def test_kernel_larger_than_padded_input(self):
        env = np.ones((24, 40)) * 0.1  # 0.2 s of frames
        tf = _uniform_tf(env)
        with pytest.raises(DataValidationError, match="exceeds padded input"):
            modulation_feature_matrix(tf, bank=TEMPORAL_BANK, pad_time=10)

    def test_spec_validation(self):
        with pytest.raises(DataValidationError):
            ModulationFilterSpec(kind="joint_up", scale=0.3, rate=8.0)
        with pytest.raises(DataValidationError):
            ModulationFilterSpec(kind="temporal_only", scale=1.0, rate=8.0)
        with pytest.raises(DataValidationError):
            ModulationFilterSpec(kind="spectral_only", scale=1.0, rate=8.0)
