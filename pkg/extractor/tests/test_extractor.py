import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from brainalign_extract.audio import load_wav, peak_normalize, resample_sinc
from brainalign_extract.cli import main
from brainalign_extract.extract import extract
from brainalign_extract.models import forward_activations, load_checkpoint
from brainalign_extract.registry import (
    ModelDescriptor,
    RegistryError,
    list_models,
    resolve_layers,
)

from conftest import write_toy_checkpoint, write_wav


class TestRegistry:
    def test_empty_registry(self, tmp_path):
        (tmp_path / "models.json").write_text("[]")
        assert list_models(tmp_path / "models.json") == []

    def test_thirteen_layer_listing(self, tmp_path):
        write_toy_checkpoint(tmp_path / "deep.npz", in_dim=32, dims=(8,) * 13)
        (tmp_path / "models.json").write_text(json.dumps([
            {"model_id": "deep", "checkpoint": "deep.npz"}]))
        (d,) = list_models(tmp_path / "models.json")
        ckpt = load_checkpoint(d.checkpoint)
        assert resolve_layers(ckpt.num_layers, d) == list(range(1, 14))

    def test_stride_policy_resolution(self, tmp_path):
        write_toy_checkpoint(tmp_path / "c.npz", in_dim=16, dims=(4,) * 20)
        d = ModelDescriptor(model_id="m", checkpoint=tmp_path / "c.npz",
                            layer_policy={"kind": "stride_with_final", "stride": 2,
                                          "start": 1})
        assert resolve_layers(20, d) == [1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 20]

    def test_malformed_registry(self, tmp_path):
        (tmp_path / "models.json").write_text("{\"not\": \"a list\"}")
        with pytest.raises(RegistryError, match="JSON list"):
            list_models(tmp_path / "models.json")

    def test_missing_checkpoint(self, tmp_path):
        (tmp_path / "models.json").write_text(json.dumps([
            {"model_id": "m", "checkpoint": "gone.npz"}]))
        with pytest.raises(RegistryError, match="checkpoint missing"):
            list_models(tmp_path / "models.json")

    def test_explicit_layers_validated(self, tmp_path):
        write_toy_checkpoint(tmp_path / "c.npz", in_dim=16, dims=(4, 4))
        d = ModelDescriptor(model_id="m", checkpoint=tmp_path / "c.npz", layers=(1, 5))
        with pytest.raises(RegistryError, match="outside"):
            resolve_layers(2, d)


class TestAudio:
    def test_resample_preserves_tone_frequency(self):
        sr_in, sr_out = 16000, 8000
        t = np.arange(sr_in) / sr_in
        x = np.sin(2 * np.pi * 440 * t)
        y = resample_sinc(x, sr_in, sr_out)
        assert y.size == sr_out
        spec = np.abs(np.fft.rfft(y * np.hanning(y.size)))
        freqs = np.fft.rfftfreq(y.size, 1 / sr_out)
        assert abs(freqs[np.argmax(spec)] - 440.0) < 2.0

    def test_resample_identity_when_rates_match(self):
        x = np.random.default_rng(0).standard_normal(500)
        assert np.array_equal(resample_sinc(x, 8000, 8000), x)

    def test_upsampling_length(self):
        x = np.zeros(100)
        assert resample_sinc(x, 8000, 16000).size == 200

    def test_peak_normalize(self):
        x = np.array([0.1, -0.5, 0.25])
        y = peak_normalize(x)
        assert np.max(np.abs(y)) == 1.0
        assert np.array_equal(peak_normalize(np.zeros(4)), np.zeros(4))

    def test_load_wav_round_trip(self, tmp_path):
        x = 0.5 * np.sin(2 * np.pi * 100 * np.arange(800) / 8000)
        write_wav(tmp_path / "t.wav", x, 8000)
        y, sr = load_wav(tmp_path / "t.wav")
        assert sr == 8000
        assert np.max(np.abs(y - x)) < 1e-3


class TestForwardPass:
    def test_activation_shapes(self, tmp_path):
        write_toy_checkpoint(tmp_path / "c.npz", in_dim=64, dims=(12, 6))
        ckpt = load_checkpoint(tmp_path / "c.npz")
        x = np.random.default_rng(0).standard_normal(800)
        acts = forward_activations(ckpt, x, "waveform")
        assert [a.shape[1] for a in acts] == [12, 6]
        assert acts[0].shape[0] == acts[1].shape[0] > 1

    def test_spectrogram_front_end(self, tmp_path):
        write_toy_checkpoint(tmp_path / "c.npz", in_dim=64, dims=(8,))
        # spectrogram input dim is frame_length//2 + 1 = 33, so rebuild to match
        write_toy_checkpoint(tmp_path / "c2.npz", in_dim=64, dims=(8,))
        with np.load(tmp_path / "c2.npz") as d:
            arrays = {k: d[k] for k in d.files}
        arrays["W0"] = arrays["W0"][:33]
        np.savez(tmp_path / "c2.npz", **arrays)
        ckpt = load_checkpoint(tmp_path / "c2.npz")
        acts = forward_activations(ckpt, np.random.default_rng(1).standard_normal(640),
                                   "spectrogram")
        assert acts[0].shape[1] == 8

    def test_determinism(self, tmp_path):
        write_toy_checkpoint(tmp_path / "c.npz", in_dim=64, dims=(12, 6))
        ckpt = load_checkpoint(tmp_path / "c.npz")
        x = np.random.default_rng(2).standard_normal(800)
        a1 = forward_activations(ckpt, x, "waveform")
        a2 = forward_activations(ckpt, x, "waveform")
        for m1, m2 in zip(a1, a2):
            assert np.array_equal(m1, m2)


def _parse_npy_header(path):
    blob = path.read_bytes()
    assert blob[:6] == b"\x93NUMPY"
    major, minor = blob[6], blob[7]
    (hlen,) = struct.unpack_from("<H", blob, 8)
    header = blob[10:10 + hlen].decode("latin1")
    return (major, minor), header


class TestExtract:
    def test_files_and_fragment(self, toy_setup):
        (descriptor,) = list_models(toy_setup / "models.json")
        fragment_path = extract(descriptor, toy_setup / "catalog.json",
                                toy_setup / "acts")
        fragment = json.loads(fragment_path.read_text())
        assert len(fragment["activations"]) == 2
        assert fragment["metadata"]["pooling"] == "mean_over_time"
        for entry in fragment["activations"]:
            mat = np.load(toy_setup / "acts" / entry["path"])
            assert mat.shape[0] == 3
            assert mat.dtype == np.float64
            assert np.all(np.isfinite(mat))

    def test_npy_contract(self, toy_setup):
        (descriptor,) = list_models(toy_setup / "models.json")
        extract(descriptor, toy_setup / "catalog.json", toy_setup / "acts")
        version, header = _parse_npy_header(toy_setup / "acts" / "toy_l1.npy")
        assert version == (1, 0)
        assert "'descr': '<f8'" in header
        assert "'fortran_order': False" in header

    def test_duplicate_stimulus_identical_rows(self, toy_setup):
        (descriptor,) = list_models(toy_setup / "models.json")
        extract(descriptor, toy_setup / "catalog.json", toy_setup / "acts")
        mat = np.load(toy_setup / "acts" / "toy_l2.npy")
        assert np.array_equal(mat[0], mat[2])  # s0 and s2 share a.wav
        assert not np.array_equal(mat[0], mat[1])

    def test_round_trip_bit_exact_and_byte_stable(self, toy_setup):
        (descriptor,) = list_models(toy_setup / "models.json")
        extract(descriptor, toy_setup / "catalog.json", toy_setup / "run1")
        extract(descriptor, toy_setup / "catalog.json", toy_setup / "run2")
        for lid in (1, 2):
            b1 = (toy_setup / "run1" / f"toy_l{lid}.npy").read_bytes()
            b2 = (toy_setup / "run2" / f"toy_l{lid}.npy").read_bytes()
            assert b1 == b2
            m1 = np.load(toy_setup / "run1" / f"toy_l{lid}.npy")
            m2 = np.load(toy_setup / "run2" / f"toy_l{lid}.npy")
            assert np.array_equal(m1, m2)
        f1 = (toy_setup / "run1" / "toy_fragment.json").read_text()
        f2 = (toy_setup / "run2" / "toy_fragment.json").read_text()
        assert json.loads(f1)["activations"] == json.loads(f2)["activations"]

    def test_cli_end_to_end(self, toy_setup, capsys):
        rc = main(["--registry", str(toy_setup / "models.json"),
                   "--catalog", str(toy_setup / "catalog.json"),
                   "--out-dir", str(toy_setup / "cli_out")])
        assert rc == 0
        assert (toy_setup / "cli_out" / "toy_l1.npy").exists()

    def test_cli_unknown_model(self, toy_setup, capsys):
        rc = main(["--registry", str(toy_setup / "models.json"),
                   "--catalog", str(toy_setup / "catalog.json"),
                   "--out-dir", str(toy_setup / "o"), "--model", "nope"])
        assert rc == 2


class TestConformanceWithAnalysisPipeline:
    """Outputs must pass the analysis package's own validation, consumed only
    through its command-line interface and file formats."""

    def test_fragment_validates_as_manifest(self, toy_setup):
        (descriptor,) = list_models(toy_setup / "models.json")
        fragment_path = extract(descriptor, toy_setup / "catalog.json",
                                toy_setup / "acts")
        fragment = json.loads(fragment_path.read_text())
        manifest = {
            "catalog": fragment["catalog"],
            "activations": fragment["activations"],
            "responses": [],
        }
        manifest_path = toy_setup / "acts" / "manifest.json"
        manifest_path.write_text(json.dumps(manifest))
        proc = subprocess.run(
            [sys.executable, "-m", "brainalign.cli", "validate",
             "--manifest", str(manifest_path)],
            capture_output=True, text=True,
        )
        if proc.returncode != 0 and "No module named" in proc.stderr:
            pytest.skip("analysis package not installed in this environment")
        assert proc.returncode == 0, proc.stderr
        assert "manifest OK" in proc.stdout
