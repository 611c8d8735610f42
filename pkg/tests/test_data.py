import json

import numpy as np
import pytest

from brainalign.data import (
    CATEGORIES,
    LayerSelectionPolicy,
    canonical_catalog,
    layer_subsample,
    load_activations,
    load_bool_vector,
    load_catalog,
    load_components,
    load_manifest,
    load_matrix,
    load_responses,
    save_bool_vector,
    save_catalog,
    save_matrix,
)
from brainalign.errors import DataValidationError, ManifestError

from conftest import make_catalog


def _write_manifest(tmp_path, payload, name="manifest.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


def _make_dataset(tmp_path, n=12, models=(("m1", (1,)),), subjects=(("NH2015", "sub01"),),
                  dims=4, voxels=5, components=False):
    catalog = make_catalog(n)
    save_catalog(catalog, tmp_path / "catalog.json")
    rng = np.random.default_rng(0)
    activations = []
    for model_id, layers in models:
        for lid in layers:
            rel = f"{model_id}_l{lid}.npy"
            save_matrix(tmp_path / rel, rng.standard_normal((n, dims)))
            activations.append({"model_id": model_id, "layer_id": lid, "path": rel})
    responses = []
    for ds, sid in subjects:
        rel = f"{ds}_{sid}.npy"
        save_matrix(tmp_path / rel, rng.standard_normal((n, voxels)))
        responses.append({"dataset_id": ds, "subject_id": sid, "path": rel})
    payload = {"catalog": "catalog.json", "activations": activations, "responses": responses}
    if components:
        save_matrix(tmp_path / "components.npy", rng.standard_normal((n, 6)))
        payload["components"] = "components.npy"
    return _write_manifest(tmp_path, payload)


class TestMatrixContainer:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        m = rng.standard_normal((7, 3))
        save_matrix(tmp_path / "m.npy", m)
        back = load_matrix(tmp_path / "m.npy")
        assert back.dtype == np.float64
        assert np.array_equal(back, m)
        # second write produces identical bytes
        save_matrix(tmp_path / "m2.npy", m)
        assert (tmp_path / "m.npy").read_bytes() == (tmp_path / "m2.npy").read_bytes()

    def test_header_contract(self, tmp_path, rng):
        save_matrix(tmp_path / "m.npy", rng.standard_normal((4, 2)))
        blob = (tmp_path / "m.npy").read_bytes()
        assert blob[:6] == b"\x93NUMPY"
        assert blob[6:8] == b"\x01\x00"  # format version 1.0
        assert b"<f8" in blob[:128]

    def test_rejects_non_finite(self, tmp_path):
        m = np.ones((3, 3))
        m[1, 1] = np.nan
        np.save(tmp_path / "bad.npy", m)
        with pytest.raises(DataValidationError, match="non-finite"):
            load_matrix(tmp_path / "bad.npy")

    def test_rejects_1d(self, tmp_path):
        np.save(tmp_path / "v.npy", np.ones(4))
        with pytest.raises(DataValidationError, match="2-D"):
            load_matrix(tmp_path / "v.npy")

    def test_bool_vector_round_trip(self, tmp_path):
        mask = np.array([True, False, True])
        save_bool_vector(tmp_path / "mask.npy", mask)
        assert np.array_equal(load_bool_vector(tmp_path / "mask.npy"), mask)


class TestCatalog:
    def test_duplicate_stimulus_id(self):
        cat = make_catalog(3)
        entries = list(cat.entries)
        entries.append(entries[0])
        with pytest.raises(DataValidationError, match="duplicate stimulus_id"):
            type(cat)(entries=tuple(entries))

    def test_unknown_category(self, tmp_path):
        save_catalog(make_catalog(2), tmp_path / "c.json")
        raw = json.loads((tmp_path / "c.json").read_text())
        raw["entries"][0]["category"] = "birdsong"
        (tmp_path / "c.json").write_text(json.dumps(raw))
        with pytest.raises(DataValidationError, match="unknown category"):
            load_catalog(tmp_path / "c.json")

    def test_canonical_is_balanced(self):
        cat = canonical_catalog(165)
        counts = {c: cat.categories.count(c) for c in CATEGORIES}
        assert set(counts.values()) == {15}


class TestManifest:
    def test_minimal_manifest(self, tmp_path):
        path = _make_dataset(tmp_path, n=6)
        m = load_manifest(path)
        assert len(m.activations) == 1
        assert len(m.responses) == 1
        assert m.catalog.n_stimuli == 6

    def test_duplicate_layer_entry(self, tmp_path):
        path = _make_dataset(tmp_path, n=6)
        raw = json.loads(path.read_text())
        raw["activations"].append(dict(raw["activations"][0]))
        path.write_text(json.dumps(raw))
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(path)

    def test_missing_file_reports_field(self, tmp_path):
        path = _make_dataset(tmp_path, n=6)
        raw = json.loads(path.read_text())
        raw["activations"][0]["path"] = "missing.npy"
        path.write_text(json.dumps(raw))
        with pytest.raises(ManifestError, match=r"activations\[0\]"):
            load_manifest(path)

    def test_missing_field_reports_path(self, tmp_path):
        path = _make_dataset(tmp_path, n=6)
        raw = json.loads(path.read_text())
        del raw["responses"][0]["subject_id"]
        path.write_text(json.dumps(raw))
        with pytest.raises(ManifestError, match=r"responses\[0\].subject_id"):
            load_manifest(path)

    def test_paper_shaped_manifest(self, tmp_path):
        # 36 models, 8 + 20 subjects -> 28 response entries.
        models = tuple((f"model{i:02d}", (1,)) for i in range(36))
        subjects = tuple(("NH2015", f"nh{i:02d}") for i in range(8)) \
            + tuple(("B2021", f"b{i:02d}") for i in range(20))
        path = _make_dataset(tmp_path, n=11, models=models, subjects=subjects)
        m = load_manifest(path)
        assert len(m.responses) == 28
        assert len(m.model_ids) == 36


class TestLoaders:
    def test_store_in_layer_order(self, tmp_path):
        path = _make_dataset(tmp_path, n=6, models=(("m1", (3, 1, 2)),))
        store = load_activations(load_manifest(path), "m1")
        assert store.layer_ids == [1, 2, 3]
        assert store.n_stimuli == 6

    def test_unknown_model(self, tmp_path):
        path = _make_dataset(tmp_path, n=6)
        with pytest.raises(ManifestError, match="no activations"):
            load_activations(load_manifest(path), "nope")

    def test_row_mismatch(self, tmp_path):
        path = _make_dataset(tmp_path, n=6)
        save_matrix(tmp_path / "m1_l1.npy", np.zeros((5, 4)) + 1.0)
        with pytest.raises(DataValidationError, match="catalog has 6"):
            load_activations(load_manifest(path), "m1")

    def test_thirteen_layer_store(self, tmp_path):
        path = _make_dataset(tmp_path, n=6, models=(("beats-like", tuple(range(13))),), dims=8)
        store = load_activations(load_manifest(path), "beats-like")
        assert len(store.layers) == 13

    def test_response_with_regions(self, tmp_path):
        path = _make_dataset(tmp_path, n=6, voxels=4)
        (tmp_path / "regions.json").write_text(json.dumps(
            ["primary", "primary", "lateral", "posterior"]))
        raw = json.loads(path.read_text())
        raw["responses"][0]["regions_path"] = "regions.json"
        path.write_text(json.dumps(raw))
        r = load_responses(load_manifest(path), "NH2015", "sub01")
        assert r.region_labels == ("primary", "primary", "lateral", "posterior")

    def test_response_nan_rejected(self, tmp_path):
        path = _make_dataset(tmp_path, n=6, voxels=1)
        bad = np.zeros((6, 1))
        bad[2, 0] = np.inf
        np.save(tmp_path / "NH2015_sub01.npy", bad)
        with pytest.raises(DataValidationError, match="non-finite"):
            load_responses(load_manifest(path), "NH2015", "sub01")

    def test_single_voxel_ok(self, tmp_path):
        path = _make_dataset(tmp_path, n=6, voxels=1)
        r = load_responses(load_manifest(path), "NH2015", "sub01")
        assert r.matrix.shape == (6, 1)

    def test_components(self, tmp_path):
        path = _make_dataset(tmp_path, n=6, components=True)
        comp = load_components(load_manifest(path))
        assert comp.matrix.shape == (6, 6)
        assert comp.names == ("LF", "HF", "Broadband", "Pitch", "Speech", "Music")


class TestLayerSubsample:
    def test_all(self):
        assert layer_subsample(12, LayerSelectionPolicy(kind="all")) == list(range(1, 13))

    def test_stride_with_final(self):
        policy = LayerSelectionPolicy(kind="stride_with_final", stride=2, start=1)
        assert layer_subsample(20, policy) == [1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 20]

    def test_stride_four(self):
        policy = LayerSelectionPolicy(kind="stride_with_final", stride=4, start=1)
        assert layer_subsample(32, policy) == [1, 5, 9, 13, 17, 21, 25, 29, 32]

    def test_single_layer(self):
        for policy in (LayerSelectionPolicy(kind="all"),
                       LayerSelectionPolicy(kind="stride_with_final", stride=3)):
            assert layer_subsample(1, policy) == [1]

    def test_final_not_duplicated(self):
        policy = LayerSelectionPolicy(kind="stride_with_final", stride=2, start=1)
        out = layer_subsample(19, policy)
        assert out == sorted(set(out))
        assert out[-1] == 19

    def test_start_beyond_depth(self):
        policy = LayerSelectionPolicy(kind="stride_with_final", stride=2, start=9)
        with pytest.raises(DataValidationError, match="start"):
            layer_subsample(4, policy)
