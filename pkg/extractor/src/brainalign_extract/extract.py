"""Run a model over a stimulus catalog and write manifest-compatible outputs.

Activation files are NPY v1.0, float64, C order, one file per retained layer
with one row per catalog stimulus; a manifest fragment records the
(model_id, layer_id, path) entries plus the pooling used, ready to merge into
an analysis manifest.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .audio import load_wav, peak_normalize, resample_sinc
from .models import forward_activations, load_checkpoint
from .registry import ModelDescriptor, RegistryError, resolve_layers


def load_catalog_entries(catalog_path) -> list[dict]:
    path = Path(catalog_path)
    raw = json.loads(path.read_text())
    if not isinstance(raw, dict) or "entries" not in raw:
        raise RegistryError(f"{path}: catalog must carry an 'entries' list")
    entries = raw["entries"]
    for i, e in enumerate(entries):
        if "stimulus_id" not in e:
            raise RegistryError(f"{path}: entries[{i}] missing stimulus_id")
        if not e.get("audio_path"):
            raise RegistryError(
                f"{path}: entries[{i}] ({e['stimulus_id']}) has no audio_path")
    return entries


def extract(descriptor: ModelDescriptor, catalog_path, out_dir) -> Path:
    """Write one activation file per retained layer plus a manifest fragment.

    Returns the fragment path.  Time-varying activations are mean-pooled over
    frames, which is recorded in the fragment metadata.
    """
    ckpt = load_checkpoint(descriptor.checkpoint)
    layers = resolve_layers(ckpt.num_layers, descriptor)
    entries = load_catalog_entries(catalog_path)
    catalog_dir = Path(catalog_path).parent
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    pooled = {lid: [] for lid in layers}
    for e in entries:
        x, sr = load_wav(catalog_dir / e["audio_path"])
        x = peak_normalize(x)
        if sr != descriptor.sample_rate:
            x = resample_sinc(x, sr, descriptor.sample_rate)
        acts = forward_activations(ckpt, x, descriptor.input_kind)
        for lid in layers:
            vec = acts[lid - 1].mean(axis=0)
            if not np.all(np.isfinite(vec)):
                raise RegistryError(
                    f"{descriptor.model_id} layer {lid}: non-finite activations "
                    f"for stimulus {e['stimulus_id']}"
                )
            pooled[lid].append(vec)

    fragment_entries = []
    for lid in layers:
        matrix = np.ascontiguousarray(np.asarray(pooled[lid], dtype="<f8"))
        rel = f"{descriptor.model_id}_l{lid}.npy"
        np.save(out / rel, matrix)
        fragment_entries.append(
            {"model_id": descriptor.model_id, "layer_id": lid, "path": rel})

    fragment = {
        "catalog": str(Path(catalog_path).resolve()),
        "activations": fragment_entries,
        "metadata": {
            "pooling": descriptor.pooling,
            "input": descriptor.input_kind,
            "sample_rate": descriptor.sample_rate,
            "n_stimuli": len(entries),
        },
    }
    fragment_path = out / f"{descriptor.model_id}_fragment.json"
    fragment_path.write_text(json.dumps(fragment, indent=2, sort_keys=True))
    return fragment_path
