"""End-to-end drivers tying ingestion, preprocessing, engines, and reporting
together; used by the command-line interface and by full-pipeline tests."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import data as dm
from .errors import DataValidationError, ManifestError
from .preprocess import region_subset
from .probe import ProbeConfig, load_task, run_task
from .ridge import (
    AlphaSchedule,
    VoxelScores,
    aggregate_scores,
    nested_cv_predict_matrix,
    regress_components,
    score_r2,
    stratified_folds,
)
from .rsa import rsa_cv_layer, rsa_max_layer, rsa_trajectory
from .synth import SynthSpec, gen_aligned_pair, gen_components


def deterministic_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Map a pure function over items with results in input order.

    The outcome is independent of the worker count and of scheduling; with
    workers > 1 the calls run on a thread pool but are reassembled in order.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_voxelwise_regression(manifest: dm.Manifest, model_id: str, dataset_id: str,
                             subjects: Optional[Sequence[str]] = None, seed: int = 0,
                             sched: Optional[AlphaSchedule] = None,
                             region: Optional[str] = None) -> dict:
    """Nested-CV encoding scores for one model against one dataset's subjects.

    Returns full provenance: per-voxel scores and per-fold hyperparameter
    choices for every subject, plus the median/mean summary.
    """
    store = dm.load_activations(manifest, model_id)
    entries = manifest.response_entries(dataset_id)
    if not entries:
        raise ManifestError(f"no responses for dataset {dataset_id!r}")
    subject_ids = [e.subject_id for e in entries]
    if subjects is not None:
        missing = [s for s in subjects if s not in subject_ids]
        if missing:
            raise ManifestError(f"unknown subjects {missing} in dataset {dataset_id!r}")
        subject_ids = list(subjects)
    folds = stratified_folds(manifest.catalog, k=5, seed=seed)
    sched = sched or AlphaSchedule()

    per_subject = {}
    by_subject_scores = {}
    for sid in subject_ids:
        resp = dm.load_responses(manifest, dataset_id, sid)
        if region is not None:
            resp = region_subset(resp, region)
        preds, details = nested_cv_predict_matrix(store, resp.matrix, folds, sched)
        voxel_r2 = np.array([score_r2(resp.matrix[:, v], preds[:, v])
                             for v in range(resp.n_voxels)])
        by_subject_scores[sid] = voxel_r2
        per_subject[sid] = {
            "n_voxels": int(resp.n_voxels),
            "voxel_r2": voxel_r2.tolist(),
            "median_r2": float(np.median(voxel_r2)),
            "fold_layer_ids": details.fold_layer_ids.tolist(),
            "fold_alphas": details.fold_alphas.tolist(),
        }
    scores = VoxelScores(model_id=model_id, by_subject=by_subject_scores)
    return {
        "model_id": model_id,
        "dataset_id": dataset_id,
        "seed": seed,
        "k_folds": folds.k,
        "subjects": per_subject,
        "median_r2_by_subject": {s: per_subject[s]["median_r2"] for s in per_subject},
        "r2_m": aggregate_scores(scores),
    }


def run_component_regression(manifest: dm.Manifest, model_id: str, seed: int = 0,
                             sched: Optional[AlphaSchedule] = None) -> dict:
    store = dm.load_activations(manifest, model_id)
    components = dm.load_components(manifest)
    folds = stratified_folds(manifest.catalog, k=5, seed=seed)
    r2 = regress_components(store, components, folds, sched or AlphaSchedule())
    return {"model_id": model_id, "seed": seed, "component_r2": r2}


def run_rsa(manifest: dm.Manifest, model_id: str, dataset_id: str, method: str = "max",
            region: Optional[str] = None, seed: int = 0,
            export_rdm_dir=None) -> dict:
    store = dm.load_activations(manifest, model_id)
    entries = manifest.response_entries(dataset_id)
    if not entries:
        raise ManifestError(f"no responses for dataset {dataset_id!r}")
    responses = []
    for e in entries:
        resp = dm.load_responses(manifest, dataset_id, e.subject_id)
        if region is not None:
            resp = region_subset(resp, region)
        responses.append(resp)
    if method == "max":
        result = rsa_max_layer(store, responses)
    elif method == "cv":
        folds = stratified_folds(manifest.catalog, k=5, seed=seed)
        result = rsa_cv_layer(store, responses, folds)
    else:
        raise DataValidationError(f"unknown RSA method {method!r}; expected max or cv")
    if export_rdm_dir is not None:
        from .rsa import compute_rdm
        outdir = Path(export_rdm_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        for t in store.layers:
            dm.save_matrix(outdir / f"rdm_{model_id}_l{t.layer_id}.npy",
                           compute_rdm(t.matrix).matrix)
        for r in responses:
            dm.save_matrix(outdir / f"rdm_{dataset_id}_{r.subject_id}.npy",
                           compute_rdm(r.matrix).matrix)
    return {
        "model_id": model_id,
        "dataset_id": dataset_id,
        "method": result.method,
        "rho_m": result.rho_m,
        "best_layer": result.best_layer,
        "layer_ids": list(result.layer_ids),
        "subject_ids": list(result.subject_ids),
        "rho_by_layer_subject": np.asarray(result.rho_by_layer_subject).tolist(),
        "rho_per_subject": (None if result.rho_per_subject is None
                            else np.asarray(result.rho_per_subject).tolist()),
        "standard_error": result.standard_error,
    }


def run_rsa_trajectory(manifest: dm.Manifest, model_id: str, dataset_id: str,
                       layers: Optional[Sequence[int]] = None,
                       region: Optional[str] = None) -> list[dict]:
    series = dm.load_checkpoint_series(manifest, model_id)
    responses = []
    for e in manifest.response_entries(dataset_id):
        resp = dm.load_responses(manifest, dataset_id, e.subject_id)
        if region is not None:
            resp = region_subset(resp, region)
        responses.append(resp)
    return rsa_trajectory(series, responses, layers)


def run_probe_task(manifest: dm.Manifest, model_id: str, task_path,
                   cfg: Optional[ProbeConfig] = None) -> dict:
    store = dm.load_activations(manifest, model_id)
    task = load_task(task_path, manifest.catalog)
    metric = run_task(store, task, cfg)
    return {"model_id": model_id, "task": task.name, "kind": task.kind,
            "metric_name": task.metric, "metric": metric}


def write_synth_dataset(spec: SynthSpec, out_dir) -> Path:
    """Materialize a generated dataset as catalog + NPY files + manifest.

    Emits one activation file per layer for model 'synth', one response file
    per subject (dataset 'SYNTH'), a component matrix, and a probe task file;
    returns the manifest path.
    """
    out = Path(out_dir)
    (out / "activations").mkdir(parents=True, exist_ok=True)
    (out / "responses").mkdir(parents=True, exist_ok=True)
    store, responses, truth = gen_aligned_pair(spec)
    components = gen_components(spec, store)
    catalog = dm.canonical_catalog(spec.n_stimuli)
    dm.save_catalog(catalog, out / "catalog.json")

    activations = []
    for t in store.layers:
        rel = f"activations/synth_l{t.layer_id}.npy"
        dm.save_matrix(out / rel, t.matrix)
        activations.append({"model_id": "synth", "layer_id": t.layer_id, "path": rel})
    resp_entries = []
    for r in responses:
        rel = f"responses/{r.subject_id}.npy"
        dm.save_matrix(out / rel, r.matrix)
        resp_entries.append({"dataset_id": r.dataset_id, "subject_id": r.subject_id,
                             "path": rel})
    dm.save_matrix(out / "components.npy", components.matrix)

    rng = np.random.default_rng(spec.seed + 13)
    ids = catalog.stimulus_ids
    perm = rng.permutation(len(ids))
    n_tr = int(len(ids) * 0.6)
    n_va = int(len(ids) * 0.2)
    labels = {sid: catalog.entries[i].category for i, sid in enumerate(ids)}
    task = {
        "name": "category_probe",
        "kind": "multiclass",
        "metric": "accuracy",
        "labels": labels,
        "splits": {
            "train": [ids[i] for i in perm[:n_tr]],
            "valid": [ids[i] for i in perm[n_tr:n_tr + n_va]],
            "test": [ids[i] for i in perm[n_tr + n_va:]],
        },
    }
    (out / "task_category.json").write_text(json.dumps(task, indent=2))

    manifest = {
        "catalog": "catalog.json",
        "activations": activations,
        "responses": resp_entries,
        "components": "components.npy",
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    meta = {
        "expected_r2": truth.expected_r2,
        "signal_layer": spec.signal_layer,
        "snr": spec.snr,
        "seed": spec.seed,
    }
    (out / "ground_truth.json").write_text(json.dumps(meta, indent=2))
    return manifest_path


def validate_manifest_tree(path) -> dict:
    """Load everything a manifest references, returning a summary of what passed."""
    manifest = dm.load_manifest(path)
    summary = {
        "catalog_stimuli": manifest.catalog.n_stimuli,
        "models": {},
        "responses": [],
        "components": False,
        "checkpoints": {},
    }
    for model_id in manifest.model_ids:
        store = dm.load_activations(manifest, model_id)
        summary["models"][model_id] = {
            "layers": store.layer_ids,
            "dims": [t.dim for t in store.layers],
        }
    for e in manifest.responses:
        r = dm.load_responses(manifest, e.dataset_id, e.subject_id)
        summary["responses"].append(
            {"dataset_id": r.dataset_id, "subject_id": r.subject_id,
             "n_voxels": r.n_voxels,
             "regions": sorted(set(r.region_labels)) if r.region_labels else None}
        )
    if manifest.component_path is not None:
        dm.load_components(manifest)
        summary["components"] = True
    for ck in manifest.checkpoints:
        series = dm.load_checkpoint_series(manifest, ck.model_id)
        summary["checkpoints"][ck.model_id] = [s for s, _ in series]
    return summary
