"""Canonical data types, manifest-driven ingestion, and alignment validation.

Every matrix in the pipeline is stored in the canonical stimulus order given
by the catalog; all loaders enforce row-count consistency against it.  On-disk
matrix containers are NPY v1.0 files holding 2-D little-endian float64 arrays
in C order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataValidationError, ManifestError

# Fixed 11-name category enumeration used to stratify the canonical stimulus set.
CATEGORIES = (
    "mechanical_sounds",
    "human_vocalizations",
    "human_non_vocal_sounds",
    "english_speech",
    "non_english_speech",
    "environmental_sound",
    "music",
    "animal_vocalizations",
    "animal_non_vocal_sounds",
    "song",
    "nature_sounds",
)

REGION_NAMES = ("primary", "anterior", "lateral", "posterior")

COMPONENT_NAMES = ("LF", "HF", "Broadband", "Pitch", "Speech", "Music")

CANONICAL_N_STIMULI = 165


# ---------------------------------------------------------------------------
# NPY matrix container
# ---------------------------------------------------------------------------

def save_matrix(path, matrix) -> None:
    """Write a 2-D array as little-endian float64, C-order, NPY v1.0."""
    arr = np.ascontiguousarray(np.asarray(matrix, dtype="<f8"))
    if arr.ndim != 2:
        raise DataValidationError(f"matrix container requires a 2-D array, got ndim={arr.ndim}")
    np.save(path, arr)


def load_matrix(path, *, require_finite: bool = True) -> np.ndarray:
    """Load a matrix container, enforcing the on-disk contract."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"matrix file not found: {path}")
    arr = np.load(path)
    if arr.ndim != 2:
        raise DataValidationError(f"{path}: expected 2-D matrix, got shape {arr.shape}")
    if arr.dtype != np.float64:
        raise DataValidationError(f"{path}: expected float64 payload, got {arr.dtype}")
    if require_finite and not np.all(np.isfinite(arr)):
        raise DataValidationError(f"{path}: matrix contains non-finite values")
    arr.flags.writeable = False
    return arr


def save_bool_vector(path, mask) -> None:
    arr = np.asarray(mask, dtype=bool)
    if arr.ndim != 1:
        raise DataValidationError(f"mask container requires a 1-D vector, got ndim={arr.ndim}")
    np.save(path, arr)


def load_bool_vector(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"mask file not found: {path}")
    arr = np.load(path)
    if arr.ndim != 1 or arr.dtype != np.bool_:
        raise DataValidationError(f"{path}: expected 1-D boolean vector, got {arr.dtype} {arr.shape}")
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StimulusEntry:
    stimulus_id: str
    category: str
    audio_path: Optional[str] = None
    duration_s: float = 2.0


@dataclass(frozen=True)
class StimulusCatalog:
    """Ordered stimulus list; the order is the canonical row order everywhere."""

    entries: tuple[StimulusEntry, ...]

    def __post_init__(self):
        seen = set()
        for i, e in enumerate(self.entries):
            if e.stimulus_id in seen:
                raise DataValidationError(f"duplicate stimulus_id {e.stimulus_id!r} at entry {i}")
            seen.add(e.stimulus_id)
            if e.category not in CATEGORIES:
                raise DataValidationError(
                    f"entry {i} ({e.stimulus_id!r}): unknown category {e.category!r}"
                )

    @property
    def n_stimuli(self) -> int:
        return len(self.entries)

    @property
    def stimulus_ids(self) -> list[str]:
        return [e.stimulus_id for e in self.entries]

    @property
    def categories(self) -> list[str]:
        return [e.category for e in self.entries]

    def index_of(self, stimulus_id: str) -> int:
        for i, e in enumerate(self.entries):
            if e.stimulus_id == stimulus_id:
                return i
        raise KeyError(stimulus_id)


def canonical_catalog(n_stimuli: int = CANONICAL_N_STIMULI, duration_s: float = 2.0) -> StimulusCatalog:
    """Synthetic catalog with categories dealt evenly over the fixed 11 names."""
    entries = []
    for i in range(n_stimuli):
        entries.append(
            StimulusEntry(
                stimulus_id=f"stim_{i:03d}",
                category=CATEGORIES[i % len(CATEGORIES)],
                duration_s=duration_s,
            )
        )
    return StimulusCatalog(entries=tuple(entries))


def load_catalog(path) -> StimulusCatalog:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"catalog file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict) or "entries" not in raw:
        raise ManifestError(f"{path}: catalog must be an object with an 'entries' list")
    entries = []
    for i, item in enumerate(raw["entries"]):
        for key in ("stimulus_id", "category", "duration_s"):
            if key not in item:
                raise ManifestError(f"{path}: entries[{i}] missing field {key!r}")
        entries.append(
            StimulusEntry(
                stimulus_id=str(item["stimulus_id"]),
                category=str(item["category"]),
                audio_path=item.get("audio_path"),
                duration_s=float(item["duration_s"]),
            )
        )
    return StimulusCatalog(entries=tuple(entries))


def save_catalog(catalog: StimulusCatalog, path) -> None:
    payload = {
        "entries": [
            {
                "stimulus_id": e.stimulus_id,
                "category": e.category,
                **({"audio_path": e.audio_path} if e.audio_path else {}),
                "duration_s": e.duration_s,
            }
            for e in catalog.entries
        ]
    }
    Path(path).write_text(json.dumps(payload, indent=2))


@dataclass(frozen=True)
class LayerSelectionPolicy:
    """Which layers of a deep model enter the analysis.

    ``all`` keeps every layer; ``stride_with_final`` keeps ``start, start+stride, ...``
    (1-based) and always appends the final layer when the stride misses it.
    """

    kind: str = "all"
    stride: int = 1
    start: int = 1

    def __post_init__(self):
        if self.kind not in ("all", "stride_with_final"):
            raise DataValidationError(f"unknown layer policy kind {self.kind!r}")
        if self.stride < 1:
            raise DataValidationError("stride must be >= 1")
        if self.start < 1:
            raise DataValidationError("start must be >= 1 (layers are 1-based)")


def layer_subsample(num_layers: int, policy: LayerSelectionPolicy) -> list[int]:
    """Resolve a selection policy to a strictly increasing list of 1-based layers."""
    if num_layers < 1:
        raise DataValidationError("num_layers must be >= 1")
    if policy.kind == "all":
        return list(range(1, num_layers + 1))
    if policy.start > num_layers:
        raise DataValidationError(
            f"policy start {policy.start} exceeds layer count {num_layers}"
        )
    layers = list(range(policy.start, num_layers + 1, policy.stride))
    if layers[-1] != num_layers:
        layers.append(num_layers)
    return layers


@dataclass(frozen=True)
class ActivationTensor:
    """One layer's stimulus-by-dimension activation matrix."""

    model_id: str
    layer_id: int
    matrix: np.ndarray

    def __post_init__(self):
        if self.layer_id < 0:
            raise DataValidationError("layer_id must be >= 0")
        m = self.matrix
        if m.ndim != 2 or m.shape[1] < 1:
            raise DataValidationError(
                f"{self.model_id} layer {self.layer_id}: matrix must be N x D with D >= 1"
            )
        if not np.all(np.isfinite(m)):
            raise DataValidationError(
                f"{self.model_id} layer {self.layer_id}: non-finite activation values"
            )

    @property
    def n_stimuli(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class ActivationStore:
    """All retained layers of one model, in increasing layer order."""

    model_id: str
    layers: tuple[ActivationTensor, ...]
    policy: LayerSelectionPolicy = field(default_factory=LayerSelectionPolicy)

    def __post_init__(self):
        if not self.layers:
            raise DataValidationError(f"{self.model_id}: store has no layers")
        ids = [t.layer_id for t in self.layers]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise DataValidationError(f"{self.model_id}: layer_ids not strictly increasing: {ids}")
        ns = {t.n_stimuli for t in self.layers}
        if len(ns) != 1:
            raise DataValidationError(f"{self.model_id}: layers disagree on stimulus count: {ns}")

    @property
    def layer_ids(self) -> list[int]:
        return [t.layer_id for t in self.layers]

    @property
    def n_stimuli(self) -> int:
        return self.layers[0].n_stimuli

    def layer(self, layer_id: int) -> ActivationTensor:
        for t in self.layers:
            if t.layer_id == layer_id:
                return t
        raise KeyError(f"{self.model_id}: no layer {layer_id}")

    def subset(self, rows: np.ndarray) -> "ActivationStore":
        """Restrict every layer to the given stimulus rows (for fold slicing)."""
        tensors = tuple(
            ActivationTensor(t.model_id, t.layer_id, np.ascontiguousarray(t.matrix[rows]))
            for t in self.layers
        )
        return ActivationStore(self.model_id, tensors, self.policy)


@dataclass(frozen=True)
class ResponseMatrix:
    """Per-subject stimulus-by-voxel response matrix with optional region labels."""

    subject_id: str
    dataset_id: str
    matrix: np.ndarray
    region_labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[1] < 1:
            raise DataValidationError(
                f"{self.dataset_id}/{self.subject_id}: matrix must be N x V with V >= 1"
            )
        if not np.all(np.isfinite(m)):
            raise DataValidationError(
                f"{self.dataset_id}/{self.subject_id}: non-finite response values"
            )
        if self.region_labels is not None:
            if len(self.region_labels) != m.shape[1]:
                raise DataValidationError(
                    f"{self.dataset_id}/{self.subject_id}: {len(self.region_labels)} region "
                    f"labels for {m.shape[1]} voxels"
                )
            bad = sorted({r for r in self.region_labels if r not in REGION_NAMES})
            if bad:
                raise DataValidationError(
                    f"{self.dataset_id}/{self.subject_id}: unknown region labels {bad}"
                )

    @property
    def n_stimuli(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class ComponentMatrix:
    """Stimulus responses of the six canonical response components."""

    matrix: np.ndarray
    names: tuple[str, ...] = COMPONENT_NAMES

    def __post_init__(self):
        if self.names != COMPONENT_NAMES:
            raise DataValidationError(f"component names must be {COMPONENT_NAMES}")
        if self.matrix.ndim != 2 or self.matrix.shape[1] != 6:
            raise DataValidationError(
                f"component matrix must be N x 6, got {self.matrix.shape}"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise DataValidationError("component matrix contains non-finite values")

    @property
    def n_stimuli(self) -> int:
        return self.matrix.shape[0]


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationEntry:
    model_id: str
    layer_id: int
    path: Path


@dataclass(frozen=True)
class ResponseEntry:
    dataset_id: str
    subject_id: str
    path: Path
    regions_path: Optional[Path] = None


@dataclass(frozen=True)
class CheckpointEntry:
    model_id: str
    step: int
    paths: tuple[ActivationEntry, ...]


@dataclass(frozen=True)
class Manifest:
    """Validated index of every file the pipeline may load."""

    root: Path
    catalog_path: Path
    catalog: StimulusCatalog
    activations: tuple[ActivationEntry, ...]
    responses: tuple[ResponseEntry, ...]
    component_path: Optional[Path] = None
    checkpoints: tuple[CheckpointEntry, ...] = ()

    @property
    def model_ids(self) -> list[str]:
        out = []
        for e in self.activations:
            if e.model_id not in out:
                out.append(e.model_id)
        return out

    def activation_entries(self, model_id: str) -> list[ActivationEntry]:
        return [e for e in self.activations if e.model_id == model_id]

    def response_entries(self, dataset_id: Optional[str] = None) -> list[ResponseEntry]:
        return [e for e in self.responses if dataset_id is None or e.dataset_id == dataset_id]


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ManifestError(f"manifest field {where}.{key} is missing")
    return obj[key]


def _resolve(root: Path, rel: str, where: str) -> Path:
    p = (root / rel).resolve() if not Path(rel).is_absolute() else Path(rel)
    if not p.exists():
        raise ManifestError(f"{where}: referenced path does not exist: {p}")
    return p


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest JSON file.

    Relative paths are resolved against the manifest's own directory.  Raises
    ManifestError naming the offending field on any schema violation.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    root = path.parent

    catalog_path = _resolve(root, _require(raw, "catalog", "manifest"), "manifest.catalog")
    catalog = load_catalog(catalog_path)

    activations = []
    seen_pairs = set()
    for i, item in enumerate(raw.get("activations", [])):
        where = f"manifest.activations[{i}]"
        model_id = str(_require(item, "model_id", where))
        layer_id = _require(item, "layer_id", where)
        if not isinstance(layer_id, int) or layer_id < 0:
            raise ManifestError(f"{where}.layer_id must be a non-negative integer")
        key = (model_id, layer_id)
        if key in seen_pairs:
            raise ManifestError(f"{where}: duplicate (model_id, layer_id) pair {key}")
        seen_pairs.add(key)
        p = _resolve(root, str(_require(item, "path", where)), where)
        activations.append(ActivationEntry(model_id, layer_id, p))

    responses = []
    for i, item in enumerate(raw.get("responses", [])):
        where = f"manifest.responses[{i}]"
        dataset_id = str(_require(item, "dataset_id", where))
        subject_id = str(_require(item, "subject_id", where))
        p = _resolve(root, str(_require(item, "path", where)), where)
        regions_path = None
        if item.get("regions_path"):
            regions_path = _resolve(root, str(item["regions_path"]), f"{where}.regions_path")
        responses.append(ResponseEntry(dataset_id, subject_id, p, regions_path))

    component_path = None
    if raw.get("components"):
        component_path = _resolve(root, str(raw["components"]), "manifest.components")

    checkpoints = []
    for i, item in enumerate(raw.get("checkpoints", [])):
        where = f"manifest.checkpoints[{i}]"
        model_id = str(_require(item, "model_id", where))
        step = _require(item, "step", where)
        if not isinstance(step, int) or step < 0:
            raise ManifestError(f"{where}.step must be a non-negative integer")
        entry_paths = []
        seen_layers = set()
        for j, sub in enumerate(_require(item, "paths", where)):
            sub_where = f"{where}.paths[{j}]"
            layer_id = _require(sub, "layer_id", sub_where)
            if not isinstance(layer_id, int) or layer_id < 0:
                raise ManifestError(f"{sub_where}.layer_id must be a non-negative integer")
            if layer_id in seen_layers:
                raise ManifestError(f"{sub_where}: duplicate layer_id {layer_id} in checkpoint")
            seen_layers.add(layer_id)
            p = _resolve(root, str(_require(sub, "path", sub_where)), sub_where)
            entry_paths.append(ActivationEntry(model_id, layer_id, p))
        checkpoints.append(CheckpointEntry(model_id, step, tuple(entry_paths)))

    return Manifest(
        root=root,
        catalog_path=catalog_path,
        catalog=catalog,
        activations=tuple(activations),
        responses=tuple(responses),
        component_path=component_path,
        checkpoints=tuple(checkpoints),
    )


def load_activations(manifest: Manifest, model_id: str,
                     policy: Optional[LayerSelectionPolicy] = None) -> ActivationStore:
    """Load every activation tensor of one model, in layer order."""
    entries = manifest.activation_entries(model_id)
    if not entries:
        raise ManifestError(f"manifest has no activations for model {model_id!r}")
    entries = sorted(entries, key=lambda e: e.layer_id)
    n = manifest.catalog.n_stimuli
    tensors = []
    for e in entries:
        m = load_matrix(e.path)
        if m.shape[0] != n:
            raise DataValidationError(
                f"{e.path}: {m.shape[0]} rows but catalog has {n} stimuli"
            )
        tensors.append(ActivationTensor(model_id, e.layer_id, m))
    return ActivationStore(model_id, tuple(tensors), policy or LayerSelectionPolicy())


def load_responses(manifest: Manifest, dataset_id: str, subject_id: str) -> ResponseMatrix:
    """Load one subject's response matrix plus optional region labels."""
    matches = [
        e for e in manifest.responses
        if e.dataset_id == dataset_id and e.subject_id == subject_id
    ]
    if not matches:
        raise ManifestError(f"no response entry for {dataset_id}/{subject_id}")
    entry = matches[0]
    m = load_matrix(entry.path)
    if m.shape[0] != manifest.catalog.n_stimuli:
        raise DataValidationError(
            f"{entry.path}: {m.shape[0]} rows but catalog has {manifest.catalog.n_stimuli} stimuli"
        )
    regions = None
    if entry.regions_path is not None:
        raw = json.loads(Path(entry.regions_path).read_text())
        if not isinstance(raw, list):
            raise DataValidationError(f"{entry.regions_path}: region file must be a JSON list")
        regions = tuple(str(r) for r in raw)
    return ResponseMatrix(subject_id, dataset_id, m, regions)


def load_components(manifest: Manifest) -> ComponentMatrix:
    if manifest.component_path is None:
        raise ManifestError("manifest declares no component matrix")
    m = load_matrix(manifest.component_path)
    if m.shape[0] != manifest.catalog.n_stimuli:
        raise DataValidationError(
            f"{manifest.component_path}: {m.shape[0]} rows but catalog has "
            f"{manifest.catalog.n_stimuli} stimuli"
        )
    return ComponentMatrix(matrix=m)


def load_checkpoint_series(manifest: Manifest, model_id: str) -> list[tuple[int, ActivationStore]]:
    """Load (step, store) pairs for a pretraining checkpoint series, sorted by step."""
    entries = [c for c in manifest.checkpoints if c.model_id == model_id]
    if not entries:
        raise ManifestError(f"manifest has no checkpoints for model {model_id!r}")
    n = manifest.catalog.n_stimuli
    out = []
    for ck in sorted(entries, key=lambda c: c.step):
        tensors = []
        for e in sorted(ck.paths, key=lambda e: e.layer_id):
            m = load_matrix(e.path)
            if m.shape[0] != n:
                raise DataValidationError(
                    f"{e.path}: {m.shape[0]} rows but catalog has {n} stimuli"
                )
            tensors.append(ActivationTensor(model_id, e.layer_id, m))
        out.append((ck.step, ActivationStore(model_id, tuple(tensors))))
    layer_sets = {tuple(s.layer_ids) for _, s in out}
    if len(layer_sets) > 1:
        raise DataValidationError(
            f"checkpoint series for {model_id!r} has inconsistent layer sets: {layer_sets}"
        )
    return out
