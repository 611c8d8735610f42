"""Model registry: which checkpoints to run and which layers to keep."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class ModelDescriptor:
    model_id: str
    checkpoint: Path
    input_kind: str = "waveform"            # waveform | spectrogram
    sample_rate: int = 16000
    layers: Optional[tuple[int, ...]] = None  # explicit 1-based list
    layer_policy: Optional[dict] = None       # {"kind", "stride", "start"}
    pooling: str = "mean_over_time"

    def __post_init__(self):
        if self.input_kind not in ("waveform", "spectrogram"):
            raise RegistryError(f"{self.model_id}: unknown input kind {self.input_kind!r}")
        if self.pooling != "mean_over_time":
            raise RegistryError(f"{self.model_id}: unsupported pooling {self.pooling!r}")
        if self.sample_rate <= 0:
            raise RegistryError(f"{self.model_id}: sample_rate must be positive")
        if self.layers is not None and self.layer_policy is not None:
            raise RegistryError(f"{self.model_id}: give either layers or layer_policy")


def resolve_layers(num_layers: int, descriptor: ModelDescriptor) -> list[int]:
    """Resolve the descriptor's layer list against the checkpoint's depth.

    Mirrors the analysis pipeline's subsampling semantics: an explicit list is
    validated; stride_with_final keeps start, start+stride, ... plus the final
    layer; the default keeps every layer.
    """
    if descriptor.layers is not None:
        layers = sorted(set(int(l) for l in descriptor.layers))
        bad = [l for l in layers if l < 1 or l > num_layers]
        if bad:
            raise RegistryError(
                f"{descriptor.model_id}: layers {bad} outside 1..{num_layers}")
        return layers
    policy = descriptor.layer_policy or {"kind": "all"}
    kind = policy.get("kind", "all")
    if kind == "all":
        return list(range(1, num_layers + 1))
    if kind != "stride_with_final":
        raise RegistryError(f"{descriptor.model_id}: unknown policy kind {kind!r}")
    stride = int(policy.get("stride", 1))
    start = int(policy.get("start", 1))
    if stride < 1 or start < 1:
        raise RegistryError(f"{descriptor.model_id}: stride and start must be >= 1")
    if start > num_layers:
        raise RegistryError(
            f"{descriptor.model_id}: policy start {start} exceeds depth {num_layers}")
    layers = list(range(start, num_layers + 1, stride))
    if layers[-1] != num_layers:
        layers.append(num_layers)
    return layers


def list_models(registry_path) -> list[ModelDescriptor]:
    """Parse the registry JSON into validated descriptors."""
    path = Path(registry_path)
    if not path.exists():
        raise RegistryError(f"registry not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RegistryError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, list):
        raise RegistryError(f"{path}: registry must be a JSON list")
    out = []
    for i, item in enumerate(raw):
        for key in ("model_id", "checkpoint"):
            if key not in item:
                raise RegistryError(f"{path}: entry {i} missing {key!r}")
        ckpt = path.parent / item["checkpoint"]
        if not ckpt.exists():
            raise RegistryError(f"{path}: entry {i} checkpoint missing: {ckpt}")
        out.append(ModelDescriptor(
            model_id=str(item["model_id"]),
            checkpoint=ckpt,
            input_kind=item.get("input", "waveform"),
            sample_rate=int(item.get("sample_rate", 16000)),
            layers=tuple(item["layers"]) if "layers" in item else None,
            layer_policy=item.get("layer_policy"),
            pooling=item.get("pooling", "mean_over_time"),
        ))
    return out
