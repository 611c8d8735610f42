import numpy as np
import pytest
from hypothesis import settings

from brainalign.data import (
    CATEGORIES,
    ActivationStore,
    ActivationTensor,
    StimulusCatalog,
    StimulusEntry,
)

settings.register_profile("suite", max_examples=25, deadline=None)
settings.load_profile("suite")


def make_catalog(n: int) -> StimulusCatalog:
    entries = tuple(
        StimulusEntry(stimulus_id=f"s{i:03d}", category=CATEGORIES[i % len(CATEGORIES)],
                      duration_s=2.0)
        for i in range(n)
    )
    return StimulusCatalog(entries=entries)


def make_store(model_id: str, layer_mats: dict[int, np.ndarray]) -> ActivationStore:
    tensors = tuple(
        ActivationTensor(model_id, lid, np.asarray(layer_mats[lid], dtype=float))
        for lid in sorted(layer_mats)
    )
    return ActivationStore(model_id, tensors)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
