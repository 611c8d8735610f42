"""brainalign-extract: run audio model checkpoints over a stimulus catalog and
write activation files in the analysis pipeline's manifest/NPY formats."""

from .audio import load_wav, peak_normalize, resample_sinc
from .extract import extract
from .registry import ModelDescriptor, list_models, resolve_layers

__version__ = "0.1.0"
