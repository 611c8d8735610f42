"""brainalign: alignment analysis between audio-model activations and
auditory-cortex responses."""

from .data import (
    ActivationStore,
    ActivationTensor,
    ComponentMatrix,
    LayerSelectionPolicy,
    Manifest,
    ResponseMatrix,
    StimulusCatalog,
    layer_subsample,
    load_activations,
    load_manifest,
    load_responses,
)
from .errors import (
    BrainalignError,
    DataValidationError,
    DegenerateInputError,
    ManifestError,
    TrainingError,
)
from .preprocess import SessionPair, region_subset, select_voxels, session_consistency
from .ridge import (
    AlphaSchedule,
    FoldPlan,
    RidgeModel,
    VoxelScores,
    aggregate_scores,
    alpha_search,
    nested_cv_predict,
    regress_components,
    score_r2,
    solve_ridge,
    stratified_folds,
)
from .rsa import RDM, RsaResult, compare_rdms, compute_rdm, rsa_cv_layer, rsa_max_layer, spearman

__version__ = "0.1.0"
