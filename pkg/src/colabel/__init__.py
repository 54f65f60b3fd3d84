"""Dense CRF video co-labeling with permutohedral filtering and P^n-Potts cliques."""

from .core import (
    LabelSet,
    MeanFieldConfig,
    SegmentationResult,
    ShapeError,
    VideoVolume,
    argmax_labels,
    unary_from_probabilities,
)
from .inference import init_q, max_q_delta, mean_field_step, mean_field_step_exact, run_inference
from .lattice import LatticeError, PermutohedralLattice, build_lattice, gaussian_filter_exact
from .lattice import filter as lattice_filter
from .metrics import (
    class_average_accuracy,
    global_accuracy,
    mean_iou,
    synthesize_scene,
    temporal_stability,
)
from .potentials import (
    DEFAULT_KERNELS,
    CooccurrenceModel,
    KernelSpec,
    PnPottsParams,
    estimate_cooccurrence,
)
from .superpixels import DEFAULT_MEANSHIFT, CliqueLayerSet, MeanShiftParams, build_clique_layers, meanshift_segment

__version__ = "0.1.0"
