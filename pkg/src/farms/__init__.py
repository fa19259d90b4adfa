"""farms: fixed-aspect-ratio matrix subsampling for heavy-tailed
eigenspectrum analysis of neural-network weights.

The package splits into a small set of layers:

- :mod:`farms.spectral` -- eigenvalue spectra, the Hill tail-index
  estimator, and Marchenko-Pastur reference curves.
- :mod:`farms.tensorio` -- checkpoint manifests and raw tensor loading.
- :mod:`farms.sampler` -- subsampling plans, pooled spectra, and
  per-layer / per-model analysis reports.
- :mod:`farms.allocators` -- alpha-driven learning-rate and sparsity
  assignment.
- :mod:`farms.bench` -- synthetic benchmarks: estimator validation,
  bias sweeps, and the teacher-student training experiment.
- :mod:`farms.estimators` -- scikit-learn style wrappers around the
  analysis and allocation pipelines.
- :mod:`farms.cli` -- the ``farms`` command-line entry point.

The most common flow is ``load_manifest`` -> ``analyze_model`` ->
``assign_learning_rates`` / ``assign_sparsities``.
"""

from .exceptions import (
    AllocationError,
    DegenerateSpectrumError,
    FarmsError,
    InfeasibleAllocationError,
    ManifestError,
    PlanError,
    SpectrumError,
    TensorDataError,
    TrainingDivergedError,
)
from .spectral import (
    ESD,
    HillConfig,
    concatenate_esds,
    esd_of_matrix,
    hill_alpha,
    ks_distance_to_mp,
    mp_atom_mass,
    mp_bulk_edges,
    mp_density,
)
from .tensorio import (
    LayerEntry,
    ModelManifest,
    WeightTensor,
    load_manifest,
    load_tensor,
    write_checkpoint,
)
from .sampler import (
    LayerReport,
    ModelReport,
    SubsampleConfig,
    SubsamplePlan,
    analyze_layer,
    analyze_model,
    farms_alpha_conv,
    farms_alpha_linear,
    farms_esd_linear,
    plan_subsamples,
    summarize_reports,
)
from .allocators import (
    AllocationEntry,
    AllocationResult,
    LRScheduleConfig,
    LSConfig,
    SparsityConfig,
    assign_learning_rates,
    assign_sparsities,
    select_layers,
)
from .bench import (
    CorrelationSummary,
    GaussianSpec,
    ToyExperimentConfig,
    alignment_correlation,
    bias_sweep,
    gen_gaussian,
    hill_validation,
    mp_comparison_data,
    pearson_correlation,
    teacher_student_run,
)
from .estimators import FarmsAnalyzer, LearningRateAllocator, SparsityAllocator

__version__ = "0.1.0"

__all__ = [
    "AllocationEntry",
    "AllocationResult",
    "AllocationError",
    "CorrelationSummary",
    "DegenerateSpectrumError",
    "ESD",
    "FarmsAnalyzer",
    "FarmsError",
    "GaussianSpec",
    "HillConfig",
    "InfeasibleAllocationError",
    "LRScheduleConfig",
    "LSConfig",
    "LayerEntry",
    "LayerReport",
    "LearningRateAllocator",
    "ManifestError",
    "ModelManifest",
    "ModelReport",
    "PlanError",
    "SparsityAllocator",
    "SparsityConfig",
    "SpectrumError",
    "SubsampleConfig",
    "SubsamplePlan",
    "TensorDataError",
    "ToyExperimentConfig",
    "TrainingDivergedError",
    "WeightTensor",
    "alignment_correlation",
    "analyze_layer",
    "analyze_model",
    "assign_learning_rates",
    "assign_sparsities",
    "bias_sweep",
    "concatenate_esds",
    "esd_of_matrix",
    "farms_alpha_conv",
    "farms_alpha_linear",
    "farms_esd_linear",
    "gen_gaussian",
    "hill_alpha",
    "hill_validation",
    "ks_distance_to_mp",
    "load_manifest",
    "load_tensor",
    "mp_atom_mass",
    "mp_bulk_edges",
    "mp_comparison_data",
    "mp_density",
    "pearson_correlation",
    "plan_subsamples",
    "select_layers",
    "summarize_reports",
    "teacher_student_run",
    "write_checkpoint",
    "__version__",
]
