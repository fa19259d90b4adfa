"""Exception hierarchy for the farms package."""


class FarmsError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(FarmsError):
    """A checkpoint manifest is missing, malformed, or violates the schema."""


class TensorDataError(FarmsError):
    """A tensor blob could not be decoded into a valid weight tensor."""


class SpectrumError(FarmsError):
    """An empirical spectrum could not be computed or is unusable."""


class DegenerateSpectrumError(SpectrumError):
    """The spectrum has no usable tail (too few eigenvalues above the
    floor, or the top-k eigenvalues all coincide with the reference)."""


class PlanError(FarmsError):
    """A subsampling plan could not be constructed for a matrix shape."""


class AllocationError(FarmsError):
    """A hyperparameter allocation could not be produced."""


class InfeasibleAllocationError(AllocationError):
    """The allocation constraints cannot be met after clamping."""


class TrainingDivergedError(FarmsError):
    """A synthetic training run produced a non-finite loss."""
