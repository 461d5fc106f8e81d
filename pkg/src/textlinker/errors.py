"""Exception types shared across the pipeline."""


class InvalidSizeError(ValueError):
    """Canvas or pyramid dimensions that the layer grids cannot represent."""


class InconsistentLabelError(RuntimeError):
    """A cell labeled positive admits no groundtruth segment; labeling bug."""


class InvalidPredictionError(ValueError):
    """Prediction maps carry non-finite offset values."""


class ShapeMismatchError(ValueError):
    """Map shapes disagree with the layer pyramid or with each other."""


class TrainingDivergedError(RuntimeError):
    """The training loss stopped being finite."""


class DataFormatError(ValueError):
    """Malformed scene, tensor-map, or predictor file."""
