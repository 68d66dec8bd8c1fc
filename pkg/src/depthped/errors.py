"""Exception hierarchy for the detection pipeline.

Every error carries a stable ``code`` string so the CLI can emit
machine-parsable diagnostics (``[E_CODE] message`` on stderr) and map
failures to exit status 2 without string matching.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all recoverable pipeline errors."""

    code = "E_PIPELINE"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message


class InsufficientPoints(PipelineError):
    """Fewer points than the minimum required by a geometric fit."""

    code = "E_INSUFFICIENT_POINTS"


class DegenerateGeometry(PipelineError):
    """Sampled geometry never produced a usable hypothesis (e.g. collinear points)."""

    code = "E_DEGENERATE_GEOMETRY"


class TooSparse(PipelineError):
    """Not enough valid depth in the central reference patch of an annotation."""

    code = "E_TOO_SPARSE"


class EmptyTrainingSet(PipelineError):
    """Template training invoked with zero samples."""

    code = "E_EMPTY_TRAINING_SET"


class SingleSample(PipelineError):
    """Weighted training needs at least two samples to estimate spread."""

    code = "E_SINGLE_SAMPLE"


class TooFewSamples(PipelineError):
    """Clustering requested more clusters than there are samples."""

    code = "E_TOO_FEW_SAMPLES"


class DegenerateClustering(PipelineError):
    """Silhouette analysis needs at least two nonempty clusters."""

    code = "E_DEGENERATE_CLUSTERING"


class EmptyRange(PipelineError):
    """A distance range received fewer than two training samples."""

    code = "E_EMPTY_RANGE"


class EmptyRoi(PipelineError):
    """An ROI crop contains no valid depth."""

    code = "E_EMPTY_ROI"


class NoForeground(PipelineError):
    """No column of a prepared window contains a foreground pixel."""

    code = "E_NO_FOREGROUND"


class NoOverlap(PipelineError):
    """Template and window share no jointly valid pixel."""

    code = "E_NO_OVERLAP"


class MissingRgb(PipelineError):
    """Verification requested on a frame without an RGB image."""

    code = "E_MISSING_RGB"


class FrameMismatch(PipelineError):
    """Detections reference a frame id absent from the ground truth."""

    code = "E_FRAME_MISMATCH"


class NoGroundTruth(PipelineError):
    """Evaluation invoked with an empty ground-truth set."""

    code = "E_NO_GROUND_TRUTH"


class SceneSpecError(PipelineError):
    """Synthetic scene description is malformed or physically impossible."""

    code = "E_SCENE_SPEC"


class ConfigError(PipelineError):
    """Configuration file or value rejected by validation."""

    code = "E_CONFIG"


class FormatError(PipelineError):
    """On-disk artifact (frame, template container, JSONL) failed to parse."""

    code = "E_FORMAT"
