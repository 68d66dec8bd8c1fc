"""Real-time pedestrian detection in RGB-D images.

Depth is back-projected into a point cloud, the ground plane is
estimated, points are labeled by height band, connected object regions
become candidate ROIs, and normalized depth templates of the upper body
are matched inside each ROI.  Detections with mid-range matching scores
can be re-checked by a color appearance model.
"""

from .config import (
    GeometryConfig,
    LabelingConfig,
    PipelineConfig,
    RoiConfig,
    load_config,
    save_config,
)
from .detector import Detection, MatchConfig, ScoreBand, detect
from .errors import PipelineError
from .evaluation import (
    EvalCurve,
    GroundTruthSet,
    GtBox,
    evaluate_detections,
    match_detections,
    sweep_soft_threshold,
    time_pipeline,
)
from .geometry import (
    CameraIntrinsics,
    DepthFrame,
    GroundPlane,
    PointCloud,
    backproject,
    fit_plane_ransac,
)
from .labeling import HeightBands, OccupancyGrid, StructureLabel, label_structure
from .pipeline import FramePipeline, FrameResult
from .roi import Roi, extract_rois
from .templates import (
    Annotation,
    DepthTemplate,
    TemplateSet,
    TemplateSetKind,
    WeightedTemplate,
    kmeans_cluster,
    load_template_set,
    normalize_annotation,
    save_template_set,
    select_k,
    silhouette_score,
    train_distance_set,
    train_orientation_set,
    train_single,
    train_weighted,
)
from .verifier import (
    LogisticScorer,
    VerifierConfig,
    load_scorer,
    save_scorer,
    train_logistic_scorer,
    verify_detections,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "CameraIntrinsics",
    "DepthFrame",
    "DepthTemplate",
    "Detection",
    "EvalCurve",
    "FramePipeline",
    "FrameResult",
    "GeometryConfig",
    "GroundPlane",
    "GroundTruthSet",
    "GtBox",
    "HeightBands",
    "LabelingConfig",
    "LogisticScorer",
    "MatchConfig",
    "OccupancyGrid",
    "PipelineConfig",
    "PipelineError",
    "PointCloud",
    "Roi",
    "RoiConfig",
    "ScoreBand",
    "StructureLabel",
    "TemplateSet",
    "TemplateSetKind",
    "VerifierConfig",
    "WeightedTemplate",
    "backproject",
    "detect",
    "evaluate_detections",
    "extract_rois",
    "fit_plane_ransac",
    "kmeans_cluster",
    "label_structure",
    "load_config",
    "load_scorer",
    "load_template_set",
    "match_detections",
    "normalize_annotation",
    "save_config",
    "save_scorer",
    "save_template_set",
    "select_k",
    "silhouette_score",
    "sweep_soft_threshold",
    "time_pipeline",
    "train_distance_set",
    "train_logistic_scorer",
    "train_orientation_set",
    "train_single",
    "train_weighted",
    "verify_detections",
]
