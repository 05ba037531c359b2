"""3D multi-object tracking toolkit.

Box similarity (SRTs and exact rotated IoU), a labeled multi-Bernoulli
tracker with a coordinated-turn UKF, semantic voxelization of lidar scans,
CLEAR-MOT / AP evaluation, a synthetic scenario generator and KITTI I/O.
"""
__version__ = "0.1.0"

from .errors import (ConfigError, FormatError, InputError, NumericalError,  # noqa: E402
                     SemtrackError)
from .geometry import (DEFAULT_SRTS, OrientedBox3D, SrtsParams, rotated_iou_3d,  # noqa: E402
                       rotated_iou_3d_batch, srts, srts_batch, wrap_angle)
from .voxelizer import (Calibration, GridSpec, PointCloud, SemanticMap, VoxelGrid,  # noqa: E402
                        paint_semantics, project_to_image, voxelize)
from .kitti_io import AnnotatedObject, FrameAnnotations, read_labels, write_labels  # noqa: E402
from .tracker import (FilterConfig, LMBFilter, Measurement, Track,  # noqa: E402
                      cardinality_distribution, ct_transition)
from .simulation import Scenario, ScenarioConfig, simulate  # noqa: E402
from .evaluation import (MotReport, average_precision, cardinality_error,  # noqa: E402
                         clear_mot, point_count_filter)

__all__ = [
    "__version__", "SemtrackError", "InputError", "FormatError", "ConfigError",
    "NumericalError", "OrientedBox3D", "SrtsParams", "DEFAULT_SRTS", "srts", "srts_batch",
    "rotated_iou_3d", "rotated_iou_3d_batch", "wrap_angle", "PointCloud", "SemanticMap",
    "Calibration", "GridSpec", "VoxelGrid", "project_to_image", "paint_semantics",
    "voxelize", "AnnotatedObject", "FrameAnnotations", "read_labels", "write_labels",
    "FilterConfig", "LMBFilter", "Measurement", "Track", "ct_transition",
    "cardinality_distribution", "ScenarioConfig", "Scenario", "simulate", "MotReport",
    "clear_mot", "average_precision", "point_count_filter", "cardinality_error",
]
