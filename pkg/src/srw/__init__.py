"""Semantic room-wireframe ground-truth generation and evaluation toolkit."""

from .doors import DoorState, DoorStateReport, door_closed_ratio, door_states, sample_polygon_uniform
from .errors import SrwError
from .geometry import (
    DEFAULT_TOLERANCES,
    Intrinsics,
    ResidualSummary,
    RigidTransform,
    Tolerances,
    fit_plane_dlt,
    from_homogeneous,
    point_plane_distance,
    project_to_pixels,
    residual_summary,
    transform_plane,
    transform_point,
)
from .ingest import (
    CameraView,
    FilterReason,
    SceneFilterReport,
    SemanticMask,
    filter_scene,
    load_label_map,
    load_mask,
    load_scene,
    load_view,
    save_scene,
    save_view,
)
from .metrics import average_precision, jap, line_nms, msap, sap, segment_sq_distance
from .model import (
    Junction3D,
    JunctionLabel,
    Line3D,
    LineLabel,
    PlaneLabel,
    PlaneParams,
    PlanePolygon,
    SceneGraph,
    line_label_for,
    line_label_from_planes,
)
from .visibility import (
    AnnotatedView,
    ParamInterval,
    Segment2D,
    clip_to_frustum,
    load_annotation,
    occlude_by_region,
    occluder_regions,
    save_annotation,
    split_by_plane,
    visible_intervals,
    visible_segments,
)
from .wireframe import (
    Graph,
    ScoredJunction,
    ScoredSegment,
    Wireframe2D,
    junction_graph,
    line_graph,
    match_to_junctions,
    to_nonsemantic,
)

__version__ = "0.1.0"
