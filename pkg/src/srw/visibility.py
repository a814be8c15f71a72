"""Per-view visible-segment extraction with plane-polygon occlusion.

Each scene line is tracked as a set of parameter intervals along the 3D
segment. A view first clips the line to the camera frustum, then folds over
the occluder regions: every region splits each interval at the region's
supporting plane and erases the parts of the behind piece whose central
projection onto the plane lands inside the region. Surviving intervals are
projected to pixels; endpoints at the original 3D junctions are labeled
proper, endpoints created by clipping or occlusion are labeled false.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .doors import DoorState, DoorStateReport
from .geometry import (
    DEFAULT_TOLERANCES,
    Intrinsics,
    Tolerances,
    plane_basis,
    points_in_loop,
    points_on_loop,
    to_plane_frame,
)
from .ingest import CameraView
from .model import JunctionLabel, LineLabel, PlaneLabel, PlaneParams, SceneGraph, line_label_for


@dataclass(frozen=True)
class ParamInterval:
    """Sub-interval of a scene line, parameterized 0 at endpoint 1, 1 at endpoint 2."""

    line_id: int
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Segment2D:
    """Visible piece of one scene line in pixel coordinates."""

    endpoints: np.ndarray  # (2, 2) px
    label: LineLabel
    endpoint_labels: tuple[JunctionLabel, JunctionLabel]
    source_line: int

    def __post_init__(self):
        pts = np.array(self.endpoints, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "endpoints", pts)


@dataclass(frozen=True)
class ViewJunction:
    position: np.ndarray  # (2,) px
    label: JunctionLabel

    def __post_init__(self):
        pos = np.array(self.position, dtype=float)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class ViewSegment:
    junctions: tuple[int, int]
    label: LineLabel


@dataclass(frozen=True)
class AnnotatedView:
    """Ground-truth wireframe of one view: labeled junctions plus segments."""

    view_id: str
    width: int
    height: int
    junctions: tuple[ViewJunction, ...]
    segments: tuple[ViewSegment, ...]


@dataclass(frozen=True)
class OccluderRegion:
    """World-frame occluding area of one structural plane.

    The region is the outer polygon minus its subtracted openings, expressed
    in the plane's own 2D frame. Closed doors stay part of the region (they
    occlude); open doors and windows are subtracted (see-through).
    """

    plane_id: int
    params: PlaneParams
    origin: np.ndarray  # (3,)
    e1: np.ndarray
    e2: np.ndarray
    outer: np.ndarray  # (N, 2) loop in frame coordinates
    openings: tuple[np.ndarray, ...]  # subtracted opening loops
    edges: np.ndarray  # (E, 4) all loop edges, for crossing tests
    bbox: tuple[float, float, float, float]  # umin, vmin, umax, vmax


def _loops_to_edges(loops) -> np.ndarray:
    chunks = []
    for loop in loops:
        nxt = np.roll(loop, -1, axis=0)
        chunks.append(np.hstack([loop, nxt]))
    return np.vstack(chunks)


def occluder_regions(
    scene: SceneGraph,
    door_states: list[DoorStateReport],
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> list[OccluderRegion]:
    """Occluding regions of all wall/floor/ceiling planes, sorted by plane id.

    Standalone door and window planes never occlude. Door openings are
    subtracted only when reported open; doors without a report stay opaque.
    """
    state_by_door = {r.door_id: r.state for r in door_states}
    regions = []
    structural = (PlaneLabel.WALL, PlaneLabel.FLOOR, PlaneLabel.CEILING)
    for plane in sorted(scene.planes, key=lambda p: p.plane_id):
        if plane.label not in structural:
            continue
        pts = scene.positions(plane.outer_boundary)
        origin = pts[0]
        e1, e2 = plane_basis(plane.params.normal)
        outer = to_plane_frame(pts, origin, e1, e2)
        holes = []
        for opening in plane.openings:
            if opening.kind == PlaneLabel.DOOR:
                if state_by_door.get(opening.door_id, DoorState.CLOSED) != DoorState.OPEN:
                    continue
            holes.append(to_plane_frame(scene.positions(opening.polygon), origin, e1, e2))
        edges = _loops_to_edges([outer, *holes])
        lo = outer.min(axis=0)
        hi = outer.max(axis=0)
        regions.append(
            OccluderRegion(
                plane_id=plane.plane_id,
                params=plane.params,
                origin=origin,
                e1=e1,
                e2=e2,
                outer=outer,
                openings=tuple(holes),
                edges=edges,
                bbox=(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])),
            )
        )
    return regions


def points_in_region(points, region: OccluderRegion, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Containment in outer-minus-openings, closed along the outer boundary
    and open along opening boundaries (an opening rim does not occlude)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    eps = tol.eps_plane_mm
    covered = points_in_loop(pts, region.outer) | points_on_loop(pts, region.outer, eps)
    for hole in region.openings:
        covered &= ~(points_in_loop(pts, hole) | points_on_loop(pts, hole, eps))
    return covered


def clip_to_frustum(
    p1,
    p2,
    k: Intrinsics,
    width: int,
    height: int,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[float, float] | None:
    """Maximal parameter interval of the camera-frame segment p1->p2 that is
    in front of the near plane and projects inside [0, width] x [0, height].

    Clipping runs against five half-spaces through the camera center (near
    plane plus the four image-boundary planes), so the result is one interval
    or nothing.
    """
    x1, y1, z1 = float(p1[0]), float(p1[1]), float(p1[2])
    x2, y2, z2 = float(p2[0]), float(p2[1]), float(p2[2])
    # Half-space values g(p) >= 0; g is affine along the segment.
    constraints = (
        (z1 - tol.z_min_mm, z2 - tol.z_min_mm),
        (k.fx * x1 + k.cx * z1, k.fx * x2 + k.cx * z2),
        (-k.fx * x1 + (width - k.cx) * z1, -k.fx * x2 + (width - k.cx) * z2),
        (k.fy * y1 + k.cy * z1, k.fy * y2 + k.cy * z2),
        (-k.fy * y1 + (height - k.cy) * z1, -k.fy * y2 + (height - k.cy) * z2),
    )
    lo, hi = 0.0, 1.0
    for g1, g2 in constraints:
        if g1 < 0.0 and g2 < 0.0:
            return None
        if g1 < 0.0:
            lo = max(lo, g1 / (g1 - g2))
        elif g2 < 0.0:
            hi = min(hi, g1 / (g1 - g2))
        if hi - lo < tol.eps_param:
            return None
    return lo, hi


def split_by_plane(
    interval: tuple[float, float],
    p1,
    p2,
    plane: PlaneParams,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[list[tuple[float, float]], list[tuple[float, float]]]:
    """Split a parameter interval into (front, behind) parts w.r.t. a plane.

    A point is behind when the plane separates it from the camera at the
    origin, i.e. its signed plane distance has the opposite sign from the
    plane's offset. Intervals lying in the plane itself are returned as
    front: a plane never occludes its own lines. Rays parallel to the plane
    need no special casing since only signed distances are used.
    """
    lo, hi = interval
    nx, ny, nz = float(plane.normal[0]), float(plane.normal[1]), float(plane.normal[2])
    d = float(plane.offset)
    f1 = float(p1[0]) * nx + float(p1[1]) * ny + float(p1[2]) * nz + d
    f2 = float(p2[0]) * nx + float(p2[1]) * ny + float(p2[2]) * nz + d
    f_lo = f1 + lo * (f2 - f1)
    f_hi = f1 + hi * (f2 - f1)
    eps = tol.eps_plane_mm

    if abs(f_lo) <= eps and abs(f_hi) <= eps:
        return [interval], []
    # Work with h = f * sign(d): behind <=> h < -eps.
    sign = 1.0 if d > 0.0 else -1.0
    h_lo = f_lo * sign
    h_hi = f_hi * sign
    if h_lo >= -eps and h_hi >= -eps:
        return [interval], []
    if h_lo < -eps and h_hi < -eps:
        return [], [interval]
    # Mixed: split where the segment crosses the plane.
    t_star = lo + (hi - lo) * (h_lo / (h_lo - h_hi))
    t_star = min(max(t_star, lo), hi)
    if h_lo < -eps:
        behind, front = (lo, t_star), (t_star, hi)
    else:
        front, behind = (lo, t_star), (t_star, hi)
    fronts = [front] if front[1] - front[0] > 0.0 else []
    behinds = [behind] if behind[1] - behind[0] > 0.0 else []
    return fronts, behinds


def _segment_edge_crossings(a: np.ndarray, b: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Parameters s in [0, 1] where the 2D segment a->b crosses region edges."""
    d = b - a
    e1 = edges[:, 0:2]
    e2 = edges[:, 2:4]
    r = e2 - e1
    denom = d[0] * r[:, 1] - d[1] * r[:, 0]
    w = e1 - a
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[:, 0] * r[:, 1] - w[:, 1] * r[:, 0]) / denom
        u = (w[:, 0] * d[1] - w[:, 1] * d[0]) / denom
    slop = 1e-9
    valid = (np.abs(denom) > 0.0) & (s >= -slop) & (s <= 1.0 + slop) & (u >= -slop) & (u <= 1.0 + slop)
    return np.clip(s[valid], 0.0, 1.0)


def occlude_by_region(
    behind: tuple[float, float],
    p1,
    p2,
    region_params: PlaneParams,
    region: OccluderRegion,
    frame_origin: np.ndarray,
    frame_e1: np.ndarray,
    frame_e2: np.ndarray,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> list[tuple[float, float]]:
    """Uncovered (still visible) parts of an interval that is behind a region.

    The interval endpoints are pushed along their viewing rays onto the
    region's plane; the resulting 2D segment is cut at every edge crossing of
    the region, each elementary piece is classified by its midpoint, and the
    covered pieces are mapped back to segment parameters through the
    perspective-correct reparameterization between the segment and its
    projection.

    region_params and the frame vectors are camera-frame quantities; the 2D
    loops of `region` are frame coordinates and thus frame-independent.
    """
    lo, hi = behind
    p1 = np.asarray(p1, dtype=float)
    delta = np.asarray(p2, dtype=float) - p1
    p_lo = p1 + lo * delta
    p_hi = p1 + hi * delta
    n = region_params.normal
    d = float(region_params.offset)
    g_lo = float(p_lo @ n)
    g_hi = float(p_hi @ n)
    q_lo = (-d / g_lo) * p_lo
    q_hi = (-d / g_hi) * p_hi
    a2 = np.array([(q_lo - frame_origin) @ frame_e1, (q_lo - frame_origin) @ frame_e2])
    b2 = np.array([(q_hi - frame_origin) @ frame_e1, (q_hi - frame_origin) @ frame_e2])

    umin, vmin, umax, vmax = region.bbox
    if (
        max(a2[0], b2[0]) < umin
        or min(a2[0], b2[0]) > umax
        or max(a2[1], b2[1]) < vmin
        or min(a2[1], b2[1]) > vmax
    ):
        return [behind]

    def s_to_t(s: float) -> float:
        denom = s * g_lo + (1.0 - s) * g_hi
        tau = s * g_lo / denom
        return lo + tau * (hi - lo)

    if float(np.hypot(*(b2 - a2))) < 1e-12:
        covered = bool(points_in_region(a2[None, :], region, tol)[0])
        return [] if covered else [behind]

    cuts = np.concatenate([[0.0, 1.0], _segment_edge_crossings(a2, b2, region.edges)])
    cuts = np.unique(np.sort(cuts))
    mids = (cuts[:-1] + cuts[1:]) / 2.0
    mid_pts = a2[None, :] + mids[:, None] * (b2 - a2)[None, :]
    covered = points_in_region(mid_pts, region, tol)

    visible: list[tuple[float, float]] = []
    for i, is_covered in enumerate(covered):
        if is_covered:
            continue
        t_a = s_to_t(float(cuts[i]))
        t_b = s_to_t(float(cuts[i + 1]))
        if visible and t_a - visible[-1][1] < tol.eps_param:
            visible[-1] = (visible[-1][0], t_b)
        else:
            visible.append((t_a, t_b))
    return [(a, b) for a, b in visible if b - a >= tol.eps_param]


def _merge_touching(intervals: list[tuple[float, float]], eps: float) -> list[tuple[float, float]]:
    if not intervals:
        return []
    intervals = sorted(intervals)
    merged = [intervals[0]]
    for lo, hi in intervals[1:]:
        if lo - merged[-1][1] < eps:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


@dataclass(frozen=True)
class _CameraRegion:
    """Per-view form of an occluder region (plane and frame in camera coords)."""

    region: OccluderRegion
    params: PlaneParams
    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    skip: bool  # camera in the plane, or region entirely behind the camera


def _camera_regions(regions, view: CameraView, tol: Tolerances) -> list[_CameraRegion]:
    r = view.rotation
    t = view.translation
    out = []
    for region in regions:
        n_cam = r @ region.params.normal
        origin_cam = r @ region.origin + t
        d_cam = -float(n_cam @ origin_cam)
        params_cam = PlaneParams(n_cam, d_cam)
        # Depth of the region's outer loop: u e1 + v e2 offsets from the origin.
        e1_cam = r @ region.e1
        e2_cam = r @ region.e2
        depths = origin_cam[2] + region.outer @ np.array([e1_cam[2], e2_cam[2]])
        skip = abs(d_cam) <= tol.eps_plane_mm or float(depths.max()) <= 0.0
        out.append(
            _CameraRegion(
                region=region,
                params=params_cam,
                origin=origin_cam,
                e1=e1_cam,
                e2=e2_cam,
                skip=skip,
            )
        )
    return out


def _visible_intervals(
    p1: np.ndarray,
    p2: np.ndarray,
    adjacent_planes: frozenset[int],
    cam_regions: list[_CameraRegion],
    k: Intrinsics,
    width: int,
    height: int,
    tol: Tolerances,
) -> list[tuple[float, float]]:
    clipped = clip_to_frustum(p1, p2, k, width, height, tol)
    if clipped is None:
        return []
    visible = [clipped]
    for cam_region in cam_regions:
        if cam_region.skip or cam_region.region.plane_id in adjacent_planes:
            continue
        nxt: list[tuple[float, float]] = []
        for interval in visible:
            front, behind = split_by_plane(interval, p1, p2, cam_region.params, tol)
            nxt.extend(f for f in front if f[1] - f[0] >= tol.eps_param)
            for piece in behind:
                nxt.extend(
                    occlude_by_region(
                        piece,
                        p1,
                        p2,
                        cam_region.params,
                        cam_region.region,
                        cam_region.origin,
                        cam_region.e1,
                        cam_region.e2,
                        tol,
                    )
                )
        visible = nxt
        if not visible:
            break
    return _merge_touching(visible, tol.eps_param)


def visible_intervals(
    scene: SceneGraph,
    view: CameraView,
    door_states: list[DoorStateReport],
    regions: list[OccluderRegion] | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> dict[int, list[ParamInterval]]:
    """Visible parameter intervals of every scene line in one view, keyed by
    line id; lines with nothing visible are absent."""
    if regions is None:
        regions = occluder_regions(scene, door_states, tol)
    cam_regions = _camera_regions(regions, view, tol)
    r = view.rotation
    t = view.translation
    out: dict[int, list[ParamInterval]] = {}
    for line in sorted(scene.lines, key=lambda l: l.id):
        p1 = r @ scene.junction_index[line.endpoints[0]].position + t
        p2 = r @ scene.junction_index[line.endpoints[1]].position + t
        intervals = _visible_intervals(
            p1, p2, line.adjacent_planes, cam_regions, view.intrinsics,
            view.width, view.height, tol,
        )
        if intervals:
            out[line.id] = [ParamInterval(line.id, lo, hi) for lo, hi in intervals]
    return out


def trace_segments(
    scene: SceneGraph,
    view: CameraView,
    regions: list[OccluderRegion],
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> list[Segment2D]:
    """Visible 2D segments of every scene line in one view.

    Lines are processed in id order and occluders folded in plane-id order so
    concurrent per-view runs are byte-reproducible.
    """
    cam_regions = _camera_regions(regions, view, tol)
    k = view.intrinsics
    r = view.rotation
    t = view.translation
    out: list[Segment2D] = []
    for line in sorted(scene.lines, key=lambda l: l.id):
        a = scene.junction_index[line.endpoints[0]].position
        b = scene.junction_index[line.endpoints[1]].position
        p1 = r @ a + t
        p2 = r @ b + t
        intervals = _visible_intervals(
            p1, p2, line.adjacent_planes, cam_regions, k, view.width, view.height, tol
        )
        if not intervals:
            continue
        label = line_label_for(line, scene)
        for lo, hi in intervals:
            pix = []
            for tau in (lo, hi):
                p = p1 + tau * (p2 - p1)
                pix.append(
                    (
                        min(max(k.fx * p[0] / p[2] + k.cx, 0.0), float(view.width)),
                        min(max(k.fy * p[1] / p[2] + k.cy, 0.0), float(view.height)),
                    )
                )
            if math.hypot(pix[1][0] - pix[0][0], pix[1][1] - pix[0][1]) < tol.eps_px:
                continue
            labels = tuple(
                JunctionLabel.PROPER
                if min(abs(tau), abs(1.0 - tau)) <= tol.eps_param
                else JunctionLabel.FALSE
                for tau in (lo, hi)
            )
            out.append(
                Segment2D(
                    endpoints=np.array(pix),
                    label=label,
                    endpoint_labels=labels,
                    source_line=line.id,
                )
            )
    return out


def assemble_view(
    view: CameraView, segments: list[Segment2D], tol: Tolerances = DEFAULT_TOLERANCES
) -> AnnotatedView:
    """Merge segment endpoints within eps_px into shared junctions.

    A merged junction is proper when any contributing endpoint is proper
    (some other line may genuinely end there). Segments whose endpoints
    collapse onto one junction are dropped.
    """
    positions: list[np.ndarray] = []
    labels: list[JunctionLabel] = []
    view_segments: list[ViewSegment] = []

    def junction_for(pt: np.ndarray, label: JunctionLabel) -> int:
        for idx, pos in enumerate(positions):
            if float(np.hypot(*(pos - pt))) < tol.eps_px:
                if label == JunctionLabel.PROPER:
                    labels[idx] = JunctionLabel.PROPER
                return idx
        positions.append(pt)
        labels.append(label)
        return len(positions) - 1

    for segment in segments:
        i = junction_for(segment.endpoints[0], segment.endpoint_labels[0])
        j = junction_for(segment.endpoints[1], segment.endpoint_labels[1])
        if i == j:
            continue
        view_segments.append(ViewSegment(junctions=(i, j), label=segment.label))

    junctions = tuple(ViewJunction(pos, lab) for pos, lab in zip(positions, labels))
    return AnnotatedView(
        view_id=view.view_id,
        width=view.width,
        height=view.height,
        junctions=junctions,
        segments=tuple(view_segments),
    )


def visible_segments(
    scene: SceneGraph,
    view: CameraView,
    door_states: list[DoorStateReport],
    regions: list[OccluderRegion] | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> AnnotatedView:
    """Ground-truth annotation of one view (the full per-view pipeline)."""
    if regions is None:
        regions = occluder_regions(scene, door_states, tol)
    return assemble_view(view, trace_segments(scene, view, regions, tol), tol)


def annotation_to_dict(view: AnnotatedView) -> dict:
    return {
        "view_id": view.view_id,
        "width": view.width,
        "height": view.height,
        "junctions": [
            {"xy": [float(j.position[0]), float(j.position[1])], "label": j.label.value}
            for j in view.junctions
        ],
        "segments": [
            {"junctions": list(s.junctions), "label": s.label.value} for s in view.segments
        ],
    }


def save_annotation(view: AnnotatedView, path) -> None:
    Path(path).write_text(
        json.dumps(annotation_to_dict(view), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_annotation(path) -> AnnotatedView:
    from .errors import ParseError

    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        junctions = tuple(
            ViewJunction(np.array(j["xy"], dtype=float), JunctionLabel(j["label"]))
            for j in raw["junctions"]
        )
        segments = tuple(
            ViewSegment((int(s["junctions"][0]), int(s["junctions"][1])), LineLabel(s["label"]))
            for s in raw["segments"]
        )
        return AnnotatedView(
            view_id=str(raw["view_id"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
            junctions=junctions,
            segments=segments,
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
