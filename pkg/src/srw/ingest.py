"""Scene, camera-pose and semantic-mask loading plus scene quality filtering.

File formats (all JSON is UTF-8):

Scene file::

    {"scene_id": str,
     "junctions": [{"id": int, "xyz": [mm, mm, mm]}],
     "lines": [{"id": int, "junctions": [int, int]}],
     "planes": [{"id": int, "lines": [int, ...], "normal": [r, r, r],
                 "offset": r, "label": "wall|floor|ceiling|door|window",
                 "semantic": str, "parent_wall": int|null}]}

``parent_wall`` is set on door/window planes that cut an opening into a
structural plane. Each plane's lines must chain into one closed loop.

Pose file::

    {"view_id": str, "width": int, "height": int,
     "fx": r, "fy": r, "cx": r, "cy": r,
     "R": [9 reals, row-major], "t": [3 reals], "mask": relative-path|null}

with the convention q_cam = R q_world + t. Masks are single-channel 8-bit
PNGs; the label map JSON maps class ids to semantic names, e.g. {"7": "door"}.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import Degenerate, DimensionMismatch, InvalidRotation, ParseError, TopologyError
from .geometry import (
    DEFAULT_TOLERANCES,
    Intrinsics,
    RigidTransform,
    Tolerances,
    fit_plane_dlt,
    plane_basis,
    signed_area,
    to_plane_frame,
)
from .model import Junction3D, Line3D, Opening, PlaneLabel, PlaneParams, PlanePolygon, SceneGraph

MASK_LABELS = ("door", "window", "wall", "floor", "ceiling", "other")
MAX_PLANE_RESIDUAL_MM = 1.0


@dataclass(frozen=True)
class CameraView:
    """Calibrated perspective view: intrinsics plus world-to-camera pose."""

    view_id: str
    intrinsics: Intrinsics
    rotation: np.ndarray  # (3, 3) world -> camera
    translation: np.ndarray  # (3,) mm
    width: int
    height: int
    mask_path: str | None = None

    def __post_init__(self):
        transform = RigidTransform(self.rotation, self.translation)  # validates R
        object.__setattr__(self, "rotation", transform.rotation)
        object.__setattr__(self, "translation", transform.translation)
        k = self.intrinsics
        if k.fx <= 0 or k.fy <= 0:
            raise ParseError(f"view {self.view_id}: focal lengths must be positive")
        if not (0 <= k.cx <= self.width and 0 <= k.cy <= self.height):
            raise ParseError(f"view {self.view_id}: principal point outside the image")

    @property
    def transform(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)


@dataclass(frozen=True)
class SemanticMask:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8 class ids
    label_map: dict[int, str]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"mask pixels shape {px.shape} != ({self.height}, {self.width})"
            )
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label_map", dict(self.label_map))

    def label_at(self, x: int, y: int) -> str:
        return self.label_map.get(int(self.pixels[y, x]), "other")

    def is_label(self, label: str) -> np.ndarray:
        """(height, width) boolean map of pixels carrying the given label."""
        lut = np.zeros(256, dtype=bool)
        for class_id, name in self.label_map.items():
            if name == label:
                lut[class_id] = True
        return lut[self.pixels]


class FilterReason(str, enum.Enum):
    OK = "ok"
    PLANE_WITH_TWO_JUNCTIONS = "plane_with_two_junctions"
    RESIDUAL_EXCEEDS_1MM = "residual_exceeds_1mm"


@dataclass(frozen=True)
class SceneFilterReport:
    scene_id: str
    accepted: bool
    reason: FilterReason
    max_residual_mm: float

    def __post_init__(self):
        if self.accepted != (self.reason == FilterReason.OK):
            raise ValueError("accepted flag must match reason")


def _require(mapping, key, path):
    try:
        return mapping[key]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: missing field {key!r}") from exc


def _chain_loop(edges: list[tuple[int, int]], plane_id: int, path) -> tuple[int, ...]:
    """Order a plane's line segments into one closed junction loop.

    Every junction must touch exactly two of the plane's lines and a single
    walk must consume all of them; anything else is a topology error.
    """
    incident: dict[int, list[int]] = {}
    for idx, (a, b) in enumerate(edges):
        incident.setdefault(a, []).append(idx)
        incident.setdefault(b, []).append(idx)
    for junction, used_by in incident.items():
        if len(used_by) != 2:
            raise TopologyError(
                f"{path}: plane {plane_id}: junction {junction} touches "
                f"{len(used_by)} lines, expected 2"
            )
    start = min(incident)
    loop = [start]
    used = [False] * len(edges)
    current = start
    while True:
        step = next((i for i in incident[current] if not used[i]), None)
        if step is None:
            raise TopologyError(f"{path}: plane {plane_id}: lines form an open chain")
        used[step] = True
        a, b = edges[step]
        current = b if current == a else a
        if current == start:
            break
        loop.append(current)
    if not all(used):
        raise TopologyError(f"{path}: plane {plane_id}: lines form more than one loop")
    return tuple(loop)


def _orient_loop(loop: tuple[int, ...], positions: dict[int, np.ndarray], params: PlaneParams) -> tuple[int, ...]:
    """Make the loop counter-clockwise when viewed from the normal side."""
    if len(loop) < 3:
        return loop
    pts = np.array([positions[j] for j in loop])
    e1, e2 = plane_basis(params.normal)
    uv = to_plane_frame(pts, pts[0], e1, e2)
    if signed_area(uv) < 0.0:
        return (loop[0],) + tuple(reversed(loop[1:]))
    return loop


def load_scene(path, tol: Tolerances = DEFAULT_TOLERANCES) -> SceneGraph:
    """Parse a scene file into a cross-referenced SceneGraph.

    Duplicate junctions (within tol.eps_plane_mm) are merged, each plane's
    lines are chained into a closed loop, loops are oriented
    counter-clockwise, and door/window planes with a parent wall are attached
    to it as openings.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc

    try:
        scene_id = str(_require(raw, "scene_id", path))

        # Junctions, merging exact duplicates so loop chaining cannot stall
        # on coincident vertices.
        canonical: dict[int, int] = {}
        junctions: list[Junction3D] = []
        kept_positions: list[np.ndarray] = []
        for entry in _require(raw, "junctions", path):
            jid = int(_require(entry, "id", path))
            pos = np.array(_require(entry, "xyz", path), dtype=float)
            if pos.shape != (3,):
                raise ParseError(f"{path}: junction {jid} position must have 3 components")
            if jid in canonical:
                raise ParseError(f"{path}: duplicate junction id {jid}")
            merged = None
            if kept_positions:
                dists = np.linalg.norm(np.array(kept_positions) - pos, axis=1)
                hit = int(np.argmin(dists))
                if dists[hit] <= tol.eps_plane_mm:
                    merged = junctions[hit].id
            if merged is None:
                junctions.append(Junction3D(jid, pos))
                kept_positions.append(pos)
                canonical[jid] = jid
            else:
                canonical[jid] = merged

        line_entries: dict[int, tuple[int, int]] = {}
        for entry in _require(raw, "lines", path):
            lid = int(_require(entry, "id", path))
            a, b = (canonical[int(j)] for j in _require(entry, "junctions", path))
            if lid in line_entries:
                raise ParseError(f"{path}: duplicate line id {lid}")
            if a == b:
                raise ParseError(f"{path}: line {lid} degenerates to a point")
            line_entries[lid] = (a, b)

        positions = {j.id: j.position for j in junctions}
        adjacency: dict[int, set[int]] = {lid: set() for lid in line_entries}
        plane_raw = []
        for entry in _require(raw, "planes", path):
            pid = int(_require(entry, "id", path))
            label = PlaneLabel(_require(entry, "label", path))
            params = PlaneParams(
                np.array(_require(entry, "normal", path), dtype=float),
                float(_require(entry, "offset", path)),
            )
            line_ids = tuple(int(i) for i in _require(entry, "lines", path))
            for lid in line_ids:
                if lid not in line_entries:
                    raise ParseError(f"{path}: plane {pid} references unknown line {lid}")
                adjacency[lid].add(pid)
            parent = entry.get("parent_wall")
            plane_raw.append(
                {
                    "id": pid,
                    "label": label,
                    "params": params,
                    "line_ids": line_ids,
                    "semantic": str(entry.get("semantic", "")),
                    "parent": None if parent is None else int(parent),
                }
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc

    loops: dict[int, tuple[int, ...]] = {}
    for entry in plane_raw:
        edges = [line_entries[lid] for lid in entry["line_ids"]]
        loop = _chain_loop(edges, entry["id"], path)
        loops[entry["id"]] = _orient_loop(loop, positions, entry["params"])

    by_id = {entry["id"]: entry for entry in plane_raw}
    openings: dict[int, list[Opening]] = {entry["id"]: [] for entry in plane_raw}
    for entry in plane_raw:
        parent = entry["parent"]
        if parent is None:
            continue
        if entry["label"] not in (PlaneLabel.DOOR, PlaneLabel.WINDOW):
            raise TopologyError(
                f"{path}: plane {entry['id']} has a parent wall but label {entry['label'].value}"
            )
        if parent not in by_id:
            raise TopologyError(f"{path}: plane {entry['id']} references unknown parent {parent}")
        parent_params = by_id[parent]["params"]
        loop_pts = np.array([positions[j] for j in loops[entry["id"]]])
        off_plane = np.abs(loop_pts @ parent_params.normal + parent_params.offset)
        if float(off_plane.max()) > MAX_PLANE_RESIDUAL_MM:
            raise TopologyError(
                f"{path}: opening plane {entry['id']} is not coplanar with wall {parent}"
            )
        openings[parent].append(
            Opening(polygon=loops[entry["id"]], kind=entry["label"], door_id=entry["id"])
        )

    lines = tuple(
        Line3D(lid, pair, frozenset(adjacency[lid])) for lid, pair in line_entries.items()
    )
    for line in lines:
        if not 1 <= len(line.adjacent_planes) <= 2:
            raise TopologyError(
                f"{path}: line {line.id} belongs to {len(line.adjacent_planes)} planes"
            )
    planes = tuple(
        PlanePolygon(
            plane_id=entry["id"],
            params=entry["params"],
            outer_boundary=loops[entry["id"]],
            openings=tuple(openings[entry["id"]]),
            label=entry["label"],
            semantic=entry["semantic"],
            line_ids=entry["line_ids"],
        )
        for entry in plane_raw
    )
    return SceneGraph(scene_id=scene_id, junctions=tuple(junctions), lines=lines, planes=planes)


def save_scene(scene: SceneGraph, path) -> None:
    """Write a SceneGraph back to the scene file schema."""
    parent_of: dict[int, int] = {}
    for plane in scene.planes:
        for opening in plane.openings:
            parent_of[opening.door_id] = plane.plane_id
    payload = {
        "scene_id": scene.scene_id,
        "junctions": [{"id": j.id, "xyz": [float(v) for v in j.position]} for j in scene.junctions],
        "lines": [{"id": l.id, "junctions": list(l.endpoints)} for l in scene.lines],
        "planes": [
            {
                "id": p.plane_id,
                "lines": list(p.line_ids),
                "normal": [float(v) for v in p.params.normal],
                "offset": float(p.params.offset),
                "label": p.label.value,
                "semantic": p.semantic,
                "parent_wall": parent_of.get(p.plane_id),
            }
            for p in scene.planes
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_view(path) -> CameraView:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        rotation = np.array(_require(raw, "R", path), dtype=float).reshape(3, 3)
        translation = np.array(_require(raw, "t", path), dtype=float)
        view = CameraView(
            view_id=str(_require(raw, "view_id", path)),
            intrinsics=Intrinsics(
                fx=float(_require(raw, "fx", path)),
                fy=float(_require(raw, "fy", path)),
                cx=float(_require(raw, "cx", path)),
                cy=float(_require(raw, "cy", path)),
            ),
            rotation=rotation,
            translation=translation,
            width=int(_require(raw, "width", path)),
            height=int(_require(raw, "height", path)),
            mask_path=raw.get("mask"),
        )
    except InvalidRotation:
        raise
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return view


def save_view(view: CameraView, path) -> None:
    payload = {
        "view_id": view.view_id,
        "width": view.width,
        "height": view.height,
        "fx": view.intrinsics.fx,
        "fy": view.intrinsics.fy,
        "cx": view.intrinsics.cx,
        "cy": view.intrinsics.cy,
        "R": [float(v) for v in view.rotation.reshape(-1)],
        "t": [float(v) for v in view.translation],
        "mask": view.mask_path,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_label_map(path) -> dict[int, str]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    label_map = {}
    for key, value in raw.items():
        if value not in MASK_LABELS:
            raise ParseError(f"{path}: unknown mask label {value!r}")
        label_map[int(key)] = str(value)
    return label_map


def load_mask(path, label_map: dict[int, str]) -> SemanticMask:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise ParseError(f"{path}: expected a single-channel 8-bit PNG, got mode {img.mode}")
            pixels = np.asarray(img, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    height, width = pixels.shape
    return SemanticMask(width=width, height=height, pixels=pixels, label_map=label_map)


def filter_scene(
    scene: SceneGraph,
    max_residual_mm: float = MAX_PLANE_RESIDUAL_MM,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[SceneFilterReport, SceneGraph]:
    """Quality-gate a scene and refit its plane parameters.

    Rejects scenes where some plane has fewer than three distinct junctions,
    otherwise refits every plane by least squares and rejects when any
    junction sits farther than max_residual_mm from its refit plane. Returns
    the report plus the scene with refit parameters on acceptance (the input
    scene unchanged on rejection, since scene values are immutable).
    """
    underdetermined = False
    refits: dict[int, PlaneParams] = {}
    max_residual = 0.0
    for plane in scene.planes:
        distinct = len(set(plane.outer_boundary))
        if distinct < 3:
            underdetermined = True
            continue
        pts = scene.positions(plane.outer_boundary)
        try:
            params = fit_plane_dlt(pts)
        except Degenerate:
            underdetermined = True
            continue
        refits[plane.plane_id] = params
        residuals = np.abs(pts @ params.normal + params.offset)
        max_residual = max(max_residual, float(residuals.max()))

    if underdetermined:
        report = SceneFilterReport(
            scene.scene_id, False, FilterReason.PLANE_WITH_TWO_JUNCTIONS, max_residual
        )
        return report, scene
    if max_residual > max_residual_mm:
        report = SceneFilterReport(
            scene.scene_id, False, FilterReason.RESIDUAL_EXCEEDS_1MM, max_residual
        )
        return report, scene

    positions = {j.id: j.position for j in scene.junctions}
    planes = tuple(
        PlanePolygon(
            plane_id=p.plane_id,
            params=refits[p.plane_id],
            outer_boundary=_orient_loop(p.outer_boundary, positions, refits[p.plane_id]),
            openings=p.openings,
            label=p.label,
            semantic=p.semantic,
            line_ids=p.line_ids,
        )
        for p in scene.planes
    )
    refit_scene = SceneGraph(scene.scene_id, scene.junctions, scene.lines, planes)
    report = SceneFilterReport(scene.scene_id, True, FilterReason.OK, max_residual)
    return report, refit_scene
