"""Core domain types for 3D scenes and the plane-to-line semantic label mapping.

All geometry is in millimetres, world frame. Types are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import UnmappedPair


class PlaneLabel(str, enum.Enum):
    WALL = "wall"
    FLOOR = "floor"
    CEILING = "ceiling"
    DOOR = "door"
    WINDOW = "window"


class LineLabel(str, enum.Enum):
    INVALID = "invalid"
    WALL = "wall"
    FLOOR = "floor"
    CEILING = "ceiling"
    DOOR = "door"
    WINDOW = "window"


class JunctionLabel(str, enum.Enum):
    INVALID = "invalid"
    FALSE = "false"
    PROPER = "proper"


# Unordered plane-label pair -> line label. Any pair not listed here is a
# topology error, not a silent drop.
_PAIR_TO_LINE: dict[frozenset[PlaneLabel], LineLabel] = {
    frozenset({PlaneLabel.DOOR, PlaneLabel.WALL}): LineLabel.DOOR,
    frozenset({PlaneLabel.WALL}): LineLabel.WALL,
    frozenset({PlaneLabel.CEILING, PlaneLabel.WALL}): LineLabel.CEILING,
    frozenset({PlaneLabel.FLOOR, PlaneLabel.WALL}): LineLabel.FLOOR,
    frozenset({PlaneLabel.DOOR}): LineLabel.DOOR,
    frozenset({PlaneLabel.WINDOW, PlaneLabel.WALL}): LineLabel.WINDOW,
    frozenset({PlaneLabel.WINDOW}): LineLabel.WINDOW,
}


def line_label_from_planes(a: PlaneLabel, b: PlaneLabel) -> LineLabel:
    """Label for a line bordered by planes labeled `a` and `b` (symmetric)."""
    try:
        return _PAIR_TO_LINE[frozenset({PlaneLabel(a), PlaneLabel(b)})]
    except KeyError:
        raise UnmappedPair(f"no line label for plane pair ({a}, {b})") from None


def _freeze(array, shape, name: str) -> np.ndarray:
    arr = np.array(array, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Junction3D:
    """A corner point where scene lines meet."""

    id: int
    position: np.ndarray  # (3,) mm

    def __post_init__(self):
        object.__setattr__(self, "position", _freeze(self.position, (3,), "position"))


@dataclass(frozen=True)
class Line3D:
    """Segment between two junctions, bordered by one or two plane polygons."""

    id: int
    endpoints: tuple[int, int]
    adjacent_planes: frozenset[int] = frozenset()

    def __post_init__(self):
        a, b = self.endpoints
        if a == b:
            raise ValueError(f"line {self.id} has identical endpoints")
        object.__setattr__(self, "endpoints", (int(a), int(b)))
        object.__setattr__(self, "adjacent_planes", frozenset(int(p) for p in self.adjacent_planes))


@dataclass(frozen=True)
class PlaneParams:
    """Plane (n, d) with unit normal; a point q satisfies n.q + d = 0 on the plane."""

    normal: np.ndarray  # (3,) unit
    offset: float  # mm

    def __post_init__(self):
        n = np.array(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if not np.isfinite(norm) or norm <= 1e-12:
            raise ValueError("plane normal must be nonzero")
        n = n / norm
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def as_vector(self) -> np.ndarray:
        """Homogeneous 4-vector (n, d)."""
        return np.append(self.normal, self.offset)


@dataclass(frozen=True)
class Opening:
    """Door or window polygon carried by its parent structural plane."""

    polygon: tuple[int, ...]  # junction-id loop
    kind: PlaneLabel  # DOOR or WINDOW
    door_id: int  # id of the standalone door/window plane

    def __post_init__(self):
        if self.kind not in (PlaneLabel.DOOR, PlaneLabel.WINDOW):
            raise ValueError(f"opening kind must be door or window, got {self.kind}")
        object.__setattr__(self, "polygon", tuple(int(j) for j in self.polygon))


@dataclass(frozen=True)
class PlanePolygon:
    plane_id: int
    params: PlaneParams
    outer_boundary: tuple[int, ...]  # junction-id loop, CCW seen from the normal side
    openings: tuple[Opening, ...]
    label: PlaneLabel
    semantic: str = ""
    line_ids: tuple[int, ...] = ()  # source line ids, kept for serialization

    def __post_init__(self):
        object.__setattr__(self, "outer_boundary", tuple(int(j) for j in self.outer_boundary))
        object.__setattr__(self, "openings", tuple(self.openings))
        object.__setattr__(self, "line_ids", tuple(int(i) for i in self.line_ids))


@dataclass(frozen=True)
class SceneGraph:
    """Junctions, lines and plane polygons of one scene, fully cross-referenced."""

    scene_id: str
    junctions: tuple[Junction3D, ...]
    lines: tuple[Line3D, ...]
    planes: tuple[PlanePolygon, ...]
    junction_index: dict[int, Junction3D] = field(repr=False, default_factory=dict)
    line_index: dict[int, Line3D] = field(repr=False, default_factory=dict)
    plane_index: dict[int, PlanePolygon] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "junctions", tuple(self.junctions))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "planes", tuple(self.planes))
        object.__setattr__(self, "junction_index", {j.id: j for j in self.junctions})
        object.__setattr__(self, "line_index", {l.id: l for l in self.lines})
        object.__setattr__(self, "plane_index", {p.plane_id: p for p in self.planes})
        for line in self.lines:
            for j in line.endpoints:
                if j not in self.junction_index:
                    raise ValueError(f"line {line.id} references unknown junction {j}")
            for p in line.adjacent_planes:
                if p not in self.plane_index:
                    raise ValueError(f"line {line.id} references unknown plane {p}")
        for plane in self.planes:
            for j in plane.outer_boundary:
                if j not in self.junction_index:
                    raise ValueError(f"plane {plane.plane_id} references unknown junction {j}")
            for opening in plane.openings:
                for j in opening.polygon:
                    if j not in self.junction_index:
                        raise ValueError(
                            f"opening of plane {plane.plane_id} references unknown junction {j}"
                        )

    def positions(self, junction_ids) -> np.ndarray:
        """Stacked (n, 3) positions for the given junction ids."""
        return np.array([self.junction_index[j].position for j in junction_ids], dtype=float)


def line_label_for(line: Line3D, scene: SceneGraph) -> LineLabel:
    """Semantic label of a scene line from its adjacent plane labels.

    Lines bordered by a single polygon take the label of that plane paired
    with a wall, which is defined for all five plane labels.
    """
    labels = [scene.plane_index[p].label for p in sorted(line.adjacent_planes)]
    if len(labels) == 2:
        return line_label_from_planes(labels[0], labels[1])
    if len(labels) == 1:
        return line_label_from_planes(labels[0], PlaneLabel.WALL)
    raise UnmappedPair(f"line {line.id} has {len(labels)} adjacent planes, expected 1 or 2")
