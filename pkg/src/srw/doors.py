"""Open/closed state estimation for door openings from semantic-mask samples.

A door polygon is sampled uniformly, the samples are projected into every
view that carries a semantic mask, and the door counts as closed when more
than 30% of the image-visible samples land on door-labeled pixels. Doors
with no visible sample are treated as closed: without evidence of openness
the far room would be unverifiable ground truth.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DegeneratePolygon, DimensionMismatch
from .geometry import plane_basis, points_in_loop, signed_area, to_plane_frame
from .ingest import CameraView, SemanticMask
from .model import PlaneLabel, PlanePolygon, SceneGraph

CLOSED_RATIO_THRESHOLD = 0.3
SAMPLES_PER_DOOR = 100
MIN_POLYGON_AREA_MM2 = 1e-6


class DoorState(str, enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True)
class DoorStateReport:
    door_id: int
    closed_ratio: float | None  # None when no sample was visible in any view
    visible_samples: int
    state: DoorState

    def __post_init__(self):
        expect_closed = self.closed_ratio is None or self.closed_ratio > CLOSED_RATIO_THRESHOLD
        if (self.state == DoorState.CLOSED) != expect_closed:
            raise ValueError("door state inconsistent with closed ratio")


def derive_seed(seed: int, *parts) -> int:
    """Stable per-task seed from a base seed and identifying parts."""
    text = ":".join([str(seed), *(str(p) for p in parts)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def sample_polygon_uniform(
    scene: SceneGraph, polygon: PlanePolygon, n: int = SAMPLES_PER_DOOR, seed: int = 0
) -> np.ndarray:
    """n points uniform over the polygon's area, by seeded rejection sampling
    over the bounding box in the polygon's own plane frame. Deterministic for
    a fixed (seed, polygon)."""
    if n < 1:
        raise ValueError("need at least one sample")
    pts3 = scene.positions(polygon.outer_boundary)
    origin = pts3[0]
    e1, e2 = plane_basis(polygon.params.normal)
    uv = to_plane_frame(pts3, origin, e1, e2)
    area = abs(signed_area(uv))
    if area < MIN_POLYGON_AREA_MM2:
        raise DegeneratePolygon(f"plane {polygon.plane_id}: area {area} mm^2 below threshold")
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    box_area = float(np.prod(hi - lo))
    if box_area <= 0.0 or area / box_area < 1e-9:
        raise DegeneratePolygon(f"plane {polygon.plane_id}: sliver polygon cannot be sampled")

    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    batch = max(4 * n, 256)
    while len(accepted) < n:
        draw = rng.uniform(lo, hi, size=(batch, 2))
        inside = points_in_loop(draw, uv)
        accepted.extend(draw[inside])
    samples = np.array(accepted[:n])
    return origin + samples[:, 0:1] * e1 + samples[:, 1:2] * e2


def door_closed_ratio(
    door_id: int,
    samples: np.ndarray,
    views: Iterable[CameraView],
    masks: Mapping[str, SemanticMask],
    closed_threshold: float = CLOSED_RATIO_THRESHOLD,
) -> DoorStateReport:
    """Project world-frame samples into every masked view and report the door
    state.

    A sample counts when it lands in front of the camera and its rounded
    pixel falls inside the image; it hits when that mask pixel is labeled
    door. Views without a mask contribute nothing.
    """
    pts = np.asarray(samples, dtype=float).reshape(-1, 3)
    visible = 0
    hits = 0
    for view in sorted(views, key=lambda v: v.view_id):
        mask = masks.get(view.view_id)
        if mask is None:
            continue
        if (mask.width, mask.height) != (view.width, view.height):
            raise DimensionMismatch(
                f"view {view.view_id}: mask is {mask.width}x{mask.height}, "
                f"view is {view.width}x{view.height}"
            )
        cam = pts @ view.rotation.T + view.translation
        in_front = cam[:, 2] > 0.0
        if not np.any(in_front):
            continue
        k = view.intrinsics
        z = cam[in_front, 2]
        xs = np.rint(k.fx * cam[in_front, 0] / z + k.cx).astype(int)
        ys = np.rint(k.fy * cam[in_front, 1] / z + k.cy).astype(int)
        in_image = (xs >= 0) & (xs < view.width) & (ys >= 0) & (ys < view.height)
        visible += int(in_image.sum())
        if np.any(in_image):
            door_map = mask.is_label("door")
            hits += int(door_map[ys[in_image], xs[in_image]].sum())

    if visible == 0:
        return DoorStateReport(door_id, None, 0, DoorState.CLOSED)
    ratio = hits / visible
    state = DoorState.CLOSED if ratio > closed_threshold else DoorState.OPEN
    return DoorStateReport(door_id, ratio, visible, state)


def scene_door_ids(scene: SceneGraph) -> list[int]:
    """Sorted plane ids of every door registered as an opening on some wall."""
    return sorted(
        {
            opening.door_id
            for plane in scene.planes
            for opening in plane.openings
            if opening.kind == PlaneLabel.DOOR
        }
    )


def single_door_state(
    scene: SceneGraph,
    door_id: int,
    views: Iterable[CameraView],
    masks: Mapping[str, SemanticMask],
    samples_per_door: int = SAMPLES_PER_DOOR,
    seed: int = 0,
    closed_threshold: float = CLOSED_RATIO_THRESHOLD,
) -> DoorStateReport:
    """State of one door, with its sampling seed derived from
    (seed, scene_id, door_id) so reports do not depend on evaluation order."""
    samples = sample_polygon_uniform(
        scene,
        scene.plane_index[door_id],
        n=samples_per_door,
        seed=derive_seed(seed, scene.scene_id, door_id),
    )
    return door_closed_ratio(door_id, samples, views, masks, closed_threshold)


def door_states(
    scene: SceneGraph,
    views: Iterable[CameraView],
    masks: Mapping[str, SemanticMask],
    samples_per_door: int = SAMPLES_PER_DOOR,
    seed: int = 0,
    closed_threshold: float = CLOSED_RATIO_THRESHOLD,
) -> list[DoorStateReport]:
    """DoorStateReport for every door opening of the scene, sorted by door id."""
    views = list(views)
    return [
        single_door_state(
            scene, door_id, views, masks, samples_per_door, seed, closed_threshold
        )
        for door_id in scene_door_ids(scene)
    ]
