"""Projective primitives: homogeneous mapping, DLT plane fitting, rigid and
plane transforms, pixel projection, and small planar polygon helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, Degenerate, EmptyInput, InvalidRotation, PointAtInfinity
from .model import PlaneParams


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds used throughout the pipeline (single knob for tests)."""

    eps_plane_mm: float = 1e-6  # in-plane / coplanarity / duplicate-junction merge
    eps_incidence: float = 1e-9  # plane-transform incidence residual
    z_min_mm: float = 1e-6  # near-plane depth for frustum clipping
    eps_param: float = 1e-6  # interval bookkeeping along a line segment
    eps_px: float = 0.5  # junction merge radius at full image resolution


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation; maps p to R p + t."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,) mm

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise InvalidRotation("transform entries must be finite")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise InvalidRotation("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise InvalidRotation("rotation determinant is not +1 within 1e-6")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


@dataclass(frozen=True)
class ResidualSummary:
    """Per-plane max/median/min point-plane distances in millimetres."""

    max_mm: float
    median_mm: float
    min_mm: float


def from_homogeneous(p) -> np.ndarray:
    """Map a homogeneous point to Euclidean coordinates by dividing out the
    last component. Raises PointAtInfinity when that component vanishes."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("expected a homogeneous coordinate vector")
    w = arr[-1]
    if abs(w) <= 1e-12:
        raise PointAtInfinity(f"last coordinate {w!r} is (near) zero")
    return arr[:-1] / w


def fit_plane_dlt(points) -> PlaneParams:
    """Algebraic least-squares plane through 3D points.

    Minimizes ||M pi||^2 over unit pi where M stacks homogeneous rows
    (x, y, z, 1), then rescales so the normal has unit length. Sign is fixed
    so the offset is <= 0, ties broken by making the first nonzero normal
    component positive.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected an (n, 3) point array")
    if pts.shape[0] < 3:
        raise Degenerate(f"need at least 3 points, got {pts.shape[0]}")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise Degenerate("points are collinear or coincident")

    m = np.hstack([pts, np.ones((pts.shape[0], 1))])
    _, vectors = np.linalg.eigh(m.T @ m)
    pi = vectors[:, 0]
    norm_n = float(np.linalg.norm(pi[:3]))
    if norm_n <= 1e-12:
        raise Degenerate("least-squares solution has no finite plane")
    n = pi[:3] / norm_n
    d = float(pi[3]) / norm_n

    tie = 1e-9
    if d > tie:
        n, d = -n, -d
    elif d >= -tie:
        for component in n:
            if abs(component) > 1e-12:
                if component < 0:
                    n, d = -n, -d
                break
    return PlaneParams(normal=n, offset=d)


def point_plane_distance(p, plane: PlaneParams) -> float:
    """Euclidean point-plane distance in millimetres (normal is unit)."""
    return float(abs(np.dot(np.asarray(p, dtype=float), plane.normal) + plane.offset))


def residual_summary(plane: PlaneParams, junctions) -> ResidualSummary:
    pts = np.asarray(junctions, dtype=float)
    if pts.size == 0:
        raise EmptyInput("residual summary needs at least one junction")
    dists = np.abs(pts @ plane.normal + plane.offset)
    return ResidualSummary(float(dists.max()), float(np.median(dists)), float(dists.min()))


def transform_point(t: RigidTransform, p) -> np.ndarray:
    return t.rotation @ np.asarray(p, dtype=float) + t.translation


def transform_plane(t: RigidTransform, plane: PlaneParams) -> PlaneParams:
    """Plane seen in the transformed frame, preserving incidence:
    q on the plane implies (R q + t) on the result."""
    n = t.rotation @ plane.normal
    d = plane.offset - float(np.dot(t.translation, n))
    return PlaneParams(normal=n, offset=d)


def project_to_pixels(k: Intrinsics, p_cam) -> np.ndarray:
    """Pinhole projection of a camera-frame point to pixel coordinates."""
    p = np.asarray(p_cam, dtype=float)
    if p[2] <= 0.0:
        raise BehindCamera(f"depth {p[2]!r} is not positive")
    return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])


def plane_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal in-plane basis (e1, e2) with e1 x e2 = normal."""
    n = np.asarray(normal, dtype=float)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    e1 = np.cross(axis, n)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def to_plane_frame(points, origin, e1, e2) -> np.ndarray:
    """(n, 2) in-plane coordinates of 3D points relative to a plane frame."""
    rel = np.atleast_2d(np.asarray(points, dtype=float)) - origin
    return np.column_stack([rel @ e1, rel @ e2])


def signed_area(loop) -> float:
    """Signed area of a 2D polygon loop (positive when counter-clockwise)."""
    xy = np.asarray(loop, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def points_in_loop(points, loop) -> np.ndarray:
    """Even-odd containment test of 2D points against a polygon loop.

    Boundary points are not handled consistently here; use points_on_loop
    where the boundary rule matters.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xy = np.asarray(loop, dtype=float)
    x1, y1 = xy[:, 0], xy[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    straddles = (y1 <= py) != (y2 <= py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = x1 + (py - y1) * (x2 - x1) / np.where(y2 == y1, 1.0, y2 - y1)
    crossings = straddles & (px < x_at)
    return (crossings.sum(axis=1) % 2).astype(bool)


def points_on_loop(points, loop, eps: float) -> np.ndarray:
    """True where a 2D point lies within eps of some edge of the loop."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xy = np.asarray(loop, dtype=float)
    a = xy
    b = np.roll(xy, -1, axis=0)
    ab = b - a  # (E, 2)
    ap = pts[:, None, :] - a[None, :, :]  # (P, E, 2)
    denom = np.einsum("ej,ej->e", ab, ab)
    tparam = np.einsum("pej,ej->pe", ap, ab) / np.where(denom == 0.0, 1.0, denom)
    tparam = np.clip(tparam, 0.0, 1.0)
    closest = a[None, :, :] + tparam[:, :, None] * ab[None, :, :]
    dist2 = np.sum((pts[:, None, :] - closest) ** 2, axis=2)
    return np.any(dist2 <= eps * eps, axis=1)
