"""Synthetic scene/corpus builders shared by the test suite.

Builders emit payload dicts in the scene/pose file schema so tests exercise
the real loaders. All geometry in millimetres, z up.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from srw.ingest import load_scene
from srw.model import SceneGraph

LABEL_MAP = {"0": "other", "1": "wall", "2": "floor", "3": "ceiling", "4": "door", "5": "window"}
MASK_ID = {name: int(key) for key, name in LABEL_MAP.items()}


def box_payload(
    scene_id: str = "box",
    lo=(0.0, 0.0, 0.0),
    hi=(4000.0, 3000.0, 2800.0),
    junction_base: int = 0,
    line_base: int = 0,
    plane_base: int = 0,
) -> dict:
    """Axis-aligned box room: 8 junctions, 12 lines, 6 planes."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    corners = [
        (x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
        (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1),
    ]
    jb, lb, pb = junction_base, line_base, plane_base
    junctions = [{"id": jb + i, "xyz": list(map(float, c))} for i, c in enumerate(corners)]
    edge_pairs = [
        (0, 1), (1, 2), (2, 3), (3, 0),  # floor
        (4, 5), (5, 6), (6, 7), (7, 4),  # ceiling
        (0, 4), (1, 5), (2, 6), (3, 7),  # verticals
    ]
    lines = [
        {"id": lb + i, "junctions": [jb + a, jb + b]} for i, (a, b) in enumerate(edge_pairs)
    ]
    planes = [
        {"id": pb + 0, "lines": [lb + i for i in (0, 1, 2, 3)], "normal": [0.0, 0.0, 1.0],
         "offset": -z0, "label": "floor", "semantic": "room", "parent_wall": None},
        {"id": pb + 1, "lines": [lb + i for i in (4, 5, 6, 7)], "normal": [0.0, 0.0, 1.0],
         "offset": -z1, "label": "ceiling", "semantic": "room", "parent_wall": None},
        {"id": pb + 2, "lines": [lb + i for i in (0, 9, 4, 8)], "normal": [0.0, 1.0, 0.0],
         "offset": -y0, "label": "wall", "semantic": "room", "parent_wall": None},
        {"id": pb + 3, "lines": [lb + i for i in (1, 10, 5, 9)], "normal": [1.0, 0.0, 0.0],
         "offset": -x1, "label": "wall", "semantic": "room", "parent_wall": None},
        {"id": pb + 4, "lines": [lb + i for i in (2, 11, 6, 10)], "normal": [0.0, 1.0, 0.0],
         "offset": -y1, "label": "wall", "semantic": "room", "parent_wall": None},
        {"id": pb + 5, "lines": [lb + i for i in (3, 8, 7, 11)], "normal": [1.0, 0.0, 0.0],
         "offset": -x0, "label": "wall", "semantic": "room", "parent_wall": None},
    ]
    return {"scene_id": scene_id, "junctions": junctions, "lines": lines, "planes": planes}


def add_rect_plane(
    payload: dict,
    corners,
    label: str,
    parent_wall: int | None = None,
    semantic: str = "",
) -> int:
    """Append a 4-corner planar polygon (new junctions/lines/plane); returns plane id."""
    pts = np.asarray(corners, dtype=float)
    assert pts.shape == (4, 3)
    jb = 1 + max(j["id"] for j in payload["junctions"])
    lb = 1 + max(l["id"] for l in payload["lines"])
    pb = 1 + max(p["id"] for p in payload["planes"])
    for i in range(4):
        payload["junctions"].append({"id": jb + i, "xyz": [float(v) for v in pts[i]]})
    for i in range(4):
        payload["lines"].append({"id": lb + i, "junctions": [jb + i, jb + (i + 1) % 4]})
    normal = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    normal = normal / np.linalg.norm(normal)
    offset = -float(normal @ pts[0])
    payload["planes"].append(
        {
            "id": pb,
            "lines": [lb + i for i in range(4)],
            "normal": [float(v) for v in normal],
            "offset": offset,
            "label": label,
            "semantic": semantic,
            "parent_wall": parent_wall,
        }
    )
    return pb


def two_room_payload(scene_id: str = "tworoom") -> tuple[dict, dict]:
    """Two box rooms joined by door openings through a 150 mm wall.

    Returns (payload, manifest) where the manifest records the authored
    junction/line/plane counts and the ids of the two door planes.
    """
    payload = box_payload(scene_id, lo=(0, 0, 0), hi=(4000, 3000, 2800))
    room_b = box_payload(
        scene_id, lo=(4150, 0, 0), hi=(8150, 3000, 2800),
        junction_base=100, line_base=100, plane_base=100,
    )
    payload["junctions"] += room_b["junctions"]
    payload["lines"] += room_b["lines"]
    payload["planes"] += room_b["planes"]
    # Door cutouts, strictly inside each shared wall (wall A is x=4000 with
    # id 3; room B's x=4150 wall has id 105).
    door_a = add_rect_plane(
        payload,
        [(4000, 1200, 50), (4000, 2000, 50), (4000, 2000, 2150), (4000, 1200, 2150)],
        label="door",
        parent_wall=3,
    )
    door_b = add_rect_plane(
        payload,
        [(4150, 1200, 50), (4150, 2000, 50), (4150, 2000, 2150), (4150, 1200, 2150)],
        label="door",
        parent_wall=105,
    )
    manifest = {
        "junctions": len(payload["junctions"]),
        "lines": len(payload["lines"]),
        "planes": len(payload["planes"]),
        "door_planes": [door_a, door_b],
        "wall_planes": [3, 105],
    }
    return payload, manifest


def look_rotation(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """World->camera rotation for a camera with x right, y down, z forward.

    World z is up. yaw rotates about world z (0 looks along +x), positive
    pitch looks downward.
    """
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    forward = np.array([cp * cy, cp * sy, -sp])
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.vstack([right, down, forward])


def view_payload(
    view_id: str,
    position,
    yaw: float,
    pitch: float = 0.0,
    width: int = 512,
    height: int = 512,
    fx: float = 256.0,
    fy: float = 256.0,
    mask: str | None = None,
) -> dict:
    r = look_rotation(yaw, pitch)
    t = -r @ np.asarray(position, dtype=float)
    return {
        "view_id": view_id,
        "width": width,
        "height": height,
        "fx": fx,
        "fy": fy,
        "cx": width / 2.0,
        "cy": height / 2.0,
        "R": [float(v) for v in r.reshape(-1)],
        "t": [float(v) for v in t],
        "mask": mask,
    }


def scene_from_payload(payload: dict, tmp_path: Path, name: str = "scene.json") -> SceneGraph:
    path = Path(tmp_path) / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return load_scene(path)


def paint_mask(view_dict: dict, quads: list[tuple[np.ndarray, int]], background_id: int) -> np.ndarray:
    """Rasterize world-frame quads into a class-id mask for one view.

    Quads fully or partly behind the camera are skipped. Later quads paint
    over earlier ones.
    """
    from matplotlib.path import Path as MplPath

    width, height = view_dict["width"], view_dict["height"]
    r = np.array(view_dict["R"], dtype=float).reshape(3, 3)
    t = np.array(view_dict["t"], dtype=float)
    fx, fy = view_dict["fx"], view_dict["fy"]
    cx, cy = view_dict["cx"], view_dict["cy"]
    mask = np.full((height, width), background_id, dtype=np.uint8)
    xs, ys = np.meshgrid(np.arange(width), np.arange(height))
    grid = np.column_stack([xs.ravel(), ys.ravel()])
    for corners, class_id in quads:
        cam = np.asarray(corners, dtype=float) @ r.T + t
        if np.any(cam[:, 2] <= 0):
            continue
        px = np.column_stack([fx * cam[:, 0] / cam[:, 2] + cx, fy * cam[:, 1] / cam[:, 2] + cy])
        inside = MplPath(px).contains_points(grid)
        mask.ravel()[inside] = class_id
    return mask


def write_corpus_scene(
    root: Path,
    payload: dict,
    views: list[dict],
    masks: dict[str, np.ndarray] | None = None,
) -> None:
    scene_id = payload["scene_id"]
    scene_dir = root / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    (scene_dir / f"{scene_id}.json").write_text(json.dumps(payload), encoding="utf-8")
    view_dir = root / "views" / scene_id
    view_dir.mkdir(parents=True, exist_ok=True)
    for view in views:
        (view_dir / f"{view['view_id']}.json").write_text(json.dumps(view), encoding="utf-8")
        if masks and view["view_id"] in masks:
            Image.fromarray(masks[view["view_id"]], mode="L").save(
                view_dir / f"{view['view_id']}.png"
            )


def ring_plane_payload(residual_mm: float, scene_id: str = "ring") -> dict:
    """Single-plane scene whose post-refit max residual equals residual_mm.

    8 vertices on a radius-1000 ring alternate +/-residual_mm in z and 20
    vertices on a radius-1300 ring lie exactly at z=0; the symmetric sums
    make the stacked normal matrix diagonal, so the algebraic fit is exactly
    z=0 and the max junction distance is exactly residual_mm.
    """
    vertices = []
    for k in range(8):
        ang = math.radians(45.0 * k)
        vertices.append((math.cos(ang) * 1000.0, math.sin(ang) * 1000.0,
                         residual_mm if k % 2 == 0 else -residual_mm, 45.0 * k))
    for k in range(20):
        ang_deg = 5.0 + 18.0 * k
        ang = math.radians(ang_deg)
        vertices.append((math.cos(ang) * 1300.0, math.sin(ang) * 1300.0, 0.0, ang_deg))
    vertices.sort(key=lambda v: v[3])
    junctions = [
        {"id": i, "xyz": [v[0], v[1], v[2]]} for i, v in enumerate(vertices)
    ]
    n = len(vertices)
    lines = [{"id": i, "junctions": [i, (i + 1) % n]} for i in range(n)]
    planes = [
        {"id": 0, "lines": list(range(n)), "normal": [0.0, 0.0, 1.0], "offset": 0.0,
         "label": "floor", "semantic": "", "parent_wall": None}
    ]
    return {"scene_id": scene_id, "junctions": junctions, "lines": lines, "planes": planes}


def random_room_payload(rng: np.random.Generator, scene_id: str) -> dict:
    """Axis-aligned room with 1-3 floating occluder rectangles."""
    w = float(rng.uniform(3000, 6000))
    d = float(rng.uniform(3000, 6000))
    h = float(rng.uniform(2400, 3200))
    payload = box_payload(scene_id, lo=(0, 0, 0), hi=(w, d, h))
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.5:
            x = float(rng.uniform(500, w - 500))
            ya, yb = sorted(rng.uniform(200, d - 200, size=2))
            za, zb = sorted(rng.uniform(200, h - 200, size=2))
            if yb - ya < 300 or zb - za < 300:
                continue
            corners = [(x, ya, za), (x, yb, za), (x, yb, zb), (x, ya, zb)]
        else:
            y = float(rng.uniform(500, d - 500))
            xa, xb = sorted(rng.uniform(200, w - 200, size=2))
            za, zb = sorted(rng.uniform(200, h - 200, size=2))
            if xb - xa < 300 or zb - za < 300:
                continue
            corners = [(xa, y, za), (xb, y, za), (xb, y, zb), (xa, y, zb)]
        add_rect_plane(payload, corners, label="wall")
    return payload


def random_camera(rng: np.random.Generator, payload: dict, view_id: str) -> dict:
    """Random interior camera, kept at least 50 mm away from every plane."""
    junctions = np.array([j["xyz"] for j in payload["junctions"]])
    lo = junctions.min(axis=0)
    hi = junctions.max(axis=0)
    planes = [
        (np.array(p["normal"], dtype=float), float(p["offset"])) for p in payload["planes"]
    ]
    while True:
        pos = rng.uniform(lo + 300, hi - 300)
        if all(abs(n @ pos + d) > 50.0 for n, d in planes):
            break
    yaw = float(rng.uniform(0, 2 * math.pi))
    pitch = float(rng.uniform(-0.35, 0.35))
    return view_payload(view_id, pos, yaw, pitch)


def perfect_prediction(annotation: dict) -> dict:
    """Prediction payload reproducing a ground-truth annotation with unit scores."""
    line_labels = ("invalid", "wall", "floor", "ceiling", "door", "window")
    junction_labels = ("invalid", "false", "proper")
    junctions = [
        {"xy": j["xy"], "scores": {l: (1.0 if l == j["label"] else 0.0) for l in junction_labels}}
        for j in annotation["junctions"]
    ]
    segments = []
    for s in annotation["segments"]:
        a, b = s["junctions"]
        xy = annotation["junctions"][a]["xy"] + annotation["junctions"][b]["xy"]
        segments.append(
            {"xy": xy, "scores": {l: (1.0 if l == s["label"] else 0.0) for l in line_labels}}
        )
    return {
        "view_id": annotation["view_id"],
        "width": annotation["width"],
        "height": annotation["height"],
        "junctions": junctions,
        "segments": segments,
    }


def door_quads(payload: dict) -> list[np.ndarray]:
    """World-frame corner arrays of every door plane in the payload."""
    lines_by_id = {l["id"]: l for l in payload["lines"]}
    pos_by_id = {j["id"]: np.array(j["xyz"], dtype=float) for j in payload["junctions"]}
    quads = []
    for plane in payload["planes"]:
        if plane["label"] != "door":
            continue
        loop = []
        for lid in plane["lines"]:
            for jid in lines_by_id[lid]["junctions"]:
                if jid not in loop:
                    loop.append(jid)
        quads.append(np.array([pos_by_id[j] for j in loop]))
    return quads


def build_corpus(root: Path, n_scenes: int = 10, seed: int = 7) -> dict:
    """Deterministic mixed corpus: plain rooms, door scenes with masks, and
    one scene the quality filter rejects. Returns expectations per scene."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "label_map.json").write_text(json.dumps(LABEL_MAP), encoding="utf-8")
    rng = np.random.default_rng(seed)
    expectations: dict = {"scenes": {}, "door_states": {}}
    for i in range(n_scenes):
        scene_id = f"scene{i:03d}"
        kind = ("room", "door_open", "room", "door_closed", "bad")[i % 5]
        if kind == "room":
            payload = random_room_payload(rng, scene_id)
            views = [random_camera(rng, payload, f"v{v}") for v in range(2)]
            write_corpus_scene(root, payload, views)
            expectations["scenes"][scene_id] = {"kind": kind, "accepted": True, "views": 2}
        elif kind in ("door_open", "door_closed"):
            payload, manifest = two_room_payload()
            payload["scene_id"] = scene_id
            # window beside the door so every line label occurs in the corpus;
            # kept away from room corners so no far-room edge seen through it
            # projects onto the window frame itself
            add_rect_plane(
                payload,
                [(4000.0, 300.0, 900.0), (4000.0, 900.0, 900.0),
                 (4000.0, 900.0, 1900.0), (4000.0, 300.0, 1900.0)],
                label="window",
                parent_wall=3,
            )
            views = [
                view_payload("v0", (2000.0, 1600.0, 1400.0), 0.0, mask="v0.png"),
                view_payload("v1", (1150.0, 950.0, 1430.0), 0.27, -0.04, mask="v1.png"),
            ]
            door_id = MASK_ID["door"] if kind == "door_closed" else MASK_ID["floor"]
            masks = {
                v["view_id"]: paint_mask(
                    v, [(q, door_id) for q in door_quads(payload)], MASK_ID["wall"]
                )
                for v in views
            }
            write_corpus_scene(root, payload, views, masks)
            expectations["scenes"][scene_id] = {"kind": kind, "accepted": True, "views": 2}
            expectations["door_states"][scene_id] = {
                d: ("closed" if kind == "door_closed" else "open")
                for d in manifest["door_planes"]
            }
        else:  # bad: one plane with a displaced corner fails the 1 mm gate
            payload = box_payload(scene_id)
            payload["junctions"][0]["xyz"][2] += 8.0
            views = [random_camera(rng, payload, "v0")]
            write_corpus_scene(root, payload, views)
            expectations["scenes"][scene_id] = {"kind": kind, "accepted": False, "views": 1}
    return expectations
