"""Scored 2D wireframes: endpoint-to-junction matching and graph derivation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError

LINE_SCORE_LABELS = ("invalid", "wall", "floor", "ceiling", "door", "window")
JUNCTION_SCORE_LABELS = ("invalid", "false", "proper")
NONSEMANTIC_LABEL = "valid"
MATCH_TAU = 10.0


def predicted_label(scores: dict[str, float], order: tuple[str, ...]) -> str:
    """Argmax label in canonical order (first wins on ties)."""
    best = order[0]
    for label in order[1:]:
        if scores[label] > scores[best]:
            best = label
    return best


def _check_scores(scores: dict[str, float], allowed: tuple[tuple[str, ...], ...]) -> dict[str, float]:
    keys = tuple(scores.keys())
    if not any(set(keys) == set(option) for option in allowed):
        raise ValueError(f"unexpected score labels {sorted(keys)}")
    out = {k: float(v) for k, v in scores.items()}
    for k, v in out.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"score {k}={v} outside [0, 1]")
    return out


@dataclass(frozen=True)
class ScoredJunction:
    position: np.ndarray  # (2,) px
    scores: dict[str, float]  # invalid/false/proper, or the single non-semantic score

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(2)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(
            self, "scores", _check_scores(self.scores, (JUNCTION_SCORE_LABELS, (NONSEMANTIC_LABEL,)))
        )


@dataclass(frozen=True)
class ScoredSegment:
    """Scored line segment, either raw (pixel endpoints) or matched (junction indices)."""

    scores: dict[str, float]
    endpoints: np.ndarray | None = None  # (2, 2) px, raw form
    junctions: tuple[int, int] | None = None  # matched form

    def __post_init__(self):
        if (self.endpoints is None) == (self.junctions is None):
            raise ValueError("segment needs exactly one of endpoints or junction indices")
        if self.endpoints is not None:
            pts = np.array(self.endpoints, dtype=float).reshape(2, 2)
            pts.setflags(write=False)
            object.__setattr__(self, "endpoints", pts)
        else:
            a, b = self.junctions
            object.__setattr__(self, "junctions", (int(a), int(b)))
        object.__setattr__(
            self, "scores", _check_scores(self.scores, (LINE_SCORE_LABELS, (NONSEMANTIC_LABEL,)))
        )


@dataclass(frozen=True)
class Wireframe2D:
    """Junction-matched wireframe; segments reference junction indices."""

    junctions: tuple[ScoredJunction, ...]
    segments: tuple[ScoredSegment, ...]

    def __post_init__(self):
        object.__setattr__(self, "junctions", tuple(self.junctions))
        object.__setattr__(self, "segments", tuple(self.segments))
        seen = set()
        for segment in self.segments:
            if segment.junctions is None:
                raise ValueError("wireframe segments must be in matched form")
            a, b = segment.junctions
            if a == b or not (0 <= a < len(self.junctions)) or not (0 <= b < len(self.junctions)):
                raise ValueError(f"segment references invalid junctions ({a}, {b})")
            pair = (min(a, b), max(a, b))
            if pair in seen:
                raise ValueError(f"duplicate segment for junction pair {pair}")
            seen.add(pair)


@dataclass(frozen=True)
class Graph:
    node_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = set()
        for a, b in self.edges:
            if a == b:
                raise ValueError("self-loop in graph")
            pair = (min(a, b), max(a, b))
            if pair in seen:
                raise ValueError(f"duplicate edge {pair}")
            seen.add(pair)
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))


def match_to_junctions(
    segments: list[ScoredSegment],
    junctions: list[ScoredJunction],
    tau: float = MATCH_TAU,
) -> tuple[Wireframe2D, int]:
    """Snap raw segment endpoints to their nearest junctions.

    A segment survives when both endpoint distances are strictly below tau
    and the matched junctions differ; duplicated junction pairs collapse into
    one segment keeping per-label maximum scores. Coordinates are expected in
    the 128x128 evaluation frame, where tau = 10 is meaningful. Returns the
    wireframe plus the number of dropped segments.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    junctions = list(junctions)
    dropped = 0
    merged: dict[tuple[int, int], dict[str, float]] = {}
    if junctions:
        jpos = np.array([j.position for j in junctions])
        for segment in segments:
            if segment.endpoints is None:
                raise ValueError("match_to_junctions expects endpoint-form segments")
            d = np.linalg.norm(jpos[None, :, :] - segment.endpoints[:, None, :], axis=2)
            i1 = int(np.argmin(d[0]))
            i2 = int(np.argmin(d[1]))
            if d[0, i1] >= tau or d[1, i2] >= tau or i1 == i2:
                dropped += 1
                continue
            pair = (min(i1, i2), max(i1, i2))
            if pair in merged:
                merged[pair] = {
                    k: max(v, merged[pair][k]) for k, v in segment.scores.items()
                }
            else:
                merged[pair] = dict(segment.scores)
    else:
        dropped = len(segments)

    matched = tuple(
        ScoredSegment(scores=scores, junctions=pair) for pair, scores in merged.items()
    )
    return Wireframe2D(junctions=tuple(junctions), segments=matched), dropped


def junction_graph(wireframe: Wireframe2D) -> Graph:
    """Nodes are junctions, edges are the wireframe segments."""
    return Graph(
        node_count=len(wireframe.junctions),
        edges=tuple(s.junctions for s in wireframe.segments),
    )


def line_graph(wireframe: Wireframe2D) -> Graph:
    """Graph on segments, adjacent when two segments share a junction."""
    incident: dict[int, list[int]] = {}
    for idx, segment in enumerate(wireframe.segments):
        for j in segment.junctions:
            incident.setdefault(j, []).append(idx)
    edges = set()
    for members in incident.values():
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                edges.add((min(a, b), max(a, b)))
    return Graph(node_count=len(wireframe.segments), edges=tuple(sorted(edges)))


def to_nonsemantic(wireframe: Wireframe2D) -> Wireframe2D:
    """Collapse every score map to the single score 1 - invalid."""
    junctions = tuple(
        ScoredJunction(j.position, {NONSEMANTIC_LABEL: 1.0 - j.scores["invalid"]})
        for j in wireframe.junctions
    )
    segments = tuple(
        ScoredSegment(
            scores={NONSEMANTIC_LABEL: 1.0 - s.scores["invalid"]}, junctions=s.junctions
        )
        for s in wireframe.segments
    )
    return Wireframe2D(junctions=junctions, segments=segments)


@dataclass(frozen=True)
class ViewPrediction:
    """One view's raw prediction file: scored junctions plus raw segments."""

    view_id: str
    width: int
    height: int
    junctions: tuple[ScoredJunction, ...]
    segments: tuple[ScoredSegment, ...]


def load_prediction(path) -> ViewPrediction:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        junctions = tuple(
            ScoredJunction(np.array(j["xy"], dtype=float), dict(j["scores"]))
            for j in raw["junctions"]
        )
        segments = tuple(
            ScoredSegment(
                scores=dict(s["scores"]),
                endpoints=np.array(s["xy"], dtype=float).reshape(2, 2),
            )
            for s in raw["segments"]
        )
        return ViewPrediction(
            view_id=str(raw["view_id"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
            junctions=junctions,
            segments=segments,
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_prediction(pred: ViewPrediction, path) -> None:
    payload = {
        "view_id": pred.view_id,
        "width": pred.width,
        "height": pred.height,
        "junctions": [
            {"xy": [float(j.position[0]), float(j.position[1])], "scores": j.scores}
            for j in pred.junctions
        ],
        "segments": [
            {"xy": [float(v) for v in s.endpoints.reshape(-1)], "scores": s.scores}
            for s in pred.segments
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
