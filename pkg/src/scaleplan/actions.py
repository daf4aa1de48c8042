"""Action auto-labeling on lane graphs.

A lane graph is a set of lanelets (centerline polylines in meters, optional
polygons) joined by directed edges that are either ``longitudinal`` (drive on
into the next lanelet) or ``lateral-left`` / ``lateral-right`` (change into
the neighbouring lane). From the ego's start lanelet we enumerate anchor
paths, pick the one that best matches the driven path, and read actions off
it: a turn wherever the path leaves a node that has several longitudinal
successors, a lane change wherever it crosses a lateral edge. Labels from
overlapping snapshots are consolidated by majority vote.

Geometry (buffering, clipping, areas) is delegated to shapely.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import shapely
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import substring, unary_union

from .errors import DataError, DegenerateInput, InvalidLabel, InvalidParams, ShapeError, UnknownLanelet

log = logging.getLogger(__name__)

EDGE_TYPES = ("longitudinal", "lateral-left", "lateral-right")
ACTION_TYPES = ("lane_change_left", "lane_change_right", "turn")  # one-hot order of A
NONE_ACTION = "none"
LANE_HALF_WIDTH = 1.75  # polygon fallback when a lanelet has none
LANE_CHANGE_FRACTION = 0.5  # where, along the remaining lanelet, a lateral move happens
QUAD_SEGS = 4  # 4 segments per quarter circle = 8 per semicircle cap
HEADING_WINDOW = 5.0  # meters used by the local linear approximation
RESAMPLE_STEP = 0.5
DEFAULT_MAX_PATHS = 256
MIN_EGO_LENGTH = 1e-9  # meters; shorter ego paths have no usable geometry


class AnchorOverflowWarning(UserWarning):
    """More anchor paths exist than the branch cap allows."""


class VoteTieWarning(UserWarning):
    """A label group had no unique modal action type and was dropped."""


# -- graph ------------------------------------------------------------------


@dataclass(frozen=True)
class Lanelet:
    lanelet_id: str
    centerline: LineString
    polygon: Polygon

    @property
    def length(self) -> float:
        return self.centerline.length


class LaneGraph:
    """Immutable lanelet graph with typed directed edges."""

    def __init__(self, lanelets: Iterable[Lanelet], edges: Iterable[tuple[str, str, str]]):
        self.lanelets: dict[str, Lanelet] = {}
        for ll in lanelets:
            if ll.lanelet_id in self.lanelets:
                raise DataError(f"duplicate lanelet id {ll.lanelet_id!r}")
            self.lanelets[ll.lanelet_id] = ll
        self._out: dict[str, list[tuple[str, str]]] = {lid: [] for lid in self.lanelets}
        self.edges: list[tuple[str, str, str]] = []
        for src, dst, kind in edges:
            if kind not in EDGE_TYPES:
                raise DataError(f"unknown edge type {kind!r}; expected one of {EDGE_TYPES}")
            for end in (src, dst):
                if end not in self.lanelets:
                    raise DataError(f"edge references missing lanelet {end!r}")
            if src == dst:
                raise DataError(f"self-loop on lanelet {src!r}")
            if (dst, kind) not in self._out[src]:
                self._out[src].append((dst, kind))
                self.edges.append((src, dst, kind))

    @classmethod
    def from_dict(cls, data: Mapping) -> "LaneGraph":
        try:
            raw_lanelets = data["lanelets"]
            raw_edges = data.get("edges", [])
        except (KeyError, TypeError) as exc:
            raise DataError(f"lane graph needs a 'lanelets' list: {exc}") from None
        lanelets = []
        for item in raw_lanelets:
            lid = str(item["id"])
            pts = np.asarray(item.get("centerline", []), dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2 or not np.all(np.isfinite(pts)):
                raise DataError(f"lanelet {lid!r} needs a centerline of >= 2 finite [x, y] points")
            line = LineString(pts)
            if line.length <= 0:
                raise DataError(f"lanelet {lid!r} has a zero-length centerline")
            if item.get("polygon"):
                poly = Polygon(np.asarray(item["polygon"], dtype=float))
                if not poly.is_valid or poly.area <= 0:
                    raise DataError(f"lanelet {lid!r} has an invalid polygon")
            else:
                poly = line.buffer(LANE_HALF_WIDTH, quad_segs=QUAD_SEGS, cap_style="flat")
            lanelets.append(Lanelet(lid, line, poly))
        edges = []
        for e in raw_edges:
            try:
                edges.append((str(e["from"]), str(e["to"]), str(e["type"])))
            except KeyError as exc:
                raise DataError(f"edge is missing field {exc}") from None
        return cls(lanelets, edges)

    def to_dict(self) -> dict:
        return {
            "lanelets": [
                {
                    "id": ll.lanelet_id,
                    "centerline": [list(p) for p in ll.centerline.coords],
                    "polygon": [list(p) for p in ll.polygon.exterior.coords],
                }
                for ll in self.lanelets.values()
            ],
            "edges": [{"from": s, "to": d, "type": k} for s, d, k in self.edges],
        }

    def __getitem__(self, lanelet_id: str) -> Lanelet:
        try:
            return self.lanelets[lanelet_id]
        except KeyError:
            raise UnknownLanelet(f"unknown lanelet {lanelet_id!r}") from None

    def __contains__(self, lanelet_id) -> bool:
        return lanelet_id in self.lanelets

    def successors(self, lanelet_id: str, kind: str | None = None) -> list[str]:
        self[lanelet_id]
        return [d for d, k in self._out[lanelet_id] if kind is None or k == kind]

    def edge_type(self, src: str, dst: str) -> str | None:
        for d, k in self._out.get(src, ()):
            if d == dst:
                return k
        return None

    def locate(self, point: Sequence[float]) -> tuple[str, float]:
        """Lanelet containing ``point`` (closest centerline on ties / misses) and arc position on it."""
        p = Point(float(point[0]), float(point[1]))
        candidates = [ll for ll in self.lanelets.values() if ll.polygon.covers(p)] or list(self.lanelets.values())
        best = min(candidates, key=lambda ll: (ll.centerline.distance(p), ll.lanelet_id))
        return best.lanelet_id, float(best.centerline.project(p))


# -- anchor paths -----------------------------------------------------------


@dataclass(frozen=True)
class AnchorPath:
    """A candidate future route: lanelet ids, edge types, and per-lanelet spans.

    ``segments`` holds ``(lanelet_id, s_start, s_end)`` in meters along each
    lanelet's own centerline. A lateral edge is traversed part way along the
    lanelet, so the next segment starts at the projected position on the
    neighbouring lane rather than at 0.
    """

    lanelet_ids: tuple[str, ...]
    edge_types: tuple[str, ...]
    segments: tuple[tuple[str, float, float], ...]
    polyline: np.ndarray = field(compare=False, repr=False)
    corridor: object = field(compare=False, repr=False)

    @property
    def length(self) -> float:
        return float(sum(s1 - s0 for _, s0, s1 in self.segments))

    @property
    def key(self) -> tuple:
        return (self.lanelet_ids, self.edge_types)

    def line(self) -> LineString:
        return LineString(self.polyline)


def _build_anchor(graph: LaneGraph, segments: list[tuple[str, float, float]], edge_types: list[str]) -> AnchorPath:
    coords: list[tuple[float, float]] = []
    for lid, s0, s1 in segments:
        piece = substring(graph[lid].centerline, s0, s1)
        pts = list(piece.coords) if piece.geom_type == "LineString" else [piece.coords[0]]
        if coords and np.allclose(coords[-1], pts[0]):
            pts = pts[1:]
        coords.extend(pts)
    if len(coords) < 2:
        coords.append(coords[0])
    ids = tuple(lid for lid, _, _ in segments)
    corridor = unary_union([graph[lid].polygon for lid in dict.fromkeys(ids)])
    return AnchorPath(
        lanelet_ids=ids,
        edge_types=tuple(edge_types),
        segments=tuple((lid, float(s0), float(s1)) for lid, s0, s1 in segments),
        polyline=np.asarray(coords, dtype=float),
        corridor=corridor,
    )


def enumerate_anchor_paths(
    graph: LaneGraph,
    start: str,
    horizon: float,
    max_paths: int = DEFAULT_MAX_PATHS,
    start_s: float = 0.0,
) -> list[AnchorPath]:
    """All simple lanelet paths from ``start`` over ``horizon`` meters of centerline.

    A path is closed once its centerline length reaches the horizon (the last
    segment is clipped there) or when it reaches a lanelet with no unvisited
    longitudinal successor. Lateral moves are branched on as well, each
    happening halfway along the rest of the current lanelet. At most
    ``max_paths`` paths are returned; hitting the cap emits
    :class:`AnchorOverflowWarning`.
    """
    graph[start]
    if not horizon > 0:
        raise InvalidParams(f"horizon must be > 0, got {horizon}")
    if max_paths < 1:
        raise InvalidParams("max_paths must be >= 1")
    start_s = min(max(float(start_s), 0.0), graph[start].length)

    found: dict[tuple, AnchorPath] = {}
    overflow = False

    def emit(segments, edge_types) -> None:
        nonlocal overflow
        anchor = _build_anchor(graph, segments, edge_types)
        if anchor.key in found:
            return
        if len(found) >= max_paths:
            overflow = True
            return
        found[anchor.key] = anchor

    def walk(lid: str, s_in: float, covered: float, segments: list, edge_types: list, visited: frozenset) -> None:
        if overflow:
            return
        length = graph[lid].length
        remaining = length - s_in
        if covered + remaining >= horizon:
            emit(segments + [(lid, s_in, s_in + (horizon - covered))], edge_types)
        else:
            nexts = [n for n in graph.successors(lid, "longitudinal") if n not in visited]
            if not nexts:
                emit(segments + [(lid, s_in, length)], edge_types)
            for n in nexts:
                walk(n, 0.0, covered + remaining, segments + [(lid, s_in, length)], edge_types + ["longitudinal"], visited | {n})
        s_change = s_in + LANE_CHANGE_FRACTION * remaining
        if covered + (s_change - s_in) >= horizon:
            return
        for kind in ("lateral-left", "lateral-right"):
            for n in graph.successors(lid, kind):
                if n in visited:
                    continue
                here = graph[lid].centerline.interpolate(s_change)
                s_next = float(graph[n].centerline.project(here))
                walk(n, s_next, covered + (s_change - s_in), segments + [(lid, s_in, s_change)], edge_types + [kind], visited | {n})

    walk(start, start_s, 0.0, [], [], frozenset([start]))
    if overflow:
        msg = f"anchor path enumeration from {start!r} hit the branch cap of {max_paths}"
        log.warning(msg)
        warnings.warn(msg, AnchorOverflowWarning, stacklevel=2)
    return list(found.values())


# -- matching ---------------------------------------------------------------


def _as_line(path) -> LineString:
    if isinstance(path, AnchorPath):
        return path.line()
    if isinstance(path, LineString):
        return path
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise DegenerateInput("a path needs at least two [x, y] points")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("path has non-finite coordinates")
    return LineString(pts)


def iou_score(ego, anchor, buffer: float = 1.0, cap_style: str = "round") -> float:
    """Area IoU of the two paths, each buffered by ``buffer`` meters."""
    a = _as_line(ego).buffer(buffer, quad_segs=QUAD_SEGS, cap_style=cap_style)
    b = _as_line(anchor).buffer(buffer, quad_segs=QUAD_SEGS, cap_style=cap_style)
    union = a.union(b).area
    return float(a.intersection(b).area / union) if union > 0 else 0.0


def inside_fraction(ego, anchor: AnchorPath) -> float:
    """Fraction of the ego path's arc length that lies inside the anchor's lanelets."""
    line = _as_line(ego)
    return float(min(line.intersection(anchor.corridor).length / line.length, 1.0))


def match_score(
    ego,
    anchor: AnchorPath,
    alpha: float = 0.5,
    buffer: float = 1.0,
    cap_style: str = "round",
) -> float:
    """``alpha * s_IoU + (1 - alpha) * s_LI`` for an ego path against an anchor path."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParams(f"alpha must be in [0, 1], got {alpha}")
    if not buffer > 0:
        raise InvalidParams(f"buffer must be > 0, got {buffer}")
    line = _as_line(ego)
    if not line.length >= MIN_EGO_LENGTH:
        raise DegenerateInput("ego path has zero length")
    s_iou = iou_score(line, anchor, buffer, cap_style) if alpha > 0 else 0.0
    s_li = inside_fraction(line, anchor) if alpha < 1 else 0.0
    return float(min(max(alpha * s_iou + (1.0 - alpha) * s_li, 0.0), 1.0))


def best_anchor(ego, anchors: Sequence[AnchorPath], alpha: float = 0.5, buffer: float = 1.0) -> tuple[AnchorPath, float]:
    """Highest-scoring anchor; ties go to the first in enumeration order."""
    if not anchors:
        raise DegenerateInput("no anchor paths to match against")
    scores = [match_score(ego, a, alpha, buffer) for a in anchors]
    i = int(np.argmax(scores))
    return anchors[i], scores[i]


# -- headings ---------------------------------------------------------------


def _wrap_deg(angle: float) -> float:
    """Map an angle in degrees to (-180, 180]."""
    a = math.fmod(angle, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def _resample(line: LineString, s0: float, s1: float, step: float = RESAMPLE_STEP) -> np.ndarray:
    n = max(int(math.ceil((s1 - s0) / step)), 1) + 1
    return np.array([line.interpolate(s).coords[0] for s in np.linspace(s0, s1, n)])


def _line_direction(points: np.ndarray) -> np.ndarray:
    """Unit direction of the least-squares line through ``points``, oriented first -> last."""
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    d = vt[0]
    if np.dot(d, points[-1] - points[0]) < 0:
        d = -d
    return d


def lanelet_heading(line: LineString, end: str, method: str = "local", window: float = HEADING_WINDOW) -> float:
    """Heading in degrees at the ``start`` or ``end`` of a centerline.

    ``local`` fits a line through the first/last ``window`` meters; ``global``
    uses the chord between the centerline's endpoints.
    """
    if method == "global":
        (x0, y0), (x1, y1) = line.coords[0], line.coords[-1]
        return math.degrees(math.atan2(y1 - y0, x1 - x0))
    if method != "local":
        raise InvalidParams(f"unknown heading method {method!r}")
    L = line.length
    w = min(window, L)
    pts = _resample(line, L - w, L) if end == "end" else _resample(line, 0.0, w)
    d = _line_direction(pts)
    return math.degrees(math.atan2(d[1], d[0]))


def turn_angle(graph: LaneGraph, incoming: str, outgoing: str, method: str = "local") -> float:
    """Signed heading change (degrees, left positive) from ``incoming`` into ``outgoing``."""
    h_in = lanelet_heading(graph[incoming].centerline, "end", method)
    h_out = lanelet_heading(graph[outgoing].centerline, "start", method)
    return _wrap_deg(h_out - h_in)


# -- labels -----------------------------------------------------------------


@dataclass(frozen=True)
class ActionLabel:
    action_type: str
    distance: float
    angle: float = 0.0

    def __post_init__(self) -> None:
        if self.action_type not in ACTION_TYPES + (NONE_ACTION,):
            raise InvalidLabel(f"unknown action type {self.action_type!r}")
        if not (math.isfinite(self.distance) and self.distance >= 0):
            raise InvalidLabel(f"action distance must be >= 0, got {self.distance}")
        if not math.isfinite(self.angle):
            raise InvalidLabel("action angle must be finite")
        object.__setattr__(self, "distance", float(self.distance))
        object.__setattr__(self, "angle", _wrap_deg(float(self.angle)))


def detect_actions(graph: LaneGraph, anchor: AnchorPath, offset: float = 0.0, method: str = "local") -> list[ActionLabel]:
    """Actions along an anchor path, positioned in the global arc-length frame.

    ``offset`` is the driven distance from the session start to the anchor's
    first point. An empty list means lane keeping throughout.
    """
    labels = []
    position = offset
    for i, kind in enumerate(anchor.edge_types):
        lid, s0, s1 = anchor.segments[i]
        nxt = anchor.lanelet_ids[i + 1]
        position += s1 - s0
        if kind == "longitudinal":
            if len(graph.successors(lid, "longitudinal")) >= 2:
                labels.append(ActionLabel("turn", position, turn_angle(graph, lid, nxt, method)))
        elif kind == "lateral-left":
            labels.append(ActionLabel("lane_change_left", position))
        elif kind == "lateral-right":
            labels.append(ActionLabel("lane_change_right", position))
    return labels


@dataclass
class VoteResult:
    labels: list[ActionLabel]
    ties: int = 0
    groups: int = 0


def vote_labels(snapshots: Iterable[Iterable[ActionLabel]], tolerance: float = 2.0) -> VoteResult:
    """Merge labels from overlapping snapshots.

    Labels whose positions chain within ``tolerance`` meters form one group
    (single linkage). A group keeps its modal action type with the median
    distance and angle of the agreeing votes; a group without a unique mode is
    dropped and counted in ``ties``. The result does not depend on snapshot
    order.
    """
    if tolerance < 0:
        raise InvalidParams("tolerance must be >= 0")
    flat = sorted(
        (lab for snap in snapshots for lab in snap),
        key=lambda l: (l.distance, l.action_type, l.angle),
    )
    groups: list[list[ActionLabel]] = []
    for lab in flat:
        if groups and lab.distance - groups[-1][-1].distance <= tolerance:
            groups[-1].append(lab)
        else:
            groups.append([lab])
    out, ties = [], 0
    for g in groups:
        counts = Counter(l.action_type for l in g).most_common()
        if len(counts) > 1 and counts[0][1] == counts[1][1]:
            ties += 1
            msg = f"label tie at ~{g[0].distance:.1f} m between {sorted(t for t, c in counts if c == counts[0][1])}"
            log.warning(msg)
            warnings.warn(msg, VoteTieWarning, stacklevel=2)
            continue
        winner = counts[0][0]
        members = [l for l in g if l.action_type == winner]
        out.append(
            ActionLabel(
                winner,
                float(np.median([l.distance for l in members])),
                float(np.median([l.angle for l in members])),
            )
        )
    return VoteResult(labels=out, ties=ties, groups=len(groups))


# -- quality audit ----------------------------------------------------------


@dataclass
class AuditBin:
    low: float
    high: float
    count: int
    agree: int

    @property
    def ratio(self) -> float:
        return self.agree / self.count if self.count else float("nan")


@dataclass
class TurnAudit:
    bins: list[AuditBin]
    tolerance: float
    non_increasing: bool  # diagnostic only: sharper turns are expected to agree less

    def ratios(self) -> list[float]:
        return [b.ratio for b in self.bins]


def audit_turn_angles(local, global_, bin_width: float = 30.0, tolerance: float = 15.0) -> TurnAudit:
    """Agreement of local vs global turn angles, binned by global turn sharpness ``|angle|``."""
    local = np.asarray(local, dtype=float)
    global_ = np.asarray(global_, dtype=float)
    if local.shape != global_.shape or local.ndim != 1:
        raise ShapeError(f"angle lists must be paired 1-D arrays, got {local.shape} and {global_.shape}")
    if not bin_width > 0:
        raise InvalidParams("bin_width must be > 0")
    diff = np.abs((local - global_ + 180.0) % 360.0 - 180.0)
    sharp = np.abs(global_)
    n_bins = max(int(math.ceil(180.0 / bin_width)), 1)
    idx = np.minimum((sharp // bin_width).astype(int), n_bins - 1)
    bins = []
    for b in range(n_bins):
        mask = idx == b
        bins.append(AuditBin(b * bin_width, min((b + 1) * bin_width, 180.0), int(mask.sum()), int((diff[mask] <= tolerance).sum())))
    filled = [b.ratio for b in bins if b.count]
    monotone = all(a >= c for a, c in zip(filled, filled[1:]))
    if not monotone:
        log.info("turn-angle agreement is not monotone in turn sharpness")
    return TurnAudit(bins=bins, tolerance=tolerance, non_increasing=monotone)


# -- feature encoding -------------------------------------------------------


@dataclass(frozen=True)
class ActionFeatures:
    D: np.ndarray
    A: np.ndarray
    theta: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.D, self.A, self.theta])


def encode_action(label: ActionLabel | None, n_distance_bins: int = 20, max_distance: float = 200.0) -> ActionFeatures:
    """One-hot distance bin, one-hot action type, and ``[sin, cos]`` of the angle.

    Lane keeping (``None`` or a ``none`` label) is all-zero A with D in bin 0
    and angle 0. Distances at or beyond ``max_distance`` fall in the last bin.
    """
    if n_distance_bins < 1:
        raise InvalidParams("n_distance_bins must be >= 1")
    if not max_distance > 0:
        raise InvalidParams("max_distance must be > 0")
    D = np.zeros(n_distance_bins)
    A = np.zeros(len(ACTION_TYPES))
    if label is None or label.action_type == NONE_ACTION:
        D[0] = 1.0
        return ActionFeatures(D, A, np.array([0.0, 1.0]))
    if label.distance < 0:
        raise InvalidLabel("negative action distance")
    D[min(int(math.floor(label.distance / max_distance * n_distance_bins)), n_distance_bins - 1)] = 1.0
    A[ACTION_TYPES.index(label.action_type)] = 1.0
    theta = math.radians(label.angle) if label.action_type == "turn" else 0.0
    return ActionFeatures(D, A, np.array([math.sin(theta), math.cos(theta)]))


@dataclass(frozen=True)
class KinematicState:
    v: float
    a: float
    j: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in (self.v, self.a, self.j)):
            raise InvalidParams("kinematic state must be finite")

    def vector(self) -> np.ndarray:
        return np.array([self.v, self.a, self.j])

    @classmethod
    def from_positions(cls, points, dt: float) -> "KinematicState":
        """Speed, acceleration and jerk at the last sample by backward differences."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
            raise ShapeError("need at least 4 [x, y] samples for jerk")
        if not dt > 0:
            raise InvalidParams("dt must be > 0")
        speed = np.hypot(*np.diff(pts, axis=0).T) / dt
        acc = np.diff(speed) / dt
        jerk = np.diff(acc) / dt
        return cls(float(speed[-1]), float(acc[-1]), float(jerk[-1]))


# -- pipeline ---------------------------------------------------------------


@dataclass(frozen=True)
class Snapshot:
    """One ego path to label; ``offset`` is its driven distance from session start."""

    session_id: str
    path: np.ndarray = field(compare=False)
    offset: float = 0.0
    start_lanelet: str | None = None


def label_snapshot(
    graph: LaneGraph,
    snap: Snapshot,
    alpha: float = 0.5,
    buffer: float = 1.0,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> tuple[list[ActionLabel], AnchorPath, float]:
    """Enumerate anchors from the snapshot's start, keep the best match, detect actions.

    Actions beyond the ego's driven length are dropped (inclusive at the end).
    """
    line = _as_line(snap.path)
    if not line.length >= MIN_EGO_LENGTH:
        raise DegenerateInput(f"session {snap.session_id}: zero-length ego path")
    if snap.start_lanelet is not None:
        start = snap.start_lanelet
        start_s = float(graph[start].centerline.project(Point(line.coords[0])))
    else:
        start, start_s = graph.locate(line.coords[0])
    anchors = enumerate_anchor_paths(graph, start, line.length, max_paths=max_paths, start_s=start_s)
    anchor, score = best_anchor(line, anchors, alpha, buffer)
    limit = snap.offset + line.length
    labels = [l for l in detect_actions(graph, anchor, snap.offset) if l.distance <= limit + 1e-9]
    return labels, anchor, score


def label_sessions(
    graph: LaneGraph,
    snapshots: Iterable[Snapshot],
    alpha: float = 0.5,
    buffer: float = 1.0,
    tolerance: float = 2.0,
) -> list[tuple[str, ActionLabel]]:
    """Label every snapshot and vote per session; rows sorted by session then distance."""
    per_session: dict[str, list[list[ActionLabel]]] = {}
    for snap in snapshots:
        labels, _, _ = label_snapshot(graph, snap, alpha, buffer)
        per_session.setdefault(snap.session_id, []).append(labels)
    rows = []
    for sid in sorted(per_session):
        for lab in vote_labels(per_session[sid], tolerance).labels:
            rows.append((sid, lab))
    return rows
