"""Scene graph data model, validation, adjacency, and canonical JSON.

A scene graph holds one road node (global road layout / background) plus any
number of instance nodes (countable objects with an optional coarse position
on an 8x8 patch grid), linked by proximity and road-connectivity edges. The
canonical JSON form defined here is the contract shared by the CLI, the HTTP
service, and the browser UI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .palette import COUNTABLE_CLASSES, ROAD_TYPES

PATCH_GRID = 8
MAX_NODES = 64

ROAD_NODE_ID = "road"

EDGE_PROXIMITY = "proximity"
EDGE_ROAD = "road"
EDGE_KINDS = (EDGE_PROXIMITY, EDGE_ROAD)


class GraphParseError(ValueError):
    """Raised when scene-graph JSON is structurally malformed."""


class GraphOrderError(ValueError):
    """Raised when a node ordering does not match the graph's node set."""


@dataclass(frozen=True)
class InstanceNode:
    """A countable object: class label plus optional patch-grid position."""

    id: str
    class_label: str
    patch: tuple[int, int] | None = None


@dataclass(frozen=True)
class RoadNode:
    road_type: str


@dataclass(frozen=True)
class Edge:
    kind: str
    a: str
    b: str

    def key(self) -> tuple[str, str, str]:
        lo, hi = sorted((self.a, self.b))
        return (self.kind, lo, hi)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    subject: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "message": self.message, "subject": self.subject}


@dataclass
class SceneGraph:
    """Scene graph: road node(s), instance nodes, edges, provenance metadata.

    A valid graph has exactly one road node; the list form exists so that
    malformed graphs are representable and reported by ``validate_graph``
    instead of being unconstructible.
    """

    roads: list[RoadNode]
    instances: list[InstanceNode] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def create(cls, road_type: str, instances: Iterable[InstanceNode] = (),
               edges: Iterable[Edge] = (), meta: dict[str, Any] | None = None) -> "SceneGraph":
        return cls(roads=[RoadNode(road_type)], instances=list(instances),
                   edges=list(edges), meta=dict(meta or {}))

    @property
    def road(self) -> RoadNode:
        if not self.roads:
            raise ValueError("graph has no road node")
        return self.roads[0]

    def node_ids(self) -> list[str]:
        """Node ids in canonical order: road node first, instances as listed."""
        return [ROAD_NODE_ID] + [n.id for n in self.instances]

    def instance(self, node_id: str) -> InstanceNode:
        for n in self.instances:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def _canon(self) -> tuple:
        return (
            tuple(r.road_type for r in self.roads),
            tuple(sorted((n.id, n.class_label, n.patch) for n in self.instances)),
            tuple(sorted(e.key() for e in self.edges)),
            json.dumps(self.meta, sort_keys=True),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return self._canon() == other._canon()

    def __hash__(self) -> int:
        return hash(self._canon())


def validate_graph(g: SceneGraph) -> list[Violation]:
    """Check every structural invariant; an empty report means the graph is valid.

    Validation never raises: malformed JSON is a deserialization concern
    (``graph_from_json``), everything representable is reported here.
    """
    report: list[Violation] = []
    if len(g.roads) == 0:
        report.append(Violation("missing_road", "graph has no road node"))
    elif len(g.roads) > 1:
        report.append(Violation("duplicate_road", f"duplicate road node (found {len(g.roads)})"))
    for r in g.roads:
        if r.road_type not in ROAD_TYPES:
            report.append(Violation("bad_road_type", f"unknown road type {r.road_type!r}", "road"))

    seen: set[str] = set()
    for n in g.instances:
        if not n.id:
            report.append(Violation("empty_id", "instance node with empty id", n.id))
        if n.id == ROAD_NODE_ID:
            report.append(Violation("reserved_id", f"instance id {n.id!r} is reserved", n.id))
        if n.id in seen:
            report.append(Violation("duplicate_id", f"duplicate node id {n.id!r}", n.id))
        seen.add(n.id)
        if n.class_label not in COUNTABLE_CLASSES:
            report.append(Violation(
                "bad_class", f"class {n.class_label!r} is not countable", n.id))
        if n.patch is not None:
            r, c = n.patch
            if not (0 <= r < PATCH_GRID and 0 <= c < PATCH_GRID):
                report.append(Violation(
                    "patch_range", f"patch {n.patch!r} outside {PATCH_GRID}x{PATCH_GRID} grid", n.id))

    n_nodes = len(g.roads) + len(g.instances)
    if n_nodes > MAX_NODES:
        report.append(Violation("too_many_nodes", f"{n_nodes} nodes exceeds limit {MAX_NODES}"))

    known = set(seen) | ({ROAD_NODE_ID} if g.roads else set())
    edge_keys: set[tuple[str, str, str]] = set()
    for e in g.edges:
        tag = f"{e.kind}({e.a},{e.b})"
        if e.kind not in EDGE_KINDS:
            report.append(Violation("bad_edge_kind", f"unknown edge kind {e.kind!r}", tag))
            continue
        for end in (e.a, e.b):
            if end not in known:
                report.append(Violation("dangling_endpoint", f"dangling endpoint {end!r}", tag))
        if e.a == e.b:
            report.append(Violation("self_edge", "self-edge not allowed", tag))
        touches_road = ROAD_NODE_ID in (e.a, e.b)
        if e.kind == EDGE_PROXIMITY and touches_road:
            report.append(Violation(
                "proximity_road", "proximity edge must connect two instance nodes", tag))
        if e.kind == EDGE_ROAD and not touches_road:
            report.append(Violation(
                "road_edge_endpoints", "road edge must connect an instance to the road node", tag))
        key = e.key()
        if key in edge_keys:
            report.append(Violation("duplicate_edge", f"duplicate edge {tag}", tag))
        edge_keys.add(key)
    return report


def adjacency(g: SceneGraph, node_order: list[str] | None = None) -> np.ndarray:
    """Dense symmetric 0/1 adjacency over ``node_order`` (defaults to graph order)."""
    order = list(node_order) if node_order is not None else g.node_ids()
    ids = g.node_ids()
    if sorted(order) != sorted(ids):
        raise GraphOrderError("node_order is not a permutation of the graph's node ids")
    pos = {nid: i for i, nid in enumerate(order)}
    n = len(order)
    mat = np.zeros((n, n), dtype=np.int64)
    for e in g.edges:
        i, j = pos[e.a], pos[e.b]
        mat[i, j] = 1
        mat[j, i] = 1
    np.fill_diagonal(mat, 0)
    return mat


def _canonical_obj(g: SceneGraph) -> dict[str, Any]:
    inst = sorted(g.instances, key=lambda n: n.id)
    edges = sorted(g.edges, key=lambda e: e.key())
    return {
        "road": {"type": g.road.road_type},
        "instances": [
            {"id": n.id, "class": n.class_label,
             "patch": list(n.patch) if n.patch is not None else None}
            for n in inst
        ],
        "edges": [{"kind": e.kind, "a": e.a, "b": e.b} for e in edges],
        "meta": g.meta,
    }


def graph_to_json(g: SceneGraph) -> str:
    """Serialize to canonical JSON: nodes sorted by id, edges lexicographically."""
    return json.dumps(_canonical_obj(g), sort_keys=True, separators=(",", ":"))


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise GraphParseError(f"{path}: {msg}")


def graph_from_json(text: str) -> SceneGraph:
    """Parse canonical scene-graph JSON.

    Raises :class:`GraphParseError` naming the offending field for structural
    problems (wrong types, unknown enum values). Graph-level semantics such as
    duplicate ids or dangling edges are left to :func:`validate_graph`.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphParseError(f"malformed JSON: {e}") from e
    _require(isinstance(obj, dict), "$", "expected a JSON object")

    road_obj = obj.get("road")
    _require(isinstance(road_obj, dict), "road", "expected an object")
    rtype = road_obj.get("type")
    _require(isinstance(rtype, str) and rtype in ROAD_TYPES,
             "road.type", f"unknown road type {rtype!r}; expected one of {ROAD_TYPES}")

    instances: list[InstanceNode] = []
    raw_instances = obj.get("instances", [])
    _require(isinstance(raw_instances, list), "instances", "expected a list")
    for i, raw in enumerate(raw_instances):
        path = f"instances[{i}]"
        _require(isinstance(raw, dict), path, "expected an object")
        nid = raw.get("id")
        _require(isinstance(nid, str), f"{path}.id", "expected a string")
        cls = raw.get("class")
        _require(isinstance(cls, str) and cls in COUNTABLE_CLASSES,
                 f"{path}.class", f"unknown class {cls!r}; expected one of {COUNTABLE_CLASSES}")
        patch_raw = raw.get("patch")
        patch: tuple[int, int] | None
        if patch_raw is None:
            patch = None
        else:
            _require(isinstance(patch_raw, list) and len(patch_raw) == 2
                     and all(isinstance(v, int) and not isinstance(v, bool) for v in patch_raw),
                     f"{path}.patch", "expected [row, col] integers or null")
            patch = (patch_raw[0], patch_raw[1])
        instances.append(InstanceNode(id=nid, class_label=cls, patch=patch))

    edges: list[Edge] = []
    raw_edges = obj.get("edges", [])
    _require(isinstance(raw_edges, list), "edges", "expected a list")
    for i, raw in enumerate(raw_edges):
        path = f"edges[{i}]"
        _require(isinstance(raw, dict), path, "expected an object")
        kind = raw.get("kind")
        _require(kind in EDGE_KINDS, f"{path}.kind",
                 f"unknown edge kind {kind!r}; expected one of {EDGE_KINDS}")
        a, b = raw.get("a"), raw.get("b")
        _require(isinstance(a, str) and isinstance(b, str), f"{path}", "endpoints must be strings")
        edges.append(Edge(kind=kind, a=a, b=b))

    meta = obj.get("meta", {})
    _require(isinstance(meta, dict), "meta", "expected an object")
    return SceneGraph(roads=[RoadNode(rtype)], instances=instances, edges=edges, meta=meta)


def isomorphic(a: SceneGraph, b: SceneGraph) -> bool:
    """Structural equivalence up to instance-id relabeling.

    Requires equal road type, equal class multisets, and edge sets that match
    under some class-preserving id bijection. Patch positions are ignored.
    Search is brute force over per-class permutations; fine at desk scale.
    """
    from itertools import permutations

    if [r.road_type for r in a.roads] != [r.road_type for r in b.roads]:
        return False
    by_class_a: dict[str, list[str]] = {}
    by_class_b: dict[str, list[str]] = {}
    for n in a.instances:
        by_class_a.setdefault(n.class_label, []).append(n.id)
    for n in b.instances:
        by_class_b.setdefault(n.class_label, []).append(n.id)
    if {k: len(v) for k, v in by_class_a.items()} != {k: len(v) for k, v in by_class_b.items()}:
        return False

    edges_b = {e.key() for e in b.edges}

    classes = sorted(by_class_a)
    perms = [list(permutations(by_class_b[c])) for c in classes]

    def try_assign(level: int, mapping: dict[str, str]) -> bool:
        if level == len(classes):
            mapped = set()
            for e in a.edges:
                ma = mapping.get(e.a, e.a)
                mb = mapping.get(e.b, e.b)
                mapped.add(Edge(e.kind, ma, mb).key())
            return mapped == edges_b
        cls = classes[level]
        for perm in perms[level]:
            m2 = dict(mapping)
            m2.update(zip(by_class_a[cls], perm))
            if try_assign(level + 1, m2):
                return True
        return False

    return try_assign(0, {})
