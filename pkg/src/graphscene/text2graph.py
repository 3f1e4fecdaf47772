"""Deterministic keyword-rule adapter from text prompts to scene graphs.

Stands in for an external language model so the endpoint is testable offline;
real adapters plug in behind the same ``prompt -> SceneGraph`` contract.
"""

from __future__ import annotations

import re

from .graph import Edge, EDGE_ROAD, InstanceNode, ROAD_NODE_ID, SceneGraph

_NUMBER_WORDS = {
    "a": 1, "an": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12,
}

_CLASS_WORDS = {
    "car": "Vehicle", "cars": "Vehicle", "vehicle": "Vehicle", "vehicles": "Vehicle",
    "truck": "Vehicle", "trucks": "Vehicle",
    "pedestrian": "Pedestrian", "pedestrians": "Pedestrian",
    "person": "Pedestrian", "people": "Pedestrian", "walker": "Pedestrian",
    "walkers": "Pedestrian",
    "pole": "Pole", "poles": "Pole", "lamp": "Pole", "lamps": "Pole",
    "streetlight": "Pole", "streetlights": "Pole",
}

_ROAD_WORDS = {
    "crossroad": "Crossroad", "crossroads": "Crossroad", "intersection": "Crossroad",
    "t-junction": "TJunction", "junction": "TJunction",
    "bend": "BendRoad", "curve": "BendRoad", "curved": "BendRoad",
    "straight": "StraightRoad",
}

_ID_PREFIX = {"Vehicle": "veh", "Pedestrian": "ped", "Pole": "pol"}


class AdapterError(ValueError):
    pass


def text_to_graph(prompt: str) -> SceneGraph:
    """Parse counts and a road type out of a prompt with fixed keyword rules.

    Generated nodes carry no position (the localization head places them);
    each gets a road-connectivity edge. Empty prompts are rejected.
    """
    if not prompt or not prompt.strip():
        raise AdapterError("empty prompt")
    tokens = re.findall(r"[a-z0-9-]+", prompt.lower())

    road_type = "StraightRoad"
    for tok in tokens:
        if tok in _ROAD_WORDS:
            road_type = _ROAD_WORDS[tok]
            break

    counts: dict[str, int] = {}
    pending = 1
    for tok in tokens:
        if tok.isdigit():
            pending = int(tok)
        elif tok in _NUMBER_WORDS:
            pending = _NUMBER_WORDS[tok]
        elif tok in _CLASS_WORDS:
            cls = _CLASS_WORDS[tok]
            counts[cls] = counts.get(cls, 0) + pending
            pending = 1

    instances, edges = [], []
    for cls, n in counts.items():
        for i in range(n):
            nid = f"{_ID_PREFIX[cls]}{i}"
            instances.append(InstanceNode(id=nid, class_label=cls, patch=None))
            edges.append(Edge(EDGE_ROAD, nid, ROAD_NODE_ID))
    return SceneGraph.create(road_type, instances, edges,
                             meta={"source": "text2graph", "prompt": prompt})
