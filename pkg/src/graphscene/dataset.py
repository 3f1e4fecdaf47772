"""Synthetic paired data: voxel scenes, their scene graphs, and BEV maps.

The generator is the stand-in for a real capture pipeline: it lays out a road
of the requested type, sprinkles background structure, and places countable
objects as fixed-size axis-aligned blobs so that connected-component counting
is an exact oracle. ``extract_graph`` is the inverse direction — it works on
*any* voxel scene and doubles as the evaluation counting oracle's graph side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .graph import (Edge, EDGE_PROXIMITY, EDGE_ROAD, InstanceNode, PATCH_GRID,
                    ROAD_NODE_ID, SceneGraph)
from .palette import (
    COUNTABLE_CLASSES,
    DEFAULT_PALETTE,
    FREE,
    NUM_CLASSES,
    PALETTE_VERSION,
    ROAD,
    ROAD_TYPES,
)
from . import voxio

H = W = 32
D = 8
HB = WB = 32
PATCH_CELLS = HB // PATCH_GRID  # BEV cells per patch-grid cell (4)

DELTA_D = 8.0  # proximity-edge centroid distance threshold, in BEV cells

ROAD_WIDTH = 6
MAX_COUNT = 12

# blob footprint (rows, cols), z base, height
_BLOB_SHAPES = {
    "Vehicle": ((4, 2), 1, 2),
    "Pedestrian": ((1, 1), 1, 2),
    "Pole": ((1, 1), 0, 4),
}

_ID_PREFIX = {"Vehicle": "veh", "Pedestrian": "ped", "Pole": "pol"}

_CONN26 = np.ones((3, 3, 3), dtype=bool)

AUGMENT_OPS = ("rot90", "rot180", "rot270", "flip_h", "flip_v")


class CapacityError(RuntimeError):
    """Placement failed after bounded retries: the scene is too crowded."""


@dataclass
class VoxelScene:
    """H x W x D categorical grid; D is the vertical axis."""

    grid: np.ndarray
    palette_version: str = PALETTE_VERSION

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.uint8)
        if self.grid.ndim != 3:
            raise ValueError(f"expected a 3D grid, got shape {self.grid.shape}")
        if self.grid.max(initial=0) >= NUM_CLASSES:
            raise ValueError("voxel class index outside palette")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VoxelScene):
            return NotImplemented
        return (self.palette_version == other.palette_version
                and np.array_equal(self.grid, other.grid))


@dataclass
class BevMap:
    """Top-down H_b x W_b categorical map."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.uint8)
        if self.grid.ndim != 2:
            raise ValueError(f"expected a 2D grid, got shape {self.grid.shape}")
        if self.grid.max(initial=0) >= NUM_CLASSES:
            raise ValueError("map class index outside palette")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BevMap):
            return NotImplemented
        return np.array_equal(self.grid, other.grid)


@dataclass(frozen=True)
class GenParams:
    road_type: str
    counts: dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.road_type not in ROAD_TYPES:
            raise ValueError(f"unknown road type {self.road_type!r}")
        for cls, n in self.counts.items():
            if cls not in COUNTABLE_CLASSES:
                raise ValueError(f"count for non-countable class {cls!r}")
            if not (0 <= n <= MAX_COUNT):
                raise ValueError(f"count for {cls} must be in [0, {MAX_COUNT}]")


# ---------------------------------------------------------------------------
# road masks


def _band(lo: int, axis: int) -> np.ndarray:
    mask = np.zeros((H, W), dtype=bool)
    if axis == 0:
        mask[lo:lo + ROAD_WIDTH, :] = True
    else:
        mask[:, lo:lo + ROAD_WIDTH] = True
    return mask


def _road_mask(road_type: str, rng: np.random.Generator) -> np.ndarray:
    lo = lambda: int(rng.integers(4, H - ROAD_WIDTH - 4))
    if road_type == "StraightRoad":
        mask = _band(lo(), int(rng.integers(0, 2)))
    elif road_type == "Crossroad":
        mask = _band(lo(), 0) | _band(lo(), 1)
    elif road_type == "TJunction":
        r0 = lo()
        mask = _band(r0, 0)
        c0 = lo()
        stem = np.zeros((H, W), dtype=bool)
        if rng.integers(0, 2) == 0:
            stem[r0:, c0:c0 + ROAD_WIDTH] = True  # stem to bottom border
        else:
            stem[:r0 + ROAD_WIDTH, c0:c0 + ROAD_WIDTH] = True  # stem to top border
        mask = mask | stem
    elif road_type == "BendRoad":
        r0, c0 = lo(), lo()
        mask = np.zeros((H, W), dtype=bool)
        mask[:r0 + ROAD_WIDTH, c0:c0 + ROAD_WIDTH] = True  # from top border down
        mask[r0:r0 + ROAD_WIDTH, c0:] = True  # then out the right border
    else:  # Others: road patch with no border arms
        rad = int(rng.integers(6, 10))
        yy, xx = np.mgrid[0:H, 0:W]
        mask = (yy - H // 2) ** 2 + (xx - W // 2) ** 2 <= rad * rad
    k = int(rng.integers(0, 4))
    if k:
        mask = np.rot90(mask, k)
    if rng.integers(0, 2):
        mask = np.flip(mask, axis=1)
    return np.ascontiguousarray(mask)


# ---------------------------------------------------------------------------
# generation


def _dilate(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))


def _place_box(free_sites: np.ndarray, shape: tuple[int, int],
               rng: np.random.Generator, tries: int = 200) -> tuple[int, int] | None:
    """Pick a top-left corner such that the whole footprint sits on free_sites."""
    hh, ww = shape
    for _ in range(tries):
        r = int(rng.integers(0, H - hh + 1))
        c = int(rng.integers(0, W - ww + 1))
        if free_sites[r:r + hh, c:c + ww].all():
            return r, c
    return None


def generate_scene(params: GenParams) -> tuple[VoxelScene, SceneGraph, BevMap]:
    """Build a synthetic (scene, graph, map) triple, deterministic per seed.

    Countable objects are placed with a one-cell margin against every other
    instance so each blob is exactly one 26-connected component; the returned
    graph is literally ``extract_graph`` of the emitted scene and the map is
    ``project_bev`` of it.
    """
    rng = np.random.default_rng(params.seed)
    grid = np.zeros((H, W, D), dtype=np.uint8)

    road = _road_mask(params.road_type, rng)
    grid[road, 0] = ROAD

    # Background structure: buildings and vegetation off the road. Best effort;
    # background never touches countable counts.
    col_free = ~road
    for _ in range(int(rng.integers(1, 4))):
        bh, bw = int(rng.integers(4, 8)), int(rng.integers(4, 8))
        at = _place_box(col_free, (bh, bw), rng, tries=40)
        if at is None:
            continue
        r, c = at
        height = int(rng.integers(3, 7))
        grid[r:r + bh, c:c + bw, 0:height] = DEFAULT_PALETTE.index("Building")
        col_free[r:r + bh, c:c + bw] = False
    for _ in range(int(rng.integers(0, 4))):
        vh, vw = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        at = _place_box(col_free, (vh, vw), rng, tries=40)
        if at is None:
            continue
        r, c = at
        grid[r:r + vh, c:c + vw, 0:int(rng.integers(1, 3))] = DEFAULT_PALETTE.index("Vegetation")
        col_free[r:r + vh, c:c + vw] = False

    # Instance placement sites per class.
    road_edge = _dilate(road) & ~road  # off-road cells adjacent to road
    instance_blocked = np.zeros((H, W), dtype=bool)  # dilated union of instance footprints

    def place(cls: str) -> None:
        (fh, fw), z0, height = _BLOB_SHAPES[cls]
        for _ in range(200):
            if cls == "Vehicle" and rng.integers(0, 2):
                hh, ww = fw, fh
            else:
                hh, ww = fh, fw
            r = int(rng.integers(0, H - hh + 1))
            c = int(rng.integers(0, W - ww + 1))
            cells = (slice(r, r + hh), slice(c, c + ww))
            if cls == "Pole":
                if not road_edge[cells].all():
                    continue
            else:
                if not road[cells].all():
                    continue
            if instance_blocked[cells].any():
                continue
            if (grid[cells[0], cells[1], max(z0, 1):] != FREE).any():
                continue  # column already holds background
            grid[cells[0], cells[1], z0:z0 + height] = DEFAULT_PALETTE.index(cls)
            footprint = np.zeros((H, W), dtype=bool)
            footprint[cells] = True
            instance_blocked[:] = instance_blocked | _dilate(footprint)
            return
        raise CapacityError(f"could not place {cls} after bounded retries (seed {params.seed})")

    for cls in COUNTABLE_CLASSES:
        for _ in range(params.counts.get(cls, 0)):
            place(cls)

    scene = VoxelScene(grid=grid)
    graph = extract_graph(scene)
    graph.meta["seed"] = params.seed
    bev = project_bev(scene)
    got = {cls: sum(1 for n in graph.instances if n.class_label == cls)
           for cls in COUNTABLE_CLASSES}
    want = {cls: params.counts.get(cls, 0) for cls in COUNTABLE_CLASSES}
    if got != want:
        raise CapacityError(f"instance blobs merged: wanted {want}, extracted {got}")
    if graph.road.road_type != params.road_type:
        raise CapacityError(
            f"road layout classifies as {graph.road.road_type}, wanted {params.road_type}")
    return scene, graph, bev


# ---------------------------------------------------------------------------
# extraction


def road_presence_mask(scene: VoxelScene) -> np.ndarray:
    return (scene.grid == ROAD).any(axis=2)


def road_patch(scene: VoxelScene) -> tuple[int, int] | None:
    """Patch-grid cell containing the road mask's BEV centroid; None if roadless.

    This is the ground-truth anchor for the road node's allocation block, so
    road structure stays controllable even on instance-free graphs.
    """
    mask = road_presence_mask(scene)
    if not mask.any():
        return None
    centroid = np.argwhere(mask).mean(axis=0)
    return (min(int(centroid[0] // PATCH_CELLS), PATCH_GRID - 1),
            min(int(centroid[1] // PATCH_CELLS), PATCH_GRID - 1))


def extract_graph(scene: VoxelScene, delta_d: float = DELTA_D) -> SceneGraph:
    """Recover a scene graph from any voxel scene.

    One instance node per 26-connected component of each countable class;
    patch position is the component's BEV centroid (mean over all voxels)
    snapped to the 8x8 patch grid. Proximity edges join instances whose
    centroids are closer than ``delta_d`` BEV cells; every instance gets a
    road-connectivity edge.
    """
    instances: list[InstanceNode] = []
    centroids: list[np.ndarray] = []
    for cls in COUNTABLE_CLASSES:
        labels, n = ndimage.label(scene.grid == DEFAULT_PALETTE.index(cls), structure=_CONN26)
        for comp in range(1, n + 1):
            vox = np.argwhere(labels == comp)
            centroid = vox[:, :2].mean(axis=0)
            pr = min(int(centroid[0] // PATCH_CELLS), PATCH_GRID - 1)
            pc = min(int(centroid[1] // PATCH_CELLS), PATCH_GRID - 1)
            instances.append(InstanceNode(
                id=f"{_ID_PREFIX[cls]}{len(instances)}", class_label=cls, patch=(pr, pc)))
            centroids.append(centroid)

    edges = [Edge(EDGE_ROAD, n.id, ROAD_NODE_ID) for n in instances]
    thresh_sq = delta_d * delta_d
    for i in range(len(instances)):
        for j in range(i + 1, len(instances)):
            d = centroids[i] - centroids[j]
            if d[0] * d[0] + d[1] * d[1] < thresh_sq:
                edges.append(Edge(EDGE_PROXIMITY, instances[i].id, instances[j].id))

    road_type = classify_road(road_presence_mask(scene))
    return SceneGraph.create(road_type, instances, edges,
                             meta={"source": "extract", "delta_d": delta_d})


def classify_road(mask: np.ndarray) -> str:
    """Classify a binary road mask by counting road arms on the map border.

    An arm is a maximal run of road cells of length >= 4 along one border
    side. Two arms on opposite sides with overlapping spans mean a straight
    road; two arms otherwise make a bend; three a T-junction; four a
    crossroad; anything else falls to Others.
    """
    mask = np.asarray(mask, dtype=bool)
    sides = {
        "top": mask[0, :], "bottom": mask[-1, :],
        "left": mask[:, 0], "right": mask[:, -1],
    }
    arms: list[tuple[str, int, int]] = []
    for side, line in sides.items():
        start = None
        for i, v in enumerate(list(line) + [False]):
            if v and start is None:
                start = i
            elif not v and start is not None:
                if i - start >= 4:
                    arms.append((side, start, i))
                start = None

    if len(arms) == 3:
        return "TJunction"
    if len(arms) == 4:
        return "Crossroad"
    if len(arms) == 2:
        (s1, a1, b1), (s2, a2, b2) = arms
        opposite = {s1, s2} in ({"top", "bottom"}, {"left", "right"})
        if opposite and max(a1, a2) < min(b1, b2):
            return "StraightRoad"
        return "BendRoad"
    return "Others"


def project_bev(scene: VoxelScene) -> BevMap:
    """Top-down projection: each cell takes the class of its highest non-Free voxel."""
    grid = scene.grid
    occupied = grid != FREE
    any_occ = occupied.any(axis=2)
    top = D - 1 - np.argmax(occupied[:, :, ::-1], axis=2)
    bev = np.take_along_axis(grid, top[:, :, None], axis=2)[:, :, 0]
    return BevMap(np.where(any_occ, bev, FREE).astype(np.uint8))


# ---------------------------------------------------------------------------
# augmentation

_PATCH_MAPS = {
    "rot90": lambda r, c: (PATCH_GRID - 1 - c, r),
    "rot180": lambda r, c: (PATCH_GRID - 1 - r, PATCH_GRID - 1 - c),
    "rot270": lambda r, c: (c, PATCH_GRID - 1 - r),
    "flip_h": lambda r, c: (r, PATCH_GRID - 1 - c),
    "flip_v": lambda r, c: (PATCH_GRID - 1 - r, c),
}

_GRID_OPS = {
    "rot90": lambda m: np.rot90(m, 1, axes=(0, 1)),
    "rot180": lambda m: np.rot90(m, 2, axes=(0, 1)),
    "rot270": lambda m: np.rot90(m, 3, axes=(0, 1)),
    "flip_h": lambda m: np.flip(m, axis=1),
    "flip_v": lambda m: np.flip(m, axis=0),
}


def augment(scene: VoxelScene, graph: SceneGraph, bev: BevMap,
            op: str) -> tuple[VoxelScene, SceneGraph, BevMap]:
    """Apply one horizontal-plane symmetry to a (scene, graph, map) triple.

    ``rot90`` is counter-clockwise; ``flip_h`` mirrors left-right (columns),
    ``flip_v`` top-bottom (rows). Patch positions move under the same index
    map; classes, edges, and the road type are untouched.
    """
    if op not in AUGMENT_OPS:
        raise ValueError(f"unknown augment op {op!r}")
    new_grid = np.ascontiguousarray(_GRID_OPS[op](scene.grid))
    new_bev = np.ascontiguousarray(_GRID_OPS[op](bev.grid))
    pmap = _PATCH_MAPS[op]
    new_instances = [
        InstanceNode(n.id, n.class_label, pmap(*n.patch) if n.patch is not None else None)
        for n in graph.instances
    ]
    new_graph = SceneGraph(roads=list(graph.roads), instances=new_instances,
                           edges=list(graph.edges), meta=dict(graph.meta))
    return (VoxelScene(new_grid, scene.palette_version), new_graph, BevMap(new_bev))


# ---------------------------------------------------------------------------
# dataset building


@dataclass
class Sample:
    scene: VoxelScene
    graph: SceneGraph
    bev: BevMap
    seed: int


def random_params(rng: np.random.Generator, max_per_class: int = 4) -> GenParams:
    road_type = ROAD_TYPES[int(rng.integers(0, len(ROAD_TYPES)))]
    counts = {cls: int(rng.integers(0, max_per_class + 1)) for cls in COUNTABLE_CLASSES}
    return GenParams(road_type=road_type, counts=counts, seed=0)


def build_dataset(n: int, seed: int, max_per_class: int = 4) -> list[Sample]:
    """Generate ``n`` samples; crowded placements are resampled deterministically."""
    samples: list[Sample] = []
    for i in range(n):
        for attempt in range(20):
            sub = np.random.default_rng(np.random.SeedSequence([seed, i, attempt]))
            params = random_params(sub, max_per_class)
            item_seed = int(sub.integers(0, 2**31 - 1))
            try:
                scene, graph, bev = generate_scene(
                    GenParams(params.road_type, params.counts, item_seed))
            except CapacityError:
                continue
            samples.append(Sample(scene, graph, bev, item_seed))
            break
        else:
            raise CapacityError(f"sample {i} failed after 20 parameter resamples")
    return samples


def save_dataset(samples: list[Sample], out_dir: str | Path) -> Path:
    from .graph import graph_to_json

    out = Path(out_dir)
    for sub in ("scenes", "graphs", "maps"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        name = f"{i:05d}"
        voxio.write_vxs(out / "scenes" / f"{name}.vxs", s.scene.grid, NUM_CLASSES)
        voxio.write_vxs(out / "maps" / f"{name}.vxs", s.bev.grid, NUM_CLASSES)
        (out / "graphs" / f"{name}.json").write_text(graph_to_json(s.graph))
        counts = {cls: sum(1 for n in s.graph.instances if n.class_label == cls)
                  for cls in COUNTABLE_CLASSES}
        records.append({
            "scene": f"scenes/{name}.vxs", "graph": f"graphs/{name}.json",
            "map": f"maps/{name}.vxs", "seed": s.seed,
            "road_type": s.graph.road.road_type, "counts": counts,
        })
    voxio.write_manifest(out / "manifest.jsonl", records)
    return out / "manifest.jsonl"


def load_dataset(manifest_path: str | Path) -> list[Sample]:
    from .graph import graph_from_json

    base = Path(manifest_path).parent
    samples = []
    for rec in voxio.read_manifest(manifest_path):
        scene_grid, _ = voxio.read_vxs(base / rec["scene"])
        map_grid, _ = voxio.read_vxs(base / rec["map"])
        graph = graph_from_json((base / rec["graph"]).read_text())
        samples.append(Sample(VoxelScene(scene_grid), graph,
                              BevMap(map_grid[:, :, 0]), rec["seed"]))
    return samples
