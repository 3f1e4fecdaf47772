"""Scene-graph-conditioned 3D outdoor scene generation."""

from .graph import (
    Edge,
    InstanceNode,
    RoadNode,
    SceneGraph,
    adjacency,
    graph_from_json,
    graph_to_json,
    validate_graph,
)
from .dataset import (
    BevMap,
    GenParams,
    Sample,
    VoxelScene,
    augment,
    build_dataset,
    classify_road,
    extract_graph,
    generate_scene,
    project_bev,
)
from .diffusion import (
    DiffusionSchedule,
    build_schedule,
    diffusion_loss,
    p_sample_loop,
    posterior,
    q_sample,
)

__version__ = "0.1.0"

__all__ = [
    "Edge", "InstanceNode", "RoadNode", "SceneGraph", "adjacency",
    "graph_from_json", "graph_to_json", "validate_graph",
    "BevMap", "GenParams", "Sample", "VoxelScene", "augment", "build_dataset",
    "classify_road", "extract_graph", "generate_scene", "project_bev",
    "DiffusionSchedule", "build_schedule", "diffusion_loss", "p_sample_loop",
    "posterior", "q_sample",
]
