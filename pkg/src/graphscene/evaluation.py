"""Evaluation metrics: object-count alignment, category overlap, plausibility.

Control capacity is measured by counting 26-connected components of each
countable class in a generated scene and comparing against the conditioning
graph (count MAE overall and per class, plus the Jaccard index over the
category sets). Scene plausibility uses a trained autoencoder: mIoU / mean
accuracy between a scene and its reconstruction, and the Fréchet distance
between feature distributions of two scene sets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy import ndimage

from .autoencoder import SceneAutoencoder, encode_features, reconstruct
from .dataset import Sample, VoxelScene
from .graph import SceneGraph
from .palette import COUNTABLE_CLASSES, DEFAULT_PALETTE, NUM_CLASSES

_CONN26 = np.ones((3, 3, 3), dtype=bool)
MIN_COMPONENT_VOXELS = 2  # single-voxel diffusion speckle does not count


@dataclass
class MetricsReport:
    mae: float
    per_class_mae: dict[str, float]
    jaccard: float
    miou: float | None = None
    ma: float | None = None
    f3d: float | None = None
    n_scenes: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def count_objects(scene: VoxelScene) -> dict[str, int]:
    """Connected-component object counts per countable class (26-connectivity)."""
    counts = {}
    for cls in COUNTABLE_CLASSES:
        labels, n = ndimage.label(scene.grid == DEFAULT_PALETTE.index(cls),
                                  structure=_CONN26)
        if n:
            sizes = np.bincount(labels.ravel())[1:]
            n = int((sizes >= MIN_COMPONENT_VOXELS).sum())
        counts[cls] = n
    return counts


def graph_counts(graph: SceneGraph) -> dict[str, int]:
    return {cls: sum(1 for n in graph.instances if n.class_label == cls)
            for cls in COUNTABLE_CLASSES}


def mae_counts(pairs: Sequence[tuple[VoxelScene, SceneGraph]]) -> tuple[float, dict[str, float]]:
    """Overall and per-class mean absolute count error over (scene, graph) pairs."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    per_class: dict[str, list[int]] = {cls: [] for cls in COUNTABLE_CLASSES}
    for scene, graph in pairs:
        got = count_objects(scene)
        want = graph_counts(graph)
        for cls in COUNTABLE_CLASSES:
            per_class[cls].append(abs(got[cls] - want[cls]))
    per_class_mae = {cls: float(np.mean(v)) for cls, v in per_class.items()}
    overall = float(np.mean([e for v in per_class.values() for e in v]))
    return overall, per_class_mae


def jaccard_categories(scene: VoxelScene, graph: SceneGraph) -> float:
    """|classes in both| / |classes in either| over countable classes; 1.0 if both empty."""
    got = {cls for cls, n in count_objects(scene).items() if n > 0}
    want = {cls for cls, n in graph_counts(graph).items() if n > 0}
    union = got | want
    if not union:
        return 1.0
    return len(got & want) / len(union)


def mean_jaccard(pairs: Sequence[tuple[VoxelScene, SceneGraph]]) -> float:
    return float(np.mean([jaccard_categories(s, g) for s, g in pairs]))


def miou_ma(scenes: Sequence[VoxelScene], ckpt_autoencoder: SceneAutoencoder,
            trained: bool = True) -> tuple[float, float]:
    """Plausibility proxy: agreement between each scene and its reconstruction.

    mIoU averages per-class IoU over classes present in scene or
    reconstruction; mean accuracy averages per-class recall over classes
    present in the scene. Both are then averaged over scenes.
    """
    if not trained:
        raise ValueError("autoencoder checkpoint is not marked trained")
    ious, accs = [], []
    for scene in scenes:
        recon = reconstruct(scene, ckpt_autoencoder).grid
        gt = scene.grid
        per_iou, per_acc = [], []
        for cls in range(NUM_CLASSES):
            in_gt = gt == cls
            in_rc = recon == cls
            union = int((in_gt | in_rc).sum())
            if union:
                per_iou.append(int((in_gt & in_rc).sum()) / union)
            n_gt = int(in_gt.sum())
            if n_gt:
                per_acc.append(int((in_gt & in_rc).sum()) / n_gt)
        ious.append(float(np.mean(per_iou)) if per_iou else 1.0)
        accs.append(float(np.mean(per_acc)) if per_acc else 1.0)
    return float(np.mean(ious)), float(np.mean(accs))


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    tr((Sa Sb)^1/2) is computed as tr((Sa^1/2 Sb Sa^1/2)^1/2) so the square
    root acts on a symmetric PSD matrix; negative eigenvalues from roundoff
    are clamped to zero and covariances get a 1e-6 diagonal regularizer.
    """
    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    reg = 1e-6 * np.eye(feats_a.shape[1])
    cov_a = np.cov(feats_a, rowvar=False) + reg
    cov_b = np.cov(feats_b, rowvar=False) + reg
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))


def f3d(set_a: Sequence[VoxelScene], set_b: Sequence[VoxelScene],
        autoencoder: SceneAutoencoder) -> float:
    """Fréchet distance in the autoencoder's mean-pooled bottleneck space."""
    if len(set_a) < 16 or len(set_b) < 16:
        raise ValueError("need at least 16 scenes per set for a stable covariance")
    fa = encode_features(list(set_a), autoencoder).double().numpy()
    fb = encode_features(list(set_b), autoencoder).double().numpy()
    return frechet_distance(fa, fb)


# ---------------------------------------------------------------------------
# pipeline evaluation + ablation harness


def evaluate_control(scenes: Sequence[VoxelScene], graphs: Sequence[SceneGraph],
                     autoencoder: SceneAutoencoder | None = None,
                     real_scenes: Sequence[VoxelScene] | None = None,
                     config: dict | None = None) -> MetricsReport:
    """Bundle the control metrics (and plausibility, when an autoencoder is given)."""
    pairs = list(zip(scenes, graphs))
    overall, per_class = mae_counts(pairs)
    report = MetricsReport(
        mae=overall, per_class_mae=per_class, jaccard=mean_jaccard(pairs),
        n_scenes=len(pairs), config=dict(config or {}))
    if autoencoder is not None:
        report.miou, report.ma = miou_ma(list(scenes), autoencoder)
        if real_scenes is not None and len(real_scenes) >= 16 and len(scenes) >= 16:
            report.f3d = f3d(list(scenes), list(real_scenes), autoencoder)
    return report


def default_ablation_grid() -> list[dict]:
    grid: list[dict] = []
    for p in (0.0, 0.05, 0.1, 0.2, 0.4):
        grid.append({"axis": "uncond", "uncond_proportion": p})
    for er in (True, False):
        for nc in (True, False):
            grid.append({"axis": "aux", "edge_recon": er, "node_cls": nc})
    for s in ("a", "b", "c", "d"):
        grid.append({"axis": "strategy", "strategy": s})
    return grid


def ablation_sweep(train_set: list[Sample], eval_graphs: list[SceneGraph],
                   base_cfg, grid: list[dict], sample_fn,
                   csv_path: str | Path | None = None) -> list[dict]:
    """Train one model per grid row and evaluate control capacity.

    ``sample_fn(ckpt, graphs) -> scenes`` abstracts the sampling pipeline so
    the sweep stays agnostic of checkpoints vs stubs in tests. Each emitted
    row carries the full config snapshot it ran with.
    """
    from dataclasses import asdict as cfg_asdict

    from .training import TrainConfig, run_strategy

    rows: list[dict] = []
    for overrides in grid:
        axis = overrides.get("axis", "custom")
        cfg_kwargs = {**cfg_asdict(base_cfg),
                      **{k: v for k, v in overrides.items() if k != "axis"}}
        cfg = TrainConfig(**cfg_kwargs)
        ckpt = run_strategy(train_set, cfg.strategy, cfg)
        scenes = sample_fn(ckpt, eval_graphs)
        report = evaluate_control(scenes, eval_graphs, config=cfg_asdict(cfg))
        row = {"axis": axis, **{k: v for k, v in overrides.items() if k != "axis"},
               "mae": report.mae, "jaccard": report.jaccard,
               **{f"mae_{cls}": v for cls, v in report.per_class_mae.items()},
               "config": json.dumps(cfg_asdict(cfg), sort_keys=True)}
        rows.append(row)
    if csv_path is not None:
        keys: list[str] = []
        for row in rows:
            keys += [k for k in row if k not in keys]
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)
    return rows
