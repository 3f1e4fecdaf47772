"""Training loops for every stage plus the strategy harness.

The adopted recipe (strategy "d") trains the graph encoder and the 2D map
denoiser jointly from scratch — auxiliary graph losses, 10% unconditional
items, 30% position masking — then freezes the encoder and post-trains the
localization head. The 3D stage and the evaluation autoencoder train
separately on ground-truth pairs. Every entry point is deterministic given
its seed: model init comes off the global torch seed, all data order, noise,
masking, and augmentation come off one explicit generator.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .allocation import LocalizationHead, assemble_bem, loc_loss
from .autoencoder import SceneAutoencoder, scenes_to_onehot
from .checkpoint import Checkpoint, module_hash
from .dataset import AUGMENT_OPS, HB, WB, Sample, augment, road_patch
from .denoiser2d import Denoiser2D
from .denoiser3d import Denoiser3D, upscale_map
from .diffusion import batched_diffusion_loss, build_schedule, one_hot, q_sample
from .encoder import GraphEncoder, aux_loss, build_node_features
from .graph import PATCH_GRID, ROAD_NODE_ID, SceneGraph
from .palette import NUM_CLASSES

STRATEGIES = ("a", "b", "c", "d")


class TrainingDivergedError(RuntimeError):
    pass


def config_snapshot(cfg: "TrainConfig") -> dict:
    """JSON-canonical config dict (what checkpoints and reports embed)."""
    return json.loads(json.dumps(asdict(cfg)))


@dataclass
class TrainConfig:
    seed: int = 0
    T: int = 100
    uncond_proportion: float = 0.10
    feature_mask_rate: float = 0.30
    tau: float = 2.0
    aux_weight: float = 1.0
    lambda_ce: float = 1e-3
    lr: float = 1e-3
    batch_size: int = 8
    joint_steps: int = 2000
    loc_steps: int = 600
    scene3d_steps: int = 1500
    ae_steps: int = 500
    augment: bool = True
    edge_recon: bool = True
    node_cls: bool = True
    strategy: str = "d"
    widths2d: tuple[int, int, int] = (32, 64, 128)
    widths3d: tuple[int, int, int] = (16, 32, 64)
    log_every: int = 50

    def __post_init__(self) -> None:
        for name in ("uncond_proportion", "feature_mask_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


class MetricsLog:
    """In-memory step log, optionally mirrored to a JSON-lines file."""

    def __init__(self, path: str | Path | None = None):
        self.rows: list[dict] = []
        self._file = open(path, "a") if path else None

    def add(self, **row) -> None:
        row.setdefault("timestamp", time.time())
        self.rows.append(row)
        if self._file:
            self._file.write(json.dumps(row, sort_keys=True) + "\n")
            self._file.flush()

    def close(self) -> None:
        if self._file:
            self._file.close()


def draw_condition_flags(graph: SceneGraph, cfg: TrainConfig,
                         gen: torch.Generator) -> tuple[bool, set[str]]:
    """Per-item conditioning draw: (zero the BEM?, which node positions to mask).

    Shared by the training loop and the statistics tests so that measured
    unconditional / mask fractions are exactly what training sees.
    """
    uncond = bool(torch.rand((), generator=gen).item() < cfg.uncond_proportion)
    masked = {n.id for n in graph.instances
              if torch.rand((), generator=gen).item() < cfg.feature_mask_rate}
    return uncond, masked


def _gt_positions(item: Sample) -> dict[str, tuple[int, int]]:
    """Ground-truth patch per node: instance patches plus the road anchor."""
    pos: dict[str, tuple[int, int]] = {}
    for n in item.graph.instances:
        if n.patch is None:
            raise ValueError(f"training graph node {n.id!r} lacks a ground-truth position")
        pos[n.id] = n.patch
    anchor = road_patch(item.scene)
    if anchor is not None:
        pos[ROAD_NODE_ID] = anchor
    return pos


def _random_symmetry(sample: Sample, gen: torch.Generator) -> Sample:
    """One of the 8 square symmetries: optional flip then optional rotation."""
    k = int(torch.randint(0, 8, (), generator=gen).item())
    scene, graph, bev = sample.scene, sample.graph, sample.bev
    if k >= 4:
        scene, graph, bev = augment(scene, graph, bev, "flip_h")
    rot = k % 4
    if rot:
        scene, graph, bev = augment(scene, graph, bev, AUGMENT_OPS[rot - 1])
    return Sample(scene, graph, bev, sample.seed)


def _check_finite(value: float, step: int, stage: str) -> None:
    if not (value == value and abs(value) != float("inf")):
        raise TrainingDivergedError(f"{stage} loss became non-finite at step {step}")


def _joint_loop(dataset: list[Sample], cfg: TrainConfig, encoder: GraphEncoder,
                denoiser: Denoiser2D, loc_head: LocalizationHead | None,
                steps: int, gen: torch.Generator, log: MetricsLog,
                train_encoder: bool = True, train_loc: bool = False,
                stage: str = "joint") -> None:
    """Shared GNN + 2D-diffusion loop; strategy variants toggle what trains."""
    sched = build_schedule(cfg.T, NUM_CLASSES)
    params: list[torch.nn.Parameter] = list(denoiser.parameters())
    encoder.requires_grad_(train_encoder)
    if train_encoder:
        params += list(encoder.parameters())
    if loc_head is not None:
        loc_head.requires_grad_(train_loc)
        if train_loc:
            params += list(loc_head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    n = len(dataset)

    for step in range(steps):
        idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
        xs, ts, conds = [], [], []
        aux_terms, loc_terms = [], []
        for i in idx.tolist():
            item = _random_symmetry(dataset[i], gen) if cfg.augment else dataset[i]
            uncond, masked = draw_condition_flags(item.graph, cfg, gen)
            feats = build_node_features(item.graph, masked_ids=masked)
            cane = encoder.encode(item.graph, feats)
            aux_terms.append(aux_loss(item.graph, cane, encoder,
                                      edge_recon=cfg.edge_recon, node_cls=cfg.node_cls))
            gt = _gt_positions(item)
            if train_loc and loc_head is not None and masked:
                keep = set(masked) | ({ROAD_NODE_ID} if ROAD_NODE_ID in gt else set())
                loc_terms.append(loc_loss(loc_head, cane,
                                          {nid: gt[nid] for nid in keep}))
            if uncond:
                bem = torch.zeros(HB, WB, encoder.cane_dim)
            else:
                bem = assemble_bem(cane, gt)
            t = int(torch.randint(1, cfg.T + 1, (), generator=gen).item())
            x0 = torch.from_numpy(item.bev.grid.copy()).long()
            x_t = q_sample(x0, t, sched, gen)
            xs.append((x0, x_t, t))
            conds.append(bem.permute(2, 0, 1))

        x_onehot = torch.stack([one_hot(x_t, NUM_CLASSES).permute(2, 0, 1)
                                for _, x_t, _ in xs])
        t_norm = torch.tensor([t / cfg.T for _, _, t in xs])
        logits = denoiser(x_onehot, t_norm, torch.stack(conds))
        diff = batched_diffusion_loss(
            torch.stack([x0 for x0, _, _ in xs]),
            torch.stack([x_t for _, x_t, _ in xs]),
            torch.tensor([t for _, _, t in xs]),
            logits.permute(0, 2, 3, 1), sched, cfg.lambda_ce)
        aux = torch.stack(aux_terms).mean()
        loss = diff + cfg.aux_weight * aux
        if loc_terms:
            loss = loss + torch.stack(loc_terms).mean()

        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == steps - 1:
            _check_finite(float(loss.item()), step, stage)
            log.add(stage=stage, step=step, loss=float(loss.item()),
                    loss_diffusion=float(diff.item()), loss_aux=float(aux.item()))


def train_joint(dataset: list[Sample], cfg: TrainConfig,
                log_path: str | Path | None = None) -> Checkpoint:
    """Joint GNN + 2D diffusion from scratch (the adopted strategy's first phase)."""
    torch.manual_seed(cfg.seed)
    encoder = GraphEncoder()
    denoiser = Denoiser2D(cond_channels=encoder.cane_dim, widths=cfg.widths2d)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    log = MetricsLog(log_path)
    try:
        _joint_loop(dataset, cfg, encoder, denoiser, None, cfg.joint_steps, gen, log)
    finally:
        log.close()
    encoder.eval()
    denoiser.eval()
    return Checkpoint(encoder=encoder, denoiser2d=denoiser, config=config_snapshot(cfg),
                      meta={"stages": ["joint"], "dataset_size": len(dataset)})


def _loc_mask_draw(graph: SceneGraph, cfg: TrainConfig, gen: torch.Generator) -> set[str]:
    """Mask draw for localization training; guarantees at least one masked node."""
    ids = [n.id for n in graph.instances]
    if not ids:
        return set()
    masked = {nid for nid in ids
              if torch.rand((), generator=gen).item() < cfg.feature_mask_rate}
    if not masked:
        masked = {ids[int(torch.randint(0, len(ids), (), generator=gen).item())]}
    return masked


def loc_accuracy(encoder: GraphEncoder, loc_head: LocalizationHead,
                 dataset: list[Sample]) -> float:
    """Leave-one-out top-1 patch accuracy: mask each node, predict its patch."""
    hits = total = 0
    with torch.no_grad():
        for item in dataset:
            gt = _gt_positions(item)
            for node in item.graph.instances:
                feats = build_node_features(item.graph, masked_ids={node.id})
                cane = encoder.encode(item.graph, feats)
                row = cane.per_node[cane.ids.index(node.id)]
                pred = int(loc_head(row).argmax().item())
                hits += pred == gt[node.id][0] * PATCH_GRID + gt[node.id][1]
                total += 1
    return hits / max(total, 1)


def train_loc(ckpt: Checkpoint, dataset: list[Sample], cfg: TrainConfig,
              log_path: str | Path | None = None) -> Checkpoint:
    """Post-train the localization head with everything else frozen.

    Positions are masked during head training (the head's whole job at
    inference is predicting positions the user left out), with the loss taken
    over the masked nodes only.
    """
    if ckpt.encoder is None:
        raise ValueError("checkpoint has no trained encoder")
    frozen_before = {name: module_hash(m) for name, m in ckpt.components().items()
                     if m is not None}
    torch.manual_seed(cfg.seed + 1000)
    loc_head = LocalizationHead(cane_dim=ckpt.encoder.cane_dim, tau=cfg.tau)
    gen = torch.Generator().manual_seed(cfg.seed + 1001)
    encoder = ckpt.encoder
    encoder.requires_grad_(False)
    opt = torch.optim.Adam(loc_head.parameters(), lr=cfg.lr)
    log = MetricsLog(log_path)
    usable = [s for s in dataset if s.graph.instances]
    if not usable:
        raise ValueError("dataset has no graphs with instance nodes")
    n = len(usable)
    try:
        for step in range(cfg.loc_steps):
            idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
            terms = []
            for i in idx.tolist():
                item = usable[i]
                masked = _loc_mask_draw(item.graph, cfg, gen)
                feats = build_node_features(item.graph, masked_ids=masked)
                with torch.no_grad():
                    cane = encoder.encode(item.graph, feats)
                gt = _gt_positions(item)
                keep = set(masked) | ({ROAD_NODE_ID} if ROAD_NODE_ID in gt else set())
                terms.append(loc_loss(loc_head, cane, {nid: gt[nid] for nid in keep}))
            loss = torch.stack(terms).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % cfg.log_every == 0 or step == cfg.loc_steps - 1:
                _check_finite(float(loss.item()), step, "loc")
                log.add(stage="loc", step=step, loss=float(loss.item()))
    finally:
        log.close()
    loc_head.eval()

    frozen_after = {name: module_hash(m) for name, m in ckpt.components().items()
                    if m is not None}
    if frozen_before != frozen_after:
        raise RuntimeError("frozen parameters changed during localization training")

    out = ckpt.replace(loc_head=loc_head)
    out.meta = dict(ckpt.meta)
    out.meta["stages"] = ckpt.meta.get("stages", []) + ["loc"]
    out.meta["loc_top1"] = loc_accuracy(encoder, loc_head, usable)
    return out


def train_scene3d(dataset: list[Sample], cfg: TrainConfig, base: Checkpoint | None = None,
                  log_path: str | Path | None = None) -> Checkpoint:
    """3D stage: denoise voxel scenes conditioned on their ground-truth maps."""
    torch.manual_seed(cfg.seed + 2000)
    model = Denoiser3D(widths=cfg.widths3d)
    gen = torch.Generator().manual_seed(cfg.seed + 2001)
    sched = build_schedule(cfg.T, NUM_CLASSES)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    log = MetricsLog(log_path)
    n = len(dataset)
    try:
        for step in range(cfg.scene3d_steps):
            idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
            zs, conds = [], []
            for i in idx.tolist():
                item = _random_symmetry(dataset[i], gen) if cfg.augment else dataset[i]
                z0 = torch.from_numpy(item.scene.grid.copy()).long()
                t = int(torch.randint(1, cfg.T + 1, (), generator=gen).item())
                z_t = q_sample(z0, t, sched, gen)
                zs.append((z0, z_t, t))
                conds.append(upscale_map(item.bev).permute(2, 0, 1))
            z_onehot = torch.stack([one_hot(z_t, NUM_CLASSES).permute(3, 0, 1, 2)
                                    for _, z_t, _ in zs])
            t_norm = torch.tensor([t / cfg.T for _, _, t in zs])
            logits = model(z_onehot, t_norm, torch.stack(conds))
            loss = batched_diffusion_loss(
                torch.stack([z0 for z0, _, _ in zs]),
                torch.stack([z_t for _, z_t, _ in zs]),
                torch.tensor([t for _, _, t in zs]),
                logits.permute(0, 2, 3, 4, 1), sched, cfg.lambda_ce)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % cfg.log_every == 0 or step == cfg.scene3d_steps - 1:
                _check_finite(float(loss.item()), step, "scene3d")
                log.add(stage="scene3d", step=step, loss=float(loss.item()))
    finally:
        log.close()
    model.eval()
    out = (base or Checkpoint(config=config_snapshot(cfg))).replace(denoiser3d=model)
    out.meta = dict(out.meta)
    out.meta["stages"] = out.meta.get("stages", []) + ["scene3d"]
    return out


def train_autoencoder(dataset: list[Sample], cfg: TrainConfig,
                      base: Checkpoint | None = None,
                      log_path: str | Path | None = None) -> Checkpoint:
    """Evaluation autoencoder: per-voxel cross-entropy reconstruction."""
    torch.manual_seed(cfg.seed + 3000)
    model = SceneAutoencoder()
    gen = torch.Generator().manual_seed(cfg.seed + 3001)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    log = MetricsLog(log_path)
    scenes = [s.scene for s in dataset]
    n = len(scenes)
    try:
        for step in range(cfg.ae_steps):
            idx = torch.randint(0, n, (cfg.batch_size,), generator=gen).tolist()
            batch = scenes_to_onehot([scenes[i] for i in idx])
            target = torch.stack([torch.from_numpy(scenes[i].grid.copy()).long()
                                  for i in idx])
            logits = model(batch)
            loss = torch.nn.functional.cross_entropy(logits, target)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % cfg.log_every == 0 or step == cfg.ae_steps - 1:
                _check_finite(float(loss.item()), step, "autoencoder")
                log.add(stage="autoencoder", step=step, loss=float(loss.item()))
    finally:
        log.close()
    model.eval()
    out = (base or Checkpoint(config=config_snapshot(cfg))).replace(autoencoder=model)
    out.meta = dict(out.meta)
    out.meta["stages"] = out.meta.get("stages", []) + ["autoencoder"]
    out.meta["autoencoder_trained"] = True
    return out


def _pretrain_encoder_aux(dataset: list[Sample], cfg: TrainConfig, steps: int,
                          log: MetricsLog) -> GraphEncoder:
    """Auxiliary-only GNN pre-training used by strategies (a) and (c)."""
    torch.manual_seed(cfg.seed)
    encoder = GraphEncoder()
    gen = torch.Generator().manual_seed(cfg.seed + 4001)
    opt = torch.optim.Adam(encoder.parameters(), lr=cfg.lr)
    n = len(dataset)
    for step in range(steps):
        idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
        terms = []
        for i in idx.tolist():
            item = dataset[i]
            _, masked = draw_condition_flags(item.graph, cfg, gen)
            feats = build_node_features(item.graph, masked_ids=masked)
            cane = encoder.encode(item.graph, feats)
            terms.append(aux_loss(item.graph, cane, encoder,
                                  edge_recon=cfg.edge_recon, node_cls=cfg.node_cls))
        loss = torch.stack(terms).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == steps - 1:
            _check_finite(float(loss.item()), step, "gnn_pretrain")
            log.add(stage="gnn_pretrain", step=step, loss=float(loss.item()))
    return encoder


def run_strategy(dataset: list[Sample], strategy: str, cfg: TrainConfig,
                 log_path: str | Path | None = None) -> Checkpoint:
    """Execute one of the four training strategies over the GNN / 2D / LOC stack.

    (a) pre-train GNN (aux) and LOC, joint-train diffusion+GNN, then freeze
        GNN+LOC and fine-tune the diffusion model alone;
    (b) end-to-end from scratch, localization loss backpropagated jointly;
    (c) pre-train GNN (aux) and LOC, freeze both, train diffusion from scratch;
    (d) joint GNN+diffusion from scratch, freeze, post-train LOC (adopted).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    cfg = TrainConfig(**{**asdict(cfg), "strategy": strategy})

    if strategy == "d":
        return train_loc(train_joint(dataset, cfg, log_path), dataset, cfg, log_path)

    log = MetricsLog(log_path)
    try:
        if strategy == "b":
            torch.manual_seed(cfg.seed)
            encoder = GraphEncoder()
            denoiser = Denoiser2D(cond_channels=encoder.cane_dim, widths=cfg.widths2d)
            loc_head = LocalizationHead(cane_dim=encoder.cane_dim, tau=cfg.tau)
            gen = torch.Generator().manual_seed(cfg.seed + 1)
            _joint_loop(dataset, cfg, encoder, denoiser, loc_head, cfg.joint_steps,
                        gen, log, train_encoder=True, train_loc=True, stage="joint_e2e")
            for m in (encoder, denoiser, loc_head):
                m.eval()
            ckpt = Checkpoint(encoder=encoder, denoiser2d=denoiser, loc_head=loc_head,
                              config=config_snapshot(cfg),
                              meta={"stages": ["joint_e2e"], "dataset_size": len(dataset)})
            ckpt.meta["loc_top1"] = loc_accuracy(
                encoder, loc_head, [s for s in dataset if s.graph.instances])
            return ckpt

        # strategies a and c share the pre-trained, aux-only GNN + LOC
        pre_steps = max(cfg.joint_steps // 4, 1)
        encoder = _pretrain_encoder_aux(dataset, cfg, pre_steps, log)
        encoder.eval()
        pre = Checkpoint(encoder=encoder, config=config_snapshot(cfg),
                         meta={"stages": ["gnn_pretrain"], "dataset_size": len(dataset)})
        pre = train_loc(pre, dataset, cfg, None)
        encoder, loc_head = pre.encoder, pre.loc_head

        torch.manual_seed(cfg.seed + 5000)
        denoiser = Denoiser2D(cond_channels=encoder.cane_dim, widths=cfg.widths2d)
        gen = torch.Generator().manual_seed(cfg.seed + 5001)
        if strategy == "c":
            _joint_loop(dataset, cfg, encoder, denoiser, loc_head, cfg.joint_steps,
                        gen, log, train_encoder=False, stage="diffusion_frozen_gnn")
            stages = pre.meta["stages"] + ["diffusion_frozen_gnn"]
        else:  # a: joint pre-train with GNN live, then frozen fine-tune
            half = max(cfg.joint_steps // 2, 1)
            _joint_loop(dataset, cfg, encoder, denoiser, loc_head, half, gen, log,
                        train_encoder=True, stage="joint_pretrain")
            _joint_loop(dataset, cfg, encoder, denoiser, loc_head,
                        cfg.joint_steps - half, gen, log,
                        train_encoder=False, stage="diffusion_finetune")
            stages = pre.meta["stages"] + ["joint_pretrain", "diffusion_finetune"]
        encoder.eval()
        denoiser.eval()
        ckpt = Checkpoint(encoder=encoder, denoiser2d=denoiser, loc_head=loc_head,
                          config=config_snapshot(cfg),
                          meta={**pre.meta, "stages": stages, "dataset_size": len(dataset)})
        return ckpt
    finally:
        log.close()
