"""Command-line entry points mirroring the service: data, training, sampling,
evaluation, ablations, and the HTTP server.

Config precedence is flags > config file > defaults, and the effective config
is echoed into every produced artifact (checkpoint header, metrics reports)
so results stay attributable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch


def _build_config(args) -> "TrainConfig":
    from .training import TrainConfig

    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        values.update(json.loads(path.read_text()))
    for key in vars(args):
        if key in TrainConfig.__dataclass_fields__ and getattr(args, key) is not None:
            values[key] = getattr(args, key)
    for key in ("widths2d", "widths3d"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    return TrainConfig(**values)


def cmd_gen_data(args) -> int:
    from .dataset import build_dataset, save_dataset

    samples = build_dataset(args.n, args.seed, max_per_class=args.max_per_class)
    manifest = save_dataset(samples, args.out)
    print(json.dumps({"manifest": str(manifest), "n": len(samples), "seed": args.seed}))
    return 0


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .dataset import load_dataset
    from .training import run_strategy, train_autoencoder, train_joint, train_loc, train_scene3d

    cfg = _build_config(args)
    dataset = load_dataset(Path(args.data) / "manifest.jsonl")
    base = load_checkpoint(args.ckpt) if args.ckpt else None
    log_path = args.log

    if args.stage == "joint":
        ckpt = train_joint(dataset, cfg, log_path)
        if base is not None:
            merged = base.replace(encoder=ckpt.encoder, denoiser2d=ckpt.denoiser2d)
            merged.config, merged.meta = ckpt.config, {**base.meta, **ckpt.meta}
            ckpt = merged
    elif args.stage == "loc":
        if base is None:
            raise ValueError("--stage loc requires --ckpt from a joint run")
        ckpt = train_loc(base, dataset, cfg, log_path)
    elif args.stage == "scene3d":
        ckpt = train_scene3d(dataset, cfg, base=base, log_path=log_path)
    elif args.stage == "ae":
        ckpt = train_autoencoder(dataset, cfg, base=base, log_path=log_path)
    elif args.stage == "strategy":
        ckpt = run_strategy(dataset, cfg.strategy, cfg, log_path)
    else:
        raise ValueError(f"unknown stage {args.stage!r}")
    save_checkpoint(ckpt, args.out)
    print(json.dumps({"checkpoint": args.out, "stage": args.stage,
                      "config": asdict(cfg), "meta": ckpt.meta}))
    return 0


def cmd_sample(args) -> int:
    from . import voxio
    from .checkpoint import load_checkpoint
    from .denoiser2d import sample_map
    from .denoiser3d import sample_scene
    from .diffusion import build_schedule
    from .graph import graph_from_json, validate_graph
    from .palette import NUM_CLASSES

    graph = graph_from_json(Path(args.graph).read_text())
    violations = validate_graph(graph)
    if violations:
        raise ValueError(f"invalid graph: {[v.message for v in violations]}")
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.encoder is None or ckpt.denoiser2d is None:
        raise ValueError("checkpoint lacks the joint (encoder + 2D) stage")
    sched = build_schedule(ckpt.config.get("T", 100), NUM_CLASSES)
    rng = torch.Generator().manual_seed(args.seed)
    bev = sample_map(graph, ckpt.encoder, ckpt.loc_head, ckpt.denoiser2d, sched, rng,
                     tau=args.tau)
    if args.map_out:
        voxio.write_vxs(args.map_out, bev.grid, NUM_CLASSES)
    if ckpt.denoiser3d is None:
        raise ValueError("checkpoint lacks the 3D stage; cannot emit a scene")
    scene = sample_scene(bev, ckpt.denoiser3d, sched, rng)
    voxio.write_vxs(args.out, scene.grid, NUM_CLASSES)
    print(json.dumps({"scene": args.out, "seed": args.seed,
                      "map": args.map_out, "tau": args.tau}))
    return 0


def cmd_extract(args) -> int:
    from . import voxio
    from .dataset import VoxelScene, extract_graph
    from .graph import graph_to_json

    grid, _ = voxio.read_vxs(args.scene)
    graph = extract_graph(VoxelScene(grid), delta_d=args.delta)
    text = graph_to_json(graph)
    if args.out:
        Path(args.out).write_text(text)
        print(json.dumps({"graph": args.out}))
    else:
        print(text)
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .dataset import build_dataset, load_dataset
    from .denoiser2d import sample_maps
    from .denoiser3d import sample_scenes
    from .diffusion import build_schedule
    from .evaluation import evaluate_control
    from .palette import NUM_CLASSES

    ckpt = load_checkpoint(args.ckpt)
    if args.data:
        samples = load_dataset(Path(args.data) / "manifest.jsonl")
    else:
        samples = build_dataset(args.n, args.seed)
    graphs = [s.graph for s in samples]
    sched = build_schedule(ckpt.config.get("T", 100), NUM_CLASSES)
    rng = torch.Generator().manual_seed(args.seed)
    maps = sample_maps(graphs, ckpt.encoder, ckpt.loc_head, ckpt.denoiser2d, sched, rng)
    scenes = sample_scenes(maps, ckpt.denoiser3d, sched, rng)
    report = evaluate_control(
        scenes, graphs, autoencoder=ckpt.autoencoder,
        real_scenes=[s.scene for s in samples] if ckpt.autoencoder else None,
        config={**ckpt.config, "eval_seed": args.seed, "eval_n": len(graphs)})
    Path(args.report).write_text(report.to_json())
    print(report.to_json())
    return 0


def cmd_ablate(args) -> int:
    from .dataset import build_dataset
    from .denoiser2d import sample_maps
    from .denoiser3d import sample_scenes
    from .diffusion import build_schedule
    from .evaluation import ablation_sweep, default_ablation_grid
    from .palette import NUM_CLASSES
    from .training import train_scene3d

    cfg = _build_config(args)
    grid = (json.loads(Path(args.grid).read_text()) if args.grid
            else default_ablation_grid())
    train_set = build_dataset(args.train_n, cfg.seed)
    eval_set = build_dataset(args.eval_n, cfg.seed + 999)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # The 3D stage is independent of the GNN/2D configs under sweep: train once.
    base3d = train_scene3d(train_set, cfg)
    sched = build_schedule(cfg.T, NUM_CLASSES)

    def sample_fn(ckpt, graphs):
        rng = torch.Generator().manual_seed(cfg.seed + 7)
        maps = sample_maps(graphs, ckpt.encoder, ckpt.loc_head, ckpt.denoiser2d, sched, rng)
        return sample_scenes(maps, base3d.denoiser3d, sched, rng)

    rows = ablation_sweep(train_set, [s.graph for s in eval_set], cfg, grid,
                          sample_fn, csv_path=out_dir / "ablation.csv")
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    print(json.dumps({"rows": len(rows), "csv": str(out_dir / "ablation.csv")}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.ckpt, args.store,
                     static_dir=args.static if args.static else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphscene")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-per-class", type=int, default=4)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--stage", choices=["joint", "loc", "scene3d", "ae", "strategy"],
                   required=True)
    p.add_argument("--data", required=True, help="dataset dir with manifest.jsonl")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--ckpt", help="base checkpoint to extend (required for loc)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--log", help="JSONL metrics log path")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--steps", type=int, dest="joint_steps")
    p.add_argument("--loc-steps", type=int, dest="loc_steps")
    p.add_argument("--scene3d-steps", type=int, dest="scene3d_steps")
    p.add_argument("--ae-steps", type=int, dest="ae_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--strategy", choices=["a", "b", "c", "d"], dest="strategy")
    p.add_argument("--uncond", type=float, dest="uncond_proportion")
    p.add_argument("--mask-rate", type=float, dest="feature_mask_rate")
    p.add_argument("--tau", type=float, dest="tau")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample a scene from a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--out", required=True, help="scene output (.vxs)")
    p.add_argument("--map-out", help="optional intermediate map output (.vxs)")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("extract", help="extract a scene graph from a voxel scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--delta", type=float, default=8.0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("eval", help="evaluate control metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="dataset dir; omit to synthesize --n samples")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation sweep")
    p.add_argument("--grid", help="JSON grid file; omit for the default grid")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--train-n", type=int, default=50)
    p.add_argument("--eval-n", type=int, default=50)
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--steps", type=int, dest="joint_steps")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--ckpt", help="checkpoint path (omit to serve graph CRUD only)")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static", help="directory with the built UI")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        parser.exit(2, f"error: {e}\n")
    except Exception as e:  # single-line machine-parsable failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
