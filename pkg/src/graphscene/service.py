"""HTTP facade: scene-graph CRUD, generation jobs, scene retrieval.

One background worker drains a FIFO job queue so identical seeds map to
identical outputs regardless of request concurrency. Scenes go out as VXS1
bytes with a JSON metrics sidecar and a rendered BEV image for the UI.
"""

from __future__ import annotations

import io
import queue
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import voxio
from .checkpoint import Checkpoint, load_checkpoint
from .dataset import BevMap, VoxelScene, project_bev, road_presence_mask, classify_road
from .denoiser2d import sample_map
from .denoiser3d import sample_scene
from .diffusion import build_schedule
from .evaluation import count_objects, graph_counts, jaccard_categories
from .graph import GraphParseError, SceneGraph, graph_from_json, graph_to_json, validate_graph
from .palette import CLASS_COLORS, NUM_CLASSES
from .store import Store
from .text2graph import AdapterError, text_to_graph

JOB_STATES = ("queued", "running", "done", "failed")


@dataclass
class JobRecord:
    job_id: str
    graph_id: str
    seed: int
    tau: float
    state: str = "queued"
    scene_id: str | None = None
    error: str | None = None
    sidecar: dict[str, Any] | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def scene_sidecar(scene: VoxelScene, graph: SceneGraph) -> dict[str, Any]:
    """Oracle metrics of a generated scene against its conditioning graph."""
    counts = count_objects(scene)
    want = graph_counts(graph)
    mae = float(np.mean([abs(counts[c] - want[c]) for c in counts]))
    return {
        "counts": counts,
        "requested_counts": want,
        "road_type": classify_road(road_presence_mask(scene)),
        "requested_road_type": graph.road.road_type,
        "mae": mae,
        "jaccard": jaccard_categories(scene, graph),
    }


def bev_png(bev: BevMap, scale: int = 8) -> bytes:
    from PIL import Image

    rgb = np.array(CLASS_COLORS, dtype=np.uint8)[bev.grid]
    img = Image.fromarray(rgb, "RGB").resize(
        (bev.grid.shape[1] * scale, bev.grid.shape[0] * scale), Image.NEAREST)
    buf = io.BytesIO()
    img.save(buf, "PNG")
    return buf.getvalue()


class GenerationWorker:
    """Single background thread running the sampling pipeline FIFO."""

    def __init__(self, ckpt: Checkpoint, store: Store):
        self.ckpt = ckpt
        self.store = store
        self.sched = build_schedule(ckpt.config.get("T", 100), NUM_CLASSES)
        self.queue: "queue.Queue[tuple[JobRecord, SceneGraph]]" = queue.Queue()
        self.jobs: dict[str, JobRecord] = {}
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def submit(self, job: JobRecord, graph: SceneGraph) -> None:
        self.jobs[job.job_id] = job
        self.queue.put((job, graph))

    def _run(self) -> None:
        while True:
            job, graph = self.queue.get()
            job.state = "running"
            started = time.time()
            try:
                rng = torch.Generator().manual_seed(job.seed)
                bev = sample_map(graph, self.ckpt.encoder, self.ckpt.loc_head,
                                 self.ckpt.denoiser2d, self.sched, rng, tau=job.tau)
                job.timings["map_s"] = time.time() - started
                scene = sample_scene(bev, self.ckpt.denoiser3d, self.sched, rng)
                job.timings["scene_s"] = time.time() - started - job.timings["map_s"]
                sidecar = scene_sidecar(scene, graph)
                sidecar["seed"] = job.seed
                sidecar["graph_id"] = job.graph_id
                scene_id = self.store.put(
                    "scene", voxio.vxs_bytes(scene.grid, NUM_CLASSES), meta=sidecar)
                job.scene_id = scene_id
                job.sidecar = sidecar
                job.state = "done"
            except Exception as e:  # surface worker failures in the job record
                job.error = f"{type(e).__name__}: {e}"
                job.state = "failed"

    def drain(self, timeout: float = 300.0) -> None:
        """Wait for the queue to empty (test hook)."""
        deadline = time.time() + timeout
        while time.time() < deadline:
            if self.queue.empty() and all(
                    j.state in ("done", "failed") for j in self.jobs.values()):
                return
            time.sleep(0.02)
        raise TimeoutError("generation queue did not drain")


def create_app(ckpt: Checkpoint | str | Path | None, store_dir: str | Path,
               text_adapter=text_to_graph, static_dir: str | Path | None = None) -> FastAPI:
    if isinstance(ckpt, (str, Path)):
        ckpt = load_checkpoint(ckpt)
    store = Store(store_dir)
    worker = GenerationWorker(ckpt, store) if ckpt is not None else None

    app = FastAPI(title="graphscene")
    app.state.store = store
    app.state.worker = worker

    def error(status: int, detail, code: str = "error") -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "detail": detail})

    @app.post("/graphs", status_code=201)
    async def post_graph(request: Request):
        body = await request.body()
        try:
            g = graph_from_json(body.decode("utf-8", errors="replace"))
        except GraphParseError as e:
            return error(400, str(e), "parse_error")
        violations = validate_graph(g)
        if violations:
            return error(422, [v.to_dict() for v in violations], "invalid_graph")
        gid = store.put("graph", graph_to_json(g).encode())
        return {"graph_id": gid}

    @app.get("/graphs/{graph_id}")
    def get_graph(graph_id: str):
        if store.kind_of(graph_id) != "graph":
            return error(404, f"unknown graph {graph_id}")
        data, _ = store.get(graph_id)
        return Response(content=data, media_type="application/json")

    @app.post("/generate", status_code=202)
    async def post_generate(request: Request):
        try:
            body = await request.json()
        except Exception:
            return error(400, "malformed JSON body", "parse_error")
        graph_id = body.get("graph_id")
        if store.kind_of(graph_id) != "graph":
            return error(404, f"unknown graph {graph_id}")
        if worker is None:
            return error(409, "no checkpoint loaded; generation unavailable", "no_checkpoint")
        seed = body.get("seed")
        if seed is None:
            seed = int.from_bytes(uuid.uuid4().bytes[:4], "little")
        tau = float(body.get("tau", worker.ckpt.config.get("tau", 2.0)))
        if tau <= 0:
            return error(422, "tau must be positive", "bad_tau")
        data, _ = store.get(graph_id)
        graph = graph_from_json(data.decode())
        job = JobRecord(job_id=f"job-{uuid.uuid4().hex[:12]}", graph_id=graph_id,
                        seed=int(seed), tau=tau)
        worker.submit(job, graph)
        return {"job_id": job.job_id}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        if worker is None or job_id not in worker.jobs:
            return error(404, f"unknown job {job_id}")
        return worker.jobs[job_id].to_dict()

    @app.get("/scenes/{scene_id}")
    def get_scene(scene_id: str):
        if store.kind_of(scene_id) != "scene":
            return error(404, f"unknown scene {scene_id}")
        data, _ = store.get(scene_id)
        return Response(content=data, media_type="application/octet-stream")

    @app.get("/scenes/{scene_id}/meta")
    def get_scene_meta(scene_id: str):
        if store.kind_of(scene_id) != "scene":
            return error(404, f"unknown scene {scene_id}")
        _, meta = store.get(scene_id)
        return meta

    @app.get("/scenes/{scene_id}/bev")
    def get_scene_bev(scene_id: str):
        if store.kind_of(scene_id) != "scene":
            return error(404, f"unknown scene {scene_id}")
        data, _ = store.get(scene_id)
        grid, _ = voxio.read_vxs(data)
        bev = project_bev(VoxelScene(grid))
        return Response(content=bev_png(bev), media_type="image/png")

    @app.post("/text2graph")
    async def post_text2graph(request: Request):
        if text_adapter is None:
            return error(501, "no text adapter configured", "no_adapter")
        try:
            body = await request.json()
        except Exception:
            return error(400, "malformed JSON body", "parse_error")
        prompt = body.get("prompt", "")
        try:
            g = text_adapter(prompt)
        except AdapterError as e:
            return error(422, str(e), "bad_prompt")
        return Response(content=graph_to_json(g), media_type="application/json")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
