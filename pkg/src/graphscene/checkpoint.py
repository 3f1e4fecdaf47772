"""Unified checkpoint archive.

Single file: magic, format version, a JSON header describing every component
(constructor kwargs, block names/shapes/offsets, config snapshot, metadata),
followed by the concatenated raw little-endian float32 parameter blocks. The
archive is self-describing: loading rebuilds each module from its recorded
kwargs and fills the state dict from the named blocks.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn

from .allocation import LocalizationHead
from .autoencoder import SceneAutoencoder
from .denoiser2d import Denoiser2D
from .denoiser3d import Denoiser3D
from .encoder import GraphEncoder

MAGIC = b"GSCK"
FORMAT_VERSION = 1

_REGISTRY: dict[str, type[nn.Module]] = {
    "GraphEncoder": GraphEncoder,
    "LocalizationHead": LocalizationHead,
    "Denoiser2D": Denoiser2D,
    "Denoiser3D": Denoiser3D,
    "SceneAutoencoder": SceneAutoencoder,
}

COMPONENT_NAMES = ("encoder", "loc_head", "denoiser2d", "denoiser3d", "autoencoder")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    """All trainable components plus the config/metadata snapshot."""

    encoder: GraphEncoder | None = None
    loc_head: LocalizationHead | None = None
    denoiser2d: Denoiser2D | None = None
    denoiser3d: Denoiser3D | None = None
    autoencoder: SceneAutoencoder | None = None
    config: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def components(self) -> dict[str, nn.Module | None]:
        return {name: getattr(self, name) for name in COMPONENT_NAMES}

    def replace(self, **kwargs) -> "Checkpoint":
        out = Checkpoint(**{name: getattr(self, name) for name in COMPONENT_NAMES},
                         config=dict(self.config), meta=dict(self.meta))
        for k, v in kwargs.items():
            setattr(out, k, v)
        return out


def module_bytes(module: nn.Module) -> bytes:
    """Concatenated little-endian f32 bytes of all parameters (hashable identity)."""
    chunks = []
    for _, tensor in sorted(module.state_dict().items()):
        chunks.append(np.ascontiguousarray(
            tensor.detach().to(torch.float32).numpy()).astype("<f4").tobytes())
    return b"".join(chunks)


def module_hash(module: nn.Module) -> str:
    return hashlib.sha256(module_bytes(module)).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    blocks: list[dict[str, Any]] = []
    payload = bytearray()
    components_hdr: dict[str, Any] = {}
    for comp_name, module in ckpt.components().items():
        if module is None:
            continue
        components_hdr[comp_name] = {
            "type": type(module).__name__,
            "kwargs": getattr(module, "init_kwargs", {}),
        }
        for pname, tensor in module.state_dict().items():
            raw = np.ascontiguousarray(
                tensor.detach().to(torch.float32).numpy()).astype("<f4").tobytes()
            blocks.append({
                "name": f"{comp_name}.{pname}",
                "shape": list(tensor.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            })
            payload.extend(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config,
        "meta": ckpt.meta,
        "components": components_hdr,
        "blocks": blocks,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(bytes(payload))


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint archive")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    header = json.loads(data[12:12 + hlen].decode())
    payload = data[12 + hlen:]

    by_component: dict[str, dict[str, torch.Tensor]] = {}
    for blk in header["blocks"]:
        comp, pname = blk["name"].split(".", 1)
        raw = payload[blk["offset"]:blk["offset"] + blk["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(blk["shape"]).copy()
        by_component.setdefault(comp, {})[pname] = torch.from_numpy(arr)

    ckpt = Checkpoint(config=header["config"], meta=header["meta"])
    for comp_name, info in header["components"].items():
        cls = _REGISTRY.get(info["type"])
        if cls is None:
            raise CheckpointError(f"unknown component type {info['type']!r}")
        kwargs = dict(info["kwargs"])
        for k, v in kwargs.items():
            if isinstance(v, list):
                kwargs[k] = tuple(v)
        module = cls(**kwargs)
        module.load_state_dict(by_component.get(comp_name, {}))
        module.eval()
        setattr(ckpt, comp_name, module)
    return ckpt
