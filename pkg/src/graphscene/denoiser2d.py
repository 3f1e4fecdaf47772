"""Conditional 2D denoiser and map sampling.

A small encoder-decoder convnet predicts clean-map logits from the noisy map,
a normalized-timestep channel, and the BEV embedding map concatenated at
input resolution (the map and the embedding share the 32x32 lattice by
construction, so concatenation is the whole conditioning mechanism).
Unconditional mode is the same network fed an all-zero embedding map.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .allocation import assemble_bem, localize, LocalizationHead
from .dataset import BevMap, HB, WB
from .diffusion import DiffusionSchedule, one_hot, p_sample_loop
from .encoder import GraphEncoder, build_node_features
from .graph import SceneGraph
from .palette import NUM_CLASSES


def _block2d(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.GroupNorm(8, cout), nn.SiLU(),
        nn.Conv2d(cout, cout, 3, padding=1), nn.GroupNorm(8, cout), nn.SiLU(),
    )


class Denoiser2D(nn.Module):
    """3-level UNet over 32x32 maps; predicts x0 logits."""

    def __init__(self, num_classes: int = NUM_CLASSES, cond_channels: int = 64,
                 widths: tuple[int, int, int] = (32, 64, 128)):
        super().__init__()
        self.init_kwargs = dict(num_classes=num_classes, cond_channels=cond_channels,
                                widths=tuple(widths))
        self.num_classes = num_classes
        self.cond_channels = cond_channels
        w0, w1, w2 = widths
        cin = num_classes + cond_channels + 1
        self.enc0 = _block2d(cin, w0)
        self.down0 = nn.Conv2d(w0, w1, 3, stride=2, padding=1)
        self.enc1 = _block2d(w1, w1)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.mid = _block2d(w2, w2)
        self.up1 = nn.ConvTranspose2d(w2, w1, 2, stride=2)
        self.dec1 = _block2d(w1 * 2, w1)
        self.up0 = nn.ConvTranspose2d(w1, w0, 2, stride=2)
        self.dec0 = _block2d(w0 * 2, w0)
        self.head = nn.Conv2d(w0, num_classes, 1)

    def forward(self, x_onehot: torch.Tensor, t_norm: torch.Tensor,
                cond: torch.Tensor) -> torch.Tensor:
        """x_onehot [B,c,H,W], t_norm [B], cond [B,C,H,W] -> logits [B,c,H,W]."""
        tch = t_norm.view(-1, 1, 1, 1).expand(-1, 1, x_onehot.shape[2], x_onehot.shape[3])
        h = torch.cat([x_onehot, cond, tch.to(x_onehot.dtype)], dim=1)
        e0 = self.enc0(h)
        e1 = self.enc1(self.down0(e0))
        m = self.mid(self.down1(e1))
        d1 = self.dec1(torch.cat([self.up1(m), e1], dim=1))
        d0 = self.dec0(torch.cat([self.up0(d1), e0], dim=1))
        return self.head(d0)


def denoise2d(x_t: torch.Tensor, t: int, bem: torch.Tensor, model: Denoiser2D,
              T: int) -> torch.Tensor:
    """Single-map convenience wrapper: index grid (H,W) + BEM (H,W,C) -> logits (H,W,c)."""
    if x_t.shape != (HB, WB) or bem.shape[:2] != (HB, WB):
        raise ValueError(f"bad shapes: x_t {tuple(x_t.shape)}, bem {tuple(bem.shape)}")
    xo = one_hot(x_t, model.num_classes).permute(2, 0, 1).unsqueeze(0)
    cond = bem.permute(2, 0, 1).unsqueeze(0).to(xo.dtype)
    t_norm = torch.tensor([t / T], dtype=xo.dtype)
    with torch.no_grad():
        logits = model(xo, t_norm, cond)
    return logits[0].permute(1, 2, 0)


def batched_denoiser(model: Denoiser2D, T: int):
    """Adapt the module to the p_sample_loop contract over (B,H,W) index grids."""
    def fn(x_t: torch.Tensor, t: int, cond: torch.Tensor) -> torch.Tensor:
        xo = one_hot(x_t, model.num_classes).permute(0, 3, 1, 2)
        t_norm = torch.full((x_t.shape[0],), t / T, dtype=xo.dtype)
        with torch.no_grad():
            logits = model(xo, t_norm, cond)
        return logits.permute(0, 2, 3, 1)
    return fn


def graph_bem(graph: SceneGraph, encoder: GraphEncoder, loc_head: LocalizationHead | None,
              rng: torch.Generator, tau: float | None = None) -> torch.Tensor:
    """Encode a graph and scatter it into a BEM; sample positions where missing.

    User-given patches are used verbatim; position-free instance nodes and the
    road node (which never carries a user position) are placed by the
    localization head. Without a head, the road block is simply omitted.
    """
    from .graph import ROAD_NODE_ID

    feats = build_node_features(graph)
    with torch.no_grad():
        cane = encoder.encode(graph, feats)
        positions: dict[str, tuple[int, int]] = {}
        for nid, row in zip(cane.ids, cane.per_node):
            if nid == ROAD_NODE_ID:
                if loc_head is not None:
                    positions[nid] = localize(row, loc_head, rng, tau)
                continue
            node = graph.instance(nid)
            if node.patch is not None:
                positions[nid] = node.patch
            else:
                if loc_head is None:
                    raise ValueError(
                        f"node {nid!r} has no position and no localization head is loaded")
                positions[nid] = localize(row, loc_head, rng, tau)
        return assemble_bem(cane, positions)


def sample_map(graph: SceneGraph, encoder: GraphEncoder, loc_head: LocalizationHead | None,
               model: Denoiser2D, sched: DiffusionSchedule, rng: torch.Generator,
               tau: float | None = None, unconditional: bool = False) -> BevMap:
    """Full 2D stage: graph -> BEM -> reverse diffusion -> categorical map."""
    maps = sample_maps([graph], encoder, loc_head, model, sched, rng,
                       tau=tau, unconditional=unconditional)
    return maps[0]


def sample_maps(graphs: list[SceneGraph], encoder: GraphEncoder,
                loc_head: LocalizationHead | None, model: Denoiser2D,
                sched: DiffusionSchedule, rng: torch.Generator,
                tau: float | None = None, unconditional: bool = False,
                chunk: int = 32) -> list[BevMap]:
    """Batched map sampling; one generator drives the whole stream."""
    out: list[BevMap] = []
    for start in range(0, len(graphs), chunk):
        part = graphs[start:start + chunk]
        if unconditional:
            cond = torch.zeros(len(part), encoder.cane_dim, HB, WB)
        else:
            bems = [graph_bem(g, encoder, loc_head, rng, tau) for g in part]
            cond = torch.stack([b.permute(2, 0, 1) for b in bems])
        x0 = p_sample_loop(batched_denoiser(model, sched.T), cond,
                           (len(part), HB, WB), sched, rng)
        out.extend(BevMap(x0[i].numpy().astype("uint8")) for i in range(len(part)))
    return out
