"""Conditional 3D denoiser lifting a 2D map to a semantic voxel scene.

The generated map is up-scaled to the scene's horizontal resolution (identity
at desk scale), broadcast along the vertical axis, and concatenated to the
noisy one-hot scene as extra channels. Same reverse-diffusion machinery as
the 2D stage, same loss, one more axis.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .dataset import BevMap, D, H, VoxelScene, W
from .diffusion import DiffusionSchedule, one_hot, p_sample_loop
from .palette import NUM_CLASSES


def upscale_map(bev: BevMap, out_hw: tuple[int, int] = (H, W)) -> torch.Tensor:
    """Nearest-neighbor resample to (H, W) and one-hot encode: (H, W, c) float."""
    grid = torch.from_numpy(np.ascontiguousarray(bev.grid)).long()
    oh, ow = out_hw
    if grid.shape != (oh, ow):
        ridx = (torch.arange(oh) * grid.shape[0]) // oh
        cidx = (torch.arange(ow) * grid.shape[1]) // ow
        grid = grid[ridx][:, cidx]
    return one_hot(grid, NUM_CLASSES)


def _block3d(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(cin, cout, 3, padding=1), nn.GroupNorm(8, cout), nn.SiLU(),
        nn.Conv3d(cout, cout, 3, padding=1), nn.GroupNorm(8, cout), nn.SiLU(),
    )


class Denoiser3D(nn.Module):
    """3-level 3D UNet over (H, W, D) voxel grids; predicts z0 logits."""

    def __init__(self, num_classes: int = NUM_CLASSES,
                 widths: tuple[int, int, int] = (16, 32, 64)):
        super().__init__()
        self.init_kwargs = dict(num_classes=num_classes, widths=tuple(widths))
        self.num_classes = num_classes
        w0, w1, w2 = widths
        cin = num_classes * 2 + 1  # one-hot z_t + broadcast map + timestep
        self.enc0 = _block3d(cin, w0)
        self.down0 = nn.Conv3d(w0, w1, 3, stride=2, padding=1)
        self.enc1 = _block3d(w1, w1)
        self.down1 = nn.Conv3d(w1, w2, 3, stride=2, padding=1)
        self.mid = _block3d(w2, w2)
        self.up1 = nn.ConvTranspose3d(w2, w1, 2, stride=2)
        self.dec1 = _block3d(w1 * 2, w1)
        self.up0 = nn.ConvTranspose3d(w1, w0, 2, stride=2)
        self.dec0 = _block3d(w0 * 2, w0)
        self.head = nn.Conv3d(w0, num_classes, 1)

    def forward(self, z_onehot: torch.Tensor, t_norm: torch.Tensor,
                cond_map: torch.Tensor) -> torch.Tensor:
        """z_onehot [B,c,H,W,D], t_norm [B], cond_map [B,c,H,W] -> logits [B,c,H,W,D]."""
        depth = z_onehot.shape[-1]
        cond = cond_map.unsqueeze(-1).expand(-1, -1, -1, -1, depth)
        tch = t_norm.view(-1, 1, 1, 1, 1).expand(
            -1, 1, z_onehot.shape[2], z_onehot.shape[3], depth)
        h = torch.cat([z_onehot, cond.to(z_onehot.dtype), tch.to(z_onehot.dtype)], dim=1)
        e0 = self.enc0(h)
        e1 = self.enc1(self.down0(e0))
        m = self.mid(self.down1(e1))
        d1 = self.dec1(torch.cat([self.up1(m), e1], dim=1))
        d0 = self.dec0(torch.cat([self.up0(d1), e0], dim=1))
        return self.head(d0)


def denoise3d(z_t: torch.Tensor, t: int, cond_onehot: torch.Tensor, model: Denoiser3D,
              T: int) -> torch.Tensor:
    """Single-scene wrapper: index grid (H,W,D) + map one-hot (H,W,c) -> logits (H,W,D,c)."""
    if z_t.shape != (H, W, D) or cond_onehot.shape != (H, W, model.num_classes):
        raise ValueError(f"bad shapes: z_t {tuple(z_t.shape)}, cond {tuple(cond_onehot.shape)}")
    zo = one_hot(z_t, model.num_classes).permute(3, 0, 1, 2).unsqueeze(0)
    cond = cond_onehot.permute(2, 0, 1).unsqueeze(0)
    t_norm = torch.tensor([t / T], dtype=zo.dtype)
    with torch.no_grad():
        logits = model(zo, t_norm, cond)
    return logits[0].permute(1, 2, 3, 0)


def batched_denoiser3d(model: Denoiser3D, T: int):
    def fn(z_t: torch.Tensor, t: int, cond: torch.Tensor) -> torch.Tensor:
        zo = one_hot(z_t, model.num_classes).permute(0, 4, 1, 2, 3)
        t_norm = torch.full((z_t.shape[0],), t / T, dtype=zo.dtype)
        with torch.no_grad():
            logits = model(zo, t_norm, cond)
        return logits.permute(0, 2, 3, 4, 1)
    return fn


def sample_scene(bev: BevMap, model: Denoiser3D, sched: DiffusionSchedule,
                 rng: torch.Generator) -> VoxelScene:
    return sample_scenes([bev], model, sched, rng)[0]


def sample_scenes(bevs: list[BevMap], model: Denoiser3D, sched: DiffusionSchedule,
                  rng: torch.Generator, chunk: int = 16) -> list[VoxelScene]:
    """Batched 3D stage: map -> reverse diffusion -> voxel scene."""
    out: list[VoxelScene] = []
    for start in range(0, len(bevs), chunk):
        part = bevs[start:start + chunk]
        cond = torch.stack([upscale_map(b).permute(2, 0, 1) for b in part])
        z0 = p_sample_loop(batched_denoiser3d(model, sched.T), cond,
                           (len(part), H, W, D), sched, rng)
        out.extend(VoxelScene(z0[i].numpy().astype("uint8")) for i in range(len(part)))
    return out
