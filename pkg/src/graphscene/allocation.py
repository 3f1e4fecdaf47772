"""Scatter sparse node embeddings onto the dense BEV embedding map.

Each instance node owns a 4x4 block of the 32x32 BEV lattice addressed by its
patch index; embeddings of co-located nodes sum. Nodes without a position get
one from a small localization head sampled with Gumbel noise at temperature
tau — the only stochastic piece between the graph and the 2D diffusion stage.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .dataset import HB, WB, PATCH_CELLS
from .encoder import CaneSet
from .graph import PATCH_GRID, ROAD_NODE_ID


class AllocationError(ValueError):
    pass


def patch_mask(patch: tuple[int, int], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Binary H_b x W_b map that is 1 exactly on the patch's 4x4 block."""
    r, c = patch
    if not (0 <= r < PATCH_GRID and 0 <= c < PATCH_GRID):
        raise AllocationError(f"patch {patch!r} outside {PATCH_GRID}x{PATCH_GRID} grid")
    mask = torch.zeros(HB, WB, dtype=dtype)
    mask[r * PATCH_CELLS:(r + 1) * PATCH_CELLS, c * PATCH_CELLS:(c + 1) * PATCH_CELLS] = 1.0
    return mask


def assemble_bem(cane: CaneSet, positions: dict[str, tuple[int, int]]) -> torch.Tensor:
    """Sum node embeddings over their patch blocks; (H_b, W_b, C), zero elsewhere.

    Every instance node must have a position. The road node is summed in too
    when ``positions`` carries one (its anchor is the road-mask centroid);
    without it an instance-free graph would collapse to a zero map and lose
    all road-type control.
    """
    bem = torch.zeros(HB, WB, cane.per_node.shape[-1], dtype=cane.per_node.dtype)
    for nid, row in zip(cane.ids, cane.per_node):
        if nid not in positions:
            if nid == ROAD_NODE_ID:
                continue
            raise AllocationError(f"no position for instance node {nid!r}")
        r, c = positions[nid]
        if not (0 <= r < PATCH_GRID and 0 <= c < PATCH_GRID):
            raise AllocationError(f"patch {(r, c)!r} outside grid for node {nid!r}")
        bem[r * PATCH_CELLS:(r + 1) * PATCH_CELLS,
            c * PATCH_CELLS:(c + 1) * PATCH_CELLS] += row
    return bem


class LocalizationHead(nn.Module):
    """MLP from an embedding row to logits over the 64 patch cells."""

    def __init__(self, cane_dim: int = 64, hidden: int = 128, tau: float = 2.0):
        super().__init__()
        self.init_kwargs = dict(cane_dim=cane_dim, hidden=hidden, tau=tau)
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.tau = tau
        self.mlp = nn.Sequential(
            nn.Linear(cane_dim, hidden), nn.ReLU(), nn.Linear(hidden, PATCH_GRID * PATCH_GRID))

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        return self.mlp(rows)


def localize(cane_row: torch.Tensor, head: LocalizationHead, rng: torch.Generator,
             tau: float | None = None) -> tuple[int, int]:
    """Hard Gumbel sample of a patch: argmax(logits / tau + gumbel noise).

    Sampling frequencies follow softmax(logits / tau); tau -> 0 recovers the
    plain argmax, larger tau flattens toward uniform.
    """
    tau = head.tau if tau is None else tau
    if tau <= 0:
        raise ValueError("tau must be positive")
    with torch.no_grad():
        logits = head(cane_row)
        u = torch.rand(logits.shape, generator=rng, dtype=torch.float64)
        neg_log_u = -torch.log(u.clamp_min(1e-20))
        gumbel = -torch.log(neg_log_u.clamp_min(1e-30))
        idx = int(torch.argmax(logits.to(torch.float64) / tau + gumbel).item())
    return divmod(idx, PATCH_GRID)


def loc_loss(head: LocalizationHead, cane: CaneSet,
             gt_positions: dict[str, tuple[int, int]]) -> torch.Tensor:
    """Mean cross-entropy between head logits and the true patch indices.

    Computed over the nodes listed in ``gt_positions`` — normally every
    instance node; training on a masked subset, or including the road node's
    centroid anchor, just changes which rows contribute.
    """
    keep = [i for i, nid in enumerate(cane.ids) if nid in gt_positions]
    if not keep:
        raise AllocationError("gt_positions covers no node in the graph")
    targets = torch.tensor(
        [gt_positions[cane.ids[i]][0] * PATCH_GRID + gt_positions[cane.ids[i]][1]
         for i in keep])
    logits = head(cane.per_node[keep])
    return nn.functional.cross_entropy(logits, targets)
