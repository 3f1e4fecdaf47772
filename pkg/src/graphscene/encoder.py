"""Graph attention encoder producing context-aware node embeddings.

Two dense-attention GAT layers run over the scene graph; the mean-pooled
global vector is concatenated back onto every node and mixed by an MLP into
the final per-node embedding. Two auxiliary heads — inner-product edge
reconstruction and node classification — regularize the embedding space.

All forward passes run in a canonical node order (sorted ids) and scatter
results back to the caller's order, so permutation equivariance holds
bit-exactly, not just up to float noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .graph import PATCH_GRID, ROAD_NODE_ID, SceneGraph, adjacency
from .palette import COUNTABLE_CLASSES, ROAD_TYPES

N_CLASS_SLOTS = len(COUNTABLE_CLASSES) + 1  # countable classes + road-node slot
N_PATCH = PATCH_GRID * PATCH_GRID
FEATURE_DIM = N_CLASS_SLOTS + len(ROAD_TYPES) + N_PATCH + 1

NODE_LABELS = list(COUNTABLE_CLASSES) + list(ROAD_TYPES)  # joint label space, K=8


@dataclass
class CaneSet:
    """Per-node embeddings plus the pooled global vector, aligned with ``ids``."""

    per_node: torch.Tensor  # [|V|, C]
    global_vec: torch.Tensor  # [C]
    ids: list[str]

    def instance_rows(self) -> tuple[list[str], torch.Tensor]:
        keep = [i for i, nid in enumerate(self.ids) if nid != ROAD_NODE_ID]
        return [self.ids[i] for i in keep], self.per_node[keep]


def node_label_index(g: SceneGraph, node_id: str) -> int:
    if node_id == ROAD_NODE_ID:
        return len(COUNTABLE_CLASSES) + ROAD_TYPES.index(g.road.road_type)
    return COUNTABLE_CLASSES.index(g.instance(node_id).class_label)


def build_node_features(g: SceneGraph, masked_ids: set[str] | None = None,
                        dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Feature matrix in ``g.node_ids()`` order.

    Layout per row: class one-hot (3 countable + 1 road slot) | road-type
    one-hot (road node only) | patch one-hot (64) | mask bit. Masked nodes and
    nodes without a position get zeroed patch slots and mask bit 1; the road
    node is always positionless.
    """
    masked_ids = masked_ids or set()
    ids = g.node_ids()
    feats = torch.zeros(len(ids), FEATURE_DIM, dtype=dtype)
    patch_off = N_CLASS_SLOTS + len(ROAD_TYPES)
    mask_off = patch_off + N_PATCH
    for row, nid in enumerate(ids):
        if nid == ROAD_NODE_ID:
            feats[row, N_CLASS_SLOTS - 1] = 1.0
            feats[row, N_CLASS_SLOTS + ROAD_TYPES.index(g.road.road_type)] = 1.0
            feats[row, mask_off] = 1.0
            continue
        node = g.instance(nid)
        feats[row, COUNTABLE_CLASSES.index(node.class_label)] = 1.0
        if node.patch is None or nid in masked_ids:
            feats[row, mask_off] = 1.0
        else:
            feats[row, patch_off + node.patch[0] * PATCH_GRID + node.patch[1]] = 1.0
    return feats


class GATLayer(nn.Module):
    """Dense masked graph attention with a linear skip (self-loops added internally).

    The skip keeps node identity from washing out on star-shaped scene graphs
    where the road hub dominates every attention sum.
    """

    def __init__(self, in_dim: int, head_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = head_dim
        self.proj = nn.Linear(in_dim, heads * head_dim)
        self.skip = nn.Linear(in_dim, heads * head_dim, bias=False)
        self.att_src = nn.Parameter(torch.empty(heads, head_dim))
        self.att_dst = nn.Parameter(torch.empty(heads, head_dim))
        nn.init.xavier_uniform_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)
        nn.init.xavier_uniform_(self.skip.weight)
        nn.init.xavier_uniform_(self.att_src)
        nn.init.xavier_uniform_(self.att_dst)

    def forward(self, h: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        n = h.shape[0]
        z = self.proj(h).view(n, self.heads, self.head_dim)
        s_src = (z * self.att_src).sum(-1)  # [n, heads]
        s_dst = (z * self.att_dst).sum(-1)
        logits = F.leaky_relu(s_src.unsqueeze(1) + s_dst.unsqueeze(0), 0.2)  # [i, j, head]
        mask = (adj + torch.eye(n, dtype=adj.dtype, device=adj.device)) > 0
        logits = logits.masked_fill(~mask.unsqueeze(-1), float("-inf"))
        alpha = torch.softmax(logits, dim=1)
        out = torch.einsum("ijh,jhd->ihd", alpha, z)
        return out.reshape(n, self.heads * self.head_dim) + self.skip(h)


class GraphEncoder(nn.Module):
    """Two GAT layers -> mean pool -> per-node MLP over [h_i ; h_G]."""

    def __init__(self, feature_dim: int = FEATURE_DIM, hidden: int = 64,
                 cane_dim: int = 64, heads: int = 4, num_labels: int = len(NODE_LABELS)):
        super().__init__()
        self.init_kwargs = dict(feature_dim=feature_dim, hidden=hidden, cane_dim=cane_dim,
                                heads=heads, num_labels=num_labels)
        self.cane_dim = cane_dim
        self.gat1 = GATLayer(feature_dim, hidden // heads, heads)
        self.gat2 = GATLayer(hidden, hidden, 1)
        self.cane_mlp = nn.Sequential(
            nn.Linear(hidden * 2, hidden * 2), nn.ReLU(), nn.Linear(hidden * 2, cane_dim))
        self.cls_head = nn.Sequential(
            nn.Linear(cane_dim, hidden), nn.ReLU(), nn.Linear(hidden, num_labels))

    def encode(self, g: SceneGraph, feats: torch.Tensor) -> CaneSet:
        ids = g.node_ids()
        if feats.shape[0] != len(ids):
            raise ValueError(f"feature rows {feats.shape[0]} != node count {len(ids)}")
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        inv = torch.empty(len(ids), dtype=torch.long)
        inv[torch.tensor(order)] = torch.arange(len(ids))
        adj = torch.from_numpy(
            adjacency(g, [ids[i] for i in order])).to(feats.dtype)

        h = F.elu(self.gat1(feats[order], adj))
        h = self.gat2(h, adj)
        h_global = h.mean(dim=0)
        cane = self.cane_mlp(torch.cat([h, h_global.expand(h.shape[0], -1)], dim=-1))
        return CaneSet(per_node=cane[inv], global_vec=h_global, ids=ids)

    def classify_nodes(self, cane: CaneSet) -> torch.Tensor:
        return self.cls_head(cane.per_node)


def reconstruct_edges(cane: CaneSet) -> torch.Tensor:
    """Inner-product edge decoder: sigmoid(E E^T), symmetric with entries in (0,1)."""
    e = cane.per_node
    return torch.sigmoid(e @ e.T)


def aux_loss(g: SceneGraph, cane: CaneSet, encoder: GraphEncoder,
             edge_recon: bool = True, node_cls: bool = True) -> torch.Tensor:
    """Edge reconstruction BCE plus mean node-classification CE.

    The BCE target is the adjacency with unit diagonal (self-edges positive,
    the usual graph-autoencoder convention) averaged over all |V|^2 entries;
    without it the inner-product decoder could never reach zero loss.
    """
    dtype = cane.per_node.dtype
    total = torch.zeros((), dtype=dtype)
    if edge_recon:
        e = cane.per_node
        target = torch.from_numpy(adjacency(g, cane.ids)).to(dtype)
        target = target + torch.eye(len(cane.ids), dtype=dtype)
        total = total + F.binary_cross_entropy_with_logits(e @ e.T, target)
    if node_cls:
        labels = torch.tensor([node_label_index(g, nid) for nid in cane.ids])
        total = total + F.cross_entropy(encoder.classify_nodes(cane), labels)
    return total
