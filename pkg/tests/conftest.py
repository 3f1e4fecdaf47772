import numpy as np
import pytest
import torch

from graphscene.graph import Edge, InstanceNode, SceneGraph


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def make_graph(road_type="Crossroad", specs=(), edges=()):
    """specs: iterable of (id, class, patch-or-None)."""
    instances = [InstanceNode(i, c, p) for i, c, p in specs]
    edge_objs = [Edge(k, a, b) for k, a, b in edges]
    return SceneGraph.create(road_type, instances, edge_objs)


def five_node_graph():
    """Small mixed graph used by the gradient and equivariance checks."""
    return make_graph(
        "TJunction",
        specs=[("v1", "Vehicle", (1, 2)), ("v2", "Vehicle", (5, 6)),
               ("p1", "Pedestrian", (3, 3)), ("q1", "Pole", None)],
        edges=[("road", "v1", "road"), ("road", "v2", "road"),
               ("road", "p1", "road"), ("road", "q1", "road"),
               ("proximity", "v1", "p1")],
    )


def finite_diff_grads(loss_fn, tensors, h=1e-5, max_coords=4, seed=0):
    """Central-difference gradients at a fixed sample of coordinates.

    Returns a list of (tensor_index, flat_coord, fd_grad, analytic_grad).
    ``loss_fn`` must be a pure function of the (double-precision) tensors.
    """
    for t in tensors:
        assert t.dtype == torch.float64, "finite differences need float64"
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    out = []
    for ti, t in enumerate(tensors):
        flat = t.data.view(-1)
        n = flat.numel()
        coords = rng.choice(n, size=min(max_coords, n), replace=False)
        for coord in coords:
            orig = flat[coord].item()
            flat[coord] = orig + h
            up = loss_fn().item()
            flat[coord] = orig - h
            down = loss_fn().item()
            flat[coord] = orig
            fd = (up - down) / (2 * h)
            an = t.grad.view(-1)[coord].item() if t.grad is not None else 0.0
            out.append((ti, int(coord), fd, an))
    return out


def max_rel_error(checks, eps=1e-8):
    worst = 0.0
    for _, _, fd, an in checks:
        denom = max(abs(fd), abs(an), eps)
        worst = max(worst, abs(fd - an) / denom)
    return worst
