import numpy as np
import pytest
import torch
from scipy import stats

from graphscene.allocation import (
    AllocationError,
    LocalizationHead,
    assemble_bem,
    loc_loss,
    localize,
    patch_mask,
)
from graphscene.encoder import CaneSet, GraphEncoder, build_node_features

from conftest import finite_diff_grads, five_node_graph, max_rel_error


def cane_of(ids, rows):
    t = torch.as_tensor(rows, dtype=torch.float32)
    return CaneSet(per_node=t, global_vec=t.mean(0), ids=ids)


class TestPatchMask:
    def test_origin_block(self):
        m = patch_mask((0, 0))
        assert m[:4, :4].sum() == 16
        assert m.sum() == 16

    def test_every_patch_sums_sixteen(self):
        for r in range(8):
            for c in range(8):
                assert patch_mask((r, c)).sum() == 16

    def test_disjoint_blocks_partition(self):
        total = sum(patch_mask((r, c)) for r in range(8) for c in range(8))
        assert torch.equal(total, torch.ones(32, 32))

    def test_out_of_range(self):
        with pytest.raises(AllocationError):
            patch_mask((8, 0))


class TestAssembleBem:
    def test_single_node_block(self):
        e = torch.randn(64)
        cane = cane_of(["road", "a"], torch.stack([torch.zeros(64), e]))
        bem = assemble_bem(cane, {"a": (2, 3)})
        assert torch.equal(bem[8:12, 12:16], e.expand(4, 4, 64))
        outside = bem.clone()
        outside[8:12, 12:16] = 0
        assert outside.abs().sum() == 0

    def test_same_patch_sums(self):
        e1, e2 = torch.randn(64), torch.randn(64)
        cane = cane_of(["road", "a", "b"],
                       torch.stack([torch.zeros(64), e1, e2]))
        bem = assemble_bem(cane, {"a": (5, 5), "b": (5, 5)})
        assert torch.allclose(bem[20, 20], e1 + e2)

    def test_empty_instances_zero(self):
        cane = cane_of(["road"], torch.randn(1, 64))
        assert assemble_bem(cane, {}).abs().sum() == 0

    def test_missing_position_raises(self):
        cane = cane_of(["road", "a"], torch.randn(2, 64))
        with pytest.raises(AllocationError, match="a"):
            assemble_bem(cane, {})

    def test_linearity(self):
        rows = torch.randn(3, 64)
        pos = {"a": (1, 1), "b": (6, 2)}
        base = assemble_bem(cane_of(["road", "a", "b"], rows), pos)
        scaled = assemble_bem(cane_of(["road", "a", "b"], rows * 2.5), pos)
        assert torch.allclose(scaled, base * 2.5)

    def test_road_block_optional(self):
        cane = cane_of(["road", "a"], torch.ones(2, 64))
        # without an anchor the road contributes nothing...
        bem = assemble_bem(cane, {"a": (0, 0)})
        assert bem[28:, 28:].abs().sum() == 0
        # ...with one it gets its own block like any other node
        bem = assemble_bem(cane, {"a": (0, 0), "road": (7, 7)})
        assert torch.equal(bem[28:, 28:], torch.ones(4, 4, 64))

    def test_road_anchor_matches_mask_centroid(self):
        from graphscene.dataset import GenParams, generate_scene, road_patch
        scene, _, _ = generate_scene(GenParams("Crossroad", {}, seed=3))
        anchor = road_patch(scene)
        assert anchor is not None
        r, c = anchor
        assert 0 <= r < 8 and 0 <= c < 8

    def test_roadless_scene_has_no_anchor(self):
        import numpy as np
        from graphscene.dataset import VoxelScene, road_patch
        assert road_patch(VoxelScene(np.zeros((32, 32, 8), dtype=np.uint8))) is None


class TestLocalize:
    def test_dominated_logit_always_wins(self):
        head = LocalizationHead()
        head.mlp = torch.nn.Identity()  # feed logits straight through
        logits = torch.zeros(64)
        logits[37] = 1e6
        rng = torch.Generator().manual_seed(0)
        hits = sum(localize(logits, head, rng) == divmod(37, 8)
                   for _ in range(10_000))
        assert hits / 10_000 > 0.999

    def test_uniform_logits_uniform_frequencies(self):
        head = LocalizationHead()
        head.mlp = torch.nn.Identity()
        rng = torch.Generator().manual_seed(1)
        counts = np.zeros(64)
        for _ in range(10_000):
            r, c = localize(torch.zeros(64), head, rng)
            counts[r * 8 + c] += 1
        assert stats.chisquare(counts).pvalue > 0.01

    def test_temperature_scales_softmax(self):
        # frequencies must track softmax(logits / tau), tau = 2 flattens
        head = LocalizationHead(tau=2.0)
        head.mlp = torch.nn.Identity()
        logits = torch.zeros(64)
        logits[:4] = torch.tensor([2.0, 1.0, 0.5, 0.0])
        rng = torch.Generator().manual_seed(2)
        n = 20_000
        counts = np.zeros(64)
        for _ in range(n):
            r, c = localize(logits, head, rng)
            counts[r * 8 + c] += 1
        expected = torch.softmax(logits.double() / 2.0, 0).numpy() * n
        assert stats.chisquare(counts, f_exp=expected).pvalue > 0.01

    def test_zero_temperature_limit_is_argmax(self):
        head = LocalizationHead()
        head.mlp = torch.nn.Identity()
        logits = torch.randn(64, generator=torch.Generator().manual_seed(3))
        want = divmod(int(logits.argmax()), 8)
        rng = torch.Generator().manual_seed(4)
        assert all(localize(logits, head, rng, tau=1e-9) == want for _ in range(200))

    def test_determinism_per_seed(self):
        head = LocalizationHead()
        row = torch.randn(64)
        a = localize(row, head, torch.Generator().manual_seed(11))
        b = localize(row, head, torch.Generator().manual_seed(11))
        assert a == b

    def test_invalid_tau(self):
        head = LocalizationHead()
        with pytest.raises(ValueError):
            localize(torch.zeros(64), head, torch.Generator(), tau=0.0)
        with pytest.raises(ValueError):
            LocalizationHead(tau=-1.0)


class TestLocLoss:
    def test_perfect_logits_vanish(self):
        head = LocalizationHead()
        target = (3, 4)

        class Sharp(torch.nn.Module):
            def forward(self, rows):
                out = torch.zeros(rows.shape[0], 64)
                out[:, target[0] * 8 + target[1]] = 1e4
                return out

        head.mlp = Sharp()
        cane = cane_of(["road", "a"], torch.randn(2, 64))
        assert loc_loss(head, cane, {"a": target}).item() < 1e-6

    def test_uniform_logits_ln64(self):
        head = LocalizationHead()
        head.mlp = torch.nn.Linear(64, 64)
        torch.nn.init.zeros_(head.mlp.weight)
        torch.nn.init.zeros_(head.mlp.bias)
        cane = cane_of(["road", "a", "b"], torch.randn(3, 64))
        loss = loc_loss(head, cane, {"a": (0, 0), "b": (7, 7)})
        assert abs(loss.item() - np.log(64)) < 1e-6

    def test_no_targets_raises(self):
        head = LocalizationHead()
        cane = cane_of(["road"], torch.randn(1, 64))
        with pytest.raises(AllocationError):
            loc_loss(head, cane, {})

    def test_gradient_matches_finite_differences(self):
        g = five_node_graph()
        enc = GraphEncoder().double()
        head = LocalizationHead().double()
        feats = build_node_features(g, dtype=torch.float64)
        gt = {"v1": (1, 2), "v2": (5, 6), "p1": (3, 3), "q1": (0, 0)}

        def loss_fn():
            return loc_loss(head, enc.encode(g, feats), gt)

        weights = [head.mlp[0].weight, head.mlp[2].weight, enc.cane_mlp[0].weight]
        checks = finite_diff_grads(loss_fn, weights, max_coords=4)
        assert max_rel_error(checks) < 1e-3
