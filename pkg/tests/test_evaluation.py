import json

import numpy as np
import pytest
import torch

from graphscene.dataset import GenParams, VoxelScene, build_dataset, generate_scene
from graphscene.evaluation import (
    MetricsReport,
    count_objects,
    evaluate_control,
    f3d,
    frechet_distance,
    graph_counts,
    jaccard_categories,
    mae_counts,
    mean_jaccard,
    miou_ma,
)
from graphscene.palette import DEFAULT_PALETTE

from conftest import make_graph

VEH = DEFAULT_PALETTE.index("Vehicle")
POLE = DEFAULT_PALETTE.index("Pole")


class TestCountObjects:
    def test_generator_ground_truth(self):
        scene, _, _ = generate_scene(GenParams("StraightRoad", {"Vehicle": 3}, seed=4))
        assert count_objects(scene) == {"Vehicle": 3, "Pedestrian": 0, "Pole": 0}

    def test_all_free(self):
        scene = VoxelScene(np.zeros((32, 32, 8), dtype=np.uint8))
        assert count_objects(scene) == {"Vehicle": 0, "Pedestrian": 0, "Pole": 0}

    def test_diagonal_touch_is_one_component(self):
        grid = np.zeros((32, 32, 8), dtype=np.uint8)
        grid[3, 3, 0] = POLE
        grid[4, 4, 1] = POLE  # 26-connected diagonal in 3D
        assert count_objects(VoxelScene(grid))["Pole"] == 1

    def test_single_voxel_speckle_ignored(self):
        grid = np.zeros((32, 32, 8), dtype=np.uint8)
        grid[3, 3, 0] = VEH  # below the 2-voxel floor
        grid[20, 20, 0:2] = VEH
        assert count_objects(VoxelScene(grid))["Vehicle"] == 1


class TestMae:
    def test_perfect_match_zero(self):
        scene, graph, _ = generate_scene(GenParams("Others", {"Vehicle": 2}, seed=5))
        overall, per_class = mae_counts([(scene, graph)])
        assert overall == 0.0
        assert per_class == {"Vehicle": 0.0, "Pedestrian": 0.0, "Pole": 0.0}

    def test_arithmetic_example(self):
        scene, _, _ = generate_scene(GenParams("Others", {"Vehicle": 5}, seed=8))
        graph = make_graph("Others", specs=[(f"v{i}", "Vehicle", (0, 0)) for i in range(3)])
        overall, per_class = mae_counts([(scene, graph)])
        assert per_class["Vehicle"] == 2.0
        assert overall == pytest.approx(2.0 / 3.0)

    def test_permutation_invariant(self):
        ds = build_dataset(6, seed=9)
        pairs = [(s.scene, s.graph) for s in ds]
        a = mae_counts(pairs)
        b = mae_counts(list(reversed(pairs)))
        assert a[0] == b[0] and a[1] == b[1]

    def test_oracle_closure_on_synthetic_data(self):
        ds = build_dataset(10, seed=10)
        overall, per_class = mae_counts([(s.scene, s.graph) for s in ds])
        assert overall == 0.0 and all(v == 0.0 for v in per_class.values())


class TestJaccard:
    def test_half_overlap(self):
        scene, _, _ = generate_scene(GenParams("Others", {"Vehicle": 1}, seed=11))
        graph = make_graph("Others", specs=[("v", "Vehicle", (0, 0)),
                                            ("p", "Pedestrian", (1, 1))])
        assert jaccard_categories(scene, graph) == 0.5

    def test_identical_sets(self):
        scene, graph, _ = generate_scene(
            GenParams("Others", {"Vehicle": 1, "Pole": 2}, seed=12))
        assert jaccard_categories(scene, graph) == 1.0

    def test_disjoint_sets(self):
        scene, _, _ = generate_scene(GenParams("Others", {"Vehicle": 1}, seed=13))
        graph = make_graph("Others", specs=[("p", "Pole", (0, 0))])
        assert jaccard_categories(scene, graph) == 0.0

    def test_both_empty(self):
        scene = VoxelScene(np.zeros((32, 32, 8), dtype=np.uint8))
        assert jaccard_categories(scene, make_graph("Others")) == 1.0


class TestMiouMa:
    def _identity_autoencoder(self):
        class Identity(torch.nn.Module):
            def forward(self, onehot):
                return onehot * 10.0
        return Identity()

    def test_identical_reconstruction_is_one(self):
        ds = build_dataset(2, seed=14)
        miou, ma = miou_ma([s.scene for s in ds], self._identity_autoencoder())
        assert miou == 1.0 and ma == 1.0

    def test_untrained_flag_rejected(self):
        with pytest.raises(ValueError):
            miou_ma([], self._identity_autoencoder(), trained=False)


class TestF3D:
    def test_frechet_identical_gaussians_zero(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(64, 16))
        assert frechet_distance(feats, feats) < 1e-6

    def test_frechet_symmetry(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(64, 16))
        b = rng.normal(loc=0.5, size=(64, 16))
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9

    def test_shuffle_invariance(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(48, 16))
        b = rng.normal(size=(48, 16))
        shuffled = b[rng.permutation(48)]
        assert abs(frechet_distance(a, b) - frechet_distance(a, shuffled)) < 1e-9

    def test_f3d_needs_enough_scenes(self):
        from graphscene.autoencoder import SceneAutoencoder
        ds = build_dataset(2, seed=15)
        with pytest.raises(ValueError):
            f3d([s.scene for s in ds], [s.scene for s in ds], SceneAutoencoder())

    @pytest.mark.slow
    def test_identical_sets_near_zero_with_real_model(self):
        from graphscene.autoencoder import SceneAutoencoder
        torch.manual_seed(0)
        ds = build_dataset(20, seed=16)
        scenes = [s.scene for s in ds]
        model = SceneAutoencoder()
        assert f3d(scenes, list(scenes), model) < 1e-6


class TestReportAndSweep:
    def test_metrics_report_schema(self):
        report = MetricsReport(mae=0.5, per_class_mae={"Vehicle": 0.5},
                               jaccard=0.9, n_scenes=3, config={"seed": 1})
        obj = json.loads(report.to_json())
        assert {"mae", "per_class_mae", "jaccard", "miou", "ma", "f3d",
                "n_scenes", "config"} <= set(obj)

    def test_evaluate_control_bundles(self):
        ds = build_dataset(4, seed=17)
        report = evaluate_control([s.scene for s in ds], [s.graph for s in ds],
                                  config={"tag": "x"})
        assert report.mae == 0.0 and report.jaccard == 1.0
        assert report.n_scenes == 4 and report.config == {"tag": "x"}

    def test_single_row_sweep_carries_config(self, tmp_path):
        from graphscene.evaluation import ablation_sweep
        from graphscene.training import TrainConfig
        ds = build_dataset(3, seed=18)
        cfg = TrainConfig(T=6, batch_size=2, joint_steps=2, loc_steps=2,
                          widths2d=(8, 16, 24), log_every=1)

        def sample_fn(ckpt, graphs):
            return [ds[i % len(ds)].scene for i in range(len(graphs))]

        csv_path = tmp_path / "ab.csv"
        rows = ablation_sweep(ds, [s.graph for s in ds], cfg,
                              [{"axis": "uncond", "uncond_proportion": 0.2}],
                              sample_fn, csv_path=csv_path)
        assert len(rows) == 1
        snap = json.loads(rows[0]["config"])
        assert snap["uncond_proportion"] == 0.2
        header = csv_path.read_text().splitlines()[0]
        assert "mae" in header and "jaccard" in header and "config" in header
