import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphscene.graph import (
    Edge,
    GraphOrderError,
    GraphParseError,
    InstanceNode,
    RoadNode,
    SceneGraph,
    adjacency,
    graph_from_json,
    graph_to_json,
    isomorphic,
    validate_graph,
)

from conftest import make_graph


class TestValidate:
    def test_minimal_valid_graph(self):
        g = SceneGraph.create("Others")
        assert validate_graph(g) == []

    def test_duplicate_road_node(self):
        g = SceneGraph(roads=[RoadNode("Others"), RoadNode("Crossroad")])
        codes = [v.code for v in validate_graph(g)]
        assert codes == ["duplicate_road"]

    def test_missing_road_node(self):
        g = SceneGraph(roads=[])
        assert [v.code for v in validate_graph(g)] == ["missing_road"]

    def test_dangling_endpoint_named(self):
        g = make_graph(specs=[("v1", "Vehicle", None)],
                       edges=[("proximity", "v1", "x9")])
        report = validate_graph(g)
        assert len(report) == 1
        assert report[0].code == "dangling_endpoint"
        assert "x9" in report[0].message

    def test_non_countable_class(self):
        g = SceneGraph.create("Others", [InstanceNode("b1", "Building", None)])
        assert [v.code for v in validate_graph(g)] == ["bad_class"]

    def test_patch_out_of_range(self):
        g = make_graph(specs=[("v1", "Vehicle", (8, 0))])
        assert [v.code for v in validate_graph(g)] == ["patch_range"]

    def test_self_edge_and_duplicate_edge(self):
        g = make_graph(specs=[("v1", "Vehicle", None), ("v2", "Vehicle", None)],
                       edges=[("proximity", "v1", "v1"),
                              ("proximity", "v1", "v2"),
                              ("proximity", "v2", "v1")])
        codes = {v.code for v in validate_graph(g)}
        assert codes == {"self_edge", "duplicate_edge"}

    def test_proximity_to_road_rejected(self):
        g = make_graph(specs=[("v1", "Vehicle", None)],
                       edges=[("proximity", "v1", "road")])
        assert [v.code for v in validate_graph(g)] == ["proximity_road"]

    def test_node_limit(self):
        g = make_graph(specs=[(f"v{i}", "Vehicle", None) for i in range(64)])
        assert [v.code for v in validate_graph(g)] == ["too_many_nodes"]


class TestAdjacency:
    def test_complete_three_node(self):
        g = make_graph(specs=[("a", "Vehicle", None), ("b", "Pole", None)],
                       edges=[("proximity", "a", "b"),
                              ("road", "a", "road"), ("road", "b", "road")])
        mat = adjacency(g)
        expected = np.ones((3, 3), dtype=np.int64) - np.eye(3, dtype=np.int64)
        assert np.array_equal(mat, expected)

    def test_no_edges_zero_matrix(self):
        g = make_graph(specs=[("a", "Vehicle", None), ("b", "Pole", None)])
        assert adjacency(g).sum() == 0

    def test_permutation_conjugates(self):
        g = make_graph(specs=[("a", "Vehicle", None), ("b", "Pole", None),
                              ("c", "Pedestrian", None)],
                       edges=[("proximity", "a", "b"), ("road", "c", "road")])
        base_order = g.node_ids()
        mat = adjacency(g, base_order)
        perm = [2, 0, 3, 1]
        order = [base_order[i] for i in perm]
        permuted = adjacency(g, order)
        # oracle: re-enumerate edges directly in the permuted order
        pos = {nid: i for i, nid in enumerate(order)}
        expected = np.zeros_like(mat)
        for e in g.edges:
            expected[pos[e.a], pos[e.b]] = 1
            expected[pos[e.b], pos[e.a]] = 1
        assert np.array_equal(permuted, expected)
        p = np.eye(len(perm), dtype=np.int64)[perm]
        assert np.array_equal(permuted, p @ mat @ p.T)

    def test_unknown_id_in_order(self):
        g = make_graph(specs=[("a", "Vehicle", None)])
        with pytest.raises(GraphOrderError):
            adjacency(g, ["road", "zz"])


_ids = st.lists(st.text(alphabet="abcdefgh", min_size=1, max_size=4),
                min_size=0, max_size=6, unique=True)


@st.composite
def random_graphs(draw):
    ids = draw(_ids)
    road_type = draw(st.sampled_from(["StraightRoad", "TJunction", "Crossroad",
                                      "BendRoad", "Others"]))
    instances = []
    for nid in ids:
        cls = draw(st.sampled_from(["Vehicle", "Pedestrian", "Pole"]))
        patch = draw(st.one_of(
            st.none(),
            st.tuples(st.integers(0, 7), st.integers(0, 7))))
        instances.append(InstanceNode(nid, cls, patch))
    edges = [Edge("road", nid, "road") for nid in ids]
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            if draw(st.booleans()):
                edges.append(Edge("proximity", ids[i], ids[j]))
    return SceneGraph.create(road_type, instances, edges, meta={"k": draw(st.integers(0, 9))})


@given(random_graphs())
@settings(max_examples=40, deadline=None)
def test_adjacency_symmetric_zero_diagonal(g):
    assert validate_graph(g) == []
    mat = adjacency(g)
    assert np.array_equal(mat, mat.T)
    assert np.trace(mat) == 0


@given(random_graphs())
@settings(max_examples=40, deadline=None)
def test_json_round_trip_identity(g):
    assert graph_from_json(graph_to_json(g)) == g


class TestJson:
    def test_patch_survives_round_trip(self):
        g = make_graph(specs=[("v1", "Vehicle", (7, 7))])
        g2 = graph_from_json(graph_to_json(g))
        assert g2.instance("v1").patch == (7, 7)

    def test_unknown_class_names_field(self):
        text = '{"road": {"type": "Others"}, "instances": [{"id": "t1", "class": "Tank"}]}'
        with pytest.raises(GraphParseError, match=r"instances\[0\]\.class"):
            graph_from_json(text)

    def test_malformed_json(self):
        with pytest.raises(GraphParseError, match="malformed"):
            graph_from_json("{nope")

    def test_bad_road_type(self):
        with pytest.raises(GraphParseError, match="road.type"):
            graph_from_json('{"road": {"type": "Highway"}}')

    def test_semantic_violations_deferred_to_validate(self):
        text = ('{"road": {"type": "Others"}, '
                '"instances": [{"id": "v1", "class": "Vehicle", "patch": null}], '
                '"edges": [{"kind": "proximity", "a": "v1", "b": "ghost"}]}')
        g = graph_from_json(text)  # parses fine
        assert [v.code for v in validate_graph(g)] == ["dangling_endpoint"]


class TestIsomorphic:
    def test_relabel(self):
        a = make_graph(specs=[("x", "Vehicle", (0, 0)), ("y", "Pole", None)],
                       edges=[("road", "x", "road"), ("road", "y", "road")])
        b = make_graph(specs=[("m", "Vehicle", (3, 3)), ("n", "Pole", None)],
                       edges=[("road", "m", "road"), ("road", "n", "road")])
        assert isomorphic(a, b)

    def test_edge_mismatch(self):
        a = make_graph(specs=[("x", "Vehicle", None), ("y", "Vehicle", None)],
                       edges=[("proximity", "x", "y")])
        b = make_graph(specs=[("m", "Vehicle", None), ("n", "Vehicle", None)])
        assert not isomorphic(a, b)
