"""Map loading, occupancy, priors, node sampling, and graph construction."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from searchplan import (
    AgentProfile,
    EmptySubgraphError,
    MapFormatError,
    OccupancyGrid,
    SegmentedMap,
    agent_subgraph,
    build_graph,
    class_weight_prior,
    derive_occupancy,
    load_segmented_map,
    sample_nodes,
    save_segmented_map,
)
from searchplan.maps import DEFAULT_CLASS_NAMES, obstacle_within


def write_map(tmp_path, classes, resolution=0.5, name="map.json"):
    classes = np.asarray(classes)
    path = tmp_path / name
    path.write_text(
        json.dumps(
            {
                "width": classes.shape[1],
                "height": classes.shape[0],
                "resolution": resolution,
                "class_names": list(DEFAULT_CLASS_NAMES),
                "classes": classes.ravel().tolist(),
            }
        )
    )
    return path


class TestLoadSegmentedMap:
    def test_round_trip_2x2(self, tmp_path):
        path = write_map(tmp_path, [[0, 1], [2, 3]], resolution=0.5)
        seg = load_segmented_map(path)
        assert seg.width == 2 and seg.height == 2
        assert seg.resolution == 0.5
        assert seg.classes.tolist() == [[0, 1], [2, 3]]

    def test_class_id_out_of_range(self, tmp_path):
        path = write_map(tmp_path, [[0, 14]])
        with pytest.raises(MapFormatError, match="class"):
            load_segmented_map(path)

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"width": 2, "height": 2}))
        with pytest.raises(MapFormatError, match="resolution"):
            load_segmented_map(path)

    def test_wrong_cell_count(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(
            json.dumps({"width": 2, "height": 2, "resolution": 1.0, "classes": [0, 1, 2]})
        )
        with pytest.raises(MapFormatError, match="classes"):
            load_segmented_map(path)

    def test_fixture_64x64_reserializes_identically(self, tmp_path):
        rng = np.random.default_rng(7)
        classes = rng.integers(0, 14, size=(64, 64))
        path = write_map(tmp_path, classes, resolution=0.25)
        seg = load_segmented_map(path)
        assert seg.width == seg.height == 64
        out = tmp_path / "again.json"
        save_segmented_map(seg, out)
        assert load_segmented_map(out).classes.tolist() == seg.classes.tolist()

    def test_image_referenced_classes(self, tmp_path):
        from PIL import Image

        classes = np.array([[0, 5], [13, 2]], dtype=np.uint8)
        Image.fromarray(classes, mode="L").save(tmp_path / "cls.png")
        path = tmp_path / "m.json"
        path.write_text(
            json.dumps(
                {"width": 2, "height": 2, "resolution": 1.0, "class_image": "cls.png"}
            )
        )
        seg = load_segmented_map(path)
        assert seg.classes.tolist() == classes.tolist()


class TestDeriveOccupancy:
    def test_all_free(self):
        seg = SegmentedMap(1.0, np.zeros((3, 3), dtype=np.uint8))
        occ = derive_occupancy(seg, {1})
        assert not occ.occupied.any()

    def test_all_occupied(self):
        seg = SegmentedMap(1.0, np.ones((3, 3), dtype=np.uint8))
        occ = derive_occupancy(seg, {1})
        assert occ.occupied.all()

    def test_checkerboard_half_occupied(self):
        classes = np.indices((4, 4)).sum(axis=0) % 2
        seg = SegmentedMap(1.0, classes.astype(np.uint8))
        occ = derive_occupancy(seg, {1})
        assert int(occ.occupied.sum()) == 8


class TestClassWeightPrior:
    def test_uniform_weights_uniform_prior(self):
        seg = SegmentedMap(1.0, np.zeros((2, 5), dtype=np.uint8))
        occ = derive_occupancy(seg, set())
        prior = class_weight_prior(seg, occ, [1.0] * 14)
        assert np.allclose(prior.mass, 0.1)

    def test_single_class_ten_cells(self):
        classes = np.zeros((2, 10), dtype=np.uint8)
        classes[0, :] = 3  # ten cells of class 3
        seg = SegmentedMap(1.0, classes)
        occ = derive_occupancy(seg, set())
        weights = [0.0] * 14
        weights[3] = 1.0
        prior = class_weight_prior(seg, occ, weights)
        assert np.allclose(prior.mass[0, :], 0.1)
        assert np.allclose(prior.mass[1, :], 0.0)

    def test_three_to_one_ratio(self):
        classes = np.zeros((2, 4), dtype=np.uint8)
        classes[1, :] = 2
        seg = SegmentedMap(1.0, classes)
        occ = derive_occupancy(seg, set())
        weights = [0.0] * 14
        weights[0], weights[2] = 3.0, 1.0
        prior = class_weight_prior(seg, occ, weights)
        assert prior.mass[0].sum() == pytest.approx(3 * prior.mass[1].sum())

    def test_degenerate_prior_raises(self):
        from searchplan import DegeneratePriorError

        seg = SegmentedMap(1.0, np.ones((2, 2), dtype=np.uint8))
        occ = derive_occupancy(seg, {1})
        with pytest.raises(DegeneratePriorError):
            class_weight_prior(seg, occ, [1.0] * 14)

    def test_sums_to_one_and_zero_on_obstacles(self):
        rng = np.random.default_rng(0)
        classes = rng.integers(0, 14, size=(9, 9)).astype(np.uint8)
        seg = SegmentedMap(0.5, classes)
        occ = derive_occupancy(seg, {1, 10})
        prior = class_weight_prior(seg, occ, rng.random(14) + 0.1)
        assert prior.total == pytest.approx(1.0, abs=1e-9)
        assert np.all(prior.mass[occ.occupied] == 0)


class TestSampleNodes:
    def test_obstacle_free_9_centroids(self):
        # 10.5 x 10.5 m map, grid 3.5 -> 3x3 squares, nodes at centroids
        occ = OccupancyGrid(0.5, np.zeros((21, 21), dtype=bool))
        nodes = sample_nodes(occ, 3.5)
        assert len(nodes) == 9
        expected = {(1.75 + 3.5 * i, 1.75 + 3.5 * j) for i in range(3) for j in range(3)}
        got = {(round(x, 6), round(y, 6)) for x, y in nodes}
        assert got == expected

    def test_fully_occupied_empty(self):
        occ = OccupancyGrid(0.5, np.ones((7, 7), dtype=bool))
        assert len(sample_nodes(occ, 3.5)) == 0

    def test_free_region_centroid_when_center_too_close(self):
        # single 3.5 m square at 0.1 m resolution; an obstacle cell sits
        # 0.2 m from the centroid, so the free-region centroid must be used
        grid = np.zeros((35, 35), dtype=bool)
        centroid = (1.75, 1.75)
        grid[17, 19] = True  # cell [1.9, 2.0) x [1.7, 1.8): 0.15 m from centroid
        occ = OccupancyGrid(0.1, grid)
        assert obstacle_within(occ, *centroid, 0.40)
        nodes = sample_nodes(occ, 3.5, clearance=0.40)
        assert len(nodes) == 1
        # oracle: brute-force centroid of free cell centers
        ys, xs = np.nonzero(~grid)
        ex = (xs + 0.5) * 0.1
        ey = (ys + 0.5) * 0.1
        assert nodes[0][0] == pytest.approx(ex.mean(), abs=1e-9)
        assert nodes[0][1] == pytest.approx(ey.mean(), abs=1e-9)
        assert occ.is_free_at(*nodes[0])

    def test_snap_to_free_cell_when_centroid_occupied(self):
        # free region is two opposite corners; its centroid is the occupied middle
        grid = np.ones((35, 35), dtype=bool)
        grid[0:5, 0:5] = False
        grid[30:35, 30:35] = False
        occ = OccupancyGrid(0.1, grid)
        nodes = sample_nodes(occ, 3.5, clearance=0.4)
        assert len(nodes) == 1
        assert occ.is_free_at(*nodes[0])

    def test_vertex_fallback_for_fully_occupied_square(self):
        # left square fully occupied, right square free: the left square's
        # shared vertices land in free cells, so it emits a vertex node
        grid = np.zeros((7, 14), dtype=bool)
        grid[:, :7] = True
        occ = OccupancyGrid(0.5, grid)
        nodes = sample_nodes(occ, 3.5, clearance=0.4)
        xs = sorted(round(x, 6) for x, y in nodes)
        assert 3.5 in xs  # vertex of the occupied square
        assert len(nodes) == 2

    def test_nodes_always_on_free_space_inside_square(self):
        rng = np.random.default_rng(3)
        for _ in range(12):
            grid = rng.random((14, 14)) < 0.35
            occ = OccupancyGrid(0.5, grid)
            gd = 3.5
            for x, y in sample_nodes(occ, gd):
                assert occ.is_free_at(x, y)
                sx, sy = int(x // gd), int(y // gd)
                # closed-square containment (vertices sit on the boundary)
                assert sx * gd - 1e-9 <= x <= (sx + 1) * gd + 1e-9 or x == pytest.approx(sx * gd)
                assert sy * gd - 1e-9 <= y <= (sy + 1) * gd + 1e-9


class TestBuildGraph:
    def test_three_collinear_nodes_complete(self):
        occ = OccupancyGrid(0.5, np.zeros((7, 21), dtype=bool))
        nodes = sample_nodes(occ, 3.5)
        assert len(nodes) == 3
        g = build_graph(nodes, occ, neighborhood=7, grid_distance=3.5)
        assert all(g.adjacency[i, j] for i in range(3) for j in range(3) if i != j)

    def test_wall_blocks_arc(self):
        grid = np.zeros((7, 14), dtype=bool)
        grid[:, 7] = True  # full-height wall between the two squares
        grid[:, 6] = True
        occ = OccupancyGrid(0.5, grid)
        nodes = np.array([[1.75, 1.75], [5.25, 1.75]])
        g = build_graph(nodes, occ, neighborhood=7, grid_distance=3.5)
        assert not g.adjacency[0, 1]

    def test_3x3_lattice_neighborhood_3(self):
        occ = OccupancyGrid(0.5, np.zeros((21, 21), dtype=bool))
        nodes = sample_nodes(occ, 3.5)
        g = build_graph(nodes, occ, neighborhood=3, grid_distance=3.5)
        degrees = g.adjacency.sum(axis=1)
        # positions on a 3x3 lattice: corners degree 3, edges 5, center 8
        assert sorted(degrees.tolist()) == [3, 3, 3, 3, 5, 5, 5, 5, 8]

    def test_symmetry_and_positive_lengths(self):
        rng = np.random.default_rng(5)
        grid = rng.random((21, 21)) < 0.2
        occ = OccupancyGrid(0.5, grid)
        nodes = sample_nodes(occ, 3.5)
        g = build_graph(nodes, occ, 7, 3.5)
        assert np.array_equal(g.adjacency, g.adjacency.T)
        assert np.array_equal(g.distances, g.distances.T)
        assert np.all(g.distances[g.adjacency] > 0)

    def test_even_neighborhood_rejected(self):
        occ = OccupancyGrid(0.5, np.zeros((7, 7), dtype=bool))
        with pytest.raises(MapFormatError):
            build_graph(np.array([[1.75, 1.75]]), occ, neighborhood=4, grid_distance=3.5)

    def test_graph_json_round_trip(self):
        from searchplan import SearchGraph

        occ = OccupancyGrid(0.5, np.zeros((21, 21), dtype=bool))
        g = build_graph(sample_nodes(occ, 3.5), occ, 7, 3.5)
        g2 = SearchGraph.from_json(g.to_json())
        assert np.array_equal(g.adjacency, g2.adjacency)
        assert np.allclose(g.positions, g2.positions)


class TestAgentSubgraph:
    def _setup(self):
        classes = np.zeros((21, 21), dtype=np.uint8)
        classes[:, 14:] = 4  # right third is grass
        seg = SegmentedMap(0.5, classes)
        occ = derive_occupancy(seg, set())
        g = build_graph(sample_nodes(occ, 3.5), occ, 7, 3.5)
        return seg, g

    def test_no_restrictions_identity(self):
        seg, g = self._setup()
        agent = AgentProfile(0, (1.0, 1.0))
        sub = agent_subgraph(g, agent, seg)
        assert np.array_equal(sub.adjacency, g.adjacency)
        assert sub.n_active == g.n_active

    def test_all_restricted_raises(self):
        seg, g = self._setup()
        agent = AgentProfile(0, (1.0, 1.0), restricted_classes=frozenset({0, 4}))
        with pytest.raises(EmptySubgraphError):
            agent_subgraph(g, agent, seg)

    def test_single_class_removed_ids_preserved(self):
        seg, g = self._setup()
        agent = AgentProfile(0, (1.0, 1.0), restricted_classes=frozenset({4}))
        sub = agent_subgraph(g, agent, seg)
        removed = np.flatnonzero(~sub.active)
        assert len(removed) == 3  # the rightmost column of the 3x3 lattice
        for i in removed:
            assert not sub.adjacency[i].any()
        kept = np.flatnonzero(sub.active)
        assert np.array_equal(
            sub.adjacency[np.ix_(kept, kept)], g.adjacency[np.ix_(kept, kept)]
        )

    @given(st.sets(st.integers(0, 13)), st.sets(st.integers(0, 13)))
    @settings(max_examples=25, deadline=None)
    def test_restriction_monotone(self, a, b):
        seg, g = self._setup()
        larger = a | b
        try:
            sub_a = agent_subgraph(g, AgentProfile(0, (1.0, 1.0), restricted_classes=a), seg)
        except EmptySubgraphError:
            return
        try:
            sub_ab = agent_subgraph(
                g, AgentProfile(0, (1.0, 1.0), restricted_classes=larger), seg
            )
        except EmptySubgraphError:
            return
        assert np.all(sub_ab.active <= sub_a.active)
        assert np.all(sub_ab.adjacency <= sub_a.adjacency)
