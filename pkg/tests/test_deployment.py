import numpy as np
import pytest

from modules.deployment import (
    DeploymentSpec, PositionFileError, Strategy, build_topology, generate,
    load_or_generate, position_file_name, read_positions, write_positions,
)


def test_grid_1000_has_delta_20(sinr):
    positions = generate(DeploymentSpec(Strategy.GRID, n=1000, area=(1000.0, 1000.0)))
    topology = build_topology(positions, sinr)
    assert topology.n == 1000
    assert topology.delta == 20


@pytest.mark.parametrize("strategy", list(Strategy))
def test_positions_inside_area(strategy):
    spec = DeploymentSpec(strategy, n=200, area=(500.0, 400.0), seed=3)
    positions = generate(spec)
    assert positions.shape == (200, 2)
    assert (positions[:, 0] >= 0).all() and (positions[:, 0] <= 500.0).all()
    assert (positions[:, 1] >= 0).all() and (positions[:, 1] <= 400.0).all()


def test_generation_is_deterministic():
    spec = DeploymentSpec("Random", n=50, area=(300.0, 300.0), seed=9)
    assert np.array_equal(generate(spec), generate(spec))
    other = DeploymentSpec("Random", n=50, area=(300.0, 300.0), seed=10)
    assert not np.array_equal(generate(spec), generate(other))


def test_strategy_aliases():
    assert Strategy.parse("C&R") is Strategy.CLUSTER_RANDOM
    assert Strategy.parse("perturbed_grid") is Strategy.PERTURBED_GRID
    assert Strategy.parse("cpg") is Strategy.CLUSTER_PERTURBED_GRID
    with pytest.raises(ValueError):
        Strategy.parse("Hexagon")


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        DeploymentSpec(Strategy.RANDOM, n=0)
    with pytest.raises(ValueError):
        DeploymentSpec(Strategy.RANDOM, n=10, mix_fraction=1.5)


def test_topology_matches_pairwise_distances(sinr):
    positions = generate(DeploymentSpec(Strategy.RANDOM, n=60, area=(300.0, 300.0), seed=1))
    topology = build_topology(positions, sinr)
    radius = topology.radius
    for v in range(topology.n):
        expected = [u for u in range(topology.n)
                    if u != v and np.hypot(*(positions[u] - positions[v])) <= radius]
        assert topology.adjacency[v] == expected
    graph = topology.to_graph()
    assert graph.number_of_edges() == len(topology.edge_array())
    assert topology.delta == max(dict(graph.degree()).values())


def test_isolated_node_has_zero_degree(sinr):
    topology = build_topology(np.array([[10.0, 10.0]]), sinr)
    assert topology.delta == 0
    assert topology.adjacency == [[]]


def test_position_file_round_trip(tmp_path):
    positions = generate(DeploymentSpec(Strategy.CLUSTER, n=20, area=(200.0, 200.0), seed=4))
    path = tmp_path / "pos.txt"
    write_positions(path, positions)
    assert np.allclose(read_positions(path), positions, atol=1e-6)


def test_position_file_errors_report_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# id x y\n0 1.0 2.0\n1 abc 3.0\n", encoding="utf-8")
    with pytest.raises(PositionFileError, match="第 3 行"):
        read_positions(path)

    path.write_text("0 1.0 2.0\n0 3.0 4.0\n", encoding="utf-8")
    with pytest.raises(PositionFileError, match="重複"):
        read_positions(path)

    with pytest.raises(FileNotFoundError):
        read_positions(tmp_path / "missing.txt")


def test_load_or_generate_prefers_file(tmp_path):
    spec = DeploymentSpec(Strategy.RANDOM, n=5, area=(100.0, 100.0), seed=2)
    stored = np.array([[float(i), float(i)] for i in range(5)])
    write_positions(tmp_path / position_file_name(spec), stored)
    assert np.allclose(load_or_generate(spec, tmp_path), stored)
    assert np.array_equal(load_or_generate(spec, None), generate(spec))
