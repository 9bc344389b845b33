import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from cffair.causal_graph import (ConceptGraph, format_graph, is_non_descendant, parse_graph,
                                 read_graph, situation_graph, structure_transform,
                                 topological_order, validate_dag, write_graph)
from cffair.errors import CycleError, SchemaError


def random_dag(rng, n, density=0.5):
    """Strictly upper-triangular weights under a random relabelling."""
    C = np.triu(rng.normal(size=(n, n)), 1) * (rng.random((n, n)) < density)
    perm = rng.permutation(n)
    return C[np.ix_(perm, perm)]


def neumann(z, C):
    # z' = z (I + C + C^2 + ...); C is nilpotent for a DAG
    n = C.shape[0]
    total, term = np.eye(n), np.eye(n)
    for _ in range(n):
        term = term @ C
        total = total + term
    return z @ total


def test_adult_chain_all_ones():
    C = np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]], dtype=float)
    out = structure_transform(np.array([[1.0, 1.0, 1.0]]), C)
    np.testing.assert_allclose(out, [[1, 2, 4]])


def test_one_step_mode_differs_on_chain():
    C = np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]], dtype=float)
    out = structure_transform(np.array([[1.0, 1.0, 1.0]]), C, mode="one_step")
    np.testing.assert_allclose(out, [[1, 2, 3]])


def test_single_edge_half_weight():
    C = np.array([[0, 0.5], [0, 0]])
    np.testing.assert_allclose(structure_transform(np.array([[2.0, 0.0]]), C), [[2.0, 1.0]])


def test_zero_adjacency_is_identity():
    z = np.random.default_rng(1).normal(size=(5, 3))
    np.testing.assert_array_equal(structure_transform(z, np.zeros((3, 3))), z)


def test_neumann_oracle_on_random_dags():
    rng = np.random.default_rng(20240)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        C = random_dag(rng, n)
        z = rng.normal(size=(4, n))
        np.testing.assert_allclose(structure_transform(z, C), neumann(z, C), rtol=0, atol=1e-10)


def test_torch_input_stays_differentiable():
    C = torch.tensor([[0.0, 2.0], [0.0, 0.0]], dtype=torch.float64)
    z = torch.tensor([[1.0, 1.0]], dtype=torch.float64, requires_grad=True)
    out = structure_transform(z, C)
    out.sum().backward()
    # d(z0 + z1 + 2 z0)/dz = (3, 1)
    np.testing.assert_allclose(z.grad.numpy(), [[3.0, 1.0]])


def test_cycle_rejected():
    C = np.zeros((3, 3))
    C[0, 1] = C[1, 2] = C[2, 0] = 1.0
    with pytest.raises(CycleError) as exc:
        validate_dag(C)
    assert "cycle" in str(exc.value)
    with pytest.raises(CycleError):
        structure_transform(np.ones((1, 3)), C)


def test_self_loop_rejected():
    with pytest.raises(SchemaError):
        ConceptGraph(2, ((0, 0, 1.0),))


def test_topological_order_respects_edges():
    rng = np.random.default_rng(3)
    for _ in range(20):
        C = random_dag(rng, 6)
        pos = {v: i for i, v in enumerate(topological_order(C))}
        for i, j in zip(*np.nonzero(C)):
            assert pos[i] < pos[j]


def test_graph_text_round_trip(tmp_path):
    g = ConceptGraph(3, ((0, 1, 0.5), (1, 2, -2.0)), ("a", "b", "c"))
    path = tmp_path / "g.graph"
    write_graph(g, path)
    assert read_graph(path) == g
    assert parse_graph(format_graph(g)) == g


def test_parse_graph_by_label_and_index():
    g = parse_graph("# demo\nn 3\nlabels k c f\nk c 1.0\n0 2 2  # inline\n")
    np.testing.assert_array_equal(g.adjacency(), [[0, 1, 2], [0, 0, 0], [0, 0, 0]])


@pytest.mark.parametrize("text", ["n x", "n 2\nlabels a b\na b", "n 2\nlabels a b\na zz 1"])
def test_parse_graph_errors(text):
    with pytest.raises(SchemaError):
        parse_graph(text)


def test_parse_graph_cycle():
    with pytest.raises(CycleError):
        parse_graph("n 2\n0 1 1\n1 0 1\n")


def test_situation_graph_descendants():
    g = situation_graph()
    assert is_non_descendant(g, "X_NY")
    assert is_non_descendant(g, "X_NN")
    assert is_non_descendant(g, "Z_xs")
    assert not is_non_descendant(g, "X_AY")
    assert not is_non_descendant(g, "X_AN")
    assert not is_non_descendant(g, "Y")
    with pytest.raises(KeyError):
        is_non_descendant(g, "nope")


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_transform_inverts_linear_sem(n, seed):
    rng = np.random.default_rng(seed)
    C = random_dag(rng, n)
    z = rng.normal(size=(3, n))
    zs = structure_transform(z, C)
    # (I - C^T) z'^T = z^T  <=>  z' - z' C = z
    np.testing.assert_allclose(zs - zs @ C, z, atol=1e-9)
