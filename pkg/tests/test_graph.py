import numpy as np
import pytest

from conftest import longest_path_levels, random_valid_dag
from unrectify import (
    ActivationAffine,
    Affine,
    Dag,
    GraphConstructionError,
    Identity,
    Linear,
    Node,
    computable_subgraph,
    concatenate,
    duplicate,
    forward,
    forward_batch,
    identity_dag,
    levels,
    relu_spec,
    series,
    validate,
)
from unrectify.graph import Arc, ROLE_INPUT, ROLE_RELAY, ancestors


def test_series_identity_is_identity():
    g = series(identity_dag(4), Identity(4))
    x = np.arange(4.0)
    y, _ = forward(g, x)
    assert np.array_equal(y, x)


def test_series_activation_affine():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 5))
    g = series(identity_dag(5), ActivationAffine(relu_spec(), w))
    x = rng.standard_normal(5)
    y, _ = forward(g, x)
    assert np.abs(y - np.maximum(w @ x, 0)).max() <= 1e-12


def test_series_dimension_mismatch_names_both_dims():
    g = identity_dag(3)
    with pytest.raises(GraphConstructionError, match=r"3.*4|4.*3"):
        series(g, Linear(np.ones((2, 4))))


def test_concatenate_two_identities():
    g = concatenate([identity_dag(2), identity_dag(2)])
    y, _ = forward(g, np.array([1.0, 2.0]))
    assert y.tolist() == [1.0, 2.0, 1.0, 2.0]


def test_concatenate_singleton_equivalent():
    rng = np.random.default_rng(1)
    base = series(identity_dag(3), ActivationAffine(relu_spec(), rng.standard_normal((4, 3))))
    wrapped = concatenate([base])
    for x in rng.standard_normal((100, 3)):
        ya, _ = forward(base, x)
        yb, _ = forward(wrapped, x)
        assert np.array_equal(ya, yb)


def test_concatenate_empty_rejected():
    with pytest.raises(GraphConstructionError):
        concatenate([])


def test_concatenate_mixed_input_dims_rejected():
    with pytest.raises(GraphConstructionError):
        concatenate([identity_dag(2), identity_dag(3)])


def test_duplicate_stacks_copies():
    g = duplicate(identity_dag(2), 3)
    y, _ = forward(g, np.array([1.0, 2.0]))
    assert y.tolist() == [1.0, 2.0, 1.0, 2.0, 1.0, 2.0]


def test_duplicate_once_equivalent():
    rng = np.random.default_rng(2)
    base = series(identity_dag(2), Affine(rng.standard_normal((3, 2)), rng.standard_normal(3)))
    doubled = duplicate(base, 1)
    for x in rng.standard_normal((100, 2)):
        assert np.array_equal(forward(base, x)[0], forward(doubled, x)[0])


def test_duplicate_zero_rejected():
    with pytest.raises(GraphConstructionError):
        duplicate(identity_dag(2), 0)


def test_combinators_leave_input_unchanged():
    g = identity_dag(2)
    series(g, Identity(2))
    duplicate(g, 2)
    assert len(g.nodes) == 1 and len(g.arcs) == 0


def test_forward_rejects_bad_inputs():
    g = identity_dag(3)
    with pytest.raises(ValueError):
        forward(g, np.ones(2))
    with pytest.raises(ValueError):
        forward(g, np.array([1.0, np.nan, 0.0]))


def test_forward_trace_covers_all_nodes():
    rng = np.random.default_rng(3)
    dag = random_valid_dag(rng)
    x = rng.standard_normal(dag.input_dim)
    _, trace = forward(dag, x)
    assert set(trace) == {node.id for node in dag.nodes}


def test_forward_batch_matches_single():
    rng = np.random.default_rng(4)
    dag = random_valid_dag(rng)
    xs = rng.standard_normal((10, dag.input_dim))
    ys, _ = forward_batch(dag, xs)
    for i, x in enumerate(xs):
        y, _ = forward(dag, x)
        assert np.array_equal(ys[i], y)


def test_validate_reports_cycle():
    nodes = (
        Node(0, ROLE_INPUT),
        Node(1, ROLE_RELAY),
        Node(2, ROLE_RELAY),
        Node(3, ROLE_RELAY),
    )
    arcs = (
        Arc(0, 0, 1, Identity(2), 2, 2),
        Arc(1, 1, 2, Identity(2), 2, 2),
        Arc(2, 3, 1, Identity(2), 2, 2),  # back-arc into the chain
        Arc(3, 2, 3, Identity(2), 2, 2),
    )
    report = validate(Dag(2, nodes, arcs, 3))
    assert not report.ok
    assert any("cycle" in p for p in report.problems)


def test_validate_reports_dimension_fault_at_node():
    nodes = (Node(0, ROLE_INPUT), Node(1, ROLE_RELAY), Node(2, ROLE_RELAY))
    arcs = (
        Arc(0, 0, 1, Linear(np.ones((3, 2))), 2, 3),
        Arc(1, 1, 2, Identity(4), 4, 4),  # claims dim 4 but node 1 produces 3
    )
    report = validate(Dag(2, nodes, arcs, 2))
    assert not report.ok
    assert any("dim" in p for p in report.problems)


def test_validate_requires_single_sink():
    nodes = (Node(0, ROLE_INPUT), Node(1, ROLE_RELAY), Node(2, ROLE_RELAY))
    arcs = (
        Arc(0, 0, 1, Identity(2), 2, 2),
        Arc(1, 0, 2, Identity(2), 2, 2),
    )
    report = validate(Dag(2, nodes, arcs, 2))
    assert not report.ok


def test_levels_chain():
    g = identity_dag(2)
    for _ in range(5):
        g = series(g, Identity(2))
    assert sorted(levels(g).values()) == [0, 1, 2, 3, 4, 5]


def test_levels_match_relaxation_oracle():
    rng = np.random.default_rng(5)
    for _ in range(30):
        dag = random_valid_dag(rng)
        lvl = levels(dag)
        oracle = longest_path_levels(dag)
        assert [lvl[i] for i in range(len(dag.nodes))] == oracle


def test_levels_contiguous_on_random_dags():
    rng = np.random.default_rng(6)
    for _ in range(30):
        dag = random_valid_dag(rng)
        attained = sorted(set(levels(dag).values()))
        assert attained == list(range(attained[-1] + 1))


def test_subgraph_of_input_is_identity():
    rng = np.random.default_rng(7)
    dag = random_valid_dag(rng)
    sub = computable_subgraph(dag, 0)
    assert len(sub.nodes) == 1
    x = rng.standard_normal(dag.input_dim)
    assert np.array_equal(forward(sub, x)[0], x)


def test_subgraph_matches_full_trace_exactly():
    rng = np.random.default_rng(8)
    for _ in range(10):
        dag = random_valid_dag(rng)
        x = rng.standard_normal(dag.input_dim)
        _, trace = forward(dag, x)
        for node in dag.nodes:
            sub = computable_subgraph(dag, node.id)
            y, _ = forward(sub, x)
            assert np.array_equal(y, trace[node.id])


def test_subgraph_is_ancestor_closure():
    rng = np.random.default_rng(9)
    dag = random_valid_dag(rng)
    for node in dag.nodes:
        expected = ancestors(dag, node.id) | {node.id}
        sub = computable_subgraph(dag, node.id)
        assert len(sub.nodes) == len(expected)


def test_composition_algebra():
    rng = np.random.default_rng(10)
    for _ in range(10):
        dag = random_valid_dag(rng)
        out_dim = dag.node_dims[dag.output_node]
        w = rng.standard_normal((3, out_dim))
        extended = series(dag, ActivationAffine(relu_spec(), w))
        x = rng.standard_normal(dag.input_dim)
        y, _ = forward(extended, x)
        base, _ = forward(dag, x)
        assert np.abs(y - np.maximum(w @ base, 0)).max() <= 1e-12


def test_concat_dims_sum_and_add_requires_equal():
    rng = np.random.default_rng(11)
    g = concatenate([identity_dag(2), identity_dag(2), identity_dag(2)])
    assert g.node_dims[g.output_node] == 6
