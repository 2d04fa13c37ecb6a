import numpy as np
import pytest

from unrectify import (
    GraphConstructionError,
    build_demo_network,
    build_fusion_module,
    build_fusion_stack,
    build_lenet5,
    build_resnet_module,
    build_series_stack,
    conv2d_affine,
    forward,
    forward_batch,
    lenet5_probe_nodes,
    levels,
    maxpool_as_relu_network,
    validate,
)


def test_series_stack_matches_manual_composition():
    rng = np.random.default_rng(0)
    mats = [rng.standard_normal((4, 4)) for _ in range(3)]
    biases = [rng.standard_normal(4) for _ in range(3)]
    g = build_series_stack(mats, biases)
    x = rng.standard_normal(4)
    ref = x
    for w, b in zip(mats, biases):
        ref = np.maximum(w @ ref + b, 0)
    y, _ = forward(g, x)
    assert np.abs(y - ref).max() <= 1e-12


def test_fusion_module_function_and_labels():
    rng = np.random.default_rng(1)
    m1, m2 = rng.standard_normal((2, 3, 3))
    g = build_fusion_module([m1, m2])
    x = rng.standard_normal(3)
    y, trace = forward(g, x)
    assert np.abs(y - (np.maximum(m1 @ x, 0) + np.maximum(m2 @ x, 0))).max() <= 1e-12
    assert {"channel0", "channel1", "concat", "fusion"} <= set(g.labels)
    assert np.abs(trace[g.labels["channel0"]] - np.maximum(m1 @ x, 0)).max() == 0


def test_concatenate_then_fuse_equals_fusion_module():
    from unrectify import ActivationAffine, Linear, concatenate, identity_dag, relu_spec, series

    rng = np.random.default_rng(8)
    m1, m2 = rng.standard_normal((2, 3, 3))
    channels = [
        series(identity_dag(3), ActivationAffine(relu_spec(), m)) for m in (m1, m2)
    ]
    fused = series(concatenate(channels), Linear(np.hstack([np.eye(3), np.eye(3)])))
    module = build_fusion_module([m1, m2])
    for x in rng.standard_normal((100, 3)):
        assert np.array_equal(forward(fused, x)[0], forward(module, x)[0])


def test_fusion_stack_probe_and_compact_agree():
    rng = np.random.default_rng(2)
    layer_w = [
        (
            rng.standard_normal((4, 4)),
            rng.standard_normal(4),
            rng.standard_normal((4, 4)),
            rng.standard_normal(4),
        )
        for _ in range(3)
    ]
    probe = build_fusion_stack(layer_w, mode="probe")
    compact = build_fusion_stack(layer_w, mode="compact")
    xs = rng.standard_normal((50, 4))
    ya, _ = forward_batch(probe, xs)
    yb, _ = forward_batch(compact, xs)
    assert np.abs(ya - yb).max() <= 1e-12
    assert "layer2.top" in probe.labels and "layer2.top" not in compact.labels
    # compact: one node per layer, levels 0..3
    assert sorted(levels(compact).values()) == [0, 1, 2, 3]


def test_resnet_module_closed_form():
    rng = np.random.default_rng(3)
    w1 = rng.standard_normal((5, 5))
    b1 = rng.standard_normal(5)
    w2 = rng.standard_normal((5, 5))
    b2 = rng.standard_normal(5)
    g = build_resnet_module(w1, w2, b1, b2)
    for x in rng.standard_normal((1000, 5)):
        y, _ = forward(g, x)
        ref = np.maximum(x - (w2 @ np.maximum(w1 @ x + b1, 0) + b2), 0)
        assert np.abs(y - ref).max() <= 1e-12


def test_resnet_module_zero_branch_is_rectifier():
    rng = np.random.default_rng(4)
    w1 = rng.standard_normal((3, 3))
    g = build_resnet_module(w1, np.zeros((3, 3)))
    x = rng.standard_normal(3)
    y, _ = forward(g, x)
    assert np.array_equal(y, np.maximum(x, 0))


def test_resnet_shape_mismatch():
    with pytest.raises(GraphConstructionError):
        build_resnet_module(np.ones((3, 4)), np.ones((3, 4)))


def test_maxpool_network_small_case():
    net = maxpool_as_relu_network(2)
    y, _ = forward(net, np.array([1.0, 2.0]))
    assert abs(y[0] - 2.0) <= 1e-12


@pytest.mark.parametrize("block", [2, 4, 5, 8])
def test_maxpool_network_matches_direct_max(block):
    net = maxpool_as_relu_network(block)
    rng = np.random.default_rng(block)
    xs = rng.standard_normal((5000, block))
    ys, _ = forward_batch(net, xs)
    assert np.abs(ys[:, 0] - xs.max(axis=1)).max() <= 1e-12


def test_maxpool_network_rejects_small_blocks():
    with pytest.raises(GraphConstructionError):
        maxpool_as_relu_network(1)


def test_demo_network_structure():
    demo = build_demo_network()
    report = validate(demo)
    assert report.ok
    assert report.node_count == 12
    assert report.reachable_count == 12
    lvl = levels(demo)
    assert lvl[demo.labels["a"]] == 4
    assert lvl[demo.labels["c"]] == 1
    by_level = {}
    for nid, n in lvl.items():
        by_level.setdefault(n, []).append(nid)
    assert len(by_level[1]) == 4
    assert len(by_level[2]) == 1


def test_demo_subgraphs_nest():
    from unrectify.graph import ancestors

    demo = build_demo_network()
    closures = {
        name: ancestors(demo, demo.labels[name]) | {demo.labels[name]}
        for name in ("a", "b", "c")
    }
    assert closures["c"] < closures["b"] < closures["a"]
    assert len(closures["a"]) == 5


def test_conv2d_affine_matches_direct_convolution():
    rng = np.random.default_rng(5)
    kernel = rng.standard_normal((2, 3, 3))
    image = rng.standard_normal((2, 6, 6))
    w, b = conv2d_affine(kernel, 0.5, (2, 6, 6), stride=1, pad=1)
    out = (w @ image.reshape(-1) + b).reshape(6, 6)
    for i in range(6):
        for j in range(6):
            acc = 0.5
            for ci in range(2):
                for u in range(3):
                    for v in range(3):
                        ii, jj = i - 1 + u, j - 1 + v
                        if 0 <= ii < 6 and 0 <= jj < 6:
                            acc += kernel[ci, u, v] * image[ci, ii, jj]
            assert abs(out[i, j] - acc) <= 1e-12


def test_lenet5_dimensions_and_levels():
    dag = build_lenet5(seed=0)
    assert validate(dag).ok
    dims = dag.node_dims
    assert dag.input_dim == 784
    for c in range(6):
        assert dims[dag.labels[f"stage1.conv.{c}"]] == 784
        assert dims[dag.labels[f"stage1.pool.{c}.h"]] == 392
        assert dims[dag.labels[f"stage1.pool.{c}.v"]] == 196
    assert dims[dag.labels["stage1.concat"]] == 1176
    for c in range(16):
        assert dims[dag.labels[f"stage2.conv.{c}"]] == 100
        assert dims[dag.labels[f"stage2.pool.{c}.v"]] == 25
    assert dims[dag.labels["stage2.concat"]] == 400
    assert dims[dag.output_node] == 10

    lvl = levels(dag)
    probes = lenet5_probe_nodes(dag)
    for level, nodes in probes.items():
        assert {lvl[n] for n in nodes} == {level}
    x = np.random.default_rng(0).standard_normal(784)
    y, _ = forward(dag, x)
    assert y.shape == (10,)


def test_lenet5_pooling_matches_direct_2x2_maxlu():
    dag = build_lenet5(seed=1)
    rng = np.random.default_rng(2)
    x = rng.standard_normal(784)
    _, trace = forward(dag, x)
    conv = trace[dag.labels["stage1.conv.0"]].reshape(28, 28)
    pooled = trace[dag.labels["stage1.pool.0.v"]].reshape(14, 14)
    for r in range(14):
        for c in range(14):
            block = conv[2 * r : 2 * r + 2, 2 * c : 2 * c + 2]
            assert abs(pooled[r, c] - max(block.max(), 0.0)) <= 1e-12
