import numpy as np
import pytest

from unrectify import (
    Activation,
    ActivationAffine,
    Linear,
    build_fusion_stack,
    build_resnet_module,
    build_series_stack,
    certify,
    empirical_gain,
    identity_dag,
    level_sums,
    levels,
    relu_spec,
    rescale_to_stability,
    resnet_link_condition,
    series,
    soundness_check,
    spectral_norm,
    svd_spectral_norm,
)


def scaled_matrix(rng, shape, norm):
    w = rng.standard_normal(shape)
    return w * (norm / svd_spectral_norm(w))


def test_spectral_norm_identity_and_diagonal():
    assert abs(spectral_norm(np.eye(7)) - 1.0) <= 1e-12
    assert abs(spectral_norm(np.diag([3.0, -4.0])) - 4.0) <= 1e-10


def test_spectral_norm_matches_svd_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = rng.standard_normal((int(rng.integers(1, 65)), int(rng.integers(1, 65))))
        assert abs(spectral_norm(m) - svd_spectral_norm(m)) <= 1e-8


def test_spectral_norm_scaling_and_transpose():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((6, 9))
    assert abs(spectral_norm(2.5 * w) - 2.5 * spectral_norm(w)) <= 1e-8
    assert abs(spectral_norm(w.T) - spectral_norm(w)) <= 1e-8
    assert spectral_norm(np.zeros((3, 5))) == 0.0


def test_spectral_norm_rejects_bad_input():
    with pytest.raises(ValueError):
        spectral_norm(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        spectral_norm(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_level_sums_single_arc():
    rng = np.random.default_rng(2)
    w = scaled_matrix(rng, (4, 4), 0.5)
    net = series(identity_dag(4), ActivationAffine(relu_spec(), w))
    sums = level_sums(net)
    assert len(sums) == 1
    assert abs(sums[0].sum - 0.5) <= 1e-9
    assert sums[0].frob_sum >= sums[0].sum


def test_level_sums_residual_block():
    rng = np.random.default_rng(3)
    w1 = scaled_matrix(rng, (4, 4), 0.7)
    w2 = scaled_matrix(rng, (4, 4), 0.3)
    block = build_resnet_module(w1, w2, outer_activation=False)
    sums = {entry.level: entry.sum for entry in level_sums(block)}
    assert abs(sums[1] - 0.7) <= 1e-9
    assert abs(sums[2] - (1.0 + 0.3)) <= 1e-9


def test_level_sums_compact_fusion_stack():
    rng = np.random.default_rng(4)
    norms = [(1.3, 0.4), (0.2, 0.1)]
    layer_w = [
        (scaled_matrix(rng, (5, 5), a), None, scaled_matrix(rng, (5, 5), b), None)
        for a, b in norms
    ]
    dag = build_fusion_stack(layer_w, mode="compact")
    sums = level_sums(dag)
    for entry, (a, b) in zip(sums, norms):
        assert abs(entry.sum - (a + b)) <= 1e-8


def test_frobenius_dominates_spectral_everywhere():
    rng = np.random.default_rng(5)
    layer_w = [
        (
            rng.standard_normal((6, 6)),
            rng.standard_normal(6),
            rng.standard_normal((6, 6)),
            rng.standard_normal(6),
        )
        for _ in range(4)
    ]
    dag = build_fusion_stack(layer_w, mode="compact")
    for entry in level_sums(dag):
        assert entry.frob_sum >= entry.sum - 1e-12


def test_certify_chain_geometric_recursion():
    rng = np.random.default_rng(6)
    mats = [scaled_matrix(rng, (6, 6), 0.9) for _ in range(5)]
    report = certify(build_series_stack(mats))
    assert report.stable_from == 1
    assert report.certified
    for n, value in enumerate(report.certified_C):
        assert abs(value - 0.9**n) <= 1e-9


def test_certify_zero_weights():
    net = build_series_stack([np.zeros((3, 3)), np.zeros((3, 3))])
    report = certify(net)
    assert report.certified
    assert report.certified_C[1] == 0.0
    assert report.certified_C[2] == 0.0


def test_certify_residual_block_condition():
    rng = np.random.default_rng(7)
    w1 = rng.standard_normal((4, 4))
    w2 = scaled_matrix(rng, (4, 4), 0.5)
    assert not certify(build_resnet_module(w1, w2, outer_activation=False)).certified
    report = certify(build_resnet_module(w1, np.zeros((4, 4)), outer_activation=False))
    assert report.certified
    assert report.stable_from == 2


def test_certified_running_max_stops_growing():
    rng = np.random.default_rng(8)
    layer_w = [
        (
            scaled_matrix(rng, (5, 5), 0.4),
            None,
            scaled_matrix(rng, (5, 5), 0.5),
            None,
        )
        for _ in range(4)
    ]
    report = certify(build_fusion_stack(layer_w, mode="compact"))
    assert report.stable_from == 1
    c = report.certified_C
    for n in range(report.stable_from, len(c)):
        assert c[n] <= max(c[:n]) + 1e-12


def test_rescale_leaves_stable_network_unchanged():
    rng = np.random.default_rng(9)
    mats = [scaled_matrix(rng, (4, 4), 0.8) for _ in range(3)]
    net = build_series_stack(mats)
    assert rescale_to_stability(net) is net


def test_rescale_two_arc_level():
    rng = np.random.default_rng(10)
    layer_w = [
        (scaled_matrix(rng, (4, 4), 2.0), None, scaled_matrix(rng, (4, 4), 2.0), None)
    ]
    dag = build_fusion_stack(layer_w, mode="compact")
    scaled = rescale_to_stability(dag)
    entry = level_sums(scaled)[0]
    assert abs(entry.sum - 1.0) <= 1e-9
    w = scaled.arcs[0].elem.weight
    assert abs(svd_spectral_norm(w) - 0.5) <= 1e-9


def test_rescale_idempotent():
    rng = np.random.default_rng(11)
    layer_w = [
        (
            rng.standard_normal((5, 5)),
            rng.standard_normal(5),
            rng.standard_normal((5, 5)),
            rng.standard_normal(5),
        )
        for _ in range(3)
    ]
    dag = build_fusion_stack(layer_w, mode="compact")
    once = rescale_to_stability(dag, use_frobenius=True)
    twice = rescale_to_stability(once, use_frobenius=True)
    assert twice is once


def test_rescale_frobenius_bounds_both_norms():
    rng = np.random.default_rng(12)
    layer_w = [
        (
            rng.standard_normal((6, 6)),
            rng.standard_normal(6),
            rng.standard_normal((6, 6)),
            rng.standard_normal(6),
        )
        for _ in range(5)
    ]
    dag = build_fusion_stack(layer_w, mode="compact")
    scaled = rescale_to_stability(dag, use_frobenius=True)
    for entry in level_sums(scaled):
        assert entry.frob_sum <= 1.0 + 1e-12
        assert entry.sum <= 1.0 + 1e-12


def test_rescale_preserves_biases_and_function_shape():
    rng = np.random.default_rng(13)
    w = scaled_matrix(rng, (3, 3), 4.0)
    b = rng.standard_normal(3)
    net = series(identity_dag(3), ActivationAffine(relu_spec(), w, b))
    scaled = rescale_to_stability(net)
    assert np.array_equal(scaled.arcs[0].elem.bias, b)
    assert abs(svd_spectral_norm(scaled.arcs[0].elem.weight) - 1.0) <= 1e-9


def test_rescale_impossible_level_raises():
    # summation of two identity branches: unit contributions alone exceed 1
    from unrectify.graph import GraphBuilder, ROLE_ADD
    from unrectify import Identity

    b = GraphBuilder(3)
    top = b.add_relay(0, Activation(relu_spec(), 3))
    bot = b.add_relay(0, Activation(relu_spec(), 3))
    total = b.add_node(ROLE_ADD)
    b.connect(top, total, Identity(3))
    b.connect(bot, total, Identity(3))
    dag = b.finish(total)
    with pytest.raises(ValueError, match="unit arc contributions"):
        rescale_to_stability(dag)


def test_empirical_gain_linear_network():
    rng = np.random.default_rng(14)
    w = rng.standard_normal((4, 3))
    net = series(identity_dag(3), Linear(w))
    xs = rng.standard_normal((300, 3))
    curve = empirical_gain(net, xs)
    sigma = svd_spectral_norm(w)
    assert curve.gains[0] == 1.0
    assert curve.gains[1] <= sigma + 1e-9
    assert curve.gains[1] >= 0.9 * sigma


def test_empirical_gain_requires_two_distinct_samples():
    net = series(identity_dag(2), Linear(np.eye(2)))
    with pytest.raises(ValueError):
        empirical_gain(net, np.zeros((1, 2)))
    with pytest.raises(ValueError):
        empirical_gain(net, np.zeros((5, 2)))


def test_empirical_gain_subsampling_close_to_full():
    rng = np.random.default_rng(15)
    w = rng.standard_normal((3, 3))
    net = series(identity_dag(3), Linear(w))
    xs = rng.standard_normal((200, 3))
    full = empirical_gain(net, xs)
    sub = empirical_gain(net, xs, pair_budget=3000, seed=1)
    assert sub.pairs_subsampled and not full.pairs_subsampled
    assert sub.gains[1] <= full.gains[1] + 1e-12


def test_identity_network_gain_is_one():
    from unrectify import Identity

    net = series(identity_dag(3), Identity(3))
    xs = np.random.default_rng(16).standard_normal((50, 3))
    curve = empirical_gain(net, xs)
    assert abs(curve.gains[1] - 1.0) <= 1e-12


def test_soundness_on_certified_networks():
    rng = np.random.default_rng(17)
    for trial in range(5):
        depth = int(rng.integers(2, 5))
        layer_w = [
            (
                scaled_matrix(rng, (4, 4), float(rng.uniform(0.1, 0.5))),
                rng.standard_normal(4),
                scaled_matrix(rng, (4, 4), float(rng.uniform(0.1, 0.4))),
                rng.standard_normal(4),
            )
            for _ in range(depth)
        ]
        dag = build_fusion_stack(layer_w, mode="compact")
        report = certify(dag)
        assert report.certified
        xs = rng.standard_normal((120, 4))
        result = soundness_check(dag, xs, report=report)
        assert result.ok, result.violations


def test_soundness_chain_bound():
    rng = np.random.default_rng(18)
    mats = [scaled_matrix(rng, (5, 5), 0.9) for _ in range(4)]
    net = build_series_stack(mats)
    xs = rng.standard_normal((200, 5))
    result = soundness_check(net, xs)
    assert result.ok
    for lev, gain in zip(result.gain_curve.levels[1:], result.gain_curve.gains[1:]):
        assert gain <= 0.9**lev + 1e-6


def test_certify_weighs_transform_bound():
    from unrectify import TransformAffine, TransformSpec

    rng = np.random.default_rng(20)
    w = scaled_matrix(rng, (4, 4), 0.4)
    soft = TransformSpec("softmax", scale=2.0)
    net = series(identity_dag(4), TransformAffine(soft, w))
    report = certify(net)
    assert abs(report.d - 2.0) <= 1e-12
    assert abs(report.level_sums[0].sum - 0.8) <= 1e-9
    assert report.certified
    hot = series(identity_dag(4), TransformAffine(soft, scaled_matrix(rng, (4, 4), 0.6)))
    assert not certify(hot).certified


def test_empirical_gain_deterministic_across_thread_counts(monkeypatch):
    rng = np.random.default_rng(21)
    w = rng.standard_normal((5, 5))
    net = series(identity_dag(5), Linear(w))
    xs = rng.standard_normal((150, 5))
    monkeypatch.setenv("UNRECTIFY_THREADS", "1")
    single = empirical_gain(net, xs)
    monkeypatch.setenv("UNRECTIFY_THREADS", "4")
    multi = empirical_gain(net, xs)
    assert single.gains == multi.gains
    assert single.pairs_used == multi.pairs_used


def test_resnet_link_condition_matches_oracle():
    rng = np.random.default_rng(19)
    w1 = scaled_matrix(rng, (4, 4), 0.6)
    contracting = 0.5 * np.eye(4)
    ok, value = resnet_link_condition(contracting, np.eye(4))
    assert ok == (svd_spectral_norm(np.eye(4) - contracting) <= 1.0)
    assert abs(value - svd_spectral_norm(np.eye(4) - contracting)) <= 1e-8
    big = scaled_matrix(rng, (4, 4), 3.0)
    ok2, value2 = resnet_link_condition(w1, big)
    assert ok2 == (svd_spectral_norm(np.eye(4) - big @ w1) <= 1.0)
