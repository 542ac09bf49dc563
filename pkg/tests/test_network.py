import json
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainflat import (
    FlatteningNetwork,
    Layer,
    active_linear_map,
    activation_pattern,
    build_monotonic,
    build_worstcase,
    deserialize,
    evaluate,
    evaluate_batch,
    segment_operator,
    serialize,
    worstcase_extreme_params,
)
from chainflat.exceptions import (
    DimensionMismatch,
    MalformedInput,
    MetadataMissing,
    OnRegionBoundary,
    SchemaVersionMismatch,
)

from conftest import THETA

FIXTURES = Path(__file__).parent / "fixtures"


def worst(N=100.0, eps=0.01):
    return build_worstcase(N, eps, *worstcase_extreme_params(N, eps))


def test_short_example_evaluates_to_r_plus_one(short_chain):
    net = build_monotonic(short_chain)
    for r in (0.0, 0.25, 0.5, 1.0):
        assert evaluate(net, [r * np.cos(THETA), r * np.sin(THETA)])[0] == pytest.approx(r + 1, abs=1e-12)


def test_zero_network():
    net = FlatteningNetwork((Layer(np.zeros((3, 4)), np.zeros(3), True), Layer(np.zeros((2, 3)), np.zeros(2), False)))
    assert np.array_equal(evaluate(net, np.arange(4.0)), np.zeros(2))


def test_worstcase_hand_expansion():
    # (N, eps/2): unit 1 = N, unit 2 = q2 * eps/2, unit 3 inactive
    N, eps = 100.0, 0.01
    assert evaluate(worst(N, eps), [N, eps / 2])[0] == pytest.approx(N + eps / 2, abs=1e-12)


def test_dimension_checks():
    net = worst()
    with pytest.raises(DimensionMismatch):
        evaluate(net, [1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatch):
        evaluate_batch(net, np.zeros((4, 3)))
    with pytest.raises(DimensionMismatch):
        FlatteningNetwork((Layer(np.zeros((3, 2)), np.zeros(3), True), Layer(np.zeros((1, 4)), [0.0], False)))


def test_batch_is_bit_identical_to_single(chain625):
    ch, s = chain625
    net = build_monotonic(ch, "middle")
    pts = s["on"][:200]
    batch = evaluate_batch(net, pts)
    single = np.array([evaluate(net, p) for p in pts])
    assert np.array_equal(batch, single)
    same = evaluate_batch(net, np.repeat(pts[:1], 1000, axis=0))
    assert np.all(same == same[0])


def test_active_map_matches_segment_operator(chain625):
    ch, s = chain625
    net = build_monotonic(ch)
    for k, seg in enumerate(ch.segments):
        x = seg.center
        M, c = active_linear_map(net, x)
        op, _ = segment_operator(net, k)
        np.testing.assert_allclose(M, op, atol=1e-12)
        np.testing.assert_allclose(M @ x + c, evaluate(net, x), atol=1e-10)
        pattern = activation_pattern(net, x)[0]
        assert pattern.sum() == ch.m + k


def test_worstcase_active_map_on_third_segment():
    net = worst()
    M, _ = active_linear_map(net, np.array([50.0, 0.01 + 1e-6]))
    op, sigma = segment_operator(net, 2)
    np.testing.assert_allclose(M, op, rtol=1e-12)
    assert sigma >= 100.0 / 0.01


def test_single_segment_map_is_projection(chain625):
    ch, _ = chain625
    one = ch.sub_chain(2, 3)
    net = build_monotonic(one)
    M, _ = active_linear_map(net, one.segments[0].center)
    np.testing.assert_allclose(M, one.segments[0].basis.T, atol=1e-15)
    assert segment_operator(net, 0)[1] == pytest.approx(1.0, abs=1e-12)


def test_boundary_point_warns(short_chain):
    net = build_monotonic(short_chain)
    with pytest.warns(OnRegionBoundary):
        active_linear_map(net, np.zeros(2))


def test_segment_operator_needs_metadata():
    net = FlatteningNetwork((Layer(np.eye(2), np.zeros(2), True), Layer(np.ones((1, 2)), [0.0], False)))
    with pytest.raises(MetadataMissing):
        segment_operator(net, 0)


def test_weight_count_of_two_layer_construction(chain625):
    ch, _ = chain625
    net = build_monotonic(ch)
    kappa = ch.K + ch.m - 1
    assert net.hidden_units() == kappa
    assert net.n_weights + net.layers[0].bias.size == (ch.d + 1) * kappa + ch.m * kappa


def test_serialization_round_trip_is_exact(chain625):
    ch, s = chain625
    for net in (build_monotonic(ch, "middle"), worst()):
        back = deserialize(serialize(net))
        for a, b in zip(net.layers, back.layers):
            assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
        pts = s["on"][:, :net.input_dim] if net.input_dim == ch.d else np.random.default_rng(0).random((50, 2))
        assert np.array_equal(evaluate_batch(net, pts), evaluate_batch(back, pts))
        assert back.metadata == json.loads(json.dumps(net.metadata))


def test_hand_written_fixture_evaluates_to_r_plus_one():
    net = deserialize((FIXTURES / "short_example_network.json").read_bytes())
    for r in (0.0, 0.5, 1.0):
        assert evaluate(net, [r * np.cos(THETA), r * np.sin(THETA)])[0] == pytest.approx(r + 1, abs=1e-12)


def test_corrupted_payloads():
    good = json.loads(serialize(worst()))
    with pytest.raises(MalformedInput):
        deserialize(b"{not json")
    bad = dict(good, version=2)
    with pytest.raises(SchemaVersionMismatch):
        deserialize(json.dumps(bad).encode())
    bad = json.loads(json.dumps(good))
    bad["layers"][0]["weights"] = [[1.0, 2.0]]
    with pytest.raises(MalformedInput):
        deserialize(json.dumps(bad).encode())
    bad = json.loads(json.dumps(good))
    bad["layers"][1]["relu"] = "yes"
    with pytest.raises(MalformedInput):
        deserialize(json.dumps(bad).encode())
    bad = json.loads(json.dumps(good))
    del bad["layers"]
    with pytest.raises(MalformedInput):
        deserialize(json.dumps(bad).encode())


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_piecewise_linear_along_lines(seed):
    rng = np.random.default_rng(seed)
    w1, b1 = rng.standard_normal((6, 3)), rng.standard_normal(6)
    w2, b2 = rng.standard_normal((2, 6)), rng.standard_normal(2)
    net = FlatteningNetwork((Layer(w1, b1, True), Layer(w2, b2, False)))
    x, u = rng.standard_normal(3), rng.standard_normal(3)
    ts = np.linspace(-2, 2, 401)
    ys = evaluate_batch(net, x + ts[:, None] * u)
    pats = np.array([activation_pattern(net, x + t * u)[0] for t in ts])
    # consecutive samples with the same pattern lie on one affine piece
    for i in range(1, len(ts) - 1):
        if (pats[i - 1] == pats[i]).all() and (pats[i] == pats[i + 1]).all():
            np.testing.assert_allclose(ys[i], 0.5 * (ys[i - 1] + ys[i + 1]), atol=1e-10)
    # continuity: steps are bounded by the Lipschitz constant
    lip = np.linalg.norm(w2, 2) * np.linalg.norm(w1, 2) * np.linalg.norm(u)
    assert np.max(np.linalg.norm(np.diff(ys, axis=0), axis=1)) <= lip * (ts[1] - ts[0]) + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_active_map_reproduces_output(seed):
    rng = np.random.default_rng(seed)
    net = FlatteningNetwork((
        Layer(rng.standard_normal((5, 4)), rng.standard_normal(5), True),
        Layer(rng.standard_normal((3, 5)), rng.standard_normal(3), True),
        Layer(rng.standard_normal((2, 3)), rng.standard_normal(2), False),
    ))
    x = rng.standard_normal(4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OnRegionBoundary)
        M, c = active_linear_map(net, x)
    np.testing.assert_allclose(M @ x + c, evaluate(net, x), atol=1e-10)


def test_weight_memory_layout_does_not_change_outputs(chain625):
    ch, s = chain625
    net = build_monotonic(ch, "middle")
    fortran = FlatteningNetwork(
        tuple(Layer(np.asfortranarray(l.weights), l.bias, l.relu) for l in net.layers), net.metadata
    )
    pts = s["on"]
    assert np.array_equal(evaluate_batch(net, pts), evaluate_batch(fortran, pts))
    assert np.array_equal(evaluate_batch(net, np.asfortranarray(pts)), evaluate_batch(net, pts))
