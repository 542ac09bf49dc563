"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from chainflat import (
    AffineSegment,
    ChainComplex,
    MonotonicChain,
    build_combined,
    build_hierarchical,
    build_monotonic,
    build_worstcase,
    deserialize,
    embed_chain,
    error_bound,
    evaluate,
    evaluate_batch,
    exp_bound,
    gen_random_chain,
    hierarchical_weight_counts,
    parameter_counts,
    perturbation_error,
    run_swiss_roll_experiment,
    segment_operator,
    serialize,
    split_into_monotonic,
    unfolding_oracle,
    worstcase_chain,
    worstcase_extreme_params,
)

from conftest import PHI, THETA, random_chain_params, short_example_chain

N_RANDOM = 100


def suite_chain(seed):
    d, m, K = random_chain_params(seed)
    # enough on-chain samples that every chain gets at least 10^3
    return gen_random_chain(d, m, K, np.radians(30), seed=seed, n_on=1000 + K)


@contextmanager
def criterion(capsys, number, title, budget):
    t0 = time.perf_counter()
    status, detail = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - t0
        assert elapsed < budget, f"runtime {elapsed:.2f}s over {budget}s"
        status, detail = "PASS", f"{elapsed:.2f}s"
    except AssertionError as exc:
        detail = str(exc).splitlines()[0] if str(exc) else "assertion failed"
        raise
    finally:
        with capsys.disabled():
            print(f"\n[acceptance {number}] {status}: {title} ({detail})")


def test_criterion_1_worked_example(capsys):
    with criterion(capsys, 1, "worked example golden test", 1.0):
        net = build_monotonic(short_example_chain(THETA, PHI))
        b = net.layers[1].weights[0, 1]
        assert abs(b - 0.5 / np.cos(np.radians(30))) <= 1e-12
        for r in (0.0, 0.5, 1.0):
            y = evaluate(net, [r * np.cos(THETA), r * np.sin(THETA)])[0]
            assert abs(y - (r + 1)) <= 1e-12


def test_criterion_2_exactness(capsys):
    with criterion(capsys, 2, "exactness over 100 random chains", 60.0):
        for seed in range(N_RANDOM):
            ch, s = suite_chain(seed)
            assert len(s["on"]) >= 1000
            net = build_monotonic(ch)
            out = evaluate_batch(net, s["on"])
            err = np.max(np.abs(out - unfolding_oracle(ch, s["on"])))
            assert err <= 1e-8, f"seed {seed}: oracle mismatch {err:.3g}"
            meta = net.metadata
            W, bias = net.layers[0].weights, net.layers[0].bias
            pre = s["on"] @ W.T + bias
            for k in range(ch.K):
                op, _ = segment_operator(net, k)
                X = np.array(meta["pullback_bases"][k])
                np.testing.assert_allclose(op @ X, np.eye(ch.m), atol=1e-9)
                # each unit appended at a later fold is switched off on this segment
                later = [u for u in range(ch.m, W.shape[0]) if u not in meta["segment_units"][k]]
                if later:
                    assert pre[s["on_segment"] == k][:, later].max() <= 1e-10, f"seed {seed} segment {k}"


def test_criterion_3_unit_economy(capsys):
    with criterion(capsys, 3, "unit economy and parameter counts", 1.0):
        for seed in range(N_RANDOM):
            d, m, K = random_chain_params(seed)
            ch, _ = gen_random_chain(d, m, K, np.radians(30), seed=seed, n_on=K, n_off=K)
            assert build_monotonic(ch).hidden_units() == K + m - 1
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = int(rng.integers(1, 6))
            d = m + 3 + int(rng.integers(0, 200))
            K = int(rng.integers(1, 50))
            pc = parameter_counts(d, m, K)
            assert Fraction(pc.dof_chain) == m * (d - Fraction(m + 1, 2)) + (K - 1) * (d - 2)
            bound = (1 + Fraction(2, K + m - 1)) * (1 + Fraction(2 * m + 3, d - m - 2))
            assert pc.ratio_bound == bound
            assert pc.ratio_reference <= bound
        assert parameter_counts(100, 2, 10).dof_chain == 1079


def test_criterion_4_error_bounds(capsys):
    with criterion(capsys, 4, "error-bound suite", 60.0):
        for seed in range(N_RANDOM):
            d, m, K = random_chain_params(seed)
            ch, _ = gen_random_chain(d, m, K, np.radians(30), seed=seed, n_on=K, n_off=K)
            c = max(1.0 / np.cos(a / 2) for a in ch.angles)
            eb = error_bound(ch, c=c, start_segment=0)
            net = build_monotonic(ch)
            prod = 1.0
            for k in range(ch.K):
                if k:
                    prod *= 1 + c * ch.angles[k - 1]
                sigma = segment_operator(net, k)[1]
                assert sigma <= prod + 1e-9, f"seed {seed} segment {k}"
                assert sigma <= np.exp(c * ch.total_curvature) + 1e-9
            assert eb["exp_bound"] == pytest.approx(np.exp(c * ch.total_curvature))
        assert f"{exp_bound(np.pi / 4, 1.0):.3g}" == "2.19"
        assert f"{exp_bound(np.radians(166.5), 1.0):.3g}" == "18.3"


def test_criterion_5_worst_case(capsys):
    with criterion(capsys, 5, "worst-case reproduction", 1.0):
        N, eps = 100.0, 0.01
        q, r = worstcase_extreme_params(N, eps)
        net = build_worstcase(N, eps, q, r)
        ch = worstcase_chain(N, eps)
        xs = np.linspace(0.1 * N, 0.9 * N, 9)
        ys = np.linspace(0.1 * eps, 0.9 * eps, 9)
        d = 1e-3 * eps
        s1 = [perturbation_error(net, ch, [x, 0.0], [0.0, d])["amplification"] for x in xs]
        s2 = [perturbation_error(net, ch, [N, y], [d, 0.0])["amplification"] for y in ys]
        s3 = [perturbation_error(net, ch, [x, eps], [0.0, d])["amplification"] for x in xs]
        assert max(s1) <= 1e-10
        assert max(s2) <= 1 + eps / N + 1e-9
        assert min(s3) >= 1e4
        np.testing.assert_allclose(evaluate_batch(net, np.column_stack([xs, 0 * xs]))[:, 0], xs, atol=1e-9)
        np.testing.assert_allclose(evaluate_batch(net, np.column_stack([0 * ys + N, ys]))[:, 0], N + ys, atol=1e-9)
        np.testing.assert_allclose(evaluate_batch(net, np.column_stack([xs, 0 * xs + eps]))[:, 0],
                                   2 * N + eps - xs, atol=1e-9)


def test_criterion_6_swiss_roll(capsys):
    with criterion(capsys, 6, "Swiss roll reproduction", 120.0):
        res = run_swiss_roll_experiment()
        s = res.summary
        assert s["n_segments"] == 14 and res.chain.K == 14
        assert s["n_chains"] == 3
        for p in res.complex.chains:
            assert np.degrees(p.total_curvature) <= 166.5
        assert s["max_rel_err"] <= 2.5, f"max relative error {s['max_rel_err']:.3f}"
        assert s["mean_rel_err"] <= 1.5, f"mean relative error {s['mean_rel_err']:.3f}"
        assert s["junction_continuity"] <= 1e-6 * s["data_scale"]
        with capsys.disabled():
            print(f"\n  swiss roll: max rel {s['max_rel_err']:.3f}, mean rel {s['mean_rel_err']:.3f}, "
                  f"pieces {[round(p['curvature_deg'], 1) for p in s['pieces']]} deg")


def _clean_points(net, cplx, pts):
    """Points inside exactly one gating polytope and outside the others by their margin."""
    keep = np.ones(len(pts), bool)
    inside_count = np.zeros(len(pts), int)
    for l, (normals, offsets) in enumerate(cplx.gates):
        viol = np.max(pts @ normals.T + offsets, axis=1)
        margin = net.metadata["chains"][l]["gating_margin"]
        inside = viol <= 0
        inside_count += inside
        keep &= inside | (viol >= margin)
    return keep & (inside_count == 1)


def test_criterion_7_combination(capsys):
    with criterion(capsys, 7, "sum and maxpool combination", 10.0):
        ch, s = gen_random_chain(5, 2, 9, np.radians(25), seed=4)
        cx = split_into_monotonic(ch, n_pieces=3)
        assert cx.L == 3
        nets = {mode: build_combined(cx, mode) for mode in ("sum", "maxpool")}
        pts = np.vstack([s["on"], s["off"]])
        clean = _clean_points(nets["sum"], cx, pts)
        assert clean.mean() > 0.9
        a = evaluate_batch(nets["sum"], pts[clean])
        b = evaluate_batch(nets["maxpool"], pts[clean])
        assert np.max(np.abs(a - b)) <= 1e-9

        # two collinear pieces whose polytopes overlap on [1, 1.1]
        left = MonotonicChain.from_segments([AffineSegment([0.0, 0.0], [[1.0], [0.0]], [0.0], [1.1])])
        right = MonotonicChain.from_segments([AffineSegment([1.0, 0.0], [[1.0], [0.0]], [0.0], [1.0])])
        gates = [([[1.0, 0.0]], [-1.1]), ([[-1.0, 0.0]], [1.0])]
        over = ChainComplex([left, right], gates, stitching=[(np.eye(1), np.zeros(1))] * 2)
        xs = np.linspace(1.01, 1.09, 9)
        band = np.column_stack([xs, np.zeros_like(xs)])
        truth = xs  # both pieces agree on their common part
        s_out = evaluate_batch(build_combined(over, "sum"), band)[:, 0]
        m_out = evaluate_batch(build_combined(over, "maxpool"), band)[:, 0]
        assert np.max(np.abs(m_out - truth)) <= 1e-8
        assert np.min(np.abs(s_out - truth)) > 0.5


def test_criterion_8_hierarchical(capsys):
    with criterion(capsys, 8, "hierarchical equivalence", 10.0):
        m1, m2, K, d = 5, 2, 6, 40
        inner, s = gen_random_chain(m1, m2, K, np.radians(20), seed=21, n_on=1000 + K)
        rng = np.random.default_rng(3)
        basis = np.linalg.qr(rng.standard_normal((d, m1)))[0]
        origin = rng.standard_normal(d)
        hier = build_hierarchical(basis, inner, origin)
        flat = build_monotonic(embed_chain(inner, basis, origin))
        pts = origin + s["on"] @ basis.T
        assert len(pts) >= 1000
        assert np.max(np.abs(evaluate_batch(hier, pts) - evaluate_batch(flat, pts))) <= 1e-8
        counts = hierarchical_weight_counts(d, m1, m2, K)
        assert hier.layers[0].weights.size + hier.layers[1].weights.size == counts["hierarchical"]
        assert counts["hierarchical"] == d * m1 + m1 * (m2 + K - 1)
        assert flat.layers[0].weights.size == counts["flat"] == d * (m2 + K - 1)


def test_criterion_9_serialization(capsys):
    with criterion(capsys, 9, "serialization round trip", 5.0):
        ch, s = gen_random_chain(5, 2, 9, np.radians(25), seed=4, n_on=1009)
        cx = split_into_monotonic(ch, n_pieces=3)
        inner, _ = gen_random_chain(5, 2, 4, np.radians(20), seed=2)
        basis = np.linalg.qr(np.random.default_rng(0).standard_normal((12, 5)))[0]
        N, eps = 100.0, 0.01
        rng = np.random.default_rng(9)
        cases = [
            (build_monotonic(ch, "middle"), s["on"]),
            (build_worstcase(N, eps, *worstcase_extreme_params(N, eps)), rng.uniform(0, N, (1000, 2))),
            (build_combined(cx, "sum"), s["on"]),
            (build_combined(cx, "maxpool"), s["on"]),
            (build_hierarchical(basis, inner), rng.standard_normal((1000, 12))),
        ]
        for net, pts in cases:
            pts = pts[:1000]
            assert len(pts) == 1000
            back = deserialize(serialize(net))
            assert np.array_equal(evaluate_batch(net, pts), evaluate_batch(back, pts)), net.metadata.get("kind")
