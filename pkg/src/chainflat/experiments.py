"""Data generators and the end-to-end experiment drivers."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import io as cio
from .analysis import error_bound, exp_bound, measure_errors
from .builder import build_combined, build_worstcase, worstcase_extreme_params
from .exceptions import GenerationFailed, InvalidDims, InvalidSpec, MonotonicityWarning
from .fitting import LabeledSamples, fit_chain, split_into_monotonic
from .geometry import AffineSegment, Hyperplane, MonotonicChain, validate_monotonic
from .network import evaluate_batch, serialize

SWISS_ROLL_PIECE_CAP = np.radians(166.5)


# --- random chains ------------------------------------------------------------


def _random_unit_normal(rng, frame):
    for _ in range(100):
        n = rng.standard_normal(frame.shape[0])
        n -= frame @ (frame.T @ n)
        norm = np.linalg.norm(n)
        if norm > 1e-6:
            return n / norm
    raise GenerationFailed("could not draw a normal direction")


def _draw_chain(rng, d, m, K, max_angle, length, half_width, twist):
    e = np.linalg.qr(rng.standard_normal((d, m)))[0]
    entry_dir, ys = e[:, 0], e[:, 1:]
    anchor = rng.standard_normal(d)
    segs, hps = [], []
    for k in range(K):
        basis = np.column_stack([entry_dir, ys])
        L = rng.uniform(*length)
        lo = np.concatenate([[0.0], -half_width * np.ones(m - 1)])
        hi = np.concatenate([[L], half_width * np.ones(m - 1)])
        segs.append(AffineSegment(anchor, basis, lo, hi))
        if k == K - 1:
            break
        # tilt the exit fold within the flat by a small in-plane rotation
        if m > 1:
            skew = rng.normal(0.0, twist, (m, m))
            q = expm(skew - skew.T)
        else:
            q = np.eye(1)
        frame = basis @ q
        w, ys_next = frame[:, 0], frame[:, 1:]
        corners = segs[-1].vertices() - anchor
        exit_at = float(np.max(corners @ w))
        boundary = anchor + exit_at * w
        theta = rng.uniform(0.25 * max_angle, max_angle) if max_angle > 0 else 0.0
        n = _random_unit_normal(rng, basis)
        v = np.cos(theta) * w + np.sin(theta) * n
        hps.append(Hyperplane.through(v + w, boundary))
        anchor, entry_dir, ys = boundary, v, ys_next
    return MonotonicChain.from_segments(segs, hps)


def _chain_samples(rng, chain, n_on, n_off, delta):
    per = max(1, n_on // chain.K)
    on, on_seg, feet, off, off_seg = [], [], [], [], []
    for k, s in enumerate(chain.segments):
        on.append(s.sample(rng, per))
        on_seg.append(np.full(per, k))
        span = s.upper - s.lower
        inner = AffineSegment(s.anchor, s.basis, s.lower + 0.1 * span, s.upper - 0.1 * span)
        n_k = max(1, n_off // chain.K)
        f = inner.sample(rng, n_k)
        dirs = rng.standard_normal((n_k, chain.d))
        dirs -= (dirs @ s.basis) @ s.basis.T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        feet.append(f)
        off.append(f + delta * dirs)
        off_seg.append(np.full(n_k, k))
    return {
        "on": np.vstack(on),
        "on_segment": np.concatenate(on_seg),
        "off": np.vstack(off),
        "off_feet": np.vstack(feet),
        "off_segment": np.concatenate(off_seg),
    }


def gen_random_chain(d, m, K, max_fold_angle, seed=0, n_on=1000, n_off=200, delta=1e-3,
                     length=(1.0, 2.0), half_width=0.5, twist=0.1, max_retries=100):
    """Random monotonic chain with bisector fold hyperplanes, plus samples.

    Segments are boxes of length ``length`` along their entry direction and width
    ``2 * half_width`` across it.  Each fold turns the chain by an angle drawn from
    ``[max_fold_angle / 4, max_fold_angle]`` towards a random normal direction, and
    the exit fold is slightly tilted within the segment's flat.

    Returns
    -------
    chain : MonotonicChain
    samples : dict
        ``on`` (points on the chain), ``on_segment``, ``off`` (points displaced by
        ``delta`` normal to their segment), ``off_feet`` and ``off_segment``.
    """
    if not (d > m >= 1 and K >= 1):
        raise InvalidDims(f"need d > m >= 1 and K >= 1, got d={d}, m={m}, K={K}")
    if not 0 <= max_fold_angle < np.pi / 2:
        raise InvalidSpec("max_fold_angle must lie in [0, pi/2)")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        try:
            chain = _draw_chain(rng, d, m, K, max_fold_angle, length, half_width, twist)
        except Exception:
            continue
        if validate_monotonic(chain).ok:
            return chain, _chain_samples(rng, chain, n_on, n_off, delta)
    raise GenerationFailed(f"no monotonic chain after {max_retries} attempts")


# --- Swiss roll ----------------------------------------------------------------


@dataclass(frozen=True)
class SwissRollSpec:
    """Swiss roll ``(t cos t, h, t sin t)`` sampled uniformly in arc length and height."""

    t_range: tuple = (1.5 * np.pi, 4.0 * np.pi)
    height_range: tuple = (0.0, 10.0)
    n_points: int = 4000
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self):
        t0, t1 = self.t_range
        h0, h1 = self.height_range
        if not t1 > t0 > 0:
            raise InvalidSpec("t_range must satisfy t1 > t0 > 0")
        if not h1 > h0:
            raise InvalidSpec("height_range must be increasing")
        if int(self.n_points) < 100:
            raise InvalidSpec("n_points must be at least 100")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be non-negative")


def arc_length(t):
    """Arc length of the spiral ``(t cos t, t sin t)`` from 0 to ``t``."""
    t = np.asarray(t, dtype=float)
    return 0.5 * (t * np.sqrt(1.0 + t * t) + np.arcsinh(t))


def inverse_arc_length(s, t_lo, t_hi):
    """Spiral parameter with the given arc length (Newton, started from a table)."""
    grid = np.linspace(t_lo, t_hi, 2049)
    t = np.interp(s, arc_length(grid), grid)
    for _ in range(8):
        t = t - (arc_length(t) - s) / np.sqrt(1.0 + t * t)
    return t


def turning(t):
    """Tangent turning angle of the spiral; its derivative is the curvature times
    the speed."""
    return t + np.arctan(t)


def swiss_roll_point(t, h):
    t = np.asarray(t, dtype=float)
    return np.stack([t * np.cos(t), np.broadcast_to(h, t.shape), t * np.sin(t)], axis=-1)


def swiss_roll_normal(t):
    t = np.asarray(t, dtype=float)
    n = np.stack([np.sin(t) + t * np.cos(t), np.zeros_like(t), t * np.sin(t) - np.cos(t)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def gen_swiss_roll(spec=None, n_segments=14):
    """Swiss-roll samples labeled into ``n_segments`` bins of equal tangent turning.

    Intrinsic coordinates are ``(s(t), h)`` with the closed-form arc length.
    """
    spec = spec or SwissRollSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    t0, t1 = spec.t_range
    n = int(spec.n_points)
    s = rng.uniform(arc_length(t0), arc_length(t1), n)
    h = rng.uniform(*spec.height_range, n)
    t = inverse_arc_length(s, t0, t1)
    pts = swiss_roll_point(t, h)
    if spec.noise_sigma > 0:
        pts = pts + spec.noise_sigma * rng.standard_normal(n)[:, None] * swiss_roll_normal(t)
    psi = turning(t)
    edges = np.linspace(turning(t0), turning(t1), n_segments + 1)
    labels = np.clip(np.searchsorted(edges, psi, side="right") - 1, 0, n_segments - 1)
    return LabeledSamples(pts, labels, np.column_stack([s, h]), t)


# --- experiment drivers ---------------------------------------------------------


@dataclass
class ExperimentResult:
    summary: dict
    chain: object = None
    complex: object = None
    network: object = None
    report: object = None
    counts: dict = None
    manifest: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)


def junction_continuity(net, cplx, per_axis=5, step=1e-9):
    """Largest output jump across the junctions between consecutive pieces.

    Points of each junction flat are approached from both pieces along their
    in-flat directions ``w`` and ``v``.
    """
    worst = 0.0
    scale = max(c.scale for c in cplx.chains)
    h = step * scale
    for l in range(cplx.L - 1):
        g = cplx.junctions[l][1]
        left, right = cplx.chains[l].segments[-1], cplx.chains[l + 1].segments[0]
        ys = g.intersection_basis
        if ys.shape[1]:
            verts = np.vstack([left.vertices(), right.vertices()])
            z = (verts - g.boundary_point) @ ys
            lo = np.maximum(z.min(axis=0), -np.inf)
            hi = z.max(axis=0)
            axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ys.shape[1])
            pts = g.flat_points(grid)
        else:
            pts = g.boundary_point[None]
        a = evaluate_batch(net, pts - h * g.w)
        b = evaluate_batch(net, pts + h * g.v)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def run_swiss_roll_experiment(spec=None, n_chains=3, n_segments=14, c_override=1.0,
                              overlap_mode="maxpool", piece_cap=SWISS_ROLL_PIECE_CAP,
                              out_dir=None, plots=True):
    """Fit, split, build and measure on the Swiss roll.

    Pieces are capped at ``piece_cap`` of total curvature.  ``c_override`` is the
    constant used for the reported ``e^{cT}`` figures; the bound check itself uses
    each piece's required ``c``.
    """
    spec = spec or SwissRollSpec()
    data = gen_swiss_roll(spec, n_segments)
    with warnings.catch_warnings():
        # the roll is not monotonic as a whole; splitting below is the remedy
        warnings.simplefilter("ignore", MonotonicityWarning)
        chain = fit_chain(data, m=2)
    cplx = split_into_monotonic(
        chain, max_one_sided_curvature=piece_cap, n_pieces=n_chains, max_total_curvature=piece_cap
    )
    net = build_combined(cplx, overlap_mode=overlap_mode, start_segment="middle")
    report = measure_errors(net, cplx, data.points, truth=data.intrinsic)
    scale = float(np.max(np.abs(data.points)))
    cont = junction_continuity(net, cplx)
    pieces = []
    for l, piece in enumerate(cplx.chains):
        eb = error_bound(piece, c=None, start_segment="middle")
        pieces.append({
            "segments": cplx.info["pieces"][l],
            "curvature_deg": float(np.degrees(piece.total_curvature)),
            "one_sided_curvature_deg": float(np.degrees(eb["T_eff"])),
            "exp_bound_c_override": exp_bound(piece.total_curvature, c_override),
            "exp_bound_c_override_one_sided": exp_bound(eb["T_eff"], c_override),
            "c_required": eb["c_required"],
            "exp_bound_required_c": eb["exp_bound"],
            "gating_rows": cplx.info["J"][l],
        })
    summary = {
        "experiment": "swiss-roll",
        "spec": {
            "t_range": list(spec.t_range),
            "height_range": list(spec.height_range),
            "n_points": spec.n_points,
            "noise_sigma": spec.noise_sigma,
            "seed": spec.seed,
        },
        "n_segments": n_segments,
        "n_chains": cplx.L,
        "overlap_mode": overlap_mode,
        "max_rel_err": report.global_["max_rel_err"],
        "mean_rel_err": report.global_["mean_rel_err"],
        "max_abs_err": report.global_["max_abs_err"],
        "mean_abs_err": report.global_["mean_abs_err"],
        "max_delta": report.global_["max_delta"],
        "fold_angles_deg": np.degrees(chain.angles).tolist(),
        "total_curvature_deg": float(np.degrees(chain.total_curvature)),
        "junction_angles_deg": np.degrees(cplx.info["junction_angles"]).tolist(),
        "bound_per_piece": [p["exp_bound_c_override"] for p in pieces],
        "pieces": pieces,
        "c_override": c_override,
        "junction_continuity": cont,
        "data_scale": scale,
        "unit_count": int(sum(layer.weights.shape[0] for layer in net.layers[:-1])),
        "hidden_units_first_layer": net.hidden_units(0),
        "param_counts": {"weights": net.n_weights, "parameters": net.n_parameters},
    }
    result = ExperimentResult(summary, chain, cplx, net, report, summary["param_counts"])
    result.tables["embedding"] = evaluate_batch(net, data.points)
    result.tables["data"] = data
    if out_dir is not None:
        _emit_swiss_roll(result, out_dir, plots)
    return result


def _emit_swiss_roll(result, out_dir, plots):
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "chain.json": cio.dumps_json(result.chain.to_dict()),
        "complex.json": cio.dumps_json(result.complex.to_dict()),
        "network.json": serialize(result.network),
    }
    for name, payload in files.items():
        cio.write_bytes(os.path.join(out_dir, name), payload)
        result.manifest.append(name)
    cio.write_csv(os.path.join(out_dir, "errors.csv"), result.report.rows(), result.report.CSV_HEADER)
    result.manifest.append("errors.csv")
    data = result.tables["data"]
    emb = result.tables["embedding"]
    rows = [
        [i, int(data.labels[i]), *data.intrinsic[i].tolist(), *emb[i].tolist()]
        for i in range(len(emb))
    ]
    cio.write_csv(os.path.join(out_dir, "embedding.csv"), rows,
                  ["point_index", "label", "s_true", "h_true", "u1", "u2"])
    result.manifest.append("embedding.csv")
    if plots:
        from . import plotting

        result.manifest += plotting.swiss_roll_figures(result, out_dir)
    result.summary["manifest"] = list(result.manifest) + ["summary.json"]
    cio.write_bytes(os.path.join(out_dir, "summary.json"), cio.dumps_json(result.summary))


def run_worstcase_demo(N=100.0, eps=0.01, n_per_segment=20, rel_delta=1e-3, out_dir=None,
                       plots=True):
    """Perturbation sweep over the three segments of the hairpin network.

    Base points avoid the outer 10% of each segment; perturbations of size
    ``rel_delta * eps`` go along the segment normal that keeps the point in the
    same linear region.
    """
    if not (N > 0 and eps > 0 and N / eps >= 10):
        raise InvalidSpec("need N, eps > 0 and N / eps >= 10")
    q, r = worstcase_extreme_params(N, eps)
    net = build_worstcase(N, eps, q, r)
    delta = rel_delta * eps
    frac = np.linspace(0.1, 0.9, n_per_segment)
    cases = [
        (0, np.column_stack([frac * N, np.zeros_like(frac)]), np.array([0.0, 1.0])),
        (1, np.column_stack([np.full_like(frac, N), frac * eps]), np.array([1.0, 0.0])),
        (2, np.column_stack([frac * N, np.full_like(frac, eps)]), np.array([0.0, 1.0])),
    ]
    rows = []
    per_seg = {}
    for k, p0, nrm in cases:
        base = evaluate_batch(net, p0)
        moved = evaluate_batch(net, p0 + delta * nrm)
        amp = np.abs(moved - base)[:, 0] / delta
        per_seg[k] = amp
        for x, a in zip(p0, amp):
            rows.append([k + 1, float(x[0]), float(x[1]), delta, float(a)])
    predicted = {
        "seg1": 0.0,
        "seg2": 1.0 + q[0] / q[1],
        "seg3": 1.0 + (r[1] / abs(r[0])) * (2.0 + q[0] / q[1]),
    }
    summary = {
        "experiment": "worst-case",
        "N": N,
        "eps": eps,
        "q": list(q),
        "r": list(r),
        "delta": delta,
        "max_amplification": {f"seg{k + 1}": float(per_seg[k].max()) for k in per_seg},
        "min_amplification": {f"seg{k + 1}": float(per_seg[k].min()) for k in per_seg},
        "predicted_amplification": predicted,
        "unit_count": net.hidden_units(0),
    }
    result = ExperimentResult(summary, network=net)
    result.tables["sweep"] = rows
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        cio.write_csv(os.path.join(out_dir, "worstcase.csv"), rows,
                      ["segment", "x", "y", "delta", "amplification"])
        cio.write_bytes(os.path.join(out_dir, "network.json"), serialize(net))
        result.manifest += ["worstcase.csv", "network.json"]
        if plots:
            from . import plotting

            result.manifest += plotting.worstcase_figures(result, out_dir)
        summary["manifest"] = list(result.manifest) + ["summary.json"]
        cio.write_bytes(os.path.join(out_dir, "summary.json"), cio.dumps_json(summary))
    return result
