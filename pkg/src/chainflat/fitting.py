"""Fit a chain of flats to labeled samples and cut it into monotonic pieces."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .exceptions import (
    GatingInfeasible,
    MonotonicityWarning,
    NonAdjacentLabels,
    RankDeficient,
    ValidationError,
)
from .geometry import (
    AffineSegment,
    ChainComplex,
    Hyperplane,
    MonotonicChain,
    middle_segment,
    one_sided_curvature,
    orthonormal_complement,
    total_curvature,
    validate_monotonic,
)

BOX_MARGIN = 0.01
BOUNDARY_FRACTION = 0.1
COINCIDENT_ANGLE = 1e-6


@dataclass
class LabeledSamples:
    """Points with a segment label each; ``intrinsic`` holds ground-truth coordinates
    when the data are synthetic and ``params`` any generating parameters."""

    points: np.ndarray
    labels: np.ndarray
    intrinsic: np.ndarray = None
    params: np.ndarray = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.labels = np.asarray(self.labels).astype(int).ravel()
        if self.labels.shape[0] != self.points.shape[0]:
            raise ValidationError("need one label per point")
        if self.intrinsic is not None:
            self.intrinsic = np.asarray(self.intrinsic, dtype=float)

    @property
    def K(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def segment(self, k):
        return self.points[self.labels == k]


def _scale(points):
    return float(max(1.0, np.max(np.abs(points))))


def _pca(points, m):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    if n < m + 1:
        raise RankDeficient(f"need at least {m + 1} points to fit an {m}-flat, got {n}")
    center = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - center, full_matrices=False)
    if s.size < m or s[m - 1] < 1e-10 * _scale(points):
        raise RankDeficient(f"points span fewer than {m} dimensions")
    return center, vt[:m].T


def _bounds(coords, margin):
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    pad = margin * np.maximum(hi - lo, 1e-12)
    return lo - pad, hi + pad


def fit_segment(points, m, margin=BOX_MARGIN):
    """PCA flat through the centroid with a box ``margin`` (relative) wider than the
    projected coordinates."""
    center, basis = _pca(points, m)
    lo, hi = _bounds((np.asarray(points, dtype=float) - center) @ basis, margin)
    return AffineSegment(center, basis, lo, hi)


def _check_labels(samples, m):
    labels = samples.labels
    K = samples.K
    present = np.unique(labels)
    if present.size == 0 or present[0] < 0 or not np.array_equal(present, np.arange(K)):
        raise NonAdjacentLabels(f"labels must cover 0..K-1 without gaps, got {present.tolist()}")
    if K < 2:
        return
    tree_all = cKDTree(samples.points)
    dd, _ = tree_all.query(samples.points, k=2)
    spacing = float(np.median(dd[:, 1]))
    for k in range(K - 1):
        gap = cKDTree(samples.segment(k)).query(samples.segment(k + 1))[0].min()
        if gap > 20 * spacing + 1e-12:
            raise NonAdjacentLabels(
                f"segments {k} and {k + 1} are {gap:.3g} apart (typical spacing {spacing:.3g})"
            )


def _boundary(prev_anchor, prev_basis, nxt_anchor, nxt_basis, prev_pts, nxt_pts):
    """(m-1)-flat on the previous flat where the next flat meets it (least squares)."""
    m = prev_basis.shape[1]
    u, s, _ = np.linalg.svd(prev_basis.T @ nxt_basis)
    ys = prev_basis @ u[:, : m - 1]
    gap = float(np.arccos(np.clip(s[m - 1], -1.0, 1.0)))
    if gap > COINCIDENT_ANGLE:
        system = np.hstack([prev_basis, -nxt_basis])
        sol, *_ = np.linalg.lstsq(system, nxt_anchor - prev_anchor, rcond=None)
        return prev_anchor + prev_basis @ sol[:m], ys
    # Flats coincide: locate the fold from the samples nearest the label change.
    n_prev = max(1, int(np.ceil(BOUNDARY_FRACTION * len(prev_pts))))
    n_next = max(1, int(np.ceil(BOUNDARY_FRACTION * len(nxt_pts))))
    d_prev = cKDTree(nxt_pts).query(prev_pts)[0]
    d_next = cKDTree(prev_pts).query(nxt_pts)[0]
    band = np.vstack([
        prev_pts[np.argsort(d_prev, kind="stable")[:n_prev]],
        nxt_pts[np.argsort(d_next, kind="stable")[:n_next]],
    ])
    local = (band - prev_anchor) @ prev_basis
    center = local.mean(axis=0)
    if m > 1:
        _, _, vt = np.linalg.svd(local - center, full_matrices=False)
        ys = prev_basis @ vt[: m - 1].T
    return prev_anchor + prev_basis @ center, ys


def _inflow_direction(points, anchor, ys):
    r = points - anchor
    if ys.shape[1]:
        r = r - (r @ ys) @ ys.T
    _, _, vt = np.linalg.svd(r, full_matrices=False)
    u = vt[0]
    if ys.shape[1]:
        u = u - ys @ (ys.T @ u)
    u /= np.linalg.norm(u)
    if np.mean(r @ u) < 0:
        u = -u
    return u


def _trim_exit(lo, hi, basis, anchor, exit_point, exit_ys, own_center):
    """Shrink the far end of the u-range until every box corner is on the segment's
    side of the exit fold."""
    m = basis.shape[1]
    q = (exit_point - anchor) @ basis
    yl = basis.T @ exit_ys
    g = orthonormal_complement(yl, within=np.eye(m))[:, 0] if m > 1 else np.ones(1)
    if g @ (own_center - q) > 0:
        g = -g
    if g[0] <= 1e-12:
        raise ValidationError("exit fold does not cross the segment's main direction")
    corners = np.array(list(itertools.product(*zip(lo[1:], hi[1:])))) if m > 1 else np.zeros((1, 0))
    lim = min((g @ q - g[1:] @ z) / g[0] for z in corners)
    if hi[0] > lim:
        hi = hi.copy()
        hi[0] = lim
    if hi[0] <= lo[0]:
        raise ValidationError("segment collapses after trimming at its exit fold")
    return hi


def fit_chain(samples, m, margin=BOX_MARGIN):
    """Chain of flats through labeled samples whose consecutive members share an
    (m-1)-flat exactly.

    Each segment is first fitted freely.  The boundary between segment k-1 (already
    final) and k is where the free fit of k meets it, in least squares; segment k is
    then refitted as the flat containing that boundary plus the top principal
    direction of its residuals.  Boxes start exactly at the entry fold and are
    trimmed to stay before the exit fold.

    The returned chain carries bisector fold hyperplanes and an ``info`` block with
    residuals, fold angles and the monotonicity check.  A non-monotonic result is
    still returned, with a :class:`MonotonicityWarning`.
    """
    _check_labels(samples, m)
    K = samples.K
    pts = [samples.segment(k) for k in range(K)]
    free = [_pca(p, m) for p in pts]

    anchors, bases, entry = [], [], []
    if K == 1:
        seg = fit_segment(pts[0], m, margin)
        segs = [seg]
    else:
        prev_anchor, prev_basis = free[0]
        boundaries = []
        for k in range(1, K):
            q, ys = _boundary(prev_anchor, prev_basis, free[k][0], free[k][1], pts[k - 1], pts[k])
            u = _inflow_direction(pts[k], q, ys)
            basis = np.column_stack([u, ys])
            if k == 1:
                # re-express segment 0 from its exit fold, pointing forward
                g = orthonormal_complement(ys, within=prev_basis)[:, 0] if m > 1 else prev_basis[:, 0].copy()
                if np.mean((pts[0] - q) @ g) > 0:
                    g = -g
                anchors.append(q)
                bases.append(np.column_stack([g, ys]))
            boundaries.append((q, ys))
            anchors.append(q)
            bases.append(basis)
            prev_anchor, prev_basis = q, basis
        segs = []
        for k in range(K):
            coords = (pts[k] - anchors[k]) @ bases[k]
            lo, hi = _bounds(coords, margin)
            if k == 0:
                hi[0] = 0.0
                lo[0] = min(lo[0], -1e-9)
            else:
                lo[0] = 0.0
                hi[0] = max(hi[0], 1e-9)
                if k < K - 1:
                    q, ys = boundaries[k]
                    hi = _trim_exit(lo, hi, bases[k], anchors[k], q, ys, coords.mean(axis=0))
            segs.append(AffineSegment(anchors[k], bases[k], lo, hi))

    hps = []
    for k in range(K - 1):
        s = np.linalg.svd(segs[k].basis.T @ segs[k + 1].basis, compute_uv=False)
        if s[-1] > 1.0 - 1e-8:
            hps.append(Hyperplane.through(segs[k + 1].basis[:, 0], segs[k + 1].anchor))
        else:
            hps.append(None)
    chain = MonotonicChain.from_segments(segs, hps)
    report = validate_monotonic(chain)
    resid = []
    for k, p in enumerate(pts):
        r = p - segs[k].anchor
        r = r - (r @ segs[k].basis) @ segs[k].basis.T
        resid.append(float(np.sqrt(np.mean(np.sum(r * r, axis=1)))))
    info = {
        "fit": {
            "residual_rms": resid,
            "fold_angles": chain.angles.tolist(),
            "total_curvature": chain.total_curvature,
            **report.summary(),
        }
    }
    chain = MonotonicChain(chain.segments, chain.folds, info)
    if not report.ok:
        warnings.warn(
            f"fitted chain is not monotonic ({len(report.violations)} violations); "
            "split it with split_into_monotonic",
            MonotonicityWarning,
            stacklevel=2,
        )
    return chain


# --- splitting into monotonic pieces -----------------------------------------


def _piece_ok(chain, i, j, cap, total_cap):
    sub = chain.sub_chain(i, j)
    if sub.K == 1:
        return True
    if total_cap is not None and total_curvature(sub) > total_cap + 1e-12:
        return False
    if one_sided_curvature(sub, middle_segment(sub)) > cap + 1e-12:
        return False
    return validate_monotonic(sub).ok


def _separate(inside, outside):
    """Unit-normal hyperplane with ``inside`` on the negative and ``outside`` on the
    positive side, by a hard-margin LP minimizing the l1 norm of the normal."""
    d = inside.shape[1]
    scale = max(_scale(inside), _scale(outside))
    a_in, a_out = inside / scale, outside / scale
    ones_in, ones_out = np.ones((len(a_in), 1)), np.ones((len(a_out), 1))
    a_ub = np.vstack([
        np.hstack([a_in, -a_in, ones_in]),
        np.hstack([-a_out, a_out, -ones_out]),
    ])
    b_ub = -np.ones(len(a_ub))
    cost = np.concatenate([np.ones(2 * d), [0.0]])
    bounds = [(0, None)] * (2 * d) + [(None, None)]
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    n = res.x[:d] - res.x[d : 2 * d]
    g = res.x[-1]
    norm = np.linalg.norm(n)
    if norm == 0:
        return None
    return n / (norm * scale), g / norm


def _gates(chain, pieces, cap_margin=0.05, tol=1e-9):
    samples = [chain.sub_chain(i, j).sample_points()[0] for i, j in pieces]
    scale = chain.scale
    K = chain.K
    gates = []
    for l, (i, j) in enumerate(pieces):
        own = samples[l]
        extent = float(np.max(np.ptp(own, axis=0)))
        normals, offsets = [], []
        if i > 0:
            hp = chain.folds[i - 1][0]
            normals.append(-hp.normal)
            offsets.append(-hp.offset)
        else:
            din = chain.folds[0][1].w if K > 1 else chain.segments[0].basis[:, 0]
            normals.append(-din)
            offsets.append(float(np.min(own @ din)) - cap_margin * extent)
        if j < K:
            hp = chain.folds[j - 1][0]
            normals.append(hp.normal.copy())
            offsets.append(hp.offset)
        else:
            dout = chain.folds[-1][1].v if K > 1 else chain.segments[-1].basis[:, 0]
            normals.append(dout)
            offsets.append(-float(np.max(own @ dout)) - cap_margin * extent)
        for p in range(len(pieces)):
            if p == l:
                continue
            other = samples[p]
            viol = np.max(other @ np.array(normals).T + np.array(offsets), axis=1)
            intruders = other[viol < -tol * scale]
            if not len(intruders):
                continue
            sep = _separate(own, intruders)
            if sep is None:
                raise GatingInfeasible(
                    f"piece {l} (segments {i}..{j - 1}) cannot be separated from piece {p} "
                    "by a hyperplane",
                    pair=(l, p),
                )
            normals.append(sep[0])
            offsets.append(sep[1])
        gates.append((np.array(normals), np.array(offsets)))
    return gates


def _complex(chain, pieces, gates):
    subs = [chain.sub_chain(i, j) for i, j in pieces]
    junctions = [chain.folds[j - 1] for _, j in pieces[:-1]]
    info = {
        "pieces": [[int(i), int(j)] for i, j in pieces],
        "curvature": [total_curvature(s) for s in subs],
        "one_sided_curvature": [one_sided_curvature(s, middle_segment(s)) for s in subs],
        "junction_angles": [float(g.angle) for _, g in junctions],
        "total_curvature": chain.total_curvature,
        "J": [int(len(o)) for _, o in gates],
    }
    return ChainComplex(subs, gates, None, junctions, info)


def split_into_monotonic(chain, max_one_sided_curvature=np.pi, n_pieces=None,
                         max_total_curvature=None):
    """Cut a chain at folds into monotonic pieces and gate each piece.

    Without ``n_pieces`` the cut is greedy: every piece is extended while it stays
    monotonic and within the curvature caps.  With ``n_pieces`` all contiguous
    partitions into that many pieces are tried, most balanced (smallest largest
    piece curvature) first, and the first admissible, gateable one is returned.

    Each gating polytope holds the piece's two boundary hyperplanes (cut folds, or
    end caps at the chain ends) plus LP-fitted slabs against any other piece whose
    samples would otherwise fall inside it.  The curvature of a cut fold belongs to
    no piece; it is listed under ``info["junction_angles"]``.

    Raises
    ------
    GatingInfeasible
        When no candidate split can be gated.
    """
    K = chain.K
    cap = float(max_one_sided_curvature)
    if n_pieces is None:
        pieces = []
        i = 0
        while i < K:
            j = i + 1
            while j < K and _piece_ok(chain, i, j + 1, cap, max_total_curvature):
                j += 1
            pieces.append((i, j))
            i = j
        return _complex(chain, pieces, _gates(chain, pieces))

    n = int(n_pieces)
    if not 1 <= n <= K:
        raise ValidationError(f"cannot split {K} segments into {n} pieces")
    angles = np.abs(chain.angles)
    candidates = []
    for cuts in itertools.combinations(range(1, K), n - 1):
        edges = (0,) + cuts + (K,)
        pieces = list(zip(edges[:-1], edges[1:]))
        worst = max(float(angles[i : j - 1].sum()) for i, j in pieces)
        candidates.append((round(worst, 12), cuts, pieces))
    candidates.sort(key=lambda c: (c[0], c[1]))
    last_error = None
    for _, _, pieces in candidates:
        if not all(_piece_ok(chain, i, j, cap, max_total_curvature) for i, j in pieces):
            continue
        try:
            gates = _gates(chain, pieces)
        except GatingInfeasible as exc:
            last_error = exc
            continue
        return _complex(chain, pieces, gates)
    if last_error is not None:
        raise last_error
    raise GatingInfeasible(f"no split into {n} admissible monotonic pieces")
