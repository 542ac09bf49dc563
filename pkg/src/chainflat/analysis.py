"""Perturbation error of flattening networks and a network-free reference embedding.

The reference (:func:`unfolding_oracle`) develops a chain into its start segment's
flat by rotating segments about their folds, the way one unrolls a folded cardboard strip.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import orthogonal_procrustes

from .exceptions import BoundViolated, CTooSmall, PointOffChain, SameRegionViolated
from .geometry import ChainComplex, one_sided_curvature, resolve_start
from .network import activation_pattern, evaluate_batch, segment_operator

ON_CHAIN_TOL = 1e-8
SIGMA_SLACK = 1e-9


def rigid_align(source, target):
    """Orthogonal ``R`` (reflections allowed) and ``t`` minimizing
    ``sum ||R s_i + t - t_i||^2``."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    r, _ = orthogonal_procrustes(source - mu_s, target - mu_t)
    rot = r.T
    return rot, mu_t - rot @ mu_s


def _plane_rotation(src, dst):
    """Rotation of R^d taking unit ``src`` to unit ``dst`` within their common plane."""
    d = src.shape[0]
    cos = float(np.clip(src @ dst, -1.0, 1.0))
    perp = dst - cos * src
    sin = float(np.linalg.norm(perp))
    if sin < 1e-15:
        return np.eye(d)
    e2 = perp / sin
    p = np.outer(src, src) + np.outer(e2, e2)
    return np.eye(d) + (cos - 1.0) * p + sin * (np.outer(e2, src) - np.outer(src, e2))


def _development_maps(chain, start):
    """Affine maps ``y -> R y + c`` sending each segment's flat into the start flat."""
    d = chain.d
    maps = {start: (np.eye(d), np.zeros(d))}
    for k in range(start + 1, chain.K):
        g = chain.folds[k - 1][1]
        rot = _plane_rotation(g.v, g.w)
        local = (rot, g.boundary_point - rot @ g.boundary_point)
        maps[k] = _compose(maps[k - 1], local)
    for k in range(start - 1, -1, -1):
        g = chain.folds[k][1]
        rot = _plane_rotation(g.w, g.v)
        local = (rot, g.boundary_point - rot @ g.boundary_point)
        maps[k] = _compose(maps[k + 1], local)
    return maps


def _compose(outer, inner):
    r1, c1 = outer
    r2, c2 = inner
    return r1 @ r2, r1 @ c2 + c1


def unfolding_oracle(chain, x, start_segment=0, tol=ON_CHAIN_TOL, offset="chain"):
    """Intrinsic coordinates of on-chain points, computed without any network.

    Each point is rotated segment by segment about the folds into the start
    segment's flat and expressed in that segment's basis, ``X_s^T y + t0``.

    Parameters
    ----------
    offset : "chain", None or array
        ``t0``.  ``"chain"`` uses ``-min X_s^T v`` over the chain's box vertices, the
        origin a network from :func:`build_monotonic` (zero margin) also uses, so
        both return the same numbers.  ``None`` means zero.

    Raises
    ------
    PointOffChain
        A point is farther than ``tol * scale`` from the chain.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    s = resolve_start(chain, start_segment)
    foot, dist, seg = chain.project(xs)
    bad = dist > tol * chain.scale
    if np.any(bad):
        raise PointOffChain(
            f"{int(bad.sum())} point(s) off the chain (max distance {dist.max():.3e})"
        )
    maps = _development_maps(chain, s)
    basis = chain.segments[s].basis
    if isinstance(offset, str) and offset == "chain":
        t0 = -np.min(chain.vertices() @ basis, axis=0)
    elif offset is None:
        t0 = np.zeros(chain.m)
    else:
        t0 = np.asarray(offset, dtype=float)
    out = np.empty((len(xs), chain.m))
    for k in np.unique(seg):
        rot, c = maps[int(k)]
        sel = seg == k
        out[sel] = (xs[sel] @ rot.T + c) @ basis + t0
    return out[0] if single else out


def perturbation_error(net, chain, p0, delta, chain_index=None, tol=ON_CHAIN_TOL):
    """Output change caused by moving an on-chain point ``p0`` by ``delta``.

    Returns a dict with ``E``, ``amplification`` (``|E| / |delta|``, 0 for zero
    ``delta``), the segment of ``p0`` and ``operator_residual``, the gap between
    ``E`` and the segment operator applied to ``delta``.
    """
    p0 = np.asarray(p0, dtype=float)
    delta = np.asarray(delta, dtype=float)
    _, dist, seg = chain.project(p0[None])
    if dist[0] > tol * chain.scale:
        raise PointOffChain(f"base point is {dist[0]:.3e} away from the chain")
    k = int(seg[0])
    before = activation_pattern(net, p0)
    after = activation_pattern(net, p0 + delta)
    if any(np.any(a != b) for a, b in zip(before, after)):
        raise SameRegionViolated("p0 and p0 + delta lie in different linear regions")
    out = evaluate_batch(net, np.vstack([p0, p0 + delta]))
    e = out[1] - out[0]
    nd = float(np.linalg.norm(delta))
    amp = float(np.linalg.norm(e) / nd) if nd > 0 else 0.0
    resid = None
    try:
        op, _ = segment_operator(net, k, chain=chain_index)
        resid = float(np.max(np.abs(op @ delta - e)))
    except Exception:
        pass
    return {"E": e, "amplification": amp, "segment": k, "operator_residual": resid}


def exp_bound(total, c=1.0):
    """The exponential cap ``e^{c T}``."""
    return float(np.exp(c * total))


def required_c(chain, start_segment=0):
    """Smallest admissible ``c``: the max over folds of ``1 / (a.v)`` with ``a`` and
    ``v`` oriented along the arm that absorbs the fold."""
    s = resolve_start(chain, start_segment)
    vals = []
    for i, (hp, g) in enumerate(chain.folds):
        inc = hp.normal @ g.v if i >= s else hp.normal @ g.w
        vals.append(1.0 / inc)
    return float(max(vals, default=1.0))


def error_bound(chain, c=None, start_segment=0):
    """Recursion bound ``prod (1 + c theta_j)`` per segment and the cap ``e^{c T_eff}``.

    ``T_eff`` is the larger curvature met walking from the start segment to either
    end.  Passing a ``c`` below :func:`required_c` records (and warns) ``CTooSmall``.
    """
    s = resolve_start(chain, start_segment)
    c_req = required_c(chain, s)
    notes = []
    if c is None:
        c = c_req
    elif c < c_req * (1 - 1e-12):
        notes.append(f"CTooSmall: c={c:.6g} below required {c_req:.6g}")
        warnings.warn(notes[-1], CTooSmall, stacklevel=2)
    theta = np.abs(chain.angles)
    per = np.ones(chain.K)
    for k in range(s + 1, chain.K):
        per[k] = per[k - 1] * (1 + c * theta[k - 1])
    for k in range(s - 1, -1, -1):
        per[k] = per[k + 1] * (1 + c * theta[k])
    t_eff = one_sided_curvature(chain, s)
    return {
        "start": s,
        "c": float(c),
        "c_required": c_req,
        "per_segment": per.tolist(),
        "T_eff": t_eff,
        "T": float(theta.sum()),
        "exp_bound": exp_bound(t_eff, c),
        "warnings": notes,
    }


@dataclass
class ErrorReport:
    """Per-point, per-segment and global error figures."""

    chain_index: np.ndarray
    segment: np.ndarray
    delta_norm: np.ndarray
    error_norm: np.ndarray
    amplification: np.ndarray
    err_abs: np.ndarray
    per_segment: list = field(default_factory=list)
    global_: dict = field(default_factory=dict)

    def sigma_of(self, l, k):
        for row in self.per_segment:
            if row["chain"] == l and row["segment"] == k:
                return row["sigma"], row["bound"]
        return float("nan"), float("nan")

    def rows(self):
        """CSV rows: point_index, segment, err_abs, err_rel, sigma_k, bound_k, chain."""
        lookup = {(r["chain"], r["segment"]): r for r in self.per_segment}
        out = []
        for i in range(len(self.segment)):
            r = lookup.get((int(self.chain_index[i]), int(self.segment[i])), {})
            out.append([
                i,
                int(self.segment[i]),
                float(self.err_abs[i]),
                float(self.amplification[i]),
                r.get("sigma", float("nan")),
                r.get("bound", float("nan")),
                int(self.chain_index[i]),
            ])
        return out

    CSV_HEADER = ["point_index", "segment", "err_abs", "err_rel", "sigma_k", "bound_k", "chain"]


def _nearest(cplx_or_chain, xs):
    if isinstance(cplx_or_chain, ChainComplex):
        best = None
        for l, ch in enumerate(cplx_or_chain.chains):
            f, dist, k = ch.project(xs)
            if best is None:
                best = [f, dist, k, np.zeros(len(xs), dtype=int)]
                continue
            better = dist < best[1] - 1e-12 * ch.scale
            best[0][better] = f[better]
            best[1] = np.where(better, dist, best[1])
            best[2] = np.where(better, k, best[2])
            best[3] = np.where(better, l, best[3])
        return best
    f, dist, k = cplx_or_chain.project(xs)
    return f, dist, k, np.zeros(len(xs), dtype=int)


def measure_errors(net, chain, points, feet=None, truth=None, c=None, start_segment=None,
                   check_bound=True):
    """Measure relative and absolute embedding errors of off-chain samples.

    Parameters
    ----------
    net : FlatteningNetwork
    chain : MonotonicChain or ChainComplex
    points : (n, d) array
        Samples, typically the true manifold near the fitted chain.
    feet : (n, d) array, optional
        Foot points on the chain; by default the nearest chain point.
    truth : (n, m) array, optional
        True intrinsic coordinates.  The absolute error is measured after a rigid
        alignment of the output to them and normalized by the largest ``|delta|``.
    c : float, optional
        Constant for the recursion bound; defaults to each chain's ``required_c``.
    start_segment : int or "middle", optional
        Start used when building; read from the network metadata when omitted.
    check_bound : bool
        Raise ``BoundViolated`` if a measured ``sigma_k`` exceeds its bound.

    Returns
    -------
    ErrorReport
    """
    xs = np.atleast_2d(np.asarray(points, dtype=float))
    if feet is None:
        feet, _, seg, lidx = _nearest(chain, xs)
    else:
        feet = np.atleast_2d(np.asarray(feet, dtype=float))
        _, _, seg, lidx = _nearest(chain, feet)
    out_x = evaluate_batch(net, xs)
    out_f = evaluate_batch(net, feet)
    err = np.linalg.norm(out_x - out_f, axis=1)
    dn = np.linalg.norm(xs - feet, axis=1)
    scale = chain.chains[0].scale if isinstance(chain, ChainComplex) else chain.scale
    tiny = dn <= 1e-15 * scale
    amp = np.where(tiny, 0.0, err / np.where(tiny, 1.0, dn))

    err_abs = np.full(len(xs), np.nan)
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        rot, t = rigid_align(out_x, truth)
        resid = np.linalg.norm(out_x @ rot.T + t - truth, axis=1)
        norm = float(dn.max()) if dn.max() > 0 else 1.0
        err_abs = resid / norm

    chains = chain.chains if isinstance(chain, ChainComplex) else (chain,)
    meta = net.metadata
    per_segment, bounds = [], []
    for l, ch in enumerate(chains):
        idx = l if isinstance(chain, ChainComplex) else None
        if start_segment is not None:
            start = start_segment
        elif idx is not None and "chains" in meta:
            start = meta["chains"][l]["start"]
        else:
            start = meta.get("start", 0)
        eb = error_bound(ch, c=c, start_segment=start)
        bounds.append(eb)
        for k in range(ch.K):
            try:
                _, sigma = segment_operator(net, k, chain=idx)
            except Exception:
                sigma = float("nan")
            bound = eb["per_segment"][k]
            if check_bound and np.isfinite(sigma) and sigma > bound + SIGMA_SLACK:
                raise BoundViolated(f"chain {l} segment {k}: sigma {sigma:.6g} > bound {bound:.6g}")
            sel = (lidx == l) & (seg == k)
            per_segment.append({
                "chain": l,
                "segment": k,
                "sigma": sigma,
                "bound": bound,
                "n_points": int(sel.sum()),
                "max_amplification": float(amp[sel].max()) if sel.any() else 0.0,
            })
    off = ~tiny
    glob = {
        "n_points": int(len(xs)),
        "max_rel_err": float(amp.max()) if len(amp) else 0.0,
        "mean_rel_err": float(amp[off].mean()) if off.any() else 0.0,
        "max_delta": float(dn.max()) if len(dn) else 0.0,
        "max_abs_err": float(np.nanmax(err_abs)) if truth is not None else None,
        "mean_abs_err": float(np.nanmean(err_abs)) if truth is not None else None,
        "bounds": [
            {k: b[k] for k in ("start", "c", "c_required", "T_eff", "T", "exp_bound", "warnings")}
            for b in bounds
        ],
    }
    return ErrorReport(lidx, seg, dn, err, amp, err_abs, per_segment, glob)
