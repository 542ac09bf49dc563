"""Closed-form construction of flattening networks.

``build_monotonic`` is the core: m base units project onto the start segment and every
further segment costs exactly one hidden unit whose hyperplane is the fold between it
and its predecessor.  The other builders compose it.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import (
    DimensionMismatch,
    FoldHyperplaneDegenerate,
    GatingMarginTooSmall,
    IntersectionDeficient,
    InvalidDims,
    NoAffineIntersection,
    NotMonotonic,
    ParameterConstraintViolated,
    StitchingMissing,
    ValidationError,
)
from .geometry import (
    AffineSegment,
    Hyperplane,
    MonotonicChain,
    intersection_geometry,
    resolve_start,
    validate_monotonic,
)
from .analysis import rigid_align
from .network import FlatteningNetwork, Layer, evaluate_batch

MIN_INCIDENCE = 1e-6
MAX_GATING_CONSTANT = 1e12


class BuilderState:
    """Mutable accumulator for the hidden layer of a monotonic-chain network.

    Holds the first-layer rows ``A``/``a0``, the second-layer columns ``B``, the
    per-segment pull-back bases and the set of units active on each segment.
    """

    def __init__(self, chain, start, margin=0.0):
        self.chain = chain
        self.start = start
        seg = chain.segments[start]
        x = seg.basis
        verts = chain.vertices()
        a0 = -np.min(verts @ x, axis=0) + margin
        self.rows = [r for r in x.T]
        self.biases = list(a0)
        self.cols = [c for c in np.eye(chain.m)]
        self.pullback = {start: x.copy()}
        self.units = {start: list(range(chain.m))}
        self.operator = {start: x.T.copy()}

    @property
    def kappa(self):
        return len(self.rows)

    @property
    def A(self):
        return np.array(self.rows)

    @property
    def a0(self):
        return np.array(self.biases)

    @property
    def B(self):
        return np.array(self.cols).T

    def absorb(self, src, dst, a, a0, w, v, ys):
        """Append the unit that extends the embedding from segment ``src`` to ``dst``.

        ``a``/``a0`` define the fold hyperplane oriented towards ``dst``; ``w``
        continues ``src`` across the fold and ``v`` leads into ``dst``.
        """
        incidence = float(a @ v)
        if incidence < MIN_INCIDENCE:
            raise FoldHyperplaneDegenerate(
                f"fold hyperplane between segments {src} and {dst} is nearly parallel "
                f"to the incoming segment (a.v = {incidence:.3e})"
            )
        op = self.operator[src]
        b = op @ (w - v) / incidence
        idx = self.kappa
        self.rows.append(np.asarray(a, dtype=float).copy())
        self.biases.append(float(a0))
        self.cols.append(b)
        self.units[dst] = self.units[src] + [idx]
        self.operator[dst] = op + np.outer(b, a)
        frame_src = np.column_stack([w, ys]) if ys.size else w[:, None]
        frame_dst = np.column_stack([v, ys]) if ys.size else v[:, None]
        rot = self.pullback[src].T @ frame_src
        self.pullback[dst] = frame_dst @ rot.T

    def network(self, metadata):
        layers = (
            Layer(self.A, self.a0, True),
            Layer(self.B, np.zeros(self.chain.m), False),
        )
        return FlatteningNetwork(layers, metadata)


def build_monotonic(chain, start_segment=0, margin=0.0, check=True):
    """Two-layer network ``x -> B [A x + a0]_+`` mapping a monotonic chain isometrically
    onto R^m.

    Parameters
    ----------
    chain : MonotonicChain
    start_segment : int or "middle"
        Segment whose basis seeds the embedding.  ``"middle"`` picks the segment with
        the smallest one-sided curvature and grows two arms outward from it.
    margin : float
        Extra bias added to the base units beyond the minimum keeping them
        non-negative on the chain; only shifts the output by a constant.
    check : bool
        Run :func:`validate_monotonic` first and raise ``NotMonotonic`` on failure.

    Returns
    -------
    FlatteningNetwork
        ``K + m - 1`` hidden units.  On the start segment the output is
        ``X^T x + a0[:m]``; ``metadata["output_offset"]`` records ``a0[:m]``.
    """
    s = resolve_start(chain, start_segment)
    if check:
        report = validate_monotonic(chain)
        if not report.ok:
            worst = report.summary()["worst_signed_distance"]
            raise NotMonotonic(
                f"chain fails monotonic separation at {len(report.violations)} samples "
                f"(worst signed distance {worst:.3e})",
                report,
            )
    state = BuilderState(chain, s, margin)
    for k in range(s + 1, chain.K):
        hp, g = chain.folds[k - 1]
        state.absorb(k - 1, k, hp.normal, hp.offset, g.w, g.v, g.intersection_basis)
    for k in range(s - 1, -1, -1):
        hp, g = chain.folds[k]
        state.absorb(k + 1, k, -hp.normal, -hp.offset, -g.v, -g.w, g.intersection_basis)
    meta = {
        "kind": "monotonic",
        "d": chain.d,
        "m": chain.m,
        "K": chain.K,
        "start": s,
        "segment_layer": 0,
        "segment_units": [state.units[k] for k in range(chain.K)],
        "output_offset": state.a0[: chain.m].tolist(),
        "pullback_bases": [state.pullback[k].tolist() for k in range(chain.K)],
    }
    return state.network(meta)


def worstcase_extreme_params(N, eps):
    """``q`` and ``r`` at the edge of the feasible set: ``q1/q2 = eps/N``, ``r1/r2 = -eps/N``."""
    return (eps / N, 1.0), (-eps / N, 1.0)


def build_worstcase(N, eps, q, r):
    """Three-unit network flattening the hairpin (0,0)-(N,0)-(N,eps)-(0,eps).

    The third unit's hyperplane is forced to be nearly parallel to the third
    segment, which is what makes the error off that segment large.
    """
    q1, q2 = map(float, q)
    r1, r2 = map(float, r)
    problems = []
    if not N > 0:
        problems.append("N > 0")
    if not eps > 0:
        problems.append("eps > 0")
    if not (q1 > 0 and q2 > 0):
        problems.append("q1, q2 > 0")
    elif not q1 / q2 <= eps / N * (1 + 1e-12):
        problems.append("q1/q2 <= eps/N")
    if not (r1 < 0 and r2 > 0):
        problems.append("r1 < 0 < r2")
    elif not r1 / r2 >= -eps / N * (1 + 1e-12):
        problems.append("r1/r2 >= -eps/N")
    if problems:
        raise ParameterConstraintViolated("violated: " + ", ".join(problems))
    A = np.array([[1.0, 0.0], [q1, q2], [r1, r2]])
    a0 = np.array([0.0, -q1 * N, -r1 * N - r2 * eps])
    B = np.array([[1.0, 1.0 / q2, -(1.0 / r1) * (2.0 + q1 / q2)]])
    meta = {
        "kind": "worstcase",
        "N": N,
        "eps": eps,
        "segment_layer": 0,
        "segment_units": [[0], [0, 1], [0, 1, 2]],
    }
    return FlatteningNetwork((Layer(A, a0, True), Layer(B, [0.0], False)), meta)


def worstcase_chain(N, eps, q=None, r=None):
    """The three-segment hairpin as a chain, with the network's hyperplanes as folds."""
    if q is None or r is None:
        q, r = worstcase_extreme_params(N, eps)
    segs = [
        AffineSegment([0.0, 0.0], [[1.0], [0.0]], [0.0], [N]),
        AffineSegment([N, 0.0], [[0.0], [1.0]], [0.0], [eps]),
        AffineSegment([N, eps], [[-1.0], [0.0]], [0.0], [N]),
    ]
    h2 = Hyperplane.through(q, [N, 0.0])
    h3 = Hyperplane.through(r, [N, eps])
    return MonotonicChain.from_segments(segs, [h2, h3])


# --- combinations of chains -------------------------------------------------


def _canonical(net, xs):
    return evaluate_batch(net, xs) - np.asarray(net.metadata["output_offset"])


def _junction(cplx, l):
    if cplx.junctions is not None:
        return cplx.junctions[l][1]
    try:
        return intersection_geometry(cplx.chains[l].segments[-1], cplx.chains[l + 1].segments[0])
    except (IntersectionDeficient, NoAffineIntersection) as exc:
        raise StitchingMissing(
            f"no stitching given and chains {l}, {l + 1} do not meet in a fold: {exc}"
        ) from exc


def _junction_samples(geom, segs, per_axis=5):
    ys = geom.intersection_basis
    if ys.shape[1] == 0:
        return geom.boundary_point[None, :]
    verts = np.vstack([s.vertices() for s in segs])
    z = (verts - geom.boundary_point) @ ys
    lo, hi = z.min(axis=0), z.max(axis=0)
    axes = [np.linspace(a, b, per_axis) if i < 3 else np.array([0.5 * (a + b)])
            for i, (a, b) in enumerate(zip(lo, hi))]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ys.shape[1])
    return geom.flat_points(grid)


def compute_stitching(cplx, nets):
    """Rotations/translations putting every chain's canonical embedding into chain 0's
    frame, continuing across each junction.

    Alignment is fitted on points of the junction flat.  Junction points only pin the
    rotation down up to a reflection across the junction, so the reflection is chosen
    to put the two chains on opposite sides of it.
    """
    m = cplx.m
    out = [(np.eye(m), np.zeros(m))]
    for l in range(cplx.L - 1):
        geom = _junction(cplx, l)
        left, right = cplx.chains[l], cplx.chains[l + 1]
        pts = _junction_samples(geom, [left.segments[-1], right.segments[0]])
        rot_l, t_l = out[l]
        target = _canonical(nets[l], pts) @ rot_l.T + t_l
        source = _canonical(nets[l + 1], pts)
        rot, t = rigid_align(source, target)
        mu_t = target.mean(axis=0)
        if len(pts) > 1:
            _, _, vt = np.linalg.svd(target - mu_t)
            normal = vt[-1]
        else:
            normal = np.ones(1)
        inside_l = _canonical(nets[l], left.segments[-1].center[None])[0] @ rot_l.T + t_l
        inside_r = _canonical(nets[l + 1], right.segments[0].center[None])[0] @ rot.T + t
        if (normal @ (inside_l - mu_t)) * (normal @ (inside_r - mu_t)) > 0:
            rot = (np.eye(m) - 2.0 * np.outer(normal, normal)) @ rot
            t = mu_t - rot @ source.mean(axis=0)
        out.append((rot, t))
    return out


def _maxpool_layers(m, L, bias):
    """RELU layers computing the coordinatewise max of L non-negative m-vectors.

    Pairs are merged with max(x, y) = (x + y + [x - y]_+ + [y - x]_+) / 2, giving
    ceil(log2 L) RELU layers and a final linear read-out carrying ``bias``.
    """
    layers = []
    comb = np.eye(m * L)
    groups = L
    eye = np.eye(m)
    while groups > 1:
        blocks = []
        read = []
        for g in range(0, groups - 1, 2):
            sel_x = np.zeros((m, m * groups))
            sel_y = np.zeros((m, m * groups))
            sel_x[:, g * m : (g + 1) * m] = eye
            sel_y[:, (g + 1) * m : (g + 2) * m] = eye
            blocks += [sel_x, sel_y, sel_x - sel_y, sel_y - sel_x]
            read.append(0.5 * np.hstack([eye, eye, eye, eye]))
        if groups % 2:
            sel = np.zeros((m, m * groups))
            sel[:, (groups - 1) * m :] = eye
            blocks.append(sel)
            read.append(eye)
        t = np.vstack(blocks)
        layers.append(Layer(t @ comb, np.zeros(t.shape[0]), True))
        rows = sum(r.shape[0] for r in read)
        cols = sum(r.shape[1] for r in read)
        new_comb = np.zeros((rows, cols))
        i = j = 0
        for r in read:
            new_comb[i : i + r.shape[0], j : j + r.shape[1]] = r
            i += r.shape[0]
            j += r.shape[1]
        comb = new_comb
        groups = (groups + 1) // 2
    layers.append(Layer(comb, bias, False))
    return layers


def build_combined(cplx, overlap_mode="sum", start_segment="middle", margin=1.0,
                   boundary_tol=1e-9, base_margin=0.1, gating_band=1e-6):
    """Gate, stitch and merge one flattening block per chain of a complex.

    Each block is ``[R_l B_l, -n 1] [A_l; N_l] x`` plus biases; off its own chain the
    gating rows drive every output coordinate of the block to at most -1, so the
    outer RELU zeroes it.  Blocks are merged by summation (``"sum"``) or by a
    RELU max-pool cascade (``"maxpool"``), which stays correct where regions overlap.

    ``margin`` lifts all in-chain block outputs to at least that value before the
    outer RELU and is removed again by the output bias.  ``base_margin`` (relative to
    the chain scale) pads the base units of each block so that points slightly off
    the chain ends are not clipped.  Off-chain samples whose gate violation is
    within ``boundary_tol * scale`` lie on a shared junction (or in an overlap) and
    are excluded from the gating-margin estimate.

    The gating constant is sized for the smaller of that margin and
    ``gating_band * scale``: a block is then fully suppressed at every point more
    than the band width outside its polytope, not just at the samples.
    """
    if overlap_mode not in ("sum", "maxpool"):
        raise ValidationError(f"overlap_mode must be 'sum' or 'maxpool', got {overlap_mode!r}")
    m, d, L = cplx.m, cplx.d, cplx.L
    nets = [
        build_monotonic(c, start_segment, margin=base_margin * c.scale) for c in cplx.chains
    ]
    stitching = cplx.stitching if cplx.stitching is not None else compute_stitching(cplx, nets)

    samples = [c.sample_points()[0] for c in cplx.chains]
    all_samples = np.vstack(samples)
    scale = max(c.scale for c in cplx.chains)

    stitched = [
        _canonical(net, pts) @ rot.T + t for net, pts, (rot, t) in zip(nets, samples, stitching)
    ]
    shift = -np.min(np.vstack(stitched), axis=0) + margin

    a_rows, a_bias, blocks, b_bias, chain_meta = [], [], [], [], []
    offset = 0
    for l, (net, (rot, t)) in enumerate(zip(nets, stitching)):
        normals, offsets = cplx.gates[l]
        A, a0 = net.layers[0].weights, net.layers[0].bias
        B = net.layers[1].weights
        tau = np.asarray(net.metadata["output_offset"])
        b0 = t + shift - rot @ tau
        pre = evaluate_batch(net, all_samples) @ rot.T - tau @ rot.T + t + shift
        zmax = float(np.max(np.abs(pre)))
        others = np.vstack([s for j, s in enumerate(samples) if j != l]) if L > 1 else np.zeros((0, d))
        n_const = 0.0
        n_overlap = 0
        gmin = None
        if normals.size and len(others):
            viol = np.max(others @ normals.T + offsets, axis=1)
            gated = viol > boundary_tol * scale
            n_overlap = int(np.sum(~gated))
            gmin = gating_band * scale
            if np.any(gated):
                gmin = min(gmin, float(np.min(viol[gated])))
            if gmin > 0:
                n_const = (zmax + 1.0) / gmin
                if not np.isfinite(n_const) or n_const > MAX_GATING_CONSTANT:
                    raise GatingMarginTooSmall(
                        f"chain {l}: gating margin {gmin:.3e} needs n = {n_const:.3e}"
                    )
        J = normals.shape[0] if normals.size else 0
        kappa = A.shape[0]
        a_rows.append(A)
        a_bias.append(a0)
        if J:
            a_rows.append(normals)
            a_bias.append(offsets)
        blocks.append(np.hstack([rot @ B, -n_const * np.ones((m, J))]))
        b_bias.append(b0)
        units = [[offset + u for u in us] for us in net.metadata["segment_units"]]
        chain_meta.append({
            "start": net.metadata["start"],
            "K": cplx.chains[l].K,
            "segment_units": units,
            "output_rows": list(range(l * m, (l + 1) * m)),
            "gate_units": list(range(offset + kappa, offset + kappa + J)),
            "gating_constant": n_const,
            "gating_margin": gmin,
            "overlap_samples": n_overlap,
            "output_offset": tau.tolist(),
        })
        offset += kappa + J

    W1 = np.vstack(a_rows)
    W2 = np.zeros((m * L, offset))
    col = 0
    for l, blk in enumerate(blocks):
        W2[l * m : (l + 1) * m, col : col + blk.shape[1]] = blk
        col += blk.shape[1]
    layers = [Layer(W1, np.concatenate(a_bias), True), Layer(W2, np.concatenate(b_bias), True)]
    if overlap_mode == "sum":
        layers.append(Layer(np.hstack([np.eye(m)] * L), -shift, False))
    else:
        layers += _maxpool_layers(m, L, -shift)
    meta = {
        "kind": "combined",
        "mode": overlap_mode,
        "d": d,
        "m": m,
        "L": L,
        "segment_layer": 0,
        "chains": chain_meta,
        "stitching": [{"rotation": r.tolist(), "translation": t.tolist()} for r, t in stitching],
        "shift": shift.tolist(),
    }
    return FlatteningNetwork(tuple(layers), meta)


# --- hierarchical construction ----------------------------------------------


def _translate_chain(chain, shift):
    segs = [s.translated(shift) for s in chain.segments]
    hps = [Hyperplane(hp.normal, hp.offset - hp.normal @ shift) for hp in chain.hyperplanes]
    return MonotonicChain.from_segments(segs, hps)


def build_hierarchical(subspace_basis, inner_chain, origin=None, start_segment=0):
    """Project onto an m1-dimensional subspace first, then flatten a chain living there.

    ``inner_chain`` is expressed in the coordinates ``basis^T (x - origin)``.  The
    first layer's bias makes those coordinates non-negative over the chain so its
    RELU is inert there; the chain is shifted by the same amount before building.
    """
    basis = np.asarray(subspace_basis, dtype=float)
    if basis.ndim != 2:
        raise DimensionMismatch("subspace basis must be a d x m1 matrix")
    d, m1 = basis.shape
    if inner_chain.d != m1:
        raise DimensionMismatch(f"inner chain lives in R^{inner_chain.d}, subspace has dimension {m1}")
    if not inner_chain.m < m1 < d:
        raise DimensionMismatch(f"need m2 < m1 < d, got {inner_chain.m}, {m1}, {d}")
    if np.max(np.abs(basis.T @ basis - np.eye(m1))) > 1e-10:
        raise ValidationError("subspace basis must have orthonormal columns")
    origin = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)
    beta = -np.min(inner_chain.vertices(), axis=0)
    shifted = _translate_chain(inner_chain, beta)
    inner = build_monotonic(shifted, start_segment)
    first = Layer(basis.T, beta - basis.T @ origin, True)
    meta = dict(inner.metadata)
    meta.update({
        "kind": "hierarchical",
        "d": d,
        "m1": m1,
        "segment_layer": 1,
        "pullback_bases": [(basis @ np.asarray(x)).tolist() for x in inner.metadata["pullback_bases"]],
    })
    return FlatteningNetwork((first,) + inner.layers, meta)


def embed_chain(chain, basis, origin=None):
    """Lift a chain in R^m1 into R^d through ``x = origin + basis @ y``."""
    basis = np.asarray(basis, dtype=float)
    origin = np.zeros(basis.shape[0]) if origin is None else np.asarray(origin, dtype=float)
    segs = [
        AffineSegment(origin + basis @ s.anchor, basis @ s.basis, s.lower, s.upper)
        for s in chain.segments
    ]
    hps = []
    for hp in chain.hyperplanes:
        n = basis @ hp.normal
        hps.append(Hyperplane(n / np.linalg.norm(n), hp.offset - (basis @ hp.normal) @ origin))
    return MonotonicChain.from_segments(segs, hps)


def hierarchical_weight_counts(d, m1, m2, K):
    return {"hierarchical": d * m1 + m1 * (m2 + K - 1), "flat": d * (m2 + K - 1)}


# --- parameter counts --------------------------------------------------------


@dataclass(frozen=True)
class ParamCount:
    d: int
    m: int
    K: int
    dof_chain: int
    weights_network: int
    weights_reference: int
    dof_lower_bound: int
    ratio_network: Fraction
    ratio_reference: Fraction
    ratio_bound: Fraction
    asymptotic_bound: Fraction

    @property
    def weights_ratio(self):
        return self.ratio_reference

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, Fraction):
                out[k] = float(v)
                out[k + "_exact"] = f"{v.numerator}/{v.denominator}"
            else:
                out[k] = v
        out["N"] = self.dof_chain
        out["N_prime_network"] = self.weights_network
        out["N_prime_reference"] = self.weights_reference
        out["ratio_within_bound"] = self.ratio_reference <= self.ratio_bound
        out["network_ratio_within_asymptotic"] = self.ratio_network <= self.asymptotic_bound
        return out


def parameter_counts(d, m, K):
    """Degrees of freedom of a chain versus weights of its flattening network.

    Two weight counts are reported: ``(d+m+1)(K+m-1)`` for the network as built
    (first-layer weights and biases plus second-layer weights) and
    ``(K+m+1)(d+m+1)``, the larger figure used in the optimality ratio.
    """
    for name, val in (("d", d), ("m", m), ("K", K)):
        if int(val) != val:
            raise InvalidDims(f"{name} must be an integer")
    d, m, K = int(d), int(m), int(K)
    if m < 1 or K < 1 or d <= m + 2:
        raise InvalidDims(f"need m >= 1, K >= 1 and d > m + 2; got d={d}, m={m}, K={K}")
    dof = (2 * m * d - m * (m + 1)) // 2 + (K - 1) * (d - 2)
    w_net = (d + m + 1) * (K + m - 1)
    w_reference = (K + m + 1) * (d + m + 1)
    bound = (1 + Fraction(2, K + m - 1)) * (1 + Fraction(2 * m + 3, d - m - 2))
    return ParamCount(
        d=d, m=m, K=K,
        dof_chain=dof,
        weights_network=w_net,
        weights_reference=w_reference,
        dof_lower_bound=(K + m - 1) * (d - m - 2),
        ratio_network=Fraction(w_net, dof),
        ratio_reference=Fraction(w_reference, dof),
        ratio_bound=bound,
        asymptotic_bound=1 + Fraction(2 * m, d - m),
    )
