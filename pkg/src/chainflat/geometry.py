"""Piecewise-linear chains: segments, folds, fold hyperplanes and monotonicity.

A chain is an ordered list of bounded m-dimensional affine pieces of R^d in which
consecutive pieces meet in an (m-1)-dimensional flat (a *fold*).  Each fold carries
a hyperplane that must put every earlier segment on its non-positive side and every
later one on its non-negative side for the chain to be monotonic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DegenerateFold,
    DimensionMismatch,
    IntersectionDeficient,
    MalformedInput,
    NoAffineIntersection,
    ValidationError,
)

ORTHONORMAL_TOL = 1e-12
SHARED_DIRECTION_TOL = 1e-8
INTERSECTION_RESIDUAL_TOL = 1e-7
MONOTONIC_TOL = 1e-9


def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def orthonormal_complement(basis, within=None):
    """Orthonormal basis of the complement of ``basis`` inside span(``within``).

    ``within`` defaults to the whole ambient space.
    """
    d = basis.shape[0]
    if within is None:
        within = np.eye(d)
    proj = within - basis @ (basis.T @ within)
    u, s, _ = np.linalg.svd(proj, full_matrices=False)
    k = within.shape[1] - basis.shape[1]
    return u[:, :k]


def principal_angles(a, b):
    """Principal angles (radians, ascending) between the column spaces of two
    orthonormal matrices."""
    if a.shape[1] < b.shape[1]:
        a, b = b, a
    cos = np.linalg.svd(a.T @ b, compute_uv=False)
    sin = np.linalg.svd(b - a @ (a.T @ b), compute_uv=False)[::-1]
    # arctan2 keeps tiny angles accurate where arccos would not
    return np.arctan2(sin, cos)


@dataclass(frozen=True)
class AffineSegment:
    """Bounded piece ``{anchor + basis @ c : lower <= c <= upper}`` of an m-flat in R^d."""

    anchor: np.ndarray
    basis: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        anchor = _frozen(self.anchor, 1, "anchor")
        basis = _frozen(self.basis, 2, "basis")
        lower = _frozen(self.lower, 1, "lower")
        upper = _frozen(self.upper, 1, "upper")
        d, m = basis.shape
        if anchor.shape[0] != d:
            raise DimensionMismatch(f"anchor has length {anchor.shape[0]}, basis has {d} rows")
        if lower.shape != (m,) or upper.shape != (m,):
            raise DimensionMismatch("bounds must have one entry per basis column")
        if m < 1 or m > d:
            raise DimensionMismatch(f"need 1 <= m <= d, got m={m}, d={d}")
        if np.max(np.abs(basis.T @ basis - np.eye(m))) > ORTHONORMAL_TOL:
            raise ValidationError("segment basis columns are not orthonormal")
        if not np.all(lower < upper):
            raise ValidationError("segment bounds must satisfy lower < upper componentwise")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self):
        return self.basis.shape[0]

    @property
    def m(self):
        return self.basis.shape[1]

    @property
    def center(self):
        return self.to_ambient(0.5 * (self.lower + self.upper))

    @property
    def scale(self):
        return float(max(1.0, np.max(np.abs(self.vertices()))))

    def to_ambient(self, coords):
        coords = np.asarray(coords, dtype=float)
        return self.anchor + coords @ self.basis.T

    def local_coords(self, x):
        x = np.asarray(x, dtype=float)
        return (x - self.anchor) @ self.basis

    def vertices(self):
        corners = np.array(list(itertools.product(*zip(self.lower, self.upper))))
        return self.to_ambient(corners)

    def grid(self, per_axis=5):
        """Regular grid over the first min(m, 3) local axes; remaining axes at mid-range."""
        mid = 0.5 * (self.lower + self.upper)
        axes = []
        for i in range(self.m):
            if i < 3:
                axes.append(np.linspace(self.lower[i], self.upper[i], per_axis))
            else:
                axes.append(np.array([mid[i]]))
        coords = np.array(list(itertools.product(*axes)))
        return self.to_ambient(coords)

    def sample(self, rng, n):
        coords = rng.uniform(self.lower, self.upper, size=(n, self.m))
        return self.to_ambient(coords)

    def project(self, x):
        """Nearest point of the (box-clamped) segment to each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = np.clip(self.local_coords(x), self.lower, self.upper)
        foot = self.to_ambient(c)
        return foot, np.linalg.norm(x - foot, axis=1)

    def contains_direction_space(self, directions, tol=1e-9):
        resid = directions - self.basis @ (self.basis.T @ directions)
        return np.max(np.abs(resid), initial=0.0) <= tol

    def translated(self, shift):
        return AffineSegment(self.anchor + shift, self.basis, self.lower, self.upper)


@dataclass(frozen=True)
class Hyperplane:
    """``{x : normal . x + offset = 0}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = _frozen(self.normal, 1, "normal")
        if abs(np.linalg.norm(normal) - 1.0) > 1e-12:
            raise ValidationError("hyperplane normal must be a unit vector")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def through(cls, normal, point):
        normal = np.asarray(normal, dtype=float)
        normal = normal / np.linalg.norm(normal)
        return cls(normal, -float(normal @ np.asarray(point, dtype=float)))

    def signed_distance(self, x):
        return np.asarray(x, dtype=float) @ self.normal + self.offset

    def flipped(self):
        return Hyperplane(-self.normal, -self.offset)


@dataclass(frozen=True)
class FoldGeometry:
    """Geometry of the junction between two consecutive segments.

    ``w`` continues the earlier segment across the fold, ``v`` leads into the later
    one; both are unit, orthogonal to ``intersection_basis`` and oriented forward.
    """

    boundary_point: np.ndarray
    intersection_basis: np.ndarray
    w: np.ndarray
    v: np.ndarray
    angle: float

    def __post_init__(self):
        for name in ("boundary_point", "intersection_basis", "w", "v"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name=name))
        object.__setattr__(self, "angle", float(self.angle))

    def flat_points(self, coords):
        """Points ``boundary_point + intersection_basis @ z`` on the fold flat."""
        coords = np.asarray(coords, dtype=float).reshape(-1, self.intersection_basis.shape[1])
        return self.boundary_point + coords @ self.intersection_basis.T


def _chord_angle(v, w):
    return float(2.0 * np.arcsin(np.clip(np.linalg.norm(v - w) / 2.0, 0.0, 1.0)))


def intersection_geometry(prev, nxt, hyperplane=None):
    """Fold geometry (boundary point, shared directions, ``w``, ``v``, angle) of two
    consecutive segments.

    Parameters
    ----------
    prev, nxt : AffineSegment
        Earlier and later segment.
    hyperplane : Hyperplane, optional
        Only consulted when the two flats coincide; the fold is then taken to be the
        hyperplane's trace on the common flat and the angle is zero.

    Raises
    ------
    DimensionMismatch, IntersectionDeficient, NoAffineIntersection
    """
    if prev.d != nxt.d or prev.m != nxt.m:
        raise DimensionMismatch(f"segments have shapes {prev.basis.shape} and {nxt.basis.shape}")
    m = prev.m
    u, s, vt = np.linalg.svd(prev.basis.T @ nxt.basis)
    shared = int(np.sum(s > 1.0 - SHARED_DIRECTION_TOL))
    if shared == m and hyperplane is not None:
        return _coplanar_geometry(prev, nxt, hyperplane)
    if shared != m - 1:
        raise IntersectionDeficient(
            f"segments share a {shared}-dimensional direction space, expected {m - 1}"
        )
    ys = prev.basis @ u[:, : m - 1]
    w = prev.basis @ u[:, m - 1]
    v = nxt.basis @ vt[m - 1]
    if m > 1:
        w = w - ys @ (ys.T @ w)
        v = v - ys @ (ys.T @ v)
    w /= np.linalg.norm(w)
    v /= np.linalg.norm(v)

    system = np.hstack([prev.basis, -nxt.basis])
    sol, *_ = np.linalg.lstsq(system, nxt.anchor - prev.anchor, rcond=None)
    on_prev = prev.anchor + prev.basis @ sol[:m]
    on_next = nxt.anchor + nxt.basis @ sol[m:]
    scale = max(prev.scale, nxt.scale)
    if np.linalg.norm(on_prev - on_next) > INTERSECTION_RESIDUAL_TOL * scale:
        raise NoAffineIntersection(
            f"affine hulls miss each other by {np.linalg.norm(on_prev - on_next):.3e}"
        )
    pbar = 0.5 * (on_prev + on_next)
    mid = 0.5 * (prev.center + nxt.center)
    pbar = pbar + ys @ (ys.T @ (mid - pbar))

    if w @ (prev.center - pbar) > 0:
        w = -w
    if v @ (nxt.center - pbar) < 0:
        v = -v
    return FoldGeometry(pbar, ys, w, v, _chord_angle(v, w))


def _coplanar_geometry(prev, nxt, hyperplane):
    g = prev.basis @ (prev.basis.T @ hyperplane.normal)
    gn = np.linalg.norm(g)
    if gn < 1e-8:
        raise IntersectionDeficient("hyperplane is parallel to the common flat of both segments")
    g = g / gn
    ys = orthonormal_complement(g[:, None], within=prev.basis)
    t = -(hyperplane.normal @ prev.anchor + hyperplane.offset) / (hyperplane.normal @ g)
    pbar = prev.anchor + t * g
    if prev.m > 1:
        mid = 0.5 * (prev.center + nxt.center)
        pbar = pbar + ys @ (ys.T @ (mid - pbar))
    return FoldGeometry(pbar, ys, g, g.copy(), 0.0)


def default_fold_hyperplane(fold):
    """Angle-bisector hyperplane of a fold: unit normal along ``v + w`` through the
    boundary point, so that ``h.v = h.w = cos(angle / 2)``."""
    if fold.angle >= np.pi - 1e-6:
        raise DegenerateFold(f"fold angle {fold.angle:.6f} is too close to pi for a bisector")
    n = fold.v + fold.w
    return Hyperplane.through(n, fold.boundary_point)


@dataclass(frozen=True)
class Violation:
    fold: int
    segment: int
    point: np.ndarray
    signed_distance: float


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    n_checked: int = 0

    @property
    def ok(self):
        return not self.violations

    def summary(self):
        worst = max((abs(v.signed_distance) for v in self.violations), default=0.0)
        return {
            "monotonic": self.ok,
            "n_violations": len(self.violations),
            "worst_signed_distance": worst,
            "n_checked": self.n_checked,
        }


@dataclass(frozen=True)
class MonotonicChain:
    """Ordered segments with one (hyperplane, geometry) pair per fold.

    Built with :meth:`from_segments`; the name reflects intent, monotonicity itself is
    checked by :func:`validate_monotonic`.
    """

    segments: tuple
    folds: tuple
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        folds = tuple(self.folds)
        if not segs:
            raise ValidationError("a chain needs at least one segment")
        if len(folds) != len(segs) - 1:
            raise ValidationError("a chain of K segments needs K-1 folds")
        d, m = segs[0].d, segs[0].m
        for s in segs:
            if s.d != d or s.m != m:
                raise DimensionMismatch("all segments must share ambient and intrinsic dimension")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "folds", folds)

    @classmethod
    def from_segments(cls, segments, hyperplanes=None, info=None):
        segments = tuple(segments)
        if hyperplanes is None:
            hyperplanes = [None] * (len(segments) - 1)
        if len(hyperplanes) != len(segments) - 1:
            raise ValidationError("need one hyperplane (or None) per fold")
        folds = []
        for k, hp in enumerate(hyperplanes):
            geom = intersection_geometry(segments[k], segments[k + 1], hyperplane=hp)
            if hp is None:
                hp = default_fold_hyperplane(geom)
            else:
                _check_fold_hyperplane(hp, geom, max(segments[k].scale, segments[k + 1].scale))
            folds.append((hp, geom))
        return cls(segments, tuple(folds), dict(info or {}))

    @property
    def d(self):
        return self.segments[0].d

    @property
    def m(self):
        return self.segments[0].m

    @property
    def K(self):
        return len(self.segments)

    @property
    def hyperplanes(self):
        return [hp for hp, _ in self.folds]

    @property
    def geometries(self):
        return [g for _, g in self.folds]

    @property
    def angles(self):
        return np.array([g.angle for _, g in self.folds])

    @property
    def total_curvature(self):
        return total_curvature(self)

    @property
    def scale(self):
        return max(s.scale for s in self.segments)

    def vertices(self):
        return np.vstack([s.vertices() for s in self.segments])

    def sample_points(self, per_axis=5):
        """Vertices plus a grid on every segment, with the owning segment index."""
        pts, idx = [], []
        for k, s in enumerate(self.segments):
            p = np.vstack([s.vertices(), s.grid(per_axis)])
            pts.append(p)
            idx.append(np.full(len(p), k))
        return np.vstack(pts), np.concatenate(idx)

    def sub_chain(self, start, stop):
        return MonotonicChain(self.segments[start:stop], self.folds[start : stop - 1])

    def project(self, x):
        """Foot point, distance and segment index of the nearest chain point.

        Ties go to the lower segment index.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        best_d = np.full(len(x), np.inf)
        best_k = np.zeros(len(x), dtype=int)
        best_f = np.zeros_like(x)
        for k, s in enumerate(self.segments):
            f, dist = s.project(x)
            better = dist < best_d - 1e-12 * self.scale
            best_d = np.where(better, dist, best_d)
            best_k = np.where(better, k, best_k)
            best_f[better] = f[better]
        return best_f, best_d, best_k

    def to_dict(self):
        return {
            "d": self.d,
            "m": self.m,
            "segments": [
                {
                    "anchor": s.anchor.tolist(),
                    "basis": s.basis.tolist(),
                    "bounds": {"lower": s.lower.tolist(), "upper": s.upper.tolist()},
                }
                for s in self.segments
            ],
            "folds": [{"normal": hp.normal.tolist(), "offset": hp.offset} for hp in self.hyperplanes],
            **({"info": self.info} if self.info else {}),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            d, m = int(data["d"]), int(data["m"])
            segs = [
                AffineSegment(
                    s["anchor"], s["basis"], s["bounds"]["lower"], s["bounds"]["upper"]
                )
                for s in data["segments"]
            ]
            folds = data.get("folds")
            hps = None
            if folds:
                hps = [Hyperplane(f["normal"], f["offset"]) for f in folds]
        except (KeyError, TypeError, IndexError) as exc:
            raise MalformedInput(f"malformed chain description: {exc!r}") from exc
        for s in segs:
            if s.d != d or s.m != m:
                raise MalformedInput("segment dimensions disagree with the declared d, m")
        return cls.from_segments(segs, hps, data.get("info"))


def _check_fold_hyperplane(hp, geom, scale):
    if abs(hp.signed_distance(geom.boundary_point)) > 1e-8 * scale:
        raise ValidationError("fold hyperplane does not contain the segments' intersection")
    if geom.intersection_basis.size and np.max(np.abs(hp.normal @ geom.intersection_basis)) > 1e-8:
        raise ValidationError("fold hyperplane is not orthogonal to the intersection flat")


def validate_monotonic(chain, samples_per_segment=None, tol=MONOTONIC_TOL):
    """Check every fold hyperplane against samples of every segment.

    Samples are the box vertices plus a grid of ``samples_per_segment`` points
    (default ``5**min(m, 3)``).  Segments up to the fold must sit on the
    non-positive side, later ones on the non-negative side, within ``tol * scale``.
    """
    m = chain.m
    if samples_per_segment is None:
        per_axis = 5
    else:
        per_axis = max(2, int(round(samples_per_segment ** (1.0 / min(m, 3)))))
    samples = [np.vstack([s.vertices(), s.grid(per_axis)]) for s in chain.segments]
    tol = tol * chain.scale
    report = ValidationReport()
    for i, hp in enumerate(chain.hyperplanes):
        for k, pts in enumerate(samples):
            sd = hp.signed_distance(pts)
            report.n_checked += len(pts)
            bad = sd > tol if k <= i else sd < -tol
            for j in np.flatnonzero(bad):
                report.violations.append(Violation(i, k, pts[j].copy(), float(sd[j])))
    return report


def total_curvature(chain):
    """Sum of absolute fold angles, in radians."""
    return float(np.sum(np.abs(chain.angles)))


def one_sided_curvature(chain, start):
    """Largest curvature met walking from segment ``start`` to either end."""
    a = np.abs(chain.angles)
    return float(max(a[:start].sum(), a[start:].sum()))


def middle_segment(chain):
    """Segment minimizing the one-sided curvature (ties go to the lower index)."""
    costs = [one_sided_curvature(chain, s) for s in range(chain.K)]
    return int(np.argmin(costs))


def resolve_start(chain, start):
    if start == "middle":
        return middle_segment(chain)
    try:
        s = int(start)
    except (TypeError, ValueError):
        raise ValidationError(f"start segment must be an index or 'middle', got {start!r}")
    if s < 0:
        s += chain.K
    if not 0 <= s < chain.K:
        raise ValidationError(f"start segment {start} out of range for K={chain.K}")
    return s


@dataclass(frozen=True)
class ChainComplex:
    """Several monotonic chains, each with a gating polytope.

    ``gates[l]`` is ``(normals, offsets)``: rows point away from chain ``l``, so the
    chain satisfies ``normals @ x + offsets <= 0``.  ``stitching[l]`` is an optional
    ``(R, t)`` taking chain ``l``'s canonical embedding into the common frame, and
    ``junctions[l]`` the fold between chain ``l`` and ``l+1`` when known.
    """

    chains: tuple
    gates: tuple
    stitching: tuple = None
    junctions: tuple = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        chains = tuple(self.chains)
        gates = tuple((np.atleast_2d(np.asarray(n, float)), np.asarray(o, float).ravel()) for n, o in self.gates)
        if len(gates) != len(chains):
            raise ValidationError("need one gating polytope per chain")
        for (n, o), c in zip(gates, chains):
            if n.size and (n.shape[1] != c.d or n.shape[0] != o.shape[0]):
                raise DimensionMismatch("gating normals/offsets do not match the chain dimension")
        object.__setattr__(self, "chains", chains)
        object.__setattr__(self, "gates", gates)
        if self.stitching is not None:
            st = tuple((np.asarray(r, float), np.asarray(t, float)) for r, t in self.stitching)
            if len(st) != len(chains):
                raise ValidationError("need one stitching transform per chain")
            object.__setattr__(self, "stitching", st)
        if self.junctions is not None:
            object.__setattr__(self, "junctions", tuple(self.junctions))

    @property
    def d(self):
        return self.chains[0].d

    @property
    def m(self):
        return self.chains[0].m

    @property
    def L(self):
        return len(self.chains)

    def to_dict(self):
        out = {
            "kind": "complex",
            "d": self.d,
            "m": self.m,
            "chains": [c.to_dict() for c in self.chains],
            "gates": [{"normals": n.tolist(), "offsets": o.tolist()} for n, o in self.gates],
        }
        if self.stitching is not None:
            out["stitching"] = [{"rotation": r.tolist(), "translation": t.tolist()} for r, t in self.stitching]
        if self.junctions is not None:
            out["junctions"] = [
                {"normal": hp.normal.tolist(), "offset": hp.offset} for hp, _ in self.junctions
            ]
        if self.info:
            out["info"] = self.info
        return out

    @classmethod
    def from_dict(cls, data):
        try:
            chains = [MonotonicChain.from_dict(c) for c in data["chains"]]
            gates = [(g["normals"], g["offsets"]) for g in data["gates"]]
            stitching = None
            if data.get("stitching") is not None:
                stitching = [(s["rotation"], s["translation"]) for s in data["stitching"]]
            junctions = None
            if data.get("junctions") is not None:
                junctions = []
                for l, j in enumerate(data["junctions"]):
                    hp = Hyperplane(j["normal"], j["offset"])
                    geom = intersection_geometry(
                        chains[l].segments[-1], chains[l + 1].segments[0], hyperplane=hp
                    )
                    junctions.append((hp, geom))
        except (KeyError, TypeError, IndexError) as exc:
            raise MalformedInput(f"malformed complex description: {exc!r}") from exc
        return cls(chains, gates, stitching, junctions, dict(data.get("info", {})))
