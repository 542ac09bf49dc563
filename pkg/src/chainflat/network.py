"""Feed-forward RELU networks: evaluation, linear-region maps and JSON round-trips."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimensionMismatch,
    MalformedInput,
    MetadataMissing,
    OnRegionBoundary,
    SchemaVersionMismatch,
)

SCHEMA_VERSION = 1
BOUNDARY_TOL = 1e-12
# keeps the broadcast product below ~32 MB per chunk
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    relu: bool

    def __post_init__(self):
        # C order fixes the reduction order in _affine, so results do not depend on
        # how the weights were produced
        w = np.array(self.weights, dtype=float, ndmin=2, order="C")
        b = np.array(self.bias, dtype=float).ravel()
        if w.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"layer weights {w.shape} do not match bias {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "relu", bool(self.relu))

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True)
class FlatteningNetwork:
    """Stack of affine layers, each optionally followed by a RELU.

    ``metadata`` carries construction details (segment-to-unit maps, start segment,
    construction kind) used by :func:`segment_operator` and the analysis tools.
    """

    layers: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionMismatch("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise DimensionMismatch(
                    f"layer widths do not chain: {prev.weights.shape} -> {nxt.weights.shape}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self):
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].weights.shape[0]

    d = input_dim
    m = output_dim

    @property
    def n_weights(self):
        return sum(l.weights.size for l in self.layers)

    @property
    def n_parameters(self):
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def hidden_units(self, layer=0):
        return self.layers[layer].weights.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return evaluate(self, x)
        return evaluate_batch(self, x)


def _affine(w, b, xs):
    # Elementwise product + reduction over a contiguous axis: each output row is
    # computed by the same operation sequence regardless of batch size, so batch
    # and single-point results agree bit for bit (BLAS kernels do not promise that).
    rows, cols = w.shape
    n = xs.shape[0]
    out = np.empty((n, rows))
    step = max(1, _CHUNK_ELEMENTS // max(1, rows * cols))
    for i in range(0, n, step):
        chunk = xs[i : i + step]
        out[i : i + step] = (chunk[:, None, :] * w[None, :, :]).sum(axis=2)
    return out + b


def _forward(net, xs):
    h = xs
    for layer in net.layers:
        h = _affine(layer.weights, layer.bias, h)
        if layer.relu:
            h = np.maximum(h, 0.0)
    return h


def evaluate_batch(net, xs):
    """Forward pass for every row of ``xs`` (shape ``(n, d)``)."""
    xs = np.ascontiguousarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected points of shape (n, {net.input_dim}), got {xs.shape}")
    return _forward(net, xs)


def evaluate(net, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise DimensionMismatch(f"expected a point of length {net.input_dim}, got shape {x.shape}")
    return _forward(net, x[None, :])[0]


def activation_pattern(net, x):
    """Boolean activity of every RELU unit at ``x``, one array per RELU layer."""
    x = np.asarray(x, dtype=float)
    h = x[None, :]
    pattern = []
    for layer in net.layers:
        pre = _affine(layer.weights, layer.bias, h)
        if layer.relu:
            pattern.append(pre[0] > 0)
            h = np.maximum(pre, 0.0)
        else:
            h = pre
    return pattern


def active_linear_map(net, x, warn=True):
    """Affine map ``y -> M y + c`` that the network computes on the linear region of ``x``.

    Units whose pre-activation is exactly zero count as inactive; if any
    pre-activation is within 1e-12 of zero an :class:`OnRegionBoundary` warning is
    issued, since the map then only holds on one side.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise DimensionMismatch(f"expected a point of length {net.input_dim}, got shape {x.shape}")
    lin = np.eye(net.input_dim)
    off = np.zeros(net.input_dim)
    h = x[None, :]
    on_boundary = False
    for layer in net.layers:
        pre = _affine(layer.weights, layer.bias, h)[0]
        lin = layer.weights @ lin
        off = layer.weights @ off + layer.bias
        if layer.relu:
            if np.any(np.abs(pre) < BOUNDARY_TOL):
                on_boundary = True
            mask = pre > 0
            lin = lin * mask[:, None]
            off = off * mask
            pre = np.maximum(pre, 0.0)
        h = pre[None, :]
    if on_boundary and warn:
        warnings.warn("point lies on a RELU boundary", OnRegionBoundary, stacklevel=2)
    return lin, off


def segment_operator(net, k, chain=None):
    """Linear operator the network applies on segment ``k`` and its top singular value.

    Uses the segment-to-unit map recorded by the builders.  For combined networks
    pass the chain index; the operator is then that chain's stitched block.
    """
    meta = net.metadata
    try:
        j = int(meta["segment_layer"])
        if chain is None:
            units = list(meta["segment_units"][k])
            rows = None
        else:
            info = meta["chains"][chain]
            units = list(info["segment_units"][k])
            rows = list(info["output_rows"])
    except (KeyError, IndexError, TypeError) as exc:
        raise MetadataMissing(f"network metadata has no segment map for segment {k}") from exc
    op = np.eye(net.input_dim)
    for layer in net.layers[:j]:
        op = layer.weights @ op
    op = net.layers[j].weights[units] @ op
    w_next = net.layers[j + 1].weights[:, units]
    if rows is not None:
        w_next = w_next[rows]
    op = w_next @ op
    if rows is None:
        for layer in net.layers[j + 2 :]:
            op = layer.weights @ op
    sigma = float(np.linalg.svd(op, compute_uv=False)[0]) if op.size else 0.0
    return op, sigma


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def to_dict(net):
    return {
        "version": SCHEMA_VERSION,
        "d": net.input_dim,
        "m": net.output_dim,
        "layers": [
            {"weights": l.weights.tolist(), "bias": l.bias.tolist(), "relu": l.relu}
            for l in net.layers
        ],
        "metadata": _jsonable(net.metadata),
    }


def from_dict(data):
    if not isinstance(data, dict):
        raise MalformedInput("network payload must be a JSON object")
    version = data.get("version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"unsupported network schema version {version!r}")
    try:
        layers = []
        for spec in data["layers"]:
            w = np.array(spec["weights"], dtype=float)
            b = np.array(spec["bias"], dtype=float)
            if w.ndim != 2 or b.ndim != 1 or not isinstance(spec["relu"], bool):
                raise MalformedInput("layer weights must be a matrix, bias a vector, relu a bool")
            layers.append(Layer(w, b, spec["relu"]))
        net = FlatteningNetwork(tuple(layers), dict(data.get("metadata", {})))
        d, m = int(data["d"]), int(data["m"])
    except MalformedInput:
        raise
    except (KeyError, TypeError, ValueError, DimensionMismatch) as exc:
        raise MalformedInput(f"malformed network description: {exc}") from exc
    if net.input_dim != d or net.output_dim != m:
        raise MalformedInput("declared d/m disagree with the layer shapes")
    return net


def serialize(net):
    """JSON bytes.  Floats are written with Python's shortest round-trip repr, so
    :func:`deserialize` restores every double exactly."""
    return json.dumps(to_dict(net), sort_keys=True).encode("utf-8")


def deserialize(payload):
    try:
        data = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedInput(f"network payload is not valid JSON: {exc}") from exc
    return from_dict(data)
