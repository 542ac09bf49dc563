"""Command-line interface: ``chainflat <command> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 I/O or schema error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as cio
from .analysis import measure_errors
from .builder import build_combined, build_monotonic, parameter_counts
from .exceptions import ChainflatError, IOSchemaError, MalformedInput
from .experiments import SwissRollSpec, run_swiss_roll_experiment, run_worstcase_demo
from .fitting import LabeledSamples, fit_chain, split_into_monotonic
from .geometry import ChainComplex, MonotonicChain
from .network import deserialize, evaluate_batch, serialize


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _start(value):
    return value if value == "middle" else int(value)


def _seed(default):
    env = os.environ.get("CHAINFLAT_SEED")
    return int(env) if env not in (None, "") else default


def _load_chain(path):
    data = cio.read_json(path)
    if not isinstance(data, dict):
        raise MalformedInput(f"{path}: expected a JSON object")
    if data.get("kind") == "complex":
        return ChainComplex.from_dict(data)
    return MonotonicChain.from_dict(data)


def _load_network(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def _emit(args, name, payload, summary=None):
    """Write ``payload`` under --out-dir (printing ``summary``) or print it."""
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        target = os.path.join(args.out_dir, name)
        cio.write_bytes(target, payload)
        summary = dict(summary or {})
        summary["output"] = target
        sys.stdout.write(cio.dumps_json(summary).decode())
    else:
        sys.stdout.write(payload.decode())


def cmd_fit(args):
    points, labels = cio.read_labeled(args.points, args.labels, args.header)
    chain = fit_chain(LabeledSamples(points, labels), args.m)
    if args.pieces or args.split:
        cap = np.radians(args.max_curvature)
        cplx = split_into_monotonic(chain, cap, n_pieces=args.pieces, max_total_curvature=cap)
        payload = cio.dumps_json(cplx.to_dict())
        summary = {"kind": "complex", "pieces": cplx.info["pieces"], "J": cplx.info["J"]}
    else:
        payload = cio.dumps_json(chain.to_dict())
        summary = {"kind": "chain", **chain.info["fit"]}
    _emit(args, "chain.json", payload, summary)


def cmd_build(args):
    obj = _load_chain(args.chain)
    if isinstance(obj, ChainComplex):
        start = "middle" if args.start_segment is None else args.start_segment
        net = build_combined(obj, overlap_mode=args.mode, start_segment=start)
    else:
        start = 0 if args.start_segment is None else args.start_segment
        net = build_monotonic(obj, start)
    summary = {"kind": net.metadata.get("kind"), "hidden_units": net.hidden_units(0),
               "layers": len(net.layers), "weights": net.n_weights}
    _emit(args, "network.json", serialize(net), summary)


def cmd_eval(args):
    net = _load_network(args.network)
    pts = cio.read_points(args.points, args.header, d=net.input_dim)
    out = evaluate_batch(net, pts)
    header = [f"u{i + 1}" for i in range(net.output_dim)] if args.header else None
    payload = cio.format_csv(out.tolist(), header).encode()
    _emit(args, "embedding.csv", payload, {"n_points": len(out)})


def cmd_analyze(args):
    net = _load_network(args.network)
    chain = _load_chain(args.chain)
    pts = cio.read_points(args.points, args.header, d=net.input_dim)
    feet = cio.read_points(args.feet, args.header, d=net.input_dim) if args.feet else None
    truth = cio.read_points(args.truth, args.header, d=net.output_dim) if args.truth else None
    rep = measure_errors(net, chain, pts, feet=feet, truth=truth, c=args.c)
    summary = dict(rep.global_)
    summary["per_segment"] = rep.per_segment
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        cio.write_csv(os.path.join(args.out_dir, "errors.csv"), rep.rows(), rep.CSV_HEADER)
        cio.write_bytes(os.path.join(args.out_dir, "summary.json"), cio.dumps_json(summary))
        if args.plots:
            _analyze_plot(rep, args.out_dir)
    sys.stdout.write(cio.dumps_json(summary).decode())


def _analyze_plot(rep, out_dir):
    try:
        from .plotting import _pyplot, _save
    except ImportError:
        return
    try:
        plt = _pyplot()
    except ImportError:
        print("matplotlib not installed; skipping figures", file=sys.stderr)
        return
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.scatter(rep.segment, rep.amplification, s=4)
    ax.set_xlabel("segment")
    ax.set_ylabel("relative error")
    fig.tight_layout()
    _save(fig, out_dir, "errors.png")
    plt.close(fig)


def _plots_available(args):
    if not args.plots:
        return False
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        print("matplotlib not installed; skipping figures", file=sys.stderr)
        return False
    return True


def cmd_demo_swiss_roll(args):
    spec = SwissRollSpec(n_points=args.n, noise_sigma=args.noise, seed=_seed(args.seed))
    res = run_swiss_roll_experiment(
        spec, n_chains=args.chains, n_segments=args.segments, c_override=args.c,
        overlap_mode=args.mode, out_dir=args.out_dir, plots=_plots_available(args),
    )
    sys.stdout.write(cio.dumps_json(res.summary).decode())


def cmd_demo_worst_case(args):
    res = run_worstcase_demo(args.N, args.eps, out_dir=args.out_dir, plots=_plots_available(args))
    sys.stdout.write(cio.dumps_json(res.summary).decode())


def cmd_counts(args):
    pc = parameter_counts(args.d, args.m, args.K)
    sys.stdout.write(cio.dumps_json(pc.to_dict()).decode())


def build_parser():
    p = _Parser(prog="chainflat", description="Closed-form RELU networks that flatten piecewise-linear manifolds.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def out_dir(sp):
        sp.add_argument("--out-dir", help="directory for output files (default: stdout)")

    f = sub.add_parser("fit", help="fit a chain (or split complex) to labeled points")
    f.add_argument("--points", required=True, help="points CSV, or a CSV with a 'label' column")
    f.add_argument("--labels", help="labels CSV, one integer per row")
    f.add_argument("--m", type=int, required=True, help="intrinsic dimension")
    f.add_argument("--header", action="store_true", help="CSV files have a header row")
    f.add_argument("--split", action="store_true", help="split greedily into monotonic pieces")
    f.add_argument("--pieces", type=int, help="split into exactly this many pieces")
    f.add_argument("--max-curvature", type=float, default=166.5, help="per-piece cap in degrees")
    out_dir(f)
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("build", help="build a network from chain or complex JSON")
    b.add_argument("--chain", required=True)
    b.add_argument("--start-segment", type=_start, default=None, help="index or 'middle'")
    b.add_argument("--mode", choices=["sum", "maxpool"], default="maxpool")
    out_dir(b)
    b.set_defaults(func=cmd_build)

    e = sub.add_parser("eval", help="evaluate a network on a points CSV")
    e.add_argument("--network", required=True)
    e.add_argument("--points", required=True)
    e.add_argument("--header", action="store_true")
    out_dir(e)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="measure perturbation errors")
    a.add_argument("--network", required=True)
    a.add_argument("--chain", required=True)
    a.add_argument("--points", required=True)
    a.add_argument("--feet", help="foot points CSV (default: nearest chain point)")
    a.add_argument("--truth", help="true intrinsic coordinates CSV")
    a.add_argument("--c", type=float, default=None, help="bound constant (default: from hyperplanes)")
    a.add_argument("--header", action="store_true")
    a.add_argument("--no-plots", dest="plots", action="store_false")
    out_dir(a)
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("demo", help="reproduction experiments")
    dsub = d.add_subparsers(dest="demo", parser_class=_Parser)
    dsub.required = True
    sr = dsub.add_parser("swiss-roll")
    sr.add_argument("--chains", type=int, default=3)
    sr.add_argument("--segments", type=int, default=14)
    sr.add_argument("--noise", type=float, default=0.0)
    sr.add_argument("--seed", type=int, default=0)
    sr.add_argument("--n", type=int, default=4000)
    sr.add_argument("--c", type=float, default=1.0, help="constant for the reported e^{cT} figures")
    sr.add_argument("--mode", choices=["sum", "maxpool"], default="maxpool")
    sr.add_argument("--no-plots", dest="plots", action="store_false")
    out_dir(sr)
    sr.set_defaults(func=cmd_demo_swiss_roll)
    wc = dsub.add_parser("worst-case")
    wc.add_argument("--N", type=float, default=100.0)
    wc.add_argument("--eps", type=float, default=0.01)
    wc.add_argument("--no-plots", dest="plots", action="store_false")
    out_dir(wc)
    wc.set_defaults(func=cmd_demo_worst_case)

    c = sub.add_parser("counts", help="degrees of freedom versus network weights")
    c.add_argument("--d", type=int, required=True)
    c.add_argument("--m", type=int, required=True)
    c.add_argument("--K", type=int, required=True)
    c.set_defaults(func=cmd_counts)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (IOSchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ChainflatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
