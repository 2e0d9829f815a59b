"""Command-line entry point: simulate, fit, moments, diagnose, cost.

Every subcommand is deterministic given (config, seed); `fit` writes a
manifest with config and data hashes sufficient to reproduce its traces
bit-exactly, at any chain-parallelism degree.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import data_io, diagnostics, prior_moments
from .errors import ConfigurationError, DataError, NumericalError, TreesbError
from .gibbs import RunConfig, TraceWriter, gibbs_cost_sum, load_trace, run_chain
from .tree import TreeKind


def _say(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message, file=sys.stderr)


def _require_out_dir(path: str) -> str:
    if not os.path.isdir(path):
        raise ConfigurationError(f"output directory does not exist: {path}")
    return path


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def cmd_simulate(args) -> int:
    out = _require_out_dir(args.out)
    if args.design != "section4":
        raise ConfigurationError(f"unknown design {args.design!r}")
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(0,)))
    design = data_io.section4_design()
    try:
        dataset = design.generate(args.scale, args.dependent, rng)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    data_path = os.path.join(out, "data.csv")
    truth_path = os.path.join(out, "truth.csv")
    data_io.write_csv(dataset, data_path)
    data_io.write_labels(dataset.ref_labels, truth_path)
    _say(args, f"wrote {dataset.n} observations to {data_path}")
    return 0


def _fit_one_chain(payload) -> dict:
    """Run one chain and stream its trace to disk; used by every worker."""
    config_mapping, data_path, chain_index, trace_path = payload
    config = RunConfig.from_mapping(config_mapping)
    dataset = data_io.load_csv(data_path)
    model = config.resolve(dataset)
    writer = TraceWriter(trace_path, model.topology, dataset.profiles)
    try:
        trace = run_chain(dataset, config, chain_index, on_draw=writer.write_draw)
        writer.close(complete=trace.complete)
    except BaseException:
        writer.close(complete=False)
        raise
    return {"chain": chain_index, "path": trace_path, "n_draws": len(trace)}


def cmd_fit(args) -> int:
    if args.manifest:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        config = RunConfig.from_mapping(manifest["config"])
        data_path = args.data or manifest["data_path"]
        chains = manifest["chains"]
    else:
        if not args.config or not args.data:
            raise ConfigurationError("fit needs --config and --data (or --manifest)")
        try:
            config = RunConfig.from_file(args.config)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from exc
        data_path = args.data
        chains = args.chains
    if args.seed is not None:
        config = RunConfig.from_mapping({**config.to_mapping(), "seed": args.seed})
    out = _require_out_dir(args.out)
    if not os.path.exists(data_path):
        raise DataError(f"data file not found: {data_path}")
    # Validate config against the data before any sampling starts.
    dataset = data_io.load_csv(data_path)
    config.resolve(dataset)

    payloads = [
        (
            config.to_mapping(),
            os.path.abspath(data_path),
            chain,
            os.path.join(out, f"trace_chain{chain}.ndjson"),
        )
        for chain in range(chains)
    ]
    workers = args.workers or 1
    if workers > 1 and chains > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_one_chain, payloads))
    else:
        results = [_fit_one_chain(p) for p in payloads]

    manifest = {
        "command": "fit",
        "seed": config.seed,
        "chains": chains,
        "config": config.to_mapping(),
        "config_sha256": hashlib.sha256(
            json.dumps(config.to_mapping(), sort_keys=True).encode()
        ).hexdigest(),
        "data_path": os.path.abspath(data_path),
        "data_sha256": _sha256(data_path),
        "traces": [
            {
                "chain": res["chain"],
                "path": os.path.basename(res["path"]),
                "n_draws": res["n_draws"],
                "sha256": _sha256(res["path"]),
            }
            for res in results
        ],
        "complete": True,
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    _say(args, f"fit complete: {chains} chain(s), manifest in {out}")
    return 0


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse float list {text!r}") from exc


def cmd_moments(args) -> int:
    out = _require_out_dir(args.out)
    kinds = {
        "both": [TreeKind.LOPSIDED, TreeKind.BALANCED],
        "lopsided": [TreeKind.LOPSIDED],
        "balanced": [TreeKind.BALANCED],
    }[args.tree]
    ratios = _parse_floats(args.sigma2_ratios)
    sigma1s = _parse_floats(args.sigma1_sq)
    k = args.num_leaves
    rows = []
    root = np.random.SeedSequence(args.seed)
    streams = iter(
        np.random.default_rng(child)
        for child in root.spawn(4 * len(kinds) * len(ratios) * len(sigma1s))
    )
    fx, fxp = np.array([1.0, 0.0]), np.array([1.0, 1.0])
    n_ev = max(args.n_mc, 1000)
    for kind in kinds:
        if kind is TreeKind.BALANCED:
            bound = prior_moments.lower_bound_bt(k.bit_length() - 1)
        else:
            bound = prior_moments.lower_bound_lt(k)
        for s1 in sigma1s:
            for ratio in ratios:
                sigma = np.diag([s1, ratio * s1])
                mu = np.zeros(2)
                cross = prior_moments.ev_product_logitnormal(
                    mu, sigma, fx, fxp, n_ev, next(streams)
                )
                within_x = prior_moments.ev_product_logitnormal(
                    mu, sigma, fx, fx, n_ev, next(streams)
                )
                within_xp = prior_moments.ev_product_logitnormal(
                    mu, sigma, fxp, fxp, n_ev, next(streams)
                )
                closed = _closed_form_corr(kind, k, cross, within_x, within_xp)
                est = prior_moments.mc_corr_measures(
                    kind, k, mu, sigma, fx, fxp, args.p, args.n_mc, next(streams)
                )
                rows.append(
                    [kind.value, k, s1, ratio, closed, est.value, est.stderr, bound]
                )
    path = os.path.join(out, "moments.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["tree", "K", "sigma1_sq", "sigma2_ratio", "corr_closed_form",
             "corr_mc", "mc_stderr", "lower_bound"]
        )
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    _say(args, f"wrote {len(rows)} rows to {path}")
    return 0


def _closed_form_corr(kind: TreeKind, k: int, cross, within_x, within_xp) -> float:
    evx, evxp, evxxp = cross.ev_x.value, cross.ev_xp.value, cross.ev_xxp.value
    evxx = within_x.ev_xxp.value  # E V_x^2: the product estimator at x = x'
    evxpxp = within_xp.ev_xxp.value
    if kind is TreeKind.BALANCED:
        m = k.bit_length() - 1
        axx = prior_moments.a_bt(m, evx, evx, evxx)
        axpxp = prior_moments.a_bt(m, evxp, evxp, evxpxp)
        axxp = prior_moments.a_bt(m, evx, evxp, evxxp)
    else:
        axx = prior_moments.a_lt_finite(k, evx, evx, evxx)
        axpxp = prior_moments.a_lt_finite(k, evxp, evxp, evxpxp)
        axxp = prior_moments.a_lt_finite(k, evx, evxp, evxxp)
    return axxp / np.sqrt(axx * axpxp)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def cmd_diagnose(args) -> int:
    out = _require_out_dir(args.out)
    trace = load_trace(args.trace)
    if not trace.draws:
        raise DataError(f"{args.trace}: trace contains no draws")
    leaves = [n.serialize() for n in trace.tree.leaf_order]
    if args.truth:
        truth = data_io.load_labels(args.truth)
        alloc = trace.allocations_array()
        if truth.size != alloc.shape[1]:
            raise DataError(
                f"truth has {truth.size} labels but trace allocations have "
                f"{alloc.shape[1]} observations"
            )
        path = os.path.join(out, "jaccard.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["draw", "jaccard_distance"])
            for i, row in enumerate(alloc):
                writer.writerow([i, repr(diagnostics.jaccard_distance(row, truth))])
        _say(args, f"wrote {path}")

    weights = trace.weights_array()  # (n_draws, P, K)
    raw_path = os.path.join(out, "ci_raw.csv")
    sorted_path = os.path.join(out, "ci_sorted.csv")
    with open(raw_path, "w", newline="") as raw_fh, open(sorted_path, "w", newline="") as s_fh:
        raw_writer, s_writer = csv.writer(raw_fh), csv.writer(s_fh)
        raw_writer.writerow(["profile", "leaf", "lower", "median", "upper"])
        s_writer.writerow(["profile", "rank", "lower", "median", "upper"])
        for p in range(weights.shape[1]):
            key = ",".join(repr(float(v)) for v in trace.profiles[p])
            ci = diagnostics.pointwise_ci(weights[:, p, :], args.level)
            for k, leaf in enumerate(leaves):
                raw_writer.writerow(
                    [key, leaf, repr(ci.lower[k]), repr(ci.median[k]), repr(ci.upper[k])]
                )
            sci = diagnostics.pointwise_ci(
                diagnostics.posthoc_sort(weights[:, p, :]), args.level
            )
            for k in range(len(leaves)):
                s_writer.writerow(
                    [key, k + 1, repr(sci.lower[k]), repr(sci.median[k]), repr(sci.upper[k])]
                )
    _say(args, f"wrote {raw_path} and {sorted_path}")

    if (args.profile_a is None) != (args.profile_b is None):
        raise ConfigurationError("--profile-a and --profile-b must be given together")
    if args.profile_a is not None:
        pa = _parse_floats(args.profile_a)
        pb = _parse_floats(args.profile_b)
        try:
            diffs = diagnostics.covariate_effect_differences(trace, pa, pb)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        ci = diagnostics.pointwise_ci(diffs, args.level)
        path = os.path.join(out, "ci_diff.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["leaf", "lower", "median", "upper"])
            for k, leaf in enumerate(leaves):
                writer.writerow(
                    [leaf, repr(ci.lower[k]), repr(ci.median[k]), repr(ci.upper[k])]
                )
        _say(args, f"wrote {path}")
    return 0


def cmd_cost(args) -> int:
    out = _require_out_dir(args.out)
    trace = load_trace(args.trace)
    path = os.path.join(out, "cost.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw", "cost"])
        for i, draw in enumerate(trace.draws):
            writer.writerow([i, gibbs_cost_sum(trace.tree, draw.alloc)])
    _say(args, f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treesb",
        description="Tree stick-breaking mixture models: simulate, fit, diagnose.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--design", default="section4")
    sim.add_argument("--scale", type=float, default=1.0)
    sim.add_argument("--dependent", action="store_true")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--quiet", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="run the Gibbs sampler")
    fit.add_argument("--config")
    fit.add_argument("--data")
    fit.add_argument("--manifest", help="re-run a previous fit from its manifest")
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--chains", type=int, default=1)
    fit.add_argument("--workers", type=int, default=None,
                     help="process count for chain parallelism (default serial)")
    fit.add_argument("--quiet", action="store_true")
    fit.set_defaults(func=cmd_fit)

    mom = sub.add_parser("moments", help="prior correlation sweep CSV")
    mom.add_argument("--tree", choices=["both", "lopsided", "balanced"], default="both")
    mom.add_argument("--num-leaves", type=int, default=64)
    mom.add_argument("--sigma1-sq", default="1.0")
    mom.add_argument("--sigma2-ratios", default="0.01,0.1,1.0,10.0,100.0")
    mom.add_argument("--p", type=float, default=0.5)
    mom.add_argument("--n-mc", type=int, default=200_000)
    mom.add_argument("--out", required=True)
    mom.add_argument("--seed", type=int, default=0)
    mom.add_argument("--quiet", action="store_true")
    mom.set_defaults(func=cmd_moments)

    diag = sub.add_parser("diagnose", help="trace diagnostics CSVs")
    diag.add_argument("--trace", required=True)
    diag.add_argument("--truth")
    diag.add_argument("--profile-a")
    diag.add_argument("--profile-b")
    diag.add_argument("--level", type=float, default=0.95)
    diag.add_argument("--out", required=True)
    diag.add_argument("--quiet", action="store_true")
    diag.set_defaults(func=cmd_diagnose)

    cost = sub.add_parser("cost", help="per-draw Gibbs cost table")
    cost.add_argument("--trace", required=True)
    cost.add_argument("--out", required=True)
    cost.add_argument("--quiet", action="store_true")
    cost.set_defaults(func=cmd_cost)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except TreesbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
