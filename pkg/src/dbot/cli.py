"""Command-line front end: ``dbot {solve,cluster,infer,loss,compare,sweep}``.

Exit codes: 0 success, 1 invalid input, 2 numerical non-convergence.

Any option can also come from ``--config FILE``, a text file of
``key = value`` lines (``#`` starts a comment; keys are option names with
or without leading dashes, ``-`` and ``_`` interchangeable; booleans take
true/false).  Precedence, lowest first: built-in defaults, config file,
command-line flags.

``DBOT_LOG`` (error, warn, info, debug) sets the diagnostics level on
standard error.  Results go to standard output or the named files only.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .classify import (
    LossConfig,
    TrainConfig,
    as_prior,
    dbot_bounds,
    dbot_infer,
    dbot_loss_and_grad,
    evaluate_inference,
    gradient_check,
    logit_adjust_infer,
    train_linear,
)
from .clustering import ClusterBounds, ClusterConfig, HistogramDataset, cluster, purity
from .core import DBOTError, DegenerateKernelError, TransportProblem, validate_problem
from .solvers import SolverConfig, lockstep_compare, solve
from .synthetic import gaussian_blobs, long_tailed_splits

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
VARIANTS = ("bregman", "sinkhorn_knopp", "dual")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}

logger = logging.getLogger("dbot")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors: exit 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# option helpers


def _positive(text):
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return x


def _pos_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return n


def _unit_interval(text):
    x = float(text)
    if not 0 <= x < 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1), got {text}")
    return x


def _variant(text):
    v = text.replace("-", "_")
    if v not in VARIANTS + ("vanilla", "all"):
        raise argparse.ArgumentTypeError(f"unknown variant {text!r}")
    return v


def _float_list(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _common(p):
    p.add_argument("--config", help="key = value file supplying option defaults")
    p.add_argument("-o", "--output", help="result path (default: standard output)")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp field from JSON")
    p.add_argument("--seed", type=int, default=0)


def _solver_opts(p):
    p.add_argument("--epsilon", type=_positive, default=1.0)
    p.add_argument("--tol", type=_positive, default=1e-9)
    p.add_argument("--max-iter", type=_pos_int, default=1000)
    p.add_argument("--log-domain", choices=("auto", "on", "off"), default="auto")


def build_parser():
    parser = _Parser(prog="dbot", description="Doubly-bounded entropic optimal transport tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one bounded transport problem")
    for name in ("cost", "source", "lower", "upper"):
        p.add_argument(name)
    _solver_opts(p)
    p.add_argument("--variant", type=_variant, default="bregman",
                   help="bregman, sinkhorn-knopp, dual, vanilla or all")
    _common(p)

    p = sub.add_parser("cluster", help="bounded clustering of points or histograms")
    p.add_argument("data", help="points CSV or histogram JSON")
    p.add_argument("--k", type=_pos_int)
    p.add_argument("--lower", default="0", help="per-cluster minimum mass (scalar or comma list)")
    p.add_argument("--upper", default="inf", help="per-cluster maximum mass (scalar or comma list)")
    p.add_argument("--epsilon", type=_positive, default=0.01)
    p.add_argument("--epsilon-bary", type=_positive, default=0.1)
    p.add_argument("--outer-iters", type=_pos_int, default=5)
    p.add_argument("--until-stable", action="store_true")
    p.add_argument("--no-reweight", action="store_true")
    p.add_argument("--space", choices=("euclidean", "wasserstein"), default="euclidean")
    p.add_argument("--labels", help="true labels CSV; adds purity to the result")
    _common(p)

    p = sub.add_parser("infer", help="predict classes from logits")
    p.add_argument("logits")
    p.add_argument("--prior", help="target class prior CSV")
    p.add_argument("--delta", type=_unit_interval, default=0.1)
    p.add_argument("--epsilon", type=_positive, default=1.0)
    p.add_argument("--baseline", choices=("none", "logit-adjust"), default="none")
    p.add_argument("--counts", help="training class counts CSV for logit adjustment")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--diagnostics", help="diagnostics JSON path (default: not written)")
    _common(p)

    p = sub.add_parser("loss", help="evaluate the unrolled transport loss")
    p.add_argument("logits")
    p.add_argument("labels")
    p.add_argument("--prior", help="class prior CSV (default: uniform)")
    p.add_argument("--delta", type=_unit_interval, default=0.0)
    p.add_argument("--k-iters", type=_pos_int, default=1)
    p.add_argument("--epsilon", type=_positive, default=1.0)
    p.add_argument("--shift-c", type=float)
    p.add_argument("--grad", help="write the gradient matrix as CSV")
    p.add_argument("--fd-check", action="store_true", help="report finite-difference gradient error")
    _common(p)

    p = sub.add_parser("compare", help="lockstep scaling vs dual iterations")
    for name in ("cost", "source", "lower", "upper"):
        p.add_argument(name)
    p.add_argument("--epsilon", type=_positive, default=1.0)
    p.add_argument("--iters", type=_pos_int, default=50)
    _common(p)

    p = sub.add_parser("sweep", help="desk-scale ablation over one parameter")
    p.add_argument("--param", choices=("delta", "epsilon", "k-iters", "bounds"), required=False)
    p.add_argument("--grid", default="", help="comma-separated values")
    p.add_argument("--seeds", type=_pos_int, default=1, help="number of seeds starting at --seed")
    p.add_argument("--imbalance", type=_positive, default=10.0)
    p.add_argument("--std", type=_positive, default=0.25)
    p.add_argument("--delta", type=_unit_interval, default=0.1, help="base inference delta")
    p.add_argument("--epsilon", type=_positive, default=1.0, help="base inference epsilon")
    p.add_argument("--k-iters", type=_pos_int, default=1, help="base training iterations")
    p.add_argument("--train-delta", type=_unit_interval, default=0.0)
    p.add_argument("--epochs", type=_pos_int, default=300)
    p.add_argument("--cluster-epsilon", type=_positive, default=0.2)
    p.add_argument("--workers", type=_pos_int, default=1)
    _common(p)
    return parser


# ---------------------------------------------------------------------------
# config file


def read_config(path):
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = (value, n)
    return values


def _apply_config(sub, path):
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, (value, n) in read_config(path).items():
        act = actions.get(key)
        if act is None or key in ("config", "help") or not act.option_strings:
            raise UsageError(f"{path}: line {n}: unknown option {key!r}")
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{path}: line {n}: {key} takes true or false")
            defaults[key] = low in ("true", "1", "yes")
        else:
            try:
                conv = act.type(value) if act.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{path}: line {n}: bad value for {key}: {exc}") from None
            if act.choices is not None and conv not in act.choices:
                raise UsageError(f"{path}: line {n}: {key} must be one of {sorted(act.choices)}")
            defaults[key] = conv
    sub.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, args.config)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# commands


def _load_problem(args):
    cost = io.read_matrix(args.cost)
    p = TransportProblem(cost, io.read_vector(args.source), io.read_vector(args.lower),
                         io.read_vector(args.upper), args.epsilon)
    report = validate_problem(p)
    if not report.ok:
        raise UsageError("; ".join(report.violations))
    return p


def _solver_config(args, variant):
    log = {"auto": None, "on": True, "off": False}[args.log_domain]
    return SolverConfig(variant=variant, max_iter=args.max_iter, tolerance=args.tol, log_domain=log)


def _sibling(path, variant):
    base = Path(path if path and path != "-" else "solution.json")
    return base.with_name(f"{base.stem}.{variant}{base.suffix or '.json'}")


def cmd_solve(args):
    p = _load_problem(args)
    ts = not args.no_timestamp
    if args.variant != "all":
        sol = solve(p, _solver_config(args, args.variant))
        io.write_text(args.output, io.dumps(sol.to_dict(), ts))
        return EXIT_OK if sol.converged else EXIT_NONCONVERGED

    sols = {v: solve(p, _solver_config(args, v)) for v in VARIANTS}
    files = {}
    for v, sol in sols.items():
        path = _sibling(args.output, v)
        io.write_text(path, io.dumps(sol.to_dict(), ts))
        files[v] = str(path)
    diffs = {
        f"{x}-{y}": float(np.max(np.abs(sols[x].coupling - sols[y].coupling)))
        for i, x in enumerate(VARIANTS) for y in VARIANTS[i + 1:]
    }
    report = {"files": files, "pairwise_max_diff": diffs, "max_diff": max(diffs.values()),
              "converged": {v: s.converged for v, s in sols.items()}}
    io.write_text(args.output, io.dumps(report, ts))
    return EXIT_OK if all(s.converged for s in sols.values()) else EXIT_NONCONVERGED


def _bound_vector(text, k, name):
    vals = _float_list(text)
    if len(vals) == 1:
        return np.full(k, vals[0])
    if len(vals) != k:
        raise UsageError(f"--{name} has {len(vals)} values for k={k}")
    return np.array(vals)


def cmd_cluster(args):
    if args.k is None:
        raise UsageError("--k is required")
    if args.space == "wasserstein" or str(args.data).endswith(".json"):
        data = io.read_histograms(args.data)
        if args.space != "wasserstein":
            raise UsageError("histogram input needs --space wasserstein")
    else:
        data = io.read_matrix(args.data)
    bounds = ClusterBounds(_bound_vector(args.lower, args.k, "lower"),
                           _bound_vector(args.upper, args.k, "upper"))
    cfg = ClusterConfig(epsilon=args.epsilon, outer_iters=args.outer_iters,
                        reweight=not args.no_reweight, seed=args.seed,
                        until_stable=args.until_stable, epsilon_bary=args.epsilon_bary)
    res = cluster(data, args.k, bounds, cfg)
    labels = io.read_labels(args.labels) if args.labels else None
    if labels is not None and len(labels) != len(data):
        raise UsageError(f"{len(labels)} labels for {len(data)} samples")
    out = res.to_dict(labels)
    out["space"] = "wasserstein" if isinstance(data, HistogramDataset) else "euclidean"
    out["bounds"] = {"lower": bounds.lower, "upper": bounds.upper}
    io.write_text(args.output, io.dumps(out, not args.no_timestamp))
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_infer(args):
    logits = io.read_matrix(args.logits)
    n = logits.shape[1]
    diag = {"method": "dbot" if args.baseline == "none" else "logit_adjust"}
    code = EXIT_OK
    if args.baseline == "logit-adjust":
        src = args.counts or args.prior
        if src is None:
            raise UsageError("logit adjustment needs --counts (or --prior)")
        counts = io.read_vector(src)
        if len(counts) != n:
            raise UsageError(f"counts have {len(counts)} classes, logits have {n}")
        pred = logit_adjust_infer(logits, counts, args.tau)
        diag["tau"] = args.tau
    else:
        if args.prior is None:
            raise UsageError("--prior is required")
        prior = as_prior(io.read_vector(args.prior))
        if len(prior) != n:
            raise UsageError(f"prior has {len(prior)} classes, logits have {n}")
        pred, sol = dbot_infer(logits, prior, args.delta, args.epsilon)
        lo, up = dbot_bounds(prior, args.delta)
        cols = sol.coupling.sum(axis=0)
        diag.update(delta=args.delta, epsilon=args.epsilon, column_mass=cols, lower=lo, upper=up,
                    max_bound_violation=float(np.max(np.maximum(np.maximum(lo - cols, cols - up), 0.0))),
                    iterations=sol.iterations, converged=sol.converged)
        code = EXIT_OK if sol.converged else EXIT_NONCONVERGED
    diag["predicted_counts"] = np.bincount(pred, minlength=n)
    io.write_text(args.output, io.matrix_to_csv(pred[:, None]))
    if args.diagnostics:
        io.write_text(args.diagnostics, io.dumps(diag, not args.no_timestamp))
    return code


def cmd_loss(args):
    logits = io.read_matrix(args.logits)
    labels = io.read_labels(args.labels)
    n = logits.shape[1]
    prior = np.full(n, 1.0 / n) if args.prior is None else io.read_vector(args.prior)
    cfg = LossConfig(args.delta, args.k_iters, args.epsilon, args.shift_c)
    loss, grad = dbot_loss_and_grad(logits, labels, prior, cfg)
    out = {"loss": loss, "delta": args.delta, "k_iters": args.k_iters, "epsilon": args.epsilon}
    if args.fd_check:
        out["fd_max_rel_error"] = gradient_check(logits, labels, prior, cfg)
    if args.grad:
        io.write_text(args.grad, io.matrix_to_csv(grad))
    io.write_text(args.output, io.dumps(out, not args.no_timestamp))
    return EXIT_OK


def cmd_compare(args):
    p = _load_problem(args)
    rep = lockstep_compare(p, args.iters)
    out = {"iterations": rep.iterations, "f_gap": rep.f_gap, "g_gap": rep.g_gap, "h_gap": rep.h_gap,
           "max_gap": rep.max_gap, "coupling_divergence": rep.coupling_divergence}
    io.write_text(args.output, io.dumps(out, not args.no_timestamp))
    return EXIT_OK


# sweeps: each grid point is an independent job; results keep grid order


def _classify_point(job):
    param, value, seed, base = job
    train_k = int(value) if param == "k-iters" else base["k_iters"]
    cfg = TrainConfig(loss=LossConfig(base["train_delta"], train_k), epochs=base["epochs"], seed=seed,
                      infer_delta=value if param == "delta" else base["delta"],
                      infer_epsilon=value if param == "epsilon" else base["epsilon"])
    splits = long_tailed_splits(imbalance=base["imbalance"], std=base["std"], seed=seed)
    X, y, _ = splits["train"]
    model = train_linear(X, y, len(splits["train"][2]), cfg)
    counts = np.bincount(y, minlength=len(splits["train"][2])).astype(float)
    tests = {k: v for k, v in splits.items() if k != "train"}
    return evaluate_inference(model, tests, counts, cfg)


def _bounds_point(job):
    _, value, seed, base = job
    X, y = gaussian_blobs(30, seed=seed)
    k, share = 5, len(X) / 5
    bounds = ClusterBounds.uniform(k, max(0.0, (1 - value) * share), (1 + value) * share)
    res = cluster(X, k, bounds, ClusterConfig(epsilon=base["cluster_epsilon"], seed=seed))
    return {"cluster": {"purity": purity(res.hard_labels, y),
                        "min_mass": float(res.per_cluster_mass.min()),
                        "max_mass": float(res.per_cluster_mass.max())}}


def _run_job(job):
    return _bounds_point(job) if job[0] == "bounds" else _classify_point(job)


def cmd_sweep(args):
    if args.param is None:
        raise UsageError("--param is required")
    try:
        grid = _float_list(args.grid)
    except ValueError:
        raise UsageError(f"--grid: cannot parse {args.grid!r}") from None
    if not grid:
        raise UsageError("grid must be nonempty")
    for v in grid:
        if args.param == "delta" and not 0 <= v < 1:
            raise UsageError(f"delta grid values must lie in [0, 1), got {v:g}")
        if args.param == "epsilon" and not v > 0:
            raise UsageError(f"epsilon grid values must be positive, got {v:g}")
        if args.param == "k-iters" and (v < 1 or v != int(v)):
            raise UsageError(f"k-iters grid values must be positive integers, got {v:g}")
        if args.param == "bounds" and v < 0:
            raise UsageError(f"bounds grid values must be nonnegative, got {v:g}")
    base = {k: getattr(args, k) for k in ("delta", "epsilon", "k_iters", "train_delta", "epochs",
                                          "imbalance", "std", "cluster_epsilon")}
    jobs = [(args.param, v, args.seed + s, base) for v in grid for s in range(args.seeds)]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]

    rows = []
    for (param, value, seed, _), res in zip(jobs, results):
        for split, metrics in res.items():
            for metric, val in sorted(metrics.items()):
                rows.append([param, "%g" % value, seed, split, metric, float(val)])
    io.write_text(args.output, io.rows_to_csv(["param", "value", "seed", "split", "metric", "score"], rows))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "cluster": cmd_cluster, "infer": cmd_infer, "loss": cmd_loss,
            "compare": cmd_compare, "sweep": cmd_sweep}


def _setup_logging():
    level = LOG_LEVELS.get(os.environ.get("DBOT_LOG", "warn").strip().lower(), logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("dbot: %(levelname)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False


def main(argv=None) -> int:
    _setup_logging()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        try:
            args = parse_args(argv)
        except SystemExit as exc:  # usage errors and --help
            return exc.code if isinstance(exc.code, int) else EXIT_INPUT
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, OSError) as exc:
        print(f"dbot: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegenerateKernelError as exc:
        print(f"dbot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except DBOTError as exc:
        print(f"dbot: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
