"""Command-line entry point: ``otafl simulate | compare | bound``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import BoundParams, bound_trajectory, compute_epsilon, estimate_constants, fit_reference, heterogeneity_gap, pooled
from .config import ConfigError, load_config
from .metrics import MetricsRecord, MetricsRow, emit_plot_data, export_metrics
from .model import gradient
from .simulation import prepare_data, run_experiment

log = logging.getLogger("otafl")

BOUND_KEYS = {"mu", "L", "G2", "Gamma", "c", "alpha", "probe_steps"}


def average_records(records) -> MetricsRecord:
    """Average numeric columns of replicate runs evaluated on the same grid."""
    base = records[0]
    if any([r.t for r in rec.rows] != [r.t for r in base.rows] for rec in records):
        raise ValueError("replicates were evaluated on different grids")
    rows = []
    for i, row in enumerate(base.rows):
        group = [rec.rows[i] for rec in records]
        eps = [g.epsilon for g in group if not np.isnan(g.epsilon)]
        rows.append(MetricsRow(
            row.t,
            int(round(np.mean([g.num_scheduled for g in group]))),
            float(np.mean([g.test_accuracy for g in group])),
            float(np.mean([g.test_loss for g in group])),
            float(np.mean(eps)) if eps else float("nan"),
            int(round(np.mean([g.battery_full_count for g in group]))),
            row.phase,
        ))
    return MetricsRecord(rows=rows)


def _replicates(config, seed, seeds):
    base = config.seed if seed is None else seed
    return [run_experiment(config.with_seed(base + i)) for i in range(seeds)]


def cmd_simulate(args):
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = config.seed if args.seed is None else args.seed
    records = _replicates(config, args.seed, args.seeds)
    for i, rec in enumerate(records):
        export_metrics(rec, out / f"metrics_seed{base + i}.{args.format}", args.format)
    mean = average_records(records)
    export_metrics(mean, out / f"metrics_mean.{args.format}", args.format)
    if mean.rows:
        print(f"final mean test accuracy {mean.rows[-1].test_accuracy:.4f} over {args.seeds} seed(s)")
    return 0


def cmd_compare(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels, means = [], []
    for path in args.configs:
        config = load_config(path)
        label = Path(path).stem
        mean = average_records(_replicates(config, None, args.seeds))
        export_metrics(mean, out / f"{label}.csv", "csv")
        labels.append(label)
        means.append(mean)
    emit_plot_data(means, labels, out / "plot_data.csv")
    return 0


def cmd_bound(args):
    config = load_config(args.config)
    params = json.loads(Path(args.params).read_text())
    unknown = set(params) - BOUND_KEYS
    if unknown:
        raise ConfigError(f"{args.params}: unknown keys {sorted(unknown)}")
    reg = config.training.reg
    if reg <= 0:
        raise ConfigError("the bound needs training.reg > 0 (strong convexity)")
    data = prepare_data(config)
    dim = data.dim
    if not {"mu", "L", "G2"} <= set(params):
        mu, L, G2 = estimate_constants(
            data.users, dim, reg, config.training.batch_size,
            params.get("probe_steps", 50), config.training.eta, config.seed,
        )
        params = {"mu": mu, "L": L, "G2": G2, **params}
    if "Gamma" not in params:
        params["Gamma"] = heterogeneity_gap(data.users, dim, reg)
    theta_star = fit_reference(pooled(data.users), dim, reg)

    dist2, sizes, eps = [], [], []
    prev = {"theta": np.zeros(dim)}

    def track(t, theta, scheduled):
        grads = np.array([gradient(prev["theta"], d, reg) for d in data.users])
        eps.append(compute_epsilon(grads, scheduled) if scheduled else 0.0)
        sizes.append(max(len(scheduled), 1))
        dist2.append(float(np.sum((theta - theta_star) ** 2)))
        prev["theta"] = theta

    run_experiment(config, data, callback=track)
    bp = BoundParams(
        mu=params["mu"], L=params["L"], G2=params["G2"], Gamma=params["Gamma"],
        tau=config.training.tau, eta=config.training.eta_at,
        K=config.channel.K, N=dim // 2,
        sigma_z2=config.channel.sigma_z2, sigma_h2=config.channel.sigma_h2,
        alpha=params.get("alpha", config.channel.alpha),
        S_size=lambda i: sizes[i], epsilon=lambda i: eps[i], c=params.get("c"),
    )
    bound = bound_trajectory(float(np.sum(theta_star**2)), config.rounds, bp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bound.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "measured_dist2", "bound"])
        for t, (d, b) in enumerate(zip(dist2, bound), start=1):
            writer.writerow([t, repr(d), repr(b)])
    violations = sum(d > b for d, b in zip(dist2, bound))
    print(f"mu={bp.mu:.4g} L={bp.L:.4g} G2={bp.G2:.4g} Gamma={bp.Gamma:.4g}; "
          f"{violations} of {len(bound)} rounds above the bound")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="otafl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=1, help="number of replicate seeds")
    p.add_argument("--out", default="results")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several configurations and emit plot data")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bound", help="convergence bound next to a measured run")
    p.add_argument("--config", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_bound)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if getattr(args, "seeds", 1) < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
