"""Command line entry point: ``run``, ``verify-lemmas``, ``sweep`` and ``slope``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import theory
from .graph import MU_SAMPLES, Scheme, WeightProcess, build_geometric_supergraph, is_connected, mu_bar
from .harness import (
    ConfigError,
    ExperimentConfig,
    aggregate,
    emit_csv,
    emit_summary_csv,
    fit_slope,
    read_series,
    run_experiment,
    with_param,
)
from .rng import MU, THEORY, stream

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATION = 2


def summary_path(path: Path) -> Path:
    return path.with_name(path.stem + "_summary" + path.suffix)


def _run(cfg: ExperimentConfig, output: Path) -> list:
    records = run_experiment(cfg)
    output.parent.mkdir(parents=True, exist_ok=True)
    emit_csv(records, output)
    rows = aggregate(records)
    emit_summary_csv(rows, summary_path(output))
    return rows


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    output = Path(args.out or cfg.output_path or "records.csv")
    rows = _run(cfg, output)
    print(f"wrote {output} and {summary_path(output)} ({len(rows)} recorded iterations)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    base = Path(args.out or cfg.output_path or "records.csv")
    for raw in args.values.split(","):
        raw = raw.strip()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out = base.with_name(f"{base.stem}_{args.param}={raw}{base.suffix}")
        _run(with_param(cfg, args.param, value), out)
        print(f"{args.param}={raw}: wrote {out}")
    return EXIT_OK


def cmd_slope(args) -> int:
    series = read_series(args.csv)
    print(f"{fit_slope(series, args.kmin, args.kmax):.6f}")
    return EXIT_OK


def lemma_network(args) -> WeightProcess:
    g = build_geometric_supergraph(args.n, args.radius, args.graph_seed)
    if not is_connected(g):
        raise ConfigError("lemma network is disconnected; pick another --graph-seed or --radius")
    return WeightProcess(g, Scheme.UNIFORM, args.edge_online_prob)


def verify_lemmas(args) -> dict:
    rows: dict[str, list] = {}
    closed = theory.scan_closed_form(min(args.kmax, 50))
    rows["closed_form"] = [theory.BoundReport.of("closed_form_max_error", closed, 1e-10, min(args.kmax, 50))]
    rows["sigma_bounds"] = theory.scan_sigma(args.kmax)
    rows["b_norm"] = theory.scan_b_norm(args.kmax)
    rows["scalar_sums"] = theory.scan_scalar_sums(k_max=max(args.kmax, 1000))
    if args.samples > 1:
        net = lemma_network(args)
        mu = mu_bar(net, MU_SAMPLES, stream(args.seed, MU))
        rows["phi_moments"] = theory.check_phi_moments(net, args.mc_k, args.samples, stream(args.seed, THEORY, 1), mu)
        rows["psi_moments"] = theory.check_psi_moments(net, args.psi_k, args.samples, stream(args.seed, THEORY, 2), mu)
    summary = {
        name: {"rows": len(rs), "violations": sum(not r.satisfied for r in rs), "verdict": all(r.satisfied for r in rs)}
        for name, rs in rows.items()
    }
    return {
        "summary": summary,
        "verdict": all(s["verdict"] for s in summary.values()),
        "rows": [dict(r.to_dict(), lemma=name) for name, rs in rows.items() for r in rs],
    }


def cmd_verify(args) -> int:
    report = verify_lemmas(args)
    text = json.dumps(report, indent=None if args.compact else 1)
    if args.out:
        Path(args.out).write_text(text)
    for name, s in report["summary"].items():
        print(f"{name}: {'ok' if s['verdict'] else 'VIOLATED'} ({s['violations']}/{s['rows']} violations)")
    return EXIT_OK if report["verdict"] else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distnesterov", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config and write record and summary CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="record CSV path (default: output_path from the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-lemmas", help="scan the matrix/sum lemmas and Monte Carlo moment bounds")
    p.add_argument("--kmax", type=int, default=200)
    p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo chains; <= 1 skips the moment checks")
    p.add_argument("--out")
    p.add_argument("--mc-k", type=int, default=11, help="k of the Phi moment check")
    p.add_argument("--psi-k", type=int, default=4, help="k of the consensus-product check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--radius", type=float, default=0.57)
    p.add_argument("--graph-seed", type=int, default=2)
    p.add_argument("--edge-online-prob", type=float, default=0.1)
    p.add_argument("--compact", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="rerun a config over several values of one parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma separated")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("slope", help="log-log slope of mean err_f in a k window")
    p.add_argument("--csv", required=True)
    p.add_argument("--kmin", type=float, default=10)
    p.add_argument("--kmax", type=float, default=100)
    p.set_defaults(func=cmd_slope)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
