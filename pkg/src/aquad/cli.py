"""Command-line interface.

Subcommands: run (single adaptive run), tune (bandwidth scan CSV),
oracle (ground-truth moments), benchmark (method x budget x seed sweep),
exoplanet (evidence-vs-noise profiles), gen-rv (synthetic dataset).
Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class CliConfigError(Exception):
    pass


def _target_from_name(name: str):
    from .harness import make_target
    return make_target(name)


def cmd_run(args) -> int:
    from .adaptive import RunConfig, run
    target = _target_from_name(args.target)
    cfg = RunConfig(kernel=args.kernel, n_init=args.n_init, n_iter=args.iterations,
                    seed=args.seed, m_probes=args.m_probes,
                    snapshot_probes=args.snapshot_probes,
                    alpha=args.alpha, beta_exp=args.beta,
                    diversity=args.diversity)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = str(out / "checkpoint.json") if args.checkpoint else None
    trace = run(cfg, target, checkpoint_path=ckpt)
    trace.save_jsonl(out / "trace.jsonl")
    trace.save_report(out / "report.json")
    print(f"E={trace.eval_count}  Z_hat={trace.final.z_hat:.6g}  route={trace.final.route}")
    print(f"wrote {out / 'trace.jsonl'} and {out / 'report.json'}")
    return 0


def cmd_tune(args) -> int:
    from .adaptive import RunConfig, run
    from .tuner import make_bandwidth_grid, tune_bandwidth_mll, tune_bandwidth_zhat
    target = _target_from_name(args.target)
    if args.nodes == "gk-aq":
        cfg = RunConfig(kernel="gaussian", n_init=min(10, args.evaluations),
                        n_iter=max(args.evaluations - 10, 0), seed=args.seed,
                        tune_bandwidth=False)
        trace = run(cfg, target)
        nodes, logs = trace.model.nodes, trace.model.log_values
    else:
        rng = np.random.default_rng(args.seed)
        nodes = target.support.sample_uniform(args.evaluations, rng)
        logs = np.array([target.log_eval(x) for x in nodes])
    grid = make_bandwidth_grid(nodes, target.support, n=args.grid_size)
    tuner = tune_bandwidth_mll if args.criterion == "mll" else tune_bandwidth_zhat
    scan = tuner(nodes, logs, grid)
    scan.to_csv(args.out)
    print(f"selected h = {scan.selected:.6g} ({scan.criterion}); scan written to {args.out}")
    if scan.warning:
        print(f"warning: {scan.warning}")
    return 0


def cmd_oracle(args) -> int:
    from .harness import compute_truth
    truth = compute_truth(args.target, resolution=args.resolution, qmc_m=args.qmc_m)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(truth.to_json())
    print(f"Z = {truth.z:.6g}  mean = {np.asarray(truth.mean)}  var = {np.asarray(truth.var)}")
    print(f"wrote {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    from .harness import ExperimentConfig, run_experiment, emit_plot_data, FIGURE_PANELS
    if args.config:
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
        if args.seed is not None:
            cfg.seed = args.seed
    else:
        if args.seed is None:
            raise CliConfigError("--seed is required for benchmark runs")
        cfg = ExperimentConfig(
            experiment_id=args.experiment_id, target=args.target,
            methods=args.methods.split(","), e_values=[int(e) for e in args.e_values.split(",")],
            n_seeds=args.n_seeds, seed=args.seed, m_probes=args.m_probes,
            out_dir=args.out_dir)
    table = run_experiment(cfg)
    out = Path(cfg.out_dir) / cfg.experiment_id
    if args.figures:
        for fig in args.figures.split(","):
            if fig not in FIGURE_PANELS:
                raise CliConfigError(f"unknown figure id {fig!r}")
            emit_plot_data(table, fig, out / f"{fig}.csv")
    print(f"results written to {out / 'results.csv'}")
    return 0


def cmd_exoplanet(args) -> int:
    from .harness import EvidenceProfile, exoplanet_evidence_profile
    from .targets import RvDataset
    data = RvDataset.from_csv(args.dataset)
    sigma_grid = np.array([float(s) for s in args.sigma_grid.split(",")])
    curves = {}
    for s in (int(v) for v in args.models.split(",")):
        curves[s] = exoplanet_evidence_profile(
            data, s, sigma_grid, method=args.method, seed=args.seed,
            presample_budget=args.presample, n_iter=args.iterations,
            m_probes=args.m_probes)
        print(f"model S={s}: log Z at sigma=2 is "
              f"{curves[s][np.argmin(np.abs(sigma_grid - 2.0))]:.4f}")
    profile = EvidenceProfile(sigma_grid=sigma_grid, curves=curves, method=args.method)
    profile.to_csv(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_gen_rv(args) -> int:
    from .targets import make_rv_dataset
    data = make_rv_dataset(args.planets, n_obs=args.n_obs, sigma2=args.sigma2, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(args.out)
    print(f"wrote {args.out} ({data.count} observations, {args.planets} planet(s))")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aquad",
                                description="Adaptive interpolative quadrature (GK-AQ / NN-AQ)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="single adaptive quadrature run")
    r.add_argument("--target", required=True, help="banana2..banana5 | multimodal10")
    r.add_argument("--kernel", default="nn", choices=["nn", "gaussian"])
    r.add_argument("--n-init", type=int, default=10)
    r.add_argument("--iterations", "-t", type=int, default=60)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--m-probes", type=int, default=100_000)
    r.add_argument("--snapshot-probes", type=int, default=10_000)
    r.add_argument("--alpha", type=float, default=1.0)
    r.add_argument("--beta", type=float, default=1.0)
    r.add_argument("--diversity", default=None, choices=[None, "min-distance", "gp-variance"])
    r.add_argument("--checkpoint", action="store_true")
    r.add_argument("--out", default="run_out")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("tune", help="bandwidth scan CSV (h, Z_hat, n_negative_beta)")
    t.add_argument("--target", required=True)
    t.add_argument("--evaluations", "-e", type=int, default=70)
    t.add_argument("--nodes", default="gk-aq", choices=["gk-aq", "uniform"])
    t.add_argument("--criterion", default="zhat", choices=["zhat", "mll"])
    t.add_argument("--grid-size", type=int, default=40)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", default="bandwidth_scan.csv")
    t.set_defaults(func=cmd_tune)

    o = sub.add_parser("oracle", help="ground-truth moments via dense grid / QMC")
    o.add_argument("--target", required=True)
    o.add_argument("--resolution", type=int, default=2000)
    o.add_argument("--qmc-m", type=int, default=2 ** 22)
    o.add_argument("--out", default="oracle.json")
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("benchmark", help="method x budget x seed experiment sweep")
    b.add_argument("--config", help="ExperimentConfig JSON; flags override")
    b.add_argument("--experiment-id", default="experiment")
    b.add_argument("--target", default="banana2")
    b.add_argument("--methods", default="nn-aq,is-uniform")
    b.add_argument("--e-values", default="70")
    b.add_argument("--n-seeds", type=int, default=100)
    b.add_argument("--m-probes", type=int, default=100_000)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out-dir", default="results")
    b.add_argument("--figures", default="", help="comma list, e.g. fig3a,fig3b")
    b.set_defaults(func=cmd_benchmark)

    x = sub.add_parser("exoplanet", help="evidence-vs-noise profiles per model order")
    x.add_argument("--dataset", required=True, help="CSV with header t,y")
    x.add_argument("--models", default="0,1,2", help="comma list of planet counts")
    x.add_argument("--sigma-grid", default=",".join(str(v) for v in range(1, 16)))
    x.add_argument("--method", default="nn-aq", choices=["nn-aq", "is"])
    x.add_argument("--presample", type=int, default=10_000)
    x.add_argument("--iterations", type=int, default=500)
    x.add_argument("--m-probes", type=int, default=1_000_000)
    x.add_argument("--paper-scale", action="store_true",
                   help="full budgets: presample 4e6-5000, 5000 iterations, M=1e7")
    x.add_argument("--seed", type=int, required=True)
    x.add_argument("--out", default="evidence_profile.csv")
    x.set_defaults(func=cmd_exoplanet)

    g = sub.add_parser("gen-rv", help="synthetic radial-velocity dataset CSV")
    g.add_argument("--planets", type=int, default=1, choices=[0, 1, 2])
    g.add_argument("--n-obs", type=int, default=60)
    g.add_argument("--sigma2", type=float, default=2.0)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", default="rv_dataset.csv")
    g.set_defaults(func=cmd_gen_rv)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    if getattr(args, "command", None) == "exoplanet" and getattr(args, "paper_scale", False):
        args.presample = 4_000_000 - 5000
        args.iterations = 5000
        args.m_probes = 10_000_000
    try:
        return args.func(args)
    except (CliConfigError, ValueError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # conditioning and similar numeric faults
        from .interpolant import ConditioningError
        if isinstance(exc, ConditioningError):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


if __name__ == "__main__":
    sys.exit(main())
