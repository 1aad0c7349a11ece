"""Command-line experiment harness.

Subcommands: ``generate`` (seeded random instances), ``ground-truth`` (LP
solution files), ``solve`` (one algorithm to CSV), ``compare``
(multi-algorithm CSVs, summary table, SVG plots), and ``sample-run`` (the
sample-based solver with query accounting).  Exit codes: 0 success, 2
validation or usage error, 3 runtime assertion failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, run_baseline
from .history import RunHistory, format_float, write_history_csv
from .lp import GroundTruth, read_ground_truth, solve_lp, write_ground_truth
from .metrics import FitError, compute_metrics, loglog_slope
from .model import (
    CmdpModel,
    ModelError,
    RandomCmdpSpec,
    generate_random,
    generate_random_max_form,
    read_model,
    validate,
    write_model,
)
from .pmdpd import (
    ConfigurationError,
    LemmaViolation,
    PmdPdConfig,
    run_pmd_pd,
    run_pmd_pd_zero,
)
from .policies import ParameterError
from .sampling import SampleConfig, run_pmd_pd_a, schedule_params, total_query_budget

_USAGE_ERROR = 2
_ASSERTION_ERROR = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmdpkit",
        description="Tabular constrained-MDP solvers and experiment harness.",
    )
    parser.add_argument("--seed", type=int, default=0, help="root RNG seed")
    parser.add_argument(
        "--output-dir", type=Path, default=Path("."), help="directory for outputs"
    )
    parser.add_argument(
        "--format", choices=["csv"], default="csv", help="tabular output format"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_command(name, help_text):
        # global flags are also accepted after the subcommand; SUPPRESS keeps
        # the top-level value when they are omitted there
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        cmd.add_argument("--output-dir", type=Path, default=argparse.SUPPRESS)
        cmd.add_argument("--format", choices=["csv"], default=argparse.SUPPRESS)
        return cmd

    gen = add_command("generate", "write a seeded random model file")
    gen.add_argument("--states", type=int, required=True)
    gen.add_argument("--actions", type=int, required=True)
    gen.add_argument("--gamma", type=float, default=0.8)
    gen.add_argument("--constraints", type=int, default=1)
    gen.add_argument("--cost-low", type=float, default=-1.0)
    gen.add_argument("--cost-high", type=float, default=1.0)
    gen.add_argument(
        "--max-form",
        action="store_true",
        help="draw rewards/utilities on [0, 1] and convert to min form",
    )
    gen.add_argument(
        "--threshold",
        type=float,
        action="append",
        default=None,
        help="utility threshold per constraint (with --max-form; repeatable)",
    )
    gen.add_argument("--output", "-o", type=Path, default=Path("model.json"))

    gt = add_command("ground-truth", "solve a model exactly and write a .gt file")
    gt.add_argument("model", type=Path)
    gt.add_argument("--output", "-o", type=Path, default=None)

    solve = add_command("solve", "run one algorithm and write its history CSV")
    solve.add_argument("model", type=Path)
    solve.add_argument(
        "--algo",
        required=True,
        choices=["pmd-pd", "pmd-pd-zero", "npg-pd", "crpo"],
    )
    solve.add_argument("--macro-steps", "-K", type=int, default=100)
    solve.add_argument("--iterations", type=int, default=None, help="alias for baselines")
    solve.add_argument("--eta", default="theorem")
    solve.add_argument("--eta-prime", type=float, default=1.0)
    solve.add_argument("--alpha", default="theorem")
    solve.add_argument("--inner", default="theorem", help="inner steps: 'theorem' or an integer")
    solve.add_argument("--xi", type=float, default=None)
    solve.add_argument("--zeta", type=float, default=0.0)
    solve.add_argument("--ground-truth", type=Path, default=None, help="reuse a .gt file")
    solve.add_argument("--output", "-o", type=Path, default=None)

    comp = add_command("compare", "run several algorithms and summarize")
    comp.add_argument("model", type=Path)
    comp.add_argument("--algos", default="pmd-pd,npg-pd,crpo")
    comp.add_argument("--iterations", type=int, default=2000)
    comp.add_argument("--eta", type=float, default=1.0)
    comp.add_argument("--eta-prime", type=float, default=1.0)
    comp.add_argument("--workers", type=int, default=1)
    comp.add_argument("--no-plots", action="store_true")

    samp = add_command("sample-run", "run the sample-based solver")
    samp.add_argument("model", type=Path)
    samp.add_argument("--epsilon", type=float, default=0.15)
    samp.add_argument("--delta", type=float, default=0.2)
    samp.add_argument("--macro-steps", type=int, default=None)
    samp.add_argument("--output", "-o", type=Path, default=None)
    return parser


def _resolve(output_dir: Path, path: Path) -> Path:
    path = Path(path)
    out = path if path.is_absolute() else output_dir / path
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _numeric_or_theorem(raw) -> float | str:
    if isinstance(raw, (int, float)):
        return float(raw)
    if raw == "theorem":
        return "theorem"
    return float(raw)


def _load_ground_truth(model: CmdpModel, args) -> GroundTruth:
    if getattr(args, "ground_truth", None) is not None:
        return read_ground_truth(args.ground_truth)
    gt = solve_lp(model)
    if gt.status != "optimal":
        raise ModelError("model is infeasible; no ground truth available")
    return gt


def _cmd_generate(args) -> int:
    spec = RandomCmdpSpec(
        num_states=args.states,
        num_actions=args.actions,
        num_constraints=args.constraints,
        gamma=args.gamma,
        seed=args.seed,
        cost_low=args.cost_low,
        cost_high=args.cost_high,
    )
    if args.max_form:
        thresholds = args.threshold or [3.0] * args.constraints
        model = generate_random_max_form(spec, thresholds)
    else:
        model = generate_random(spec)
    problems = validate(model)
    if problems:
        raise ModelError("generated model failed validation: " + "; ".join(problems))
    out = _resolve(args.output_dir, args.output)
    write_model(model, out)
    print(f"wrote {out}")
    return 0


def _cmd_ground_truth(args) -> int:
    model = read_model(args.model)
    gt = solve_lp(model)
    out = args.output or Path(str(args.model) + ".gt")
    out = _resolve(args.output_dir, out)
    write_ground_truth(gt, out)
    if gt.status == "optimal":
        print(
            f"wrote {out}: optimal value {format_float(gt.optimal_value)}, "
            f"slater margin {format_float(gt.xi)}"
        )
    else:
        print(f"wrote {out}: infeasible (slater margin {format_float(gt.xi)})")
    return 0


def _run_algorithm(
    model: CmdpModel,
    algo: str,
    iterations: int,
    *,
    eta,
    eta_prime: float,
    alpha="theorem",
    inner="theorem",
    xi: float | None = None,
    zeta: float = 0.0,
) -> RunHistory:
    if algo in ("pmd-pd", "pmd-pd-zero"):
        schedule = inner if inner == "theorem" else int(inner)
        config = PmdPdConfig(
            macro_steps=iterations,
            eta_prime=eta_prime,
            alpha=_numeric_or_theorem(alpha),
            eta=_numeric_or_theorem(eta),
            inner_schedule=schedule,
            xi=xi,
        )
        if algo == "pmd-pd-zero":
            return run_pmd_pd_zero(model, config)
        return run_pmd_pd(model, config)
    config = BaselineConfig(
        algorithm=algo,
        iterations=iterations,
        eta=float(eta) if eta != "theorem" else 1.0,
        eta_prime=eta_prime,
        xi=xi,
        zeta=zeta,
    )
    return run_baseline(model, config)


def _cmd_solve(args) -> int:
    model = read_model(args.model)
    gt = _load_ground_truth(model, args)
    iterations = args.iterations if args.iterations is not None else args.macro_steps
    xi = args.xi if args.xi is not None else (gt.xi if gt.xi > 0 else None)
    history = _run_algorithm(
        model,
        args.algo,
        iterations,
        eta=args.eta,
        eta_prime=args.eta_prime,
        alpha=args.alpha,
        inner=args.inner,
        xi=xi,
        zeta=args.zeta,
    )
    out = args.output or Path(f"{args.algo}.csv")
    out = _resolve(args.output_dir, out)
    write_history_csv(history, out, gt.optimal_value)
    metrics = compute_metrics(history, gt)
    print(
        f"wrote {out}: final avg gap {format_float(metrics.avg_gap[-1])}, "
        f"max avg violation {format_float(metrics.avg_violation_pos[-1].max() if model.num_constraints else 0.0)}"
    )
    return 0


def _compare_job(model_path: str, algo: str, iterations: int, eta: float,
                 eta_prime: float, xi: float | None) -> RunHistory:
    model = read_model(model_path)
    return _run_algorithm(
        model, algo, iterations, eta=eta, eta_prime=eta_prime, inner=1, xi=xi
    )


def _cmd_compare(args) -> int:
    model = read_model(args.model)
    gt = solve_lp(model)
    if gt.status != "optimal":
        raise ModelError("model is infeasible; nothing to compare")
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    xi = gt.xi if gt.xi > 0 else None
    jobs = [
        (str(args.model), algo, args.iterations, args.eta, args.eta_prime, xi)
        for algo in algos
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            histories = list(pool.map(_compare_job, *zip(*jobs)))
    else:
        histories = [_compare_job(*job) for job in jobs]

    out_dir = args.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    all_metrics = {}
    for algo, history in zip(algos, histories):
        write_history_csv(history, out_dir / f"{algo}.csv", gt.optimal_value)
        metrics = compute_metrics(history, gt)
        all_metrics[algo] = metrics
        try:
            gap_slope = format_float(loglog_slope(metrics.steps, metrics.avg_gap).slope)
        except FitError:
            gap_slope = "nan"
        try:
            vio_slope = format_float(
                loglog_slope(metrics.steps, metrics.avg_violation_pos.max(axis=1)).slope
            )
        except FitError:
            vio_slope = "nan"
        final_violation = (
            metrics.avg_violation_pos[-1].max() if model.num_constraints else 0.0
        )
        summary_rows.append(
            [
                algo,
                format_float(metrics.avg_gap[-1]),
                format_float(final_violation),
                gap_slope,
                vio_slope,
            ]
        )

    header = ["algorithm", "final_avg_gap", "final_avg_violation_pos", "gap_slope", "violation_slope"]
    summary_path = out_dir / "summary.csv"
    summary_path.write_text(
        "\n".join([",".join(header)] + [",".join(r) for r in summary_rows]) + "\n",
        encoding="utf-8",
    )
    widths = [max(len(h), *(len(r[i]) for r in summary_rows)) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in summary_rows:
        print("  ".join(x.ljust(w) for x, w in zip(row, widths)))
    print(f"wrote {summary_path}")

    if not args.no_plots:
        _write_plots(all_metrics, out_dir)
    return 0


def _write_plots(all_metrics: dict, out_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for scale in ("linear", "loglog"):
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        for algo, metrics in all_metrics.items():
            axes[0].plot(metrics.steps, metrics.avg_gap, label=algo)
            axes[1].plot(metrics.steps, metrics.avg_violation_pos.max(axis=1), label=algo)
        for ax, title in zip(axes, ("average optimality gap", "average violation (positive part)")):
            ax.set_xlabel("iteration")
            ax.set_title(title)
            if scale == "loglog":
                ax.set_xscale("log")
                ax.set_yscale("log")
            ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / f"compare_{scale}.svg")
        plt.close(fig)
        print(f"wrote {out_dir / f'compare_{scale}.svg'}")


def _cmd_sample_run(args) -> int:
    model = read_model(args.model)
    gt = solve_lp(model)
    if gt.status != "optimal":
        raise ModelError("model is infeasible")
    config = schedule_params(
        args.epsilon,
        args.delta,
        model.gamma,
        model.num_constraints,
        macro_steps=args.macro_steps,
        seed=args.seed,
    )
    history = run_pmd_pd_a(model, config, seed=args.seed)
    out = args.output or Path("pmd-pd-a.csv")
    out = _resolve(args.output_dir, out)
    write_history_csv(history, out, gt.optimal_value)
    print(
        f"wrote {out}: {history.steps[-1].queries_cumulative} generative queries "
        f"(budget sum {total_query_budget(history)})"
    )
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "ground-truth": _cmd_ground_truth,
    "solve": _cmd_solve,
    "compare": _cmd_compare,
    "sample-run": _cmd_sample_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else _USAGE_ERROR
    try:
        return _COMMANDS[args.command](args)
    except LemmaViolation as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return _ASSERTION_ERROR
    except (ModelError, ConfigurationError, ParameterError, FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
