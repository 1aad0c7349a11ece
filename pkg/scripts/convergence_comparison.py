#!/usr/bin/env python3
"""Convergence-rate comparison on a random constrained MDP.

Builds a 20-state / 10-action instance from uniform rewards and utilities
(utility threshold 3), runs the mirror-descent primal-dual solver against the
projected primal-dual and rectified-primal baselines with one inner step and
unit step sizes, and writes per-algorithm CSVs, a summary table, and SVG
plots (linear and log-log).
"""

import argparse
from pathlib import Path

from cmdpkit.cli import main as cli_main
from cmdpkit.model import RandomCmdpSpec, generate_random_max_form, write_model


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--iterations", type=int, default=2000)
    parser.add_argument("--threshold", type=float, default=3.0)
    parser.add_argument("--output-dir", type=Path, default=Path("results/comparison"))
    args = parser.parse_args()

    args.output_dir.mkdir(parents=True, exist_ok=True)
    spec = RandomCmdpSpec(
        num_states=20, num_actions=10, num_constraints=1, gamma=0.8, seed=args.seed
    )
    model = generate_random_max_form(spec, [args.threshold])
    model_path = args.output_dir / "instance.json"
    write_model(model, model_path)
    print(f"instance written to {model_path}")

    code = cli_main(
        [
            "--output-dir", str(args.output_dir),
            "compare", str(model_path),
            "--algos", "pmd-pd,npg-pd,crpo",
            "--iterations", str(args.iterations),
        ]
    )
    raise SystemExit(code)


if __name__ == "__main__":
    main()
