#!/usr/bin/env python3
"""Audit the finite-K guarantees of the exact-oracle solver.

For each seed and each macro-step budget K, runs the solver with the derived
step sizes and inner-loop schedule, then prints the achieved running-average
gap and violation next to their a-priori bounds.  Every per-step structural
inequality of the dual update is asserted inside the run itself, so a
completed run certifies them.
"""

import argparse
import math

import numpy as np

from cmdpkit.lp import solve_lp
from cmdpkit.model import RandomCmdpSpec, generate_random
from cmdpkit.pmdpd import PmdPdConfig, run_pmd_pd, theorem_params


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    parser.add_argument("--macro-steps", type=int, nargs="+", default=[10, 50, 100])
    parser.add_argument("--states", type=int, default=20)
    parser.add_argument("--actions", type=int, default=10)
    parser.add_argument("--gamma", type=float, default=0.8)
    args = parser.parse_args()

    header = f"{'seed':>4} {'K':>4} {'avg gap':>12} {'gap bound':>12} {'violation+':>12} {'vio bound':>12}"
    print(header)
    print("-" * len(header))
    for seed in args.seeds:
        model = generate_random(
            RandomCmdpSpec(
                num_states=args.states,
                num_actions=args.actions,
                num_constraints=1,
                gamma=args.gamma,
                seed=seed,
            )
        )
        gt = solve_lp(model)
        if gt.status != "optimal":
            print(f"{seed:>4} infeasible instance, skipped")
            continue
        lam_norm = float(np.linalg.norm(gt.lambda_star))
        for K in args.macro_steps:
            history = run_pmd_pd(
                model, PmdPdConfig(macro_steps=K), lambda_star=gt.lambda_star
            )
            params = theorem_params(model, 1.0, K, 0.0)
            one_minus = 1.0 - model.gamma
            gap_bound = (
                params.alpha * math.log(model.num_actions) / one_minus
                + 1.0
                + 2.0 / (3.0 * one_minus)
            ) / K
            vio_bound = (
                lam_norm
                + math.sqrt(
                    lam_norm**2
                    + 2 * params.alpha * math.log(model.num_actions) / one_minus
                    + 2 * (1 + 2 / (3 * one_minus))
                    + 2 / one_minus**2
                )
            ) / K
            gap = history.running_average_objective()[-1] - gt.optimal_value
            violation = max(0.0, history.running_average_constraints()[-1].max())
            print(
                f"{seed:>4} {K:>4} {gap:>12.6f} {gap_bound:>12.6f} "
                f"{violation:>12.6f} {vio_bound:>12.6f}"
            )


if __name__ == "__main__":
    main()
