#!/usr/bin/env python3
"""Query-count scaling of the sample-based solver.

Runs the generative-model solver at a sweep of target precisions on a small
instance and reports the exact post-hoc gap/violation of the recorded
policies together with total generative-model queries, whose growth tracks
the 1/eps^3 schedule (up to the log factors in the budgets).
"""

import argparse

from cmdpkit.lp import solve_lp
from cmdpkit.model import RandomCmdpSpec, generate_random
from cmdpkit.sampling import run_pmd_pd_a, schedule_params


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epsilons", type=float, nargs="+", default=[0.3, 0.15, 0.075])
    parser.add_argument("--delta", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--instance-seed", type=int, default=1)
    parser.add_argument("--gamma", type=float, default=0.33)
    args = parser.parse_args()

    model = generate_random(
        RandomCmdpSpec(
            num_states=5, num_actions=3, num_constraints=1,
            gamma=args.gamma, seed=args.instance_seed,
        )
    )
    gt = solve_lp(model)
    if gt.status != "optimal":
        raise SystemExit("instance is infeasible; pick another seed")

    print(f"{'eps':>7} {'K':>4} {'queries':>12} {'avg gap':>10} {'violation+':>11}")
    previous = None
    for eps in args.epsilons:
        config = schedule_params(
            eps, args.delta, model.gamma, model.num_constraints, seed=args.seed
        )
        history = run_pmd_pd_a(model, config, seed=args.seed)
        queries = history.steps[-1].queries_cumulative
        gap = history.running_average_objective()[-1] - gt.optimal_value
        violation = max(0.0, history.running_average_constraints()[-1].max())
        growth = "" if previous is None else f"  (x{queries / previous:.1f})"
        print(f"{eps:>7.3g} {config.macro_steps:>4} {queries:>12} {gap:>10.4f} {violation:>11.4f}{growth}")
        previous = queries


if __name__ == "__main__":
    main()
