"""Per-macro-step run records shared by all solvers, plus the CSV schema.

One CSV row per macro step:

    k, T_cum, t_k, v0, v1..vm, lambda1..lambdam, avg_gap, avg_violation_1..m

Sample-based runs append ``v_hat_1..m`` and ``queries_cum``.  Every number is
written with 17 significant digits so identical runs produce byte-identical
files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def format_float(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class StepRecord:
    """State of a run after macro step k (1-based): the policy produced by the
    step, its exact (or post-hoc exact) values, and the updated duals."""

    k: int
    inner_steps: int
    cumulative_inner: int
    objective_value: float
    constraint_values: np.ndarray
    duals: np.ndarray
    estimated_constraint_values: np.ndarray | None = None
    queries_cumulative: int | None = None
    budgets: tuple[int, int, int, int] | None = None  # (M_V, N_V, M_Q, N_Q)


@dataclass
class RunHistory:
    """Write-once record of one solver run."""

    algorithm: str
    steps: list[StepRecord] = field(default_factory=list)
    policies: list[np.ndarray] = field(default_factory=list)  # log-prob snapshots
    initial_budget: tuple[int, int] | None = None  # (M_V, N_V) for the start estimate

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def num_constraints(self) -> int:
        return len(self.steps[0].constraint_values) if self.steps else 0

    def objective_series(self) -> np.ndarray:
        return np.array([s.objective_value for s in self.steps])

    def constraint_series(self) -> np.ndarray:
        return np.array([s.constraint_values for s in self.steps]).reshape(
            len(self.steps), self.num_constraints
        )

    def dual_series(self) -> np.ndarray:
        return np.array([s.duals for s in self.steps]).reshape(
            len(self.steps), self.num_constraints
        )

    def cumulative_inner_series(self) -> np.ndarray:
        return np.array([s.cumulative_inner for s in self.steps], dtype=np.int64)

    def running_average_objective(self) -> np.ndarray:
        v = self.objective_series()
        return np.cumsum(v) / np.arange(1, len(v) + 1)

    def running_average_constraints(self) -> np.ndarray:
        v = self.constraint_series()
        return np.cumsum(v, axis=0) / np.arange(1, len(v) + 1)[:, None]

    def average_values(self) -> tuple[float, np.ndarray]:
        """Values of the uniform policy mixture over all recorded steps.

        Values are linear in the occupancy measure, so the mixture's value is
        exactly the average of the per-step values; no stationary policy is
        synthesized.
        """
        if not self.steps:
            raise ValueError("empty history")
        return (
            float(self.running_average_objective()[-1]),
            self.running_average_constraints()[-1],
        )


def history_csv_text(history: RunHistory, optimal_value: float) -> str:
    """Render a history as CSV; ``optimal_value`` anchors the gap column."""
    m = history.num_constraints
    sample_mode = any(s.estimated_constraint_values is not None for s in history.steps)
    header = ["k", "T_cum", "t_k", "v0"]
    header += [f"v{i}" for i in range(1, m + 1)]
    header += [f"lambda{i}" for i in range(1, m + 1)]
    header += ["avg_gap"] + [f"avg_violation_{i}" for i in range(1, m + 1)]
    if sample_mode:
        header += [f"v_hat_{i}" for i in range(1, m + 1)] + ["queries_cum"]
    lines = [",".join(header)]
    avg_v0 = history.running_average_objective()
    avg_vc = history.running_average_constraints()
    for idx, step in enumerate(history.steps):
        row = [
            str(step.k),
            str(step.cumulative_inner),
            str(step.inner_steps),
            format_float(step.objective_value),
        ]
        row += [format_float(x) for x in step.constraint_values]
        row += [format_float(x) for x in step.duals]
        row.append(format_float(avg_v0[idx] - optimal_value))
        row += [format_float(x) for x in avg_vc[idx]]
        if sample_mode:
            est = step.estimated_constraint_values
            if est is None:
                est = np.full(m, np.nan)
            row += [format_float(x) for x in est]
            row.append(str(step.queries_cumulative if step.queries_cumulative is not None else 0))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_history_csv(
    history: RunHistory, path: str | Path, optimal_value: float
) -> None:
    Path(path).write_text(history_csv_text(history, optimal_value), encoding="utf-8")
