"""Convergence metrics and log-log slope fits for recorded runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .history import RunHistory
from .lp import GroundTruth


class FitError(ValueError):
    """Raised when a slope fit has too few positive points."""


@dataclass(frozen=True)
class MetricSeries:
    """Running-average optimality gap and constraint violations per step.

    ``steps`` is the macro-step axis and ``cumulative_inner`` the total
    inner-iteration axis (they coincide when one inner step per macro step is
    used).  Violations are recorded both signed and as positive parts.
    """

    steps: np.ndarray
    cumulative_inner: np.ndarray
    avg_gap: np.ndarray
    avg_violation: np.ndarray  # (T, m) signed
    avg_violation_pos: np.ndarray  # (T, m)


def compute_metrics(history: RunHistory, gt: GroundTruth) -> MetricSeries:
    """Per-step running averages anchored at the exact optimal value."""
    if gt.status != "optimal":
        raise ValueError("metrics require an optimal ground truth")
    if not len(history):
        raise ValueError("empty history")
    avg_v0 = history.running_average_objective()
    avg_vc = history.running_average_constraints()
    return MetricSeries(
        steps=np.arange(1, len(history) + 1),
        cumulative_inner=history.cumulative_inner_series(),
        avg_gap=avg_v0 - gt.optimal_value,
        avg_violation=avg_vc,
        avg_violation_pos=np.maximum(avg_vc, 0.0),
    )


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    window: tuple[float, float]
    r_squared: float


def loglog_slope(
    t: np.ndarray, y: np.ndarray, window_fraction: float = 0.5
) -> SlopeFit:
    """Least-squares slope of log10(y) against log10(t).

    Only positive ordinates can be fit; the fit uses the final
    ``window_fraction`` of the positive points to skip transients.  At least
    10 positive points must fall inside the window.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.shape != y.shape:
        raise FitError("t and y must have equal length")
    positive = (y > 0) & (t > 0)
    t_pos, y_pos = t[positive], y[positive]
    start = int(np.floor(len(t_pos) * (1.0 - window_fraction)))
    t_win, y_win = t_pos[start:], y_pos[start:]
    if len(t_win) < 10:
        raise FitError(
            f"need at least 10 positive points in the fit window, have {len(t_win)}"
        )
    log_t = np.log10(t_win)
    log_y = np.log10(y_win)
    slope, intercept = np.polyfit(log_t, log_y, 1)
    fitted = slope * log_t + intercept
    ss_res = float(((log_y - fitted) ** 2).sum())
    ss_tot = float(((log_y - log_y.mean()) ** 2).sum())
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(
        slope=float(slope),
        intercept=float(intercept),
        window=(float(t_win[0]), float(t_win[-1])),
        r_squared=r_squared,
    )
