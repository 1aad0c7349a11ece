"""Exact CMDP solutions via the occupancy-measure LP, plus independent oracles.

The constrained problem is linear in the discounted state-action visitation
distribution: minimize <d, c0> / (1-gamma) over the flow polytope subject to
<d, c_i> / (1-gamma) <= 0.  A self-contained dense two-phase simplex with
Bland's rule solves it deterministically; optimal duals come from the final
basis.  A dual golden-section oracle (single constraint) and the Slater
margin LP cross-validate the solver.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exact import EvaluationError
from .model import CmdpModel, ModelError, dumps_document
from .policies import ParameterError, TabularPolicy, uniform_policy

_PIVOT_TOL = 1e-9
_FEAS_TOL = 1e-7
_MAX_PIVOTS = 200_000


class SimplexError(RuntimeError):
    """Raised when the simplex stalls, cycles past its cap, or the recovered
    solution fails feasibility checks."""


@dataclass(frozen=True)
class GroundTruth:
    """Exact solution summary of one CMDP instance."""

    optimal_value: float
    d_star: np.ndarray
    lambda_star: np.ndarray
    xi: float
    status: str  # "optimal" | "infeasible"


def _pivot(tableau: np.ndarray, z_row: np.ndarray, basis: list[int], row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    for i in range(tableau.shape[0]):
        if i != row and tableau[i, col] != 0.0:
            tableau[i] -= tableau[i, col] * tableau[row]
    if z_row[col] != 0.0:
        z_row -= z_row[col] * tableau[row]
    basis[row] = col


def _bland_iterate(
    tableau: np.ndarray, z_row: np.ndarray, basis: list[int], num_cols: int
) -> None:
    """Run Bland's-rule pivoting to optimality on the current z-row."""
    for _ in range(_MAX_PIVOTS):
        entering = -1
        for j in range(num_cols):
            if z_row[j] < -_PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            return
        column = tableau[:, entering]
        rhs = tableau[:, -1]
        best_ratio = math.inf
        leaving = -1
        for i in range(tableau.shape[0]):
            if column[i] > _PIVOT_TOL:
                ratio = rhs[i] / column[i]
                if ratio < best_ratio - 1e-12 or (
                    abs(ratio - best_ratio) <= 1e-12
                    and (leaving < 0 or basis[i] < basis[leaving])
                ):
                    best_ratio = ratio
                    leaving = i
        if leaving < 0:
            raise SimplexError("LP is unbounded")
        _pivot(tableau, z_row, basis, leaving, entering)
    raise SimplexError("pivot limit exceeded")


def _two_phase_simplex(
    c: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, float, np.ndarray, str]:
    """min c.x s.t. a x = b, x >= 0.  Returns (x, value, duals, status).

    ``b`` may have any signs (rows are normalized internally).  Duals are
    recomputed from the final basis against the original data, so tableau
    drift does not contaminate them; redundant rows dropped in phase 1 get a
    zero dual.
    """
    num_rows, num_vars = a.shape
    a = a.copy()
    b = b.copy()
    negative = b < 0
    a[negative] *= -1.0
    b[negative] *= -1.0

    tableau = np.hstack([a, np.eye(num_rows), b[:, None]])
    basis = [num_vars + i for i in range(num_rows)]
    kept_rows = list(range(num_rows))

    # Phase 1: minimize the artificial mass.
    z_row = np.zeros(num_vars + num_rows + 1)
    z_row[:num_vars] = -tableau[:, :num_vars].sum(axis=0)
    z_row[-1] = -b.sum()
    _bland_iterate(tableau, z_row, basis, num_vars)
    artificial_mass = sum(
        tableau[i, -1] for i in range(tableau.shape[0]) if basis[i] >= num_vars
    )
    if artificial_mass > _FEAS_TOL:
        return np.zeros(num_vars), math.nan, np.zeros(num_rows), "infeasible"

    # Drive leftover (degenerate) artificials out of the basis or drop their rows.
    drop: list[int] = []
    for i in range(tableau.shape[0]):
        if basis[i] < num_vars:
            continue
        pivot_col = -1
        for j in range(num_vars):
            if abs(tableau[i, j]) > _PIVOT_TOL:
                pivot_col = j
                break
        if pivot_col >= 0:
            _pivot(tableau, z_row, basis, i, pivot_col)
        else:
            drop.append(i)
    if drop:
        keep = [i for i in range(tableau.shape[0]) if i not in drop]
        tableau = tableau[keep]
        basis = [basis[i] for i in keep]
        kept_rows = [kept_rows[i] for i in keep]

    # Phase 2 on the real objective, artificial columns excluded.
    tableau = np.hstack([tableau[:, :num_vars], tableau[:, -1:]])
    z_row = np.zeros(num_vars + 1)
    z_row[:num_vars] = c
    for i, var in enumerate(basis):
        if c[var] != 0.0:
            z_row -= c[var] * tableau[i]
    _bland_iterate(tableau, z_row, basis, num_vars)

    # Recover the solution and duals from the basis using pristine data.
    a_kept = a[kept_rows][:, :num_vars]
    b_kept = b[kept_rows]
    basis_matrix = a_kept[:, basis]
    x = np.zeros(num_vars)
    x[basis] = np.linalg.solve(basis_matrix, b_kept)
    y_kept = np.linalg.solve(basis_matrix.T, c[basis])
    duals = np.zeros(num_rows)
    sign = np.where(negative, -1.0, 1.0)
    for local, original in enumerate(kept_rows):
        duals[original] = y_kept[local] * sign[original]

    if x.min() < -1e-7:
        raise SimplexError(f"negative basic variable {x.min():.3e}")
    residual = np.abs(a @ x - b).max() if num_rows else 0.0
    if residual > 1e-7 * max(1.0, float(np.abs(b).max())):
        raise SimplexError(f"constraint residual {residual:.3e} after solve")
    return np.maximum(x, 0.0), float(c @ x), duals, "optimal"


def _flow_matrix(model: CmdpModel) -> tuple[np.ndarray, np.ndarray]:
    """Flow equality rows over flattened d(s, a):
    sum_a d(s,a) - gamma * sum_{s',a'} P(s|s',a') d(s',a') = (1-gamma) rho(s)."""
    num_states, num_actions = model.num_states, model.num_actions
    membership = np.repeat(np.eye(num_states), num_actions, axis=1)
    inflow = model.transition.transpose(2, 0, 1).reshape(num_states, -1)
    return membership - model.gamma * inflow, (1.0 - model.gamma) * model.rho


def solve_lp(model: CmdpModel) -> GroundTruth:
    """Solve the occupancy-measure LP exactly.

    Returns the optimal objective value, the optimal visitation distribution,
    the optimal duals of the constraint rows, and the Slater margin.  Status
    is "infeasible" when no visitation distribution satisfies the constraints.
    """
    num_states, num_actions, m = model.num_states, model.num_actions, model.num_constraints
    n = num_states * num_actions
    scale = 1.0 / (1.0 - model.gamma)
    flow, flow_rhs = _flow_matrix(model)

    a = np.zeros((num_states + m, n + m))
    a[:num_states, :n] = flow
    for i in range(m):
        a[num_states + i, :n] = model.constraint_costs[i].reshape(-1) * scale
        a[num_states + i, n + i] = 1.0
    b = np.concatenate([flow_rhs, np.zeros(m)])
    c = np.concatenate([model.objective_cost.reshape(-1) * scale, np.zeros(m)])

    x, value, duals, status = _two_phase_simplex(c, a, b)
    xi = slater_margin(model)
    if status != "optimal":
        return GroundTruth(
            optimal_value=math.nan,
            d_star=np.zeros((num_states, num_actions)),
            lambda_star=np.zeros(m),
            xi=xi,
            status="infeasible",
        )
    # The Lagrangian multiplier of a <= row in a minimization is the negated
    # equality-form dual; clip roundoff below zero.
    lambda_star = np.maximum(0.0, -duals[num_states:])
    return GroundTruth(
        optimal_value=value,
        d_star=x[:n].reshape(num_states, num_actions),
        lambda_star=lambda_star,
        xi=xi,
        status="optimal",
    )


def slater_margin(model: CmdpModel) -> float:
    """Largest t such that some visitation distribution has every constraint
    value at most -t.  Nonpositive values mean no strictly feasible policy;
    models without constraints have an infinite margin."""
    m = model.num_constraints
    if m == 0:
        return math.inf
    num_states, num_actions = model.num_states, model.num_actions
    n = num_states * num_actions
    scale = 1.0 / (1.0 - model.gamma)
    flow, flow_rhs = _flow_matrix(model)

    # Variables: d (n), t+ , t-, slack (m).  Maximize t = t+ - t-.
    a = np.zeros((num_states + m, n + 2 + m))
    a[:num_states, :n] = flow
    for i in range(m):
        a[num_states + i, :n] = model.constraint_costs[i].reshape(-1) * scale
        a[num_states + i, n] = 1.0
        a[num_states + i, n + 1] = -1.0
        a[num_states + i, n + 2 + i] = 1.0
    b = np.concatenate([flow_rhs, np.zeros(m)])
    c = np.zeros(n + 2 + m)
    c[n] = -1.0
    c[n + 1] = 1.0
    x, _, _, status = _two_phase_simplex(c, a, b)
    if status != "optimal":
        raise SimplexError("slater-margin LP unexpectedly infeasible")
    return float(x[n] - x[n + 1])


def policy_from_occupancy(d: np.ndarray) -> TabularPolicy:
    """Recover a policy from a visitation distribution.

    Conditionals are d(s,a)/d(s); states without mass get the uniform row
    (their choice does not affect any value).  Rows are floored slightly so
    the policy stays strictly positive in the log domain.
    """
    d = np.asarray(d, dtype=np.float64)
    num_states, num_actions = d.shape
    probs = np.full((num_states, num_actions), 1.0 / num_actions)
    marginal = d.sum(axis=1)
    for s in range(num_states):
        if marginal[s] > 1e-12:
            probs[s] = d[s] / marginal[s]
    probs = np.maximum(probs, 1e-15)
    probs /= probs.sum(axis=1, keepdims=True)
    return TabularPolicy.from_probs(probs)


def _mdp_min_value(
    model: CmdpModel, cost: np.ndarray, tol: float = 1e-12
) -> tuple[float, np.ndarray]:
    """Optimal (minimal) value of the unconstrained MDP with the given cost.

    Value iteration to ``tol``, then an exact greedy-policy solve, which
    recovers the optimum to machine precision.
    """
    gamma = model.gamma
    transition = model.transition
    v = np.zeros(model.num_states)
    scale = max(1.0, float(np.abs(cost).max()))
    max_iters = 1000
    if gamma > 0.0:
        needed = math.log(tol * (1.0 - gamma) / (4.0 * scale)) / math.log(gamma)
        max_iters = max(max_iters, int(needed) + 10)
    for _ in range(max_iters):
        q = cost + gamma * np.einsum("sat,t->sa", transition, v)
        v_new = q.min(axis=1)
        drift = float(np.abs(v_new - v).max())
        v = v_new
        if drift <= tol:
            break
    else:
        raise EvaluationError("value iteration failed to converge")
    greedy = q.argmin(axis=1)
    kernel = transition[np.arange(model.num_states), greedy]
    cost_g = cost[np.arange(model.num_states), greedy]
    v_exact = np.linalg.solve(np.eye(model.num_states) - gamma * kernel, cost_g)
    return float(model.rho @ v_exact), v_exact


def dual_bisection(model: CmdpModel) -> tuple[float, float]:
    """Independent single-constraint oracle: maximize the concave dual.

    The dual function G(lambda) = min_pi V_{c0 + lambda c1}(rho) is piecewise
    linear and concave, so a golden-section search over a bracket derived
    from a feasibility probe finds its maximum; by strong duality that equals
    the LP optimum.  Returns (max G, argmax lambda).
    """
    if model.num_constraints != 1:
        raise ParameterError("dual_bisection requires exactly one constraint")
    c0 = model.objective_cost
    c1 = model.constraint_costs[0]
    best_margin, _ = _mdp_min_value(model, c1)
    xi_probe = -best_margin
    if xi_probe <= 1e-12:
        raise SimplexError(
            f"feasibility probe found no strictly feasible policy (margin {xi_probe:.3e})"
        )

    def g(lam: float) -> float:
        return _mdp_min_value(model, c0 + lam * c1)[0]

    upper = 4.0 / (xi_probe * (1.0 - model.gamma))
    for attempt in range(2):
        lam = _golden_max(g, 0.0, upper, tol=1e-9)
        if upper - lam > 1e-6 * max(1.0, upper):
            return g(lam), lam
        upper *= 2.0
    raise SimplexError("dual bracket failure: maximizer pinned at the upper end")


def _golden_max(fn, lo: float, hi: float, tol: float) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


# --- ground-truth file I/O ---------------------------------------------------


def write_ground_truth(gt: GroundTruth, path: str | Path) -> None:
    doc = {
        "status": gt.status,
        "optimal_value": gt.optimal_value if gt.status == "optimal" else 0.0,
        "d_star": gt.d_star,
        "lambda_star": gt.lambda_star,
        "xi": gt.xi if math.isfinite(gt.xi) else "inf",
    }
    Path(path).write_text(dumps_document(doc), encoding="utf-8")


def read_ground_truth(path: str | Path) -> GroundTruth:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("status", "optimal_value", "d_star", "lambda_star", "xi"):
        if key not in doc:
            raise ModelError(f"{path}: missing key {key!r}")
    xi = doc["xi"]
    status = str(doc["status"])
    return GroundTruth(
        optimal_value=float(doc["optimal_value"]) if status == "optimal" else math.nan,
        d_star=np.asarray(doc["d_star"], dtype=np.float64),
        lambda_star=np.asarray(doc["lambda_star"], dtype=np.float64),
        xi=math.inf if xi == "inf" else float(xi),
        status=status,
    )
