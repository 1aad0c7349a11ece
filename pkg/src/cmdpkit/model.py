"""Finite CMDP data model: validation, random generation, max-form conversion, file I/O.

Models are kept in cost-minimization form: minimize the objective value
subject to every constraint value being at most zero.  Conversions from the
reward/utility ("max form") convention are exact and recorded on the model so
results can be reported in the original units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ROW_SUM_TOL = 1e-12
DEFAULT_COST_SCALE = 1.0

_MODEL_KEYS = (
    "num_states",
    "num_actions",
    "gamma",
    "rho",
    "transition",
    "objective_cost",
    "constraint_costs",
    "cost_scale",
)


class ModelError(ValueError):
    """Raised for malformed models, model files, or conversion inputs."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CmdpModel:
    """Finite discounted CMDP in cost-minimization form.

    Attributes:
        transition: array of shape (S, A, S); ``transition[s, a]`` is the
            next-state distribution for taking action ``a`` in state ``s``.
        objective_cost: array of shape (S, A), entries in
            ``[-cost_scale, cost_scale]``.
        constraint_costs: array of shape (m, S, A); the feasibility
            requirement is that each constraint cost has nonpositive value.
        rho: start-state distribution of shape (S,).
        gamma: discount factor in [0, 1).
        cost_scale: bound on the magnitude of all cost entries.
        max_form_thresholds: original thresholds when the model was built by
            :func:`from_max_form`; kept for reporting only and not serialized.
    """

    transition: np.ndarray
    objective_cost: np.ndarray
    constraint_costs: np.ndarray
    rho: np.ndarray
    gamma: float
    cost_scale: float = DEFAULT_COST_SCALE
    max_form_thresholds: tuple[float, ...] | None = None

    def __post_init__(self):
        transition = _readonly(self.transition)
        objective = _readonly(self.objective_cost)
        rho = _readonly(self.rho)
        if transition.ndim != 3:
            raise ModelError("transition must have shape (S, A, S)")
        num_states, num_actions, num_next = transition.shape
        if num_next != num_states:
            raise ModelError(
                f"transition maps to {num_next} states but the model has {num_states}"
            )
        if objective.shape != (num_states, num_actions):
            raise ModelError(
                f"objective_cost shape {objective.shape} does not match "
                f"({num_states}, {num_actions})"
            )
        constraints = np.asarray(self.constraint_costs, dtype=np.float64)
        if constraints.size == 0:
            constraints = np.zeros((0, num_states, num_actions))
        if constraints.ndim != 3 or constraints.shape[1:] != (num_states, num_actions):
            raise ModelError(
                f"constraint_costs shape {constraints.shape} does not match "
                f"(m, {num_states}, {num_actions})"
            )
        if rho.shape != (num_states,):
            raise ModelError(f"rho shape {rho.shape} does not match ({num_states},)")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "objective_cost", objective)
        object.__setattr__(self, "constraint_costs", _readonly(constraints))
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "cost_scale", float(self.cost_scale))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.constraint_costs.shape[0]

    def shifted_constraints(self, shift: float) -> "CmdpModel":
        """Return a copy with every constraint cost shifted by a constant.

        A constant cost ``shift`` contributes ``shift / (1 - gamma)`` to every
        policy's value, so shifting by ``delta * (1 - gamma)`` tightens each
        constraint from ``V <= 0`` to ``V <= -delta`` exactly.
        """
        if self.num_constraints == 0:
            return self
        shifted = self.constraint_costs + shift
        scale = max(self.cost_scale, float(np.abs(shifted).max()))
        return CmdpModel(
            transition=self.transition,
            objective_cost=self.objective_cost,
            constraint_costs=shifted,
            rho=self.rho,
            gamma=self.gamma,
            cost_scale=scale,
            max_form_thresholds=self.max_form_thresholds,
        )


def validate(model: CmdpModel) -> list[str]:
    """Check every model invariant; return one message per breach.

    An empty list means the model is valid.  Messages name the offending
    location ``(s, a)`` and the magnitude of the breach.
    """
    problems: list[str] = []
    if not (0.0 <= model.gamma < 1.0):
        problems.append(f"gamma must lie in [0, 1): got {model.gamma!r}")
    if not math.isfinite(model.cost_scale) or model.cost_scale <= 0:
        problems.append(f"cost_scale must be a positive real: got {model.cost_scale!r}")

    rho = model.rho
    if np.any(rho < 0):
        s = int(np.argmin(rho))
        problems.append(f"rho has negative entry {rho[s]!r} at state {s}")
    rho_gap = abs(float(rho.sum()) - 1.0)
    if rho_gap > ROW_SUM_TOL:
        problems.append(f"rho sums to {float(rho.sum())!r} (off by {rho_gap:.3e})")

    trans = model.transition
    if np.any(trans < 0):
        s, a, t = np.unravel_index(int(np.argmin(trans)), trans.shape)
        problems.append(
            f"transition({s},{a}) has negative entry {trans[s, a, t]!r} for next state {t}"
        )
    row_sums = trans.sum(axis=2)
    gaps = np.abs(row_sums - 1.0)
    if np.any(gaps > ROW_SUM_TOL):
        s, a = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
        problems.append(
            f"transition row ({s},{a}) sums to {row_sums[s, a]!r} "
            f"(off by {gaps[s, a]:.3e})"
        )

    bound = model.cost_scale * (1.0 + 1e-12) + 1e-15
    for name, cost in [("objective_cost", model.objective_cost[None])] + [
        (f"constraint_cost[{i}]", model.constraint_costs[i][None])
        for i in range(model.num_constraints)
    ]:
        cost = cost[0]
        if not np.all(np.isfinite(cost)):
            s, a = np.unravel_index(int(np.argmax(~np.isfinite(cost))), cost.shape)
            problems.append(f"{name}({s},{a}) is not finite")
            continue
        excess = np.abs(cost) - bound
        if np.any(excess > 0):
            s, a = np.unravel_index(int(np.argmax(excess)), excess.shape)
            problems.append(
                f"{name}({s},{a}) = {cost[s, a]!r} exceeds cost_scale "
                f"{model.cost_scale!r} by {excess[s, a]:.3e}"
            )
    return problems


@dataclass(frozen=True)
class RandomCmdpSpec:
    """Parameters for seeded random instance generation."""

    num_states: int
    num_actions: int
    num_constraints: int = 1
    gamma: float = 0.8
    seed: int = 0
    cost_low: float = -1.0
    cost_high: float = 1.0

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1 or self.num_constraints < 0:
            raise ModelError("sizes must be positive")
        if not (0.0 <= self.gamma < 1.0):
            raise ModelError(f"gamma must lie in [0, 1): got {self.gamma!r}")
        if not (self.cost_low <= self.cost_high):
            raise ModelError("cost_low must not exceed cost_high")


def generate_random(spec: RandomCmdpSpec) -> CmdpModel:
    """Draw a random CMDP instance, deterministic in ``spec.seed``.

    Transition rows are flat-Dirichlet over the simplex (full support almost
    surely), costs are uniform on ``[cost_low, cost_high]``, and the start
    distribution is uniform.  Draw order is fixed: transitions, then the
    objective cost, then constraint costs.
    """
    rng = np.random.default_rng(spec.seed)
    num_states, num_actions = spec.num_states, spec.num_actions
    transition = rng.dirichlet(
        np.ones(num_states), size=(num_states, num_actions)
    )
    objective = rng.uniform(spec.cost_low, spec.cost_high, (num_states, num_actions))
    constraints = rng.uniform(
        spec.cost_low, spec.cost_high, (spec.num_constraints, num_states, num_actions)
    )
    scale = max(DEFAULT_COST_SCALE, abs(spec.cost_low), abs(spec.cost_high))
    return CmdpModel(
        transition=transition,
        objective_cost=objective,
        constraint_costs=constraints,
        rho=np.full(num_states, 1.0 / num_states),
        gamma=spec.gamma,
        cost_scale=scale,
    )


@dataclass(frozen=True)
class MaxFormSpec:
    """Reward/utility description of a CMDP: maximize reward value subject to
    each utility value being at least its threshold."""

    reward: np.ndarray
    utilities: np.ndarray
    thresholds: tuple[float, ...]

    def __post_init__(self):
        reward = _readonly(self.reward)
        utilities = np.asarray(self.utilities, dtype=np.float64)
        if utilities.size == 0:
            utilities = np.zeros((0,) + reward.shape)
        if reward.ndim != 2 or utilities.ndim != 3 or utilities.shape[1:] != reward.shape:
            raise ModelError("reward must be (S, A) and utilities (m, S, A)")
        if utilities.shape[0] != len(self.thresholds):
            raise ModelError(
                f"{utilities.shape[0]} utilities but {len(self.thresholds)} thresholds"
            )
        if np.any(reward < 0) or np.any(reward > 1):
            raise ModelError("reward entries must lie in [0, 1]")
        if utilities.size and (np.any(utilities < 0) or np.any(utilities > 1)):
            raise ModelError("utility entries must lie in [0, 1]")
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "utilities", _readonly(utilities))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))


def from_max_form(
    spec: MaxFormSpec,
    gamma: float,
    transition: np.ndarray,
    rho: np.ndarray,
) -> CmdpModel:
    """Convert a max-form problem to an equivalent min-form model.

    The objective cost is the negated reward.  Each constraint cost is
    ``(1 - gamma) * threshold - utility``, so its value under any policy is
    ``threshold - utility_value``: the min-form constraint ``V <= 0`` holds
    exactly when the utility value meets its threshold.  ``cost_scale`` is
    enlarged to cover the converted range, and the original thresholds are
    kept on the model for reporting.
    """
    for l in spec.thresholds:
        if not math.isfinite(l):
            raise ModelError(f"threshold {l!r} makes constraint costs non-finite")
    objective = -spec.reward
    if spec.utilities.shape[0]:
        constraints = (1.0 - gamma) * np.asarray(spec.thresholds)[:, None, None] - spec.utilities
    else:
        constraints = np.zeros((0,) + spec.reward.shape)
    if not np.all(np.isfinite(constraints)):
        raise ModelError("converted constraint costs are not finite")
    scale = DEFAULT_COST_SCALE
    if constraints.size:
        scale = max(scale, float(np.abs(constraints).max()))
    scale = max(scale, float(np.abs(objective).max()))
    return CmdpModel(
        transition=transition,
        objective_cost=objective,
        constraint_costs=constraints,
        rho=rho,
        gamma=gamma,
        cost_scale=scale,
        max_form_thresholds=spec.thresholds,
    )


def generate_random_max_form(
    spec: RandomCmdpSpec, thresholds: Sequence[float]
) -> CmdpModel:
    """Random max-form instance (rewards/utilities uniform on [0, 1]),
    converted to min form.  Deterministic in ``spec.seed``."""
    if len(thresholds) != spec.num_constraints:
        raise ModelError(
            f"{len(thresholds)} thresholds for {spec.num_constraints} constraints"
        )
    rng = np.random.default_rng(spec.seed)
    num_states, num_actions = spec.num_states, spec.num_actions
    transition = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    reward = rng.uniform(0.0, 1.0, (num_states, num_actions))
    utilities = rng.uniform(0.0, 1.0, (spec.num_constraints, num_states, num_actions))
    max_spec = MaxFormSpec(reward=reward, utilities=utilities, thresholds=tuple(thresholds))
    return from_max_form(
        max_spec, spec.gamma, transition, np.full(num_states, 1.0 / num_states)
    )


# --- file I/O ---------------------------------------------------------------
#
# JSON with all numbers rendered at 17 significant digits, which round-trips
# IEEE doubles exactly.  The stdlib encoder does not expose float formatting,
# so serialization is a small recursive writer.


def _write_value(value, out: list[str]) -> None:
    if isinstance(value, (bool,)):
        raise ModelError("unexpected boolean in model document")
    if isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ModelError(f"cannot serialize non-finite number {value!r}")
        out.append(format(float(value), ".17g"))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif isinstance(value, np.ndarray):
        _write_value(value.tolist(), out)
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for j, item in enumerate(value):
            if j:
                out.append(", ")
            _write_value(item, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        for j, (key, item) in enumerate(value.items()):
            if j:
                out.append(",\n ")
            out.append(json.dumps(key) + ": ")
            _write_value(item, out)
        out.append("}")
    else:
        raise ModelError(f"cannot serialize {type(value).__name__}")


def dumps_document(doc: dict) -> str:
    out: list[str] = []
    _write_value(doc, out)
    out.append("\n")
    return "".join(out)


def write_model(model: CmdpModel, path: str | Path) -> None:
    """Write a model to a JSON file (17 significant digits per number)."""
    problems = validate(model)
    if problems:
        raise ModelError("refusing to write invalid model: " + "; ".join(problems))
    doc = {
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "gamma": model.gamma,
        "rho": model.rho,
        "transition": model.transition,
        "objective_cost": model.objective_cost,
        "constraint_costs": model.constraint_costs,
        "cost_scale": model.cost_scale,
    }
    Path(path).write_text(dumps_document(doc), encoding="utf-8")


def read_model(path: str | Path) -> CmdpModel:
    """Read and validate a model file; reject any schema or invariant breach."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError(f"{path}: top-level value must be an object")
    for key in _MODEL_KEYS:
        if key not in doc:
            raise ModelError(f"{path}: missing key {key!r}")
    num_states = int(doc["num_states"])
    num_actions = int(doc["num_actions"])
    try:
        transition = np.asarray(doc["transition"], dtype=np.float64)
        objective = np.asarray(doc["objective_cost"], dtype=np.float64)
        constraints = np.asarray(doc["constraint_costs"], dtype=np.float64)
        rho = np.asarray(doc["rho"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{path}: ragged or non-numeric array: {exc}") from exc
    if constraints.size == 0:
        constraints = np.zeros((0, num_states, num_actions))
    expected = {
        "transition": (transition, (num_states, num_actions, num_states)),
        "objective_cost": (objective, (num_states, num_actions)),
        "constraint_costs": (constraints, (constraints.shape[0], num_states, num_actions)),
        "rho": (rho, (num_states,)),
    }
    for key, (arr, shape) in expected.items():
        if arr.shape != shape:
            raise ModelError(f"{path}: {key} has shape {arr.shape}, expected {shape}")
    try:
        model = CmdpModel(
            transition=transition,
            objective_cost=objective,
            constraint_costs=constraints,
            rho=rho,
            gamma=float(doc["gamma"]),
            cost_scale=float(doc["cost_scale"]),
        )
    except ModelError as exc:
        raise ModelError(f"{path}: {exc}") from exc
    problems = validate(model)
    if problems:
        raise ModelError(f"{path}: invalid model: " + "; ".join(problems))
    return model
