"""Visuo-motor control: Broyden-estimated Jacobian and damped-least-squares steps.

The controller never sees the camera or the scene; it maps stacked
constraint residuals to joint increments through a rank-one-updated
Jacobian estimate, so no camera calibration is required anywhere.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

ZERO_STEP_TOL = 1e-12


class ControllerError(RuntimeError):
    pass


class SingularInitialization(ControllerError):
    """An exploratory probe produced no visible residual change."""


class ZeroStep(ControllerError):
    """Broyden update with a zero joint step and no regularizer."""


class NumericalFailure(ControllerError):
    """Damped normal matrix could not be inverted."""


class InvalidStatus(ControllerError):
    """servo_step called on a terminal session."""


@dataclass
class ControllerConfig:
    """Servo-loop parameters.

    broyden_lambda weights the rank-one update (the online default follows
    the 0.05 used on the real arm); epsilon regularizes its denominator.
    alpha and mu are the damped-least-squares step gain and damping.
    Commands are clamped per component to max_joint_step radians.
    """

    broyden_lambda: float = 0.05
    epsilon: float = 1e-9
    alpha: float = 0.1
    mu: float = 1e-3
    max_joint_step: float = 0.1
    convergence_tau: float = 3.0
    convergence_patience: int = 3
    divergence_window: int = 10
    rate: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.broyden_lambda <= 1.0:
            raise ValueError(f"broyden_lambda must be in (0, 1], got {self.broyden_lambda}")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.max_joint_step <= 0.0:
            raise ValueError(f"max_joint_step must be > 0, got {self.max_joint_step}")
        if self.convergence_tau <= 0.0:
            raise ValueError(f"convergence_tau must be > 0, got {self.convergence_tau}")
        if self.convergence_patience < 1:
            raise ValueError("convergence_patience must be >= 1")
        if self.divergence_window < 1:
            raise ValueError("divergence_window must be >= 1")


@dataclass
class JacobianEstimate:
    """m x n visuo-motor Jacobian (residual units per radian)."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError(f"Jacobian must be 2D, got shape {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("Jacobian has non-finite entries")

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def condition(self) -> float:
        s = np.linalg.svd(self.matrix, compute_uv=False)
        if s[-1] <= 0.0:
            return float("inf")
        return float(s[0] / s[-1])


class ServoStatus(enum.Enum):
    INITIALIZING = "Initializing"
    RUNNING = "Running"
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    ABORTED = "Aborted"


@dataclass
class TraceStep:
    """One step of the servo log."""

    step: int
    q: np.ndarray
    e: np.ndarray
    e_norm: float
    status: str
    jacobian_condition: float = float("nan")

    def to_json(self) -> str:
        # export schema is fixed: step, q, e, e_norm, status, in this order
        return json.dumps(
            {
                "step": self.step,
                "q": [float(x) for x in self.q],
                "e": [float(x) for x in self.e],
                "e_norm": float(self.e_norm),
                "status": self.status,
            }
        )


def trace_to_jsonl(history) -> str:
    return "".join(rec.to_json() + "\n" for rec in history)


@dataclass
class ServoState:
    """Exclusive state of one servo session."""

    q: np.ndarray
    J: JacobianEstimate
    e: Optional[np.ndarray] = None
    step_index: int = 0
    status: ServoStatus = ServoStatus.INITIALIZING
    history: List[TraceStep] = field(default_factory=list)
    last_dq: Optional[np.ndarray] = None
    initial_norm: Optional[float] = None
    below_tau_streak: int = 0
    increase_streak: int = 0
    prev_norm: Optional[float] = None
    reinit_count: int = 0

    def snapshot(self) -> dict:
        """Immutable telemetry view; safe to hand across threads."""
        return {
            "q": [float(x) for x in self.q],
            "e": [] if self.e is None else [float(x) for x in self.e],
            "e_norm": None if self.e is None else float(np.linalg.norm(self.e)),
            "step": self.step_index,
            "status": self.status.value,
        }

    def resume_with_jacobian(self, J: JacobianEstimate) -> None:
        """Recovery path after divergence: fresh Jacobian, counters cleared."""
        self.J = J
        self.status = ServoStatus.RUNNING
        self.last_dq = None
        self.below_tau_streak = 0
        self.increase_streak = 0
        self.prev_norm = None
        # the blow-up reference re-anchors at the next step, otherwise a
        # 4x excursion would re-trip divergence before recovery can start
        self.initial_norm = None
        self.reinit_count += 1


def initialize_jacobian(
    probe: float,
    residual_fn: Callable[[np.ndarray], np.ndarray],
    q0: np.ndarray,
) -> JacobianEstimate:
    """Finite-difference Jacobian from orthogonal exploratory motions.

    Column j is (e(q0 + probe * 1_j) - e(q0)) / probe. The callback is
    invoked once more at q0 afterwards so a stateful world ends where it
    started.
    """
    if probe <= 0.0:
        raise ValueError(f"probe magnitude must be > 0, got {probe}")
    q0 = np.asarray(q0, dtype=np.float64)
    e0 = np.asarray(residual_fn(q0), dtype=np.float64)
    n = q0.shape[0]
    columns = []
    try:
        for j in range(n):
            qj = q0.copy()
            qj[j] += probe
            ej = np.asarray(residual_fn(qj), dtype=np.float64)
            columns.append((ej - e0) / probe)
    finally:
        try:
            residual_fn(q0)
        except Exception:
            pass  # restore is best-effort; the probe error wins
    J = np.column_stack(columns)
    norms = np.linalg.norm(J, axis=0)
    dead = np.nonzero(norms < ZERO_STEP_TOL)[0]
    if dead.size:
        raise SingularInitialization(
            f"joints {dead.tolist()} produced no visual effect under probing"
        )
    return JacobianEstimate(J)


def broyden_update(
    J: JacobianEstimate,
    e: np.ndarray,
    dq: np.ndarray,
    cfg: ControllerConfig,
) -> JacobianEstimate:
    """Rank-one secant update:

        J' = J + lambda * (e - J dq) dq^T / (dq^T dq + epsilon)

    With lambda = 1 and epsilon = 0 the secant condition J' dq = e holds
    exactly.
    """
    e = np.asarray(e, dtype=np.float64)
    dq = np.asarray(dq, dtype=np.float64)
    if e.shape != (J.m,) or dq.shape != (J.n,):
        raise ValueError(
            f"shape mismatch: J is {J.m}x{J.n}, e is {e.shape}, dq is {dq.shape}"
        )
    denom = float(dq @ dq) + cfg.epsilon
    if np.linalg.norm(dq) < ZERO_STEP_TOL and cfg.epsilon == 0.0:
        raise ZeroStep("zero joint step with epsilon = 0")
    innovation = e - J.matrix @ dq
    return JacobianEstimate(
        J.matrix + cfg.broyden_lambda * np.outer(innovation, dq) / denom
    )


def compute_command(
    J: JacobianEstimate,
    e: np.ndarray,
    cfg: ControllerConfig,
) -> np.ndarray:
    """Damped-least-squares step toward zero residual:

        dq = -alpha * (J^T J + mu I)^-1 J^T e

    clamped per component to max_joint_step so the arm only moves in small
    amounts.
    """
    e = np.asarray(e, dtype=np.float64)
    normal = J.matrix.T @ J.matrix + cfg.mu * np.eye(J.n)
    try:
        dq = np.linalg.solve(normal, -cfg.alpha * (J.matrix.T @ e))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"damped normal matrix not invertible: {exc}") from exc
    if not np.all(np.isfinite(dq)):
        raise NumericalFailure("command has non-finite components")
    return np.clip(dq, -cfg.max_joint_step, cfg.max_joint_step)


def servo_step(
    state: ServoState,
    fresh_residual: np.ndarray,
    cfg: ControllerConfig,
) -> ServoState:
    """Advance one control cycle.

    Updates the Jacobian from the observed residual change over the last
    commanded step, computes and applies the next command, then re-evaluates
    convergence: Converged after convergence_patience consecutive norms
    below tau, Diverged after divergence_window consecutive strict norm
    increases or a norm above 4x the initial norm.
    """
    if state.status not in (ServoStatus.INITIALIZING, ServoStatus.RUNNING):
        raise InvalidStatus(f"servo_step on {state.status.value} session")
    fresh = np.asarray(fresh_residual, dtype=np.float64)

    if state.status is ServoStatus.RUNNING and state.last_dq is not None:
        observed_change = fresh - state.e
        state.J = broyden_update(state.J, observed_change, state.last_dq, cfg)

    dq = compute_command(state.J, fresh, cfg)
    state.q = state.q + dq
    state.e = fresh
    state.last_dq = dq
    state.step_index += 1

    norm = float(np.linalg.norm(fresh))
    if state.initial_norm is None:
        # first step of the session, or first step after a recovery resume
        state.initial_norm = norm
    if state.status is ServoStatus.INITIALIZING:
        state.status = ServoStatus.RUNNING

    state.below_tau_streak = state.below_tau_streak + 1 if norm < cfg.convergence_tau else 0
    if state.prev_norm is not None and norm > state.prev_norm:
        state.increase_streak += 1
    else:
        state.increase_streak = 0
    state.prev_norm = norm

    if state.below_tau_streak >= cfg.convergence_patience:
        state.status = ServoStatus.CONVERGED
    elif (
        state.increase_streak >= cfg.divergence_window
        or norm > 4.0 * state.initial_norm
    ):
        state.status = ServoStatus.DIVERGED

    state.history.append(
        TraceStep(
            step=state.step_index,
            q=state.q.copy(),
            e=fresh.copy(),
            e_norm=norm,
            status=state.status.value,
            jacobian_condition=state.J.condition(),
        )
    )
    return state
