"""Jacobian estimation, Broyden updates, damped steps, and the servo loop."""

import json

import numpy as np
import pytest

import oracles as orc
from servobench.controller import (
    ControllerConfig,
    InvalidStatus,
    JacobianEstimate,
    NumericalFailure,
    ServoState,
    ServoStatus,
    SingularInitialization,
    ZeroStep,
    broyden_update,
    compute_command,
    initialize_jacobian,
    servo_step,
    trace_to_jsonl,
)


def make_state(J, q=None):
    J = JacobianEstimate(np.asarray(J, dtype=float))
    q = np.zeros(J.n) if q is None else np.asarray(q, dtype=float)
    return ServoState(q=q, J=J)


def test_initialization_recovers_linear_map():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 4))
    J = initialize_jacobian(1e-4, lambda q: A @ q, np.zeros(4))
    assert np.abs(J.matrix - A).max() < 1e-6


def test_initialization_restores_start_pose():
    A = np.eye(2)
    calls = []

    def residual(q):
        calls.append(q.copy())
        return A @ q

    initialize_jacobian(0.05, residual, np.array([0.3, -0.2]))
    assert np.array_equal(calls[-1], [0.3, -0.2])  # world driven back to start


def test_initialization_rejects_blind_joints():
    with pytest.raises(SingularInitialization) as err:
        initialize_jacobian(0.02, lambda q: np.array([1.0, 2.0]), np.zeros(3))
    assert "0, 1, 2" in str(err.value)


def test_initialization_of_quadratic_gives_forward_difference():
    def residual(q):
        return np.array([q[0] ** 2, 0.0 * q[1]])

    with pytest.raises(SingularInitialization):
        # the second joint never moves the residual
        initialize_jacobian(0.02, residual, np.zeros(2))

    def residual1(q):
        return np.array([q[0] ** 2 + q[1], 2.0 * q[1]])

    J = initialize_jacobian(0.02, residual1, np.zeros(2))
    # forward difference of q^2 at 0 with step d is exactly d
    assert J.matrix[:, 0] == pytest.approx([0.02, 0.0], abs=1e-12)


def test_initialization_rejects_nonpositive_probe():
    with pytest.raises(ValueError):
        initialize_jacobian(0.0, lambda q: q, np.zeros(2))


def test_broyden_forces_secant_condition_at_full_weight():
    J = JacobianEstimate(np.zeros((2, 2)))
    cfg = ControllerConfig(broyden_lambda=1.0, epsilon=0.0)
    J2 = broyden_update(J, np.array([2.0, 3.0]), np.array([1.0, 0.0]), cfg)
    assert np.array_equal(J2.matrix, [[2.0, 0.0], [3.0, 0.0]])
    assert np.array_equal(J2.matrix @ [1.0, 0.0], [2.0, 3.0])


def test_broyden_is_identity_on_zero_innovation():
    rng = np.random.default_rng(2)
    J = JacobianEstimate(rng.normal(size=(3, 3)))
    dq = rng.normal(size=3)
    for lam in (0.05, 0.5, 1.0):
        cfg = ControllerConfig(broyden_lambda=lam, epsilon=0.0)
        J2 = broyden_update(J, J.matrix @ dq, dq, cfg)
        assert np.abs(J2.matrix - J.matrix).max() < 1e-12


def test_broyden_small_weight_arithmetic():
    # scalar case: J' = 0 + 0.05 * 4 * 2 / 4 = 0.1
    J = JacobianEstimate(np.zeros((1, 1)))
    cfg = ControllerConfig(broyden_lambda=0.05, epsilon=0.0)
    J2 = broyden_update(J, np.array([4.0]), np.array([2.0]), cfg)
    assert J2.matrix[0, 0] == pytest.approx(0.1, abs=1e-15)


def test_broyden_matches_elementwise_reference():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        m, n = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        J = rng.normal(size=(m, n))
        e = rng.normal(size=m)
        dq = rng.normal(size=n)
        lam = float(rng.uniform(0.01, 1.0))
        eps = float(rng.choice([0.0, 1e-9, 1e-3]))
        cfg = ControllerConfig(broyden_lambda=lam, epsilon=eps)
        got = broyden_update(JacobianEstimate(J), e, dq, cfg).matrix
        assert np.abs(got - orc.broyden_ref(J, e, dq, lam, eps)).max() < 1e-9


def test_broyden_update_is_rank_one():
    rng = np.random.default_rng(4)
    for _ in range(100):
        J = rng.normal(size=(5, 4))
        e = rng.normal(size=5)
        dq = rng.normal(size=4)
        cfg = ControllerConfig(broyden_lambda=0.3, epsilon=1e-9)
        J2 = broyden_update(JacobianEstimate(J), e, dq, cfg)
        s = np.linalg.svd(J2.matrix - J, compute_uv=False)
        assert s[1] < 1e-9  # only one nonzero singular value


def test_broyden_rejects_zero_step_without_regularizer():
    J = JacobianEstimate(np.eye(2))
    cfg = ControllerConfig(broyden_lambda=0.5, epsilon=0.0)
    with pytest.raises(ZeroStep):
        broyden_update(J, np.array([1.0, 1.0]), np.zeros(2), cfg)
    # a nonzero epsilon turns the same call into a no-op update
    cfg = ControllerConfig(broyden_lambda=0.5, epsilon=1e-9)
    J2 = broyden_update(J, np.array([1.0, 1.0]), np.zeros(2), cfg)
    assert np.array_equal(J2.matrix, np.eye(2))


def test_broyden_rejects_shape_mismatch():
    J = JacobianEstimate(np.eye(2))
    with pytest.raises(ValueError):
        broyden_update(J, np.array([1.0, 2.0, 3.0]), np.zeros(2), ControllerConfig())


def test_command_with_identity_jacobian_scales_error():
    cfg = ControllerConfig(alpha=0.5, mu=0.0, max_joint_step=10.0)
    dq = compute_command(JacobianEstimate(np.eye(2)), np.array([4.0, 0.0]), cfg)
    assert dq == pytest.approx([-2.0, 0.0], abs=1e-12)


def test_command_is_zero_at_zero_error():
    cfg = ControllerConfig()
    dq = compute_command(JacobianEstimate(np.eye(3)), np.zeros(3), cfg)
    assert np.array_equal(dq, np.zeros(3))


def test_command_clamps_each_component():
    cfg = ControllerConfig(alpha=1.0, mu=0.0, max_joint_step=0.05)
    dq = compute_command(JacobianEstimate(np.eye(2)), np.array([4.0, 0.0]), cfg)
    assert dq == pytest.approx([-0.05, 0.0], abs=1e-15)  # unclamped would be -4


def test_command_fails_on_singular_undamped_normal_matrix():
    J = JacobianEstimate(np.array([[1.0, 0.0], [0.0, 0.0]]))
    cfg = ControllerConfig(alpha=0.5, mu=0.0)
    with pytest.raises(NumericalFailure):
        compute_command(J, np.array([1.0, 1.0]), cfg)


def test_command_matches_normal_equation_reference():
    rng = np.random.default_rng(5)
    for _ in range(500):
        m, n = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        J = rng.normal(size=(m, n))
        e = rng.normal(size=m)
        alpha = float(rng.uniform(0.05, 1.0))
        mu = float(rng.uniform(1e-4, 0.1))
        clamp = float(rng.uniform(0.05, 2.0))
        cfg = ControllerConfig(alpha=alpha, mu=mu, max_joint_step=clamp)
        got = compute_command(JacobianEstimate(J), e, cfg)
        want = orc.dls_command_ref(J, e, alpha, mu, clamp)
        assert np.abs(got - want).max() < 1e-9


def test_convergence_needs_consecutive_norms_below_tau():
    cfg = ControllerConfig(convergence_tau=3.0, convergence_patience=3,
                           alpha=0.1, mu=1e-3)
    state = make_state(np.eye(2))
    for norm, expect in ((2.9, ServoStatus.RUNNING), (2.8, ServoStatus.RUNNING),
                         (2.7, ServoStatus.CONVERGED)):
        servo_step(state, np.array([norm, 0.0]), cfg)
        assert state.status is expect
    assert state.step_index == 3


def test_patience_counter_resets_on_excursion():
    cfg = ControllerConfig(convergence_tau=3.0, convergence_patience=3)
    state = make_state(np.eye(2))
    for norm in (2.9, 2.8, 3.5, 2.9, 2.8):
        servo_step(state, np.array([norm, 0.0]), cfg)
    assert state.status is ServoStatus.RUNNING
    servo_step(state, np.array([2.7, 0.0]), cfg)
    assert state.status is ServoStatus.CONVERGED


def test_divergence_after_window_of_strict_increases():
    cfg = ControllerConfig(convergence_tau=0.1, divergence_window=10)
    state = make_state(np.eye(2))
    norm = 1.0
    for _ in range(11):  # first step sets the baseline, then 10 increases
        servo_step(state, np.array([norm, 0.0]), cfg)
        norm += 0.1
    assert state.status is ServoStatus.DIVERGED
    assert state.step_index == 11


def test_divergence_when_norm_blows_past_four_times_initial():
    cfg = ControllerConfig(convergence_tau=0.1)
    state = make_state(np.eye(2))
    servo_step(state, np.array([1.0, 0.0]), cfg)
    assert state.status is ServoStatus.RUNNING
    servo_step(state, np.array([4.1, 0.0]), cfg)
    assert state.status is ServoStatus.DIVERGED


def test_servo_step_refuses_terminal_sessions():
    cfg = ControllerConfig(convergence_tau=10.0, convergence_patience=1)
    state = make_state(np.eye(2))
    servo_step(state, np.array([0.5, 0.0]), cfg)
    assert state.status is ServoStatus.CONVERGED
    with pytest.raises(InvalidStatus):
        servo_step(state, np.array([0.5, 0.0]), cfg)


def test_full_loop_drives_linear_plant_to_zero():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(4, 4)) + 4.0 * np.eye(4)
    q_star = rng.normal(size=4)
    cfg = ControllerConfig(
        broyden_lambda=1.0, epsilon=1e-12, alpha=0.5, mu=1e-6,
        max_joint_step=2.0, convergence_tau=1e-4, convergence_patience=1,
    )
    q = np.zeros(4)
    state = ServoState(q=q, J=initialize_jacobian(1e-3, lambda qq: A @ (qq - q_star), q))
    for _ in range(50):
        servo_step(state, A @ (state.q - q_star), cfg)
        if state.status is ServoStatus.CONVERGED:
            break
    assert state.status is ServoStatus.CONVERGED
    assert np.linalg.norm(A @ (state.q - q_star)) < 1e-3
    assert state.step_index <= 50


def test_resume_clears_counters_and_counts_reinits():
    cfg = ControllerConfig(convergence_tau=0.1)
    state = make_state(np.eye(2))
    servo_step(state, np.array([1.0, 0.0]), cfg)
    servo_step(state, np.array([4.5, 0.0]), cfg)
    assert state.status is ServoStatus.DIVERGED
    state.resume_with_jacobian(JacobianEstimate(2.0 * np.eye(2)))
    assert state.status is ServoStatus.RUNNING
    assert state.reinit_count == 1
    assert state.last_dq is None and state.prev_norm is None
    assert state.increase_streak == 0 and state.below_tau_streak == 0


def test_trace_lines_have_fixed_schema():
    cfg = ControllerConfig(convergence_tau=0.5)
    state = make_state(np.eye(2))
    servo_step(state, np.array([1.0, 2.0]), cfg)
    servo_step(state, np.array([0.9, 1.8]), cfg)
    lines = trace_to_jsonl(state.history).splitlines()
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert list(first) == ["step", "q", "e", "e_norm", "status"]
    assert first["step"] == 1
    assert first["e"] == [1.0, 2.0]
    assert first["e_norm"] == pytest.approx(np.hypot(1.0, 2.0))
    steps = [json.loads(l)["step"] for l in lines]
    assert steps == [1, 2]  # gapless, strictly increasing


def test_config_validation_bounds():
    with pytest.raises(ValueError):
        ControllerConfig(broyden_lambda=0.0)
    with pytest.raises(ValueError):
        ControllerConfig(broyden_lambda=1.5)
    with pytest.raises(ValueError):
        ControllerConfig(epsilon=-1.0)
    with pytest.raises(ValueError):
        ControllerConfig(alpha=0.0)
    with pytest.raises(ValueError):
        ControllerConfig(max_joint_step=0.0)
    with pytest.raises(ValueError):
        ControllerConfig(convergence_patience=0)
    with pytest.raises(ValueError):
        ControllerConfig(divergence_window=0)


def test_jacobian_estimate_validates_matrix():
    with pytest.raises(ValueError):
        JacobianEstimate(np.zeros(3))
    with pytest.raises(ValueError):
        JacobianEstimate(np.array([[np.nan, 0.0]]))
    assert JacobianEstimate(np.eye(3)).condition() == pytest.approx(1.0)
