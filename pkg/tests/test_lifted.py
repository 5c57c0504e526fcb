"""Lifted-kernel solver tests.

The regularizer kappa(s) = (tau/sqrt(2)) (s - 1) is checked at hand-computed
points; the block Jacobian is checked against central finite differences of
the stacked residual; and a single Levenberg-Marquardt iteration of the
Schur-complement solver is checked against a dense normal-equations oracle
built from the full Jacobian.
"""

from __future__ import annotations

import numpy as np
import pytest

from egoflow import (
    FlowField,
    LiftedConfig,
    LiftedState,
    SingularSystemError,
    error_vector,
    export_weights,
    kappa,
    lifted_jacobian,
    lifted_objective,
    lifted_residual,
    reduced_linear_system,
    solve_lifted_inner,
    solve_omega_hat,
)

from conftest import make_clean_field


def _noisy_field(n: int, seed: int, sigma: float = 0.02):
    rng = np.random.default_rng(seed)
    flow, motion, _ = make_clean_field(n=n, seed=seed)
    return (
        FlowField(points=flow.points, flows=flow.flows + sigma * rng.normal(size=(n, 2))),
        motion,
    )


def _state(flow, t, omega, w, cfg):
    cost = lifted_objective(flow, t, LiftedState(omega=omega, w=w, cost=0.0), cfg)
    return LiftedState(omega=omega, w=w, cost=cost)


# ── Regularizer ─────────────────────────────────────────────────────────────


class TestKappa:
    def test_hand_values_default_tau(self):
        """tau=0.05: kappa(0) = -0.05/sqrt(2), kappa(1) = 0, kappa(4) = 3 * 0.05/sqrt(2)."""
        base = 0.05 / np.sqrt(2.0)
        assert abs(kappa(0.0) - (-base)) < 1e-17
        assert kappa(1.0) == 0.0
        assert abs(kappa(4.0) - 3.0 * base) < 1e-16

    def test_custom_tau(self):
        assert abs(kappa(0.0, tau=np.sqrt(2.0)) - (-1.0)) < 1e-15

    def test_vectorized(self):
        np.testing.assert_allclose(
            kappa(np.array([0.0, 1.0, 4.0])),
            [-0.05 / np.sqrt(2.0), 0.0, 0.15 / np.sqrt(2.0)],
            rtol=1e-14,
            atol=1e-18,
        )

    def test_config_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            LiftedConfig(tau=0.0)


# ── Residual stack and objective ────────────────────────────────────────────


class TestLiftedResidual:
    def test_unit_weights_reduce_to_plain_residual(self):
        flow, motion = _noisy_field(12, seed=53)
        cfg = LiftedConfig()
        t = motion.t
        omega = solve_omega_hat(flow, t)
        state = _state(flow, t, omega, np.ones(12), cfg)
        r = lifted_residual(flow, t, state, cfg)
        assert r.shape == (24,)
        np.testing.assert_allclose(r[:12], error_vector(flow, t, omega).e, rtol=1e-13)
        np.testing.assert_array_equal(r[12:], np.zeros(12))

    def test_objective_hand_assembly(self):
        """||w o f||^2 + sum kappa(w^2)^2 assembled from parts."""
        flow, motion = _noisy_field(9, seed=59)
        cfg = LiftedConfig()
        rng = np.random.default_rng(59)
        omega = solve_omega_hat(flow, motion.t) + 0.01 * rng.normal(size=3)
        w = rng.uniform(0.2, 1.2, 9)
        state = _state(flow, motion.t, omega, w, cfg)
        f = error_vector(flow, motion.t, omega).e
        expect = float(np.sum((w * f) ** 2) + np.sum(kappa(w * w) ** 2))
        got = lifted_objective(flow, motion.t, state, cfg)
        assert abs(got - expect) < 1e-15 * max(1.0, expect)

    def test_objective_matches_residual_norm(self):
        flow, motion = _noisy_field(10, seed=61)
        cfg = LiftedConfig()
        rng = np.random.default_rng(61)
        state = _state(
            flow,
            motion.t,
            solve_omega_hat(flow, motion.t),
            rng.uniform(0.5, 1.0, 10),
            cfg,
        )
        r = lifted_residual(flow, motion.t, state, cfg)
        obj = lifted_objective(flow, motion.t, state, cfg)
        assert abs(obj - float(r @ r)) < 1e-14 * max(1.0, obj)


# ── Jacobian ────────────────────────────────────────────────────────────────


class TestLiftedJacobian:
    def test_block_structure(self):
        flow, motion = _noisy_field(7, seed=67)
        cfg = LiftedConfig()
        rng = np.random.default_rng(67)
        w = rng.uniform(0.3, 1.1, 7)
        omega = solve_omega_hat(flow, motion.t)
        state = _state(flow, motion.t, omega, w, cfg)
        J = lifted_jacobian(flow, motion.t, state, cfg).to_dense()
        assert J.shape == (14, 10)
        F, beta, _ = reduced_linear_system(flow, motion.t)
        f = F @ omega - beta
        np.testing.assert_allclose(J[:7, :3], w[:, None] * F, rtol=1e-13, atol=1e-16)
        np.testing.assert_allclose(J[:7, 3:], np.diag(f), rtol=1e-13, atol=1e-16)
        np.testing.assert_array_equal(J[7:, :3], np.zeros((7, 3)))
        np.testing.assert_allclose(
            J[7:, 3:], np.diag(np.sqrt(2.0) * cfg.tau * w), rtol=1e-13, atol=1e-16
        )

    def test_matches_central_differences(self):
        flow, motion = _noisy_field(6, seed=71)
        cfg = LiftedConfig()
        rng = np.random.default_rng(71)
        omega = solve_omega_hat(flow, motion.t) + 0.02 * rng.normal(size=3)
        w = rng.uniform(0.4, 1.2, 6)
        state = _state(flow, motion.t, omega, w, cfg)
        J = lifted_jacobian(flow, motion.t, state, cfg).to_dense()

        def residual_at(z):
            st = LiftedState(omega=z[:3], w=z[3:], cost=0.0)
            return lifted_residual(flow, motion.t, st, cfg)

        z0 = np.concatenate([omega, w])
        h = 1e-6
        fd = np.zeros_like(J)
        for j in range(z0.size):
            zp, zm = z0.copy(), z0.copy()
            zp[j] += h
            zm[j] -= h
            fd[:, j] = (residual_at(zp) - residual_at(zm)) / (2.0 * h)
        scale = np.abs(J).max()
        assert np.abs(J - fd).max() < 1e-7 * scale


# ── Inner solver ────────────────────────────────────────────────────────────


class TestSolveLiftedInner:
    def test_noiseless_truth_converges_immediately(self):
        flow, motion, _ = make_clean_field(n=20, seed=73)
        state = solve_lifted_inner(flow, motion.t, LiftedConfig())
        assert state.converged
        assert state.cost < 1e-20
        np.testing.assert_allclose(state.omega, motion.omega, atol=1e-8)
        np.testing.assert_allclose(state.w, np.ones(20), atol=1e-6)

    def test_history_monotone_nonincreasing(self):
        flow, motion = _noisy_field(40, seed=79, sigma=0.05)
        state = solve_lifted_inner(flow, motion.t, LiftedConfig())
        assert state.cost_history.size >= 2
        assert (np.diff(state.cost_history) <= 0.0).all()
        assert state.cost == state.cost_history[-1]

    def test_single_step_matches_dense_oracle(self):
        """One accepted LM iteration == dense solve of
        (J^T J + lam I) delta = -J^T r on the full stacked system."""
        flow, motion = _noisy_field(8, seed=83, sigma=0.04)
        cfg = LiftedConfig(max_iterations=1, cost_tolerance=0.0)
        rng = np.random.default_rng(83)
        omega0 = solve_omega_hat(flow, motion.t) + 0.05 * rng.normal(size=3)
        w0 = np.full(8, 0.9)
        init = _state(flow, motion.t, omega0, w0, cfg)

        J = lifted_jacobian(flow, motion.t, init, cfg).to_dense()
        r = lifted_residual(flow, motion.t, init, cfg)
        lam = cfg.lm_initial_damping
        delta = np.linalg.solve(J.T @ J + lam * np.eye(11), -J.T @ r)
        expect_omega = omega0 + delta[:3]
        expect_w = w0 + delta[3:]
        expect_cost = lifted_objective(
            flow, motion.t, LiftedState(omega=expect_omega, w=expect_w, cost=0.0), cfg
        )
        assert expect_cost < init.cost  # step must be accepted for the check

        out = solve_lifted_inner(flow, motion.t, cfg, init=init)
        assert out.iterations == 1
        np.testing.assert_allclose(out.omega, expect_omega, rtol=1e-8)
        np.testing.assert_allclose(out.w, expect_w, rtol=1e-8)
        np.testing.assert_allclose(out.cost, expect_cost, rtol=1e-10)

    def test_iteration_cap_reports_not_converged(self):
        flow, _ = _noisy_field(40, seed=89, sigma=0.05)
        t = np.array([0.0, 0.0, 1.0])
        state = solve_lifted_inner(flow, t, LiftedConfig(max_iterations=1))
        assert state.iterations == 1
        assert not state.converged

    def test_warm_start_never_worse(self):
        flow, motion = _noisy_field(30, seed=97, sigma=0.05)
        cold = solve_lifted_inner(flow, motion.t, LiftedConfig())
        warm = solve_lifted_inner(flow, motion.t, LiftedConfig(), init=cold)
        assert warm.cost <= cold.cost * (1.0 + 1e-12)

    def test_warm_start_length_mismatch(self):
        flow, motion = _noisy_field(10, seed=101)
        bad = LiftedState(omega=np.zeros(3), w=np.ones(7), cost=1.0)
        with pytest.raises(ValueError):
            solve_lifted_inner(flow, motion.t, LiftedConfig(), init=bad)

    def test_degenerate_field_raises(self):
        points = np.tile([[0.1, 0.2]], (3, 1))
        flow = FlowField(points=points, flows=np.full((3, 2), 0.2))
        with pytest.raises(SingularSystemError):
            solve_lifted_inner(flow, np.array([0.0, 0.0, 1.0]), LiftedConfig())

    def test_downweights_planted_outliers(self, contaminated_scene):
        """Solved at the true direction, outlier weights end up smaller."""
        scene = contaminated_scene
        state = solve_lifted_inner(scene.flow, scene.truth_motion.t, LiftedConfig())
        w = np.abs(state.w)
        inl = scene.inlier_mask
        assert w[~inl].mean() < 0.5 * w[inl].mean()


# ── Weight export ───────────────────────────────────────────────────────────


class TestExportWeights:
    def test_minmax_of_magnitudes(self):
        w, degenerate = export_weights(np.array([0.5, 1.0, 0.75]))
        np.testing.assert_allclose(w, [0.0, 1.0, 0.5], rtol=1e-14)
        assert not degenerate

    def test_sign_ignored(self):
        w, degenerate = export_weights(np.array([-1.0, 1.0]))
        np.testing.assert_array_equal(w, [1.0, 1.0])
        assert degenerate

    def test_constant_degenerates(self):
        w, degenerate = export_weights(np.array([0.7, 0.7, 0.7]))
        np.testing.assert_array_equal(w, [1.0, 1.0, 1.0])
        assert degenerate
