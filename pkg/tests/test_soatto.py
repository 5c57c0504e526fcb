"""Closed-form denominator-free cost tests.

The precompute folds the unnormalized depth-eliminated objective into
pairwise coefficient blocks.  Block contents are checked by hand on a
field of identical points, and the assembled cost is checked against a
direct least-squares oracle
    min_omega sum_i ((J A_i t) . (B_i omega - u_i))^2
evaluated with dense linear algebra at random directions.
"""

from __future__ import annotations

import numpy as np
import pytest

from egoflow import (
    FlowField,
    NearSingularCostError,
    assemble_cost_matrices,
    basis_matrices,
    estimate,
    hemisphere_grid,
    soatto_cost,
    soatto_precompute,
    translation_angular_error,
)
from egoflow.synth import SceneConfig, generate_scene

from conftest import make_clean_field


def _direct_cost(flow: FlowField, t: np.ndarray) -> float:
    """Dense oracle: eliminate omega by least squares on unnormalized rows."""
    x, y = flow.points[:, 0], flow.points[:, 1]
    cx = -(t[1] - y * t[2])
    cy = t[0] - x * t[2]
    _, B = basis_matrices(flow.points)
    rows = cx[:, None] * B[:, 0, :] + cy[:, None] * B[:, 1, :]
    gamma = cx * flow.flows[:, 0] + cy * flow.flows[:, 1]
    omega, *_ = np.linalg.lstsq(rows, gamma, rcond=None)
    r = rows @ omega - gamma
    return float(r @ r)


def _noisy_field(n: int, seed: int, sigma: float = 0.03) -> FlowField:
    rng = np.random.default_rng(seed)
    flow, _, _ = make_clean_field(n=n, seed=seed)
    return FlowField(
        points=flow.points, flows=flow.flows + sigma * rng.normal(size=(n, 2))
    )


# ── Precompute blocks ───────────────────────────────────────────────────────


class TestPrecomputeHandValues:
    """Six identical points at the origin with flow (0.3, 0.4).

    There v1 = (-1,0,0), v2 = (0,-1,0), v3 = (0,0,0) and s = (0.4, -0.3, 0),
    so every block is a small multiple of a one-hot outer product.
    """

    def setup_method(self):
        points = np.zeros((6, 2))
        flows = np.tile([[0.3, 0.4]], (6, 1))
        self.pre = soatto_precompute(FlowField(points=points, flows=flows))

    def test_diagonal_blocks(self):
        G00 = np.zeros((3, 3))
        G00[0, 0] = 6.0
        np.testing.assert_allclose(self.pre.G_pairs[0], G00, rtol=0, atol=0)
        G11 = np.zeros((3, 3))
        G11[1, 1] = 6.0
        np.testing.assert_allclose(self.pre.G_pairs[3], G11, rtol=0, atol=0)

    def test_cross_block_symmetrized(self):
        G01 = np.zeros((3, 3))
        G01[0, 1] = 6.0
        G01[1, 0] = 6.0
        np.testing.assert_allclose(self.pre.G_pairs[1], G01, rtol=0, atol=0)

    def test_blocks_touching_third_column_vanish(self):
        """v3 = 0 at the origin, so every block with index 2 is zero."""
        for pair_pos in (2, 4, 5):
            np.testing.assert_array_equal(
                self.pre.G_pairs[pair_pos], np.zeros((3, 3))
            )
            np.testing.assert_array_equal(self.pre.H_pairs[pair_pos], np.zeros(3))

    def test_linear_blocks(self):
        """H_00 = (-sum fv, 0, 0); H_01 = (sum fu, -sum fv, 0); H_11 = (0, sum fu, 0)."""
        np.testing.assert_allclose(self.pre.H_pairs[0], [-2.4, 0.0, 0.0], rtol=1e-15)
        np.testing.assert_allclose(self.pre.H_pairs[1], [1.8, -2.4, 0.0], rtol=1e-15)
        np.testing.assert_allclose(self.pre.H_pairs[3], [0.0, 1.8, 0.0], rtol=1e-15)

    def test_flow_quadratic_term(self):
        expect = 6.0 * np.array(
            [[0.16, -0.12, 0.0], [-0.12, 0.09, 0.0], [0.0, 0.0, 0.0]]
        )
        np.testing.assert_allclose(self.pre.S, expect, rtol=1e-14, atol=1e-16)

    def test_minimum_point_count(self):
        with pytest.raises(ValueError):
            soatto_precompute(
                FlowField(points=np.zeros((5, 2)), flows=np.zeros((5, 2)))
            )


class TestAssembledMatrices:
    def test_quadratic_form_matches_direct_sum(self):
        """G(t) equals sum_i m_i m_i^T with m_i = B_i^T (J A_i t)."""
        flow = _noisy_field(20, seed=103)
        pre = soatto_precompute(flow)
        rng = np.random.default_rng(103)
        for _ in range(5):
            t = rng.normal(size=3)
            t /= np.linalg.norm(t)
            G, H = assemble_cost_matrices(pre, t)
            x, y = flow.points[:, 0], flow.points[:, 1]
            cx = -(t[1] - y * t[2])
            cy = t[0] - x * t[2]
            _, B = basis_matrices(flow.points)
            rows = cx[:, None] * B[:, 0, :] + cy[:, None] * B[:, 1, :]
            gamma = cx * flow.flows[:, 0] + cy * flow.flows[:, 1]
            np.testing.assert_allclose(G, rows.T @ rows, rtol=1e-11, atol=1e-13)
            np.testing.assert_allclose(H, rows.T @ gamma, rtol=1e-11, atol=1e-13)
            np.testing.assert_allclose(G, G.T, rtol=0, atol=1e-18)


# ── Reduced cost ────────────────────────────────────────────────────────────


class TestSoattoCost:
    def test_matches_least_squares_oracle(self):
        rng = np.random.default_rng(107)
        flow = _noisy_field(50, seed=107)
        pre = soatto_precompute(flow)
        for _ in range(20):
            t = rng.normal(size=3)
            t /= np.linalg.norm(t)
            got = soatto_cost(pre, t)
            want = _direct_cost(flow, t)
            assert abs(got - want) < 1e-8 * max(1.0, abs(want))

    def test_zero_at_truth_on_clean_field(self):
        """Exact cancellation up to roundoff in the O(1)-sized terms."""
        flow, motion, _ = make_clean_field(n=30, seed=109)
        pre = soatto_precompute(flow)
        term_scale = float(motion.t @ pre.S @ motion.t)
        assert abs(soatto_cost(pre, motion.t)) < 1e-12 * max(1.0, term_scale)

    def test_antipode_invariant(self):
        flow = _noisy_field(25, seed=113)
        pre = soatto_precompute(flow)
        t = np.array([0.3, -0.5, 0.81])
        t /= np.linalg.norm(t)
        assert soatto_cost(pre, t) == soatto_cost(pre, -t)

    def test_singular_quadratic_form_raises(self):
        """Identical points give rank-deficient G(t) for every t."""
        points = np.zeros((6, 2))
        flows = np.tile([[0.3, 0.4]], (6, 1))
        pre = soatto_precompute(FlowField(points=points, flows=flows))
        with pytest.raises(NearSingularCostError):
            soatto_cost(pre, np.array([0.0, 0.0, 1.0]))
        with pytest.raises(NearSingularCostError):
            soatto_cost(pre, np.array([1.0, 0.0, 0.0]))


# ── End-to-end behavior ─────────────────────────────────────────────────────


class TestSoattoEstimate:
    def test_noiseless_recovery(self):
        scene = generate_scene(
            SceneConfig(n_points=400, noise_fraction_of_mean_flow=0.0, seed=(60, 0))
        )
        est = estimate(scene.flow, "soatto")
        assert translation_angular_error(est.motion.t, scene.truth_motion.t) < 0.01
        np.testing.assert_allclose(
            est.motion.omega, scene.truth_motion.omega, atol=1e-6
        )
        assert est.diagnostics.method == "soatto"
        assert np.all(est.weights.w == 1.0)

    def test_grid_cost_column_finite(self):
        """The closed form evaluates cleanly across the whole init grid."""
        flow = _noisy_field(40, seed=127)
        pre = soatto_precompute(flow)
        vals = [soatto_cost(pre, t) for t in hemisphere_grid(50)]
        assert np.isfinite(vals).all()
