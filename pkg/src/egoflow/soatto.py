"""Closed-form egomotion cost from precomputed pairwise coefficient blocks.

Dropping the per-point normalization from the depth-eliminated residual turns
the objective into a homogeneous polynomial in the translation direction whose
coefficient matrices can be accumulated in a single O(N) pass.  Writing
J A(x) t = sum_j t_j p_j with the columns p_j of J A(x), each unnormalized
residual is sum_j t_j (v_j . omega - s_j) where v_j = B(x)^T p_j and
s_j = p_j . u.  Accumulating the pairwise products over points gives

    cost(t, omega) = omega^T G(t) omega - 2 H(t)^T omega + t^T S t,

with G(t), H(t) quadratic forms in t assembled from six 3x3 (resp. 3-vector)
coefficient blocks.  Minimizing over omega analytically (adjugate / determinant
of the 3x3 G) leaves a cost in t alone that evaluates in O(1) after the
precompute.  The estimator is extremely fast but biased: the dropped
normalization reweights points unevenly, and the reduced cost is not
guaranteed nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NearSingularCostError
from .motion_field import FlowField

# Index pairs (j <= k) of the quadratic-form coefficient blocks; off-diagonal
# blocks store the symmetrized sum so assembly is a plain weighted sum.
PAIR_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

# |det G| below this multiple of ||G||_F^3 counts as singular.
DET_GUARD = 1e-12


@dataclass
class SoattoPrecompute:
    """O(N)-accumulated coefficient blocks of the denominator-free cost.

    G_pairs / H_pairs follow PAIR_INDEX ordering; S is the flow-only quadratic
    term (symmetric positive semidefinite by construction).
    """

    G_pairs: tuple
    H_pairs: tuple
    S: np.ndarray
    n_points: int


def soatto_precompute(flow: FlowField) -> SoattoPrecompute:
    """Accumulate all cost coefficients in one pass over the flow field."""
    if flow.n < 6:
        raise ValueError(f"need at least 6 points, got {flow.n}")
    x, y = flow.points[:, 0], flow.points[:, 1]
    fu, fv = flow.flows[:, 0], flow.flows[:, 1]

    # v_j = B(x)^T p_j for the three columns p_j of J A(x).
    v = (
        np.stack([-(1.0 + y * y), x * y, x], axis=1),
        np.stack([x * y, -(1.0 + x * x), y], axis=1),
        np.stack([x, y, -(x * x + y * y)], axis=1),
    )
    # s_j = p_j . u, the flow projections onto the same columns.
    s = np.stack([fv, -fu, y * fu - x * fv], axis=1)

    G_pairs = []
    H_pairs = []
    for j, k in PAIR_INDEX:
        M = v[j].T @ v[k]
        h = v[j].T @ s[:, k]
        if j == k:
            G_pairs.append(M)
            H_pairs.append(h)
        else:
            G_pairs.append(M + M.T)
            H_pairs.append(h + v[k].T @ s[:, j])
    return SoattoPrecompute(
        G_pairs=tuple(G_pairs),
        H_pairs=tuple(H_pairs),
        S=s.T @ s,
        n_points=flow.n,
    )


def assemble_cost_matrices(
    pre: SoattoPrecompute, t: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """G(t), H(t) assembled from the precomputed blocks (O(1) in N)."""
    t = np.asarray(t, dtype=np.float64).reshape(3)
    G = np.zeros((3, 3))
    H = np.zeros(3)
    for (j, k), Gp, Hp in zip(PAIR_INDEX, pre.G_pairs, pre.H_pairs):
        c = t[j] * t[k]
        G += c * Gp
        H += c * Hp
    return G, H


def soatto_cost(pre: SoattoPrecompute, t: np.ndarray) -> float:
    """Reduced closed-form cost t^T S t - H(t)^T G(t)^{-1} H(t).

    The 3x3 inverse is applied via the analytic adjugate over the determinant.
    Raises NearSingularCostError when |det G(t)| < DET_GUARD * ||G||_F^3.
    Note the returned value is not guaranteed nonnegative; the dropped
    normalization breaks the sum-of-squares structure.
    """
    t = np.asarray(t, dtype=np.float64).reshape(3)
    G, H = assemble_cost_matrices(pre, t)
    c1, c2, c3 = G[:, 0], G[:, 1], G[:, 2]
    a1 = np.cross(c2, c3)
    a2 = np.cross(c3, c1)
    a3 = np.cross(c1, c2)
    det = float(c1 @ a1)
    scale = float(np.linalg.norm(G))
    # <= so an exactly zero G (det = scale = 0) still trips the guard.
    if abs(det) <= DET_GUARD * scale**3:
        raise NearSingularCostError(
            f"det G(t) = {det:.3e} is below the guard at ||G|| = {scale:.3e}"
        )
    omega = np.array([a1 @ H, a2 @ H, a3 @ H]) / det
    return float(t @ pre.S @ t - H @ omega)
