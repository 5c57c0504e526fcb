"""Perspective motion-field model and depth-eliminated residuals.

The instantaneous motion field at a calibrated image point x = (x, y) is

    u(x) = rho(x) * A(x) t + B(x) w

with inverse depth rho, translational velocity t, rotational velocity w and

    A(x) = [[1, 0, -x],        B(x) = [[-x*y, 1 + x^2, -y],
            [0, 1, -y]],               [-(1 + y^2), x*y, x]].

Because rho enters linearly per point, it can be eliminated in closed form:
projecting each flow equation onto the direction orthogonal to A(x)t leaves
one scalar residual per point,

    E_i = d_i . (B(x_i) w - u_i),     d_i = J A(x_i) t / ||J A(x_i) t||,

with J the 90-degree rotation.  Stacking d_i^T B(x_i) into the rows of F and
d_i . u_i into beta gives the reduced linear model E = F w - beta, from which
the least-squares rotational velocity is a single 3x3 solve.  Everything here
is O(N) and a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegeneratePointError, SingularSystemError

# 90-degree rotation used to build the orthogonal-complement directions.
J2 = np.array([[0.0, -1.0], [1.0, 0.0]])

# Points with ||J A(x) t|| below this are at/near the focus of expansion and are
# masked out of all sums (the residual normalization divides by this norm).
FOE_EPS = 1e-8

# Condition-number ceiling for the 3x3 rotational-velocity solve.
OMEGA_COND_MAX = 1e12


@dataclass
class PointBasis:
    """Exact A(x), B(x) matrices (2x3 each) for one image point."""

    A: np.ndarray
    B: np.ndarray


@dataclass
class FlowField:
    """N calibrated image points with their 2D flow vectors.

    points: (N, 2) calibrated coordinates, flows: (N, 2) velocities in
    calibrated units/frame.  Both must be finite and of equal length.
    """

    points: np.ndarray
    flows: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.flows = np.atleast_2d(np.asarray(self.flows, dtype=np.float64))
        if self.points.shape != self.flows.shape or self.points.shape[1] != 2:
            raise ValueError(
                f"points {self.points.shape} and flows {self.flows.shape} must both be (N, 2)"
            )
        if self.points.shape[0] < 1:
            raise ValueError("flow field must contain at least one point")
        if not (np.isfinite(self.points).all() and np.isfinite(self.flows).all()):
            raise ValueError("flow field contains non-finite values")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class CameraMotion:
    """Unit translation direction t and rotational velocity omega (rad/frame).

    The translation scale is unobservable, so t is kept on the unit sphere.
    Estimates are reported on the canonical hemisphere (see ``canonical``);
    construction itself accepts either antipode.
    """

    t: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.omega = np.asarray(self.omega, dtype=np.float64).reshape(3)
        if not (np.isfinite(self.t).all() and np.isfinite(self.omega).all()):
            raise ValueError("camera motion contains non-finite values")
        nrm = float(np.linalg.norm(self.t))
        if abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"translation direction must be unit norm, got {nrm!r}")

    @classmethod
    def from_direction(cls, t, omega) -> "CameraMotion":
        """Build a CameraMotion, normalizing t (must be nonzero)."""
        t = np.asarray(t, dtype=np.float64).reshape(3)
        nrm = float(np.linalg.norm(t))
        if nrm == 0.0:
            raise ValueError("translation direction must be nonzero")
        return cls(t / nrm, omega)

    def canonical(self) -> "CameraMotion":
        """Antipodal representative with t_z >= 0 (ties: t_x >= 0, then t_y >= 0)."""
        return CameraMotion(canonical_direction(self.t), self.omega)


@dataclass
class InverseDepths:
    """Per-point inverse depths; NaN plus valid=False marks focus-of-expansion points."""

    rho: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64).reshape(-1)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if self.rho.shape != self.valid.shape:
            raise ValueError("rho and valid must have equal length")


@dataclass
class ResidualVector:
    """Depth-eliminated scalar residuals E_i; masked entries are zero with valid=False."""

    e: np.ndarray
    valid: np.ndarray

    def cost(self) -> float:
        """Sum of squared residuals (the reduced objective value)."""
        return float(self.e @ self.e)


def canonical_direction(t: np.ndarray) -> np.ndarray:
    """Canonical-hemisphere representative of a unit direction.

    Chooses the antipode with t_z >= 0; if t_z == 0 then t_x >= 0; if both
    are zero then t_y >= 0.
    """
    t = np.asarray(t, dtype=np.float64).reshape(3)
    flip = t[2] < 0.0 or (t[2] == 0.0 and (t[0] < 0.0 or (t[0] == 0.0 and t[1] < 0.0)))
    return -t if flip else t


def point_basis(p) -> PointBasis:
    """Exact A(x), B(x) for a single calibrated point (x, y)."""
    x, y = float(p[0]), float(p[1])
    A = np.array([[1.0, 0.0, -x], [0.0, 1.0, -y]])
    B = np.array([[-x * y, 1.0 + x * x, -y], [-(1.0 + y * y), x * y, x]])
    return PointBasis(A=A, B=B)


def basis_matrices(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stacked A(x_i), B(x_i) as (N, 2, 3) arrays."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y = pts[:, 0], pts[:, 1]
    n = pts.shape[0]
    zero = np.zeros(n)
    one = np.ones(n)
    A = np.stack(
        [np.stack([one, zero, -x], axis=1), np.stack([zero, one, -y], axis=1)], axis=1
    )
    B = np.stack(
        [
            np.stack([-x * y, 1.0 + x * x, -y], axis=1),
            np.stack([-(1.0 + y * y), x * y, x], axis=1),
        ],
        axis=1,
    )
    return A, B


def translational_flow(points: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Rows A(x_i) t, i.e. the flow direction induced by unit-depth translation."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).reshape(3)
    return np.stack([t[0] - pts[:, 0] * t[2], t[1] - pts[:, 1] * t[2]], axis=1)


def rotational_flow(points: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Rows B(x_i) omega, the depth-independent rotational flow component."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    w = np.asarray(omega, dtype=np.float64).reshape(3)
    x, y = pts[:, 0], pts[:, 1]
    fu = -x * y * w[0] + (1.0 + x * x) * w[1] - y * w[2]
    fv = -(1.0 + y * y) * w[0] + x * y * w[1] + x * w[2]
    return np.stack([fu, fv], axis=1)


def predict_flow(motion: CameraMotion, depths, points) -> FlowField:
    """Forward motion-field model: u_i = rho_i * A(x_i) t + B(x_i) omega."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rho = np.asarray(depths.rho if isinstance(depths, InverseDepths) else depths,
                     dtype=np.float64).reshape(-1)
    if rho.shape[0] != pts.shape[0]:
        raise ValueError("depths and points must have equal length")
    flows = rho[:, None] * translational_flow(pts, motion.t) + rotational_flow(
        pts, motion.omega
    )
    return FlowField(points=pts, flows=flows)


def perp_direction(p, t: np.ndarray) -> np.ndarray:
    """Unit direction orthogonal to A(x) t, namely J A(x) t / ||J A(x) t||.

    Raises DegeneratePointError when the point sits at/near the focus of
    expansion (||J A(x) t|| < FOE_EPS).
    """
    x, y = float(p[0]), float(p[1])
    t = np.asarray(t, dtype=np.float64).reshape(3)
    c = np.array([-(t[1] - y * t[2]), t[0] - x * t[2]])
    nrm = float(np.linalg.norm(c))
    if nrm < FOE_EPS:
        raise DegeneratePointError(
            f"point ({x}, {y}) is within {FOE_EPS} of the focus of expansion"
        )
    return c / nrm


def reduced_linear_system(
    flow: FlowField, t: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduced linear model of the depth-eliminated residual, E = F omega - beta.

    Returns (F, beta, valid) with F (N, 3) holding rows d_i^T B(x_i), beta (N,)
    holding d_i . u_i, and valid marking points away from the focus of
    expansion.  Rows of masked points are zeroed so they drop out of all sums.
    """
    t = np.asarray(t, dtype=np.float64).reshape(3)
    x, y = flow.points[:, 0], flow.points[:, 1]
    # c = J A(x) t rotated 90 degrees from the translational direction A(x) t
    cx = -(t[1] - y * t[2])
    cy = t[0] - x * t[2]
    nrm = np.hypot(cx, cy)
    valid = nrm >= FOE_EPS
    safe = np.where(valid, nrm, 1.0)
    dx = np.where(valid, cx / safe, 0.0)
    dy = np.where(valid, cy / safe, 0.0)
    F = np.stack(
        [
            -x * y * dx - (1.0 + y * y) * dy,
            (1.0 + x * x) * dx + x * y * dy,
            -y * dx + x * dy,
        ],
        axis=1,
    )
    beta = dx * flow.flows[:, 0] + dy * flow.flows[:, 1]
    return F, beta, valid


def solve_omega_hat(flow: FlowField, t: np.ndarray, weights=None) -> np.ndarray:
    """Closed-form least-squares rotational velocity for a fixed translation.

    Minimizes sum_i (w_i E_i)^2 over omega via the 3x3 normal equations built
    in one O(N) pass.  Raises SingularSystemError when fewer than 3
    non-degenerate points remain or the normal matrix condition number
    exceeds OMEGA_COND_MAX.
    """
    F, beta, valid = reduced_linear_system(flow, t)
    if int(valid.sum()) < 3:
        raise SingularSystemError(
            f"only {int(valid.sum())} non-degenerate points; need at least 3"
        )
    if weights is None:
        Fw = F
        bw = beta
    else:
        w = np.asarray(getattr(weights, "w", weights), dtype=np.float64).reshape(-1)
        if w.shape[0] != flow.n:
            raise ValueError("weights length must match flow field")
        w2 = w * w
        Fw = F * w2[:, None]
        bw = beta * w2
    G = F.T @ Fw
    h = F.T @ bw
    ev = np.linalg.eigvalsh(G)
    lo, hi = float(ev[0]), float(ev[-1])
    if lo <= 0.0 or hi / lo > OMEGA_COND_MAX:
        raise SingularSystemError(
            f"rotational-velocity normal matrix is ill-conditioned (eigs {lo:.3e}..{hi:.3e})"
        )
    return np.linalg.solve(G, h)


def error_vector(flow: FlowField, t: np.ndarray, omega: np.ndarray) -> ResidualVector:
    """Depth-eliminated residuals E_i = d_i . (B(x_i) omega - u_i).

    ||E||^2 equals the reduced objective at (t, omega); with
    omega = solve_omega_hat(flow, t) it is the fully reduced residual in t.
    Focus-of-expansion points are masked (E_i = 0, valid False).
    """
    F, beta, valid = reduced_linear_system(flow, t)
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    return ResidualVector(e=F @ omega - beta, valid=valid)


def recover_depths(flow: FlowField, t: np.ndarray, omega: np.ndarray) -> InverseDepths:
    """Per-point least-squares inverse depths at a fixed (t, omega).

    rho_i = <A(x_i) t, u_i - B(x_i) omega> / ||A(x_i) t||^2; points at the
    focus of expansion are flagged invalid (NaN) rather than raising.
    """
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    a = translational_flow(flow.points, t)
    resid = flow.flows - rotational_flow(flow.points, omega)
    denom = np.einsum("ij,ij->i", a, a)
    valid = np.sqrt(denom) >= FOE_EPS
    safe = np.where(valid, denom, 1.0)
    rho = np.where(valid, np.einsum("ij,ij->i", a, resid) / safe, np.nan)
    return InverseDepths(rho=rho, valid=valid)
