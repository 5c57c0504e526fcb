"""Joint rotational-velocity / weight estimation under a lifted robust kernel.

For a fixed translation direction the depth-eliminated residual is linear in
the rotational velocity, f(omega) = F omega - beta.  Instead of minimizing
||f||^2 directly, each point gets an optimization variable w_i and the
objective becomes

    ||w o f(omega)||^2 + sum_i kappa(w_i^2)^2,
    kappa(s) = (tau/sqrt(2)) (s - 1),

which is a smooth lifting of the truncated quadratic loss: points whose
residual stays below roughly tau keep w_i near 1, while large residuals drive
w_i toward 0 and their influence saturates at tau^2/2.  The stacked residual
(w o f; kappa(w o w)) is minimized over (omega, w) jointly with
Levenberg-Marquardt.  Since the weight-weight block of the normal equations is
diagonal, each iteration eliminates it with a Schur complement and solves only
a 3x3 system, keeping the cost O(N) per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import SingularSystemError
from .motion_field import FlowField, reduced_linear_system, solve_omega_hat

SQRT2 = float(np.sqrt(2.0))

# Damping beyond this means no productive step exists at machine precision.
LM_DAMPING_MAX = 1e12


@dataclass
class LiftedConfig:
    """Kernel width and Levenberg-Marquardt schedule for the inner solve."""

    tau: float = 0.05
    lm_initial_damping: float = 1e-4
    max_iterations: int = 200
    cost_tolerance: float = 1e-9
    w_init: float = 1.0

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        if not self.lm_initial_damping > 0.0:
            raise ValueError("lm_initial_damping must be positive")


@dataclass
class LiftedState:
    """Inner-solve iterate: rotational velocity, per-point weights, cost.

    converged / iterations / cost_history document how the solve ended;
    cost_history holds the cost after each accepted step (index 0 is the
    initial cost) and is non-increasing by construction.
    """

    omega: np.ndarray
    w: np.ndarray
    cost: float
    converged: bool = True
    iterations: int = 0
    cost_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64).reshape(3)
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)


@dataclass
class LiftedJacobian:
    """Structured Jacobian of the stacked residual (w o f; kappa(w o w)).

    Rows split into a data half and a regularizer half; the two weight blocks
    are diagonal and stored as vectors, never densified by the solver.

        [ omega_block | diag(data_weight_diag) ]
        [      0      | diag(reg_weight_diag)  ]
    """

    omega_block: np.ndarray
    data_weight_diag: np.ndarray
    reg_weight_diag: np.ndarray

    def to_dense(self) -> np.ndarray:
        """Materialize the full (2N, 3+N) matrix (test/oracle use only)."""
        n = self.omega_block.shape[0]
        J = np.zeros((2 * n, 3 + n))
        J[:n, :3] = self.omega_block
        J[:n, 3:] = np.diag(self.data_weight_diag)
        J[n:, 3:] = np.diag(self.reg_weight_diag)
        return J


def kappa(w_sq, tau: float = 0.05):
    """Smooth truncated-quadratic lifting term (tau/sqrt(2)) (w^2 - 1)."""
    return (tau / SQRT2) * (np.asarray(w_sq, dtype=np.float64) - 1.0)


def lifted_residual(
    flow: FlowField, t: np.ndarray, state: LiftedState, cfg: LiftedConfig
) -> np.ndarray:
    """Stacked residual (w o f(omega); kappa(w o w)) of length 2N."""
    F, beta, _ = reduced_linear_system(flow, t)
    f = F @ state.omega - beta
    return np.concatenate([state.w * f, kappa(state.w * state.w, cfg.tau)])


def lifted_objective(
    flow: FlowField, t: np.ndarray, state: LiftedState, cfg: LiftedConfig
) -> float:
    """Objective value sum_i (w_i E_i)^2 + sum_i kappa(w_i^2)^2."""
    F, beta, _ = reduced_linear_system(flow, t)
    f = F @ state.omega - beta
    k = kappa(state.w * state.w, cfg.tau)
    wf = state.w * f
    return float(wf @ wf + k @ k)


def lifted_jacobian(
    flow: FlowField, t: np.ndarray, state: LiftedState, cfg: LiftedConfig
) -> LiftedJacobian:
    """Analytic block Jacobian at the given state.

    d(w_i f_i)/d omega = w_i F_i, d(w_i f_i)/d w_i = f_i, and
    d kappa(w_i^2)/d w_i = sqrt(2) tau w_i.
    """
    F, beta, _ = reduced_linear_system(flow, t)
    f = F @ state.omega - beta
    return LiftedJacobian(
        omega_block=state.w[:, None] * F,
        data_weight_diag=f,
        reg_weight_diag=SQRT2 * cfg.tau * state.w,
    )


def solve_lifted_inner(
    flow: FlowField,
    t: np.ndarray,
    cfg: LiftedConfig,
    init: LiftedState | None = None,
) -> LiftedState:
    """Minimize the lifted objective over (omega, w) for a fixed direction t.

    Levenberg-Marquardt with the diagonal weight block eliminated by a Schur
    complement, so each iteration costs O(N) plus one 3x3 solve.  Cold starts
    use omega = the unweighted least-squares solution and w = cfg.w_init;
    passing a previous LiftedState warm-starts both.  Hitting max_iterations
    returns the best state found with converged False.  Raises
    SingularSystemError if fewer than 3 non-degenerate points exist.
    """
    F, beta, valid = reduced_linear_system(flow, t)
    if int(valid.sum()) < 3:
        raise SingularSystemError(
            f"only {int(valid.sum())} non-degenerate points; need at least 3"
        )
    n = flow.n
    if init is not None:
        omega = init.omega.copy()
        w = init.w.copy()
        if w.shape[0] != n:
            raise ValueError("warm-start weight length must match flow field")
    else:
        omega = solve_omega_hat(flow, t)
        w = np.full(n, cfg.w_init)

    tau = cfg.tau
    two_tau_sq = 2.0 * tau * tau
    lam = cfg.lm_initial_damping
    eye3 = np.eye(3)

    def _cost(om, wv):
        f = F @ om - beta
        wf = wv * f
        k = kappa(wv * wv, tau)
        return float(wf @ wf + k @ k), f, k

    cost, f, k = _cost(omega, w)
    history = [cost]
    converged = False
    iters = 0

    while iters < cfg.max_iterations:
        iters += 1
        # Gradient and Gauss-Newton blocks at the current linearization point.
        r1 = w * f
        a = F.T @ (w * r1)
        c = f * r1 + SQRT2 * tau * (w * k)
        Wt = F * (w * f)[:, None]
        U = F.T @ ((w * w)[:, None] * F)
        Vdiag = f * f + two_tau_sq * (w * w)

        inv_v = 1.0 / (Vdiag + lam)
        S = U + lam * eye3 - Wt.T @ (inv_v[:, None] * Wt)
        rhs = -a + Wt.T @ (inv_v * c)
        try:
            d_omega = np.linalg.solve(S, rhs)
        except np.linalg.LinAlgError:
            d_omega = None
        if d_omega is not None and np.isfinite(d_omega).all():
            d_w = inv_v * (-c - Wt @ d_omega)
            new_omega = omega + d_omega
            new_w = w + d_w
            new_cost, new_f, new_k = _cost(new_omega, new_w)
        else:
            new_cost = np.inf

        if new_cost <= cost:
            decrease = cost - new_cost
            omega, w, f, k = new_omega, new_w, new_f, new_k
            cost = new_cost
            history.append(cost)
            lam *= 0.5
            if decrease <= cfg.cost_tolerance * max(cost, 1e-300):
                converged = True
                break
        else:
            lam *= 10.0
            if lam > LM_DAMPING_MAX:
                # No descent direction at machine precision: treat as stalled
                # at a local minimum rather than a failure.
                converged = True
                break

    return LiftedState(
        omega=omega,
        w=w,
        cost=cost,
        converged=converged,
        iterations=iters,
        cost_history=np.array(history),
    )


def export_weights(w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Map unconstrained solver weights to reportable [0,1] confidences.

    Takes |w| (the objective depends on w only through w^2), then min-max
    rescales; an all-equal field degenerates to all-ones with a flag.
    """
    a = np.abs(np.asarray(w, dtype=np.float64).reshape(-1))
    lo = float(a.min())
    hi = float(a.max())
    span = hi - lo
    if span <= 1e-12 * max(abs(hi), 1e-9):
        return np.ones_like(a), True
    return (a - lo) / span, False
