"""End-to-end egomotion estimation pipeline.

Every variant shares one skeleton: candidate translation directions from a
deterministic spherical Fibonacci covering of the upper hemisphere, pruning to
the lowest-objective candidate, then local refinement in a 2D tangent chart of
the unit sphere with renormalization after every step.  The variants differ
only in the objective:

  raw     unweighted depth-eliminated least squares
  erl     the same objective with fixed expected-residual-likelihood weights
  lifted  nested inner solves of the lifted robust kernel at each candidate t
  soatto  denominator-free closed-form cost (fast, biased baseline)

Refinement for the three sum-of-squares objectives is Gauss-Newton with
finite-difference residual Jacobians; the lifted variant probes with the inner
state frozen (the inner optimum makes the frozen gradient agree with the true
one) and re-solves the inner problem, warm-started, only when evaluating a
step for acceptance.  The soatto cost is not a sum of squares and can go
negative, so it gets a finite-difference Newton refinement instead.

Estimates are reported with the translation direction canonicalized to the
upper hemisphere; the objective and the rotational-velocity solve are exactly
antipode-invariant, so final quantities are computed at the canonical
direction directly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .erl import (
    ConfidenceWeights,
    erl_confidence_weights,
    gaussian_confidence_weights,
)
from .exceptions import (
    DegeneratePointError,
    EstimationError,
    NearSingularCostError,
    SingularSystemError,
    ZeroMotionError,
)
from .lifted import (
    LiftedConfig,
    LiftedState,
    export_weights,
    lifted_residual,
    solve_lifted_inner,
)
from .motion_field import (
    CameraMotion,
    FlowField,
    InverseDepths,
    canonical_direction,
    error_vector,
    recover_depths,
    reduced_linear_system,
    solve_omega_hat,
)
from .soatto import SoattoPrecompute, soatto_cost, soatto_precompute

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

# Central-difference step for residual Jacobians on the tangent chart, and the
# wider step used for the second-order differences of the scalar soatto cost.
GN_FD_STEP = 1e-6
SCALAR_FD_STEP = 1e-4

_SOLVER_ERRORS = (SingularSystemError, DegeneratePointError, NearSingularCostError)


@dataclass
class ErlConfig:
    """Residual-distribution family for the confidence weights."""

    kind: str = "laplace"

    def __post_init__(self):
        if self.kind not in ("laplace", "gauss"):
            raise ValueError(f"kind must be 'laplace' or 'gauss', got {self.kind!r}")


@dataclass
class SolverConfig:
    """Grid sizes, refinement schedule and guards for the full pipeline."""

    init_grid_size: int = 625
    erl_grid_size: int = 100
    gn_max_iterations: int = 50
    gn_tolerance: float = 1e-10
    min_mean_flow_magnitude: float = 1e-4
    lifted_prune_iterations: int = 10
    erl: ErlConfig = field(default_factory=ErlConfig)
    lifted: LiftedConfig = field(default_factory=LiftedConfig)

    def __post_init__(self):
        if self.init_grid_size < 1 or self.erl_grid_size < 1:
            raise ValueError("grid sizes must be >= 1")


@dataclass
class EstimateDiagnostics:
    method: str
    grid_winner_index: int
    grid_winner_cost: float
    gn_iterations: int
    converged: bool
    degenerate_point_count: int
    weight_fallback: bool = False


@dataclass
class EgomotionEstimate:
    """Full pipeline output.

    weights are the exported [0,1] confidences (all-ones for raw/soatto);
    solver_weights keeps the lifted variant's unconstrained weight vector so
    the reported cost stays recomputable.
    """

    motion: CameraMotion
    depths: InverseDepths
    weights: ConfidenceWeights
    cost: float
    diagnostics: EstimateDiagnostics
    solver_weights: np.ndarray | None = None


@dataclass
class GridWinner:
    index: int
    t: np.ndarray
    cost: float


@dataclass
class RefineResult:
    t: np.ndarray
    cost: float
    iterations: int
    converged: bool
    lifted_state: LiftedState | None = None


def hemisphere_grid(n: int) -> np.ndarray:
    """n deterministic, roughly equal-area unit directions with t_z > 0.

    Spherical Fibonacci spiral restricted to the upper hemisphere: heights
    z_k = 1 - k/n step down from the pole (so n=1 is exactly the optical
    axis) while the azimuth advances by the golden angle.
    """
    if n < 1:
        raise ValueError(f"grid size must be >= 1, got {n}")
    k = np.arange(n)
    z = 1.0 - k / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = k * GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _tangent_basis(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Deterministic orthonormal pair spanning the tangent plane at t.
    a = np.zeros(3)
    a[int(np.argmin(np.abs(t)))] = 1.0
    b1 = _unit(np.cross(t, a))
    return b1, np.cross(t, b1)


class _ReducedObjective:
    """Sum-of-squares objective E(t, omega_hat(t)), optionally weighted.

    Re-solving the rotational velocity inside every evaluation makes the
    residual an exact function of t alone (variable projection), so the same
    routine serves both probing and acceptance.
    """

    def __init__(self, flow: FlowField, weights: np.ndarray | None = None):
        self.flow = flow
        self.weights = weights

    def probe_residual(self, t: np.ndarray) -> np.ndarray:
        omega = solve_omega_hat(self.flow, t, weights=self.weights)
        e = error_vector(self.flow, t, omega).e
        return e if self.weights is None else self.weights * e

    def trial_cost(self, t: np.ndarray) -> float:
        r = self.probe_residual(t)
        return float(r @ r)

    def commit(self):
        pass


class _LiftedOuterObjective:
    """Lifted objective min over (omega, w), with warm-started inner solves.

    trial_cost runs a full inner solve from the last committed state; commit
    adopts it once the outer step is accepted.  probe_residual evaluates the
    stacked residual with the inner state frozen, which keeps the
    finite-difference Jacobian free of inner-termination jitter while still
    giving the true outer gradient at the inner optimum.
    """

    def __init__(self, flow: FlowField, cfg: LiftedConfig):
        self.flow = flow
        self.cfg = cfg
        self.state: LiftedState | None = None
        self._pending: LiftedState | None = None

    def probe_residual(self, t: np.ndarray) -> np.ndarray:
        return lifted_residual(self.flow, t, self.state, self.cfg)

    def trial_cost(self, t: np.ndarray) -> float:
        self._pending = solve_lifted_inner(self.flow, t, self.cfg, init=self.state)
        return self._pending.cost

    def commit(self):
        if self._pending is not None:
            self.state = self._pending


def grid_prune(
    flow: FlowField,
    grid: np.ndarray,
    objective="raw",
    cfg: SolverConfig | None = None,
    weights: np.ndarray | None = None,
) -> GridWinner:
    """Lowest-objective grid candidate; ties go to the lowest index.

    objective is 'raw', 'erl', 'lifted', or any callable t -> cost.  The
    lifted objective runs a capped inner solve per candidate (full convergence
    is deferred to refinement).  Candidates whose evaluation raises a solver
    error are skipped; EstimationError if every candidate fails.
    """
    cfg = cfg or SolverConfig()
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if grid.shape[0] < 1:
        raise ValueError("grid must be nonempty")
    if callable(objective):
        cost_fn = objective
    elif objective == "raw":
        cost_fn = _ReducedObjective(flow).trial_cost
    elif objective == "erl":
        if weights is None:
            raise ValueError("the erl objective needs weights")
        cost_fn = _ReducedObjective(flow, weights).trial_cost
    elif objective == "lifted":
        lcfg = dataclasses.replace(
            cfg.lifted, max_iterations=cfg.lifted_prune_iterations
        )

        def cost_fn(t):
            return solve_lifted_inner(flow, t, lcfg).cost

    else:
        raise ValueError(f"unknown objective {objective!r}")

    costs = np.full(grid.shape[0], np.inf)
    for i, t in enumerate(grid):
        try:
            c = float(cost_fn(t))
        except _SOLVER_ERRORS:
            continue
        if np.isfinite(c):
            costs[i] = c
    if not np.isfinite(costs).any():
        raise EstimationError("every grid candidate failed its objective evaluation")
    idx = int(np.argmin(costs))
    return GridWinner(index=idx, t=grid[idx].copy(), cost=float(costs[idx]))


def _refine_sum_of_squares(obj, t0: np.ndarray, cfg: SolverConfig):
    t = _unit(np.asarray(t0, dtype=np.float64).reshape(3))
    cost = obj.trial_cost(t)
    obj.commit()
    converged = False
    iters = 0
    for _ in range(cfg.gn_max_iterations):
        iters += 1
        b1, b2 = _tangent_basis(t)
        try:
            r0 = obj.probe_residual(t)
            cols = []
            for b in (b1, b2):
                rp = obj.probe_residual(_unit(t + GN_FD_STEP * b))
                rm = obj.probe_residual(_unit(t - GN_FD_STEP * b))
                cols.append((rp - rm) / (2.0 * GN_FD_STEP))
        except _SOLVER_ERRORS:
            break
        J = np.stack(cols, axis=1)
        g = J.T @ r0
        if not np.isfinite(g).all():
            break
        H = J.T @ J
        ridge = 1e-12 * (H[0, 0] + H[1, 1]) + 1e-300
        H[0, 0] += ridge
        H[1, 1] += ridge
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            gn = float(np.linalg.norm(g))
            if gn == 0.0:
                converged = True
                break
            delta = -g / gn * 1e-2
        step = delta[0] * b1 + delta[1] * b2

        accepted = False
        alpha = 1.0
        for _ in range(30):
            cand = _unit(t + alpha * step)
            try:
                c = obj.trial_cost(cand)
            except _SOLVER_ERRORS:
                c = np.inf
            if c <= cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # No descent at numeric resolution: accept the current point as
            # the local minimum.
            converged = True
            break
        angle = float(np.arccos(np.clip(t @ cand, -1.0, 1.0)))
        t, cost = cand, c
        obj.commit()
        if angle < cfg.gn_tolerance:
            converged = True
            break
    return t, cost, iters, converged


def gauss_newton_refine_t(
    flow: FlowField,
    t0: np.ndarray,
    objective="raw",
    cfg: SolverConfig | None = None,
    weights: np.ndarray | None = None,
) -> RefineResult:
    """Refine a translation direction on the unit sphere from t0.

    Gauss-Newton in a 2D tangent chart with renormalization, step halving on
    cost increase, convergence when the accepted step angle drops below
    cfg.gn_tolerance.  objective as in grid_prune (callables not supported
    here; they have no residual structure).
    """
    cfg = cfg or SolverConfig()
    if objective == "raw":
        obj = _ReducedObjective(flow)
    elif objective == "erl":
        if weights is None:
            raise ValueError("the erl objective needs weights")
        obj = _ReducedObjective(flow, weights)
    elif objective == "lifted":
        obj = _LiftedOuterObjective(flow, cfg.lifted)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    t, cost, iters, converged = _refine_sum_of_squares(obj, t0, cfg)
    return RefineResult(
        t=t,
        cost=cost,
        iterations=iters,
        converged=converged,
        lifted_state=getattr(obj, "state", None),
    )


def _refine_scalar(cost_fn, t0: np.ndarray, cfg: SolverConfig):
    # Finite-difference Newton for objectives without sum-of-squares
    # structure; falls back to a short gradient step when the 2x2 Hessian is
    # not positive definite.
    h = SCALAR_FD_STEP

    def safe(tv):
        try:
            c = float(cost_fn(tv))
        except _SOLVER_ERRORS:
            return np.inf
        return c if np.isfinite(c) else np.inf

    t = _unit(np.asarray(t0, dtype=np.float64).reshape(3))
    cost = safe(t)
    if not np.isfinite(cost):
        raise EstimationError("objective undefined at the initial direction")
    converged = False
    iters = 0
    for _ in range(cfg.gn_max_iterations):
        iters += 1
        b1, b2 = _tangent_basis(t)
        f1p = safe(_unit(t + h * b1))
        f1m = safe(_unit(t - h * b1))
        f2p = safe(_unit(t + h * b2))
        f2m = safe(_unit(t - h * b2))
        fpp = safe(_unit(t + h * b1 + h * b2))
        fpm = safe(_unit(t + h * b1 - h * b2))
        fmp = safe(_unit(t - h * b1 + h * b2))
        fmm = safe(_unit(t - h * b1 - h * b2))
        probes = (f1p, f1m, f2p, f2m, fpp, fpm, fmp, fmm)
        if not all(np.isfinite(p) for p in probes):
            break
        g = np.array([(f1p - f1m) / (2.0 * h), (f2p - f2m) / (2.0 * h)])
        if float(np.linalg.norm(g)) < 1e-12 * max(1.0, abs(cost)):
            converged = True
            break
        h11 = (f1p - 2.0 * cost + f1m) / (h * h)
        h22 = (f2p - 2.0 * cost + f2m) / (h * h)
        h12 = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
        det = h11 * h22 - h12 * h12
        if h11 > 0.0 and det > 0.0:
            delta = np.linalg.solve(np.array([[h11, h12], [h12, h22]]), -g)
        else:
            delta = -g / float(np.linalg.norm(g)) * 1e-2
        step = delta[0] * b1 + delta[1] * b2

        accepted = False
        alpha = 1.0
        for _ in range(30):
            cand = _unit(t + alpha * step)
            c = safe(cand)
            if c <= cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True
            break
        angle = float(np.arccos(np.clip(t @ cand, -1.0, 1.0)))
        t, cost = cand, c
        if angle < cfg.gn_tolerance:
            converged = True
            break
    return t, cost, iters, converged


def _require_motion(flow: FlowField, cfg: SolverConfig):
    mean_mag = float(np.mean(np.hypot(flow.flows[:, 0], flow.flows[:, 1])))
    if mean_mag < cfg.min_mean_flow_magnitude:
        raise ZeroMotionError(
            f"mean flow magnitude {mean_mag:.3e} is below "
            f"{cfg.min_mean_flow_magnitude:.0e}; motion too small to estimate"
        )


def _degenerate_count(flow: FlowField, t: np.ndarray) -> int:
    _, _, valid = reduced_linear_system(flow, t)
    return int((~valid).sum())


def estimate_raw(flow: FlowField, cfg: SolverConfig | None = None) -> EgomotionEstimate:
    """Unweighted least-squares pipeline (grid prune + refinement)."""
    cfg = cfg or SolverConfig()
    _require_motion(flow, cfg)
    win = grid_prune(flow, hemisphere_grid(cfg.init_grid_size), "raw", cfg)
    ref = gauss_newton_refine_t(flow, win.t, "raw", cfg)
    t = canonical_direction(ref.t)
    omega = solve_omega_hat(flow, t)
    res = error_vector(flow, t, omega)
    ones = np.ones(flow.n)
    return EgomotionEstimate(
        motion=CameraMotion(t, omega),
        depths=recover_depths(flow, t, omega),
        weights=ConfidenceWeights(w=ones, raw=ones.copy(), degenerate=False),
        cost=res.cost(),
        diagnostics=EstimateDiagnostics(
            method="raw",
            grid_winner_index=win.index,
            grid_winner_cost=win.cost,
            gn_iterations=ref.iterations,
            converged=ref.converged,
            degenerate_point_count=int((~res.valid).sum()),
        ),
    )


def estimate_erl(flow: FlowField, cfg: SolverConfig | None = None) -> EgomotionEstimate:
    """Confidence-weighted pipeline.

    Weights are computed once on the coarse grid and then frozen; pruning,
    refinement and the final rotational solve all use the weighted objective.
    Degenerate (contrast-free) weights fall back to the raw estimate with the
    fallback flagged in the diagnostics.
    """
    cfg = cfg or SolverConfig()
    _require_motion(flow, cfg)
    weight_fn = (
        erl_confidence_weights if cfg.erl.kind == "laplace" else gaussian_confidence_weights
    )
    cw = weight_fn(flow, hemisphere_grid(cfg.erl_grid_size))
    if cw.degenerate:
        base = estimate_raw(flow, cfg)
        diag = dataclasses.replace(
            base.diagnostics, method="erl", weight_fallback=True
        )
        return dataclasses.replace(base, weights=cw, diagnostics=diag)
    win = grid_prune(flow, hemisphere_grid(cfg.init_grid_size), "erl", cfg, weights=cw.w)
    ref = gauss_newton_refine_t(flow, win.t, "erl", cfg, weights=cw.w)
    t = canonical_direction(ref.t)
    omega = solve_omega_hat(flow, t, weights=cw.w)
    wr = cw.w * error_vector(flow, t, omega).e
    return EgomotionEstimate(
        motion=CameraMotion(t, omega),
        depths=recover_depths(flow, t, omega),
        weights=cw,
        cost=float(wr @ wr),
        diagnostics=EstimateDiagnostics(
            method="erl",
            grid_winner_index=win.index,
            grid_winner_cost=win.cost,
            gn_iterations=ref.iterations,
            converged=ref.converged,
            degenerate_point_count=_degenerate_count(flow, t),
        ),
    )


def estimate_lifted(flow: FlowField, cfg: SolverConfig | None = None) -> EgomotionEstimate:
    """Lifted-kernel pipeline with nested inner solves."""
    cfg = cfg or SolverConfig()
    _require_motion(flow, cfg)
    win = grid_prune(flow, hemisphere_grid(cfg.init_grid_size), "lifted", cfg)
    ref = gauss_newton_refine_t(flow, win.t, "lifted", cfg)
    t = canonical_direction(ref.t)
    state = ref.lifted_state
    w_export, degenerate = export_weights(state.w)
    return EgomotionEstimate(
        motion=CameraMotion(t, state.omega),
        depths=recover_depths(flow, t, state.omega),
        weights=ConfidenceWeights(
            w=w_export, raw=np.abs(state.w), degenerate=degenerate
        ),
        cost=state.cost,
        diagnostics=EstimateDiagnostics(
            method="lifted",
            grid_winner_index=win.index,
            grid_winner_cost=win.cost,
            gn_iterations=ref.iterations,
            converged=ref.converged,
            degenerate_point_count=_degenerate_count(flow, t),
        ),
        solver_weights=state.w,
    )


def soatto_estimate(flow: FlowField, cfg: SolverConfig | None = None) -> EgomotionEstimate:
    """Closed-form-cost pipeline; rotation and depths recovered at the winner."""
    cfg = cfg or SolverConfig()
    _require_motion(flow, cfg)
    pre = soatto_precompute(flow)

    def cost_fn(t):
        return soatto_cost(pre, t)

    win = grid_prune(flow, hemisphere_grid(cfg.init_grid_size), cost_fn, cfg)
    t_ref, _, iters, converged = _refine_scalar(cost_fn, win.t, cfg)
    t = canonical_direction(t_ref)
    omega = solve_omega_hat(flow, t)
    ones = np.ones(flow.n)
    return EgomotionEstimate(
        motion=CameraMotion(t, omega),
        depths=recover_depths(flow, t, omega),
        weights=ConfidenceWeights(w=ones, raw=ones.copy(), degenerate=False),
        cost=soatto_cost(pre, t),
        diagnostics=EstimateDiagnostics(
            method="soatto",
            grid_winner_index=win.index,
            grid_winner_cost=win.cost,
            gn_iterations=iters,
            converged=converged,
            degenerate_point_count=_degenerate_count(flow, t),
        ),
    )


ESTIMATORS = {
    "raw": estimate_raw,
    "erl": estimate_erl,
    "lifted": estimate_lifted,
    "soatto": soatto_estimate,
}


def estimate(flow: FlowField, method: str, cfg: SolverConfig | None = None) -> EgomotionEstimate:
    """Dispatch to one of the four estimator variants by name."""
    try:
        fn = ESTIMATORS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(ESTIMATORS)}")
    return fn(flow, cfg)
