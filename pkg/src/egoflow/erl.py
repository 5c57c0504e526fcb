"""Expected-residual-likelihood confidence weights.

Each candidate translation direction, paired with its own least-squares
rotational velocity, defines a counterfactual motion model for the flow field.
Under any single model the depth-eliminated residual magnitudes of inliers
cluster while gross outliers sit in the tail, so fitting a Laplacian to the
field's residuals and evaluating each point's density scores that point's
plausibility under the model.  Averaging the density across M candidate models
gives a per-point confidence weight that needs one 3x3 solve per model and no
iterative reweighting.

All-model aggregation is vectorized over an (M, N) residual-magnitude matrix;
a per-sample reference path (``scaled_residuals``) is kept deliberately
separate so the two can be cross-checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SingularSystemError
from .motion_field import (
    FOE_EPS,
    OMEGA_COND_MAX,
    FlowField,
    error_vector,
    solve_omega_hat,
)

# Lower clamp on fitted scale parameters; keeps densities finite when a
# candidate model reproduces the flow almost exactly.
B_MIN = 1e-9

_GAUSS_NORM = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class LaplacianFit:
    """Location/scale of a Laplacian fitted to residual magnitudes."""

    mu: float
    b: float

    def __post_init__(self):
        if not self.b >= B_MIN:
            raise ValueError(f"scale must be >= {B_MIN}, got {self.b!r}")


@dataclass
class GaussianFit:
    """Mean/standard deviation of a Gaussian fitted to residual magnitudes."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma >= B_MIN:
            raise ValueError(f"scale must be >= {B_MIN}, got {self.sigma!r}")


@dataclass
class ModelSampleSet:
    """Candidate models: directions, their rotational velocities, residual fits."""

    translations: np.ndarray
    omegas: np.ndarray
    fits: list[LaplacianFit]

    @property
    def m(self) -> int:
        return self.translations.shape[0]


@dataclass
class ConfidenceWeights:
    """Per-point weights in [0,1]; raw holds the unscaled expected likelihoods.

    degenerate is set when the raw field carried no contrast (all entries
    effectively equal) and the weights fell back to all-ones.
    """

    w: np.ndarray
    raw: np.ndarray
    degenerate: bool = False


def scaled_residuals(flow: FlowField, t_m: np.ndarray) -> np.ndarray:
    """Residual magnitudes |E_i| under the model (t_m, omega_hat(t_m)).

    Reference per-sample path; propagates SingularSystemError from the
    rotational-velocity solve.
    """
    omega = solve_omega_hat(flow, t_m)
    return np.abs(error_vector(flow, t_m, omega).e)


def laplacian_mle(residuals) -> LaplacianFit:
    """Median / mean-absolute-deviation fit, scale clamped below by B_MIN."""
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("residuals must be nonempty")
    mu = float(np.median(r))
    b = max(float(np.mean(np.abs(r - mu))), B_MIN)
    return LaplacianFit(mu=mu, b=b)


def laplacian_likelihood(r: float, fit: LaplacianFit) -> float:
    """Laplacian density (1/2b) exp(-|r - mu| / b)."""
    return float(np.exp(-abs(r - fit.mu) / fit.b) / (2.0 * fit.b))


def gaussian_mle(residuals) -> GaussianFit:
    """Mean / population standard deviation fit, scale clamped below by B_MIN."""
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("residuals must be nonempty")
    mu = float(np.mean(r))
    sigma = max(float(np.std(r)), B_MIN)
    return GaussianFit(mu=mu, sigma=sigma)


def gaussian_likelihood(r: float, fit: GaussianFit) -> float:
    """Gaussian density at r."""
    z = (r - fit.mu) / fit.sigma
    return float(_GAUSS_NORM / fit.sigma * np.exp(-0.5 * z * z))


def _batched_residual_magnitudes(
    flow: FlowField, samples: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(M, N) |E| matrix across candidate directions, vectorized over both axes.

    Returns (abs_e, omegas, ok); rows with a singular or ill-conditioned
    rotational solve have ok False and NaN entries instead of raising, so a
    stray degenerate candidate does not sink the whole batch.
    """
    T = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if T.shape[1] != 3:
        raise ValueError("samples must be (M, 3) unit directions")
    x, y = flow.points[:, 0], flow.points[:, 1]
    u, v = flow.flows[:, 0], flow.flows[:, 1]

    # Perp directions d = J A(x) t / ||.|| for every (sample, point) pair.
    cx = -(T[:, 1, None] - y[None, :] * T[:, 2, None])
    cy = T[:, 0, None] - x[None, :] * T[:, 2, None]
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
        axis=2,
    )
    beta = dx * u + dy * v

    G = np.einsum("mni,mnj->mij", F, F)
    h = np.einsum("mni,mn->mi", F, beta)
    ev = np.linalg.eigvalsh(G)
    ok = (
        (valid.sum(axis=1) >= 3)
        & (ev[:, 0] > 0.0)
        & (ev[:, -1] <= OMEGA_COND_MAX * ev[:, 0])
    )
    omegas = np.full((T.shape[0], 3), np.nan)
    if ok.any():
        omegas[ok] = np.linalg.solve(G[ok], h[ok][..., None])[..., 0]
    abs_e = np.abs(np.einsum("mni,mi->mn", F, omegas) - beta)
    return abs_e, omegas, ok


def fit_model_samples(flow: FlowField, samples: np.ndarray) -> ModelSampleSet:
    """Fit a Laplacian to the residual field of every usable candidate model."""
    abs_e, omegas, ok = _batched_residual_magnitudes(flow, samples)
    if not ok.any():
        raise SingularSystemError("every candidate model had a singular solve")
    T = np.atleast_2d(np.asarray(samples, dtype=np.float64))[ok]
    fits = [laplacian_mle(row) for row in abs_e[ok]]
    return ModelSampleSet(translations=T, omegas=omegas[ok], fits=fits)


def _minmax_scale(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    # Affine rescale to [0,1]; a span that is zero (or lost to rounding) means
    # the field carries no contrast, so fall back to uniform weights.
    lo = float(raw.min())
    hi = float(raw.max())
    span = hi - lo
    if span <= 1e-12 * max(abs(hi), B_MIN):
        return np.ones_like(raw), True
    return (raw - lo) / span, False


def _confidence_weights(flow, samples, kind: str) -> ConfidenceWeights:
    abs_e, _, ok = _batched_residual_magnitudes(flow, samples)
    if not ok.any():
        raise SingularSystemError("every candidate model had a singular solve")
    r = abs_e[ok]
    if kind == "laplace":
        dev = np.abs(r - np.median(r, axis=1, keepdims=True))
        b = np.maximum(dev.mean(axis=1, keepdims=True), B_MIN)
        dens = np.exp(-dev / b) / (2.0 * b)
    else:
        dev = r - r.mean(axis=1, keepdims=True)
        sigma = np.maximum(r.std(axis=1, keepdims=True), B_MIN)
        dens = _GAUSS_NORM / sigma * np.exp(-0.5 * (dev / sigma) ** 2)
    raw = dens.mean(axis=0)
    w, degenerate = _minmax_scale(raw)
    return ConfidenceWeights(w=w, raw=raw, degenerate=degenerate)


def erl_confidence_weights(flow: FlowField, samples: np.ndarray) -> ConfidenceWeights:
    """Expected residual likelihood under Laplacian fits, scaled to [0,1].

    samples is an (M, 3) array of unit candidate directions, M >= 1.  Raises
    SingularSystemError only if every candidate model fails its solve.
    """
    return _confidence_weights(flow, samples, "laplace")


def gaussian_confidence_weights(flow: FlowField, samples: np.ndarray) -> ConfidenceWeights:
    """Same pipeline as erl_confidence_weights with Gaussian residual fits."""
    return _confidence_weights(flow, samples, "gauss")
