"""Ordinary kriging of the local intensity from grid-cell counts.

The predictor at a target cell is ``sum_i mu_i * N_i / nu`` where N_i are
the observed cell counts, nu the common cell area, and the weights solve
the ordinary-kriging system

    mu = C^{-1} C_o + (1 - 1' C^{-1} C_o) / (1' C^{-1} 1) * C^{-1} 1,

computed with two linear solves against a single shared Cholesky
factorization (never an explicit inverse).  The predictor variance is the
quadratic form ``mu' C mu / nu^2``; an equivalent expression through
C_o and the Lagrange term is evaluated as a consistency check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import covariance as cov
from .covariance import (
    CovSpec,
    KrigingSystem,
    MODE_ESTIMATION,
    MODE_PREDICTION,
    assemble_system,
    neumann_inverse,
)
from .errors import (
    ClampWarning,
    DegenerateWarning,
    PSDViolationError,
    SeriesDivergenceError,
    SingularSystemError,
)
from .geometry import PointPattern, Window, build_grid, cell_counts
from .summaries import (
    PairCorrelation,
    default_pcf_bandwidth,
    estimate_intensity,
    estimate_pcf,
)

#: Relative agreement required between the two variance expressions.
VARIANCE_FORM_RTOL = 1e-8

#: Variances below -1e-10 times the nugget scale indicate a broken system.
VARIANCE_NEGATIVE_TOL = 1e-10


@dataclass(frozen=True)
class IntensityModel:
    """A (possibly estimated) intensity and pair correlation pair."""

    intensity: float
    pcf: PairCorrelation
    source: str = "supplied"


@dataclass(frozen=True)
class KrigingWeights:
    """Solved weights for one target cell, with the Lagrange byproduct."""

    weights: np.ndarray
    lagrange: float
    target: int
    mode: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def weight_sum(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class IntensitySurface:
    """Per-cell intensity predictions and variances over a grid."""

    grid: object
    counts: object
    values: np.ndarray = field(repr=False)
    variances: np.ndarray = field(repr=False)
    prediction_mask: np.ndarray = field(repr=False)
    estimation_mask: np.ndarray = field(repr=False)
    provenance: dict = field(default_factory=dict)
    messages: tuple = ()


def solve_weights(system: KrigingSystem, target: int) -> KrigingWeights:
    """Ordinary-kriging weights for one target of an assembled system."""
    co = system.co_for(target)
    y = system.solve(co)
    z = system.ones_solve
    a = float(y.sum())
    b = float(z.sum())
    if not b > 0:
        raise SingularSystemError(
            f"1' C^-1 1 = {b:.3e} is not positive; the system is unusable"
        )
    lagrange = (1.0 - a) / b
    mu = y + lagrange * z
    return KrigingWeights(mu, lagrange, int(target), system.mode_for(target))


def solve_all_weights(system: KrigingSystem) -> list:
    """Weights for every target, sharing one factorization."""
    return [solve_weights(system, int(t)) for t in system.targets]


def predict(weights: KrigingWeights, observed_counts, cell_area: float) -> float:
    """Predicted local intensity: weighted counts divided by the cell area."""
    counts = np.asarray(observed_counts, dtype=float)
    if counts.shape != weights.weights.shape:
        raise ValueError("counts must align with the observed-cell weights")
    return float(weights.weights @ counts) / cell_area


def variance_direct(system: KrigingSystem, weights: KrigingWeights) -> float:
    """Predictor variance ``mu' C mu / nu^2``.

    The equivalent form ``[C_o' C^{-1} C_o + (1 - (1' C^{-1} C_o)^2) /
    (1' C^{-1} 1)] / nu^2`` is computed alongside and must agree to
    ``VARIANCE_FORM_RTOL`` relative; disagreement signals a numerically
    broken factorization.
    """
    nu = system.spec.grid.cell_area
    mu = weights.weights
    co = system.co_for(weights.target)
    quad = float(mu @ system.C @ mu) / nu ** 2

    y = system.solve(co)
    a = float(y.sum())
    b = float(system.ones_solve.sum())
    lagrange_form = (float(co @ y) + (1.0 - a * a) / b) / nu ** 2

    scale = max(abs(quad), abs(lagrange_form), system.spec.nugget / nu ** 2)
    if abs(quad - lagrange_form) > VARIANCE_FORM_RTOL * scale:
        raise SingularSystemError(
            f"variance forms disagree ({quad:.12e} vs {lagrange_form:.12e}); "
            "the covariance system is too ill-conditioned"
        )
    if quad < -VARIANCE_NEGATIVE_TOL * scale:
        raise PSDViolationError(
            f"negative predictor variance {quad:.3e}"
        )
    return max(quad, 0.0)


def variance_estimation_limit(intensity: float, cell_area: float) -> float:
    """Small-cell estimation-variance reference ``lam / nu``."""
    if not cell_area > 0:
        raise ValueError("cell_area must be positive")
    if intensity == 0:
        warnings.warn(
            "zero intensity: the estimation-variance limit degenerates to 0",
            DegenerateWarning,
        )
        return 0.0
    return intensity / cell_area


def variance_prediction_closed(
    intensity: float,
    pcf: PairCorrelation,
    grid,
    target: int,
    k_max: int = 80,
    approx: str = cov.APPROX_MIDPOINT,
    sub_m: int = 4,
    stop_tol: float = 1e-10,
):
    """Series form of the prediction variance at a cell outside observation.

    Uses the truncated Neumann expansion J = sum
    (-1)^k lam^(k-1) H^k with H = nu * (G - 1).  With v = G_o - 1:

        Var = lam^3 nu (v'v + lam v' J v)
              + (1 - [lam nu 1'v + lam^2 nu 1' J v]^2)
                / (n nu / lam + nu 1' J 1)

    Returns the value together with the final series residual.  This is a
    verification path for small grids; the quadratic form is the
    production path.
    """
    spec = CovSpec(intensity, pcf, grid, approx=approx, sub_m=sub_m)
    expansion = neumann_inverse(spec, k_max=k_max, stop_tol=stop_tol)
    if expansion.diverged:
        raise SeriesDivergenceError(
            "Neumann series diverged; use the direct quadratic form",
            expansion=expansion,
        )
    obs = grid.observed_indices
    table = cov._g_displacement_table(spec)
    v = cov._g_vector(spec, obs, int(target), table) - 1.0
    lam = intensity
    nu = grid.cell_area
    j = expansion.j_matrix
    jv = j @ v
    ones = np.ones(len(obs))
    term_self = lam ** 3 * nu * float(v @ v)
    term_series = lam ** 4 * nu * float(v @ jv)
    bracket = lam * nu * float(ones @ v) + lam ** 2 * nu * float(ones @ jv)
    denom = len(obs) * nu / lam + nu * float(ones @ (j @ ones))
    value = term_self + term_series + (1.0 - bracket ** 2) / denom
    return value, expansion.residuals[-1]


def _plug_in_model(pattern: PointPattern, window: Window,
                   r_grid=None, bandwidth=None, messages=None) -> IntensityModel:
    lam = estimate_intensity(pattern, window)
    if len(pattern) < 2:
        if messages is not None:
            messages.append(
                "fewer than two points: using g == 1 for the plug-in model"
            )
        warnings.warn(
            "fewer than two points; falling back to a dependence-free model",
            DegenerateWarning,
        )
        return IntensityModel(lam, PairCorrelation.poisson(), source="plug-in")
    if r_grid is None:
        r_hi = window.min_side / 4
        r_grid = np.linspace(r_hi / 50, r_hi, 50)
    if bandwidth is None:
        bandwidth = default_pcf_bandwidth(lam)
    pcf = estimate_pcf(pattern, r_grid, bandwidth=bandwidth)
    return IntensityModel(lam, pcf, source="plug-in")


def krige_surface(
    pattern: PointPattern,
    window: Window,
    cell_side: float,
    model: IntensityModel = None,
    approx: str = cov.APPROX_MIDPOINT,
    sub_m: int = 4,
    include_observed: bool = False,
    clamp_negative: bool = False,
    r_grid=None,
    bandwidth=None,
) -> IntensitySurface:
    """Full pipeline: grid, counts, covariance system, all-target solve.

    Hole cells are predicted; with ``include_observed`` the observed cells
    are additionally smoothed in estimation mode.  When no model is
    supplied, the intensity and pair correlation are plug-in estimates
    from the pattern and the variances are labeled accordingly.  Negative
    predictions are legitimate for a linear predictor and are kept unless
    ``clamp_negative`` is set, in which case clamping is recorded.
    """
    grid = build_grid(window, cell_side)
    counts = cell_counts(pattern, grid)
    messages = []
    n_cells = grid.n_cells
    values = np.full(n_cells, np.nan)
    variances = np.full(n_cells, np.nan)
    pred_mask = np.zeros(n_cells, dtype=bool)
    est_mask = np.zeros(n_cells, dtype=bool)

    if len(pattern) == 0:
        warnings.warn(
            "empty pattern: all predictions are zero and variances degenerate",
            DegenerateWarning,
        )
        targets = grid.target_indices
        values[targets] = 0.0
        variances[targets] = 0.0
        pred_mask[targets] = True
        if include_observed:
            obs = grid.observed_indices
            values[obs] = 0.0
            variances[obs] = 0.0
            est_mask[obs] = True
        return IntensitySurface(
            grid, counts, values, variances, pred_mask, est_mask,
            provenance={
                "intensity": 0.0, "model_source": "degenerate",
                "approx": approx, "sub_m": sub_m, "ridge": 0.0,
                "clamped_cells": 0,
            },
            messages=("empty pattern: degenerate surface",),
        )

    if model is None:
        model = _plug_in_model(pattern, window, r_grid, bandwidth, messages)

    targets = list(grid.target_indices)
    modes = [MODE_PREDICTION] * len(targets)
    if include_observed:
        targets.extend(int(i) for i in grid.observed_indices)
        modes.extend([MODE_ESTIMATION] * len(grid.observed_indices))
    spec = CovSpec(model.intensity, model.pcf, grid, approx=approx, sub_m=sub_m)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        system = assemble_system(spec, targets=targets, modes=modes)
    for w in caught:
        messages.append(str(w.message))
        warnings.warn_explicit(
            w.message, w.category, w.filename, w.lineno
        )

    obs_counts = counts.counts[system.obs_indices]
    nu = grid.cell_area
    for t, mode in zip(targets, modes):
        wts = solve_weights(system, int(t))
        values[t] = predict(wts, obs_counts, nu)
        variances[t] = variance_direct(system, wts)
        if mode == MODE_PREDICTION:
            pred_mask[t] = True
        else:
            est_mask[t] = True

    clamped = 0
    if clamp_negative:
        negative = np.isfinite(values) & (values < 0)
        clamped = int(negative.sum())
        if clamped:
            values[negative] = 0.0
            messages.append(f"clamped {clamped} negative predictions to zero")
            warnings.warn(
                f"clamped {clamped} negative predictions to zero", ClampWarning
            )

    return IntensitySurface(
        grid, counts, values, variances, pred_mask, est_mask,
        provenance={
            "intensity": model.intensity,
            "model_source": model.source,
            "approx": approx,
            "sub_m": sub_m,
            "ridge": system.ridge,
            "clamped_cells": clamped,
        },
        messages=tuple(messages),
    )
