"""Count-field covariances implied by an intensity and a pair correlation.

For cells B_i of common area nu centered at x_i, the count covariance is

    C = lam * nu * [ Id + lam * nu * (G - 1) ],
    G_ij = mean of g(x_i - x_j + u - v) over u, v in the cell,

i.e. a nugget ``lam * nu`` on the diagonal plus the field-driven term
``lam^2 nu^2 (g_avg - 1)``.  Three approximation regimes are supported for
the cell-pair average of g:

* ``"fine"``     -- midpoint product quadrature on sub_m^2 x sub_m^2 subcells,
* ``"midpoint"`` -- evaluate g at the center distance (the default),
* ``"diag"``     -- ignore dependence entirely, C = lam * nu * Id.

A truncated Neumann series for C^{-1} is provided as a cross-check of the
direct numerical inverse; it converges when the spectral radius of
``lam * nu * (G - 1)`` is below 1 and its divergence is detected and
reported rather than silently returned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh, LinAlgError

from .errors import RidgeWarning, SingularSystemError
from .geometry import RegularGrid
from .summaries import PairCorrelation

APPROX_FINE = "fine"
APPROX_MIDPOINT = "midpoint"
APPROX_DIAGONAL = "diag"
_APPROX_CHOICES = (APPROX_FINE, APPROX_MIDPOINT, APPROX_DIAGONAL)

MODE_PREDICTION = "prediction"
MODE_ESTIMATION = "estimation"

#: Relative size of the extra jitter added on top of a non-PSD repair.
RIDGE_EPS = 1e-8


@dataclass(frozen=True)
class CovSpec:
    """Inputs that determine the count covariance on a grid."""

    intensity: float
    pcf: PairCorrelation
    grid: RegularGrid
    approx: str = APPROX_MIDPOINT
    sub_m: int = 4

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValueError("intensity must be positive")
        if self.approx not in _APPROX_CHOICES:
            raise ValueError(f"approx must be one of {_APPROX_CHOICES}")
        if self.approx == APPROX_FINE and self.sub_m < 2:
            raise ValueError("fine-grid quadrature needs sub_m >= 2")

    @property
    def nugget(self) -> float:
        """Diagonal count variance of a dependence-free process: lam * nu."""
        return self.intensity * self.grid.cell_area


def _subcell_offset_diffs(cell_side: float, sub_m: int) -> np.ndarray:
    """All u - v offsets between midpoint-subdivided positions in one axis."""
    c = (np.arange(sub_m) + 0.5) / sub_m * cell_side - cell_side / 2
    return (c[:, None] - c[None, :]).ravel()


def _fine_average(pcf: PairCorrelation, dx: float, dy: float,
                  cell_side: float, sub_m: int) -> float:
    w = _subcell_offset_diffs(cell_side, sub_m)
    r = np.hypot(dx + w[:, None], dy + w[None, :])
    return float(np.mean(pcf(r)))


def displacement_pcf_average(pcf: PairCorrelation, dx: float, dy: float,
                             cell_side: float, approx: str = APPROX_MIDPOINT,
                             sub_m: int = 4) -> float:
    """Cell-pair average of g for cells displaced by (dx, dy).

    Cells further apart than ``r_max`` plus one cell diameter cannot see
    any excess of g over 1, so the average is exactly 1 there.
    """
    if approx == APPROX_DIAGONAL:
        return 1.0
    dist = float(np.hypot(dx, dy))
    if dist > pcf.r_max + cell_side * np.sqrt(2.0):
        return 1.0
    if approx == APPROX_MIDPOINT:
        return float(pcf(dist))
    return _fine_average(pcf, dx, dy, cell_side, sub_m)


def pcf_cell_average(pcf: PairCorrelation, center_a, center_b, grid: RegularGrid,
                     approx: str = APPROX_MIDPOINT, sub_m: int = 4) -> float:
    """Cell-pair average of g between the cells centered at the given points."""
    dx = float(center_b[0]) - float(center_a[0])
    dy = float(center_b[1]) - float(center_a[1])
    return displacement_pcf_average(pcf, dx, dy, grid.cell_side, approx, sub_m)


def _g_displacement_table(spec: CovSpec) -> np.ndarray:
    """g averages for every index displacement class (|di|, |dj|).

    On a regular grid the cell-pair average depends only on the absolute
    index offsets (times the cell side), so the table has nx * ny entries
    and the covariance assembly becomes a lookup.  Computing displacements
    from integer index differences also makes the result exactly invariant
    under rigid translations of the whole configuration.
    """
    grid = spec.grid
    table = np.ones((grid.nx, grid.ny))
    if spec.approx == APPROX_DIAGONAL:
        return table
    s = grid.cell_side
    for a in range(grid.nx):
        for b in range(grid.ny):
            if b < a and b < grid.nx and a < grid.ny:
                table[a, b] = table[b, a]  # isotropy: (a, b) ~ (b, a)
                continue
            table[a, b] = displacement_pcf_average(
                spec.pcf, a * s, b * s, s, spec.approx, spec.sub_m
            )
    return table


def _g_matrix(spec: CovSpec, indices: np.ndarray,
              table: np.ndarray = None) -> np.ndarray:
    if table is None:
        table = _g_displacement_table(spec)
    ix = indices % spec.grid.nx
    iy = indices // spec.grid.nx
    return table[np.abs(ix[:, None] - ix[None, :]), np.abs(iy[:, None] - iy[None, :])]


def _g_vector(spec: CovSpec, indices: np.ndarray, target: int,
              table: np.ndarray = None) -> np.ndarray:
    if table is None:
        table = _g_displacement_table(spec)
    ix = indices % spec.grid.nx
    iy = indices // spec.grid.nx
    tx, ty = target % spec.grid.nx, target // spec.grid.nx
    return table[np.abs(ix - tx), np.abs(iy - ty)]


def build_G(spec: CovSpec) -> np.ndarray:
    """Matrix of cell-pair g averages over the observed cells."""
    if not np.isfinite(spec.pcf(0.0)):
        raise ValueError("pair correlation evaluates to a non-finite value")
    return _g_matrix(spec, spec.grid.observed_indices)


def build_C(spec: CovSpec, g_matrix: np.ndarray = None) -> np.ndarray:
    """Count covariance matrix over the observed cells.

    Exactly symmetric by construction.  With g == 1 this is the pure
    nugget ``lam * nu * Id``.
    """
    if spec.grid.observed_mask.sum() < 1:
        raise ValueError("need at least one observed cell")
    if g_matrix is None:
        g_matrix = build_G(spec)
    if not np.isfinite(g_matrix).all():
        raise ValueError("pair correlation produced non-finite cell averages")
    nug = spec.nugget
    c = nug * nug * (g_matrix - 1.0)
    c = np.triu(c) + np.triu(c, 1).T  # mirror the upper triangle
    c[np.diag_indices_from(c)] += nug
    return c


def build_Co(spec: CovSpec, target: int, mode: str = MODE_PREDICTION,
             table: np.ndarray = None) -> np.ndarray:
    """Covariance vector between observed counts and the target cell.

    In prediction mode (target outside the observation set) there is no
    nugget contribution; in estimation mode the target coincides with an
    observed cell and picks up ``lam * nu`` on the matching entry.
    """
    obs = spec.grid.observed_indices
    g_o = _g_vector(spec, obs, target, table)
    nug = spec.nugget
    co = nug * nug * (g_o - 1.0)
    if mode == MODE_ESTIMATION:
        pos = np.flatnonzero(obs == target)
        if len(pos) == 0:
            raise ValueError(
                f"estimation mode requires the target {target} to be an "
                "observed cell"
            )
        co[pos[0]] += nug
    elif mode != MODE_PREDICTION:
        raise ValueError(f"unknown mode {mode!r}")
    return co


@dataclass
class KrigingSystem:
    """Assembled covariance system over the observed cells of a grid.

    Holds the (ridge-repaired, if necessary) covariance matrix, its
    Cholesky factorization, and per-target covariance vectors.  The
    factorization is computed once and shared across all targets.
    """

    spec: CovSpec
    obs_indices: np.ndarray
    C: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    targets: np.ndarray
    modes: tuple
    co_matrix: np.ndarray = field(repr=False)
    go_matrix: np.ndarray = field(repr=False)
    ridge: float
    _factor: tuple = field(default=None, repr=False)
    _ones_solve: np.ndarray = field(default=None, repr=False)

    @property
    def n_observed(self) -> int:
        return len(self.obs_indices)

    @property
    def factor(self):
        if self._factor is None:
            try:
                self._factor = cho_factor(self.C, lower=True)
            except LinAlgError as exc:
                eigs = eigvalsh(self.C)
                raise SingularSystemError(
                    "covariance matrix is singular after ridge repair "
                    f"(eigenvalue range [{eigs[0]:.3e}, {eigs[-1]:.3e}])"
                ) from exc
        return self._factor

    @property
    def ones_solve(self) -> np.ndarray:
        if self._ones_solve is None:
            self._ones_solve = cho_solve(self.factor, np.ones(self.n_observed))
        return self._ones_solve

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor, rhs)

    def target_position(self, target: int) -> int:
        pos = np.flatnonzero(self.targets == target)
        if len(pos) == 0:
            raise KeyError(f"cell {target} is not a target of this system")
        return int(pos[0])

    def co_for(self, target: int) -> np.ndarray:
        return self.co_matrix[:, self.target_position(target)]

    def go_for(self, target: int) -> np.ndarray:
        return self.go_matrix[:, self.target_position(target)]

    def mode_for(self, target: int) -> str:
        return self.modes[self.target_position(target)]


def assemble_system(spec: CovSpec, targets=None, modes=None) -> KrigingSystem:
    """Build C and all target covariance vectors, repairing non-PSD C.

    By default every hole cell of the grid is a prediction target.  An
    estimated (tabulated) pair correlation need not produce a positive
    semidefinite C; when the Cholesky factorization fails, the smallest
    eigenvalue is measured and a diagonal ridge of
    ``-lambda_min + RIDGE_EPS * trace(C) / n`` is added and reported via
    ``RidgeWarning``.
    """
    grid = spec.grid
    if targets is None:
        targets = grid.target_indices
        modes = tuple(MODE_PREDICTION for _ in targets)
    targets = np.asarray(targets, dtype=int)
    if modes is None:
        modes = tuple(MODE_PREDICTION for _ in targets)
    if len(modes) != len(targets):
        raise ValueError("modes and targets must have equal length")

    table = _g_displacement_table(spec)
    obs = grid.observed_indices
    if len(obs) == 0:
        raise ValueError("grid has no observed cells")
    g_matrix = _g_matrix(spec, obs, table)
    c = build_C(spec, g_matrix)

    ridge = 0.0
    factor = None
    try:
        factor = cho_factor(c, lower=True)
    except LinAlgError:
        eig_min = float(eigvalsh(c, subset_by_index=[0, 0])[0])
        # A pathological estimated g can even drive the trace negative;
        # keep the epsilon positive by falling back to the nugget scale.
        eps = RIDGE_EPS * max(np.trace(c) / len(c), spec.nugget)
        ridge = eps - eig_min if eig_min < 0 else eps
        c = c + ridge * np.eye(len(c))
        warnings.warn(
            f"covariance matrix was not positive definite; added a ridge of "
            f"{ridge:.6e} to the diagonal",
            RidgeWarning,
        )

    n_t = len(targets)
    co = np.empty((len(obs), n_t))
    go = np.empty((len(obs), n_t))
    for k, (t, mode) in enumerate(zip(targets, modes)):
        go[:, k] = _g_vector(spec, obs, int(t), table)
        co[:, k] = build_Co(spec, int(t), mode, table)

    return KrigingSystem(
        spec=spec, obs_indices=obs, C=c, G=g_matrix,
        targets=targets, modes=tuple(modes), co_matrix=co, go_matrix=go,
        ridge=ridge, _factor=factor,
    )


@dataclass
class NeumannExpansion:
    """Truncated series for C^{-1} with its residual history.

    With H = nu * (G - 1), the exact inverse satisfies

        C^{-1} = (1 / (lam * nu)) * sum_k (-lam * H)^k,

    valid when the spectral radius of lam * H is below 1.  ``residuals``
    holds the relative residual ||C S_k - I||_F / sqrt(n) per order, and
    ``j_matrix`` the matching truncation of
    J = sum_{k>=1} (-1)^k lam^(k-1) H^k used by the closed-form
    prediction variance.
    """

    inverse: np.ndarray = field(repr=False)
    h_matrix: np.ndarray = field(repr=False)
    j_matrix: np.ndarray = field(repr=False)
    residuals: list
    stop_order: int
    converged: bool
    diverged: bool
    k_max: int
    stop_tol: float


def neumann_inverse(spec: CovSpec, k_max: int = 100,
                    stop_tol: float = 1e-8,
                    max_cells: int = 256) -> NeumannExpansion:
    """Truncated Neumann-series inverse of the count covariance.

    Stops early once the relative residual drops below ``stop_tol``;
    flags divergence when the residual grows for three consecutive
    orders.  Intended as a small-grid cross-check of the direct dense
    factorization, not as a production path.
    """
    obs = spec.grid.observed_indices
    n = len(obs)
    if n > max_cells:
        raise ValueError(
            f"Neumann expansion restricted to grids with at most {max_cells} "
            f"observed cells, got {n}"
        )
    table = _g_displacement_table(spec)
    g_matrix = _g_matrix(spec, obs, table)
    c = build_C(spec, g_matrix)
    nu = spec.grid.cell_area
    lam = spec.intensity
    h = nu * (g_matrix - 1.0)
    scaled = -lam * h

    eye = np.eye(n)
    sqrt_n = np.sqrt(n)
    partial = eye.copy()
    term = eye
    inverse = partial / (lam * nu)
    residuals = [float(np.linalg.norm(c @ inverse - eye) / sqrt_n)]
    stop_order = 0
    converged = residuals[-1] <= stop_tol
    diverged = False
    rising = 0
    for k in range(1, 0 if converged else k_max + 1):
        term = term @ scaled
        partial = partial + term
        inverse = partial / (lam * nu)
        res = float(np.linalg.norm(c @ inverse - eye) / sqrt_n)
        residuals.append(res)
        stop_order = k
        if res <= stop_tol:
            converged = True
            break
        if res > residuals[-2]:
            rising += 1
            if rising >= 3:
                diverged = True
                break
        else:
            rising = 0
    # J = sum_{k>=1} (-1)^k lam^(k-1) H^k relates to the partial sum via
    # partial = I + lam * J.
    j_matrix = (partial - eye) / lam
    return NeumannExpansion(
        inverse=inverse, h_matrix=h, j_matrix=j_matrix,
        residuals=residuals, stop_order=stop_order,
        converged=converged, diverged=diverged,
        k_max=k_max, stop_tol=stop_tol,
    )
