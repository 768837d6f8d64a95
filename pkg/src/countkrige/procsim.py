"""Reference point-process simulators and Monte-Carlo moment oracles.

All samplers draw from a counter-based Philox generator so that a given
(spec, window, seed) triple reproduces the same pattern on any platform.
Batch replicates derive independent sub-streams from (seed, index);
replicate 0 of a batch coincides with a single ``simulate`` call.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import (
    DegenerateInputError,
    InvalidWindowError,
    NoClosedFormError,
    ResourceLimitError,
)
from .geometry import PointPattern, Rect, Window
from .summaries import PairCorrelation

_MASK64 = (1 << 64) - 1

#: Thomas parents are laid down on the window dilated by this many offspring sd.
THOMAS_DILATION_SD = 4.0

#: Hard cap on the expected number of points per realization.
DEFAULT_MAX_EXPECTED_POINTS = 1_000_000

# Pairwise thinning builds a dense distance matrix; cap the basic process size.
_MATERN_BASIC_CAP = 50_000


@dataclass(frozen=True)
class PoissonSpec:
    """Homogeneous Poisson process with the given intensity."""

    intensity: float

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValueError("intensity must be positive")


@dataclass(frozen=True)
class ThomasSpec:
    """Thomas cluster process: Poisson parents, Gaussian-displaced offspring."""

    parent_intensity: float
    mean_offspring: float
    offspring_sd: float

    def __post_init__(self):
        if min(self.parent_intensity, self.mean_offspring, self.offspring_sd) <= 0:
            raise ValueError("all Thomas parameters must be positive")

    @property
    def intensity(self) -> float:
        return self.parent_intensity * self.mean_offspring


@dataclass(frozen=True)
class MaternIISpec:
    """Matern II hard-core process: dependent thinning by arrival marks."""

    basic_intensity: float
    hardcore_radius: float

    def __post_init__(self):
        if min(self.basic_intensity, self.hardcore_radius) <= 0:
            raise ValueError("all Matern II parameters must be positive")


@dataclass(frozen=True)
class CoxSpec:
    """Cox process driven by a stationary Gaussian field.

    The local intensity is ``max(mean_intensity + Y(x), 0)`` where Y is a
    centered Gaussian field with exponential covariance
    ``field_sd**2 * exp(-r / field_range)`` realized on a raster of
    ``raster_n`` pixels per (longest) axis.  Keeping
    ``field_sd <= mean_intensity / 3`` makes the truncation bias below 1%.
    """

    mean_intensity: float
    field_sd: float
    field_range: float
    raster_n: int = 64

    def __post_init__(self):
        if min(self.mean_intensity, self.field_sd, self.field_range) <= 0:
            raise ValueError("all Cox parameters must be positive")
        if self.raster_n < 2:
            raise ValueError("raster_n must be at least 2")

    def implied_pcf(self, r_tiny: float = 1e-12) -> PairCorrelation:
        """Pair correlation of the (untruncated) driven process.

        For a Cox process, g(r) = 1 + Cov_Y(r) / lambda^2.
        """
        lam, sd, rho = self.mean_intensity, self.field_sd, self.field_range
        amp = (sd / lam) ** 2
        r_max = rho * np.log(amp / r_tiny) if amp > r_tiny else 0.0
        return PairCorrelation.from_function(
            lambda r: 1.0 + amp * np.exp(-np.asarray(r, float) / rho),
            r_max=max(r_max, 0.0),
        )


@dataclass(frozen=True)
class DrivingField:
    """One realized driving intensity raster (already truncated at zero).

    ``truncation_bias`` records the mean mass clipped away by the
    truncation at zero, so the documented <1% bias budget is checkable.
    """

    rect: Rect
    values: np.ndarray = field(repr=False)
    mean_intensity: float = 0.0
    truncation_bias: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def pixel_size(self) -> tuple:
        my, mx = self.values.shape
        return self.rect.width / mx, self.rect.height / my

    @property
    def pixel_centers(self) -> np.ndarray:
        my, mx = self.values.shape
        px, py = self.pixel_size
        xs = self.rect.xmin + (np.arange(mx) + 0.5) * px
        ys = self.rect.ymin + (np.arange(my) + 0.5) * py
        xx, yy = np.meshgrid(xs, ys)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def value_at(self, points) -> np.ndarray:
        """Piecewise-constant lookup of the intensity at the given points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        my, mx = self.values.shape
        px, py = self.pixel_size
        ix = np.clip(((pts[:, 0] - self.rect.xmin) / px).astype(int), 0, mx - 1)
        iy = np.clip(((pts[:, 1] - self.rect.ymin) / py).astype(int), 0, my - 1)
        return self.values[iy, ix]

    def mean_over(self, rect: Rect) -> float:
        """Average intensity over the pixels whose centers fall in ``rect``."""
        centers = self.pixel_centers
        inside = rect.contains(centers)
        if not inside.any():
            raise ValueError("rect contains no raster pixel centers")
        return float(self.values.ravel()[inside].mean())


@dataclass(frozen=True)
class SimBatch:
    """Independent replicates of one process spec on one window."""

    spec: object
    window: Window
    seed: int
    patterns: tuple
    fields: tuple = None


def _rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    key = ((int(seed) & _MASK64) << 64) | (int(stream) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def expected_count(spec, window: Window) -> float:
    """Rough upper bound on the expected number of generated points."""
    if isinstance(spec, PoissonSpec):
        return spec.intensity * window.area
    if isinstance(spec, ThomasSpec):
        dil = window.outer.dilated(THOMAS_DILATION_SD * spec.offspring_sd)
        return spec.parent_intensity * dil.area * (1.0 + spec.mean_offspring)
    if isinstance(spec, MaternIISpec):
        dil = window.outer.dilated(spec.hardcore_radius)
        return spec.basic_intensity * dil.area
    if isinstance(spec, CoxSpec):
        return (spec.mean_intensity + 3 * spec.field_sd) * window.outer.area
    raise TypeError(f"unknown process spec {type(spec).__name__}")


def _check_cap(spec, window, max_expected):
    exp = expected_count(spec, window)
    if exp > max_expected:
        raise ResourceLimitError(
            f"expected point count {exp:.3g} exceeds the cap {max_expected:.3g}"
        )


def _uniform_in_window(rng, window: Window, n: int) -> np.ndarray:
    """n points uniform on the holed window, by rejection from the outer rect."""
    outer = window.outer
    out = np.empty((n, 2))
    got = 0
    while got < n:
        m = max(n - got, 16)
        cand = np.column_stack([
            rng.uniform(outer.xmin, outer.xmax, m),
            rng.uniform(outer.ymin, outer.ymax, m),
        ])
        cand = cand[window.contains(cand)]
        take = min(len(cand), n - got)
        out[got:got + take] = cand[:take]
        got += take
    return out


def _sample_poisson(rng, spec: PoissonSpec, window: Window) -> np.ndarray:
    n = rng.poisson(spec.intensity * window.area)
    return _uniform_in_window(rng, window, n)


def _sample_thomas(rng, spec: ThomasSpec, window: Window) -> np.ndarray:
    dil = window.outer.dilated(THOMAS_DILATION_SD * spec.offspring_sd)
    n_par = rng.poisson(spec.parent_intensity * dil.area)
    parents = np.column_stack([
        rng.uniform(dil.xmin, dil.xmax, n_par),
        rng.uniform(dil.ymin, dil.ymax, n_par),
    ])
    n_off = rng.poisson(spec.mean_offspring, n_par)
    pts = np.repeat(parents, n_off, axis=0)
    pts = pts + rng.normal(0.0, spec.offspring_sd, size=pts.shape)
    return pts[window.contains(pts)] if len(pts) else pts.reshape(0, 2)


def _sample_matern2(rng, spec: MaternIISpec, window: Window) -> np.ndarray:
    if spec.hardcore_radius >= window.min_side:
        raise InvalidWindowError(
            "hard-core radius must be smaller than the shortest window side"
        )
    dil = window.outer.dilated(spec.hardcore_radius)
    expected = spec.basic_intensity * dil.area
    if expected > _MATERN_BASIC_CAP:
        raise ResourceLimitError(
            f"Matern II basic process too large ({expected:.3g} expected points)"
        )
    n = rng.poisson(expected)
    pts = np.column_stack([
        rng.uniform(dil.xmin, dil.xmax, n),
        rng.uniform(dil.ymin, dil.ymax, n),
    ])
    marks = rng.random(n)
    if n > 1:
        close = squareform(pdist(pts)) < spec.hardcore_radius
        np.fill_diagonal(close, False)
        killed = (close & (marks[None, :] < marks[:, None])).any(axis=1)
        pts = pts[~killed]
    return pts[window.contains(pts)] if len(pts) else pts.reshape(0, 2)


@functools.lru_cache(maxsize=8)
def _field_cholesky(field_sd, field_range, raster_n, rect_key):
    """Cholesky factor of the raster covariance (cached across replicates)."""
    rect = Rect(*rect_key)
    px = rect.width / raster_n
    py = rect.height / raster_n
    xs = rect.xmin + (np.arange(raster_n) + 0.5) * px
    ys = rect.ymin + (np.arange(raster_n) + 0.5) * py
    xx, yy = np.meshgrid(xs, ys)
    centers = np.column_stack([xx.ravel(), yy.ravel()])
    cov = field_sd ** 2 * np.exp(-cdist(centers, centers) / field_range)
    cov[np.diag_indices_from(cov)] += 1e-10 * field_sd ** 2
    return np.linalg.cholesky(cov)


def realize_field(spec: CoxSpec, window: Window, rng) -> DrivingField:
    """Draw one driving-intensity raster over the outer rectangle.

    The Gaussian field is simulated by dense Cholesky (exact at desk
    scale) and the intensity is truncated at zero from below.
    """
    outer = window.outer
    rect_key = (outer.xmin, outer.ymin, outer.xmax, outer.ymax)
    chol = _field_cholesky(spec.field_sd, spec.field_range, spec.raster_n, rect_key)
    y = chol @ rng.standard_normal(spec.raster_n ** 2)
    raw = spec.mean_intensity + y
    lam = np.maximum(raw, 0.0)
    return DrivingField(
        outer, lam.reshape(spec.raster_n, spec.raster_n), spec.mean_intensity,
        truncation_bias=float((lam - raw).mean()),
    )


def sample_given_field(rng, window: Window, driving: DrivingField,
                       max_points: int = DEFAULT_MAX_EXPECTED_POINTS) -> np.ndarray:
    """Inhomogeneous Poisson draw with the given (piecewise-constant) intensity."""
    lam_max = float(driving.values.max())
    if lam_max <= 0:
        return np.empty((0, 2))
    outer = window.outer
    n = rng.poisson(lam_max * outer.area)
    if n > max_points:
        raise ResourceLimitError(f"candidate count {n} exceeds the cap {max_points}")
    cand = np.column_stack([
        rng.uniform(outer.xmin, outer.xmax, n),
        rng.uniform(outer.ymin, outer.ymax, n),
    ])
    keep = rng.random(n) * lam_max < driving.value_at(cand)
    pts = cand[keep]
    return pts[window.contains(pts)] if len(pts) else pts.reshape(0, 2)


def _sample_cox(rng, spec: CoxSpec, window: Window):
    driving = realize_field(spec, window, rng)
    return sample_given_field(rng, window, driving), driving


def simulate(spec, window: Window, seed: int,
             max_expected_points: float = DEFAULT_MAX_EXPECTED_POINTS) -> PointPattern:
    """One realization of the process on the window.

    Points landing in holes are never recorded: the returned pattern is
    what an observer of the holed window would see.
    """
    _check_cap(spec, window, max_expected_points)
    rng = _rng_for(seed, 0)
    if isinstance(spec, PoissonSpec):
        pts = _sample_poisson(rng, spec, window)
    elif isinstance(spec, ThomasSpec):
        pts = _sample_thomas(rng, spec, window)
    elif isinstance(spec, MaternIISpec):
        pts = _sample_matern2(rng, spec, window)
    elif isinstance(spec, CoxSpec):
        pts, _ = _sample_cox(rng, spec, window)
    else:
        raise TypeError(f"unknown process spec {type(spec).__name__}")
    return PointPattern(pts, window)


def simulate_batch(spec, window: Window, seed: int, replicates: int,
                   max_expected_points: float = DEFAULT_MAX_EXPECTED_POINTS,
                   threads: int = 1) -> SimBatch:
    """Independent replicates; replicate j uses sub-stream (seed, j).

    Each replicate owns its generator, so results are identical whether
    replicates are drawn serially or concurrently.
    """
    if replicates < 1:
        raise DegenerateInputError("need at least one replicate")
    _check_cap(spec, window, max_expected_points)
    is_cox = isinstance(spec, CoxSpec)

    def one(j):
        rng = _rng_for(seed, j)
        if is_cox:
            pts, fld = _sample_cox(rng, spec, window)
            return PointPattern(pts, window), fld
        if isinstance(spec, PoissonSpec):
            pts = _sample_poisson(rng, spec, window)
        elif isinstance(spec, ThomasSpec):
            pts = _sample_thomas(rng, spec, window)
        elif isinstance(spec, MaternIISpec):
            pts = _sample_matern2(rng, spec, window)
        else:
            raise TypeError(f"unknown process spec {type(spec).__name__}")
        return PointPattern(pts, window), None

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replicates)))
    else:
        results = [one(j) for j in range(replicates)]
    patterns = tuple(r[0] for r in results)
    fields = tuple(r[1] for r in results) if is_cox else None
    return SimBatch(spec, window, seed, patterns, fields)


def pcf_model(spec) -> PairCorrelation:
    """Closed-form pair correlation for processes that have one.

    Poisson: g == 1.  Thomas: the classical cluster-process form
    g(r) = 1 + exp(-r^2 / (4 sd^2)) / (4 pi sd^2 kappa).  Other kinds
    raise, and callers must estimate g empirically.
    """
    if isinstance(spec, PoissonSpec):
        return PairCorrelation.poisson()
    if isinstance(spec, ThomasSpec):
        sd2 = spec.offspring_sd ** 2
        amp = 1.0 / (4.0 * np.pi * sd2 * spec.parent_intensity)
        # Radius past which the excess is below 1e-12 (treated as exactly 1).
        r_max = 2.0 * spec.offspring_sd * np.sqrt(max(np.log(amp / 1e-12), 0.0))
        return PairCorrelation.from_function(
            lambda r: 1.0 + amp * np.exp(-np.asarray(r, float) ** 2 / (4.0 * sd2)),
            r_max=r_max,
        )
    raise NoClosedFormError(
        f"no closed-form pair correlation for {type(spec).__name__}"
    )


@dataclass(frozen=True)
class MomentOracle:
    """Empirical count moments for two regions, with standard errors."""

    mean_b: float
    se_mean_b: float
    second_moment_b: float
    se_second_moment_b: float
    var_b: float
    se_var_b: float
    cov_bd: float
    se_cov_bd: float
    replicates: int


def _count_in(pattern: PointPattern, rect: Rect) -> int:
    if not len(pattern):
        return 0
    return int(rect.contains(pattern.points).sum())


def mc_moment_oracle(spec, window: Window, rect_b: Rect, rect_d: Rect,
                     replicates: int, seed: int = 0) -> MomentOracle:
    """Brute-force count moments of the process over two rectangles.

    Standard errors come from the usual moment-based large-sample
    formulas, so "within 3 SE" checks can be made against model values.
    """
    if replicates < 100:
        raise DegenerateInputError("moment oracle needs at least 100 replicates")
    batch = simulate_batch(spec, window, seed, replicates)
    nb = np.array([_count_in(p, rect_b) for p in batch.patterns], dtype=float)
    nd = np.array([_count_in(p, rect_d) for p in batch.patterns], dtype=float)
    m = replicates
    mean_b = nb.mean()
    sq = nb ** 2
    db = nb - mean_b
    dd = nd - nd.mean()
    var_b = db @ db / (m - 1)
    cov = db @ dd / (m - 1)
    m4 = (db ** 4).mean()
    m22 = (db ** 2 * dd ** 2).mean()
    se_var = np.sqrt(max(m4 - var_b ** 2 * (m - 3) / (m - 1), 0.0) / m)
    se_cov = np.sqrt(max(m22 - cov ** 2, 0.0) / m)
    return MomentOracle(
        mean_b=float(mean_b),
        se_mean_b=float(np.sqrt(var_b / m)),
        second_moment_b=float(sq.mean()),
        se_second_moment_b=float(sq.std(ddof=1) / np.sqrt(m)),
        var_b=float(var_b),
        se_var_b=float(se_var),
        cov_bd=float(cov),
        se_cov_bd=float(se_cov),
        replicates=m,
    )
