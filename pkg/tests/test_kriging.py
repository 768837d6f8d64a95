import numpy as np
import pytest

from countkrige import (
    APPROX_FINE,
    ClampWarning,
    CovSpec,
    CoxSpec,
    DegenerateWarning,
    IntensityModel,
    PairCorrelation,
    PointPattern,
    PoissonSpec,
    Rect,
    SeriesDivergenceError,
    ThomasSpec,
    Window,
    assemble_system,
    build_grid,
    cell_counts,
    krige_surface,
    pcf_model,
    predict,
    simulate,
    simulate_batch,
    solve_all_weights,
    solve_weights,
    variance_direct,
    variance_estimation_limit,
    variance_prediction_closed,
)

THOMAS = ThomasSpec(25, 4, 0.02)
WEAK_THOMAS = ThomasSpec(200, 0.5, 0.02)


@pytest.fixture
def holed_grid():
    w = Window(Rect(0, 0, 1, 1), [Rect(0.25, 0.25, 0.5, 0.5)])
    return build_grid(w, 0.125)


def kkt_oracle(C, co):
    """Equality-constrained QP solved via the augmented KKT system.

    Minimizes w' C w - 2 w' co subject to sum(w) = 1 through one dense
    solve of the bordered system, independently of the kriging formula.
    """
    n = len(C)
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = 2.0 * C
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    rhs = np.concatenate([2.0 * co, [1.0]])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n]


class TestSolveWeights:
    def test_unit_g_prediction_equal_weights(self, holed_grid):
        spec = CovSpec(100.0, PairCorrelation.poisson(), holed_grid)
        system = assemble_system(spec)
        n = system.n_observed
        for wts in solve_all_weights(system):
            np.testing.assert_allclose(wts.weights, 1.0 / n, rtol=0, atol=1e-12)
            assert abs(wts.weight_sum - 1.0) < 1e-12

    def test_unit_g_estimation_unit_vector(self, holed_grid):
        spec = CovSpec(100.0, PairCorrelation.poisson(), holed_grid)
        target = int(holed_grid.observed_indices[3])
        system = assemble_system(spec, targets=[target], modes=["estimation"])
        wts = solve_weights(system, target)
        expected = np.zeros(system.n_observed)
        expected[3] = 1.0
        np.testing.assert_allclose(wts.weights, expected, rtol=0, atol=1e-12)

    def test_weights_sum_to_one(self, holed_grid):
        spec = CovSpec(THOMAS.intensity, pcf_model(THOMAS), holed_grid,
                       approx=APPROX_FINE, sub_m=4)
        system = assemble_system(spec)
        for wts in solve_all_weights(system):
            assert abs(wts.weight_sum - 1.0) < 1e-12

    def test_against_kkt_quadratic_program(self, holed_grid):
        # The kriging weights minimize the error quadratic form under the
        # sum constraint; an independent bordered-KKT solve must agree.
        spec = CovSpec(THOMAS.intensity, pcf_model(THOMAS), holed_grid,
                       approx=APPROX_FINE, sub_m=4)
        system = assemble_system(spec)
        for target in system.targets:
            wts = solve_weights(system, int(target))
            oracle = kkt_oracle(system.C, system.co_for(int(target)))
            np.testing.assert_allclose(wts.weights, oracle, atol=1e-8)

    def test_blup_dominance_over_random_feasible_weights(self, holed_grid):
        spec = CovSpec(THOMAS.intensity, pcf_model(THOMAS), holed_grid,
                       approx=APPROX_FINE, sub_m=4)
        system = assemble_system(spec)
        rng = np.random.default_rng(99)
        target = int(system.targets[0])
        wts = solve_weights(system, target)
        co = system.co_for(target)
        obj = lambda w: w @ system.C @ w - 2.0 * w @ co
        best = obj(wts.weights)
        for _ in range(100):
            w = rng.dirichlet(np.ones(system.n_observed))
            assert best <= obj(w) + 1e-12

    def test_weights_decay_with_distance(self, holed_grid):
        spec = CovSpec(THOMAS.intensity, pcf_model(THOMAS), holed_grid,
                       approx=APPROX_FINE, sub_m=4)
        system = assemble_system(spec)
        target = int(system.targets[0])
        wts = solve_weights(system, target)
        centers = holed_grid.cell_centers
        d = np.hypot(*(centers[system.obs_indices]
                       - centers[target]).T)
        near = wts.weights[d < 0.2].mean()
        far = wts.weights[d > 0.6].mean()
        assert near > far

    def test_translation_invariance_bitwise(self, holed_grid):
        spec = CovSpec(THOMAS.intensity, pcf_model(THOMAS), holed_grid,
                       approx=APPROX_FINE, sub_m=4)
        system = assemble_system(spec)
        moved_grid = holed_grid.translated(3.7, -1.3)
        spec2 = CovSpec(THOMAS.intensity, pcf_model(THOMAS), moved_grid,
                        approx=APPROX_FINE, sub_m=4)
        system2 = assemble_system(spec2)
        for t1, t2 in zip(system.targets, system2.targets):
            w1 = solve_weights(system, int(t1)).weights
            w2 = solve_weights(system2, int(t2)).weights
            assert np.array_equal(w1, w2)


class TestPredict:
    def test_equal_weights_give_global_mean(self, holed_grid):
        spec = CovSpec(100.0, PairCorrelation.poisson(), holed_grid)
        system = assemble_system(spec)
        wts = solve_weights(system, int(system.targets[0]))
        counts = np.arange(system.n_observed, dtype=float)
        total = counts.sum()
        n = system.n_observed
        expected = total / (n * holed_grid.cell_area)
        assert predict(wts, counts, holed_grid.cell_area) == pytest.approx(
            expected, rel=1e-12
        )

    def test_unit_weight_reads_single_cell(self, holed_grid):
        spec = CovSpec(100.0, PairCorrelation.poisson(), holed_grid)
        target = int(holed_grid.observed_indices[3])
        system = assemble_system(spec, targets=[target], modes=["estimation"])
        wts = solve_weights(system, target)
        counts = np.zeros(system.n_observed)
        counts[3] = 7
        assert predict(wts, counts, 0.01) == pytest.approx(700.0)

    def test_estimation_identity_under_pure_nugget(self, unit_window):
        # With g == 1 and the target at an observed node, the prediction
        # is exactly the plug-in count ratio of that node.
        pat = simulate(PoissonSpec(120), unit_window, seed=31)
        grid = build_grid(unit_window, 0.125)
        counts = cell_counts(pat, grid)
        spec = CovSpec(120.0, PairCorrelation.poisson(), grid)
        target = int(grid.observed_indices[10])
        system = assemble_system(spec, targets=[target], modes=["estimation"])
        wts = solve_weights(system, target)
        got = predict(wts, counts.observed_counts.astype(float), grid.cell_area)
        # Exact up to one ulp introduced by the Cholesky square root.
        assert got == pytest.approx(counts.counts[target] / grid.cell_area,
                                    rel=1e-12)


class TestVarianceDirect:
    def test_estimation_pure_nugget_exact(self, unit_window):
        grid = build_grid(unit_window, 0.1)
        spec = CovSpec(100.0, PairCorrelation.poisson(), grid)
        target = int(grid.observed_indices[0])
        system = assemble_system(spec, targets=[target], modes=["estimation"])
        wts = solve_weights(system, target)
        assert variance_direct(system, wts) == pytest.approx(
            variance_estimation_limit(100.0, grid.cell_area), rel=1e-12
        )

    def test_prediction_pure_nugget_is_lam_over_area(self, holed_grid):
        spec = CovSpec(100.0, PairCorrelation.poisson(), holed_grid)
        system = assemble_system(spec)
        wts = solve_weights(system, int(system.targets[0]))
        expected = 100.0 / (system.n_observed * holed_grid.cell_area)
        assert variance_direct(system, wts) == pytest.approx(expected, rel=1e-12)

    def test_two_forms_agree_on_clustered_model(self, holed_grid):
        # The quadratic form and the Lagrange form are the same number;
        # variance_direct enforces 1e-8 internally, and here we recompute
        # both independently to a tighter level.
        spec = CovSpec(THOMAS.intensity, pcf_model(THOMAS), holed_grid,
                       approx=APPROX_FINE, sub_m=4)
        system = assemble_system(spec)
        nu = holed_grid.cell_area
        for target in system.targets:
            wts = solve_weights(system, int(target))
            quad = variance_direct(system, wts)
            co = system.co_for(int(target))
            y = system.solve(co)
            a = float(y.sum())
            b = float(system.ones_solve.sum())
            lagrange = (co @ y + (1 - a * a) / b) / nu ** 2
            assert quad == pytest.approx(lagrange, rel=1e-10)

    def test_predictor_variance_against_simulation(self, unit_window):
        # Light check of the quadratic form against an empirical variance;
        # the strict 10% version runs in the acceptance suite.
        w = Window(Rect(0, 0, 1, 1), [Rect(0.3, 0.3, 0.6, 0.6)])
        grid = build_grid(w, 0.1)
        spec = CovSpec(THOMAS.intensity, pcf_model(THOMAS), grid,
                       approx=APPROX_FINE, sub_m=6)
        system = assemble_system(spec)
        target = int(system.targets[4])
        wts = solve_weights(system, target)
        model_var = variance_direct(system, wts)
        batch = simulate_batch(THOMAS, w, seed=32, replicates=600)
        preds = []
        for p in batch.patterns:
            counts = cell_counts(p, grid).observed_counts.astype(float)
            preds.append(predict(wts, counts, grid.cell_area))
        emp = np.var(preds, ddof=1)
        assert emp == pytest.approx(model_var, rel=0.2)


class TestVarianceEstimationLimit:
    def test_formula(self):
        assert variance_estimation_limit(100.0, 0.01) == pytest.approx(1e4)

    def test_zero_intensity_warns(self):
        with pytest.warns(DegenerateWarning):
            assert variance_estimation_limit(0.0, 0.01) == 0.0

    def test_ratio_approaches_one_as_cells_shrink(self, unit_window):
        # Estimation variance over lam / nu tends to 1 for small cells.
        g = pcf_model(WEAK_THOMAS)
        ratios = []
        for side in (0.05, 0.02):
            grid = build_grid(unit_window, side)
            spec = CovSpec(100.0, g, grid)
            target = int(grid.observed_indices[len(grid.observed_indices) // 2])
            system = assemble_system(spec, targets=[target],
                                     modes=["estimation"])
            wts = solve_weights(system, target)
            ratios.append(
                variance_direct(system, wts)
                / variance_estimation_limit(100.0, grid.cell_area)
            )
        assert abs(ratios[1] - 1.0) < abs(ratios[0] - 1.0)


class TestVariancePredictionClosed:
    def test_unit_g_reduces_to_lam_over_domain(self):
        w = Window(Rect(0, 0, 1, 1), [Rect(2 / 6, 2 / 6, 3 / 6, 3 / 6)])
        grid = build_grid(w, 1 / 6)
        target = int(grid.target_indices[0])
        value, resid = variance_prediction_closed(
            100.0, PairCorrelation.poisson(), grid, target
        )
        n_obs = len(grid.observed_indices)
        assert value == pytest.approx(100.0 / (n_obs * grid.cell_area),
                                      rel=1e-12)
        assert resid <= 1e-12

    def test_matches_direct_quadratic_form(self):
        w = Window(Rect(0, 0, 1, 1), [Rect(2 / 6, 2 / 6, 3 / 6, 3 / 6)])
        grid = build_grid(w, 1 / 6)
        g = pcf_model(WEAK_THOMAS)
        target = int(grid.target_indices[0])
        spec = CovSpec(50.0, g, grid, approx=APPROX_FINE, sub_m=4)
        system = assemble_system(spec)
        wts = solve_weights(system, target)
        direct = variance_direct(system, wts)
        closed, _ = variance_prediction_closed(
            50.0, g, grid, target, k_max=100, approx=APPROX_FINE, sub_m=4
        )
        assert closed == pytest.approx(direct, rel=0.01)

    def test_divergent_series_raises(self):
        w = Window(Rect(0, 0, 1, 1), [Rect(2 / 6, 2 / 6, 3 / 6, 3 / 6)])
        grid = build_grid(w, 1 / 6)
        g = pcf_model(THOMAS)
        target = int(grid.target_indices[0])
        with pytest.raises(SeriesDivergenceError) as err:
            variance_prediction_closed(2000.0, g, grid, target, k_max=100)
        assert err.value.expansion.diverged


class TestKrigeSurface:
    def test_poisson_hole_prediction_is_global_mean(self, unit_window):
        w = Window(Rect(0, 0, 1, 1), [Rect(0.3, 0.3, 0.6, 0.6)])
        pat = simulate(PoissonSpec(150), w, seed=33)
        surf = krige_surface(
            pat, w, 0.1, model=IntensityModel(150.0, PairCorrelation.poisson())
        )
        grid = surf.grid
        n_obs = len(grid.observed_indices)
        global_mean = surf.counts.total / (n_obs * grid.cell_area)
        hole_vals = surf.values[grid.target_indices]
        np.testing.assert_allclose(hole_vals, global_mean, rtol=1e-10)
        assert np.isfinite(surf.variances[grid.target_indices]).all()

    def test_empty_pattern_degenerates_with_warning(self):
        w = Window(Rect(0, 0, 1, 1), [Rect(0.3, 0.3, 0.6, 0.6)])
        pat = PointPattern(np.empty((0, 2)), w)
        with pytest.warns(DegenerateWarning):
            surf = krige_surface(pat, w, 0.1)
        assert (surf.values[surf.grid.target_indices] == 0.0).all()
        assert surf.provenance["model_source"] == "degenerate"

    def test_plug_in_estimates_label(self, unit_window):
        w = Window(Rect(0, 0, 1, 1), [Rect(0.3, 0.3, 0.6, 0.6)])
        pat = simulate(THOMAS, w, seed=34)
        surf = krige_surface(pat, w, 0.1)
        assert surf.provenance["model_source"] == "plug-in"
        assert np.isfinite(surf.values[surf.grid.target_indices]).all()

    def test_include_observed_smooths_estimation_cells(self, unit_window):
        pat = simulate(PoissonSpec(100), unit_window, seed=35)
        surf = krige_surface(
            pat, unit_window, 0.25, include_observed=True,
            model=IntensityModel(100.0, PairCorrelation.poisson()),
        )
        obs = surf.grid.observed_indices
        assert surf.estimation_mask[obs].all()
        # Pure nugget estimation reproduces the per-cell plug-in values.
        np.testing.assert_allclose(
            surf.values[obs],
            surf.counts.counts[obs] / surf.grid.cell_area,
            atol=1e-9,
        )

    def test_clamp_negative_flagged(self):
        # Smooth long-range clustering produces negative weights for some
        # cells; loading those cells with points drives the prediction
        # negative, and the clamp records it.
        w = Window(Rect(0, 0, 1, 1), [Rect(2 / 6, 2 / 6, 3 / 6, 3 / 6)])
        grid = build_grid(w, 1 / 6)
        smooth = ThomasSpec(5, 20, 0.12)
        model = IntensityModel(smooth.intensity, pcf_model(smooth))
        spec = CovSpec(model.intensity, model.pcf, grid, approx=APPROX_FINE,
                       sub_m=4)
        system = assemble_system(spec)
        target = int(system.targets[0])
        wts = solve_weights(system, target)
        neg_pos = int(np.argmin(wts.weights))
        assert wts.weights[neg_pos] < 0
        neg_cell = int(system.obs_indices[neg_pos])
        center = grid.cell_centers[neg_cell]
        pts = np.repeat(center[None, :], 60, axis=0)
        pat = PointPattern(pts, w)
        plain = krige_surface(pat, w, 1 / 6, model=model, approx=APPROX_FINE,
                              sub_m=4)
        assert plain.values[target] < 0
        assert plain.provenance["clamped_cells"] == 0
        with pytest.warns(ClampWarning):
            clamped = krige_surface(pat, w, 1 / 6, model=model,
                                    approx=APPROX_FINE, sub_m=4,
                                    clamp_negative=True)
        assert clamped.values[target] == 0.0
        assert clamped.provenance["clamped_cells"] >= 1

    def test_cox_predictions_track_hidden_field(self):
        # Directional skill check; the strict version with baselines runs
        # in the acceptance suite.
        w = Window(Rect(0, 0, 1, 1), [Rect(0.3, 0.3, 0.6, 0.6)])
        spec = CoxSpec(100.0, 30.0, 0.2, raster_n=40)
        model = IntensityModel(100.0, spec.implied_pcf())
        grid = build_grid(w, 0.1)
        cov_spec = CovSpec(model.intensity, model.pcf, grid)
        system = assemble_system(cov_spec)
        target = int(grid.target_indices[4])
        wts = solve_weights(system, target)
        t_rect = grid.cell_rect(target)
        batch = simulate_batch(spec, w, seed=36, replicates=80)
        preds, truths = [], []
        for pat, fld in zip(batch.patterns, batch.fields):
            counts = cell_counts(pat, grid).observed_counts.astype(float)
            preds.append(predict(wts, counts, grid.cell_area))
            truths.append(fld.mean_over(t_rect))
        corr = np.corrcoef(preds, truths)[0, 1]
        assert corr > 0.3
