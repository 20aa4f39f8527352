"""Estimation core: transforms, covariance kernel, objective, optimizer, J/I/Omega."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gencov.gcov import (
    EstimationResult,
    GcovConfig,
    IBlocks,
    Transform,
    apply_transforms,
    default_starts,
    default_transforms,
    estimate_I_blocks,
    estimate_J,
    gamma_hat,
    gcov_estimate,
    heavy_tail_transforms,
    hessian,
    model_objective,
    numerical_gradient,
    omega_variants,
    panel_objective,
    pinv_cut,
    power_transforms,
    standard_errors,
    transforms_from_names,
)
from gencov.models import DarSpec, ErrorDist, MarSpec, substream_rng

T5 = ErrorDist(family="student_t", df=5.0)
CFG = GcovConfig(h=3)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


class TestTransforms:
    def test_power_one_mean_zero_input(self):
        panel = apply_transforms(np.array([1.0, -1.0]), (Transform("power", 1),))
        np.testing.assert_allclose(panel.data[:, 0], [1.0, -1.0], atol=1e-14)

    def test_power_two_demeaned(self):
        panel = apply_transforms(np.array([1.0, 2.0, 3.0]), (Transform("power", 2),))
        np.testing.assert_allclose(panel.data[:, 0], [-11.0 / 3.0, -2.0 / 3.0, 13.0 / 3.0])

    def test_log1p_sq_at_zero(self):
        panel = apply_transforms(np.array([0.0]), (Transform("log1p_sq"),))
        np.testing.assert_allclose(panel.data[:, 0], [0.0], atol=1e-14)

    def test_signed_log_is_odd(self):
        tr = Transform("signed_log")
        u = np.array([-3.0, -0.5, 0.0, 0.5, 3.0])
        np.testing.assert_allclose(tr(u), -tr(-u), atol=1e-14)

    def test_columns_demeaned(self):
        rng = substream_rng(0)
        panel = apply_transforms(rng.standard_normal(50), default_transforms())
        np.testing.assert_allclose(panel.data.mean(axis=0), [0.0, 0.0], atol=1e-12)

    def test_overflow_reported_with_label(self):
        with pytest.raises(ValueError, match="power:4"):
            apply_transforms(np.array([1e100, 1.0]), power_transforms(4))

    def test_non_finite_input_rejected(self):
        with pytest.raises(ValueError, match="position 1"):
            apply_transforms(np.array([1.0, np.nan]), default_transforms())

    def test_name_parsing_roundtrip(self):
        ts = transforms_from_names(["power:1", "abs_power:3", "log1p_sq", "signed_log"])
        assert [t.label for t in ts] == ["power:1", "abs_power:3", "log1p_sq", "signed_log"]

    def test_bad_names(self):
        with pytest.raises(ValueError, match="unknown transform"):
            transforms_from_names(["cubic"])
        with pytest.raises(ValueError, match="integer"):
            transforms_from_names(["power:x"])
        with pytest.raises(ValueError, match="exponent"):
            Transform("power")

    def test_presets(self):
        assert [t.label for t in default_transforms()] == ["power:1", "power:2"]
        assert [t.label for t in heavy_tail_transforms()] == ["log1p_sq", "signed_log"]
        assert [t.label for t in power_transforms(4)] == [
            "power:1",
            "power:2",
            "power:3",
            "power:4",
        ]


# ---------------------------------------------------------------------------
# covariance kernel and objective
# ---------------------------------------------------------------------------


class TestGammaHat:
    def test_alternating_lag0(self):
        p = np.array([1.0, -1.0, 1.0, -1.0])
        np.testing.assert_allclose(gamma_hat(p, 0), [[1.0]], atol=1e-14)

    def test_alternating_lag1(self):
        p = np.array([1.0, -1.0, 1.0, -1.0])
        np.testing.assert_allclose(gamma_hat(p, 1), [[-0.75]], atol=1e-14)

    def test_lag0_psd(self):
        rng = substream_rng(1)
        p = rng.standard_normal((40, 3))
        g0 = gamma_hat(p, 0)
        np.testing.assert_allclose(g0, g0.T, atol=1e-12)
        assert np.linalg.eigvalsh(g0).min() >= -1e-12

    def test_lag_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            gamma_hat(np.ones((5, 1)), 5)

    def test_cross_lag_orientation(self):
        # Gamma(h)[i, j] pairs column i at time t with column j at time t-h
        p = np.zeros((4, 2))
        p[:, 0] = [0.0, 1.0, 0.0, -1.0]
        p[:, 1] = [1.0, 0.0, -1.0, 0.0]
        got = gamma_hat(p, 1)
        # entry (0, 1): mean over t of p[t,0] * p[t-1,1] = (1*1 + (-1)*(-1)) / 4
        np.testing.assert_allclose(got[0, 1], 0.5, atol=1e-14)
        # entry (1, 0): only t=2 contributes, p[2,1] * p[1,0] = -1
        np.testing.assert_allclose(got[1, 0], -0.25, atol=1e-14)


class TestPanelObjective:
    def test_scalar_autocorrelation_square(self):
        p = np.array([1.0, -1.0, 1.0, -1.0])
        np.testing.assert_allclose(panel_objective(p, 1), 0.5625, atol=1e-12)

    def test_iid_panel_is_small(self):
        rng = substream_rng(2)
        resid = rng.standard_normal(10000)
        panel = apply_transforms(resid, default_transforms())
        assert panel_objective(panel, 3) < 0.01

    def test_upper_bound(self):
        rng = substream_rng(3)
        for _ in range(5):
            p = rng.standard_normal((30, 2))
            assert panel_objective(p, 4) <= 4 * 2 + 1e-9

    def test_perfectly_uncorrelated_panel_is_zero(self):
        # demeaned column whose lag-1 cross products cancel exactly
        p = np.array([1.0, 0.0, -1.0])
        np.testing.assert_allclose(panel_objective(p, 1), 0.0, atol=1e-14)

    def test_zero_variance_column_handled_by_ridge(self):
        # a single dead column is regularized away: exact zeros contribute
        # nothing, so the value matches the live column's scalar objective
        p = np.zeros((20, 2))
        p[:, 0] = substream_rng(4).standard_normal(20)
        p[:, 0] -= p[:, 0].mean()
        got = panel_objective(p, 2)
        want = panel_objective(p[:, 0], 2)
        np.testing.assert_allclose(got, want, rtol=1e-8)

    def test_fully_degenerate_panel_rejected(self):
        with pytest.raises(ValueError, match="singular beyond"):
            panel_objective(np.zeros((20, 2)), 2)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_bounds_property(self, seed):
        rng = substream_rng(seed)
        t = int(rng.integers(20, 80))
        p = rng.standard_normal((t, 2))
        h = int(rng.integers(1, 5))
        val = panel_objective(p, h)
        assert 0.0 <= val <= h * 2 + 1e-9

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_invariance_under_column_recombination(self, seed):
        rng = substream_rng(seed)
        p = rng.standard_normal((60, 2))
        # invertible mix with controlled conditioning
        while True:
            a = rng.uniform(-2.0, 2.0, size=(2, 2))
            sv = np.linalg.svd(a, compute_uv=False)
            if sv.min() > 0.3:
                break
        base = panel_objective(p, 3)
        mixed = panel_objective(p @ a.T, 3)
        assert abs(base - mixed) <= 1e-8 * (1.0 + base)


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def five_point_gradient(f, theta, rel=1e-4):
    theta = np.asarray(theta, dtype=float)
    out = np.empty(theta.size)
    for i in range(theta.size):
        h = rel * max(1.0, abs(theta[i]))
        probes = []
        for mult in (2, 1, -1, -2):
            x = theta.copy()
            x[i] += mult * h
            probes.append(f(x))
        out[i] = (-probes[0] + 8 * probes[1] - 8 * probes[2] + probes[3]) / (12 * h)
    return out


def analytic_mar1_gradient(y, phi, transforms, max_lag):
    """Chain-rule gradient of the objective for a pure order-1 lag filter.

    Independent oracle: differentiates the covariance kernel analytically
    through the residual map and the transform derivatives.
    """
    eps = y[1:] - phi * y[:-1]
    deps = -y[:-1]
    t = eps.size
    cols, dcols = [], []
    for tr in transforms:
        if tr.kind == "power" and tr.param == 1:
            c, dc = eps, deps
        elif tr.kind == "power" and tr.param == 2:
            c, dc = eps**2, 2.0 * eps * deps
        else:
            raise NotImplementedError
        cols.append(c - c.mean())
        dcols.append(dc - dc.mean())
    p = np.column_stack(cols)
    dp = np.column_stack(dcols)
    g0 = p.T @ p / t
    dg0 = (dp.T @ p + p.T @ dp) / t
    a_inv = np.linalg.inv(g0)
    total = 0.0
    for h in range(1, max_lag + 1):
        gh = p[h:].T @ p[:-h] / t
        dgh = (dp[h:].T @ p[:-h] + p[h:].T @ dp[:-h]) / t
        first = 2.0 * np.trace(a_inv @ gh.T @ a_inv @ dgh)
        middle = a_inv @ (gh.T @ a_inv @ gh + gh @ a_inv @ gh.T) @ a_inv
        total += first - np.trace(middle @ dg0)
    return total


class TestNumericalGradient:
    def test_quadratic(self):
        got = numerical_gradient(lambda th: float(th[0] ** 2), np.array([3.0]))
        np.testing.assert_allclose(got, [6.0], atol=1e-6)

    def test_matches_five_point_stencil(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 400, seed=40).y
        f = lambda th: model_objective(y, spec.with_params(th), CFG)
        for theta in ([0.3], [0.62], [-0.2]):
            g2 = numerical_gradient(f, np.asarray(theta))
            g5 = five_point_gradient(f, np.asarray(theta))
            np.testing.assert_allclose(g2, g5, rtol=1e-5, atol=1e-9)

    def test_matches_analytic_chain_rule(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 500, seed=41).y
        f = lambda th: model_objective(y, spec.with_params(th), CFG)
        for phi in (0.3, 0.55, 0.8):
            got = numerical_gradient(f, np.array([phi]))[0]
            want = analytic_mar1_gradient(y, phi, CFG.transforms, CFG.h)
            np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-10)

    def test_non_finite_probe_raises(self):
        with pytest.raises(ValueError, match="non-finite"):
            numerical_gradient(lambda th: np.nan, np.array([0.0]))


class TestEstimateJ:
    def test_quadratic_form(self):
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        f = lambda th: float(th @ a @ th)
        got = hessian(f, np.array([0.3, -0.2]))
        np.testing.assert_allclose(got, 2.0 * a, atol=1e-4)

    def test_psd_at_minimum(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 800, seed=42).y
        fit = gcov_estimate(y, spec, CFG)
        j = estimate_J(y, fit.spec, CFG)
        np.testing.assert_allclose(j, j.T, atol=1e-10)
        assert np.linalg.eigvalsh(j).min() >= -1e-6

    def test_matches_differenced_analytic_gradient(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 500, seed=43).y
        j = estimate_J(y, spec, CFG)[0, 0]
        # independent oracle: central difference of the analytic gradient
        step = 1e-5
        up = analytic_mar1_gradient(y, 0.5 + step, CFG.transforms, CFG.h)
        dn = analytic_mar1_gradient(y, 0.5 - step, CFG.transforms, CFG.h)
        np.testing.assert_allclose(j, (up - dn) / (2 * step), rtol=1e-3)


# ---------------------------------------------------------------------------
# the estimator
# ---------------------------------------------------------------------------


class TestGcovEstimate:
    def test_ar1_recovery_and_grid_oracle(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 2000, seed=44).y
        fit = gcov_estimate(y, spec, CFG)
        assert abs(fit.theta[0] - 0.5) < 0.08
        # brute-force grid oracle over the whole parameter range
        grid = np.arange(-0.99, 0.991, 0.001)
        vals = [model_objective(y, spec.with_params([g]), CFG) for g in grid]
        assert abs(fit.theta[0] - grid[int(np.argmin(vals))]) <= 0.002
        assert fit.objective <= min(vals) + 1e-10

    def test_mixed_model_heavy_tails(self):
        spec = MarSpec(r=1, s=1, phi=(0.7,), psi=(0.2,))
        y = spec.simulate(ErrorDist(family="cauchy"), 500, seed=45).y
        cfg = GcovConfig(transforms=heavy_tail_transforms(), h=3)
        fit = gcov_estimate(y, spec, cfg)
        np.testing.assert_allclose(fit.theta, [0.7, 0.2], atol=0.1)

    def test_minimizer_dominates_truth(self):
        spec = MarSpec(r=1, s=1, phi=(0.3,), psi=(0.8,))
        y = spec.simulate(T5, 600, seed=46).y
        fit = gcov_estimate(y, spec, CFG)
        assert fit.objective <= model_objective(y, spec, CFG) + 1e-12

    def test_deterministic(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 400, seed=47).y
        a = gcov_estimate(y, spec, CFG)
        b = gcov_estimate(y, spec, CFG)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert a.objective == b.objective

    def test_explicit_starts_and_diagnostics(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 300, seed=48).y
        fit = gcov_estimate(y, spec, CFG, starts=[np.array([0.2]), np.array([0.8])])
        assert fit.n_starts_used == 2
        assert len(fit.start_diagnostics) == 2
        assert all(np.isfinite(d.objective) for d in fit.start_diagnostics)

    def test_all_starts_fail(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 300, seed=49).y
        with pytest.raises(ValueError, match="starts failed"):
            gcov_estimate(y, spec, CFG, starts=[np.array([np.nan])])

    def test_start_shape_checked(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 300, seed=50).y
        with pytest.raises(ValueError, match="shape"):
            gcov_estimate(y, spec, CFG, starts=[np.array([0.1, 0.2])])

    def test_dar_recovery(self):
        spec = DarSpec(p=1, q=1, phi=(0.5,), omega=1.0, alpha=(0.4,))
        y = spec.simulate(T5, 2000, seed=51).y
        fit = gcov_estimate(y, spec, CFG)
        np.testing.assert_allclose(fit.theta, [0.5, 1.0, 0.4], atol=0.15)
        # reported scale convention: unit residual sample variance
        np.testing.assert_allclose(np.var(fit.spec.residuals(y)), 1.0, atol=1e-10)

    def test_dar_objective_scale_ray_flat(self):
        spec = DarSpec(p=1, q=1, phi=(0.5,), omega=1.0, alpha=(0.4,))
        y = spec.simulate(T5, 500, seed=57).y
        base = model_objective(y, spec, CFG)
        for c in (1e-6, 0.3, 7.0, 1e6):
            scaled = spec.with_params([0.5, c * 1.0, c * 0.4])
            np.testing.assert_allclose(model_objective(y, scaled, CFG), base, rtol=1e-12)

    def test_dar_degenerate_scale_rejected(self):
        spec = DarSpec(p=1, q=1, phi=(0.5,), omega=0.0, alpha=(0.0,))
        with pytest.raises(ValueError, match="must be positive"):
            model_objective(np.ones(50), spec, CFG)

    def test_default_starts_cover_flips(self):
        # one-sided template on two-sided data: the start set must include
        # reciprocal-flip configurations, not just the stationary fit
        spec = MarSpec(r=0, s=1, psi=(0.2,))
        y = MarSpec(r=0, s=1, psi=(0.2,)).simulate(T5, 300, seed=52).y
        starts = default_starts(y, MarSpec(r=1, s=0, phi=(0.0,)), CFG)
        mods = sorted(abs(s[0]) for s in starts[:4])
        assert any(m > 1.0 for m in mods) or len(starts) >= 2


# ---------------------------------------------------------------------------
# I blocks and sandwiches
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def identical_model_blocks():
    spec = MarSpec(r=1, s=0, phi=(0.5,))
    y = spec.simulate(T5, 300, seed=53).y
    cfg = GcovConfig(h=2)
    fit = gcov_estimate(y, spec, cfg)
    blocks = estimate_I_blocks(y, fit, fit, r_reps=500, seed=54)
    return fit, blocks


class TestIBlocks:
    def test_identical_models_have_equal_blocks(self, identical_model_blocks):
        _, blocks = identical_model_blocks
        scale = abs(blocks.i11[0, 0])
        assert abs(blocks.i12[0, 0] - blocks.i11[0, 0]) < 0.1 * scale
        assert abs(blocks.i22[0, 0] - blocks.i11[0, 0]) < 0.1 * scale

    def test_blocks_finite_symmetric_psd(self, identical_model_blocks):
        _, blocks = identical_model_blocks
        for m in (blocks.i11, blocks.i22, blocks.i22_star):
            assert np.all(np.isfinite(m))
            np.testing.assert_allclose(m, m.T, atol=1e-8)
            assert np.linalg.eigvalsh(m).min() >= -1e-8

    def test_centering_shrinks_second_moment(self, identical_model_blocks):
        _, blocks = identical_model_blocks
        gap = blocks.i22 - blocks.i22_star
        assert np.linalg.eigvalsh(gap).min() >= -1e-8

    def test_replication_floor(self, identical_model_blocks):
        fit, _ = identical_model_blocks
        with pytest.raises(ValueError, match="at least 50"):
            estimate_I_blocks(np.ones(100), fit, fit, r_reps=10, seed=0)

    def test_parametric_mode_needs_dist(self, identical_model_blocks):
        fit, _ = identical_model_blocks
        with pytest.raises(ValueError, match="parametric mode needs"):
            estimate_I_blocks(np.ones(100), fit, fit, r_reps=50, seed=0, mode="parametric")


class TestOmegaVariants:
    def test_scalar_sandwich(self):
        blocks = IBlocks(
            i11=np.array([[8.0]]),
            i12=np.zeros((1, 1)),
            i22=np.array([[8.0]]),
            i22_star=np.array([[8.0]]),
            r_used=100,
            dropped=0,
            mode="resample",
        )
        out = omega_variants(np.array([[2.0]]), blocks)
        np.testing.assert_allclose(out.omega_22, [[2.0]])
        np.testing.assert_allclose(out.omega_a, [[2.0]])

    def test_zero_cross_block_collapses(self):
        rng = substream_rng(55)
        a = rng.standard_normal((2, 2))
        i22 = a @ a.T + np.eye(2)
        blocks = IBlocks(
            i11=np.eye(2),
            i12=np.zeros((2, 2)),
            i22=i22,
            i22_star=i22,
            r_used=100,
            dropped=0,
            mode="resample",
        )
        out = omega_variants(np.eye(2), blocks)
        np.testing.assert_allclose(out.omega_a, out.omega_22, atol=1e-12)

    def test_schur_psd(self):
        rng = substream_rng(56)
        for _ in range(10):
            m = rng.standard_normal((4, 4))
            big = m @ m.T + 0.1 * np.eye(4)  # joint second moment, PSD
            i11, i12, i22 = big[:2, :2], big[:2, 2:], big[2:, 2:]
            blocks = IBlocks(
                i11=i11, i12=i12, i22=i22, i22_star=i22, r_used=100, dropped=0, mode="resample"
            )
            j22 = rng.standard_normal((2, 2))
            j22 = j22 @ j22.T + np.eye(2)
            out = omega_variants(j22, blocks)
            assert np.linalg.eigvalsh(out.omega_a).min() >= -1e-8

    def test_singular_j_rejected(self):
        blocks = IBlocks(
            i11=np.eye(2), i12=np.zeros((2, 2)), i22=np.eye(2), i22_star=np.eye(2),
            r_used=100, dropped=0, mode="resample",
        )
        with pytest.raises(ValueError, match="J22 is singular"):
            omega_variants(np.array([[1.0, 1.0], [1.0, 1.0]]), blocks)


class TestPinvAndSe:
    def test_full_rank(self):
        m = np.array([[2.0, 0.0], [0.0, 4.0]])
        inv, rank = pinv_cut(m)
        assert rank == 2
        np.testing.assert_allclose(inv, [[0.5, 0.0], [0.0, 0.25]], atol=1e-12)

    def test_rank_deficient(self):
        m = np.array([[1.0, 1.0], [1.0, 1.0]])
        inv, rank = pinv_cut(m)
        assert rank == 1
        np.testing.assert_allclose(inv @ m @ inv, inv, atol=1e-10)

    def test_standard_errors(self):
        np.testing.assert_allclose(
            standard_errors(np.array([[4.0, 0.0], [0.0, 9.0]]), 100), [0.2, 0.3]
        )
