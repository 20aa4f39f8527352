"""Specification tests and critical-value utilities.

Chi-square quantile/CDF arithmetic, the residual-autocovariance portmanteau
test, a no-estimation serial-dependence test on raw series, bootstrap
critical values via residual resampling and model regeneration, and the
Wald-type and score-type statistics used to compare competing model spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammainc, gammaincinv

from .constraints import CGcovResult, ConstraintSet, cgcov_estimate
from .gcov import (
    EstimationResult,
    GcovConfig,
    IBlocks,
    Transform,
    apply_transforms,
    default_starts,
    gcov_estimate,
    model_objective,
    numerical_gradient,
    panel_objective,
    pinv_cut,
)
from .models import ModelSpec, resample_path, substream_rng
from .timeseries import as_values

__all__ = [
    "TestResult",
    "ScoreVector",
    "chi_square_quantile",
    "chi_square_cdf",
    "portmanteau_test",
    "nlsd_test",
    "bootstrap_portmanteau",
    "wald_w1",
    "wald_w2",
    "wald_w3",
    "score_vector",
    "score_s1",
    "score_s2",
]


# ---------------------------------------------------------------------------
# result container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    """Outcome of one specification test.

    ``method`` is ``"chi_square"`` when the reference distribution is the
    asymptotic chi-square (``dof`` set, ``b_resamples`` absent) and
    ``"bootstrap"`` when critical value and p-value come from resampled
    statistics (``b_resamples`` set, ``dof`` absent).
    """

    __test__ = False  # keep test collectors away from the result type

    statistic: float
    critical_value: float
    p_value: float
    level: float
    method: str
    dof: int | None = None
    b_resamples: int | None = None
    warnings: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value must lie in [0, 1], got {self.p_value}")
        if self.statistic < 0.0:
            raise ValueError(f"statistic must be non-negative, got {self.statistic}")

    @property
    def reject(self) -> bool:
        """Decision at ``level``: statistic beyond the critical value."""
        return bool(self.statistic > self.critical_value)

    def to_dict(self) -> dict:
        out = {
            "statistic": self.statistic,
            "dof": self.dof,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "method": self.method,
            "B": self.b_resamples,
            "level": self.level,
            "warnings": list(self.warnings),
        }
        out.update(self.details)
        return out


@dataclass(frozen=True)
class ScoreVector:
    """Objective gradient of the alternative template at a pinned point.

    ``variant`` records which binding the gradient was taken at:
    ``"asymptotic_b"`` for the limit pseudo-true value and
    ``"finite_sample_b"`` for its finite-sample counterpart.
    """

    values: np.ndarray
    variant: str = "asymptotic_b"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(vals)):
            raise ValueError("score vector has non-finite entries")
        object.__setattr__(self, "values", vals)


# ---------------------------------------------------------------------------
# chi-square arithmetic
# ---------------------------------------------------------------------------


def chi_square_quantile(p: float, k: int) -> float:
    """Inverse CDF of the chi-square law with ``k`` degrees of freedom.

    Computed by inverting the regularized lower incomplete gamma function;
    relative accuracy is far inside 1e-6 over the tested range.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie strictly in (0, 1), got {p}")
    if k < 1:
        raise ValueError(f"degrees of freedom must be at least 1, got {k}")
    return float(2.0 * gammaincinv(k / 2.0, p))


def chi_square_cdf(x: float, k: int) -> float:
    """CDF of the chi-square law with ``k`` degrees of freedom."""
    if k < 1:
        raise ValueError(f"degrees of freedom must be at least 1, got {k}")
    if x <= 0.0:
        return 0.0
    return float(gammainc(k / 2.0, x / 2.0))


def _chi_square_result(
    statistic: float,
    dof: int,
    level: float,
    warnings: Sequence[str] = (),
    details: dict | None = None,
) -> TestResult:
    return TestResult(
        statistic=float(statistic),
        critical_value=chi_square_quantile(1.0 - level, dof),
        p_value=1.0 - chi_square_cdf(statistic, dof),
        level=level,
        method="chi_square",
        dof=dof,
        warnings=tuple(warnings),
        details=dict(details or {}),
    )


# ---------------------------------------------------------------------------
# portmanteau test at a fitted model
# ---------------------------------------------------------------------------

BOUNDARY_WARNING = (
    "parameter estimate sits on the constraint boundary; the chi-square "
    "reference distribution does not apply there — use bootstrap critical values"
)


def portmanteau_test(
    y: np.ndarray,
    fitted: EstimationResult | CGcovResult,
    cfg: GcovConfig,
    level: float = 0.05,
) -> TestResult:
    """Residual serial-dependence test at a fitted model.

    The statistic is the effective sample size times the fitted objective
    value; under a correct specification with interior parameters it is
    asymptotically chi-square with ``h * k**2 - dim`` degrees of freedom.
    Boundary fits keep the chi-square bookkeeping but carry a warning
    directing the caller to the bootstrap version.
    """
    del y  # the fitted result already carries the evaluated objective
    dof = cfg.h * cfg.k**2 - fitted.spec.dim
    if dof <= 0:
        raise ValueError(
            f"test needs h*k^2 > dim, got h={cfg.h}, k={cfg.k}, dim={fitted.spec.dim}"
        )
    statistic = max(float(fitted.t_effective) * float(fitted.objective), 0.0)
    warnings = []
    if getattr(fitted, "boundary_flag", False):
        warnings.append(BOUNDARY_WARNING)
    return _chi_square_result(statistic, dof, level, warnings)


# ---------------------------------------------------------------------------
# serial-dependence test on the raw series (no estimation)
# ---------------------------------------------------------------------------


def nlsd_test(
    y: np.ndarray,
    transforms: Sequence[Transform],
    h: int,
    level: float = 0.05,
) -> TestResult:
    """Serial-dependence test applied directly to a transformed raw series.

    No parameters are estimated, so the degrees of freedom are the full
    ``h * k**2``.  Rejecting means the series itself carries nonlinear
    serial dependence worth modelling.
    """
    values = as_values(y)
    if h < 1:
        raise ValueError(f"need at least one lag, got h={h}")
    if not transforms:
        raise ValueError("need at least one transform")
    if values.size <= h:
        raise ValueError(f"series of length {values.size} too short for h={h}")
    panel = apply_transforms(values, transforms)
    scale = np.abs(panel.data).max(initial=0.0)
    col_sd = panel.data.std(axis=0)
    dead = np.flatnonzero(col_sd <= 1e-12 * max(1.0, scale))
    if dead.size:
        labels = ", ".join(panel.labels[i] for i in dead)
        raise ValueError(f"zero-variance transform column: {labels}")
    statistic = float(values.size) * panel_objective(panel, h)
    dof = h * len(transforms) ** 2
    return _chi_square_result(max(statistic, 0.0), dof, level)


# ---------------------------------------------------------------------------
# bootstrap critical values
# ---------------------------------------------------------------------------


def _fit_statistic(res: EstimationResult | CGcovResult) -> float:
    return max(float(res.t_effective) * float(res.objective), 0.0)


def bootstrap_portmanteau(
    y: np.ndarray,
    template: ModelSpec,
    cfg: GcovConfig,
    cs: ConstraintSet | None = None,
    *,
    b_resamples: int = 199,
    seed: int,
    level: float = 0.05,
    refit_starts: int = 3,
) -> TestResult:
    """Portmanteau test with critical values from residual resampling.

    Fits the template (constrained when ``cs`` is given), then repeatedly
    resamples the fitted residuals i.i.d. with replacement, regenerates a
    synthetic series through the fitted model, re-estimates, and collects the
    resampled statistics.  The critical value is the order statistic of rank
    ``ceil((1 - level) * (B + 1))`` and the p-value is
    ``(1 + #{resampled >= observed}) / (B + 1)``.  Deterministic given
    ``seed``.  Valid at boundary fits, where the chi-square reference is not.
    """
    if b_resamples < 99:
        raise ValueError(f"need at least 99 resamples, got {b_resamples}")
    values = as_values(y)
    if cs is not None:
        fitted = cgcov_estimate(values, template, cfg, cs)
    else:
        fitted = gcov_estimate(values, template, cfg)
    observed = _fit_statistic(fitted)
    residuals = fitted.spec.residuals(values)

    refit_cfg = replace(cfg, n_starts=max(1, refit_starts))
    anchor = np.asarray(fitted.theta, dtype=float)
    stats: list[float] = []
    failures = 0
    for b in range(1, b_resamples + 1):
        rng = substream_rng(seed, b)
        try:
            y_b = resample_path(fitted.spec, values.size, residuals, rng)
            starts = [anchor, *default_starts(y_b, template, refit_cfg)]
            if cs is not None:
                res_b = cgcov_estimate(y_b, template, refit_cfg, cs, starts=starts)
            else:
                res_b = gcov_estimate(y_b, template, refit_cfg, starts=starts)
            stat_b = _fit_statistic(res_b)
            if not math.isfinite(stat_b):
                raise ValueError("non-finite resampled statistic")
        except (ValueError, FloatingPointError):
            failures += 1
            continue
        stats.append(stat_b)

    if failures > 0.1 * b_resamples:
        raise ValueError(
            f"estimation failed on {failures} of {b_resamples} resamples (more than 10%)"
        )
    b_eff = len(stats)
    ordered = np.sort(np.asarray(stats))
    rank = min(math.ceil((1.0 - level) * (b_eff + 1)), b_eff)
    critical_value = float(ordered[rank - 1])
    p_value = (1.0 + float(np.sum(ordered >= observed))) / (b_eff + 1.0)

    warnings = list(fitted.warnings)
    if failures:
        warnings.append(f"{failures} of {b_resamples} resamples were dropped")
    return TestResult(
        statistic=observed,
        critical_value=critical_value,
        p_value=p_value,
        level=level,
        method="bootstrap",
        b_resamples=b_eff,
        warnings=tuple(warnings),
        details={"boundary": bool(getattr(fitted, "boundary_flag", False))},
    )


# ---------------------------------------------------------------------------
# Wald-type statistics between model spaces
# ---------------------------------------------------------------------------


def _wald_core(
    beta_hat: np.ndarray,
    binding: np.ndarray,
    weight: np.ndarray,
    t: int,
    level: float,
    variant: str,
    weighting: str,
) -> TestResult:
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    binding = np.asarray(binding, dtype=float).ravel()
    if beta_hat.shape != binding.shape:
        raise ValueError(
            f"dimension mismatch: estimate has {beta_hat.size} entries, "
            f"pinned value has {binding.size}"
        )
    weight = np.atleast_2d(np.asarray(weight, dtype=float))
    if weight.shape != (beta_hat.size, beta_hat.size):
        raise ValueError(
            f"weight matrix shape {weight.shape} does not match parameter "
            f"dimension {beta_hat.size}"
        )
    diff = beta_hat - binding
    if weighting == "sandwich_inverse":
        w_inv, rank = pinv_cut(weight)
        quad = float(diff @ w_inv @ diff)
    elif weighting == "hessian":
        _, rank = pinv_cut(weight)
        quad = float(diff @ weight @ diff)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    if rank == 0:
        raise ValueError("weight matrix has rank zero")
    statistic = max(float(t) * quad, 0.0)
    return _chi_square_result(
        statistic, rank, level, details={"variant": variant, "weighting": weighting}
    )


def wald_w1(
    beta_hat: np.ndarray,
    binding: np.ndarray,
    omega_a: np.ndarray,
    t: int,
    *,
    level: float = 0.05,
    weighting: str = "sandwich_inverse",
) -> TestResult:
    """Distance of the alternative fit from the limit pseudo-true value.

    ``weighting="sandwich_inverse"`` (default) uses the generalized inverse
    of the supplied variance; ``weighting="hessian"`` uses the supplied
    matrix directly as the quadratic-form weight (the nested-case shortcut).
    Degrees of freedom are the retained rank of the weight matrix.
    """
    return _wald_core(beta_hat, binding, omega_a, t, level, "w1", weighting)


def wald_w2(
    beta_hat: np.ndarray,
    binding_t: np.ndarray,
    omega_f: np.ndarray,
    t: int,
    *,
    level: float = 0.05,
    weighting: str = "sandwich_inverse",
) -> TestResult:
    """Same quadratic form as ``wald_w1`` at the finite-sample pinned value."""
    return _wald_core(beta_hat, binding_t, omega_f, t, level, "w2", weighting)


def wald_w3(
    beta_hat: np.ndarray,
    binding_ts: np.ndarray,
    omega_s: np.ndarray,
    t: int,
    *,
    level: float = 0.05,
    weighting: str = "sandwich_inverse",
) -> TestResult:
    """Same quadratic form at the simulation-averaged pinned value.

    ``omega_s`` should already include the finite-replication inflation
    factor ``(1 + 1/S)``.
    """
    return _wald_core(beta_hat, binding_ts, omega_s, t, level, "w3", weighting)


# ---------------------------------------------------------------------------
# score-type statistics
# ---------------------------------------------------------------------------


def score_vector(
    y: np.ndarray,
    template: ModelSpec,
    at: Sequence[float],
    cfg: GcovConfig,
    *,
    variant: str = "asymptotic_b",
) -> ScoreVector:
    """Gradient of the template's objective at a pinned parameter point.

    At the template's own minimizer this vanishes; evaluated at a pseudo-true
    value pinned from a competing model it measures how far the data pull the
    alternative away from that value.
    """
    values = as_values(y)
    at_arr = np.asarray(at, dtype=float).ravel()
    if at_arr.shape != (template.dim,):
        raise ValueError(
            f"evaluation point has {at_arr.size} entries, template needs {template.dim}"
        )
    grad = numerical_gradient(
        lambda th: model_objective(values, template.with_params(th), cfg), at_arr
    )
    return ScoreVector(values=grad, variant=variant)


def _score_core(
    lam: ScoreVector | np.ndarray,
    variance: np.ndarray,
    t: int,
    level: float,
    variant: str,
    normalization: str,
) -> TestResult:
    vec = lam.values if isinstance(lam, ScoreVector) else np.asarray(lam, dtype=float).ravel()
    variance = np.atleast_2d(np.asarray(variance, dtype=float))
    if variance.shape != (vec.size, vec.size):
        raise ValueError(
            f"variance shape {variance.shape} does not match score dimension {vec.size}"
        )
    sym = 0.5 * (variance + variance.T)
    evals = np.linalg.eigvalsh(sym)
    floor = -1e-8 * max(1.0, float(np.abs(evals).max()))
    if evals.min() < floor:
        raise ValueError(
            f"score variance matrix is indefinite (min eigenvalue {evals.min():.3g})"
        )
    v_inv, rank = pinv_cut(sym)
    if rank == 0:
        raise ValueError("score variance matrix has rank zero")
    quad = float(vec @ v_inv @ vec)
    if normalization == "t":
        statistic = float(t) * quad
    elif normalization == "inverse_t":
        statistic = quad / float(t)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return _chi_square_result(
        max(statistic, 0.0),
        rank,
        level,
        details={"variant": variant, "normalization": normalization},
    )


def _schur_variance(i22: np.ndarray, iblocks: IBlocks) -> np.ndarray:
    i11_inv, _ = pinv_cut(iblocks.i11)
    return i22 - iblocks.i21 @ i11_inv @ iblocks.i12


def score_s1(
    lam: ScoreVector | np.ndarray,
    iblocks: IBlocks,
    t: int,
    *,
    level: float = 0.05,
    normalization: str = "t",
) -> TestResult:
    """Score statistic at the limit pseudo-true value.

    The variance is the Schur complement of the gradient second-moment
    blocks; degrees of freedom are its retained rank.  ``normalization="t"``
    (default) multiplies the quadratic form by the sample size — the scaling
    under which the statistic is chi-square calibrated with these gradient
    blocks; ``"inverse_t"`` divides instead and is recorded in the output.
    """
    return _score_core(lam, _schur_variance(iblocks.i22, iblocks), t, level, "s1", normalization)


def score_s2(
    lam: ScoreVector | np.ndarray,
    iblocks: IBlocks,
    t: int,
    *,
    level: float = 0.05,
    normalization: str = "t",
) -> TestResult:
    """Score statistic at the finite-sample pinned value (starred block)."""
    return _score_core(
        lam, _schur_variance(iblocks.i22_star, iblocks), t, level, "s2", normalization
    )
