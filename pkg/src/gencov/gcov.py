"""Covariance-based estimation core.

The estimator minimizes, over model parameters, a portmanteau-type objective:
model residuals are passed through K nonlinear transforms, the transformed
columns are demeaned, and the objective sums Tr[R(h)^2] over lags h = 1..H,
where R(h) is the multivariate autocorrelation matrix
Gamma(h) Gamma(0)^-1 Gamma(h)' Gamma(0)^-1 of the panel.  Serial dependence
left in any transform shows up as a positive contribution, so the minimizer
drives the transformed residuals toward serial independence.

Also here: finite-difference gradients and Hessians (J), the simulation
estimator of the score second-moment blocks (I), and the sandwich variance
variants built from them.  Scaling convention, fixed package-wide: J is the
Hessian of the objective, I blocks are means over replications of
T * grad * grad', Omega = J^-1 I J^-1, and sqrt(T) (theta_hat - theta_0) is
asymptotically N(0, Omega).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2

from . import _kernels
from .models import (
    DarSpec,
    MarSpec,
    ModelSpec,
    poly_from_roots,
    roots_from_poly,
    substream_rng,
)
from .timeseries import acf as _acf
from .timeseries import as_values

__all__ = [
    "Transform",
    "transform",
    "transforms_from_names",
    "default_transforms",
    "heavy_tail_transforms",
    "volatility_transforms",
    "power_transforms",
    "TransformedPanel",
    "apply_transforms",
    "gamma_hat",
    "panel_objective",
    "model_objective",
    "GcovConfig",
    "EstimationResult",
    "gcov_estimate",
    "default_starts",
    "degeneracy_floor",
    "numerical_gradient",
    "estimate_J",
    "hessian",
    "IBlocks",
    "estimate_I_blocks",
    "OmegaVariants",
    "omega_variants",
    "pinv_cut",
    "standard_errors",
]

#: relative singular-value cutoff shared by every generalized inverse
SV_CUTOFF = 1e-10


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transform:
    """A deterministic scalar map applied elementwise to residuals."""

    kind: str
    param: int | None = None

    def __post_init__(self) -> None:
        if self.kind in {"power", "abs_power"}:
            if self.param is None or self.param < 1:
                raise ValueError(f"{self.kind} transform needs an integer exponent >= 1")
        elif self.kind in {"log1p_sq", "signed_log"}:
            if self.param is not None:
                raise ValueError(f"{self.kind} transform takes no parameter")
        else:
            raise ValueError(
                f"unknown transform {self.kind!r} "
                "(expected power, abs_power, log1p_sq or signed_log)"
            )

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.param}" if self.param is not None else self.kind

    def __call__(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "power":
            return u**self.param
        if self.kind == "abs_power":
            return np.abs(u) ** self.param
        if self.kind == "log1p_sq":
            return np.log1p(u**2)
        return np.sign(u) * np.log1p(np.abs(u))  # signed_log


def transform(kind: str, param: int | None = None) -> Transform:
    return Transform(kind=kind, param=param)


def transforms_from_names(names: Iterable[str]) -> tuple[Transform, ...]:
    """Parse labels like ``power:2`` or ``signed_log`` into a transform tuple."""
    out = []
    for name in names:
        if ":" in name:
            kind, raw = name.split(":", 1)
            try:
                param = int(raw)
            except ValueError:
                raise ValueError(f"transform parameter in {name!r} must be an integer") from None
            out.append(Transform(kind=kind, param=param))
        else:
            out.append(Transform(kind=name))
    if not out:
        raise ValueError("need at least one transform")
    return tuple(out)


def default_transforms() -> tuple[Transform, ...]:
    """Levels and squares (K=2): the workhorse pair for finite-variance errors."""
    return (Transform("power", 1), Transform("power", 2))


def heavy_tail_transforms() -> tuple[Transform, ...]:
    """Bounded-moment pair for very heavy tails (e.g. cauchy errors), K=2.

    Raw powers of cauchy residuals have no finite fourth moments, which the
    asymptotics require; both logarithmic maps here have all moments finite.
    """
    return (Transform("log1p_sq"), Transform("signed_log"))


def volatility_transforms() -> tuple[Transform, ...]:
    """Levels, squares and absolute values (K=3) for conditional-scale models.

    With moderately heavy errors the squared-residual channel alone leaves the
    variance split between the constant and the lagged-square loadings nearly
    flat in finite samples; |u| adds a scale-sensitive moment whose sample
    covariances keep finite variance, which pins the split down sharply.
    """
    return (Transform("power", 1), Transform("power", 2), Transform("abs_power", 1))


def power_transforms(k_max: int) -> tuple[Transform, ...]:
    """Powers 1..k_max (e.g. k_max=4 for the short-rate pipeline)."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    return tuple(Transform("power", k) for k in range(1, k_max + 1))


@dataclass(frozen=True)
class TransformedPanel:
    """Demeaned transformed residuals: T_e rows by K columns."""

    data: np.ndarray
    labels: tuple[str, ...]

    @property
    def t_effective(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]


def apply_transforms(u: np.ndarray, transforms: Sequence[Transform]) -> TransformedPanel:
    """Apply each transform elementwise and demean every column."""
    u = as_values(u)
    if u.size == 0:
        raise ValueError("cannot transform an empty residual series")
    if not np.all(np.isfinite(u)):
        bad = int(np.flatnonzero(~np.isfinite(u))[0])
        raise ValueError(f"residual series has a non-finite value at position {bad}")
    if not transforms:
        raise ValueError("need at least one transform")
    cols = np.empty((u.size, len(transforms)))
    for j, tr in enumerate(transforms):
        with np.errstate(over="ignore"):
            col = tr(u)
        if not np.all(np.isfinite(col)):
            bad = int(np.flatnonzero(~np.isfinite(col))[0])
            raise ValueError(
                f"transform {tr.label} produced a non-finite value at position {bad}"
            )
        cols[:, j] = col - col.mean()
    return TransformedPanel(data=cols, labels=tuple(tr.label for tr in transforms))


# ---------------------------------------------------------------------------
# covariance kernel
# ---------------------------------------------------------------------------


def gamma_hat(panel: TransformedPanel | np.ndarray, h: int) -> np.ndarray:
    """Sample autocovariance matrix at lag ``h`` (denominator = panel length)."""
    data = panel.data if isinstance(panel, TransformedPanel) else np.asarray(panel, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if h < 0 or h >= data.shape[0]:
        raise ValueError(f"lag {h} out of range for panel of length {data.shape[0]}")
    return _kernels.gamma_stack(data, h)[h]


def _regularized_gamma0(g0: np.ndarray, ridge_cond: float) -> np.ndarray:
    """Ridge the lag-0 covariance if ill-conditioned; error if truly singular."""
    k = g0.shape[0]
    cond = np.linalg.cond(g0)
    if not np.isfinite(cond) or cond > ridge_cond:
        g0 = g0 + (1e-10 * np.trace(g0) / k) * np.eye(k)
        cond = np.linalg.cond(g0)
        if not np.isfinite(cond) or cond > 1e14:
            raise ValueError(
                "lag-0 covariance of the transformed panel is singular beyond "
                "regularization (collinear or zero-variance transform columns)"
            )
    return g0


def panel_objective(
    panel: TransformedPanel | np.ndarray,
    max_lag: int,
    *,
    ridge_cond: float = 1e10,
    per_lag: bool = False,
):
    """Sum over h = 1..max_lag of Tr[Gamma(h) Gamma(0)^-1 Gamma(h)' Gamma(0)^-1].

    Each term is a squared-canonical-correlation sum in [0, K], so the total
    lies in [0, max_lag * K].
    """
    data = panel.data if isinstance(panel, TransformedPanel) else np.asarray(panel, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    t, k = data.shape
    if not 1 <= max_lag < t:
        raise ValueError(f"need 1 <= H < T_e, got H={max_lag}, T_e={t}")
    gammas = _kernels.gamma_stack(data, max_lag)
    g0 = _regularized_gamma0(gammas[0], ridge_cond)
    terms = np.empty(max_lag)
    for h in range(1, max_lag + 1):
        a = np.linalg.solve(g0, gammas[h])
        b = np.linalg.solve(g0, gammas[h].T)
        terms[h - 1] = max(float(np.sum(a * b.T)), 0.0)
    if per_lag:
        return terms
    return float(terms.sum())


def model_objective(y: np.ndarray, spec: ModelSpec, cfg: "GcovConfig") -> float:
    """The estimation objective at one parameter point.

    Conditional-scale parameters enter the objective only through the shape of
    the variance function, never its level: rescaling ``(omega, alpha)`` by a
    common factor rescales every residual uniformly, which the objective
    ignores.  Evaluation therefore normalizes ``omega + sum(alpha)`` to one
    first, so points anywhere along an equivalence ray evaluate identically
    and remain well conditioned near the origin.
    """
    spec = _scale_normalized(spec)
    resid = spec.residuals(as_values(y))
    panel = apply_transforms(resid, cfg.transforms)
    return panel_objective(panel, cfg.h, ridge_cond=cfg.ridge_cond)


def _scale_normalized(spec: ModelSpec) -> ModelSpec:
    """Project conditional-variance parameters onto the unit-sum slice."""
    if not isinstance(spec, DarSpec):
        return spec
    total = spec.omega + sum(spec.alpha)
    if not np.isfinite(total) or total <= 0.0:
        raise ValueError(
            f"conditional variance level omega + sum(alpha) must be positive, got {total}"
        )
    return spec.with_params(
        np.concatenate(
            (spec.phi, [spec.omega / total], np.asarray(spec.alpha, dtype=float) / total)
        )
    )


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GcovConfig:
    """Estimation settings: transforms, lag depth and optimizer controls."""

    transforms: tuple[Transform, ...] = field(default_factory=default_transforms)
    h: int = 3
    n_starts: int = 20
    start_box: tuple[tuple[float, float], ...] | None = None
    start_seed: int = 0
    nm_maxiter: int | None = None
    nm_xatol: float = 1e-6
    nm_fatol: float = 1e-10
    polish: bool = True
    ridge_cond: float = 1e10
    grad_tol: float = 1e-5

    def __post_init__(self) -> None:
        if self.h < 1:
            raise ValueError(f"need at least one lag, got h={self.h}")
        if not self.transforms:
            raise ValueError("need at least one transform")
        if self.n_starts < 1:
            raise ValueError("need at least one start")

    @property
    def k(self) -> int:
        return len(self.transforms)

    def to_dict(self) -> dict:
        return {
            "transforms": [tr.label for tr in self.transforms],
            "h": self.h,
            "n_starts": self.n_starts,
            "start_box": self.start_box,
            "start_seed": self.start_seed,
        }


@dataclass(frozen=True)
class StartDiagnostic:
    start: tuple[float, ...]
    theta: tuple[float, ...] | None
    objective: float
    message: str


@dataclass(frozen=True)
class EstimationResult:
    """Outcome of a multistart minimization."""

    spec: ModelSpec
    theta: np.ndarray
    objective: float
    converged: bool
    grad_norm: float
    n_starts_used: int
    j_matrix: np.ndarray
    t_effective: int
    config: GcovConfig
    start_diagnostics: tuple[StartDiagnostic, ...] = ()
    omega: np.ndarray | None = None
    se: np.ndarray | None = None
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = {
            "spec": self.spec.to_dict(),
            "theta": list(map(float, self.theta)),
            "objective": self.objective,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "n_starts_used": self.n_starts_used,
            "t_effective": self.t_effective,
            "j_matrix": np.asarray(self.j_matrix).tolist(),
            "config": self.config.to_dict(),
        }
        if self.omega is not None:
            out["omega"] = np.asarray(self.omega).tolist()
        if self.se is not None:
            out["se"] = list(map(float, self.se))
        if self.warnings:
            out["warnings"] = list(self.warnings)
        return out


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def numerical_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, *, step_scale: float = 1e-5
) -> np.ndarray:
    """Central differences with per-coordinate step ``step_scale * max(1, |theta_i|)``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty(theta.size)
    for i in range(theta.size):
        h = step_scale * max(1.0, abs(theta[i]))
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        fu, fd = f(up), f(dn)
        if not (math.isfinite(fu) and math.isfinite(fd)):
            raise ValueError(f"objective non-finite near theta (coordinate {i})")
        grad[i] = (fu - fd) / (2.0 * h)
    return grad


def hessian(
    f: Callable[[np.ndarray], float], theta: np.ndarray, *, step_scale: float = 1e-4
) -> np.ndarray:
    """Symmetrized central second differences.

    The step is an order larger than the gradient step: second differences
    divide by h^2, so h = 1e-5 would leave only ~5 significant digits.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    steps = np.array([step_scale * max(1.0, abs(v)) for v in theta])
    f0 = f(theta)
    if not math.isfinite(f0):
        raise ValueError("objective non-finite at the expansion point")
    out = np.empty((n, n))

    def at(**shifts: float) -> float:
        x = theta.copy()
        for idx, delta in shifts.items():
            x[int(idx[1:])] += delta
        val = f(x)
        if not math.isfinite(val):
            raise ValueError("objective non-finite at a Hessian probe point")
        return val

    for i in range(n):
        hi = steps[i]
        out[i, i] = (at(**{f"i{i}": hi}) - 2.0 * f0 + at(**{f"i{i}": -hi})) / hi**2
        for j in range(i + 1, n):
            hj = steps[j]
            pp = at(**{f"i{i}": hi, f"i{j}": hj})
            pm = at(**{f"i{i}": hi, f"i{j}": -hj})
            mp = at(**{f"i{i}": -hi, f"i{j}": hj})
            mm = at(**{f"i{i}": -hi, f"i{j}": -hj})
            out[i, j] = out[j, i] = (pp - pm - mp + mm) / (4.0 * hi * hj)
    return 0.5 * (out + out.T)


def estimate_J(y: np.ndarray, spec: ModelSpec, cfg: GcovConfig) -> np.ndarray:
    """Finite-difference Hessian of the objective at the given parameter point."""
    y = as_values(y)

    def f(theta: np.ndarray) -> float:
        return model_objective(y, spec.with_params(theta), cfg)

    return hessian(f, spec.params)


def _safe_estimate_J(
    y: np.ndarray, spec: ModelSpec, cfg: GcovConfig
) -> tuple[np.ndarray, str | None]:
    """Hessian at the reported point, degrading to NaN when probes leave the domain.

    A fitted point can sit exactly on the edge of the residual map's domain
    (e.g. a conditional-variance path touching zero); the curvature probes then
    have no finite two-sided neighbourhood.  Estimation itself still succeeded,
    so report the fit and flag the missing curvature instead of raising.
    """
    try:
        j = estimate_J(y, spec, cfg)
    except (ValueError, FloatingPointError):
        dim = spec.params.size
        return (
            np.full((dim, dim), np.nan),
            "curvature matrix unavailable at the reported point",
        )
    if not np.all(np.isfinite(j)):
        return (
            np.full_like(j, np.nan),
            "curvature matrix unavailable at the reported point",
        )
    return j, None


# ---------------------------------------------------------------------------
# starts
# ---------------------------------------------------------------------------


def _yule_walker(y: np.ndarray, p: int) -> np.ndarray:
    """AR(p) coefficients from the Toeplitz system of sample autocorrelations."""
    rho = _acf(y, p)
    r = np.concatenate(([1.0], rho[:-1]))
    toep = np.array([[r[abs(i - j)] for j in range(p)] for i in range(p)])
    try:
        return np.linalg.solve(toep, rho)
    except np.linalg.LinAlgError:
        return np.zeros(p)


def _conjugate_closed_groups(roots: np.ndarray) -> list[list[complex]]:
    """Group roots into minimal conjugate-closed units (pairs stay together)."""
    groups: list[list[complex]] = []
    used = np.zeros(roots.size, dtype=bool)
    for i, rho in enumerate(roots):
        if used[i]:
            continue
        used[i] = True
        if abs(rho.imag) < 1e-12:
            groups.append([complex(rho.real, 0.0)])
            continue
        # find the conjugate partner
        for j in range(i + 1, roots.size):
            if not used[j] and abs(roots[j] - np.conj(rho)) < 1e-8:
                used[j] = True
                groups.append([rho, roots[j]])
                break
        else:
            groups.append([complex(rho.real, 0.0)])  # orphan: treat as real
    return groups


def _clip_into_disk(rho: complex, limit: float = 0.98) -> complex:
    mod = abs(rho)
    if mod >= 1.0:
        rho = rho / mod**2  # reciprocal, keeps the angle
        mod = abs(rho)
    if mod > limit:
        rho = rho * (limit / mod)
    return rho


def _mar_starts(y: np.ndarray, template: MarSpec, cfg: GcovConfig) -> list[np.ndarray]:
    """Structured starts from a causal AR fit of total order r+s.

    The AR fit recovers the root moduli of the underlying filter (up to
    reflection), so candidate starts enumerate (a) assignments of those roots
    to the lag/lead sides and, for one-sided templates, (b) reciprocal flips
    of root subsets — the mirror basins where the unconstrained optimum of a
    one-sided fit of two-sided data lives.
    """
    r, s = template.r, template.s
    p = r + s
    y = as_values(y)
    starts: list[np.ndarray] = []

    def push(lag_roots: Sequence[complex], lead_roots: Sequence[complex]) -> None:
        try:
            phi = poly_from_roots(lag_roots) if lag_roots else np.empty(0)
            psi = poly_from_roots(lead_roots) if lead_roots else np.empty(0)
        except ValueError:
            return
        theta = np.concatenate((phi, psi))
        if np.all(np.isfinite(theta)):
            starts.append(theta)

    if y.size > p + 2:
        c = _yule_walker(y, p)
        from .models import roots_from_poly

        base = [_clip_into_disk(rho) for rho in roots_from_poly(c)]
        groups = _conjugate_closed_groups(np.asarray(base, dtype=complex))
        for flip_mask in itertools.product((False, True), repeat=len(groups)):
            flipped = [
                [1.0 / rho for rho in grp] if flip else list(grp)
                for grp, flip in zip(groups, flip_mask)
            ]
            flat = [rho for grp in flipped for rho in grp]
            if s == 0:
                push(flat, [])
            elif r == 0:
                push([], flat)
            elif not any(flip_mask):
                # two-sided template: assign conjugate-closed groups to sides
                for assign in itertools.product((0, 1), repeat=len(groups)):
                    lag = [rho for grp, a in zip(flipped, assign) if a == 0 for rho in grp]
                    lead = [rho for grp, a in zip(flipped, assign) if a == 1 for rho in grp]
                    if len(lag) == r and len(lead) == s:
                        push(lag, lead)

    return starts


def _dar_starts(y: np.ndarray, template: DarSpec, cfg: GcovConfig) -> list[np.ndarray]:
    """Starts from an OLS AR(p) fit plus moment-anchored variance splits.

    The anchor start regresses squared mean residuals on lagged squared
    observations — the conditional-variance moment equation — which is a
    consistent (if noisy) locator of the (omega, alpha) split; coarse splits
    around it cover nearby basins.
    """
    y = as_values(y)
    p, q = template.p, template.q
    if p > 0 and y.size > p + 2:
        cols = [y[p - 1 - i : y.size - 1 - i] for i in range(p)]
        x = np.column_stack(cols)
        target = y[p:]
        phi_ols, *_ = np.linalg.lstsq(x, target, rcond=None)
        eps = target - x @ phi_ols
        eps_from = p
    else:
        phi_ols = np.zeros(p)
        eps = y.copy()
        eps_from = 0
    resid_var = max(float(np.var(eps)), 1e-6)
    starts = []
    if q > 0 and eps.size > q + 2:
        # eps[t] pairs with y[eps_from + t]; its variance regressors are
        # y^2 at lags 1..q of that index
        rows = eps.size - q
        design = np.column_stack(
            [np.ones(rows)]
            + [y[eps_from + q - j : eps_from + q - j + rows] ** 2 for j in range(1, q + 1)]
        )
        coeffs, *_ = np.linalg.lstsq(design, eps[q:] ** 2, rcond=None)
        omega0 = float(coeffs[0])
        alpha0 = np.maximum(coeffs[1:], 0.0)
        if not np.all(np.isfinite(coeffs)):
            omega0, alpha0 = resid_var, np.zeros(q)
        omega0 = min(max(omega0, 0.05 * resid_var), 2.0 * resid_var)
        starts.append(np.concatenate((phi_ols, [omega0], alpha0)))
    for omega_share, alpha_level in ((0.8, 0.2), (0.4, 0.6), (1.0, 0.02)):
        alpha0 = np.full(q, alpha_level / q) if q else np.empty(0)
        starts.append(np.concatenate((phi_ols, [omega_share * resid_var], alpha0)))
    return starts


def default_starts(
    y: np.ndarray, template: ModelSpec, cfg: GcovConfig
) -> list[np.ndarray]:
    """Structured starts for the template family, padded with box draws."""
    if isinstance(template, MarSpec):
        starts = _mar_starts(y, template, cfg)
    else:
        starts = _dar_starts(y, template, cfg)
    rng = substream_rng(cfg.start_seed)
    box = cfg.start_box or _default_box(y, template)
    while len(starts) < cfg.n_starts:
        draw = np.array([rng.uniform(lo, hi) for lo, hi in box])
        starts.append(draw)
    # dedupe near-identical starts, keeping first occurrences in order
    out: list[np.ndarray] = []
    for candidate in starts:
        if all(np.max(np.abs(candidate - kept)) > 1e-9 for kept in out):
            out.append(candidate)
    return out[: max(cfg.n_starts, 1)]


def _default_box(y: np.ndarray, template: ModelSpec) -> tuple[tuple[float, float], ...]:
    if isinstance(template, MarSpec):
        return tuple((-0.95, 0.95) for _ in range(template.dim))
    v = max(float(np.var(as_values(y))), 1e-6)
    box: list[tuple[float, float]] = [(-0.9, 0.9)] * template.p
    box.append((0.1 * v, 1.5 * v))
    box.extend([(0.0, 0.8 / max(template.q, 1))] * template.q)
    return tuple(box)


# ---------------------------------------------------------------------------
# the estimator
# ---------------------------------------------------------------------------


def _guarded(f: Callable[[np.ndarray], float]) -> Callable[[np.ndarray], float]:
    """Map residual/transform failures to +inf so the simplex can retreat."""

    def wrapped(theta: np.ndarray) -> float:
        try:
            val = f(theta)
        except (ValueError, np.linalg.LinAlgError):
            return np.inf
        return val if math.isfinite(val) else np.inf

    return wrapped


def degeneracy_floor(y: np.ndarray, template: ModelSpec, cfg: GcovConfig) -> float:
    """Objective value below which a reported minimum cannot be genuine.

    At any parameter point with serially independent residuals the scaled
    objective ``T_e * L`` behaves as chi-square with ``h*k^2 - dim`` degrees
    of freedom, so sample minima essentially never fall below that law's
    1e-9 quantile.  Values that do are the signature of a degenerate
    direction — typically heavy-tailed fitted residuals collapsing the
    covariance normalization — rather than a better fit, and the multistart
    selection discards them.
    """
    dof = cfg.h * cfg.k**2 - template.dim
    t_eff = template.n_residuals(y.size)
    if dof <= 0 or t_eff <= 0:
        return -np.inf
    return float(chi2.ppf(1e-9, dof)) / t_eff


#: largest admissible mean-to-median ratio of squared residuals in a
#: conditional-scale fit.  Unit-variance innovations with finite fourth
#: moments keep this ratio small (about 2 for t(5)); on degenerate rays a few
#: residual spikes inflate the variance by an order of magnitude, which is
#: exactly how those rays silence the normalized covariances.
TAIL_RATIO_MAX = 6.0

#: largest admissible inverse-root modulus of a fitted mixed-lag filter.
#: Because the objective only sees residual autocorrelations, rescaling the
#: residuals is free, and a factor ``(1 - c L)`` with huge ``|c|`` is a pure
#: scale-and-shift: the template silently degenerates to one order lower.
#: Simplex descent exploits that flat ray and runs the coefficient to 1e15;
#: genuine optima (including reciprocal-root images of ordinary processes)
#: keep every root modulus within a couple of orders of magnitude of one.
MAR_ROOT_MAX = 1e3


def _tail_ratio(u: np.ndarray) -> float:
    """Mean squared residual over its median — spike-inflation diagnostic."""
    u2 = u * u
    med = float(np.median(u2))
    if not math.isfinite(med) or med <= 0.0:
        return np.inf
    return float(u2.mean()) / med


def _candidate_screen(
    y: np.ndarray, template: ModelSpec, floor: float
) -> Callable[[np.ndarray, float], str | None]:
    """Build the validity check applied to each multistart minimum.

    Returns a reason string when a candidate is degenerate.  Recognized
    failure modes: a value below the chi-square floor; for mixed-lag
    templates, a filter root escaping toward infinity (the order-degeneracy
    ray, see :data:`MAR_ROOT_MAX`); and for conditional-scale templates, an
    explosive fitted mean recursion or residual spikes that inflate the
    variance far beyond the bulk.  The conditional-scale modes are the
    in-sample signatures of heavy-tailed rays where self-normalized
    covariances collapse regardless of actual serial dependence: either a
    wild autoregressive coefficient turns the residuals into near-constant
    sign terms plus rare huge ratios, or a vanishing intercept does the same
    through division by small fitted scales.
    """
    is_dar = isinstance(template, DarSpec)

    def check(theta: np.ndarray, val: float) -> str | None:
        if val < floor:
            return "below degeneracy floor"
        if not is_dar:
            spec = template.with_params(theta)
            rs = spec.root_set()
            moduli = [abs(z) for z in (*rs.lag, *rs.lead)]
            if moduli and max(moduli) > MAR_ROOT_MAX:
                return "filter root escaped toward infinity (template degenerates to a lower order)"
        if is_dar:
            spec = template.with_params(theta)
            if spec.p and np.abs(roots_from_poly(spec.phi)).max() >= 1.0:
                return "fitted mean recursion is explosive"
            try:
                u = _scale_normalized(spec).residuals(y)
            except (ValueError, FloatingPointError):
                return "residuals undefined at the minimum"
            if _tail_ratio(u) > TAIL_RATIO_MAX:
                return "residual spikes dominate the fitted scale"
        return None

    return check


def _minimize_one(
    f: Callable[[np.ndarray], float],
    start: np.ndarray,
    cfg: GcovConfig,
    *,
    floor: float = -np.inf,
) -> tuple[np.ndarray, float, str]:
    """Simplex descent then quasi-Newton polish from one start.

    ``floor`` guards the polish step: a quasi-Newton line search must not
    carry a healthy simplex minimum below the degeneracy floor.
    """
    dim = start.size
    maxiter = cfg.nm_maxiter or 400 * dim
    res = minimize(
        f,
        start,
        method="Nelder-Mead",
        options={
            "maxiter": maxiter,
            "xatol": cfg.nm_xatol,
            "fatol": cfg.nm_fatol,
            "adaptive": dim > 3,
        },
    )
    theta, best = np.asarray(res.x, dtype=float), float(res.fun)
    message = "simplex"
    if cfg.polish and math.isfinite(best):
        try:
            polished = minimize(
                f,
                theta,
                method="BFGS",
                jac=lambda th: numerical_gradient(f, th),
                options={"gtol": 1e-8, "maxiter": 200},
            )
        except ValueError:
            polished = None
        if (
            polished is not None
            and math.isfinite(polished.fun)
            and polished.fun <= best
            and (polished.fun >= floor or best < floor)
        ):
            theta, best = np.asarray(polished.x, dtype=float), float(polished.fun)
            message = "simplex+polish"
    return theta, best, message


def gcov_estimate(
    y: np.ndarray,
    template: ModelSpec,
    cfg: GcovConfig,
    starts: Sequence[np.ndarray] | None = None,
) -> EstimationResult:
    """Multistart minimization of the objective over the template's parameters.

    ``starts`` overrides the default start builder.  The best local minimizer
    across starts is polished and returned with its finite-difference Hessian;
    ``converged`` reports whether the final gradient norm is below
    ``grad_tol * (1 + objective)``.  Deterministic given (data, config, starts).
    """
    y = as_values(y)
    start_list = [np.asarray(s, dtype=float) for s in (starts or default_starts(y, template, cfg))]
    if not start_list:
        raise ValueError("need at least one start vector")
    for s in start_list:
        if s.shape != (template.dim,):
            raise ValueError(f"start vector shape {s.shape} does not match dim {template.dim}")

    f = _guarded(lambda th: model_objective(y, template.with_params(th), cfg))
    floor = degeneracy_floor(y, template, cfg)
    screen = _candidate_screen(y, template, floor)

    best_theta: np.ndarray | None = None
    best_obj = np.inf
    any_theta: np.ndarray | None = None
    any_obj = np.inf
    diags: list[StartDiagnostic] = []
    for start in start_list:
        if not math.isfinite(f(start)):
            diags.append(
                StartDiagnostic(tuple(start), None, np.inf, "objective non-finite at start")
            )
            continue
        theta, val, msg = _minimize_one(f, start, cfg, floor=floor)
        reason = screen(theta, val)
        if reason:
            msg += f"; {reason}"
        diags.append(StartDiagnostic(tuple(start), tuple(theta), val, msg))
        if reason is None and val < best_obj:
            best_theta, best_obj = theta, val
        if val < any_obj:
            any_theta, any_obj = theta, val

    warnings: list[str] = []
    if best_theta is None and any_theta is not None:
        # every minimum failed the validity screen — report the best anyway
        # but flag that it likely sits on a degenerate ray
        best_theta, best_obj = any_theta, any_obj
        warnings.append("every candidate minimum failed the degeneracy screen")
    if best_theta is None:
        raise ValueError(
            f"all {len(start_list)} starts failed (objective non-finite everywhere probed)"
        )
    fitted = template.with_params(best_theta)
    if isinstance(fitted, DarSpec):
        # resolve the scale indeterminacy of the variance parameters: report
        # the ray representative whose fitted residuals have unit variance
        fitted, best_theta = _unit_variance_rescale(y, fitted)

    grad_norm, grad_warn = _diagnostic_grad_norm(f, best_theta, cfg.grad_tol)
    if grad_warn:
        warnings.append(grad_warn)
    converged = grad_norm < cfg.grad_tol * (1.0 + abs(best_obj))
    j_mat, j_warn = _safe_estimate_J(y, fitted, cfg)
    if j_warn:
        warnings.append(j_warn)
    t_eff = fitted.n_residuals(y.size)
    return EstimationResult(
        spec=fitted,
        theta=best_theta,
        objective=best_obj,
        converged=converged,
        grad_norm=grad_norm,
        n_starts_used=len(start_list),
        j_matrix=j_mat,
        t_effective=t_eff,
        config=cfg,
        start_diagnostics=tuple(diags),
        warnings=tuple(warnings),
    )


def _unit_variance_rescale(y: np.ndarray, spec: DarSpec) -> tuple[DarSpec, np.ndarray]:
    """Pick the scale-ray representative with unit residual sample variance."""
    base = _scale_normalized(spec)
    resid = base.residuals(y)
    v = float(np.var(resid))
    if not np.isfinite(v) or v <= 0.0:
        raise ValueError("fitted residuals have no usable variance to set the scale")
    theta = np.concatenate(
        (base.phi, v * np.concatenate(([base.omega], np.asarray(base.alpha, dtype=float))))
    )
    return base.with_params(theta), theta


def _diagnostic_grad_norm(
    f: Callable[[np.ndarray], float], theta: np.ndarray, step_scale: float
) -> tuple[float, str | None]:
    """Gradient norm at the reported point, degrading gracefully on a boundary.

    Central differences where both probes are finite, one-sided otherwise;
    coordinates with no finite probe force a not-converged verdict.
    """
    theta = np.asarray(theta, dtype=float)
    f0 = f(theta)
    grad = np.empty(theta.size)
    boundary = False
    for i in range(theta.size):
        h = step_scale * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        fu, fd = f(up), f(dn)
        if math.isfinite(fu) and math.isfinite(fd):
            grad[i] = (fu - fd) / (2.0 * h)
        elif math.isfinite(fu) and math.isfinite(f0):
            grad[i] = (fu - f0) / h
            boundary = True
        elif math.isfinite(fd) and math.isfinite(f0):
            grad[i] = (f0 - fd) / h
            boundary = True
        else:
            return np.inf, "gradient diagnostic unavailable around the reported point"
    warn = "gradient checked one-sided at a parameter-space boundary" if boundary else None
    return float(np.linalg.norm(grad)), warn


# ---------------------------------------------------------------------------
# information blocks and sandwich variances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IBlocks:
    """Second-moment blocks of the two models' objective gradients."""

    i11: np.ndarray
    i12: np.ndarray
    i22: np.ndarray
    i22_star: np.ndarray
    r_used: int
    dropped: int
    mode: str

    @property
    def i21(self) -> np.ndarray:
        return self.i12.T


def estimate_I_blocks(
    y: np.ndarray,
    fit1: EstimationResult,
    fit2: EstimationResult,
    *,
    r_reps: int,
    seed: int,
    mode: str = "resample",
    dist=None,
    burn: int | None = None,
) -> IBlocks:
    """Simulate under the first fitted model and accumulate gradient moments.

    Each replication regenerates a series from ``fit1.spec`` (resampling its
    fitted residuals, or drawing from ``dist`` in parametric mode), then
    evaluates the numerical gradients of both objectives at the *fixed* fitted
    parameter points.  Blocks are means over replications of T * g g', where
    T is the regenerated series length; ``i22_star`` centers the second
    model's gradients at their replication mean before the outer product.
    """
    if r_reps < 50:
        raise ValueError(f"need at least 50 replications for stable blocks, got {r_reps}")
    if mode not in {"resample", "parametric"}:
        raise ValueError(f"unknown mode {mode!r} (expected resample or parametric)")
    if mode == "parametric" and dist is None:
        raise ValueError("parametric mode needs an error distribution")
    y = as_values(y)
    t = y.size
    spec1, cfg1 = fit1.spec, fit1.config
    spec2, cfg2 = fit2.spec, fit2.config
    pool = spec1.residuals(y) if mode == "resample" else None

    if burn is None:
        burn = 200 if isinstance(spec1, MarSpec) else 500
    grid = t + 2 * burn if isinstance(spec1, MarSpec) else t + burn

    g1s: list[np.ndarray] = []
    g2s: list[np.ndarray] = []
    dropped = 0
    for rep in range(r_reps):
        rng = substream_rng(seed, rep)
        try:
            if mode == "resample":
                errors = pool[rng.integers(0, pool.size, size=grid)]
                path = spec1.simulate(dist=None, t=t, burn=burn, errors=errors)  # type: ignore[arg-type]
            else:
                path = spec1.simulate(dist, t, burn=burn, rng=rng)
            ys = path.y
            g1 = numerical_gradient(
                lambda th: model_objective(ys, spec1.with_params(th), cfg1), spec1.params
            )
            g2 = numerical_gradient(
                lambda th: model_objective(ys, spec2.with_params(th), cfg2), spec2.params
            )
        except (ValueError, np.linalg.LinAlgError):
            dropped += 1
            continue
        g1s.append(g1)
        g2s.append(g2)

    if dropped > 0.1 * r_reps:
        raise ValueError(f"{dropped}/{r_reps} replications failed (more than 10%)")
    a1 = np.asarray(g1s)
    a2 = np.asarray(g2s)
    n = a1.shape[0]
    i11 = t * (a1.T @ a1) / n
    i12 = t * (a1.T @ a2) / n
    i22 = t * (a2.T @ a2) / n
    c2 = a2 - a2.mean(axis=0)
    i22_star = t * (c2.T @ c2) / n
    sym = lambda m: 0.5 * (m + m.T)
    return IBlocks(
        i11=sym(i11),
        i12=i12,
        i22=sym(i22),
        i22_star=sym(i22_star),
        r_used=n,
        dropped=dropped,
        mode=mode,
    )


@dataclass(frozen=True)
class OmegaVariants:
    """Sandwich variances for the second model's estimator."""

    omega_22: np.ndarray
    omega_a: np.ndarray
    omega_f: np.ndarray


def pinv_cut(m: np.ndarray, *, cutoff: float = SV_CUTOFF) -> tuple[np.ndarray, int]:
    """Generalized inverse with relative singular-value cutoff; returns (pinv, rank)."""
    m = np.asarray(m, dtype=float)
    u, s, vt = np.linalg.svd(0.5 * (m + m.T))
    keep = s > cutoff * (s[0] if s.size and s[0] > 0 else 1.0)
    rank = int(keep.sum())
    inv = (vt[keep].T / s[keep]) @ u[:, keep].T
    return inv, rank


def omega_variants(j22: np.ndarray, iblocks: IBlocks) -> OmegaVariants:
    """Assemble the three sandwich variances from J and I blocks."""
    j22 = np.asarray(j22, dtype=float)
    if np.linalg.cond(j22) > 1e12:
        raise ValueError("second-model Hessian J22 is singular (condition number > 1e12)")
    if np.linalg.cond(iblocks.i11) > 1e12:
        raise ValueError("first-model block I11 is singular (condition number > 1e12)")
    j_inv = np.linalg.inv(j22)
    i11_inv = np.linalg.inv(iblocks.i11)
    middle_a = iblocks.i22 - iblocks.i21 @ i11_inv @ iblocks.i12
    middle_f = iblocks.i22_star - iblocks.i21 @ i11_inv @ iblocks.i12
    sym = lambda m: 0.5 * (m + m.T)
    return OmegaVariants(
        omega_22=sym(j_inv @ iblocks.i22 @ j_inv),
        omega_a=sym(j_inv @ middle_a @ j_inv),
        omega_f=sym(j_inv @ middle_f @ j_inv),
    )


def standard_errors(omega: np.ndarray, t: int) -> np.ndarray:
    """Per-coordinate standard errors from an Omega matrix: sqrt(diag(Omega)/T)."""
    d = np.clip(np.diag(np.asarray(omega, dtype=float)), 0.0, None)
    return np.sqrt(d / t)
