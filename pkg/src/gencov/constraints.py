"""Inequality constraints and the constrained estimator.

Root-location restrictions on autoregressive polynomials are turned into
smooth sign conditions on determinants built from the coefficients (the Jury
stability table), so "all inverse roots outside the unit circle" becomes a
finite list of polynomial inequalities the optimizer can penalize.  The
constrained estimator minimizes the usual objective plus an exterior quadratic
penalty over an increasing ladder of penalty weights, clamps coordinate
bounds that finish within tolerance of activity, and reports the active set
with Kuhn-Tucker multipliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .gcov import (
    EstimationResult,
    GcovConfig,
    StartDiagnostic,
    _diagnostic_grad_norm,
    _guarded,
    _safe_estimate_J,
    _candidate_screen,
    degeneracy_floor,
    _minimize_one,
    _unit_variance_rescale,
    default_starts,
    model_objective,
    numerical_gradient,
)
from .models import DarSpec, MarSpec, ModelSpec
from .timeseries import as_values

__all__ = [
    "Constraint",
    "ConstraintSet",
    "jury_constraints",
    "mar_constraints",
    "dar_constraints",
    "constraints_from_name",
    "CGcovResult",
    "cgcov_estimate",
    "kt_multipliers",
    "kt_multipliers_from_grad",
    "dar_stationarity_diagnostic",
    "PENALTY_LADDER",
    "OMEGA_FLOOR",
]

PENALTY_LADDER = (1e2, 1e4, 1e6, 1e8)
#: strict positivity of the variance intercept is enforced through this floor
OMEGA_FLOOR = 1e-8
#: |constraint value| below this counts as active (on the boundary)
ACTIVE_TOL = 1e-6
#: returned points must satisfy every constraint to within this slack
FEASIBLE_TOL = 1e-8


# ---------------------------------------------------------------------------
# constraint containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    """One inequality: the parameter point is admissible iff ``fun(theta) >= 0``.

    ``strict`` marks inequalities that are open in the underlying model (the
    boundary itself is not admissible); starts are then required to sit
    strictly inside.  ``coord`` is set for plain coordinate bounds
    ``theta[coord] >= bound`` so that the constrained optimizer can clamp the
    coordinate exactly onto the bound when it finishes within tolerance.
    """

    fun: Callable[[np.ndarray], float]
    label: str
    strict: bool = False
    coord: int | None = None
    bound: float = 0.0

    def __call__(self, theta: np.ndarray) -> float:
        return float(self.fun(np.asarray(theta, dtype=float)))


@dataclass(frozen=True)
class ConstraintSet:
    """Conjunction of inequality constraints over one parameter vector."""

    items: tuple[Constraint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Constraint]:
        return iter(self.items)

    def labels(self) -> list[str]:
        return [c.label for c in self.items]

    def values(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.array([c(theta) for c in self.items])

    def violations(self, theta: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, -self.values(theta))

    def is_feasible(self, theta: np.ndarray, *, tol: float = FEASIBLE_TOL) -> bool:
        return bool(self.values(theta).min(initial=np.inf) > -tol)

    def is_strictly_feasible(self, theta: np.ndarray, *, margin: float = FEASIBLE_TOL) -> bool:
        """Feasible with strict inequalities clearing ``margin``."""
        vals = self.values(theta)
        for v, c in zip(vals, self.items):
            if v < (margin if c.strict else 0.0):
                return False
        return True

    def merged(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet(items=self.items + other.items)


# ---------------------------------------------------------------------------
# root-location constraint generation (Jury stability table)
# ---------------------------------------------------------------------------


def _poly_slice(theta: np.ndarray, offset: int, order: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.size < offset + order:
        raise ValueError(
            f"parameter vector of length {theta.size} too short for "
            f"coefficients at positions {offset}..{offset + order - 1}"
        )
    return theta[offset : offset + order]


def _coeffs_for_side(c: np.ndarray, side: str) -> np.ndarray:
    """Ascending-power coefficients of a polynomial whose roots must be inside.

    ``outside``: reflect 1 - c1 z - ... - cr z^r, whose roots are the
    reciprocals, giving a monic a with a_i = -c_{r-i}.  ``inside``: test the
    polynomial itself, multiplied by -c_r so the leading coefficient c_r^2 is
    positive (the sign conditions are invariant to positive rescaling); when
    c_r = 0 the polynomial drops degree, a root escapes to infinity, and the
    zero vector below fails every sign condition, as it should.
    """
    c = np.asarray(c, dtype=float)
    r = c.size
    a = np.empty(r + 1)
    if side == "outside":
        a[r] = 1.0
        a[:r] = -c[::-1]
    else:
        lead = -c[r - 1]
        a[0] = lead
        a[1:] = lead * (-c)
    return a


def _f_at(a: np.ndarray, z: float) -> float:
    return float(np.polynomial.polynomial.polyval(z, a))


def _inner_matrices(a: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The k x k coefficient matrices whose determinant sums gate stability."""
    r = a.size - 1
    x = np.zeros((k, k))
    y = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            x[i, j] = a[j - i]
        for j in range(k):
            idx = r - k + 1 + i + j
            if idx <= r:
                y[i, j] = a[idx]
    return x, y


def _det_condition(a: np.ndarray, k: int, plus: bool, flip: bool) -> float:
    s = -1.0 if (k * (k + 1) // 2) % 2 else 1.0
    if flip:
        s = -s
    x, y = _inner_matrices(a, k)
    m = x + y if plus else x - y
    return s * float(np.linalg.det(m))


def jury_constraints(order: int, side: str = "outside", *, offset: int = 0, prefix: str = "") -> ConstraintSet:
    """Sign conditions equivalent to a strict root-location requirement.

    The conditions apply to the roots of ``1 - c1 z - ... - c_order z^order``
    read from ``theta[offset : offset + order]``.  ``side="outside"`` requires
    every root strictly outside the unit circle (the stationarity form),
    ``side="inside"`` strictly inside.  Verified exhaustively against direct
    root computation (see the test suite); strictness is handled by the
    optimizer's feasibility margin, not here.
    """
    if order < 1:
        raise ValueError(f"polynomial order must be at least 1, got {order}")
    if side not in {"outside", "inside"}:
        raise ValueError(f"side must be 'outside' or 'inside', got {side!r}")

    def make(fun: Callable[[np.ndarray], float], label: str) -> Constraint:
        return Constraint(fun=fun, label=prefix + label, strict=True)

    def coeffs(theta: np.ndarray) -> np.ndarray:
        return _coeffs_for_side(_poly_slice(theta, offset, order), side)

    items = [make(lambda th: _f_at(coeffs(th), 1.0), "F(1) > 0")]
    if order % 2 == 1:
        items.append(make(lambda th: -_f_at(coeffs(th), -1.0), "-F(-1) > 0"))
        det_ks = range(2, order, 2)
        flips = {True: False, False: False}  # both determinant sums positive
    else:
        items.append(make(lambda th: _f_at(coeffs(th), -1.0), "F(-1) > 0"))
        det_ks = range(1, order, 2)
        flips = {True: True, False: False}  # the plus-sum flips orientation
    for k in det_ks:
        for plus in (False, True):
            sign_txt = "+" if plus else "-"
            items.append(
                make(
                    lambda th, k=k, plus=plus: _det_condition(coeffs(th), k, plus, flips[plus]),
                    f"det{k}{sign_txt} sign",
                )
            )
    return ConstraintSet(items=tuple(items))


def mar_constraints(r: int, s: int) -> ConstraintSet:
    """Stationarity of the lag polynomial and admissibility of the lead one.

    Both coefficient blocks are written in their own (forward/backward)
    variable, so each must have inverse roots inside the unit circle, i.e.
    polynomial roots outside.
    """
    if r < 0 or s < 0 or r + s < 1:
        raise ValueError(f"need non-negative orders with r + s >= 1, got r={r}, s={s}")
    parts: list[ConstraintSet] = []
    if r:
        parts.append(jury_constraints(r, "outside", offset=0, prefix="phi: "))
    if s:
        parts.append(jury_constraints(s, "outside", offset=r, prefix="psi: "))
    out = parts[0]
    for p in parts[1:]:
        out = out.merged(p)
    return out


def dar_constraints(p: int, q: int) -> ConstraintSet:
    """Positivity of the variance intercept and non-negativity of its slopes."""
    if p < 0 or q < 0 or p + q < 1:
        raise ValueError(f"need non-negative orders with p + q >= 1, got p={p}, q={q}")
    items = [
        Constraint(
            fun=lambda th, i=p: th[i] - OMEGA_FLOOR,
            label=f"omega >= {OMEGA_FLOOR}",
            strict=True,
            coord=p,
            bound=OMEGA_FLOOR,
        )
    ]
    for j in range(q):
        items.append(
            Constraint(
                fun=lambda th, i=p + 1 + j: th[i],
                label=f"alpha[{j}] >= 0",
                strict=False,
                coord=p + 1 + j,
                bound=0.0,
            )
        )
    return ConstraintSet(items=tuple(items))


def constraints_from_name(name: str) -> ConstraintSet:
    """Parse constraint-set names like ``mar:r=1:s=1`` or ``jury:r=3:outside``."""
    parts = name.split(":")
    kind = parts[0]
    kv: dict[str, str] = {}
    flags: list[str] = []
    for p in parts[1:]:
        if "=" in p:
            key, _, val = p.partition("=")
            kv[key] = val
        else:
            flags.append(p)

    def geti(key: str) -> int:
        if key not in kv:
            raise ValueError(f"constraint name {name!r} is missing {key}=<int>")
        try:
            return int(kv[key])
        except ValueError:
            raise ValueError(f"constraint name {name!r} has non-integer {key}={kv[key]!r}") from None

    if kind == "mar":
        return mar_constraints(geti("r"), geti("s"))
    if kind == "dar":
        return dar_constraints(geti("p"), geti("q"))
    if kind == "jury":
        side = flags[0] if flags else "outside"
        return jury_constraints(geti("r"), side)
    raise ValueError(f"unknown constraint set {name!r} (expected mar, dar or jury)")


def constraints_for(spec: ModelSpec) -> ConstraintSet:
    """The canonical constraint set for a model template."""
    if isinstance(spec, MarSpec):
        return mar_constraints(spec.r, spec.s)
    if isinstance(spec, DarSpec):
        return dar_constraints(spec.p, spec.q)
    raise ValueError(f"no canonical constraints for {type(spec).__name__}")


# ---------------------------------------------------------------------------
# constrained estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CGcovResult(EstimationResult):
    """Constrained-estimation outcome with boundary bookkeeping."""

    active_set: tuple[int, ...] = ()
    kt_vector: np.ndarray | None = None
    boundary_flag: bool = False
    constraint_values: np.ndarray | None = None
    constraint_labels: tuple[str, ...] = ()
    penalty_trail: tuple[tuple[float, float, float], ...] = ()

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["active_set"] = list(self.active_set)
        out["boundary_flag"] = self.boundary_flag
        if self.kt_vector is not None:
            out["kt_multipliers"] = list(map(float, self.kt_vector))
        if self.constraint_values is not None:
            out["constraints"] = {
                label: float(v)
                for label, v in zip(self.constraint_labels, self.constraint_values)
            }
        out["penalty_trail"] = [
            {"mu": mu, "objective": obj, "max_violation": viol}
            for mu, obj, viol in self.penalty_trail
        ]
        return out


def _default_interior(template: ModelSpec) -> np.ndarray:
    if isinstance(template, DarSpec):
        return np.concatenate((np.zeros(template.p), [1.0], np.zeros(template.q)))
    return np.zeros(template.dim)


def _repair_start(
    start: np.ndarray, interior: np.ndarray, cs: ConstraintSet
) -> np.ndarray | None:
    """Shrink an infeasible start toward the interior point until admissible."""
    if cs.is_strictly_feasible(start):
        return start
    for lam in np.linspace(0.9, 0.0, 19):
        x = interior + lam * (start - interior)
        if cs.is_strictly_feasible(x):
            return x
    return None


def cgcov_estimate(
    y: np.ndarray,
    template: ModelSpec,
    cfg: GcovConfig,
    cs: ConstraintSet,
    *,
    init: Sequence[float] | None = None,
    starts: Sequence[np.ndarray] | None = None,
) -> CGcovResult:
    """Minimize the objective subject to inequality constraints.

    Exterior quadratic penalties over the ladder ``PENALTY_LADDER``: the first
    rung runs the full multistart, later rungs re-polish the incumbent.
    Coordinate bounds finishing within ``ACTIVE_TOL`` of activity are clamped
    exactly onto the bound and the remaining coordinates re-polished.  Raises
    when no feasible start can be built or the final point still violates a
    constraint by more than 1e-6.
    """
    y = as_values(y)
    if len(cs) == 0:
        raise ValueError("constrained estimation needs a nonempty constraint set")
    interior = (
        np.asarray(init, dtype=float) if init is not None else _default_interior(template)
    )
    if interior.shape != (template.dim,):
        raise ValueError(
            f"interior point shape {interior.shape} does not match template dim {template.dim}"
        )
    if not cs.is_strictly_feasible(interior):
        raise ValueError("interior point must satisfy every constraint strictly")

    raw_starts = [
        np.asarray(s, dtype=float) for s in (starts or default_starts(y, template, cfg))
    ]
    for s in raw_starts:
        if s.shape != (template.dim,):
            raise ValueError(f"start vector shape {s.shape} does not match dim {template.dim}")
    repaired: list[np.ndarray] = []
    for s in raw_starts:
        fixed = _repair_start(s, interior, cs)
        if fixed is not None and not any(
            np.allclose(fixed, prev, atol=1e-10) for prev in repaired
        ):
            repaired.append(fixed)
    if not repaired:
        raise ValueError("no feasible point found among the starts or the interior point")

    f_raw = _guarded(lambda th: model_objective(y, template.with_params(th), cfg))
    floor = degeneracy_floor(y, template, cfg)
    screen = _candidate_screen(y, template, floor)

    def penalized(mu: float) -> Callable[[np.ndarray], float]:
        def f(theta: np.ndarray) -> float:
            base = f_raw(theta)
            if not math.isfinite(base):
                return np.inf
            v = cs.violations(theta)
            return base + mu * float(v @ v)

        return f

    diags: list[StartDiagnostic] = []
    trail: list[tuple[float, float, float]] = []
    best_theta: np.ndarray | None = None
    degenerate_only = False
    for rung, mu in enumerate(PENALTY_LADDER):
        f_pen = penalized(mu)
        if rung == 0:
            best_val = np.inf
            any_theta: np.ndarray | None = None
            any_val = np.inf
            for start in repaired:
                if not math.isfinite(f_pen(start)):
                    diags.append(
                        StartDiagnostic(
                            tuple(start), None, np.inf, "objective non-finite at start"
                        )
                    )
                    continue
                theta, val, msg = _minimize_one(f_pen, start, cfg, floor=floor)
                reason = screen(theta, val)
                if reason:
                    msg += f"; {reason}"
                diags.append(StartDiagnostic(tuple(start), tuple(theta), val, msg))
                if reason is None and val < best_val:
                    best_theta, best_val = theta, val
                if val < any_val:
                    any_theta, any_val = theta, val
            if best_theta is None and any_theta is not None:
                best_theta, best_val = any_theta, any_val
                degenerate_only = True
            if best_theta is None:
                raise ValueError("all feasible starts failed on the first penalty rung")
        else:
            theta, val, _ = _minimize_one(f_pen, best_theta, cfg, floor=floor)
            if math.isfinite(val) and (screen(theta, val) is None or degenerate_only):
                best_theta = theta
        trail.append(
            (mu, f_raw(best_theta), float(cs.violations(best_theta).max(initial=0.0)))
        )

    assert best_theta is not None
    worst = float(cs.values(best_theta).min(initial=np.inf))
    if worst < -1e-6:
        raise ValueError(
            f"penalty ladder exhausted with constraint violation {-worst:.3e} > 1e-6"
        )

    # clamp coordinate bounds that finished on (or microscopically around) the
    # bound, then re-polish the free coordinates with the clamp held fixed
    clamped = [
        c.coord
        for c in cs.items
        if c.coord is not None and abs(best_theta[c.coord] - c.bound) <= ACTIVE_TOL
    ]
    if clamped:
        for c in cs.items:
            if c.coord in clamped:
                best_theta[c.coord] = c.bound
        free = [i for i in range(template.dim) if i not in clamped]
        if free:
            f_pen = penalized(PENALTY_LADDER[-1])

            def f_sub(sub: np.ndarray) -> float:
                full = best_theta.copy()
                full[free] = sub
                return f_pen(full)

            sub_theta, sub_val, _ = _minimize_one(f_sub, best_theta[free], cfg, floor=floor)
            if math.isfinite(sub_val) and sub_val <= f_pen(best_theta) + 1e-12:
                candidate = best_theta.copy()
                candidate[free] = sub_theta
                if cs.values(candidate).min(initial=np.inf) >= -1e-6 and (
                    screen(candidate, sub_val) is None or degenerate_only
                ):
                    best_theta = candidate

    warnings: list[str] = []
    if degenerate_only:
        warnings.append("every candidate minimum failed the degeneracy screen")
    fitted = template.with_params(best_theta)
    if isinstance(fitted, DarSpec):
        fitted, best_theta = _unit_variance_rescale(y, fitted)

    values = cs.values(best_theta)
    active = tuple(i for i, v in enumerate(values) if abs(v) <= ACTIVE_TOL)
    boundary = bool(active)
    objective = f_raw(best_theta)
    grad_norm, grad_warn = _diagnostic_grad_norm(f_raw, best_theta, cfg.grad_tol)
    if grad_warn:
        warnings.append(grad_warn)
    feasible = bool(values.min(initial=np.inf) >= -FEASIBLE_TOL)
    if not feasible:
        warnings.append("constraint slack between -1e-6 and -1e-8 at the reported point")
    converged = feasible and (boundary or grad_norm < 1e-4)

    kt: np.ndarray | None = None
    if boundary:
        try:
            kt = kt_multipliers_from_grad(
                best_theta,
                cs,
                numerical_gradient(f_raw, np.asarray(best_theta, dtype=float)),
                active=active,
            )
        except ValueError as exc:
            warnings.append(f"multiplier recovery failed: {exc}")

    j_mat, j_warn = _safe_estimate_J(y, fitted, cfg)
    if j_warn:
        warnings.append(j_warn)
    t_eff = fitted.n_residuals(y.size)
    return CGcovResult(
        spec=fitted,
        theta=np.asarray(best_theta, dtype=float),
        objective=objective,
        converged=converged,
        grad_norm=grad_norm,
        n_starts_used=len(repaired),
        j_matrix=j_mat,
        t_effective=t_eff,
        config=cfg,
        start_diagnostics=tuple(diags),
        warnings=tuple(warnings),
        active_set=active,
        kt_vector=kt,
        boundary_flag=boundary,
        constraint_values=values,
        constraint_labels=tuple(cs.labels()),
        penalty_trail=tuple(trail),
    )


# ---------------------------------------------------------------------------
# Kuhn-Tucker multipliers
# ---------------------------------------------------------------------------


def kt_multipliers_from_grad(
    theta: np.ndarray,
    cs: ConstraintSet,
    grad: np.ndarray,
    *,
    active: Sequence[int] | None = None,
) -> np.ndarray:
    """Least-squares multipliers of the active constraints at a solution.

    Solves ``grad = D' gamma`` for the active-constraint Jacobian ``D`` (one
    row per active constraint), i.e. ``gamma = (D D')^-1 D grad``; positive
    entries mean the constraint pushes against the objective's descent, as a
    constrained minimum requires.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if active is None:
        vals = cs.values(theta)
        active = tuple(i for i, v in enumerate(vals) if abs(v) <= ACTIVE_TOL)
    if not active:
        raise ValueError("no active constraints at the reported point")
    rows = [numerical_gradient(cs.items[i], theta) for i in active]
    d = np.vstack(rows)
    rank = np.linalg.matrix_rank(d, tol=1e-8 * max(1.0, float(np.abs(d).max())))
    if rank < d.shape[0]:
        raise ValueError(
            f"active-constraint Jacobian is rank-deficient (rank {rank} of {d.shape[0]})"
        )
    return np.linalg.solve(d @ d.T, d @ grad)


def kt_multipliers(
    result: CGcovResult, cs: ConstraintSet, y: np.ndarray, cfg: GcovConfig
) -> np.ndarray:
    """Multipliers of the active constraints for a fitted constrained model."""
    if not result.active_set:
        raise ValueError("no active constraints at the reported point")
    y = as_values(y)
    template = result.spec
    f_raw = _guarded(lambda th: model_objective(y, template.with_params(th), cfg))
    grad = numerical_gradient(f_raw, np.asarray(result.theta, dtype=float))
    return kt_multipliers_from_grad(result.theta, cs, grad, active=result.active_set)


# ---------------------------------------------------------------------------
# stationarity diagnostic for level-driven volatility
# ---------------------------------------------------------------------------


def dar_stationarity_diagnostic(
    y: np.ndarray,
    spec: DarSpec,
    *,
    draws: int = 100_000,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Monte Carlo estimate of the top growth exponent E log|phi + eta sqrt(alpha)|.

    Negative values indicate a strictly stationary solution of the first-order
    recursion.  The error law is unknown, so innovations are resampled from
    the fitted residuals; this is a diagnostic, not an estimation constraint.
    """
    if not isinstance(spec, DarSpec) or spec.p != 1 or spec.q != 1:
        raise ValueError("stationarity diagnostic is defined for first-order models (p=q=1)")
    if rng is None:
        if seed is None:
            raise ValueError("resampling needs an explicit seed or generator")
        rng = np.random.default_rng(seed)
    resid = spec.residuals(as_values(y))
    eta = resid[rng.integers(0, resid.size, size=int(draws))]
    inner = np.abs(spec.phi[0] + eta * math.sqrt(max(spec.alpha[0], 0.0)))
    return float(np.mean(np.log(np.maximum(inner, 1e-300))))
