"""Model specifications, residual maps, simulators and root algebra.

Two parametric families are supported:

* mixed-lag autoregressions ``Phi(L) Psi(L^-1) y_t = eps_t`` with ``r`` lag
  and ``s`` lead coefficients (:class:`MarSpec`); and
* conditionally heteroskedastic autoregressions
  ``y_t = sum phi_i y_{t-i} + eta_t sqrt(omega + sum alpha_j y_{t-j}^2)``
  (:class:`DarSpec`).

Both residual maps are exact inverses of the corresponding simulators on the
retained window, which the test suite checks to machine precision.

The mixed-lag family is parameterized equivalently by coefficients or by the
multiset of *inverse roots* of the two polynomials; a spec is *feasible* when
every inverse root lies strictly inside the unit circle.  Filters whose root
multiset can be regrouped into a feasible configuration describe the same
strictly stationary process up to an exact scale/time-shift of the errors
(:func:`canonical_mar_form`), which is what makes infeasible parameter points
simulable and comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "ErrorDist",
    "MarSpec",
    "DarSpec",
    "ModelSpec",
    "RootSet",
    "CanonicalForm",
    "SimulatedPath",
    "substream_rng",
    "draw_errors",
    "resample_path",
    "poly_from_roots",
    "roots_from_poly",
    "mar_root_set",
    "canonical_mar_form",
    "spec_from_dict",
    "dist_from_dict",
]

#: inverse roots this close to the unit circle are treated as degenerate
UNIT_CIRCLE_TOL = 1e-8


def substream_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for (seed, replication-id, ...) substreams.

    Distinct ``path`` tuples under the same seed give statistically
    independent streams; the same tuple always reproduces the same stream.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(path)))


# ---------------------------------------------------------------------------
# error distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorDist:
    """IID error distribution: gaussian, student_t(df) or cauchy (= student_t(1))."""

    family: str
    df: float | None = None
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in {"gaussian", "student_t", "cauchy"}:
            raise ValueError(
                f"unknown error family {self.family!r} "
                "(expected gaussian, student_t or cauchy)"
            )
        if self.family == "student_t":
            if self.df is None or self.df <= 0:
                raise ValueError("student_t errors need df > 0")
        elif self.df is not None:
            raise ValueError(f"df is only meaningful for student_t errors, not {self.family}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "gaussian":
            return self.scale * rng.standard_normal(size)
        # cauchy shares the student_t code path with one degree of freedom
        df = 1.0 if self.family == "cauchy" else float(self.df)  # type: ignore[arg-type]
        x = rng.standard_t(df, size)
        if df > 2.0:
            # unit-variance normalization so conditional-scale parameters keep
            # their nominal meaning in simulated volatility models
            x *= math.sqrt((df - 2.0) / df)
        return self.scale * x

    def to_dict(self) -> dict:
        out: dict = {"family": self.family, "scale": self.scale}
        if self.df is not None:
            out["df"] = self.df
        return out


def dist_from_dict(d: dict) -> ErrorDist:
    """Build an :class:`ErrorDist` from a JSON-style dict."""
    if "family" not in d:
        raise ValueError("error distribution dict needs a 'family' key")
    known = {"family", "df", "scale"}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown error distribution keys: {sorted(extra)}")
    return ErrorDist(family=d["family"], df=d.get("df"), scale=d.get("scale", 1.0))


def draw_errors(
    dist: ErrorDist,
    n: int,
    *,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw ``n`` iid errors, deterministically per (seed, stream)."""
    if n < 1:
        raise ValueError(f"need at least one draw, got n={n}")
    return dist.draw(_resolve_rng(rng, seed), n)


# ---------------------------------------------------------------------------
# root algebra
# ---------------------------------------------------------------------------


def _as_coeff_array(c: Sequence[float] | np.ndarray, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(c, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{what} must be a flat coefficient vector, got shape {arr.shape}")
    return arr


def poly_from_roots(inverse_roots: Iterable[complex], *, tol: float = 1e-8) -> np.ndarray:
    """Coefficients ``c`` of ``1 - c_1 z - ... - c_k z^k`` with the given inverse roots.

    The inverse roots must be closed under complex conjugation (otherwise the
    coefficients would not be real).
    """
    roots = np.asarray(list(inverse_roots), dtype=complex)
    if roots.size == 0:
        return np.empty(0)
    # np.poly gives the monic expansion of prod(z - rho_j); read ascending it
    # is exactly prod(1 - rho_j z), so c_m = -coefficient of z^m.
    monic = np.poly(roots)
    scale = 1.0 + np.abs(monic.real).max()
    if np.abs(monic.imag).max() > tol * scale:
        raise ValueError("inverse roots are not closed under complex conjugation")
    return -monic.real[1:]


def roots_from_poly(c: Sequence[float] | np.ndarray) -> np.ndarray:
    """Inverse roots of ``1 - c_1 z - ... - c_k z^k`` (complex, sorted deterministically)."""
    arr = _as_coeff_array(c, "coefficients")
    if arr.size == 0:
        return np.empty(0, dtype=complex)
    # The inverse roots are the eigenvalues of the companion form of
    # z^k - c_1 z^{k-1} - ... - c_k (the reciprocal polynomial), including
    # zeros when trailing coefficients vanish.
    monic = np.concatenate(([1.0], -arr))
    return np.sort_complex(np.roots(monic))


@dataclass(frozen=True)
class RootSet:
    """Inverse roots of a mixed-lag filter, split by side."""

    lag: tuple[complex, ...]
    lead: tuple[complex, ...]

    def moduli(self) -> tuple[np.ndarray, np.ndarray]:
        return np.abs(np.asarray(self.lag)), np.abs(np.asarray(self.lead))


# ---------------------------------------------------------------------------
# mixed-lag autoregression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarSpec:
    """Mixed-lag autoregression with ``r`` lag and ``s`` lead coefficients."""

    r: int
    s: int
    phi: tuple[float, ...] = ()
    psi: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.r < 0 or self.s < 0:
            raise ValueError(f"orders must be non-negative, got r={self.r}, s={self.s}")
        if self.r + self.s == 0:
            raise ValueError("model needs at least one coefficient (r + s >= 1)")
        phi = _coerce_coeffs(self.phi, self.r, "phi")
        psi = _coerce_coeffs(self.psi, self.s, "psi")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    # -- parameter vector protocol ------------------------------------------
    @property
    def dim(self) -> int:
        return self.r + self.s

    @property
    def params(self) -> np.ndarray:
        return np.asarray(self.phi + self.psi, dtype=float)

    def with_params(self, theta: Sequence[float]) -> "MarSpec":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got shape {theta.shape}")
        return MarSpec(
            r=self.r,
            s=self.s,
            phi=tuple(theta[: self.r]),
            psi=tuple(theta[self.r :]),
        )

    # -- roots and feasibility ----------------------------------------------
    def root_set(self) -> RootSet:
        return RootSet(
            lag=tuple(roots_from_poly(np.asarray(self.phi))),
            lead=tuple(roots_from_poly(np.asarray(self.psi))),
        )

    def is_feasible(self, margin: float = 0.0) -> bool:
        """True when every inverse root is strictly inside the unit circle."""
        lag_m, lead_m = self.root_set().moduli()
        bound = 1.0 - margin
        return bool(np.all(lag_m < bound) and np.all(lead_m < bound))

    # -- residuals and simulation -------------------------------------------
    def min_length(self) -> int:
        return self.r + self.s + 1

    def n_residuals(self, t: int) -> int:
        """Residual count for a series of length ``t`` (edges trimmed)."""
        return max(t - self.r - self.s, 0)

    def residual_weights(self) -> np.ndarray:
        """Weights w with eps_t = sum_k w[k] y_{t - r + k}, k = 0..r+s."""
        a = np.concatenate(([1.0], -np.asarray(self.phi, dtype=float)))
        b = np.concatenate(([1.0], -np.asarray(self.psi, dtype=float)))
        # products of the lag polynomial with the reversed lead polynomial
        # collect terms by the net lag offset; reversing once more orients the
        # weights from the deepest lead (k=0) to the deepest lag (k=r+s).
        return np.convolve(a, b[::-1])[::-1]

    def residuals(self, y: np.ndarray) -> np.ndarray:
        """Filter residuals for t = r .. T-1-s (length T - r - s)."""
        y = np.asarray(y, dtype=float)
        if y.ndim != 1:
            raise ValueError(f"series must be one-dimensional, got shape {y.shape}")
        if y.size < self.min_length():
            raise ValueError(
                f"series of length {y.size} too short for mar({self.r},{self.s}) residuals"
            )
        return np.correlate(y, self.residual_weights(), mode="valid")

    def simulate(
        self,
        dist: ErrorDist,
        t: int,
        *,
        burn: int = 200,
        rng: np.random.Generator | None = None,
        seed: int | None = None,
        errors: np.ndarray | None = None,
    ) -> "SimulatedPath":
        """Simulate ``t`` points of the strictly stationary solution.

        Draws errors on a grid of ``t + 2*burn`` points, runs the lead-side
        recursion backward and the lag-side recursion forward, and keeps the
        central window, so both edges see an approximately stationary path.
        Supply ``errors`` (full grid length) to reuse a fixed draw, e.g. for
        bootstrap regeneration.

        Infeasible specs whose roots are all off the unit circle are simulated
        through their canonical feasible re-factorization; the returned errors
        are expressed in the written spec's filter (exact scale/shift), and
        ``canonicalized`` is flagged.
        """
        if burn < max(self.r, self.s, 1):
            raise ValueError(f"burn must be at least max(r, s, 1), got {burn}")
        if t < self.min_length():
            raise ValueError(f"need at least {self.min_length()} points for mar({self.r},{self.s})")
        n = t + 2 * burn
        if errors is None:
            rng = _resolve_rng(rng, seed)
            errors = dist.draw(rng, n)
        else:
            errors = np.asarray(errors, dtype=float)
            if errors.shape != (n,):
                raise ValueError(f"errors must have grid length {n}, got {errors.shape}")

        if self.is_feasible():
            phi = np.asarray(self.phi, dtype=float)
            psi = np.asarray(self.psi, dtype=float)
            y_full = _kernels.mar_filter(errors, phi, psi)
            path = y_full[burn : burn + t]
            eps = errors[burn : burn + t]
            return SimulatedPath(y=np.array(path), errors=np.array(eps), spec=self)

        form = canonical_mar_form(self)
        phi = np.asarray(form.spec.phi, dtype=float)
        psi = np.asarray(form.spec.psi, dtype=float)
        y_full = _kernels.mar_filter(errors, phi, psi)
        path = y_full[burn : burn + t]
        # written-spec errors: eps_w[t] = scale * eps_canonical[t - shift]
        lo = burn - form.shift
        if lo < 0 or lo + t > n:
            raise ValueError("burn too short to realign errors after canonicalization")
        eps = form.scale * errors[lo : lo + t]
        return SimulatedPath(
            y=np.array(path), errors=eps, spec=self, canonicalized=True, canonical=form
        )

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {"model": "mar", "r": self.r, "s": self.s, "phi": list(self.phi), "psi": list(self.psi)}

    def label(self) -> str:
        return f"mar({self.r},{self.s})"


# ---------------------------------------------------------------------------
# conditionally heteroskedastic autoregression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DarSpec:
    """Autoregression of order ``p`` with level-driven conditional variance of order ``q``."""

    p: int
    q: int
    phi: tuple[float, ...] = ()
    omega: float = 1.0
    alpha: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.p < 0 or self.q < 0:
            raise ValueError(f"orders must be non-negative, got p={self.p}, q={self.q}")
        if self.p + self.q == 0:
            raise ValueError("model needs at least one lag (p + q >= 1)")
        phi = _coerce_coeffs(self.phi, self.p, "phi")
        alpha = _coerce_coeffs(self.alpha, self.q, "alpha")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "omega", float(self.omega))

    # -- parameter vector protocol ------------------------------------------
    @property
    def dim(self) -> int:
        return self.p + 1 + self.q

    @property
    def params(self) -> np.ndarray:
        return np.asarray(self.phi + (self.omega,) + self.alpha, dtype=float)

    def with_params(self, theta: Sequence[float]) -> "DarSpec":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got shape {theta.shape}")
        return DarSpec(
            p=self.p,
            q=self.q,
            phi=tuple(theta[: self.p]),
            omega=float(theta[self.p]),
            alpha=tuple(theta[self.p + 1 :]),
        )

    def is_feasible(self, margin: float = 0.0) -> bool:
        """True when the variance parameters are admissible (omega > 0, alpha >= 0)."""
        return self.omega > margin and all(a >= -margin for a in self.alpha)

    # -- residuals and simulation -------------------------------------------
    def min_length(self) -> int:
        return max(self.p, self.q) + 1

    def n_residuals(self, t: int) -> int:
        """Residual count for a series of length ``t`` (startup trimmed)."""
        return max(t - max(self.p, self.q), 0)

    def residuals(self, y: np.ndarray) -> np.ndarray:
        """Standardized innovations for t = max(p, q) .. T-1."""
        y = np.asarray(y, dtype=float)
        if y.ndim != 1:
            raise ValueError(f"series must be one-dimensional, got shape {y.shape}")
        if y.size < self.min_length():
            raise ValueError(
                f"series of length {y.size} too short for dar({self.p},{self.q}) residuals"
            )
        phi = np.asarray(self.phi, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        m = max(self.p, self.q)
        var = np.full(y.size - m, self.omega)
        for j in range(1, self.q + 1):
            var += alpha[j - 1] * y[m - j : y.size - j] ** 2
        if var.min() <= 0.0:
            raise ValueError(
                "conditional variance is non-positive on this path "
                f"(min {var.min():.3g}); omega/alpha are infeasible here"
            )
        return _kernels.dar_residual_filter(y, phi, float(self.omega), alpha)

    def simulate(
        self,
        dist: ErrorDist,
        t: int,
        *,
        burn: int = 500,
        rng: np.random.Generator | None = None,
        seed: int | None = None,
        errors: np.ndarray | None = None,
    ) -> "SimulatedPath":
        """Simulate ``t`` points by forward recursion after a burn-in from zero."""
        if not self.is_feasible():
            raise ValueError(
                f"variance parameters infeasible (omega={self.omega}, alpha={self.alpha})"
            )
        if burn < max(self.p, self.q):
            raise ValueError(f"burn must be at least max(p, q), got {burn}")
        if t < self.min_length():
            raise ValueError(f"need at least {self.min_length()} points for dar({self.p},{self.q})")
        n = t + burn
        if errors is None:
            rng = _resolve_rng(rng, seed)
            errors = dist.draw(rng, n)
        else:
            errors = np.asarray(errors, dtype=float)
            if errors.shape != (n,):
                raise ValueError(f"errors must have grid length {n}, got {errors.shape}")
        phi = np.asarray(self.phi, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        # Explosive parameter points overflow to inf inside the recursion;
        # that case is reported as a divergence error below, not a warning.
        with np.errstate(over="ignore", invalid="ignore"):
            y_full = _kernels.dar_sim_path(errors, phi, float(self.omega), alpha)
        if not np.all(np.isfinite(y_full)) or np.abs(y_full).max() > 1e100:
            raise ValueError(
                "simulated path diverged (non-finite values); parameters are "
                "outside the strict stationarity region"
            )
        return SimulatedPath(
            y=np.array(y_full[burn:]), errors=np.array(errors[burn:]), spec=self
        )

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "model": "dar",
            "p": self.p,
            "q": self.q,
            "phi": list(self.phi),
            "omega": self.omega,
            "alpha": list(self.alpha),
        }

    def label(self) -> str:
        return f"dar({self.p},{self.q})"


ModelSpec = MarSpec | DarSpec


def resample_path(
    spec: ModelSpec, t: int, pool: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One synthetic series of length ``t`` driven by i.i.d. draws from ``pool``.

    Resamples the pool with replacement onto the generator's full error grid
    (including burn-in) and runs the spec's simulator — the regeneration step
    shared by bootstrap tests and simulation-based pseudo-true values.
    """
    pool = np.asarray(pool, dtype=float).ravel()
    if pool.size == 0:
        raise ValueError("residual pool is empty")
    if isinstance(spec, MarSpec):
        burn = max(200, spec.r, spec.s, 1)
        n = t + 2 * burn
    else:
        burn = max(500, spec.p, spec.q)
        n = t + burn
    draw = pool[rng.integers(0, pool.size, size=n)]
    return spec.simulate(None, t, burn=burn, errors=draw).y


@dataclass(frozen=True)
class SimulatedPath:
    """A simulated window with its aligned true errors."""

    y: np.ndarray
    errors: np.ndarray
    spec: ModelSpec
    canonicalized: bool = False
    canonical: "CanonicalForm | None" = None


# ---------------------------------------------------------------------------
# canonical re-factorization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CanonicalForm:
    """Feasible regrouping of a mixed-lag filter's inverse roots.

    The written filter W and the canonical filter C are related by
    ``W(L) = scale * L^shift * C(L)``, hence written-spec residuals equal
    ``scale`` times the canonical residuals time-shifted by ``shift``.
    """

    spec: MarSpec
    scale: float
    shift: int
    moved_lag: tuple[complex, ...]
    moved_lead: tuple[complex, ...]

    @property
    def order_preserved(self) -> bool:
        """True when no root changed sides (the written spec was feasible)."""
        return not self.moved_lag and not self.moved_lead


def mar_root_set(spec: MarSpec) -> RootSet:
    return spec.root_set()


def canonical_mar_form(spec: MarSpec, *, tol: float = UNIT_CIRCLE_TOL) -> CanonicalForm:
    """Regroup a mixed-lag filter's inverse roots into a feasible configuration.

    Lag-side inverse roots outside the unit circle move to the lead side as
    reciprocals, and vice versa: the two filters annihilate the same strictly
    stationary process, with residuals related by an exact scale and time
    shift.  Raises when a root modulus is within ``tol`` of one (the filter is
    then degenerate and no stationary solution exists).
    """
    rs = spec.root_set()
    lag_in: list[complex] = []
    lead_in: list[complex] = []
    moved_lag: list[complex] = []
    moved_lead: list[complex] = []
    for rho in rs.lag:
        if abs(abs(rho) - 1.0) <= tol:
            raise ValueError(f"lag inverse root with modulus {abs(rho):.12g} lies on the unit circle")
        if abs(rho) < 1.0:
            lag_in.append(rho)
        else:
            moved_lag.append(rho)
            lead_in.append(1.0 / rho)
    for g in rs.lead:
        if abs(abs(g) - 1.0) <= tol:
            raise ValueError(f"lead inverse root with modulus {abs(g):.12g} lies on the unit circle")
        if abs(g) < 1.0:
            lead_in.append(g)
        else:
            moved_lead.append(g)
            lag_in.append(1.0 / g)
    new_r, new_s = len(lag_in), len(lead_in)
    canon = MarSpec(
        r=new_r,
        s=new_s,
        phi=tuple(poly_from_roots(lag_in)) if new_r else (),
        psi=tuple(poly_from_roots(lead_in)) if new_s else (),
    )
    # Each lag root rho moved to the lead side contributes a factor
    # (1 - rho L) = (-rho) L (1 - rho^{-1} L^{-1}); symmetrically a moved lead
    # root g contributes (-g) L^{-1}.  Their product is the scale/shift link.
    scale_c = complex(1.0, 0.0)
    for rho in moved_lag:
        scale_c *= -rho
    for g in moved_lead:
        scale_c *= -g
    if abs(scale_c.imag) > 1e-9 * (1.0 + abs(scale_c.real)):
        raise ValueError("moved roots are not closed under conjugation")
    shift = len(moved_lag) - len(moved_lead)
    return CanonicalForm(
        spec=canon,
        scale=float(scale_c.real),
        shift=shift,
        moved_lag=tuple(moved_lag),
        moved_lead=tuple(moved_lead),
    )


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _coerce_coeffs(value, n: int, name: str) -> tuple[float, ...]:
    if np.isscalar(value):
        value = (value,)
    coeffs = tuple(float(v) for v in value)
    if len(coeffs) != n:
        raise ValueError(f"{name} must have length {n}, got {len(coeffs)}")
    if not all(math.isfinite(c) for c in coeffs):
        raise ValueError(f"{name} contains non-finite values: {coeffs}")
    return coeffs


def _resolve_rng(rng: np.random.Generator | None, seed: int | None) -> np.random.Generator:
    if rng is not None:
        return rng
    if seed is None:
        raise ValueError("stochastic draw needs an explicit seed or generator")
    return substream_rng(seed)


def spec_from_dict(d: dict) -> ModelSpec:
    """Build a model spec from a JSON-style dict (``model`` key selects the family)."""
    if "model" not in d:
        raise ValueError("model dict needs a 'model' key ('mar' or 'dar')")
    kind = d["model"]
    if kind == "mar":
        known = {"model", "r", "s", "phi", "psi"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown mar keys: {sorted(extra)}")
        if "r" not in d or "s" not in d:
            raise ValueError("mar spec needs 'r' and 's' orders")
        return MarSpec(r=int(d["r"]), s=int(d["s"]), phi=d.get("phi", ()), psi=d.get("psi", ()))
    if kind == "dar":
        known = {"model", "p", "q", "phi", "omega", "alpha"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown dar keys: {sorted(extra)}")
        if "p" not in d or "q" not in d:
            raise ValueError("dar spec needs 'p' and 'q' orders")
        return DarSpec(
            p=int(d["p"]),
            q=int(d["q"]),
            phi=d.get("phi", ()),
            omega=float(d.get("omega", 1.0)),
            alpha=d.get("alpha", ()),
        )
    raise ValueError(f"unknown model family {kind!r} (expected 'mar' or 'dar')")
