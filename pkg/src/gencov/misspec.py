"""Pseudo-true values under deliberate misspecification.

When a mixed-filter model is fitted with the wrong split of lag versus lead
orders, the objective's minimizer lands at a computable transformation of
the true parameters: each "flipped" inverse root moves to the other side of
the filter as its reciprocal.  This module provides that closed-form map,
its inverse, and a simulation-based counterpart that also delivers the
variance matrix needed by the Wald-type comparison tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .constraints import ConstraintSet, cgcov_estimate
from .gcov import GcovConfig, default_starts, gcov_estimate
from .models import (
    MarSpec,
    ModelSpec,
    poly_from_roots,
    resample_path,
    roots_from_poly,
    substream_rng,
)
from .timeseries import as_values

__all__ = [
    "BindingResult",
    "SimulatedBinding",
    "flip_binding",
    "simulated_binding",
]


# ---------------------------------------------------------------------------
# closed-form root-flip map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BindingResult:
    """All pseudo-true parameter vectors for one order-misspecified template.

    One candidate per admissible subset of flipped inverse roots.  For each
    candidate ``i``, applying the misspecified filter at ``candidates[i]`` to
    data generated by ``source`` reproduces the true errors time-shifted by
    ``q`` and divided by ``scales[i]``; after the candidate's own residual
    window is taken into account the shift cancels, so ``scales[i]`` times
    the candidate residual vector equals the true errors over the source
    spec's residual window.
    """

    source: MarSpec
    q: int
    direction: str
    candidates: tuple[np.ndarray, ...]
    flip_subsets: tuple[tuple[complex, ...], ...]
    scales: tuple[float, ...]
    skipped: tuple[tuple[complex, ...], ...] = ()

    @property
    def target_r(self) -> int:
        return self.source.r - self.q if self.direction == "lag_to_lead" else self.source.r + self.q

    @property
    def target_s(self) -> int:
        return self.source.s + self.q if self.direction == "lag_to_lead" else self.source.s - self.q

    def spec(self, i: int = 0) -> MarSpec:
        """The misspecified template at candidate ``i``."""
        theta = self.candidates[i]
        return MarSpec(
            r=self.target_r,
            s=self.target_s,
            phi=tuple(theta[: self.target_r]),
            psi=tuple(theta[self.target_r :]),
        )

    def to_dict(self) -> dict:
        def pairs(subsets: tuple[tuple[complex, ...], ...]) -> list:
            return [[[float(z.real), float(z.imag)] for z in sub] for sub in subsets]

        return {
            "source": self.source.to_dict(),
            "q": self.q,
            "direction": self.direction,
            "target": {"r": self.target_r, "s": self.target_s},
            "candidates": [np.asarray(c, dtype=float).tolist() for c in self.candidates],
            "flip_subsets": pairs(self.flip_subsets),
            "scales": [float(s) for s in self.scales],
            "skipped": pairs(self.skipped),
        }


def _conjugate_closed(roots: Sequence[complex], tol: float = 1e-7) -> tuple[complex, ...] | None:
    """Exactly conjugate-paired copy of the roots, or None if unpairable.

    Numerically computed roots of real polynomials carry imaginary dust —
    up to the square root of machine precision for repeated roots — so
    near-real roots are projected onto the real axis and matched pairs are
    averaged into exact conjugates before any polynomial is rebuilt.
    """
    remaining = list(roots)
    out: list[complex] = []
    while remaining:
        z = remaining.pop()
        if abs(z.imag) <= tol * (1.0 + abs(z)):
            out.append(complex(z.real, 0.0))
            continue
        for i, w in enumerate(remaining):
            if abs(w - z.conjugate()) <= tol * (1.0 + abs(z)):
                remaining.pop(i)
                c = (z + w.conjugate()) / 2.0
                out.extend([c, c.conjugate()])
                break
        else:
            return None
    return tuple(out)


def flip_binding(true_spec: MarSpec, q: int, *, direction: str = "lag_to_lead") -> BindingResult:
    """Pseudo-true parameters when ``q`` filter roots sit on the wrong side.

    For every ``q``-subset of the source side's inverse roots, the subset's
    reciprocals join the other side and both coefficient polynomials are
    rebuilt.  Subsets that split a complex-conjugate pair cannot produce real
    coefficients and are skipped (reported in ``skipped``).  Each candidate's
    ``scale`` — ``(-1)**q`` times the product of the flipped roots — relates
    the misspecified-filter residuals to the true errors: ``scale`` times the
    candidate's residual vector equals the true errors over the source spec's
    residual window.
    """
    if direction not in {"lag_to_lead", "lead_to_lag"}:
        raise ValueError(f"unknown direction {direction!r}")
    roots = true_spec.root_set()
    moving = roots.lag if direction == "lag_to_lead" else roots.lead
    staying = roots.lead if direction == "lag_to_lead" else roots.lag
    if not 1 <= q <= len(moving):
        side = "lag" if direction == "lag_to_lead" else "lead"
        raise ValueError(f"q must lie in 1..{len(moving)} ({side} order), got {q}")

    candidates: list[np.ndarray] = []
    subsets: list[tuple[complex, ...]] = []
    scales: list[float] = []
    skipped: list[tuple[complex, ...]] = []
    staying_paired = _conjugate_closed(staying) if staying else ()
    for idx in combinations(range(len(moving)), q):
        flip = tuple(moving[i] for i in idx)
        flip_paired = _conjugate_closed(flip)
        keep_paired = _conjugate_closed(
            tuple(moving[i] for i in range(len(moving)) if i not in idx)
        )
        if flip_paired is None or keep_paired is None or staying_paired is None:
            skipped.append(flip)
            continue
        if any(abs(z) < 1e-12 for z in flip_paired):
            # a root at the origin has no reciprocal to move across
            skipped.append(flip)
            continue
        receiving = tuple(staying_paired) + tuple(1.0 / z for z in flip_paired)
        kept_coeffs = poly_from_roots(keep_paired)
        recv_coeffs = poly_from_roots(receiving)
        if direction == "lag_to_lead":
            theta = np.concatenate([kept_coeffs, recv_coeffs])
        else:
            theta = np.concatenate([recv_coeffs, kept_coeffs])
        prod = complex(np.prod(np.asarray(flip_paired, dtype=complex)))
        scale = ((-1.0) ** q) * prod.real
        candidates.append(theta)
        subsets.append(flip_paired)
        scales.append(float(scale))

    if not candidates:
        raise ValueError("every root subset splits a conjugate pair; no real-coefficient flip exists")
    return BindingResult(
        source=true_spec,
        q=q,
        direction=direction,
        candidates=tuple(candidates),
        flip_subsets=tuple(subsets),
        scales=tuple(scales),
        skipped=tuple(skipped),
    )


# ---------------------------------------------------------------------------
# simulation-based pseudo-true value
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulatedBinding:
    """Monte-Carlo pseudo-true value of a second template under a first fit.

    ``b_ts`` is the exact mean of the per-replication fits.  ``omega_s`` is
    the variance matrix for the Wald comparison: ``(1 + 1/S) * T`` times the
    sample covariance of the per-replication fits (absent in long-path mode,
    which produces a single fit).
    """

    b_ts: np.ndarray
    s_reps: int
    per_rep: tuple[np.ndarray, ...]
    omega_s: np.ndarray | None
    mode: str
    theta_hat: np.ndarray
    warnings: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "b_ts": self.b_ts.tolist(),
            "S": self.s_reps,
            "per_rep": [b.tolist() for b in self.per_rep],
            "omega_s": None if self.omega_s is None else self.omega_s.tolist(),
            "mode": self.mode,
            "theta_hat": self.theta_hat.tolist(),
            "warnings": list(self.warnings),
            **self.details,
        }


def _flip_anchor(m1: ModelSpec, m2: ModelSpec, theta_hat: np.ndarray) -> np.ndarray | None:
    """Closed-form start for the second fit when it is a root-flip of the first."""
    if not (isinstance(m1, MarSpec) and isinstance(m2, MarSpec)):
        return None
    q = m1.r - m2.r
    if q >= 1 and m2.s - m1.s == q:
        direction = "lag_to_lead"
    elif q <= -1 and m2.s - m1.s == q:
        q, direction = -q, "lead_to_lag"
    else:
        return None
    try:
        bound = flip_binding(m1.with_params(theta_hat), q, direction=direction)
    except ValueError:
        return None
    return bound.candidates[0]


def simulated_binding(
    y: np.ndarray,
    m1_template: ModelSpec,
    m2_template: ModelSpec,
    cfg: GcovConfig,
    cs2: ConstraintSet | None = None,
    *,
    s_reps: int,
    seed: int,
    mode: str = "resample",
) -> SimulatedBinding:
    """Where refitting a second template lands, on average, under the first.

    Fits the first template to the data, then regenerates synthetic series
    from that fit (residual resampling) and refits the second template to
    each; the average refit is the finite-sample pseudo-true value.  In
    ``long_path`` mode one series of length ``S * T`` is generated and the
    second template is fitted once.  Deterministic given ``seed``.
    """
    if mode not in {"resample", "long_path"}:
        raise ValueError(f"unknown mode {mode!r} (expected resample or long_path)")
    if mode == "resample" and s_reps < 10:
        raise ValueError(f"resample mode needs at least 10 replications, got {s_reps}")
    if mode == "long_path" and s_reps < 1:
        raise ValueError(f"long-path mode needs at least 1 length multiple, got {s_reps}")
    values = as_values(y)
    t = values.size

    fit1 = gcov_estimate(values, m1_template, cfg)
    residual_pool = fit1.spec.residuals(values)
    anchor = _flip_anchor(m1_template, m2_template, fit1.theta)

    def fit_second(series: np.ndarray) -> np.ndarray:
        # A root-flip anchor pins every refit to the basin of the closed-form
        # binding; multistart refits would occasionally hop to a mirror basin
        # and smear the average.  Without an anchor, fall back to the usual
        # moment-based multistart.
        starts = [anchor] if anchor is not None else default_starts(series, m2_template, cfg)
        if cs2 is not None:
            return cgcov_estimate(series, m2_template, cfg, cs2, starts=starts).theta
        return gcov_estimate(series, m2_template, cfg, starts=starts).theta

    warnings: list[str] = list(fit1.warnings)
    if mode == "long_path":
        rng = substream_rng(seed, 0)
        long_y = resample_path(fit1.spec, t * s_reps, residual_pool, rng)
        beta = fit_second(long_y)
        return SimulatedBinding(
            b_ts=np.asarray(beta, dtype=float),
            s_reps=s_reps,
            per_rep=(np.asarray(beta, dtype=float),),
            omega_s=None,
            mode=mode,
            theta_hat=np.asarray(fit1.theta, dtype=float),
            warnings=tuple(warnings),
            details={"t": t},
        )

    per_rep: list[np.ndarray] = []
    failures = 0
    for s in range(1, s_reps + 1):
        rng = substream_rng(seed, s)
        try:
            y_s = resample_path(fit1.spec, t, residual_pool, rng)
            beta = fit_second(y_s)
            if not np.all(np.isfinite(beta)):
                raise ValueError("non-finite refit")
        except (ValueError, FloatingPointError):
            failures += 1
            continue
        per_rep.append(np.asarray(beta, dtype=float))

    if failures > 0.1 * s_reps:
        raise ValueError(
            f"second-template estimation failed on {failures} of {s_reps} replications "
            "(more than 10%)"
        )
    if failures:
        warnings.append(f"{failures} of {s_reps} replications were dropped")
    stack = np.vstack(per_rep)
    b_ts = stack.mean(axis=0)
    s_eff = stack.shape[0]
    if s_eff > 1:
        omega_s = (1.0 + 1.0 / s_eff) * t * np.atleast_2d(np.cov(stack, rowvar=False, ddof=1))
    else:
        omega_s = None
        warnings.append("single successful replication: no dispersion estimate")
    return SimulatedBinding(
        b_ts=b_ts,
        s_reps=s_eff,
        per_rep=tuple(per_rep),
        omega_s=omega_s,
        mode=mode,
        theta_hat=np.asarray(fit1.theta, dtype=float),
        warnings=tuple(warnings),
        details={"t": t},
    )
