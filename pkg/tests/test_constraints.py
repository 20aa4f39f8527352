"""Constraint generation, the constrained optimizer, and multiplier recovery."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gencov.constraints import (
    ACTIVE_TOL,
    OMEGA_FLOOR,
    CGcovResult,
    Constraint,
    ConstraintSet,
    cgcov_estimate,
    constraints_for,
    constraints_from_name,
    dar_constraints,
    dar_stationarity_diagnostic,
    jury_constraints,
    kt_multipliers,
    kt_multipliers_from_grad,
    mar_constraints,
)
from gencov.gcov import (
    GcovConfig,
    gcov_estimate,
    heavy_tail_transforms,
    model_objective,
    volatility_transforms,
)
from gencov.models import DarSpec, ErrorDist, MarSpec, substream_rng

T5 = ErrorDist(family="student_t", df=5.0)
CFG = GcovConfig(h=3)


def roots_strictly(c, where):
    """Independent oracle: direct root moduli of 1 - c1 z - ... - cr z^r.

    Degree drops (trailing zero coefficients) send roots to infinity, which
    counts as outside.
    """
    c = np.asarray(c, dtype=float)
    coeffs = np.concatenate(([1.0], -c))[::-1]
    nz = np.nonzero(np.abs(coeffs) > 0.0)[0]
    degree_drop = nz[0] if nz.size else coeffs.size
    coeffs = coeffs[degree_drop:]
    if coeffs.size <= 1:
        moduli = np.array([])
    else:
        moduli = np.abs(np.roots(coeffs))
    if where == "outside":
        return bool(np.all(moduli > 1.0))
    return degree_drop == 0 and bool(np.all(moduli < 1.0))


def random_coeff_vectors(rng, r, n):
    """Mix of raw cube draws and root-constructed draws covering both verdicts."""
    out = []
    for i in range(n):
        style = i % 3
        if style == 0:
            out.append(rng.uniform(-2.2, 2.2, r))
        elif style == 1:
            inv_roots = rng.uniform(0.05, 0.95, r) * rng.choice([-1.0, 1.0], r)
            flip = rng.random(r) < 0.5
            inv_roots[flip] = 1.0 / inv_roots[flip]
            poly = np.poly(inv_roots)  # monic in the inverse-root variable
            out.append(-poly[1:][::-1] / poly[0] * 0 - poly[1:])
        else:
            out.append(rng.uniform(-1.0, 1.0, r))
    return out


class TestJuryOutside:
    def test_first_order_examples(self):
        cs = jury_constraints(1, "outside")
        assert cs.is_feasible(np.array([0.5]))
        assert not cs.is_feasible(np.array([1.5]))
        assert not cs.is_feasible(np.array([-1.00001]))

    def test_second_order_matches_triangle(self):
        cs = jury_constraints(2, "outside")
        grid = np.linspace(-1.6, 1.6, 33)
        for c1 in grid:
            for c2 in grid:
                want = (c1 + c2 < 1.0) and (c2 - c1 < 1.0) and (abs(c2) < 1.0)
                got = bool(cs.values(np.array([c1, c2])).min() > 0)
                assert got == want, (c1, c2)

    def test_third_order_matches_published_conditions(self):
        # region equivalence with {1-p1-p2-p3>0, -p3+p2-p1-1<0, |p3|<1,
        # p3^2-1 < p3*p1+p2}
        cs = jury_constraints(3, "outside")
        rng = substream_rng(60)
        for _ in range(4000):
            p1, p2, p3 = rng.uniform(-1.8, 1.8, 3)
            want = (
                (1.0 - p1 - p2 - p3 > 0.0)
                and (-p3 + p2 - p1 - 1.0 < 0.0)
                and (abs(p3) < 1.0)
                and (p3**2 - 1.0 < p3 * p1 + p2)
            )
            got = bool(cs.values(np.array([p1, p2, p3])).min() > 0)
            assert got == want, (p1, p2, p3)

    def test_third_order_has_four_conditions(self):
        assert len(jury_constraints(3, "outside")) == 4

    @pytest.mark.parametrize("r", [1, 2, 3, 4, 5, 6])
    def test_agrees_with_root_oracle(self, r):
        cs = jury_constraints(r, "outside")
        rng = substream_rng(61 + r)
        checked = 0
        for i in range(1500):
            if i % 2 == 0:
                c = rng.uniform(-2.2, 2.2, r)
            else:
                inv = rng.uniform(0.05, 0.95, r) * rng.choice([-1.0, 1.0], r)
                flip = rng.random(r) < 0.4
                inv[flip] = 1.0 / inv[flip]
                c = -np.poly(inv)[1:]
            coeffs = np.concatenate(([1.0], -c))[::-1]
            moduli = np.abs(np.roots(coeffs)) if abs(coeffs[0]) > 0 else np.array([])
            if moduli.size and np.min(np.abs(moduli - 1.0)) < 1e-6:
                continue
            want = roots_strictly(c, "outside")
            got = bool(cs.values(c).min() > 0)
            assert got == want, (r, c)
            checked += 1
        assert checked > 1200

    def test_order_validation(self):
        with pytest.raises(ValueError, match="at least 1"):
            jury_constraints(0, "outside")
        with pytest.raises(ValueError, match="side"):
            jury_constraints(2, "between")

    def test_offset_and_prefix(self):
        cs = jury_constraints(1, "outside", offset=2, prefix="lead: ")
        theta = np.array([9.0, 9.0, 0.3])
        assert cs.is_feasible(theta)
        assert all(lab.startswith("lead: ") for lab in cs.labels())
        with pytest.raises(ValueError, match="too short"):
            cs.values(np.array([0.3]))


class TestJuryInside:
    @pytest.mark.parametrize("r", [1, 2, 3, 4])
    def test_agrees_with_root_oracle(self, r):
        cs = jury_constraints(r, "inside")
        rng = substream_rng(70 + r)
        for i in range(1200):
            if i % 2 == 0:
                c = rng.uniform(-2.5, 2.5, r)
            else:
                inv = rng.uniform(1.1, 4.0, r) * rng.choice([-1.0, 1.0], r)
                c = -np.poly(inv)[1:]
            coeffs = np.concatenate(([1.0], -c))[::-1]
            if abs(coeffs[0]) > 0:
                moduli = np.abs(np.roots(coeffs))
                if moduli.size and np.min(np.abs(moduli - 1.0)) < 1e-6:
                    continue
            want = roots_strictly(c, "inside")
            got = bool(cs.values(c).min() > 0)
            assert got == want, (r, c)

    def test_degree_drop_is_infeasible(self):
        # top coefficient zero leaves a root at infinity: never "inside";
        # every condition evaluates to exactly 0, failing strict positivity
        cs = jury_constraints(2, "inside")
        assert not bool(cs.values(np.array([0.5, 0.0])).min() > 0)
        assert not cs.is_strictly_feasible(np.array([0.5, 0.0]))


class TestModelConstraintSets:
    def test_mixed_model_examples(self):
        cs = mar_constraints(1, 1)
        assert cs.is_feasible(np.array([0.55, 0.83]))
        assert not cs.is_feasible(np.array([1.20, 1.80]))

    def test_pure_lag_examples(self):
        cs = mar_constraints(2, 0)
        assert cs.is_feasible(np.array([0.5, 0.2]))
        assert not cs.is_feasible(np.array([0.8, 0.4]))

    def test_mar_labels_cover_both_sides(self):
        labels = mar_constraints(2, 1).labels()
        assert any(lab.startswith("phi: ") for lab in labels)
        assert any(lab.startswith("psi: ") for lab in labels)

    def test_mar_validation(self):
        with pytest.raises(ValueError, match="r \\+ s >= 1"):
            mar_constraints(0, 0)

    def test_dar_examples(self):
        cs = dar_constraints(1, 1)
        assert cs.is_feasible(np.array([0.5, 1.0, 0.4]))
        assert not cs.is_feasible(np.array([0.5, 0.0, 0.4]))
        assert not cs.is_feasible(np.array([0.5, 1.0, -0.01]))

    def test_dar_alpha_boundary_is_feasible(self):
        assert dar_constraints(1, 1).is_feasible(np.array([0.5, 1.0, 0.0]))

    def test_dar_clamp_metadata(self):
        cs = dar_constraints(2, 2)
        coords = [c.coord for c in cs]
        assert coords == [2, 3, 4]
        assert [c.bound for c in cs] == [OMEGA_FLOOR, 0.0, 0.0]

    def test_canonical_for_spec(self):
        # order-1 root conditions are {F(1) > 0, -F(-1) > 0} per side
        assert len(constraints_for(MarSpec(r=1, s=1, phi=(0.3,), psi=(0.2,)))) == 4
        assert len(constraints_for(DarSpec(p=1, q=1, phi=(0.3,), alpha=(0.1,)))) == 2


class TestFromName:
    def test_parses(self):
        assert len(constraints_from_name("mar:r=1:s=1")) == 4
        assert len(constraints_from_name("dar:p=2:q=1")) == 2
        assert len(constraints_from_name("jury:r=3:outside")) == 4
        assert len(constraints_from_name("jury:r=2:inside")) == 4

    def test_errors(self):
        with pytest.raises(ValueError, match="unknown constraint set"):
            constraints_from_name("box")
        with pytest.raises(ValueError, match="missing r"):
            constraints_from_name("mar:s=1")
        with pytest.raises(ValueError, match="non-integer"):
            constraints_from_name("jury:r=x")


@pytest.fixture(scope="module")
def causal_fit_pair():
    spec = MarSpec(r=1, s=0, phi=(0.5,))
    y = spec.simulate(T5, 800, seed=62).y
    free = gcov_estimate(y, spec, CFG)
    bound = cgcov_estimate(y, spec, CFG, mar_constraints(1, 0))
    return free, bound


class TestCgcov:
    def test_interior_solution_matches_unconstrained(self, causal_fit_pair):
        free, bound = causal_fit_pair
        np.testing.assert_allclose(bound.theta, free.theta, atol=1e-4)
        assert not bound.boundary_flag
        assert bound.active_set == ()
        assert bound.converged

    def test_penalty_trail_monotone(self, causal_fit_pair):
        _, bound = causal_fit_pair
        mus = [t[0] for t in bound.penalty_trail]
        assert mus == [1e2, 1e4, 1e6, 1e8]
        viols = [t[2] for t in bound.penalty_trail]
        assert all(b <= a + 1e-8 for a, b in zip(viols, viols[1:]))
        objs = [t[1] for t in bound.penalty_trail]
        assert all(b >= a - 1e-8 for a, b in zip(objs, objs[1:]))

    def test_feasibility_invariant(self, causal_fit_pair):
        _, bound = causal_fit_pair
        assert bound.constraint_values.min() >= -1e-8

    def test_two_sided_fit_stays_feasible(self):
        # heavy tails separate the causal/noncausal basins sharply, so the
        # constrained fit must land on the admissible representation
        spec = MarSpec(r=1, s=1, phi=(0.55,), psi=(0.83,))
        y = spec.simulate(ErrorDist(family="cauchy"), 500, seed=63).y
        cfg = GcovConfig(transforms=heavy_tail_transforms(), h=3)
        cs = mar_constraints(1, 1)
        # force the start set to cover the mirrored and swapped basins too
        starts = [
            np.array([0.55, 0.83]),
            np.array([1.20, 1.82]),
            np.array([0.83, 0.55]),
            np.array([0.1, 0.1]),
        ]
        bound = cgcov_estimate(y, spec, cfg, cs, starts=starts)
        assert cs.is_feasible(bound.theta)
        np.testing.assert_allclose(bound.theta, [0.55, 0.83], atol=0.1)
        assert bound.objective <= model_objective(y, spec, cfg) + 1e-10

    def test_volatility_boundary_clamps_exactly(self):
        spec = DarSpec(p=1, q=1, phi=(0.5,), omega=1.0, alpha=(0.0,))
        y = spec.simulate(T5, 1000, seed=60).y
        cfg = GcovConfig(transforms=volatility_transforms(), h=3)
        bound = cgcov_estimate(y, spec, cfg, dar_constraints(1, 1))
        assert bound.theta[2] == 0.0
        assert bound.boundary_flag
        labels = [bound.constraint_labels[i] for i in bound.active_set]
        assert "alpha[0] >= 0" in labels

    def test_volatility_interior_recovers(self):
        spec = DarSpec(p=1, q=1, phi=(0.5,), omega=1.0, alpha=(0.4,))
        y = spec.simulate(T5, 1500, seed=100).y
        cfg = GcovConfig(transforms=volatility_transforms(), h=3)
        bound = cgcov_estimate(y, spec, cfg, dar_constraints(1, 1))
        np.testing.assert_allclose(bound.theta, [0.5, 1.0, 0.4], atol=0.15)
        assert not bound.boundary_flag

    def test_deterministic(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 300, seed=66).y
        a = cgcov_estimate(y, spec, CFG, mar_constraints(1, 0))
        b = cgcov_estimate(y, spec, CFG, mar_constraints(1, 0))
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            cgcov_estimate(
                np.ones(50), MarSpec(r=1, s=0, phi=(0.0,)), CFG, ConstraintSet(items=())
            )

    def test_infeasible_interior_rejected(self):
        spec = MarSpec(r=1, s=0, phi=(0.5,))
        y = spec.simulate(T5, 200, seed=67).y
        with pytest.raises(ValueError, match="strictly"):
            cgcov_estimate(y, spec, CFG, mar_constraints(1, 0), init=[2.0])

    def test_serialization_includes_bookkeeping(self, causal_fit_pair):
        _, bound = causal_fit_pair
        d = bound.to_dict()
        assert d["boundary_flag"] is False
        assert "constraints" in d and "penalty_trail" in d


class TestKtMultipliers:
    def test_hand_kkt_example(self):
        # minimize (x+1)^2 subject to x >= 0: solution x=0, gradient 2,
        # multiplier 2
        cs = ConstraintSet(items=(Constraint(fun=lambda th: th[0], label="x >= 0", coord=0),))
        gamma = kt_multipliers_from_grad(np.array([0.0]), cs, np.array([2.0]))
        np.testing.assert_allclose(gamma, [2.0], atol=1e-8)

    def test_no_active_raises(self):
        cs = ConstraintSet(items=(Constraint(fun=lambda th: th[0], label="x >= 0"),))
        with pytest.raises(ValueError, match="no active constraints"):
            kt_multipliers_from_grad(np.array([5.0]), cs, np.array([1.0]))

    def test_rank_deficient_raises(self):
        cs = ConstraintSet(
            items=(
                Constraint(fun=lambda th: th[0], label="a"),
                Constraint(fun=lambda th: 2.0 * th[0], label="b"),
            )
        )
        with pytest.raises(ValueError, match="rank-deficient"):
            kt_multipliers_from_grad(np.array([0.0]), cs, np.array([1.0]))

    def test_boundary_fit_multiplier_sign(self):
        spec = DarSpec(p=1, q=1, phi=(0.5,), omega=1.0, alpha=(0.0,))
        y = spec.simulate(T5, 1000, seed=60).y
        cs = dar_constraints(1, 1)
        cfg = GcovConfig(transforms=volatility_transforms(), h=3)
        bound = cgcov_estimate(y, spec, cfg, cs)
        assert bound.boundary_flag
        gamma = kt_multipliers(bound, cs, y, cfg)
        assert gamma.size == len(bound.active_set)
        assert np.all(gamma >= -1e-6)
        if bound.kt_vector is not None:
            np.testing.assert_allclose(bound.kt_vector, gamma, atol=1e-8)


class TestStationarityDiagnostic:
    def test_zero_slope_reduces_to_log_mean_coefficient(self):
        spec = DarSpec(p=1, q=1, phi=(1.05,), omega=1.0, alpha=(0.0,))
        y = np.sin(np.arange(50)) + 2.0
        got = dar_stationarity_diagnostic(y, spec, draws=1000, seed=0)
        np.testing.assert_allclose(got, np.log(1.05), atol=1e-12)

    def test_stationary_config_is_negative(self):
        spec = DarSpec(p=1, q=1, phi=(0.5,), omega=1.0, alpha=(0.4,))
        y = spec.simulate(T5, 2000, seed=68).y
        assert dar_stationarity_diagnostic(y, spec, seed=1) < 0.0

    def test_requires_first_order(self):
        spec = DarSpec(p=2, q=1, phi=(0.4, 0.2), omega=1.0, alpha=(0.4,))
        with pytest.raises(ValueError, match="first-order"):
            dar_stationarity_diagnostic(np.ones(50), spec, seed=0)

    def test_requires_seed(self):
        spec = DarSpec(p=1, q=1, phi=(0.5,), omega=1.0, alpha=(0.4,))
        with pytest.raises(ValueError, match="seed"):
            dar_stationarity_diagnostic(np.ones(50), spec)
