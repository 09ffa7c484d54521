"""Utility-units transform, AE tail check, convex conjugate."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import rcl
from rcl.errors import DomainError, InconclusiveError, RangeError

from conftest import make_instance, random_mechanisms


def simple_instance(u, e_a, e_p, lo, hi, q=(0.5, 0.5), densities=((1.0, 1.0),)):
    m = len(q)
    states = rcl.StateSpace(ref_prob=np.array(q))
    types = [rcl.AgentType(density=np.array(d), label=f"theta{i}")
             for i, d in enumerate(densities)]
    n = len(types)
    return rcl.validate_instance(rcl.Instance(
        states=states,
        types=types,
        principal_belief=rcl.AgentType(density=np.ones(m), label="p"),
        beliefs=rcl.BeliefSet(priors=np.full((1, n), 1.0 / n), penalties=[0.0]),
        e_a=np.asarray(e_a, float),
        e_p=np.asarray(e_p, float),
        u=u,
        v=rcl.cara(1.0),
        contract_lo=np.asarray(lo, float),
        contract_hi=np.asarray(hi, float),
    ))


class TestToUtilityUnits:
    def test_log_unit_endowment(self):
        inst = simple_instance(rcl.log_utility(), e_a=[1.0, 1.0], e_p=[3.0, 3.0],
                               lo=[0.0, 0.0], hi=[math.e, math.e])
        uu = rcl.to_utility_units(inst)
        np.testing.assert_allclose(uu.c_lo, [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(uu.c_hi, [math.log(1 + math.e)] * 2, atol=1e-15)
        assert uu.clamped_atoms == []

    def test_crra_half_power(self):
        # z^0.5 / 0.5 at wealth 1 and 4 gives levels 2 and 4
        inst = simple_instance(rcl.crra(0.5), e_a=[0.0, 0.0], e_p=[5.0, 5.0],
                               lo=[1.0, 1.0], hi=[4.0, 4.0])
        uu = rcl.to_utility_units(inst)
        np.testing.assert_allclose(uu.c_lo, [2.0, 2.0], atol=1e-14)
        np.testing.assert_allclose(uu.c_hi, [4.0, 4.0], atol=1e-14)

    def test_log_floor_substitution(self):
        inst = simple_instance(rcl.log_utility(), e_a=[0.5, 0.5], e_p=[3.0, 3.0],
                               lo=[-0.5, -0.5], hi=[1.0, 1.0])
        uu = rcl.to_utility_units(inst)
        np.testing.assert_allclose(uu.c_lo, [math.log(1e-8)] * 2, atol=1e-12)
        assert uu.c_lo[0] == pytest.approx(-18.420680743952367)
        assert uu.clamped_atoms == [0, 1]

    def test_no_floor_raises_at_zero_wealth(self):
        inst = simple_instance(rcl.log_utility(), e_a=[0.5, 0.5], e_p=[3.0, 3.0],
                               lo=[-0.5, -0.5], hi=[1.0, 1.0])
        with pytest.raises(DomainError):
            rcl.to_utility_units(inst, wealth_floor=None)

    def test_whole_line_bounds_not_floored(self):
        inst = simple_instance(rcl.cara(1.0), e_a=[1.0, 1.0], e_p=[3.0, 3.0],
                               lo=[-2.0, -2.0], hi=[1.0, 1.0])
        uu = rcl.to_utility_units(inst)
        np.testing.assert_allclose(uu.c_lo, 1.0 - np.exp(1.0), atol=1e-15)
        assert uu.clamped_atoms == []


class TestFromUtilityUnits:
    def test_log_zero_level_is_zero_transfer(self):
        inst = simple_instance(rcl.log_utility(), e_a=[1.0, 1.0], e_p=[3.0, 3.0],
                               lo=[-0.5, -0.5], hi=[2.0, 2.0])
        uu = rcl.to_utility_units(inst)
        np.testing.assert_allclose(rcl.from_utility_units(uu, np.zeros(2)), 0.0, atol=1e-12)

    def test_cara_inversion(self):
        inst = simple_instance(rcl.cara(1.0), e_a=[1.0, 1.0], e_p=[3.0, 3.0],
                               lo=[-1.0, -1.0], hi=[2.0, 2.0])
        uu = rcl.to_utility_units(inst)
        c = np.full(2, 1.0 - math.exp(-2.0))
        np.testing.assert_allclose(rcl.from_utility_units(uu, c), 1.0, atol=1e-12)

    def test_below_lower_bound_raises(self):
        inst = simple_instance(rcl.log_utility(), e_a=[1.0, 1.0], e_p=[3.0, 3.0],
                               lo=[0.0, 0.0], hi=[2.0, 2.0])
        uu = rcl.to_utility_units(inst)
        with pytest.raises(RangeError):
            rcl.from_utility_units(uu, uu.c_lo - 1e-6)

    def test_roundtrip_identity(self, rng):
        for _ in range(25):
            inst = make_instance(rng, m=3, n=2)
            uu = rcl.to_utility_units(inst)
            x = rng.uniform(0.9 * inst.contract_lo, 0.9 * inst.contract_hi)
            c = inst.u.value(inst.e_a + x)
            np.testing.assert_allclose(rcl.from_utility_units(uu, c), x, atol=1e-9)


class TestAgentUtility:
    def test_dot_product(self):
        states = rcl.StateSpace(ref_prob=[0.5, 0.5])
        t = rcl.AgentType(density=[1.0, 1.0])
        assert rcl.agent_utility(states, t, np.array([2.0, 4.0])) == pytest.approx(3.0)

    def test_signed_levels(self):
        states = rcl.StateSpace(ref_prob=[0.5, 0.5])
        t = rcl.AgentType(density=[1.2, 0.8])
        assert rcl.agent_utility(states, t, np.array([1.0, -1.0])) == pytest.approx(
            0.2, abs=1e-14
        )

    @given(lam=st.floats(-4.0, 4.0), c=st.lists(st.floats(-10, 10), min_size=2, max_size=2))
    def test_bilinear_scaling(self, lam, c):
        states = rcl.StateSpace(ref_prob=[0.5, 0.5])
        t = rcl.AgentType(density=[1.2, 0.8])
        c = np.array(c)
        assert rcl.agent_utility(states, t, lam * c) == pytest.approx(
            lam * rcl.agent_utility(states, t, c), abs=1e-11
        )


class TestMonotonePreservation:
    def test_pointwise_order_carries_to_utilities(self, rng):
        for _ in range(20):
            inst = make_instance(rng, m=3, n=3)
            x = rng.uniform(0.8 * inst.contract_lo, 0.8 * inst.contract_hi)
            x_hi = x + rng.uniform(0.0, 0.1, size=x.shape)
            x_hi = np.minimum(x_hi, inst.contract_hi)
            c, c_hi = inst.u.value(inst.e_a + x), inst.u.value(inst.e_a + x_hi)
            for t in inst.types:
                assert rcl.agent_utility(inst.states, t, c) <= rcl.agent_utility(
                    inst.states, t, c_hi
                ) + 1e-12


class TestFeasibilityInvariance:
    def test_payoff_and_utility_unit_verdicts_agree(self, rng):
        # Truth-telling and participation verdicts must coincide across the
        # transform: the payoff-side utilities recompute the exact levels the
        # linear rows consume.
        agreements = 0
        for _ in range(10):
            inst = make_instance(rng, m=2, n=2)
            uu = rcl.to_utility_units(inst)
            system = rcl.build_system(uu)
            for mech in random_mechanisms(rng, uu, 10):
                linear_verdict = rcl.check_mechanism(system, mech, tol=1e-8).feasible
                x = np.stack([rcl.from_utility_units(uu, row) for row in mech.assignment])
                direct = True
                for j, t in enumerate(inst.types):
                    u_j = [
                        rcl.expectation(inst.states, t, inst.u.value(inst.e_a + x[k]))
                        for k in range(inst.n_types)
                    ]
                    if u_j[j] < inst.reservation[j] - 1e-8:
                        direct = False
                    if any(u_j[j] < u_j[k] - 1e-8 for k in range(inst.n_types)):
                        direct = False
                assert direct == linear_verdict
                agreements += 1
        assert agreements == 100


class TestAeCheck:
    @pytest.mark.parametrize("gamma", [0.1, 0.5, 0.9])
    def test_crra_estimate_equals_gamma(self, gamma):
        report = rcl.ae_check(rcl.crra(gamma))
        assert report.passed
        assert report.estimate == pytest.approx(gamma, abs=1e-3)

    def test_linear_fails_at_exactly_one(self):
        report = rcl.ae_check(rcl.linear("half-line"))
        assert not report.passed
        assert report.estimate == 1.0

    def test_shifted_log_tail_passes(self):
        # u(z) = ln(1+z): ratio z / ((1+z) ln(1+z)) peaks at the grid's left
        # end and is tiny by z = 1e6
        grid = np.geomspace(50.0, 2e6, 400)
        u = rcl.UtilitySpec("tabulated", grid=grid, values=np.log1p(grid),
                            derivs=1.0 / (1.0 + grid))
        report = rcl.ae_check(u)
        assert report.passed
        z = np.geomspace(1e2, 1e6, 200)
        direct = np.max(z / ((1.0 + z) * np.log1p(z)))
        assert report.estimate == pytest.approx(direct, rel=1e-3)

    def test_cara_tail_passes(self):
        report = rcl.ae_check(rcl.cara(0.5, "half-line"))
        assert report.passed and report.estimate < 0.01

    def test_negative_utility_inconclusive_until_shifted(self):
        grid = np.geomspace(50.0, 2e6, 300)
        u = rcl.UtilitySpec("tabulated", grid=grid, values=-1.0 / grid,
                            derivs=1.0 / grid**2)
        with pytest.raises(InconclusiveError):
            rcl.ae_check(u)
        report = rcl.ae_check(u, shift=1.0)
        assert report.passed

    def test_crra_scale_invariance(self):
        # reparameterizing z -> 2z leaves the crra elasticity ratio untouched
        gamma = 0.4
        base = rcl.ae_check(rcl.crra(gamma)).estimate
        grid = np.geomspace(50.0, 2e6, 500)
        scaled = rcl.UtilitySpec(
            "tabulated", grid=grid, values=(2.0 * grid) ** gamma / gamma,
            derivs=2.0 * (2.0 * grid) ** (gamma - 1.0),
        )
        assert rcl.ae_check(scaled).estimate == pytest.approx(base, abs=1e-6)


class TestConjugate:
    def test_log_conjugate(self):
        assert rcl.convex_conjugate(rcl.log_utility(), 1.0) == pytest.approx(-1.0, abs=1e-14)

    def test_crra_conjugate(self):
        assert rcl.convex_conjugate(rcl.crra(0.5), 1.0) == pytest.approx(1.0, abs=1e-14)

    def test_fenchel_instance(self):
        # u*(1) = -1 >= ln 2 - 2 for the log utility
        lhs = rcl.convex_conjugate(rcl.log_utility(), 1.0)
        assert lhs >= math.log(2.0) - 2.0

    def test_nonpositive_slope_rejected(self):
        with pytest.raises(DomainError):
            rcl.convex_conjugate(rcl.log_utility(), 0.0)

    @given(y=st.floats(0.05, 5.0), z=st.floats(0.05, 20.0))
    def test_fenchel_inequality_log(self, y, z):
        u = rcl.log_utility()
        assert rcl.convex_conjugate(u, y) >= u.value(z) - z * y - 1e-8

    @given(y=st.floats(0.05, 5.0), z=st.floats(-5.0, 20.0))
    def test_fenchel_inequality_cara(self, y, z):
        u = rcl.cara(1.5)
        assert rcl.convex_conjugate(u, y) >= u.value(z) - z * y - 1e-8

    def test_tabulated_matches_closed_form(self):
        grid = np.linspace(0.05, 30.0, 800)
        u_tab = rcl.UtilitySpec("tabulated", grid=grid, values=np.log(grid),
                                derivs=1.0 / grid)
        for y in (0.5, 1.0, 2.0):
            exact = rcl.convex_conjugate(rcl.log_utility(), y)
            assert rcl.convex_conjugate(u_tab, y) == pytest.approx(exact, abs=1e-6)

    def test_tabulated_boundary_supremum_warns(self):
        grid = np.linspace(0.5, 2.0, 50)
        u_tab = rcl.UtilitySpec("tabulated", grid=grid, values=np.log(grid),
                                derivs=1.0 / grid)
        with pytest.warns(UserWarning, match="boundary"):
            rcl.convex_conjugate(u_tab, 10.0)  # maximizer z = 0.1 below range
