"""Menus, self-selection, menu optimization and the equivalence certificate."""

import numpy as np
import pytest

import rcl
from rcl.errors import PreconditionError, SizeCapError, ValidationError
from rcl.menu import mechanism_menu_value

from conftest import make_uu, random_contracts


def two_atom_uu(densities, reservation=None, e_p=3.0):
    m = 2
    states = rcl.StateSpace(ref_prob=np.array([0.5, 0.5]))
    types = [rcl.AgentType(density=np.array(d), label=f"theta{i}")
             for i, d in enumerate(densities)]
    n = len(types)
    inst = rcl.validate_instance(rcl.Instance(
        states=states,
        types=types,
        principal_belief=rcl.AgentType(density=np.ones(m), label="p"),
        beliefs=rcl.BeliefSet(priors=np.full((1, n), 1.0 / n), penalties=[0.0]),
        e_a=np.full(m, 1.0),
        e_p=np.full(m, e_p),
        u=rcl.log_utility(),
        v=rcl.cara(1.0, "half-line"),
        contract_lo=np.full(m, -0.9),
        contract_hi=np.full(m, e_p),
        reservation=reservation,
    ))
    return rcl.to_utility_units(inst)


class TestMenuBasics:
    def test_dedup_and_nonempty(self):
        menu = rcl.Menu(np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]))
        assert menu.size == 2
        with pytest.raises(ValidationError):
            rcl.Menu(np.empty((0, 2)))

    def test_best_value_singleton(self):
        uu = two_atom_uu([(1.2, 0.8)])
        menu = rcl.Menu(np.array([[1.0, -1.0]]))
        t = uu.base.types[0]
        assert rcl.agent_best_value(uu.states, t, menu) == pytest.approx(0.2, abs=1e-14)

    def test_best_value_dominating_contract(self):
        uu = two_atom_uu([(1.2, 0.8)])
        menu = rcl.Menu(np.array([[0.0, 0.0], [0.5, 0.5]]))
        t = uu.base.types[0]
        assert rcl.agent_best_value(uu.states, t, menu) == pytest.approx(0.5, abs=1e-14)

    def test_best_value_two_dots(self):
        uu = two_atom_uu([(1.2, 0.8)])
        menu = rcl.Menu(np.array([[1.0, 0.0], [0.0, 1.0]]))
        t = uu.base.types[0]
        assert rcl.agent_best_value(uu.states, t, menu) == pytest.approx(0.6, abs=1e-14)

    def test_menu_monotone_under_inclusion(self, rng):
        uu = make_uu(rng, m=2, n=3)
        pool = random_contracts(rng, uu, 6)
        small = rcl.Menu(pool[:3])
        large = rcl.Menu(pool)
        for t in uu.base.types:
            assert rcl.agent_best_value(uu.states, t, small) <= rcl.agent_best_value(
                uu.states, t, large
            ) + 1e-15


class TestOptimalContracts:
    def test_strict_maximizer_is_singleton(self):
        uu = two_atom_uu([(1.2, 0.8)])
        menu = rcl.Menu(np.array([[1.0, 0.0], [0.0, 1.0]]))
        picks = rcl.agent_optimal_contracts(uu.states, uu.base.types[0], menu)
        assert list(picks) == [0]

    def test_exact_tie_returns_both(self):
        uu = two_atom_uu([(1.0, 1.0)])
        menu = rcl.Menu(np.array([[1.0, 0.0], [0.0, 1.0]]))
        picks = rcl.agent_optimal_contracts(uu.states, uu.base.types[0], menu)
        assert list(picks) == [0, 1]

    def test_uniform_type_indifferent_across_zero_mean(self):
        uu = two_atom_uu([(1.0, 1.0)])
        menu = rcl.Menu(np.array([[1.0, -1.0], [-1.0, 1.0], [0.0, 0.0]]))
        picks = rcl.agent_optimal_contracts(uu.states, uu.base.types[0], menu)
        assert list(picks) == [0, 1, 2]

    def test_members_attain_best_value(self, rng):
        uu = make_uu(rng, m=3, n=2)
        menu = rcl.Menu(random_contracts(rng, uu, 5))
        for t in uu.base.types:
            best = rcl.agent_best_value(uu.states, t, menu)
            picks = rcl.agent_optimal_contracts(uu.states, t, menu)
            assert picks.size >= 1
            for g in picks:
                got = rcl.agent_utility(uu.states, t, menu.contracts[g])
                assert got >= best - 1e-9


class TestPrincipalMenuValue:
    def test_singleton(self):
        uu = two_atom_uu([(1.2, 0.8)])
        menu = rcl.Menu(np.array([[0.1, 0.2]]))
        direct = rcl.principal_type_values(uu, rcl.Mechanism(menu.contracts))[0]
        assert rcl.principal_menu_value(uu, uu.base.types[0], menu) == direct

    def test_ties_resolve_for_principal(self):
        # uniform agent indifferent; principal prefers the cheaper contract
        uu = two_atom_uu([(1.0, 1.0)])
        menu = rcl.Menu(np.array([[0.3, -0.3], [-0.3, 0.3]]))
        vals = rcl.contract_values(uu, menu.contracts)
        got = rcl.principal_menu_value(uu, uu.base.types[0], menu)
        assert got == max(vals)

    def test_upper_bounded_by_unrestricted_best(self, rng):
        uu = make_uu(rng, m=2, n=2)
        menu = rcl.Menu(random_contracts(rng, uu, 5))
        cap = max(rcl.contract_values(uu, menu.contracts))
        for t in uu.base.types:
            assert rcl.principal_menu_value(uu, t, menu) <= cap + 1e-15


class TestIrFilter:
    def test_keeps_menu_with_feasible_contract(self, rng):
        uu = make_uu(rng, m=2, n=2)
        menus = [rcl.Menu(np.array([uu.c_hi]))]
        assert rcl.ir_filter(menus, uu) == menus

    def test_drops_all_below_reservation(self):
        uu = two_atom_uu([(1.2, 0.8)], reservation=[0.5])
        menu = rcl.Menu(np.array([[0.0, 0.0], [0.1, -0.1]]))
        assert rcl.ir_filter([menu], uu) == []

    def test_supersets_of_kept_menus_are_kept(self, rng):
        uu = make_uu(rng, m=2, n=2)
        pool = random_contracts(rng, uu, 4)
        kept = rcl.ir_filter([rcl.Menu(pool[:2])], uu)
        if kept:
            assert rcl.ir_filter([rcl.Menu(pool)], uu)


class TestSolveMenu:
    def test_single_candidate(self, rng):
        uu = make_uu(rng, m=2, n=2)
        candidates = np.array([uu.c_hi])
        menu, value = rcl.solve_menu(candidates, uu)
        assert menu.size == 1
        per_type = np.array([
            rcl.principal_menu_value(uu, t, menu) for t in uu.base.types
        ])
        expected, _ = uu.base.beliefs.robust_value(per_type)
        assert value == expected

    def test_irrelevant_alternative_dropped(self, rng):
        uu = make_uu(rng, m=2, n=2)
        good = uu.c_hi.copy()
        dominated = uu.c_lo.copy()  # strictly worse for every type
        menu, value = rcl.solve_menu(np.array([good, dominated]), uu)
        menu_only, value_only = rcl.solve_menu(np.array([good]), uu)
        assert value == value_only
        assert menu.size == 1
        np.testing.assert_array_equal(menu.contracts, menu_only.contracts)

    def test_candidate_cap(self, rng):
        uu = make_uu(rng, m=2, n=2)
        with pytest.raises(SizeCapError):
            rcl.solve_menu(random_contracts(rng, uu, 17), uu)

    def test_out_of_bounds_candidates_rejected(self, rng):
        uu = make_uu(rng, m=2, n=2)
        with pytest.raises(ValidationError, match="bounds"):
            rcl.solve_menu(np.array([uu.c_hi + 1.0]), uu)

    def test_no_ir_subset_raises(self):
        uu = two_atom_uu([(1.2, 0.8)], reservation=[0.9])
        with pytest.raises(ValidationError, match="individually rational"):
            rcl.solve_menu(np.array([[0.0, 0.0], [0.2, 0.2]]), uu)


class TestExtractMechanism:
    def test_singleton_menu_pools(self, rng):
        uu = make_uu(rng, m=2, n=3)
        menu = rcl.Menu(np.array([uu.c_hi]))
        mech = rcl.extract_mechanism(menu, uu)
        for row in mech.assignment:
            np.testing.assert_array_equal(row, uu.c_hi)

    def test_requires_ir_menu(self):
        uu = two_atom_uu([(1.2, 0.8)], reservation=[0.9])
        with pytest.raises(PreconditionError):
            rcl.extract_mechanism(rcl.Menu(np.array([[0.0, 0.0]])), uu)

    def test_extracted_always_feasible(self, rng):
        # IR menus produce feasible mechanisms, 100 out of 100
        passed = 0
        for _ in range(25):
            uu = make_uu(rng, m=2, n=2)
            uu.base.reservation = np.full(uu.n_types, -10.0)
            system = rcl.build_system(uu)
            for _ in range(4):
                menu = rcl.Menu(random_contracts(rng, uu, 4))
                mech = rcl.extract_mechanism(menu, uu)
                assert rcl.check_mechanism(system, mech).feasible
                passed += 1
        assert passed == 100

    def test_extraction_reproduces_menu_value_exactly(self, rng):
        for _ in range(10):
            uu = make_uu(rng, m=2, n=2)
            candidates = random_contracts(rng, uu, 5)
            candidates[0] = uu.c_hi  # keep at least one IR subset
            menu, value = rcl.solve_menu(candidates, uu)
            mech = rcl.extract_mechanism(menu, uu)
            extracted_value, _ = rcl.principal_value(uu, mech)
            assert extracted_value == value


class TestEquivalence:
    def test_single_type_reduces_to_best_ir_candidate(self, rng):
        uu = make_uu(rng, m=2, n=1)
        candidates = random_contracts(rng, uu, 5)
        candidates[0] = uu.c_hi
        report = rcl.equivalence_check(candidates, uu)
        assert report.equal
        e_vals = candidates @ (uu.states.ref_prob * uu.base.types[0].density)
        values = rcl.contract_values(uu, candidates)
        feasible = e_vals >= uu.reservation[0] - 1e-9
        assert report.menu_value == pytest.approx(values[feasible].max(), abs=1e-12)

    def test_random_instances_agree(self, rng):
        for _ in range(10):
            uu = make_uu(rng, m=2, n=2, n_priors=2, random_penalties=True)
            candidates = random_contracts(rng, uu, 4)
            candidates[0] = uu.c_hi
            report = rcl.equivalence_check(candidates, uu)
            assert report.gap <= 1e-9

    def test_ic_binding_instance_strictly_below_relaxed(self):
        # candidate B is the only participation-satisfying option for the
        # eager type, and the laid-back type prefers it too, so serving the
        # relaxed per-type optima (B, A) breaks truth-telling
        uu = two_atom_uu([(1.8, 0.2), (1.4, 0.6)], reservation=[0.5, 0.0])
        cand_a = np.array([0.0, 0.0])
        cand_b = np.array([1.0, 1.0])
        candidates = np.stack([cand_a, cand_b])
        report = rcl.equivalence_check(candidates, uu)
        assert report.equal
        values = rcl.contract_values(uu, candidates)
        v_a, v_b = values
        # direct evaluation: pooling on B is the only truthful arrangement
        assert report.menu_value == pytest.approx(v_b, abs=1e-12)
        e_mat = uu.base.type_weights() @ candidates.T
        relaxed_per_type = []
        for j in range(2):
            ok = e_mat[j] >= uu.reservation[j] - 1e-9
            relaxed_per_type.append(values[ok].max())
        relaxed, _ = uu.base.beliefs.robust_value(np.array(relaxed_per_type))
        assert relaxed > report.mechanism_value + 0.05

    def test_report_serializes(self, rng):
        uu = make_uu(rng, m=2, n=2)
        candidates = random_contracts(rng, uu, 3)
        candidates[0] = uu.c_hi
        doc = rcl.equivalence_check(candidates, uu).to_json()
        assert doc["equal"] is True
        assert len(doc["witness_assignment"]) == uu.n_types

    def test_mechanism_range_menu_never_beats_menu_optimum(self, rng):
        # the menu formed by any feasible mechanism's range is one of the
        # subsets the menu optimizer ranges over
        for _ in range(5):
            uu = make_uu(rng, m=2, n=2)
            candidates = random_contracts(rng, uu, 4)
            candidates[0] = uu.c_hi
            _, menu_value = rcl.solve_menu(candidates, uu)
            assignment, mech_value, _ = rcl.enumerate_best_assignment(
                candidates, uu, tol=1e-9
            )
            mech = rcl.Mechanism(candidates[assignment])
            assert mechanism_menu_value(uu, mech) <= menu_value + 1e-12
