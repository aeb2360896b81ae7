"""Topology, case data, and Y-bus assembly."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daebayes.grid import (Branch, CaseFormatError, DegenerateBranchError,
                           GeneratorSpec, NetworkCase, assemble_ybus,
                           builtin_case_ieee9, format_case, parse_case,
                           series_admittance)


def two_bus_case(r=0.0, x=0.1, b_charging=0.0):
    return NetworkCase(
        n_buses=2,
        branches=(Branch(1, 2, r, x, b_charging),),
        generators=(GeneratorSpec(1, 0.1, 1.0, 0.3, 0.1, 5.0, 0.2, 0.1, 1.0, 0.0),),
        loads=np.array([[0.0, 0.0], [0.5, 0.2]]),
        shunts=np.zeros((2, 2)),
        name="twobus",
    )


class TestSeriesAdmittance:
    def test_zero_resistance_transformer_branch(self):
        g, b = series_admittance(0.0, 0.0625)
        assert g == 0.0
        assert b == pytest.approx(-16.0, abs=1e-12)

    def test_hand_formula(self):
        # oracle: complex inverse of the series impedance
        y = 1.0 / complex(0.01, 0.1)
        g, b = series_admittance(0.01, 0.1)
        assert g == pytest.approx(y.real, rel=1e-14)
        assert b == pytest.approx(y.imag, rel=1e-14)
        assert g == pytest.approx(0.9900990099009901, rel=1e-12)
        assert b == pytest.approx(-9.900990099009901, rel=1e-12)

    def test_symmetric_r_equals_x(self):
        assert series_admittance(1.0, 1.0) == (0.5, -0.5)

    def test_degenerate_branch(self):
        with pytest.raises(DegenerateBranchError):
            series_admittance(0.0, 0.0)

    @given(r=st.floats(0.0, 10.0), x=st.floats(1e-3, 10.0))
    @settings(max_examples=200, deadline=None)
    def test_magnitude_identity(self, r, x):
        g, b = series_admittance(r, x)
        assert g * g + b * b == pytest.approx(1.0 / (r * r + x * x), rel=1e-12)


class TestAssembleYbus:
    def test_two_bus_hand_assembly(self):
        y = assemble_ybus(two_bus_case(r=0.0, x=0.1))
        np.testing.assert_allclose(y.B, [[-10.0, 10.0], [10.0, -10.0]], atol=1e-13)
        np.testing.assert_allclose(y.G, 0.0, atol=1e-13)

    def test_nominal_roundtrip_identity(self, case9):
        a = assemble_ybus(case9)
        b = assemble_ybus(case9, case9.nominal_r(), case9.nominal_x())
        np.testing.assert_array_equal(a.G, b.G)
        np.testing.assert_array_equal(a.B, b.B)

    def test_deterministic(self, case9):
        a = assemble_ybus(case9)
        b = assemble_ybus(case9)
        assert a.G.tobytes() == b.G.tobytes()
        assert a.B.tobytes() == b.B.tobytes()

    def test_single_x_perturbation_touches_four_B_entries(self, case9):
        base = assemble_ybus(case9)
        x = case9.nominal_x().copy()
        x[3] *= 1.05
        pert = assemble_ybus(case9, theta_x=x)
        diff = np.abs(pert.B - base.B) > 1e-12
        assert diff.sum() == 4
        br = case9.branches[case9.estimable_x[3]]
        i, j = br.from_bus - 1, br.to_bus - 1
        assert diff[i, i] and diff[j, j] and diff[i, j] and diff[j, i]

    def test_row_sums_zero_without_shunts_or_charging(self, case9):
        stripped = NetworkCase(
            n_buses=case9.n_buses,
            branches=tuple(Branch(b.from_bus, b.to_bus, b.r, b.x, 0.0, b.tap)
                           for b in case9.branches),
            generators=case9.generators,
            loads=case9.loads,
            shunts=np.zeros((case9.n_buses, 2)),
            name="nocharge",
        )
        y = assemble_ybus(stripped)
        np.testing.assert_allclose(y.G.sum(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.B.sum(axis=1), 0.0, atol=1e-10)

    def test_symmetry_for_random_theta(self, case9):
        rng = np.random.default_rng(11)
        for _ in range(50):
            r = case9.nominal_r() * rng.uniform(0.6, 1.4, 6)
            x = case9.nominal_x() * rng.uniform(0.6, 1.4, 9)
            y = assemble_ybus(case9, r, x)
            assert np.max(np.abs(y.G - y.G.T)) < 1e-12
            assert np.max(np.abs(y.B - y.B.T)) < 1e-12

    def test_dimension_and_sign_errors(self, case9):
        with pytest.raises(ValueError):
            assemble_ybus(case9, theta_r=np.ones(5))
        bad = case9.nominal_x().copy()
        bad[0] = -bad[0]
        with pytest.raises(ValueError):
            assemble_ybus(case9, theta_x=bad)


# Verbatim Y-bus entries from an independent implementation of the same
# canonical 9-bus data (external cross-check of the embedded case file).
REFERENCE_YBUS = {
    (0, 0): (0.0, -17.36111111111111),
    (0, 3): (0.0, 17.36111111111111),
    (1, 7): (0.0, 16.0),
    (2, 5): (0.0, 17.06484641638225),
    (3, 3): (3.307378962025306, -39.30888872611897),
    (3, 4): (-1.942191248714727, 10.51068205186793),
    (3, 8): (-1.36518771331058, 11.60409556313993),
    (4, 4): (3.224200387138842, -15.84092701422946),
    (5, 5): (2.437096619314212, -32.15386180510696),
    (6, 6): (2.772209954136233, -23.30324902327162),
    (7, 7): (2.804726852537284, -35.44561313021703),
}


class TestIeee9Case:
    def test_parameter_counts(self, case9):
        assert case9.n_buses == 9
        assert case9.n_gen == 3
        assert len(case9.estimable_r) == 6
        assert len(case9.estimable_x) == 9
        n_theta = 2 * case9.n_gen + len(case9.estimable_r) + len(case9.estimable_x)
        assert n_theta == 21

    def test_generator_nominals_match_study_table(self, case9):
        m = [g.M_nom for g in case9.generators]
        d = [g.D_nom for g in case9.generators]
        assert m == [0.236, 0.064, 0.030]
        assert d == [1.92, 0.50, 0.20]
        assert m[0] == pytest.approx(0.236)
        assert d[0] == pytest.approx(1.92)

    def test_transformer_branches_have_zero_resistance(self, case9):
        zero_r = [(b.from_bus, b.to_bus) for b in case9.branches if b.r == 0.0]
        assert sorted(zero_r) == [(1, 4), (3, 6), (8, 2)]

    def test_loads_at_5_7_9(self, case9):
        loaded = [i + 1 for i in range(9) if case9.loads[i].any()]
        assert loaded == [5, 7, 9]
        np.testing.assert_allclose(case9.loads[4], [0.90, 0.30])
        np.testing.assert_allclose(case9.loads[6], [1.00, 0.35])
        np.testing.assert_allclose(case9.loads[8], [1.25, 0.50])

    def test_ybus_matches_external_reference(self, case9):
        y = assemble_ybus(case9)
        for (i, j), (g, b) in REFERENCE_YBUS.items():
            assert y.G[i, j] == pytest.approx(g, abs=5e-13)
            assert y.B[i, j] == pytest.approx(b, abs=5e-13)

    def test_estimable_lists_are_exactly_nonzero_branches(self, case9):
        assert case9.estimable_r == tuple(
            i for i, b in enumerate(case9.branches) if b.r > 0)
        assert case9.estimable_x == tuple(range(9))


class TestCaseFile:
    def test_roundtrip(self, case9):
        again = parse_case(format_case(case9))
        assert again.n_buses == case9.n_buses
        assert again.branches == case9.branches
        assert again.generators == case9.generators
        np.testing.assert_array_equal(again.loads, case9.loads)

    def test_unknown_section_rejected(self):
        with pytest.raises(CaseFormatError, match="unknown section"):
            parse_case("[bogus]\nx = 1\n")

    def test_unknown_case_key_rejected(self, case9):
        text = format_case(case9).replace("name = ieee9", "nom = ieee9")
        with pytest.raises(CaseFormatError, match="unknown"):
            parse_case(text)

    def test_wrong_table_header_rejected(self, case9):
        text = format_case(case9).replace(
            "from_bus to_bus r x b_charging tap",
            "from to r x b tap")
        with pytest.raises(CaseFormatError, match="header"):
            parse_case(text)


class TestInvariants:
    def test_branch_validation(self):
        with pytest.raises(ValueError):
            Branch(1, 1, 0.0, 0.1)        # self loop
        with pytest.raises(ValueError):
            Branch(1, 2, 0.0, 0.0)        # x must be positive
        with pytest.raises(ValueError):
            Branch(1, 2, -0.1, 0.1)       # negative resistance

    def test_generator_validation(self):
        with pytest.raises(ValueError, match="xd"):
            GeneratorSpec(1, 0.1, 1.0, 0.1, 0.3, 5.0, 0.2, 0.1)

    def test_disconnected_graph_rejected(self):
        with pytest.raises(ValueError, match="connected"):
            NetworkCase(
                n_buses=3,
                branches=(Branch(1, 2, 0.0, 0.1),),
                generators=(GeneratorSpec(1, 0.1, 1.0, 0.3, 0.1, 5.0, 0.2, 0.1),),
                loads=np.zeros((3, 2)),
                shunts=np.zeros((3, 2)),
            )

    def test_immutability(self, case9):
        with pytest.raises(ValueError):
            case9.loads[0, 0] = 5.0
