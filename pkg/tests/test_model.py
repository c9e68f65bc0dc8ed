"""Problem container and assumption validators, including the golden mutations."""

import numpy as np
import pytest

from switchbsde.model import (
    ProblemSpec,
    catalog,
    catalog_names,
    default_tx_grid,
    default_x_grid,
    estimate_lipschitz,
    reevaluate_witness,
    validate_consistency,
    validate_ellipticity,
    validate_no_free_loop,
    validate_rho,
)


def _simple(m=2, g_off="1", h=None, f=None, b="0", sigma="1", d=1, T=1.0):
    h = h if h is not None else ["0"] * m
    f = f if f is not None else ["0"] * m
    g = [[("0" if i == j else g_off) for j in range(m)] for i in range(m)]
    return ProblemSpec.from_sources(
        name="test", d=d, m=m, T=T, b=[b] * d,
        sigma=[[sigma if r == c else "0" for c in range(d)] for r in range(d)],
        f=f, h=h, g=g,
    )


class TestProblemSpec:
    def test_catalog_names_all_construct(self):
        for name in catalog_names():
            spec = catalog(name)
            assert spec.name == name

    def test_unknown_catalog_entry(self):
        with pytest.raises(KeyError):
            catalog("NOPE")

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ProblemSpec.from_sources(
                name="bad", d=2, m=1, T=1.0, b=["0"], sigma=[["1"]], f=["0"], h=["0"],
                g=[["0"]],
            )

    def test_nonzero_diagonal_cost_rejected(self):
        with pytest.raises(ValueError):
            _simple_g_diag()

    def test_growth_exponent_bounds(self):
        with pytest.raises(ValueError):
            ProblemSpec.from_sources(
                name="bad", d=1, m=1, T=1.0, b=["0"], sigma=[["1"]], f=["0"], h=["0"],
                g=[["0"]], q_growth=0.5,
            )

    def test_driver_coupling_symbols(self):
        spec = catalog("ZCOUPLED")
        assert spec.driver_coupling_symbols(0) == {"z21"}
        assert spec.driver_coupling_symbols(1) == {"z11"}
        assert catalog("TWOMODE-SWITCH").driver_coupling_symbols(0) == set()


def _simple_g_diag():
    return ProblemSpec.from_sources(
        name="bad", d=1, m=2, T=1.0, b=["0"], sigma=[["1"]], f=["0", "0"], h=["0", "0"],
        g=[["1", "1"], ["1", "0"]],
    )


class TestNoFreeLoop:
    def test_decreasing_phi_family_passes(self):
        spec = catalog("REMARK-PHI")
        report = validate_no_free_loop(spec, default_tx_grid(spec))
        assert report.passed

    def test_two_modes_vacuous_triple_check(self):
        spec = _simple(m=2, g_off="1")
        report = validate_no_free_loop(spec, default_tx_grid(spec))
        assert report.passed

    def test_constant_triangle_violation(self):
        spec = ProblemSpec.from_sources(
            name="loop", d=1, m=3, T=1.0, b=["0"], sigma=[["1"]], f=["0"] * 3, h=["0"] * 3,
            g=[["0", "1", "5"], ["1", "0", "1"], ["5", "1", "0"]],
        )
        report = validate_no_free_loop(spec, default_tx_grid(spec, points=3))
        assert not report.passed
        assert report.worst == pytest.approx(3.0, abs=1e-8)
        w = report.witness
        assert {w["i"], w["j"]} == {1, 3} and w["l"] == 2

    def test_negative_cost_fails(self):
        spec = ProblemSpec.from_sources(
            name="neg", d=1, m=2, T=1.0, b=["0"], sigma=[["1"]], f=["0", "0"], h=["0", "0"],
            g=[["0", "t - 2"], ["1", "0"]],
        )
        report = validate_no_free_loop(spec, default_tx_grid(spec))
        assert not report.passed and report.witness["check"] == "g_ij >= 0"

    def test_failing_witness_reproduces_violation(self):
        spec = ProblemSpec.from_sources(
            name="loop", d=1, m=3, T=1.0, b=["0"], sigma=[["1"]], f=["0"] * 3, h=["0"] * 3,
            g=[["0", "1", "5"], ["1", "0", "1"], ["5", "1", "0"]],
        )
        report = validate_no_free_loop(spec, default_tx_grid(spec, points=3))
        assert abs(reevaluate_witness(spec, report) - report.worst) <= 1e-12


class TestConsistency:
    def test_equal_terminals_with_positive_cost(self):
        spec = _simple(m=2, g_off="1", h=["x1", "x1"])
        report = validate_consistency(spec, default_x_grid(spec))
        assert report.passed
        assert report.worst == pytest.approx(-1.0, abs=1e-12)

    def test_shifted_terminal_fails_with_unit_violation(self):
        spec = _simple(m=2, g_off="1", h=["x1", "x1 + 2"])
        report = validate_consistency(spec, default_x_grid(spec))
        assert not report.passed
        assert report.worst == pytest.approx(1.0, abs=1e-12)
        assert report.witness["i"] == 1 and report.witness["j"] == 2
        assert abs(reevaluate_witness(spec, report) - report.worst) <= 1e-12

    def test_single_mode_vacuous(self):
        spec = _simple(m=1)
        report = validate_consistency(spec, default_x_grid(spec))
        assert report.passed and report.worst is None


class TestRho:
    def test_decreasing_phi_dissipative(self):
        spec = catalog("REMARK-PHI")
        report = validate_rho(spec, default_tx_grid(spec, points=5))
        assert report.passed
        assert report.worst == pytest.approx(-1.0, abs=1e-5)

    def test_increasing_phi_fails(self):
        spec = _simple(m=2, g_off="(1 + t)")
        report = validate_rho(spec, default_tx_grid(spec, points=5))
        assert not report.passed
        assert report.worst == pytest.approx(1.0, abs=1e-5)
        assert abs(reevaluate_witness(spec, report) - report.worst) <= 1e-12

    def test_constant_costs_pass_at_tolerance(self):
        spec = _simple(m=2, g_off="0.5")
        report = validate_rho(spec, default_tx_grid(spec, points=5))
        assert report.passed and abs(report.worst) <= 1e-6

    def test_space_dependent_cost_uses_generator(self):
        # g = x1^2, b = 0, sigma = 1: dg/dt + L g = 0 + 0.5 * 2 = 1 > 0
        spec = _simple(m=2, g_off="x1^2")
        report = validate_rho(spec, default_tx_grid(spec, points=5))
        assert not report.passed
        assert report.worst == pytest.approx(1.0, rel=1e-3)


class TestEllipticity:
    def test_identity_passes(self):
        spec = _simple(m=1, sigma="1")
        report = validate_ellipticity(spec, default_tx_grid(spec, points=3), theta=2.0)
        assert report.passed
        assert report.witness["eig_max"] == pytest.approx(1.0)

    def test_anisotropic_fails_with_witness_eigenvalue(self):
        spec = ProblemSpec.from_sources(
            name="aniso", d=2, m=1, T=1.0, b=["0", "0"],
            sigma=[["3", "0"], ["0", "1"]], f=["0"], h=["0"], g=[["0"]],
        )
        report = validate_ellipticity(spec, default_tx_grid(spec, points=3), theta=2.0)
        assert not report.passed
        assert report.witness["eig_max"] == pytest.approx(9.0)
        assert abs(reevaluate_witness(spec, report) - report.worst) <= 1e-12

    def test_state_dependent_volatility_within_band(self):
        spec = _simple(m=1, sigma="sqrt(1 + x1^2)")
        grid = [(t, np.array([x])) for t in (0.0, 0.5, 1.0) for x in np.linspace(-2, 2, 9)]
        report = validate_ellipticity(spec, grid, theta=6.0)
        assert report.passed

    def test_rejects_nonpositive_theta(self):
        spec = _simple(m=1)
        with pytest.raises(ValueError):
            validate_ellipticity(spec, default_tx_grid(spec, points=3), theta=0.0)


class TestLipschitz:
    def test_linear_drift_estimate_approaches_slope(self):
        spec = _simple(m=1, b="2*x1")
        report = estimate_lipschitz(spec, seed=1, n_pairs=2000)
        assert report.advisory and report.passed
        assert 1.8 <= report.worst <= 2.0 + 1e-9

    def test_bounded_derivative_driver(self):
        spec = _simple(m=1, f=["sin(y1)"])
        report = estimate_lipschitz(spec, seed=2, n_pairs=2000)
        assert report.worst <= 1.0 + 1e-9

    def test_quadratic_drift_flags_growth(self):
        spec = _simple(m=1, b="x1^2")
        report = estimate_lipschitz(spec, seed=3, n_pairs=1500)
        assert "grow" in report.note
        assert report.passed  # advisory only

    def test_validators_deterministic_given_seed(self):
        spec = _simple(m=1, b="2*x1")
        a = estimate_lipschitz(spec, seed=5, n_pairs=500)
        b = estimate_lipschitz(spec, seed=5, n_pairs=500)
        assert a.worst == b.worst


class TestCatalogGolden:
    @pytest.mark.parametrize("name", ["CONST", "TWOMODE-SWITCH", "ZCOUPLED", "REMARK-PHI"])
    def test_catalog_passes_all_validators(self, name):
        spec = catalog(name)
        tx = default_tx_grid(spec, points=5)
        xs = default_x_grid(spec, points=5)
        assert validate_no_free_loop(spec, tx).passed
        assert validate_consistency(spec, xs).passed
        assert validate_rho(spec, tx).passed
        assert validate_ellipticity(spec, tx, theta=2.0).passed
