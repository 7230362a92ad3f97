"""Tier 1 — coefficient catalog: realization, mollifiers, L_p Sobolev norms."""

import logging
import math

import numpy as np
import pytest

from coefficients import (
    LpNormRequest,
    MollifierSpec,
    admissible_sobolev_class,
    coefficient_sum,
    constant,
    delta,
    delta_derivative,
    fourier_table,
    lp_quadrature_error,
    lp_sobolev_norm,
    mollify,
    named_function,
    realize,
    smooth_samples,
    spec_from_dict,
    spec_to_dict,
    sup_estimate,
    tensorize,
)
from multipliers import closure_gaps
from spectral_core import TWO_PI, DimensionError, PreconditionError, SpectralField


# ---------------------------------------------------------------------------
# Realization
# ---------------------------------------------------------------------------

class TestRealize:

    def test_delta_at_origin_is_flat(self, make_grid):
        field = realize(delta(), make_grid(1))
        assert np.allclose(field.coeffs, TWO_PI ** -0.5)

    def test_shifted_delta_phase(self, line):
        field = realize(delta(1.0), line)
        assert field.coeffs[line.index_of(3)] == pytest.approx(np.exp(-3j) * TWO_PI ** -0.5)

    def test_delta_derivative_is_odd(self, line):
        coeffs = realize(delta_derivative(order=1), line).table()
        assert np.allclose(coeffs, -coeffs[::-1])
        assert coeffs[line.index_of(2)] == pytest.approx(2.0 * TWO_PI ** -0.5)

    def test_constant_function(self, line):
        field = realize(constant(1.0), line)
        assert field.coeffs[line.index_of(0)] == pytest.approx(TWO_PI ** 0.5)
        rest = np.delete(field.coeffs, line.index_of(0))
        assert np.allclose(rest, 0.0, atol=1e-12)

    def test_sine_has_two_modes(self, line):
        field = realize(named_function("sin"), line)
        assert field.coeffs[line.index_of(1)] == pytest.approx(TWO_PI ** 0.5 / 2j)
        assert field.coeffs[line.index_of(-1)] == pytest.approx(-TWO_PI ** 0.5 / 2j)

    def test_smooth_callable(self, line):
        field = realize(smooth_samples(lambda x: np.cos(2 * x)), line)
        assert field.coeffs[line.index_of(2)] == pytest.approx(TWO_PI ** 0.5 / 2)

    def test_fourier_table_is_rebanded(self, make_grid):
        source = SpectralField.basis(make_grid(4), 3)
        wide = realize(fourier_table(source), make_grid(8))
        narrow = realize(fourier_table(source), make_grid(2))
        assert wide.coeffs[wide.grid.index_of(3)] == 1.0
        assert np.allclose(narrow.coeffs, 0.0)

    def test_sum_is_linear(self, line):
        total = realize(coefficient_sum(delta(), constant(2.0)), line)
        expected = realize(delta(), line) + realize(constant(2.0), line)
        assert np.allclose(total.coeffs, expected.coeffs)

    def test_scale(self, line):
        field = realize(delta(scale=-2.0), line)
        assert np.allclose(field.coeffs, -2.0 * TWO_PI ** -0.5)

    def test_dimension_mismatch(self, make_grid):
        with pytest.raises(DimensionError):
            realize(delta(), make_grid(4, dimension=2))

    def test_unknown_function(self):
        with pytest.raises(PreconditionError):
            named_function("tan")

    def test_singular_flags(self):
        assert delta().is_singular
        assert coefficient_sum(constant(), delta_derivative()).is_singular
        assert not named_function("cos").is_singular


# ---------------------------------------------------------------------------
# Mollifiers
# ---------------------------------------------------------------------------

class TestMollify:

    def test_fejer_without_cutoff_is_identity(self, line):
        smooth = mollify(delta(), MollifierSpec("fejer", math.inf), line)
        assert np.allclose(smooth.coeffs, realize(delta(), line).coeffs)

    def test_fejer_at_the_bandlimit_is_identity(self, line):
        damping = MollifierSpec("fejer", line.bandlimit).damping(line)
        assert np.array_equal(damping, np.ones(line.size))

    def test_fejer_below_the_bandlimit_damps_the_edge(self, line):
        damping = MollifierSpec("fejer", line.bandlimit - 1).damping(line)
        assert damping[line.index_of(line.bandlimit)] == 0.0

    def test_wide_gaussian_keeps_only_the_mean(self, line):
        smooth = mollify(delta(), MollifierSpec("gaussian", 10.0), line)
        assert smooth.coeffs[line.index_of(0)] == pytest.approx(TWO_PI ** -0.5)
        assert np.allclose(np.delete(smooth.coeffs, line.index_of(0)), 0.0, atol=1e-30)

    @pytest.mark.parametrize("mollifier", [
        MollifierSpec("fejer", 4), MollifierSpec("gaussian", 0.3),
    ], ids=["fejer", "gaussian"])
    def test_damping_never_amplifies(self, line, mollifier):
        raw = realize(delta(), line)
        smooth = mollify(delta(), mollifier, line)
        assert np.all(np.abs(smooth.coeffs) <= np.abs(raw.coeffs) + 1e-15)

    def test_fejer_cutoff(self, line):
        damping = MollifierSpec("fejer", 3).damping(line)
        assert damping[line.index_of(0)] == 1.0
        assert damping[line.index_of(4)] == 0.0
        assert damping[line.index_of(2)] == pytest.approx(0.5)

    def test_multiplier_gap_shrinks_with_width(self, make_grid):
        grid = make_grid(64)
        gaps = closure_gaps(realize(delta(), grid.product_grid), 1, 1, [1.0, 0.5, 0.25, 0.125], grid)
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_rejects_unknown_kind(self):
        with pytest.raises(PreconditionError):
            MollifierSpec("box", 1.0)


# ---------------------------------------------------------------------------
# L_p Sobolev norms
# ---------------------------------------------------------------------------

class TestLpNorm:

    @pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
    def test_constant_one(self, line, p):
        one = realize(constant(1.0), line)
        assert lp_sobolev_norm(one, LpNormRequest(0.7, p)) == pytest.approx(TWO_PI ** (1 / p))

    @pytest.mark.parametrize("gamma", [-1.0, 0.0, 1.0])
    def test_p2_matches_hilbert_norm(self, line, make_field, gamma):
        f = make_field(line)
        assert lp_sobolev_norm(f, LpNormRequest(gamma, 2.0)) == pytest.approx(f.norm(gamma), rel=1e-10)

    def test_cosine_in_l4(self, line):
        cosine = SpectralField.basis(line, 1) + SpectralField.basis(line, -1)
        assert lp_sobolev_norm(cosine, LpNormRequest(0.0, 4.0)) == pytest.approx((3 / math.pi) ** 0.25)

    def test_single_mode_grows_with_gamma(self, line):
        e3 = SpectralField.basis(line, 3)
        values = [lp_sobolev_norm(e3, LpNormRequest(g, 4.0)) for g in (-1.0, 0.0, 1.0)]
        assert values[0] < values[1] < values[2]

    def test_quadrature_error_vanishes_for_exact_cases(self, line, make_field):
        assert lp_quadrature_error(make_field(line), LpNormRequest(0.0, 2.0)) < 1e-10

    def test_quadrature_error_is_logged(self, line, make_field, caplog):
        with caplog.at_level(logging.DEBUG, logger="coefficients"):
            error = lp_quadrature_error(make_field(line), LpNormRequest(0.5, 3.0))
        assert error >= 0.0
        assert "quadrature on 65 points" in caplog.text

    @pytest.mark.parametrize("p", [1.0, 0.5, math.inf])
    def test_rejects_exponent(self, p):
        with pytest.raises(PreconditionError):
            LpNormRequest(0.0, p)

    def test_rejects_coarse_quadrature(self, line):
        with pytest.raises(PreconditionError):
            lp_sobolev_norm(realize(delta(), line), LpNormRequest(0.0, 2.0, quadrature_size=line.side))


# ---------------------------------------------------------------------------
# Tensor products and admissible classes
# ---------------------------------------------------------------------------

class TestTensor:

    def test_delta_times_one(self, make_grid):
        plane = make_grid(4, dimension=2)
        field = realize(tensorize(delta(), constant(1.0)), plane).table()
        assert np.allclose(field[:, 4], 1.0)
        assert np.allclose(np.delete(field, 4, axis=1), 0.0, atol=1e-12)

    def test_one_times_one_is_the_plane_constant(self, make_grid):
        plane = make_grid(3, dimension=2)
        field = realize(tensorize(constant(), constant()), plane)
        assert np.allclose(field.coeffs, SpectralField.constant(plane).coeffs, atol=1e-12)

    def test_records_sup_norm(self):
        spec = tensorize(delta(), named_function("sin"))
        assert spec.psi_sup == pytest.approx(1.0, abs=1e-4)
        assert sup_estimate(named_function("cos", scale=3.0)) == pytest.approx(3.0)

    def test_singular_bounded_factor(self):
        with pytest.raises(PreconditionError):
            tensorize(constant(), delta())

    def test_plane_factor(self):
        with pytest.raises(DimensionError):
            tensorize(delta((0.0, 0.0)), constant())


class TestAdmissibleClass:

    @pytest.mark.parametrize("alpha, beta, m, n, gamma, p_min, closed", [
        (0, 0, 1, 1, -1.0, 2.0, True),
        ((0, 0), (0, 0), 1, 2, -1.0, 2.0, False),
        (1, 0, 2, 1, -1.0, 2.0, True),
    ], ids=["potential-line", "potential-plane", "drift-fourth-order"])
    def test_classes(self, alpha, beta, m, n, gamma, p_min, closed):
        cls = admissible_sobolev_class(alpha, beta, m, n)
        assert (cls.gamma, cls.p_min, cls.p_closed) == (gamma, p_min, closed)

    def test_open_endpoint(self):
        cls = admissible_sobolev_class((0, 0), (0, 0), 1, 2)
        assert not cls.admits(2.0)
        assert cls.admits(2.5)

    def test_rejects_principal_slot(self):
        with pytest.raises(PreconditionError):
            admissible_sobolev_class(1, 1, 1, 1)


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------

class TestDocuments:

    def test_sum_document(self, line):
        spec = coefficient_sum(delta(0.5, scale=1j), named_function("sin", frequency=2, scale=-0.5))
        restored = spec_from_dict(spec_to_dict(spec))
        assert np.allclose(realize(restored, line).coeffs, realize(spec, line).coeffs)

    def test_complex_scale_is_stored_as_pair(self):
        assert spec_to_dict(delta(scale=2j))["scale"] == [0.0, 2.0]

    def test_anonymous_callable_cannot_be_stored(self):
        with pytest.raises(PreconditionError):
            spec_to_dict(smooth_samples(lambda x: x))

    @pytest.mark.parametrize("data", [
        {"variant": "wavelet"},
        {"variant": "smooth_samples"},
        {"variant": "sum"},
    ], ids=["unknown-variant", "missing-function", "missing-terms"])
    def test_malformed_documents(self, data):
        with pytest.raises(PreconditionError):
            spec_from_dict(data)
