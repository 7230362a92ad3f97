"""Tier 1 — spectral core: trial spaces, Sobolev scale, products (pure logic)."""

import math

import numpy as np
import pytest

from spectral_core import (
    TWO_PI,
    DimensionError,
    MultiIndex,
    PreconditionError,
    SpectralField,
    TorusGrid,
    apply_bessel,
    apply_derivative,
    convolution_matrix,
    equivalence_constant,
    equivalent_inner,
    interpolation_check,
    l2_quadrature_norm,
    pointwise_product,
    project,
    sobolev_inner,
    synthesize,
    weighted_norm,
)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

class TestTorusGrid:

    def test_sizes(self):
        grid = TorusGrid(2, 3)
        assert grid.side == 7
        assert grid.size == 49
        assert grid.shape == (7, 7)
        assert grid.quadrature_size == 13

    def test_modes_are_lexicographic(self):
        grid = TorusGrid(2, 2)
        assert tuple(grid.modes[0]) == (-2, -2)
        assert tuple(grid.modes[1]) == (-2, -1)
        assert tuple(grid.modes[-1]) == (2, 2)
        assert grid.index_of((0, 0)) == grid.size // 2
        assert grid.index_of((2, 2)) == grid.size - 1

    @pytest.mark.parametrize("dimension, bandlimit, error", [
        (3, 4, DimensionError),
        (1, 0, PreconditionError),
        (2, 1.5, PreconditionError),
    ], ids=["three-torus", "empty-band", "fractional-band"])
    def test_rejects_bad_grids(self, dimension, bandlimit, error):
        with pytest.raises(error):
            TorusGrid(dimension, bandlimit)

    def test_index_outside_band(self):
        with pytest.raises(PreconditionError):
            TorusGrid(1, 4).index_of(5)

    def test_multi_index_rejects_negative_entries(self):
        with pytest.raises(PreconditionError):
            MultiIndex((1, -1))


# ---------------------------------------------------------------------------
# Sobolev scale
# ---------------------------------------------------------------------------

class TestSobolevInner:

    @pytest.mark.parametrize("s", [-2.0, -0.5, 0.0, 1.0, 3.0])
    def test_constant_mode_has_unit_norm_everywhere(self, line, s):
        e0 = SpectralField.basis(line, 0)
        assert sobolev_inner(e0, e0, s) == pytest.approx(1.0)

    def test_first_mode_in_h1(self, line):
        e1 = SpectralField.basis(line, 1)
        assert sobolev_inner(e1, e1, 1.0) == pytest.approx(2.0)

    def test_distinct_modes_are_orthogonal(self, line):
        e1 = SpectralField.basis(line, 1)
        e2 = SpectralField.basis(line, 2)
        assert sobolev_inner(e1, e2, 1.5) == 0

    def test_norm_log_convexity(self, line, make_field):
        f = make_field(line)
        assert f.norm(1.0) ** 2 <= f.norm(0.0) * f.norm(2.0) * (1 + 1e-12)

    def test_grid_mismatch(self, make_grid):
        f = SpectralField.basis(make_grid(4), 0)
        g = SpectralField.basis(make_grid(5), 0)
        with pytest.raises(DimensionError):
            sobolev_inner(f, g, 0.0)


class TestBessel:

    def test_scales_a_mode(self, line):
        e1 = SpectralField.basis(line, 1)
        assert np.allclose(apply_bessel(e1, 2.0).coeffs, 2.0 * e1.coeffs)

    @pytest.mark.parametrize("s, a", [(0.0, 1.0), (1.0, 2.0), (-1.0, -0.5)])
    def test_isometry_between_scales(self, line, make_field, s, a):
        f = make_field(line)
        assert apply_bessel(f, a).norm(s - a) == pytest.approx(f.norm(s), rel=1e-12)

    def test_inverse(self, line, make_field):
        f = make_field(line)
        assert np.allclose(apply_bessel(apply_bessel(f, 1.5), -1.5).coeffs, f.coeffs)


class TestDerivatives:

    def test_second_derivative_symbol(self, line):
        e3 = SpectralField.basis(line, 3)
        assert np.allclose(apply_derivative(e3, 2).coeffs, 9.0 * e3.coeffs)

    def test_first_derivative_sign(self, line):
        # D = i d/dx maps e^{ijx} to -j e^{ijx}
        e2 = SpectralField.basis(line, 2)
        assert np.allclose(apply_derivative(e2, 1).coeffs, -2.0 * e2.coeffs)

    def test_mixed_derivative_on_plane(self, make_grid):
        plane = make_grid(3, dimension=2)
        f = SpectralField.basis(plane, (2, -1))
        assert np.allclose(apply_derivative(f, (1, 1)).coeffs, (-2.0) * 1.0 * f.coeffs)


class TestEquivalentInner:

    def test_h1_is_exact(self, line, make_field):
        f = make_field(line)
        assert equivalent_inner(f, f, 1).real == pytest.approx(f.norm(1.0) ** 2)

    @pytest.mark.parametrize("s, dimension, expected", [
        (1, 1, 1.0),
        (2, 1, 0.5),
        (2, 2, 0.5),
    ], ids=["h1-line", "h2-line", "h2-plane"])
    def test_equivalence_constant(self, s, dimension, expected):
        assert equivalence_constant(s, dimension) == pytest.approx(expected)

    @pytest.mark.parametrize("dimension", [1, 2])
    def test_two_sided_bound(self, make_grid, make_field, dimension):
        grid = make_grid(6, dimension)
        f = make_field(grid)
        value = equivalent_inner(f, f, 2).real
        full = f.norm(2.0) ** 2
        assert equivalence_constant(2, dimension) * full * (1 - 1e-12) <= value <= full * (1 + 1e-12)

    def test_rejects_fractional_order(self, line, make_field):
        f = make_field(line)
        with pytest.raises(PreconditionError):
            equivalent_inner(f, f, 0.5)


# ---------------------------------------------------------------------------
# Products and physical space
# ---------------------------------------------------------------------------

class TestPointwiseProduct:

    def test_constant_one_is_identity(self, line, make_field):
        f = make_field(line)
        one = SpectralField.constant(line)
        assert np.allclose(pointwise_product(one, f).coeffs, f.coeffs)

    def test_mode_times_mode(self, line):
        e1 = SpectralField.basis(line, 1)
        product = pointwise_product(e1, e1)
        expected = SpectralField.basis(line, 2) * TWO_PI ** -0.5
        assert np.allclose(product.coeffs, expected.coeffs)

    def test_adjoint_identity(self, make_grid, make_field):
        grid = make_grid(8)
        phi = make_field(make_grid(16))
        f, g = make_field(grid), make_field(grid)
        lhs = sobolev_inner(pointwise_product(phi, f), g, 0.0)
        rhs = sobolev_inner(f, pointwise_product(phi.conjugate(), g), 0.0)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    @pytest.mark.parametrize("dimension", [1, 2])
    def test_matches_physical_multiplication(self, make_grid, make_field, dimension):
        half, grid = make_grid(4, dimension), make_grid(8, dimension)
        phi = make_field(half).rebanded(grid)
        f = make_field(half).rebanded(grid)
        samples = synthesize(phi) * synthesize(f)
        assert np.allclose(pointwise_product(phi, f).coeffs, project(grid, samples).coeffs, atol=1e-10)

    def test_convolution_entries(self, line):
        e2 = SpectralField.basis(line, 2)
        matrix = convolution_matrix(e2)
        i, j = line.index_of(1), line.index_of(-1)
        assert matrix[i, j] == pytest.approx(TWO_PI ** -0.5)
        assert matrix[j, i] == 0

    def test_dimension_mismatch(self, make_grid):
        with pytest.raises(DimensionError):
            convolution_matrix(SpectralField.basis(make_grid(2), 0), make_grid(2, dimension=2))


class TestPhysicalSpace:

    @pytest.mark.parametrize("dimension", [1, 2])
    def test_parseval(self, make_grid, make_field, dimension):
        f = make_field(make_grid(5, dimension))
        assert l2_quadrature_norm(f) == pytest.approx(f.norm(0.0), rel=1e-10)

    def test_constant_samples(self, line):
        samples = synthesize(SpectralField.constant(line, 3.0))
        assert np.allclose(samples, 3.0)

    def test_synthesize_then_project(self, line, make_field):
        f = make_field(line)
        assert np.allclose(project(line, synthesize(f)).coeffs, f.coeffs)

    def test_project_needs_enough_points(self, line):
        with pytest.raises(PreconditionError):
            project(line, np.ones(line.side - 1))

    def test_conjugate_of_real_function(self, line):
        cosine = SpectralField.basis(line, 1) + SpectralField.basis(line, -1)
        assert np.allclose(cosine.conjugate().coeffs, cosine.coeffs)

    def test_field_document(self, line, make_field):
        f = make_field(line)
        assert np.array_equal(SpectralField.from_dict(f.to_dict()).coeffs, f.coeffs)

    def test_malformed_field_document(self):
        with pytest.raises(PreconditionError):
            SpectralField.from_dict({"n": 1})


class TestOperatorNorms:

    def test_identity_between_equal_orders(self, line):
        assert weighted_norm(np.eye(line.size), line, 1.0, 1.0) == pytest.approx(1.0)

    def test_identity_loses_order(self, line):
        # H^0 -> H^-2 norm of the identity is the largest (1+j^2)^-1, at j = 0
        assert weighted_norm(np.eye(line.size), line, 0.0, -2.0) == pytest.approx(1.0)

    def test_hilbert_scale_interpolation(self, line, rng):
        matrix = rng.standard_normal((line.size, line.size)) + 1j * rng.standard_normal((line.size, line.size))
        lhs, rhs = interpolation_check(matrix, line, (2.0, 0.0), (0.0, -2.0), 0.5)
        assert lhs <= rhs * (1 + 1e-9)

    def test_interpolation_parameter_range(self, line):
        with pytest.raises(PreconditionError):
            interpolation_check(np.eye(line.size), line, (1, 0), (0, -1), 1.5)

    def test_mode_norm_is_consistent(self, line):
        assert math.isclose(float(line.mode_norm_sq[line.index_of(3)]), 9.0)
