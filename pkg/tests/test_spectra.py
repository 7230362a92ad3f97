"""Tier 2 — spectra, semidistances and convergence studies."""

import csv
import math

import numpy as np
import pytest

from coefficients import MollifierSpec, coefficient_sum, constant, delta, named_function
from formsum import OperatorSpec, assemble_lower, assemble_principal, build_generalized_sum
from spectra import (
    CSV_COLUMNS,
    NON_HERMITIAN_REASON,
    UPPER_THRESHOLD,
    SpectrumReport,
    Window,
    asserted_verdicts,
    build_study_sums,
    compute_spectrum,
    convergence_study,
    delta_well_ground_state,
    fitted_rate,
    lowest_eigenvalue_trace,
    semidistances,
    strictly_decreasing,
    symmetric_compact_check,
    tends_to_zero,
    write_convergence_csv,
    write_spectrum_csv,
)
from spectral_core import TWO_PI, PreconditionError


def _well(c=-2.0):
    return OperatorSpec(1, 1, {((1,), (1,)): constant(1.0)}, {((0,), (0,)): delta(scale=c)})


def _free():
    return OperatorSpec(1, 1, {((1,), (1,)): constant(1.0)})


def _sectorial():
    rippled = coefficient_sum(constant(1.0), named_function("sin", scale=0.5))
    return OperatorSpec(1, 1, {((1,), (1,)): rippled}, {((0,), (0,)): delta(scale=1 + 1j)})


def _gaussians(*widths):
    return [MollifierSpec("gaussian", h) for h in widths]


def _sum(spec, grid, mollifier=None):
    t = assemble_principal(spec, grid)
    return build_generalized_sum(t, assemble_lower(spec, grid, mollifier, with_curves=False).matrix)


def _report(values, window=Window(-10.0, 10.0, 10.0)):
    return SpectrumReport(np.asarray(values, dtype=complex), 0.0, window, 0.0)


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

class TestComputeSpectrum:

    def test_free_laplacian(self, line):
        spectrum = compute_spectrum(_sum(_free(), line), shift=1.0)
        assert np.allclose(spectrum.eigenvalues, np.sort(line.mode_norm_sq))
        assert spectrum.backward_error < 1e-12
        assert spectrum.lowest == pytest.approx(0.0, abs=1e-12)

    def test_delta_well_solves_the_secular_equation(self, make_grid):
        grid = make_grid(32)
        lowest = compute_spectrum(_sum(_well(), grid)).lowest
        residual = 1.0 - 2.0 / TWO_PI * np.sum(1.0 / (grid.mode_norm_sq + 1.0 - lowest))
        assert abs(residual) < 1e-8

    def test_delta_well_approaches_the_bound_state(self, make_grid):
        _, ground = delta_well_ground_state(-2.0)
        lowest = compute_spectrum(_sum(_well(), make_grid(128)), shift=1.0).lowest
        assert 0.0 <= lowest - ground < 1.2e-2

    def test_non_hermitian_sum(self, make_grid):
        spectrum = compute_spectrum(_sum(_sectorial(), make_grid(16)), window=Window(-10, 50, 25))
        assert np.any(np.abs(spectrum.eigenvalues.imag) > 1e-6)
        assert spectrum.windowed.size <= spectrum.eigenvalues.size

    def test_sorted_by_real_part(self, make_grid):
        values = compute_spectrum(_sum(_sectorial(), make_grid(8))).eigenvalues
        assert np.all(np.diff(values.real) >= 0)

    def test_spectrum_csv(self, line, tmp_path):
        spectrum = compute_spectrum(_sum(_free(), line), shift=1.0)
        path = write_spectrum_csv(spectrum, tmp_path / "spectrum.csv")
        rows = list(csv.reader(path.read_text().splitlines()))
        assert rows[0] == ["re", "im"]
        assert len(rows) == line.size + 1
        assert float(rows[1][0]) == pytest.approx(0.0, abs=1e-12)


class TestSemidistances:

    def test_identical(self):
        a = _report([0.0, 1.0, 4.0])
        assert semidistances(a, a)[:2] == (0.0, 0.0)

    def test_extra_limit_eigenvalue(self):
        result = semidistances(_report([0.0]), _report([0.0, 5.0]))
        assert (result.upper, result.lower) == (0.0, 5.0)
        assert not result.upper_empty and not result.lower_empty

    def test_empty_window(self):
        window = Window(100.0, 200.0, 1.0)
        result = semidistances(_report([0.0], window), _report([1.0], window))
        assert (result.upper, result.lower) == (0.0, 0.0)
        assert result.upper_empty and result.lower_empty

    def test_window_mask(self):
        window = Window(-1.0, 1.0, 0.5)
        assert list(window.mask([0.0, 2.0, 0.5j, 0.9j])) == [True, False, True, False]
        assert Window.from_dict(window.to_dict()) == window


class TestTrends:

    @pytest.mark.parametrize("values, expected", [
        ([1.0, 0.5, 0.25], True),
        ([0.002, 0.0005], True),
        ([1.0, 2.0], False),
        ([1.0, 0.9, 0.8], False),
        ([1e-4, 2e-4], False),
        ([], True),
    ], ids=["halving", "small-final", "growing", "slow", "not-monotone", "empty"])
    def test_tends_to_zero(self, values, expected):
        assert tends_to_zero(values) is expected

    def test_strictly_decreasing(self):
        assert strictly_decreasing([3.0, 2.0, 1.0])
        assert not strictly_decreasing([3.0, 3.0, 1.0])

    def test_fitted_rate(self):
        assert fitted_rate([1.0, 0.5, 0.25], [2.0, 1.0, 0.5]) == pytest.approx(1.0)
        assert fitted_rate([1.0, 0.5, 0.25], [1.0, 0.25, 0.0625]) == pytest.approx(2.0)
        assert fitted_rate([1.0, 0.5], [1.0, 0.0]) is None

    def test_lowest_trace(self):
        assert lowest_eigenvalue_trace([-0.9, -0.95, -1.0]).non_increasing
        assert not lowest_eigenvalue_trace([-1.0, -0.9]).non_increasing


class TestBoundState:

    def test_attractive_unit_well(self):
        kappa, ground = delta_well_ground_state(-2.0)
        assert kappa == pytest.approx(1.00366, abs=1e-4)
        assert kappa * math.tanh(math.pi * kappa) == pytest.approx(1.0, abs=1e-12)
        assert ground == pytest.approx(-kappa ** 2)

    def test_deeper_well_binds_tighter(self):
        assert delta_well_ground_state(-4.0)[1] < delta_well_ground_state(-2.0)[1]

    @pytest.mark.parametrize("c", [0.0, 1.0])
    def test_needs_attraction(self, c):
        with pytest.raises(PreconditionError):
            delta_well_ground_state(c)


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------

class TestConvergenceStudy:

    def test_unperturbed_study(self, make_grid):
        report = convergence_study(_free(), _gaussians(1.0, 0.5), make_grid(16))
        assert all(row.q_norm_gap == 0.0 and row.resolvent_diff == 0.0 for row in report.rows)
        assert all(row.d_upper == pytest.approx(0.0, abs=1e-9) for row in report.rows)
        assert all(asserted_verdicts(report).values())

    def test_delta_well_small_grid(self, make_grid):
        report = convergence_study(_well(), _gaussians(1.0, 0.5, 0.25), make_grid(32))
        assert [row.n for row in report.rows] == [1, 2, 3]
        assert report.verdicts["chain_bound"]
        assert report.verdicts["q_gap_strictly_decreasing"]
        assert report.verdicts["lower_asserted"]
        assert "lower_conv" in asserted_verdicts(report)
        assert report.limit_hermitian

    def test_rows_respect_the_chain_bound(self, make_grid):
        report = convergence_study(_sectorial(), _gaussians(1.0, 0.5), make_grid(16))
        assert all(row.resolvent_diff <= row.bound + 1e-8 for row in report.rows)
        assert not report.verdicts["lower_asserted"]
        assert "lower_conv" not in asserted_verdicts(report)

    def test_rows_carry_the_literal_chain_bound(self, make_grid):
        grid = make_grid(16)
        schedule = _gaussians(1.0, 0.5)
        study = build_study_sums(_well(), schedule, grid)
        report = convergence_study(_well(), schedule, grid, study=study)
        scale = study.limit.t0_inv_sqrt_norm ** 2 / study.garding.c1 ** 2
        for row in report.rows:
            assert row.literal_bound == pytest.approx(scale * row.q_norm_gap, rel=1e-12)
        assert isinstance(report.verdicts["literal_chain_bound"], bool)
        assert "literal_chain_bound" not in asserted_verdicts(report)
        assert report.to_dict()["rows"][0]["literal_bound"] == report.rows[0].literal_bound

    def test_upper_threshold_and_rate_are_reported(self, make_grid):
        report = convergence_study(_well(), _gaussians(1.0, 0.5, 0.25), make_grid(32))
        final = report.rows[-1].d_upper
        assert report.verdicts["upper_threshold"] == bool(final <= UPPER_THRESHOLD)
        assert "upper_threshold" not in asserted_verdicts(report)
        rate = report.verdicts["upper_rate"]
        assert rate is None or math.isfinite(rate)

    def test_reference_point_inside_a_sector(self, make_grid):
        with pytest.raises(PreconditionError):
            convergence_study(_well(), _gaussians(1.0), make_grid(16), rho=0.5)

    def test_threads_do_not_change_rows(self, make_grid):
        grid = make_grid(16)
        single = convergence_study(_well(), _gaussians(1.0, 0.5), grid, threads=1)
        pooled = convergence_study(_well(), _gaussians(1.0, 0.5), grid, threads=2)
        assert single.csv_rows() == pooled.csv_rows()

    def test_prebuilt_study_is_reused(self, make_grid):
        grid = make_grid(16)
        schedule = _gaussians(1.0, 0.5)
        study = build_study_sums(_well(), schedule, grid)
        report = convergence_study(_well(), schedule, grid, study=study)
        assert report.garding is study.garding
        assert report.rho == pytest.approx(min(s.rho for s in [study.limit, *study.sums]))

    def test_csv(self, make_grid, tmp_path):
        report = convergence_study(_well(), _gaussians(1.0, 0.5), make_grid(16))
        path = write_convergence_csv(report, tmp_path / "convergence.csv")
        rows = list(csv.reader(path.read_text().splitlines()))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) == 3
        assert rows[1][1] == "1.000000000000e+00"

    def test_document(self, make_grid):
        data = convergence_study(_well(), _gaussians(1.0), make_grid(16)).to_dict()
        assert set(data) >= {"rho", "window", "garding", "certificate", "rows", "verdicts"}
        assert data["rows"][0]["n"] == 1


class TestSymmetricCompact:

    def test_delta_well_is_applicable(self, make_grid):
        grid = make_grid(16)
        study = build_study_sums(_well(), _gaussians(1.0, 0.5), grid)
        verdict = symmetric_compact_check(study.limit, study.sums, grid, 1, shift=1.0)
        assert verdict.applicable
        assert len(verdict.rows) == 2

    def test_non_symmetric_perturbation(self, make_grid):
        grid = make_grid(16)
        study = build_study_sums(_sectorial(), _gaussians(1.0), grid)
        verdict = symmetric_compact_check(study.limit, study.sums, grid, 1)
        assert not verdict.applicable
        assert verdict.passed is None
        assert verdict.reason == NON_HERMITIAN_REASON
        assert "stricter reading" in verdict.reason

    def test_non_compact_perturbation(self, make_grid):
        grid = make_grid(16)
        t = assemble_principal(_free(), grid)
        limit = build_generalized_sum(t, 0.9 * t)
        verdict = symmetric_compact_check(limit, [], grid, 1)
        assert not verdict.applicable
        assert "compactness" in verdict.reason


@pytest.mark.slow
class TestDeltaWellFullResolution:

    def test_bound_state_within_tolerance(self, make_grid):
        _, ground = delta_well_ground_state(-2.0)
        lowest = compute_spectrum(_sum(_well(), make_grid(256)), shift=1.0).lowest
        assert abs(lowest - ground) <= 5e-3
