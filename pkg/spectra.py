"""Spectra of generalized sums and their convergence under mollification."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from formsum import (
    assemble_lower,
    assemble_principal,
    build_generalized_sum,
    certify_relative_bound,
    literal_chain_bound,
    resolvent,
    resolvent_difference_bound,
    sobolev_gram,
    verify_garding,
)
from multipliers import decay_evidence
from spectral_core import NumericError, PreconditionError, sobolev_weights

log = logging.getLogger(__name__)

TREND_SLACK = 1e-12
UPPER_THRESHOLD = 1e-3
NON_HERMITIAN_REASON = ("perturbation is not symmetric: the two-sided check also asks for a Hermitian Q, "
                        "a stricter reading than a symmetric principal part with a compact perturbation")
CSV_COLUMNS = ("n", "h", "q_norm_gap", "resolvent_diff", "d_upper", "d_lower")


@dataclass(frozen=True)
class Window:
    """Rectangle ``re_min <= Re z <= re_max``, ``|Im z| <= im_max`` (shift removed)."""

    re_min: float = -10.0
    re_max: float = 50.0
    im_max: float = 25.0

    def mask(self, values):
        values = np.asarray(values)
        return ((values.real >= self.re_min) & (values.real <= self.re_max)
                & (np.abs(values.imag) <= self.im_max))

    def to_dict(self):
        return {"re_min": self.re_min, "re_max": self.re_max, "im_max": self.im_max}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data.get("re_min", -10.0)), float(data.get("re_max", 50.0)),
                   float(data.get("im_max", 25.0)))


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    eigenvalues: np.ndarray = field(repr=False)
    shift: float
    window: Window
    backward_error: float

    @property
    def windowed(self):
        return self.eigenvalues[self.window.mask(self.eigenvalues)]

    @property
    def lowest(self):
        return float(self.eigenvalues.real.min())

    def csv_rows(self):
        return [(_fmt(z.real), _fmt(z.imag)) for z in self.eigenvalues]


def compute_spectrum(gsum, shift=0.0, window=None):
    """Eigenvalues of ``S`` with the shift removed, sorted by real then imaginary part."""
    s = gsum.s
    scale = max(1.0, float(np.linalg.norm(s, 2)))
    try:
        if gsum.is_hermitian:
            values, vectors = scipy.linalg.eigh(0.5 * (s + s.conj().T))
            values = values.astype(complex)
        else:
            values, vectors = scipy.linalg.eig(s)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    residuals = np.linalg.norm(s @ vectors - vectors * values[None, :], axis=0)
    residuals /= np.linalg.norm(vectors, axis=0)
    backward = float(residuals.max()) / scale
    if backward > 1e-9:
        raise NumericError(f"eigenpair backward error {backward:.3e} exceeds 1e-9")
    values = values - shift
    order = np.lexsort((values.imag, values.real))
    return SpectrumReport(values[order], float(shift), window or Window(), backward)


class Semidistances(NamedTuple):
    upper: float
    lower: float
    upper_empty: bool
    lower_empty: bool


def _directed(source, target, window):
    inside = source[window.mask(source)]
    if inside.size == 0:
        return 0.0, True
    if target.size == 0:
        return math.inf, False
    return float(np.abs(inside[:, None] - target[None, :]).min(axis=1).max()), False


def semidistances(a, b, window=None):
    """``upper = sup_{a in W} dist(a, sigma_b)``, ``lower = sup_{b in W} dist(b, sigma_a)``.

    An empty windowed set contributes 0 and raises its flag.
    """
    window = window or a.window
    upper, upper_empty = _directed(a.eigenvalues, b.eigenvalues, window)
    lower, lower_empty = _directed(b.eigenvalues, a.eigenvalues, window)
    if upper_empty or lower_empty:
        log.warning("Formsum Lab: empty windowed spectrum (upper=%s lower=%s)", upper_empty, lower_empty)
    return Semidistances(upper, lower, upper_empty, lower_empty)


def tends_to_zero(values, tol=1e-3):
    """Non-increasing and either small at the end or halved from the start."""
    values = list(values)
    if not values:
        return True
    steady = all(b <= a + TREND_SLACK for a, b in zip(values, values[1:]))
    return steady and (values[-1] <= tol or values[-1] <= 0.5 * values[0])


def strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def fitted_rate(steps, values):
    """Least-squares exponent ``r`` in ``values ~ C steps^r``; ``None`` below two usable points."""
    pairs = [(s, v) for s, v in zip(steps, values) if s > 0 and v > 0]
    if len({s for s, _ in pairs}) < 2:
        return None
    slope, _ = np.polyfit(np.log([s for s, _ in pairs]), np.log([v for _, v in pairs]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class StudySums:
    garding: object
    limit: object
    sums: list
    certificate: object
    curves: dict
    schedule: list
    grid: object
    m: int
    shift: float


def build_study_sums(spec, schedule, grid, eps=0.5, threads=1, angles=64):
    """The limit sum (singular coefficients) and one mollified sum per schedule entry."""
    principal = assemble_principal(spec, grid, shifted=False)
    garding = verify_garding(principal, spec.m, grid, spec.shift)
    t = principal + spec.shift * np.eye(grid.size)
    lower = assemble_lower(spec, grid)
    certificate = certify_relative_bound(lower.matrix, sobolev_gram(grid, spec.m), eps)
    limit = build_generalized_sum(t, lower.matrix, angles)

    def approximant(mollifier):
        q_n = assemble_lower(spec, grid, mollifier, with_curves=False).matrix
        return build_generalized_sum(t, q_n, angles)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        sums = list(pool.map(approximant, schedule))
    return StudySums(garding, limit, sums, certificate, lower.curves, list(schedule), grid,
                     spec.m, spec.shift)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    h: float
    q_norm_gap: float
    resolvent_diff: float
    bound: float
    literal_bound: float
    d_upper: float
    d_lower: float
    lowest: float

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(eq=False)
class ConvergenceReport:
    rows: list
    rho: float
    window: Window
    garding: object
    certificate: object
    limit_lowest: float
    limit_hermitian: bool
    verdicts: dict

    def csv_rows(self):
        return [(row.n, _fmt(row.h), _fmt(row.q_norm_gap), _fmt(row.resolvent_diff),
                 _fmt(row.d_upper), _fmt(row.d_lower)) for row in self.rows]

    def to_dict(self):
        return {
            "rho": self.rho,
            "window": self.window.to_dict(),
            "garding": self.garding.to_dict(),
            "certificate": self.certificate.to_dict(),
            "limit_lowest": self.limit_lowest,
            "limit_hermitian": self.limit_hermitian,
            "rows": [row.to_dict() for row in self.rows],
            "verdicts": self.verdicts,
        }


def study_rho(study):
    """Common reference point left of every sector in the study."""
    return min(s.sector.reference_point() for s in [study.limit, *study.sums])


def convergence_study(spec, schedule, grid, rho=None, window=None, eps=0.5, threads=1, angles=64,
                      study=None):
    """Resolvent and spectral convergence of the mollified sums toward the limit sum.

    A prebuilt *study* from :func:`build_study_sums` is reused when given.
    """
    window = window or Window()
    study = study or build_study_sums(spec, schedule, grid, eps, threads, angles)
    rho = study_rho(study) if rho is None else float(rho)
    for gsum in [study.limit, *study.sums]:
        if gsum.sector.contains(rho):
            raise PreconditionError(f"reference rho={rho} lies inside a sector of the study")
    base = resolvent(study.limit.s, rho)
    limit_spectrum = compute_spectrum(study.limit, study.shift, window)

    def evaluate(item):
        index, (mollifier, gsum) = item
        diff = float(np.linalg.norm(resolvent(gsum.s, rho) - base, 2))
        bound, gap = resolvent_difference_bound(study.limit, gsum, rho, study.garding, grid, spec.m)
        spectrum = compute_spectrum(gsum, study.shift, window)
        dist = semidistances(spectrum, limit_spectrum, window)
        literal = literal_chain_bound(study.limit, study.garding, gap)
        return ConvergenceRow(index + 1, float(mollifier.parameter), gap, diff, bound, literal,
                              dist.upper, dist.lower, spectrum.lowest)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(evaluate, enumerate(zip(study.schedule, study.sums))))
    for row in rows:
        log.info("Formsum Lab: row n=%d h=%g gap=%.6e diff=%.6e bound=%.6e literal=%.6e "
                 "d_upper=%.6e d_lower=%.6e",
                 row.n, row.h, row.q_norm_gap, row.resolvent_diff, row.bound, row.literal_bound,
                 row.d_upper, row.d_lower)

    hermitian = study.limit.is_hermitian and all(s.is_hermitian for s in study.sums)
    gaps = [r.q_norm_gap for r in rows]
    diffs = [r.resolvent_diff for r in rows]
    verdicts = {
        "chain_bound": all(r.resolvent_diff <= r.bound + 1e-8 for r in rows),
        "literal_chain_bound": all(r.resolvent_diff <= r.literal_bound + 1e-8 for r in rows),
        "q_gap_strictly_decreasing": strictly_decreasing(gaps),
        "resolvent_strictly_decreasing": strictly_decreasing(diffs),
        "resolvent_conv": tends_to_zero(gaps) and tends_to_zero(diffs),
        "upper_conv": tends_to_zero([r.d_upper for r in rows]),
        "upper_threshold": bool(rows) and bool(rows[-1].d_upper <= UPPER_THRESHOLD),
        "upper_rate": fitted_rate([r.h for r in rows], [r.d_upper for r in rows]),
        "lower_conv": tends_to_zero([r.d_lower for r in rows]),
        "lower_asserted": hermitian,
        "lowest_non_increasing": lowest_eigenvalue_trace([r.lowest for r in rows]).non_increasing,
        "relative_bound_eps": study.certificate.eps,
    }
    report = ConvergenceReport(rows, rho, window, study.garding, study.certificate,
                               limit_spectrum.lowest, study.limit.is_hermitian, verdicts)
    log.info("Formsum Lab: study verdicts %s", {k: v for k, v in verdicts.items() if isinstance(v, bool)})
    return report


def asserted_verdicts(report):
    """Verdicts whose failure fails the run; ``lower_conv`` only for Hermitian sums."""
    keys = ["chain_bound", "resolvent_conv", "upper_conv"]
    if report.verdicts["lower_asserted"]:
        keys.append("lower_conv")
    return {key: report.verdicts[key] for key in keys}


# ---------------------------------------------------------------------------
# Two-sided convergence for symmetric principal part and compact perturbation
# ---------------------------------------------------------------------------

@dataclass
class SymmetricCompactVerdict:
    applicable: bool
    passed: Optional[bool]
    reason: str
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {"applicable": self.applicable, "passed": self.passed, "reason": self.reason,
                "rows": self.rows}


def weighted_perturbation(q, grid, m):
    """``Q`` in ``H^m -> H^-m`` orthonormal coordinates."""
    weights = sobolev_weights(grid, -m)
    return weights[:, None] * q * weights[None, :]


def symmetric_compact_check(limit, sums, grid, m, shift=0.0, window=None, threshold=0.05):
    """Both semidistances must tend to zero when ``T`` is symmetric and ``Q`` compact.

    Returns a not-applicable verdict when the hypotheses fail.
    """
    window = window or Window()
    scale = max(1.0, float(np.abs(limit.t).max()))
    if np.abs(limit.t - limit.t.conj().T).max() > 1e-9 * scale:
        return SymmetricCompactVerdict(False, None, "principal part is not symmetric")
    if not limit.is_hermitian:
        return SymmetricCompactVerdict(False, None, NON_HERMITIAN_REASON)
    evidence = decay_evidence(weighted_perturbation(limit.q, grid, m), threshold)
    if not evidence.passed:
        return SymmetricCompactVerdict(False, None, "perturbation fails the compactness proxy")
    reference = compute_spectrum(limit, shift, window)
    rows = []
    for index, gsum in enumerate(sums, start=1):
        dist = semidistances(compute_spectrum(gsum, shift, window), reference, window)
        rows.append({"n": index, "d_upper": dist.upper, "d_lower": dist.lower})
    passed = tends_to_zero([r["d_upper"] for r in rows]) and tends_to_zero([r["d_lower"] for r in rows])
    return SymmetricCompactVerdict(True, passed, "symmetric principal part, compact perturbation", rows)


# ---------------------------------------------------------------------------
# Periodic delta well
# ---------------------------------------------------------------------------

def delta_well_ground_state(c):
    """Bound state of ``-u'' + c delta`` on the 2pi-torus: ``kappa tanh(pi kappa) = -c/2``.

    Returns ``(kappa, -kappa**2)``.
    """
    if not c < 0:
        raise PreconditionError(f"a bound state needs an attractive well c < 0, got {c}")
    target = -c / 2.0
    kappa = scipy.optimize.brentq(lambda x: x * math.tanh(math.pi * x) - target,
                                  1e-12, max(1.0, -c) + 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return kappa, -kappa ** 2


@dataclass(frozen=True)
class EigenvalueTrace:
    values: tuple
    non_increasing: bool


def lowest_eigenvalue_trace(values):
    """Lowest eigenvalue along a sharpening schedule; non-increasing for an attractive well."""
    values = tuple(float(v) for v in values)
    return EigenvalueTrace(values, all(b <= a + TREND_SLACK for a, b in zip(values, values[1:])))


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def _fmt(value):
    return f"{value:.12e}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_convergence_csv(report, path):
    return write_csv(path, CSV_COLUMNS, report.csv_rows())


def write_spectrum_csv(report, path):
    return write_csv(path, ("re", "im"), report.csv_rows())
