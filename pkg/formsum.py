"""Form sums on the trial space.

The principal part ``T`` (coercive after the shift) and the lower-order
perturbation ``Q`` are assembled as matrices in orthonormal L2 coordinates.
``build_generalized_sum`` congruence-normalizes ``T + Q`` by the Hermitian
part of ``T`` and fits a sector to the numerical range of the sum.
"""

from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from coefficients import mollify, realize, spec_from_dict, spec_to_dict
from multipliers import assemble, form_matrix, relative_bound_curve, spectral_norm
from spectral_core import (
    CoercivityError,
    DimensionError,
    MultiIndex,
    NumericError,
    PreconditionError,
    SectorialityError,
    SpectrumError,
    as_multi_index,
    derivative_symbol,
    sobolev_weights,
    synthesize,
)

log = logging.getLogger(__name__)

GARDING_FLOOR = 1e-12
MATRIX_MAGIC = b"FSLM"
_HEADER = struct.Struct("<4sQQ")


# ---------------------------------------------------------------------------
# Operator description
# ---------------------------------------------------------------------------

def _normalize_table(table, n):
    normalized = {}
    for (alpha, beta), coefficient in table.items():
        key = (as_multi_index(alpha, n).entries, as_multi_index(beta, n).entries)
        if key in normalized:
            raise PreconditionError(f"duplicate coefficient slot {key}")
        if coefficient.dimension != n:
            raise DimensionError(f"coefficient {coefficient} at {key} is not {n}-dimensional")
        normalized[key] = coefficient
    return normalized


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """``L = sum D^alpha c_{alpha,beta} D^beta`` of order ``2m`` on the n-torus.

    Table keys are ``(alpha, beta)`` multi-index pairs; ``shift`` is added
    to the principal part so its real part dominates the ``H^m`` norm.
    """

    m: int
    n: int
    principal: dict
    lower: dict = field(default_factory=dict)
    shift: float = 1.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise PreconditionError(f"order parameter m must be an integer >= 1, got {self.m}")
        if self.n not in (1, 2):
            raise DimensionError(f"dimension must be 1 or 2, got {self.n}")
        if not (self.shift >= 0 and math.isfinite(self.shift)):
            raise PreconditionError(f"shift must be a finite real >= 0, got {self.shift}")
        if not self.principal:
            raise PreconditionError("the principal part needs at least one coefficient")
        principal = _normalize_table(self.principal, self.n)
        lower = _normalize_table(self.lower, self.n)
        for (alpha, beta), coefficient in principal.items():
            if sum(alpha) != self.m or sum(beta) != self.m:
                raise PreconditionError(f"principal slot {alpha},{beta} must have |alpha|=|beta|={self.m}")
            if coefficient.is_singular:
                raise PreconditionError(f"principal coefficient {coefficient} must be a bounded function")
        for alpha, beta in lower:
            if sum(alpha) > self.m or sum(beta) > self.m or sum(alpha) + sum(beta) >= 2 * self.m:
                raise PreconditionError(f"lower slot {alpha},{beta} is not of lower order for m={self.m}")
        object.__setattr__(self, "principal", principal)
        object.__setattr__(self, "lower", lower)

    def with_lower(self, lower):
        return OperatorSpec(self.m, self.n, self.principal, lower, self.shift)

    def to_dict(self):
        def table(entries):
            return [{"alpha": list(a), "beta": list(b), "coefficient": spec_to_dict(c)}
                    for (a, b), c in entries.items()]

        return {"m": self.m, "n": self.n, "shift": self.shift,
                "principal": table(self.principal), "lower": table(self.lower)}

    @classmethod
    def from_dict(cls, data):
        try:
            n = int(data.get("n", 1))

            def table(entries):
                return {(tuple(e["alpha"]), tuple(e["beta"])): spec_from_dict(e["coefficient"])
                        for e in entries}

            return cls(int(data["m"]), n, table(data["principal"]), table(data.get("lower", [])),
                       float(data.get("shift", 1.0)))
        except (KeyError, TypeError) as exc:
            raise PreconditionError(f"malformed operator document: {exc}") from exc


# ---------------------------------------------------------------------------
# Principal part and coercivity
# ---------------------------------------------------------------------------

def assemble_principal(spec, grid, shifted=True):
    """``T = sum_{|alpha|=|beta|=m} S_alpha C S_beta`` plus ``shift * I`` when *shifted*."""
    if grid.dimension != spec.n:
        raise DimensionError(f"operator is {spec.n}-dimensional, grid is {grid.dimension}-dimensional")
    matrix = np.zeros((grid.size, grid.size), dtype=complex)
    for (alpha, beta), coefficient in spec.principal.items():
        field_ = realize(coefficient, grid.product_grid)
        if not np.all(np.isfinite(synthesize(field_))):
            raise PreconditionError(f"principal coefficient {coefficient} has unbounded samples")
        matrix += form_matrix(field_, alpha, beta, grid)
    if shifted:
        matrix += spec.shift * np.eye(grid.size)
    return matrix


def hermitian_part(matrix):
    return 0.5 * (matrix + matrix.conj().T)


def sobolev_gram(grid, s):
    """Diagonal Gram matrix of ``H^s`` in L2 coordinates."""
    return np.diag(sobolev_weights(grid, 2 * s))


def principal_gram(grid, m):
    """Diagonal of ``G_m = sum_{|alpha|=m} S_alpha^2``."""
    total = np.zeros(grid.size)
    for entries in np.ndindex(*([m + 1] * grid.dimension)):
        if sum(entries) == m:
            total += derivative_symbol(grid, MultiIndex(entries)) ** 2
    return total


@dataclass(frozen=True)
class CoercivityReport:
    delta: float
    c1: float
    c2: float
    shift: float

    def to_dict(self):
        return {"delta": self.delta, "c1": self.c1, "c2": self.c2, "shift": self.shift}


def verify_garding(matrix, m, grid, shift=1.0):
    """Garding constant of the unshifted principal *matrix* and the shifted two-sided constants.

    ``delta`` is the least generalized eigenvalue of its Hermitian part
    against ``G_m`` away from the constants; ``c1 <= c2`` bound the shifted
    Hermitian part against the ``H^m`` Gram.
    """
    hermitian = hermitian_part(matrix)
    gram = principal_gram(grid, m)
    nonzero = gram > 0
    delta = float(scipy.linalg.eigh(hermitian[np.ix_(nonzero, nonzero)], np.diag(gram[nonzero]),
                                    eigvals_only=True)[0])
    if delta <= GARDING_FLOOR:
        raise CoercivityError(f"principal part is not coercive: Garding constant {delta:.3e}")
    shifted = hermitian + shift * np.eye(grid.size)
    bounds = scipy.linalg.eigh(shifted, np.diag(sobolev_weights(grid, 2 * m)), eigvals_only=True)
    report = CoercivityReport(delta, float(bounds[0]), float(bounds[-1]), float(shift))
    if report.c1 <= 0:
        raise CoercivityError(f"shifted principal part is not positive: c1={report.c1:.3e}")
    log.info("Formsum Lab: garding delta=%.6f c1=%.6f c2=%.6f", report.delta, report.c1, report.c2)
    return report


# ---------------------------------------------------------------------------
# Lower-order perturbation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LowerAssembly:
    matrix: np.ndarray = field(repr=False)
    curves: dict = field(default_factory=dict)


def default_cutoffs(bandlimit):
    return sorted({0, bandlimit // 4, bandlimit // 2, (3 * bandlimit) // 4})


def assemble_lower(spec, grid, mollifier=None, with_curves=True, rng=None):
    """``Q = sum S_alpha C S_beta`` over the lower slots, each with its relative-bound curve.

    The coefficient in slot ``(alpha, beta)`` acts as a multiplier from
    ``H^(m-|beta|)`` to ``H^-(m-|alpha|)``.
    """
    if grid.dimension != spec.n:
        raise DimensionError(f"operator is {spec.n}-dimensional, grid is {grid.dimension}-dimensional")
    matrix = np.zeros((grid.size, grid.size), dtype=complex)
    curves = {}
    wide = grid.product_grid
    for (alpha, beta), coefficient in spec.lower.items():
        field_ = realize(coefficient, wide) if mollifier is None else mollify(coefficient, mollifier, wide)
        matrix += form_matrix(field_, alpha, beta, grid)
        if with_curves:
            op = assemble(field_, spec.m - sum(beta), spec.m - sum(alpha), grid)
            curves[(alpha, beta)] = relative_bound_curve(
                op, default_cutoffs(grid.bandlimit), rng=rng or np.random.default_rng(0x5EED))
    return LowerAssembly(matrix, curves)


def form_norm(matrix, grid, m):
    """Norm of *matrix* as a map ``H^m -> H^-m``."""
    weights = sobolev_weights(grid, -m)
    return spectral_norm(weights[:, None] * matrix * weights[None, :])


@dataclass(frozen=True)
class RelativeBoundCertificate:
    eps: float
    bound: float
    probes: int
    worst_residual: float
    hermitian: bool

    def to_dict(self):
        return {"eps": self.eps, "M": self.bound, "probes": self.probes,
                "worst_residual": self.worst_residual, "hermitian": self.hermitian}


def _top_eigenvalue(hermitian):
    size = hermitian.shape[0]
    return float(scipy.linalg.eigvalsh(hermitian, subset_by_index=[size - 1, size - 1])[0])


def certify_relative_bound(q, gram, eps, rng=None, probes=100, angles=64):
    """Smallest ``M`` with ``|(Qf,f)| <= eps (f,f)_gram + M (f,f)`` over a rotation grid.

    For Hermitian ``Q`` the two angles ``0, pi`` are exact; otherwise the
    grid maximum is divided by ``cos(pi/angles)`` so it dominates ``|(Qf,f)|``.
    """
    if not 0.0 < eps < 1.0:
        raise PreconditionError(f"relative bound needs 0 < eps < 1, got {eps}")
    scale = max(1.0, float(np.abs(q).max(initial=0.0)))
    hermitian = bool(np.abs(q - q.conj().T).max(initial=0.0) <= 1e-12 * scale)
    if hermitian:
        rotations, correction = (1.0, -1.0), 1.0
    else:
        rotations = np.exp(2j * np.pi * np.arange(angles) / angles)
        correction = 1.0 / math.cos(math.pi / angles)
    bound = 0.0
    for rotation in rotations:
        bound = max(bound, _top_eigenvalue(hermitian_part(rotation * q) * correction - eps * gram))
    rng = rng or np.random.default_rng(0x5EED)
    worst = -math.inf
    for _ in range(probes):
        f = rng.standard_normal(q.shape[0]) + 1j * rng.standard_normal(q.shape[0])
        f /= np.linalg.norm(f)
        lhs = abs(np.vdot(f, q @ f))
        rhs = eps * np.vdot(f, gram @ f).real + bound
        worst = max(worst, lhs - rhs)
        if lhs > rhs + 1e-9:
            raise NumericError(f"relative-bound certificate failed validation: {lhs} > {rhs}")
    log.debug("Formsum Lab: relative bound eps=%.3f M=%.6e", eps, bound)
    return RelativeBoundCertificate(float(eps), bound, probes, float(worst), hermitian)


# ---------------------------------------------------------------------------
# Sectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SectorEstimate:
    """``{ |Im z| <= tan(half_angle) (Re z + vertex) }``, containing the numerical range."""

    vertex: float
    half_angle: float
    probes: int

    def contains(self, value, tol=1e-9):
        value = complex(value)
        slack = tol * max(1.0, abs(value))
        if value.real + self.vertex < -slack:
            return False
        return abs(value.imag) <= math.tan(self.half_angle) * (value.real + self.vertex) + slack

    def reference_point(self):
        """Real point left of the vertex: ``-(M + 1 + tan(theta) M)``."""
        return -(self.vertex + 1.0 + math.tan(self.half_angle) * self.vertex)

    def to_dict(self):
        return {"vertex": self.vertex, "half_angle": self.half_angle, "probes": self.probes}


def support_values(matrix, angles=64):
    """``h(phi) = max Re(e^{-i phi} (Sx, x))`` for ``angles`` equispaced ``phi``."""
    phis = 2.0 * np.pi * np.arange(angles) / angles
    return phis, np.array([_top_eigenvalue(hermitian_part(np.exp(-1j * phi) * matrix)) for phi in phis])


def _outer_polygon(phis, heights):
    vertices = []
    for a, b, ha, hb in zip(phis, np.roll(phis, -1), heights, np.roll(heights, -1)):
        system = np.array([[math.cos(a), math.sin(a)], [math.cos(b), math.sin(b)]])
        x, y = np.linalg.solve(system, np.array([ha, hb]))
        vertices.append(complex(x, y))
    return np.array(vertices)


def _half_angle(points, vertex):
    return float(np.max(np.arctan2(np.abs(points.imag), np.maximum(points.real + vertex, 0.0))))


def sector_estimate(matrix, angles=64):
    """Fit the smallest vertex, then the smallest angle, to the outer field-of-values polygon."""
    phis, heights = support_values(matrix, angles)
    if not np.all(np.isfinite(heights)):
        raise SectorialityError("numerical-range support values are not finite")
    points = _outer_polygon(phis, heights)
    scale = max(1.0, float(np.abs(points).max()))
    points = np.where(np.abs(points.imag) <= 1e-9 * scale, points.real + 0j, points)
    vertex = max(0.0, -float(points.real.min()))
    theta = _half_angle(points, vertex)
    if theta >= math.pi / 2 - 1e-6:
        vertex += float(np.abs(points.imag).max())
        theta = _half_angle(points, vertex)
    if not theta < math.pi / 2:
        raise SectorialityError(f"no sector with half-angle below pi/2 (got {theta:.6f})")
    log.debug("Formsum Lab: sector vertex=%.6e theta=%.6f", vertex, theta)
    return SectorEstimate(vertex, theta, angles)


# ---------------------------------------------------------------------------
# Generalized sums
# ---------------------------------------------------------------------------

def numerical_range_floor(matrix):
    """``min Re (Ax, x)`` over unit ``x``."""
    return float(scipy.linalg.eigvalsh(hermitian_part(matrix), subset_by_index=[0, 0])[0])


@dataclass(frozen=True, eq=False)
class GeneralizedSum:
    t: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    t0: np.ndarray = field(repr=False)
    t0_inv_sqrt: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)
    sector: SectorEstimate
    t0_inv_sqrt_norm: float

    @property
    def rho(self):
        return self.sector.reference_point()

    @property
    def size(self):
        return self.s.shape[0]

    @property
    def is_hermitian(self):
        scale = max(1.0, float(np.abs(self.s).max()))
        return bool(np.abs(self.s - self.s.conj().T).max() <= 1e-9 * scale)

    def z_shifted(self, rho):
        """``T0^-1/2 (S - rho) T0^-1/2``."""
        return self.t0_inv_sqrt @ (self.s - rho * np.eye(self.size)) @ self.t0_inv_sqrt

    def z_floor(self, rho):
        return numerical_range_floor(self.z_shifted(rho))


def build_generalized_sum(t, q, angles=64):
    """``S = T + Q`` with ``T0 = (T + T*)/2`` and ``Z = T0^-1/2 S T0^-1/2``."""
    if t.shape != q.shape:
        raise DimensionError(f"T is {t.shape}, Q is {q.shape}")
    t0 = hermitian_part(t)
    values, vectors = scipy.linalg.eigh(t0)
    if values[0] <= 0:
        raise CoercivityError(f"Hermitian part of T is not positive definite (min eigenvalue {values[0]:.3e})")
    t0_inv_sqrt = (vectors * values ** -0.5) @ vectors.conj().T
    s = t + q
    z = t0_inv_sqrt @ s @ t0_inv_sqrt
    sector = sector_estimate(s, angles)
    return GeneralizedSum(t, q, t0, t0_inv_sqrt, z, s, sector, float(values[0] ** -0.5))


def resolvent(s, rho, sector=None, accept_risk=False):
    """``(S - rho)^-1`` by a dense solve with a residual check."""
    if sector is not None and sector.contains(rho) and not accept_risk:
        raise PreconditionError(f"rho={rho} lies inside the estimated sector")
    shifted = s - rho * np.eye(s.shape[0])
    identity = np.eye(s.shape[0])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            result = scipy.linalg.solve(shifted, identity)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SpectrumError(f"rho={rho} is numerically in the spectrum: {exc}") from exc
    residual = float(np.linalg.norm(shifted @ result - identity))
    if residual > 1e-9:
        raise SpectrumError(f"resolvent residual {residual:.3e} at rho={rho}")
    return result


@dataclass(frozen=True)
class ResolventIdentityCheck:
    residual: float
    lhs_norm: float

    @property
    def relative(self):
        return self.residual / self.lhs_norm if self.lhs_norm > 0 else self.residual

    @property
    def passed(self):
        return self.residual <= max(1e-10 * self.lhs_norm, 1e-14)

    def to_dict(self):
        return {"residual": self.residual, "lhs_norm": self.lhs_norm, "relative": self.relative}


def verify_resolvent_identity(limit, approx, rho):
    """Compare ``(S_n - rho)^-1 - (S - rho)^-1`` with its factorization through ``Z``.

    *limit* carries ``S = T + Q`` and *approx* carries ``S_n = T + Q_n``.
    """
    if limit.t.shape != approx.t.shape or not np.allclose(limit.t, approx.t, rtol=0.0, atol=1e-13):
        raise PreconditionError("both sums must share the principal part T")
    lhs = resolvent(approx.s, rho, accept_risk=True) - resolvent(limit.s, rho, accept_risk=True)
    half = limit.t0_inv_sqrt
    try:
        middle = half @ (limit.q - approx.q) @ half
        right = scipy.linalg.solve(limit.z_shifted(rho), half)
        left = scipy.linalg.solve(approx.z_shifted(rho), middle @ right)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError(f"rho={rho} makes a Z factor singular") from exc
    rhs = half @ left
    check = ResolventIdentityCheck(float(np.linalg.norm(lhs - rhs, 2)), float(np.linalg.norm(lhs, 2)))
    log.debug("Formsum Lab: resolvent identity residual=%.3e relative=%.3e", check.residual, check.relative)
    return check


def resolvent_difference_bound(limit, approx, rho, garding, grid, m):
    """``||T0^-1/2||^2 ||Q - Q_n||_{m->-m} / (c1 floor(Z_rho) floor(Z_n,rho))``."""
    floors = limit.z_floor(rho), approx.z_floor(rho)
    if min(floors) <= 0:
        raise PreconditionError(f"rho={rho} does not separate the numerical ranges from zero {floors}")
    gap = form_norm(limit.q - approx.q, grid, m)
    return limit.t0_inv_sqrt_norm ** 2 * gap / (garding.c1 * floors[0] * floors[1]), gap


def literal_chain_bound(limit, garding, gap):
    """``c1^-2 ||T0^-1/2||^2 ||Q - Q_n||_{m->-m}``, with ``c1`` standing in for both ``Z`` floors."""
    return limit.t0_inv_sqrt_norm ** 2 * gap / garding.c1 ** 2


# ---------------------------------------------------------------------------
# Binary matrix export
# ---------------------------------------------------------------------------

def export_matrix(path, matrix):
    """Write *matrix* as ``FSLM`` magic, uint64 rows, uint64 cols, row-major complex128."""
    matrix = np.asarray(matrix, dtype="<c16")
    if matrix.ndim != 2:
        raise DimensionError(f"only 2-d matrices can be exported, got {matrix.ndim}-d")
    path = Path(path)
    path.write_bytes(_HEADER.pack(MATRIX_MAGIC, *matrix.shape) + np.ascontiguousarray(matrix).tobytes())
    return path


def load_matrix(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise PreconditionError(f"{path} is too short for a matrix header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise PreconditionError(f"{path} is not a matrix file (magic {magic!r})")
    payload = data[_HEADER.size:]
    if len(payload) != rows * cols * 16:
        raise PreconditionError(f"{path} holds {len(payload)} payload bytes, expected {rows * cols * 16}")
    return np.frombuffer(payload, dtype="<c16").reshape(rows, cols).astype(complex)
