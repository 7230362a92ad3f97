"""Trigonometric trial spaces on the torus and the Sobolev scale over them.

Everything here is a pure function over immutable values.  A field on the
torus ``[0, 2pi)^n`` is stored by its coefficients against the orthonormal
basis ``e_j(x) = (2pi)^(-n/2) exp(i j.x)``, ``|j|_inf <= N``, listed in
lexicographic mode order from ``(-N, ..., -N)`` to ``(N, ..., N)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Errors shared by every module of the lab
# ---------------------------------------------------------------------------

class LabError(Exception):
    """Root of all errors raised by the lab."""


class PreconditionError(LabError, ValueError):
    """A pre-condition or a lemma hypothesis does not hold."""


class DimensionError(PreconditionError):
    """Operands live on incompatible grids or dimensions."""


class CoercivityError(PreconditionError):
    """The principal part is not coercive (Garding constant <= 0)."""


class NumericError(LabError, ArithmeticError):
    """A numerical procedure failed."""


class ConvergenceFailure(NumericError):
    """An iteration stopped before reaching its tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class SectorialityError(NumericError):
    """No sector with half-angle below pi/2 contains the numerical range."""


class SpectrumError(NumericError):
    """The requested resolvent point lies in (or numerically at) the spectrum."""


# ---------------------------------------------------------------------------
# Grids, multi-indices and weights
# ---------------------------------------------------------------------------

def _frozen(array):
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class TorusGrid:
    """Modes ``j`` with ``|j|_inf <= bandlimit`` on the ``dimension``-torus."""

    dimension: int
    bandlimit: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise DimensionError(f"torus dimension must be 1 or 2, got {self.dimension}")
        if int(self.bandlimit) != self.bandlimit or self.bandlimit < 1:
            raise PreconditionError(f"bandlimit must be an integer >= 1, got {self.bandlimit}")

    @property
    def side(self):
        return 2 * self.bandlimit + 1

    @property
    def size(self):
        return self.side ** self.dimension

    @property
    def shape(self):
        return (self.side,) * self.dimension

    @property
    def quadrature_size(self):
        """Default number of physical points per axis (exact for products of two fields)."""
        return 4 * self.bandlimit + 1

    @cached_property
    def modes(self):
        """Integer array of shape ``(size, dimension)`` in lexicographic order."""
        axis = range(-self.bandlimit, self.bandlimit + 1)
        return _frozen(np.array(list(itertools.product(axis, repeat=self.dimension)),
                                dtype=np.int64))

    @cached_property
    def mode_norm_sq(self):
        return _frozen((self.modes ** 2).sum(axis=1).astype(float))

    @cached_property
    def mode_sup(self):
        return _frozen(np.abs(self.modes).max(axis=1))

    def index_of(self, mode):
        mode = tuple(int(m) for m in np.atleast_1d(mode))
        if len(mode) != self.dimension:
            raise DimensionError(f"mode {mode} does not match dimension {self.dimension}")
        if max(abs(m) for m in mode) > self.bandlimit:
            raise PreconditionError(f"mode {mode} is outside bandlimit {self.bandlimit}")
        index = 0
        for m in mode:
            index = index * self.side + (m + self.bandlimit)
        return index

    def with_bandlimit(self, bandlimit):
        return TorusGrid(self.dimension, bandlimit)

    @property
    def product_grid(self):
        """Band ``2N``: every difference ``i - j`` of two in-band modes.

        Coefficients entering a Galerkin product on this grid are realized here.
        """
        return self.with_bandlimit(2 * self.bandlimit)


@dataclass(frozen=True)
class MultiIndex:
    entries: tuple

    def __post_init__(self):
        entries = tuple(int(a) for a in np.atleast_1d(self.entries))
        if any(a < 0 for a in entries):
            raise PreconditionError(f"multi-index entries must be >= 0, got {entries}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def zero(cls, dimension):
        return cls((0,) * dimension)

    @classmethod
    def along(cls, axis, order, dimension):
        """``order`` derivatives along one axis."""
        entries = [0] * dimension
        entries[axis] = order
        return cls(tuple(entries))

    @property
    def dimension(self):
        return len(self.entries)

    @property
    def order(self):
        return sum(self.entries)

    def __str__(self):
        return "".join(str(a) for a in self.entries)


def as_multi_index(value, dimension):
    """Coerce an int, a sequence or a ``MultiIndex`` to a ``MultiIndex`` of *dimension*."""
    if isinstance(value, MultiIndex):
        alpha = value
    elif np.isscalar(value):
        alpha = MultiIndex.along(0, int(value), dimension)
    else:
        alpha = MultiIndex(tuple(value))
    if alpha.dimension != dimension:
        raise DimensionError(f"multi-index {alpha.entries} does not match dimension {dimension}")
    return alpha


@dataclass(frozen=True)
class SobolevWeight:
    """The Bessel symbol ``(1 + |j|^2)^(s/2)`` sampled on a grid."""

    grid: TorusGrid
    s: float

    @cached_property
    def values(self):
        return _frozen((1.0 + self.grid.mode_norm_sq) ** (self.s / 2.0))

    def __mul__(self, other):
        if other.grid != self.grid:
            raise DimensionError("weights live on different grids")
        return SobolevWeight(self.grid, self.s + other.s)


def sobolev_weights(grid, s):
    return SobolevWeight(grid, s).values


def derivative_symbol(grid, alpha):
    """Symbol of ``D^alpha = i^|alpha| d^alpha``: ``prod_i (-j_i)^alpha_i``."""
    alpha = as_multi_index(alpha, grid.dimension)
    symbol = np.ones(grid.size)
    for axis, a in enumerate(alpha.entries):
        if a:
            symbol = symbol * (-grid.modes[:, axis].astype(float)) ** a
    return symbol


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: TorusGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=complex).reshape(-1)
        if coeffs.size != self.grid.size:
            raise DimensionError(
                f"{coeffs.size} coefficients do not fit a grid of size {self.grid.size}")
        if not np.all(np.isfinite(coeffs)):
            raise NumericError("field coefficients must be finite")
        object.__setattr__(self, "coeffs", _frozen(coeffs))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.size, dtype=complex))

    @classmethod
    def basis(cls, grid, mode):
        coeffs = np.zeros(grid.size, dtype=complex)
        coeffs[grid.index_of(mode)] = 1.0
        return cls(grid, coeffs)

    @classmethod
    def constant(cls, grid, value=1.0):
        """The constant function *value* (its zero mode is ``value * (2pi)^(n/2)``)."""
        coeffs = np.zeros(grid.size, dtype=complex)
        coeffs[grid.index_of((0,) * grid.dimension)] = value * TWO_PI ** (grid.dimension / 2.0)
        return cls(grid, coeffs)

    @property
    def bandlimit(self):
        return self.grid.bandlimit

    def table(self):
        """Coefficients reshaped to ``(2N+1,) * n`` with mode ``-N`` at index 0."""
        return self.coeffs.reshape(self.grid.shape)

    def norm(self, s=0.0):
        return math.sqrt(sobolev_inner(self, self, s).real)

    def conjugate(self):
        """Coefficients of the complex-conjugate function: ``conj(f)^_j = conj(f^_-j)``."""
        return SpectralField(self.grid, np.conj(self.coeffs[::-1]))

    def rebanded(self, grid):
        """The same modes on another grid of equal dimension (zero padded or truncated)."""
        if grid.dimension != self.grid.dimension:
            raise DimensionError("cannot reband across dimensions")
        common = min(grid.bandlimit, self.grid.bandlimit)
        out = np.zeros(grid.shape, dtype=complex)
        src = tuple(slice(self.grid.bandlimit - common, self.grid.bandlimit + common + 1)
                    for _ in range(grid.dimension))
        dst = tuple(slice(grid.bandlimit - common, grid.bandlimit + common + 1)
                    for _ in range(grid.dimension))
        out[dst] = self.table()[src]
        return SpectralField(grid, out.reshape(-1))

    def scaled(self, factors):
        return SpectralField(self.grid, self.coeffs * factors)

    def __add__(self, other):
        _require_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _require_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def to_dict(self):
        return {
            "n": self.grid.dimension,
            "N": self.grid.bandlimit,
            "coeffs": [[float(c.real), float(c.imag)] for c in self.coeffs],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            grid = TorusGrid(int(data["n"]), int(data["N"]))
            coeffs = np.array([complex(re, im) for re, im in data["coeffs"]])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, PreconditionError):
                raise
            raise PreconditionError(f"malformed field document: {exc}") from exc
        return cls(grid, coeffs)


def _require_same_grid(f, g):
    if f.grid != g.grid:
        raise DimensionError(f"grid mismatch: {f.grid} vs {g.grid}")


# ---------------------------------------------------------------------------
# Sobolev scale
# ---------------------------------------------------------------------------

def sobolev_inner(f, g, s):
    """Return ``(f, g)_s = sum_j (1+|j|^2)^s f^_j conj(g^_j)``."""
    _require_same_grid(f, g)
    weights = (1.0 + f.grid.mode_norm_sq) ** s
    return complex(np.sum(weights * f.coeffs * np.conj(g.coeffs)))


def apply_bessel(f, a):
    """Apply ``(-Delta + 1)^(a/2)``; an isometry from ``H^s`` onto ``H^(s-a)``."""
    return f.scaled(sobolev_weights(f.grid, a))


def apply_derivative(f, alpha):
    return f.scaled(derivative_symbol(f.grid, alpha))


def equivalent_inner(f, g, s):
    """The integer-order inner product ``sum_{|alpha|<=s} (D^alpha f, D^alpha g)``.

    It is equivalent to ``(f, g)_s``: mode-wise it keeps each monomial of the
    multinomial expansion of ``(1+|j|^2)^s`` once, so it is bounded above by
    ``(f, f)_s`` and below by ``(f, f)_s`` over the largest multinomial
    coefficient (see :func:`equivalence_constant`).
    """
    _require_same_grid(f, g)
    if int(s) != s or s < 0:
        raise PreconditionError(f"equivalent inner product needs an integer s >= 0, got {s}")
    total = np.zeros(f.grid.size)
    for alpha in _multi_indices_up_to(int(s), f.grid.dimension):
        total = total + derivative_symbol(f.grid, alpha) ** 2
    return complex(np.sum(total * f.coeffs * np.conj(g.coeffs)))


def equivalence_constant(s, dimension):
    """Lower constant ``c_s`` in ``c_s ||f||_s^2 <= (f, f)'_s``."""
    largest = 1
    for alpha in _multi_indices_up_to(int(s), dimension):
        rest = int(s) - alpha.order
        coeff = math.factorial(int(s)) // (math.prod(math.factorial(a) for a in alpha.entries)
                                          * math.factorial(rest))
        largest = max(largest, coeff)
    return 1.0 / largest


def _multi_indices_up_to(order, dimension):
    for entries in itertools.product(range(order + 1), repeat=dimension):
        if sum(entries) <= order:
            yield MultiIndex(entries)


# ---------------------------------------------------------------------------
# Multiplication
# ---------------------------------------------------------------------------

def convolution_matrix(phi, grid=None):
    """Matrix of ``f -> phi f`` on *grid*, truncated back to the band.

    Entry ``[i, j]`` is ``(2pi)^(-n/2) phi^_{i-j}``; differences outside the
    band of *phi* contribute zero.  *phi* may carry a wider band than *grid*.
    """
    grid = grid or phi.grid
    if phi.grid.dimension != grid.dimension:
        raise DimensionError(
            f"coefficient dimension {phi.grid.dimension} does not match grid {grid.dimension}")
    reach = phi.grid.bandlimit
    diffs = grid.modes[:, None, :] - grid.modes[None, :, :]
    inside = np.all(np.abs(diffs) <= reach, axis=-1)
    index = np.clip(diffs + reach, 0, 2 * reach)
    values = phi.table()[tuple(index[..., a] for a in range(grid.dimension))]
    return np.where(inside, values, 0.0) * TWO_PI ** (-grid.dimension / 2.0)


def pointwise_product(phi, f):
    """Galerkin product ``phi f`` projected back to the band of *f*."""
    return SpectralField(f.grid, convolution_matrix(phi, f.grid) @ f.coeffs)


# ---------------------------------------------------------------------------
# Physical space
# ---------------------------------------------------------------------------

def quadrature_nodes(points):
    return TWO_PI * np.arange(points) / points


def _synthesis_matrix(bandlimit, points):
    j = np.arange(-bandlimit, bandlimit + 1)
    return np.exp(1j * np.outer(quadrature_nodes(points), j)) / math.sqrt(TWO_PI)


def _apply_per_axis(matrix, values, dimension):
    for axis in range(dimension):
        values = np.moveaxis(np.tensordot(matrix, values, axes=([1], [axis])), 0, axis)
    return values


def synthesize(f, points=None):
    """Samples of *f* on the uniform ``points^n`` grid ``x_p = 2pi p / points``."""
    points = points or f.grid.quadrature_size
    matrix = _synthesis_matrix(f.grid.bandlimit, points)
    return _apply_per_axis(matrix, f.table(), f.grid.dimension)


def project(grid, samples):
    """Coefficients of uniform-grid *samples* by trapezoidal quadrature.

    Exact for band-limited data whenever ``points >= 2N + 1``.
    """
    samples = np.asarray(samples, dtype=complex)
    points = samples.shape[0]
    if samples.shape != (points,) * grid.dimension:
        raise DimensionError(f"samples of shape {samples.shape} do not match dimension {grid.dimension}")
    if points < grid.side:
        raise PreconditionError(f"{points} points per axis cannot resolve bandlimit {grid.bandlimit}")
    matrix = (TWO_PI / points) * _synthesis_matrix(grid.bandlimit, points).conj().T
    return SpectralField(grid, _apply_per_axis(matrix, samples, grid.dimension).reshape(-1))


def l2_quadrature_norm(f, points=None):
    points = points or f.grid.quadrature_size
    values = synthesize(f, points)
    return math.sqrt(float(np.sum(np.abs(values) ** 2)) * (TWO_PI / points) ** f.grid.dimension)


# ---------------------------------------------------------------------------
# Operators between Sobolev spaces
# ---------------------------------------------------------------------------

def weighted_norm(matrix, grid, source, target):
    """Norm of a coefficient-space *matrix* as a map ``H^source -> H^target``."""
    w_in = sobolev_weights(grid, -source)
    w_out = sobolev_weights(grid, target)
    return float(np.linalg.norm(w_out[:, None] * matrix * w_in[None, :], 2))


def interpolation_check(matrix, grid, first, second, theta):
    """Hilbert-scale interpolation of operator norms.

    *first* and *second* are ``(source, target)`` pairs.  Returns
    ``(lhs, rhs)`` with ``lhs`` the norm at the interpolated pair and
    ``rhs = ||F||_first^theta * ||F||_second^(1-theta)``.
    """
    if not 0.0 <= theta <= 1.0:
        raise PreconditionError(f"interpolation parameter must lie in [0, 1], got {theta}")
    (t1, s1), (t2, s2) = first, second
    lhs = weighted_norm(matrix, grid, theta * t1 + (1 - theta) * t2, theta * s1 + (1 - theta) * s2)
    rhs = weighted_norm(matrix, grid, t1, s1) ** theta * weighted_norm(matrix, grid, t2, s2) ** (1 - theta)
    return lhs, rhs


def random_field(grid, rng, decay=0.0):
    """Complex Gaussian coefficients damped by ``(1+|j|^2)^(-decay/2)``."""
    raw = rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size)
    return SpectralField(grid, raw * sobolev_weights(grid, -decay))

