"""Catalog of coefficient distributions and their Fourier realizations.

A ``CoefficientSpec`` is a symbolic description (a delta, a derivative of a
delta, a Fourier table, samples of a smooth function, a tensor product, or
a finite sum of those) that can be realized on any ``TorusGrid``.
Mollification is mode-wise damping of the realization.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from spectral_core import (
    TWO_PI,
    DimensionError,
    NumericError,
    PreconditionError,
    SpectralField,
    TorusGrid,
    apply_bessel,
    as_multi_index,
    derivative_symbol,
    project,
    quadrature_nodes,
    synthesize,
)

log = logging.getLogger(__name__)

VARIANTS = ("delta", "delta_derivative", "fourier_table", "smooth_samples",
            "tensor_product", "sum")

# Smooth functions that can be named in scenario files.
NAMED_FUNCTIONS = {
    "one": lambda t: np.ones_like(t),
    "sin": np.sin,
    "cos": np.cos,
}


@dataclass(frozen=True, eq=False)
class CoefficientSpec:
    variant: str
    label: str = ""
    scale: complex = 1.0
    x0: tuple = ()
    order: tuple = ()
    field: Optional[SpectralField] = None
    function: Optional[Callable] = None
    function_name: Optional[str] = None
    axis: int = 0
    frequency: int = 1
    dimension_hint: int = 1
    factors: tuple = ()
    psi_sup: Optional[float] = None
    terms: tuple = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise PreconditionError(f"unknown coefficient variant {self.variant!r}")

    @property
    def dimension(self):
        if self.variant in ("delta", "delta_derivative"):
            return len(self.x0)
        if self.variant == "fourier_table":
            return self.field.grid.dimension
        if self.variant == "smooth_samples":
            return self.dimension_hint
        if self.variant == "tensor_product":
            return sum(f.dimension for f in self.factors)
        return self.terms[0].dimension

    @property
    def is_singular(self):
        """True for variants that are not functions (deltas and their derivatives)."""
        if self.variant in ("delta", "delta_derivative"):
            return True
        if self.variant in ("tensor_product", "sum"):
            return any(part.is_singular for part in self.factors + self.terms)
        return False

    def scaled(self, factor):
        return dataclasses.replace(self, scale=self.scale * factor)

    def __str__(self):
        return self.label or self.variant


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def delta(x0=(0.0,), scale=1.0, label=""):
    x0 = tuple(float(x) for x in np.atleast_1d(x0))
    return CoefficientSpec("delta", label=label or f"delta({_fmt(x0)})", scale=scale, x0=x0)


def delta_derivative(x0=(0.0,), order=1, scale=1.0, label=""):
    x0 = tuple(float(x) for x in np.atleast_1d(x0))
    alpha = as_multi_index(order, len(x0))
    return CoefficientSpec("delta_derivative", label=label or f"D^{alpha} delta({_fmt(x0)})",
                           scale=scale, x0=x0, order=alpha.entries)


def fourier_table(field, scale=1.0, label=""):
    return CoefficientSpec("fourier_table", label=label or "table", scale=scale, field=field)


def smooth_samples(function, dimension=1, scale=1.0, label=""):
    """A smooth coefficient given by a callable on coordinate arrays ``f(*xs)``."""
    return CoefficientSpec("smooth_samples", label=label or getattr(function, "__name__", "smooth"),
                           scale=scale, function=function, dimension_hint=dimension)


def named_function(name, dimension=1, axis=0, frequency=1, scale=1.0, label=""):
    """``scale * name(frequency * x_axis)`` for a name in ``NAMED_FUNCTIONS``."""
    if name not in NAMED_FUNCTIONS:
        raise PreconditionError(f"unknown smooth function {name!r}; known: {sorted(NAMED_FUNCTIONS)}")
    if not 0 <= axis < dimension:
        raise DimensionError(f"axis {axis} outside dimension {dimension}")
    base = NAMED_FUNCTIONS[name]

    def sampled(*xs):
        return base(frequency * xs[axis])

    text = name if name == "one" else f"{name}({frequency}x{axis})"
    return CoefficientSpec("smooth_samples", label=label or text, scale=scale, function=sampled,
                           function_name=name, axis=axis, frequency=frequency,
                           dimension_hint=dimension)


def constant(value=1.0, dimension=1):
    return named_function("one", dimension=dimension, scale=value, label=f"const({value})")


def coefficient_sum(*terms, label=""):
    if not terms:
        raise PreconditionError("a coefficient sum needs at least one term")
    dims = {t.dimension for t in terms}
    if len(dims) > 1:
        raise DimensionError(f"summands live in different dimensions {sorted(dims)}")
    return CoefficientSpec("sum", label=label or " + ".join(str(t) for t in terms), terms=tuple(terms))


def _fmt(values):
    return ",".join(f"{v:g}" for v in values)


# ---------------------------------------------------------------------------
# Realization
# ---------------------------------------------------------------------------

def realize(spec, grid):
    """Band-limited Fourier coefficients of *spec* on *grid*."""
    if spec.dimension != grid.dimension:
        raise DimensionError(
            f"coefficient {spec} has {spec.dimension} variable(s), grid has {grid.dimension}")
    if spec.variant in ("delta", "delta_derivative"):
        phase = grid.modes @ np.asarray(spec.x0)
        coeffs = np.exp(-1j * phase) * TWO_PI ** (-grid.dimension / 2.0)
        if spec.variant == "delta_derivative":
            # (D^r delta, f) = (-1)^|r| D^r f at x0
            coeffs = coeffs * (-1.0) ** sum(spec.order) * derivative_symbol(grid, spec.order)
        field = SpectralField(grid, coeffs)
    elif spec.variant == "fourier_table":
        field = spec.field.rebanded(grid)
    elif spec.variant == "smooth_samples":
        points = grid.quadrature_size
        axes = np.meshgrid(*([quadrature_nodes(points)] * grid.dimension), indexing="ij")
        samples = np.broadcast_to(spec.function(*axes), axes[0].shape)
        field = project(grid, samples)
    elif spec.variant == "tensor_product":
        phi, psi = spec.factors
        line = TorusGrid(1, grid.bandlimit)
        outer = np.outer(realize(phi, line).coeffs, realize(psi, line).coeffs)
        field = SpectralField(grid, outer.reshape(-1))
    else:
        field = realize(spec.terms[0], grid)
        for term in spec.terms[1:]:
            field = field + realize(term, grid)
    return field * spec.scale if spec.scale != 1.0 else field


@dataclass(frozen=True)
class MollifierSpec:
    """Mode-wise damping: ``fejer`` (cutoff M) or ``gaussian`` (width h)."""

    kind: str
    parameter: float

    def __post_init__(self):
        if self.kind not in ("fejer", "gaussian"):
            raise PreconditionError(f"unknown mollifier {self.kind!r}")
        if not self.parameter >= 0:
            raise PreconditionError(f"mollifier parameter must be >= 0, got {self.parameter}")

    @property
    def label(self):
        symbol = "M" if self.kind == "fejer" else "h"
        return f"{self.kind}({symbol}={self.parameter:g})"

    def damping(self, grid):
        if self.kind == "gaussian":
            return np.exp(-(self.parameter ** 2) * grid.mode_norm_sq)
        if self.parameter >= grid.bandlimit:
            return np.ones(grid.size)
        factors = np.clip(1.0 - np.abs(grid.modes) / (self.parameter + 1.0), 0.0, 1.0)
        return factors.prod(axis=1)

    def to_dict(self):
        return {"kind": self.kind, "parameter": self.parameter}

    @classmethod
    def from_dict(cls, data):
        return cls(str(data["kind"]), float(data["parameter"]))


def mollify(spec, mollifier, grid):
    """Smooth approximant of *spec*: its realization damped mode by mode."""
    return realize(spec, grid).scaled(mollifier.damping(grid))


# ---------------------------------------------------------------------------
# L_p Sobolev norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LpNormRequest:
    gamma: float
    p: float
    quadrature_size: Optional[int] = None

    def __post_init__(self):
        if not (1.0 < self.p < math.inf):
            raise PreconditionError(f"L_p norms need 1 < p < inf, got p={self.p}")


def _lp_value(field, gamma, p, points):
    values = np.abs(synthesize(apply_bessel(field, gamma), points))
    integral = float(np.sum(values ** p)) * (TWO_PI / points) ** field.grid.dimension
    value = integral ** (1.0 / p)
    if not math.isfinite(value):
        raise NumericError(f"L_{p} quadrature is not finite")
    return value


def lp_sobolev_norm(field, req):
    """``||(-Delta + 1)^(gamma/2) field||_{L_p}`` by trapezoidal quadrature.

    The uniform grid has ``req.quadrature_size`` points per axis (default
    ``4N + 1``); for even integer ``p <= 4`` the quadrature is exact.
    """
    points = req.quadrature_size or field.grid.quadrature_size
    if points < field.grid.quadrature_size:
        raise PreconditionError(
            f"quadrature size {points} is below 4N+1 = {field.grid.quadrature_size}")
    return _lp_value(field, req.gamma, req.p, points)


def lp_quadrature_error(field, req):
    """Change of the L_p value when the quadrature grid is doubled."""
    points = req.quadrature_size or field.grid.quadrature_size
    error = abs(_lp_value(field, req.gamma, req.p, 2 * points + 1) - _lp_value(field, req.gamma, req.p, points))
    log.debug("Formsum Lab: L_%g quadrature on %d points changes by %.3e when doubled", req.p, points, error)
    return error


# ---------------------------------------------------------------------------
# Tensor products and admissible classes
# ---------------------------------------------------------------------------

def sup_estimate(spec, bandlimit=64):
    """Sampled ``max |psi|`` of a one-variable coefficient."""
    if spec.dimension != 1:
        raise DimensionError("sup estimates are for one-variable coefficients")
    line = TorusGrid(1, bandlimit)
    return float(np.abs(synthesize(realize(spec, line), 16 * bandlimit + 1)).max())


def tensorize(phi, psi, psi_sup=None):
    """``phi(x) psi(y)`` on the 2-torus, recording ``||psi||_inf`` for the bound check."""
    if phi.dimension != 1 or psi.dimension != 1:
        raise DimensionError("tensor products are implemented for one variable per factor")
    if psi.is_singular:
        raise PreconditionError(f"the bounded factor {psi} must be a function")
    if psi_sup is None:
        psi_sup = sup_estimate(psi)
    return CoefficientSpec("tensor_product", label=f"{phi} x {psi}", factors=(phi, psi),
                           psi_sup=float(psi_sup))


@dataclass(frozen=True)
class AdmissibleClass:
    """Sobolev class ``H_p^gamma`` sufficient for a lower-order coefficient."""

    gamma: float
    p_min: float
    p_closed: bool

    def admits(self, p):
        return p > self.p_min or (self.p_closed and p == self.p_min)


def admissible_sobolev_class(alpha, beta, m, n):
    """Sufficient class for ``c_{alpha,beta}`` in an operator of order ``2m`` on the n-torus.

    Smoothness ``max(|alpha|,|beta|) - m``; integrability
    ``p > max(2, n / (m - min(|alpha|,|beta|)))``, the endpoint being
    admitted when ``m - max(|alpha|,|beta|) != n/2``.
    """
    a = as_multi_index(alpha, n).order
    b = as_multi_index(beta, n).order
    if a + b >= 2 * m or max(a, b) > m:
        raise PreconditionError(f"({a},{b}) is not a lower-order pair for m={m}")
    high, low = max(a, b), min(a, b)
    p_min = max(2.0, n / (m - low))
    return AdmissibleClass(gamma=float(high - m), p_min=p_min, p_closed=(m - high) != n / 2)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _complex_to_json(value):
    value = complex(value)
    return value.real if value.imag == 0 else [value.real, value.imag]


def _complex_from_json(value):
    if isinstance(value, (list, tuple)):
        return complex(value[0], value[1])
    return complex(value)


def spec_to_dict(spec):
    data = {"variant": spec.variant}
    if spec.label:
        data["label"] = spec.label
    if spec.scale != 1.0:
        data["scale"] = _complex_to_json(spec.scale)
    if spec.variant in ("delta", "delta_derivative"):
        data["x0"] = list(spec.x0)
        if spec.variant == "delta_derivative":
            data["order"] = list(spec.order)
    elif spec.variant == "fourier_table":
        data["field"] = spec.field.to_dict()
    elif spec.variant == "smooth_samples":
        if spec.function_name is None:
            raise PreconditionError(f"smooth coefficient {spec} has no serializable name")
        data.update(function=spec.function_name, dimension=spec.dimension_hint,
                    axis=spec.axis, frequency=spec.frequency)
    elif spec.variant == "tensor_product":
        data["phi"] = spec_to_dict(spec.factors[0])
        data["psi"] = spec_to_dict(spec.factors[1])
        data["psi_sup"] = spec.psi_sup
    else:
        data["terms"] = [spec_to_dict(t) for t in spec.terms]
    return data


def spec_from_dict(data):
    """Inverse of :func:`spec_to_dict`; raises ``PreconditionError`` on bad documents."""
    try:
        variant = data["variant"]
        scale = _complex_from_json(data.get("scale", 1.0))
        label = data.get("label", "")
        if variant == "delta":
            spec = delta(data.get("x0", [0.0]), label=label)
        elif variant == "delta_derivative":
            spec = delta_derivative(data.get("x0", [0.0]), data.get("order", 1), label=label)
        elif variant == "fourier_table":
            spec = fourier_table(SpectralField.from_dict(data["field"]), label=label)
        elif variant == "smooth_samples":
            spec = named_function(data["function"], dimension=int(data.get("dimension", 1)),
                                  axis=int(data.get("axis", 0)),
                                  frequency=int(data.get("frequency", 1)), label=label)
        elif variant == "tensor_product":
            spec = tensorize(spec_from_dict(data["phi"]), spec_from_dict(data["psi"]),
                             data.get("psi_sup"))
        elif variant == "sum":
            spec = coefficient_sum(*(spec_from_dict(t) for t in data["terms"]), label=label)
        else:
            raise PreconditionError(f"unknown coefficient variant {variant!r}")
    except (KeyError, TypeError, IndexError) as exc:
        raise PreconditionError(f"malformed coefficient document {data!r}: {exc}") from exc
    return spec.scaled(scale) if scale != 1.0 else spec
