"""Multipliers between Sobolev spaces on the truncated trial space.

``assemble`` builds the matrix of ``f -> phi f`` from ``H^k`` to ``H^-l`` in
orthonormalized coordinates; its spectral norm is the truncated multiplier
norm.  The rest of the module checks the structural lemmas on top of it.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from coefficients import (
    LpNormRequest,
    MollifierSpec,
    delta,
    lp_quadrature_error,
    lp_sobolev_norm,
    realize,
    tensorize,
)
from spectral_core import (
    ConvergenceFailure,
    MultiIndex,
    NumericError,
    PreconditionError,
    SpectralField,
    TorusGrid,
    as_multi_index,
    convolution_matrix,
    derivative_symbol,
    pointwise_product,
    random_field,
    sobolev_weights,
)

log = logging.getLogger(__name__)

DENSE_SVD_LIMIT = 2048


@dataclass(frozen=True, eq=False)
class MultiplierOperator:
    phi: SpectralField
    k: float
    l: float
    grid: TorusGrid
    matrix: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.grid.size


def assemble(phi, k, l, grid=None):
    """``A[i, j] = (1+|i|^2)^(-l/2) (2pi)^(-n/2) phi^_{i-j} (1+|j|^2)^(-k/2)``."""
    if k < 0 or l < 0:
        raise PreconditionError(f"multiplier orders must be >= 0, got k={k}, l={l}")
    grid = grid or phi.grid
    conv = convolution_matrix(phi, grid)
    matrix = sobolev_weights(grid, -l)[:, None] * conv * sobolev_weights(grid, -k)[None, :]
    matrix.flags.writeable = False
    return MultiplierOperator(phi, float(k), float(l), grid, matrix)


def _power_norm(matrix, tol=1e-12, max_iter=5000):
    """Largest singular value by power iteration on ``A* A``."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal(matrix.shape[1]) + 1j * rng.standard_normal(matrix.shape[1])
    x /= np.linalg.norm(x)
    sigma_old = 0.0
    for iteration in range(max_iter):
        y = matrix @ x
        sigma = float(np.linalg.norm(y))
        if sigma == 0.0:
            return 0.0
        x = matrix.conj().T @ y
        x /= np.linalg.norm(x)
        if abs(sigma - sigma_old) <= tol * sigma:
            log.debug("Formsum Lab: power iteration converged after %d steps", iteration + 1)
            return sigma
        sigma_old = sigma
    raise ConvergenceFailure("power iteration did not converge", abs(sigma - sigma_old) / sigma)


def spectral_norm(matrix):
    """``||matrix||_2``: dense SVD up to ``DENSE_SVD_LIMIT`` columns, power iteration beyond."""
    if matrix.size == 0:
        return 0.0
    if max(matrix.shape) <= DENSE_SVD_LIMIT:
        return float(scipy.linalg.svdvals(matrix)[0])
    log.debug("Formsum Lab: power iteration on a %dx%d matrix", *matrix.shape)
    return _power_norm(matrix)


def multiplier_norm(op):
    return spectral_norm(op.matrix)


def check_symmetry(phi, k, l, grid=None):
    """Return ``(||phi||_{M[k,-l]}, ||phi||_{M[l,-k]})``; equal up to rounding."""
    return multiplier_norm(assemble(phi, k, l, grid)), multiplier_norm(assemble(phi, l, k, grid))


def check_interpolation(phi, k1, l1, k2, l2, grid=None):
    """``||phi||_{M[k2,-l2]} <= ||phi||_{M[k1,-l1]}`` for a balanced pair ``(k2, l2)``."""
    if not k2 < k1:
        raise PreconditionError(f"need k2 < k1, got k1={k1}, k2={k2}")
    if not math.isclose(k1 + l1, k2 + l2, rel_tol=0.0, abs_tol=1e-12):
        raise PreconditionError(f"need k1 + l1 == k2 + l2, got {k1 + l1} and {k2 + l2}")
    if not l1 <= k2:
        raise PreconditionError(f"(k2, l2)=({k2}, {l2}) is not between ({k1}, {l1}) and ({l1}, {k1})")
    outer = multiplier_norm(assemble(phi, k1, l1, grid))
    inner = multiplier_norm(assemble(phi, k2, l2, grid))
    log.debug("Formsum Lab: interpolation M[%g,-%g]=%.6e <= M[%g,-%g]=%.6e",
              k2, l2, inner, k1, l1, outer)
    return inner <= outer * (1.0 + 1e-9)


# ---------------------------------------------------------------------------
# Relative bounds (M_0 evidence)
# ---------------------------------------------------------------------------

def tail_norm(op, cutoff):
    """Norm of ``A`` restricted to input modes with ``|j|_inf > cutoff``."""
    return spectral_norm(op.matrix[:, op.grid.mode_sup > cutoff])


def _head_witness(op, cutoff):
    head = op.matrix[:, op.grid.mode_sup <= cutoff]
    lift = (1.0 + op.grid.dimension * cutoff ** 2) ** (op.k / 2.0)
    return spectral_norm(head) * lift


@dataclass
class RelativeBoundCurve:
    """``||M_phi f||_-l <= eps ||f||_k + witness ||f||_0`` per cutoff."""

    k: float
    l: float
    bandlimit: int
    cutoffs: list
    eps: list
    witness: list
    full_norm: float
    probes: int = 0

    def to_dict(self):
        return {
            "k": self.k,
            "l": self.l,
            "bandlimit": self.bandlimit,
            "full_norm": self.full_norm,
            "probes": self.probes,
            "rows": [{"cutoff": c, "eps": e, "witness": w}
                     for c, e, w in zip(self.cutoffs, self.eps, self.witness)],
        }


def relative_bound_curve(op, cutoffs, rng=None, probes=100):
    """Split ``A`` at each cutoff into a small tail and a bounded head.

    The certificate is checked on *probes* random in-band vectors; a
    violation is a bug and raises ``NumericError``.
    """
    cutoffs = [int(c) for c in cutoffs]
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise PreconditionError(f"cutoffs must be strictly ascending, got {cutoffs}")
    if cutoffs and (cutoffs[0] < 0 or cutoffs[-1] > op.grid.bandlimit):
        raise PreconditionError(f"cutoffs must lie in [0, {op.grid.bandlimit}], got {cutoffs}")
    eps = [tail_norm(op, c) for c in cutoffs]
    witness = [_head_witness(op, c) for c in cutoffs]
    curve = RelativeBoundCurve(op.k, op.l, op.grid.bandlimit, cutoffs, eps, witness,
                               multiplier_norm(op), probes)
    if probes:
        _validate_curve(op, curve, rng or np.random.default_rng(0x5EED), probes)
    return curve


def _validate_curve(op, curve, rng, probes):
    to_k = sobolev_weights(op.grid, op.k)
    for _ in range(probes):
        f = random_field(op.grid, rng).coeffs
        image = float(np.linalg.norm(op.matrix @ (to_k * f)))
        norm_k = float(np.linalg.norm(to_k * f))
        norm_0 = float(np.linalg.norm(f))
        for cutoff, e, w in zip(curve.cutoffs, curve.eps, curve.witness):
            bound = e * norm_k + w * norm_0
            if image > bound * (1.0 + 1e-9) + 1e-12:
                raise NumericError(
                    f"relative-bound certificate violated at cutoff {cutoff}: {image} > {bound}")


def is_small_relative(op, threshold=0.1, cutoff=None):
    """Truncated M_0 test: the tail norm at ``N/2`` is below *threshold*."""
    cutoff = op.grid.bandlimit // 2 if cutoff is None else cutoff
    return tail_norm(op, cutoff) < threshold


@dataclass(frozen=True)
class CompactnessEvidence:
    passed: bool
    first_small_index: int
    size: int
    threshold: float


def decay_evidence(matrix, threshold=0.05, fraction=0.25):
    """Singular values drop below ``threshold * sigma_max`` within the first *fraction* of indices."""
    sigma = scipy.linalg.svdvals(matrix)
    if sigma[0] == 0.0:
        return CompactnessEvidence(True, 0, sigma.size, threshold)
    small = np.nonzero(sigma < threshold * sigma[0])[0]
    first = int(small[0]) if small.size else sigma.size
    return CompactnessEvidence(first <= fraction * sigma.size, first, sigma.size, threshold)


def compactness_proxy(op, threshold=0.05, fraction=0.25):
    return decay_evidence(op.matrix, threshold, fraction)


def closure_gaps(phi, k, l, widths, grid=None):
    """``||phi - phi_h||_{M[k,-l]}`` along Gaussian mollification of width ``h``."""
    gaps = []
    for h in widths:
        smooth = phi.scaled(MollifierSpec("gaussian", h).damping(phi.grid))
        gaps.append(multiplier_norm(assemble(phi - smooth, k, l, grid)))
    return gaps


# ---------------------------------------------------------------------------
# Sesquilinear forms built from multipliers
# ---------------------------------------------------------------------------

def form_matrix(phi, alpha, beta, grid=None):
    """Matrix of ``(u, v) -> (phi D^beta u, D^alpha v)``: ``S_alpha C_phi S_beta``."""
    grid = grid or phi.grid
    s_alpha = derivative_symbol(grid, as_multi_index(alpha, grid.dimension))
    s_beta = derivative_symbol(grid, as_multi_index(beta, grid.dimension))
    return s_alpha[:, None] * convolution_matrix(phi, grid) * s_beta[None, :]


def lower_order_form(phi, k, l, m, grid=None, axis=0):
    """The form ``(phi D^(m-k) f, D^(m-l) g)`` with derivatives along *axis*."""
    for name, order in (("k", k), ("l", l), ("m", m)):
        if int(order) != order:
            raise PreconditionError(f"{name}={order} must be an integer here")
    if not (0 <= k <= m and 0 <= l <= m):
        raise PreconditionError(f"need 0 <= k, l <= m, got k={k}, l={l}, m={m}")
    grid = grid or phi.grid
    n = grid.dimension
    alpha = MultiIndex.along(axis, int(m - l), n)
    beta = MultiIndex.along(axis, int(m - k), n)
    return form_matrix(phi, alpha, beta, grid)


def lower_order_bound_ratio(phi, k, l, m, rng, probes=50, grid=None):
    """Worst ``|f* B f| / (||phi||_{M[k,-l]} ||f||_m^2)`` over random probes (<= 1)."""
    grid = grid or phi.grid
    form = lower_order_form(phi, k, l, m, grid)
    bound = multiplier_norm(assemble(phi, k, l, grid))
    weights = sobolev_weights(grid, 2 * m)
    worst = 0.0
    for _ in range(probes):
        f = random_field(grid, rng).coeffs
        value = abs(np.vdot(f, form @ f))
        scale = bound * float(np.sum(weights * np.abs(f) ** 2))
        if scale > 0:
            worst = max(worst, value / scale)
    return worst


# ---------------------------------------------------------------------------
# Embedding lemmas
# ---------------------------------------------------------------------------

LEMMAS = ("H2", "Hp", "Polking")
FAMILIES = ("delta", "single_mode", "white_noise")


@dataclass(frozen=True)
class EmbeddingParameters:
    k: float
    l: float
    gamma: float = 0.0
    p: float = 2.0

    def to_dict(self):
        return {"k": self.k, "l": self.l, "gamma": self.gamma, "p": self.p}


def check_lemma_hypotheses(lemma, params, n):
    if lemma not in LEMMAS:
        raise PreconditionError(f"unknown embedding lemma {lemma!r}; known: {LEMMAS}")
    k, l, gamma, p = params.k, params.l, params.gamma, params.p
    if k < 0 or l < 0:
        raise PreconditionError(f"k, l must be >= 0, got k={k}, l={l}")
    if lemma == "H2":
        if not k > n / 2:
            raise PreconditionError(f"H2 embedding needs k > n/2, got k={k}, n={n}")
        return
    gap = k + l - gamma
    if gamma > l:
        raise PreconditionError(f"{lemma} embedding needs gamma <= l, got gamma={gamma}, l={l}")
    if gap <= 0:
        raise PreconditionError(f"{lemma} embedding needs k + l - gamma > 0, got {gap}")
    if not p > 1:
        raise PreconditionError(f"{lemma} embedding needs p > 1, got p={p}")
    if lemma == "Hp":
        if not k <= n / 2:
            raise PreconditionError(f"Hp embedding needs k <= n/2, got k={k}, n={n}")
        if not p > n / gap:
            raise PreconditionError(f"Hp embedding needs p > n/(k+l-gamma) = {n / gap}, got p={p}")
    else:
        if not k < n / 2:
            raise PreconditionError(f"Polking embedding needs k < n/2, got k={k}, n={n}")
        if not p >= n / gap - 1e-12:
            raise PreconditionError(f"Polking embedding needs p >= {n / gap}, got p={p}")


def source_norm(lemma, params, phi):
    """Norm of the space the lemma embeds: ``H^-l`` for H2, ``H_p^-gamma`` otherwise."""
    if lemma == "H2":
        return phi.norm(-params.l)
    return lp_sobolev_norm(phi, LpNormRequest(-params.gamma, params.p))


def _exact_quadrature(lemma, params):
    # |u|^p is a trigonometric polynomial only for even integer p; 4N+1 points resolve p <= 4
    return lemma == "H2" or params.p in (2.0, 4.0)


@dataclass
class EmbeddingReport:
    lemma: str
    parameters: EmbeddingParameters
    dimension: int
    bandlimit: int
    seed: int
    families: tuple
    rows: list
    max_ratio: float
    product_constant: float | None = None

    @property
    def has_quadrature_error(self):
        return any("quadrature_error" in r for r in self.rows)

    @property
    def columns(self):
        base = ["sample_id", "source_norm", "mult_norm", "ratio"]
        return base + ["quadrature_error"] if self.has_quadrature_error else base

    def to_dict(self):
        data = {
            "lemma": self.lemma,
            "parameters": self.parameters.to_dict(),
            "dimension": self.dimension,
            "bandlimit": self.bandlimit,
            "seed": self.seed,
            "families": list(self.families),
            "samples": len(self.rows),
            "max_ratio": self.max_ratio,
            "product_constant": self.product_constant,
        }
        if self.has_quadrature_error:
            data["max_quadrature_error"] = max(r["quadrature_error"] for r in self.rows)
            data["rows"] = [{"sample_id": r["sample_id"], "quadrature_error": r["quadrature_error"]}
                            for r in self.rows]
        return data

    def csv_rows(self):
        return [tuple(r[c] for c in self.columns) for r in self.rows]


def _draw_samples(grid, families, per_family, rng):
    """Seeded samples, realized on the product band of *grid*."""
    wide = grid.product_grid
    samples = []
    for family in families:
        for index in range(per_family):
            if family == "delta":
                x0 = rng.uniform(0.0, 2.0 * math.pi, grid.dimension)
                phi = realize(delta(tuple(x0)), wide)
            elif family == "single_mode":
                mode = rng.integers(-grid.bandlimit, grid.bandlimit + 1, grid.dimension)
                phi = SpectralField.basis(grid, mode).rebanded(wide)
            elif family == "white_noise":
                phi = random_field(grid, rng).rebanded(wide)
            else:
                raise PreconditionError(f"unknown sample family {family!r}; known: {FAMILIES}")
            samples.append((f"{family}-{index}", phi))
    return samples


def _declared_samples(grid, samples):
    wide = grid.product_grid
    realized = []
    for sample_id, sample in samples:
        if isinstance(sample, SpectralField):
            if sample.grid.dimension != grid.dimension:
                raise PreconditionError(f"sample {sample_id!r} has dimension {sample.grid.dimension}")
            realized.append((str(sample_id), sample.rebanded(wide)))
        else:
            realized.append((str(sample_id), realize(sample, wide)))
    return realized


def _product_constant(params, grid, rng, pairs=20):
    half = grid.with_bandlimit(max(1, grid.bandlimit // 2))
    worst = 0.0
    for _ in range(pairs):
        f = random_field(half, rng, decay=params.k).rebanded(grid)
        g = random_field(half, rng, decay=params.l).rebanded(grid)
        worst = max(worst, pointwise_product(f, g).norm(params.l) / (f.norm(params.k) * g.norm(params.l)))
    return worst


def embedding_sweep(lemma, params, grid, families=FAMILIES, per_family=8, seed=0x5EED, threads=1,
                    samples=()):
    """Empirical ``sup ||phi||_{M[k,-l]} / ||phi||_source`` over seeded sample families.

    *samples* adds declared ``(sample_id, CoefficientSpec | SpectralField)``
    pairs to the drawn families.  Every sample is realized on the product
    band ``2N`` so that the Galerkin matrix on *grid* is the full product.
    When ``p`` is not an even integer each row also carries the change of
    the source norm under a doubled quadrature grid.
    """
    check_lemma_hypotheses(lemma, params, grid.dimension)
    rng = np.random.default_rng(seed)
    drawn = _draw_samples(grid, families, per_family, rng) + _declared_samples(grid, samples)
    if not drawn:
        raise PreconditionError("embedding sweep has no samples")
    exact = _exact_quadrature(lemma, params)

    def evaluate(sample):
        sample_id, phi = sample
        phi = phi * (1.0 / source_norm(lemma, params, phi))
        norm = source_norm(lemma, params, phi)
        mult = multiplier_norm(assemble(phi, params.k, params.l, grid))
        row = {"sample_id": sample_id, "source_norm": norm, "mult_norm": mult, "ratio": mult / norm}
        if not exact:
            row["quadrature_error"] = lp_quadrature_error(phi, LpNormRequest(-params.gamma, params.p))
        return row

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(evaluate, drawn))
    product = _product_constant(params, grid, rng) if lemma == "H2" else None
    report = EmbeddingReport(lemma, params, grid.dimension, grid.bandlimit, seed, tuple(families),
                             rows, max(r["ratio"] for r in rows), product)
    log.info("Formsum Lab: %s sweep N=%d samples=%d max ratio=%.6e",
             lemma, grid.bandlimit, len(rows), report.max_ratio)
    return report


# ---------------------------------------------------------------------------
# Tensor products
# ---------------------------------------------------------------------------

@dataclass
class TensorBoundReport:
    bandlimit: int
    tensor_norm: float
    factor_norm: float
    psi_sup: float
    tensor_curve: RelativeBoundCurve | None = None

    @property
    def bound(self):
        return self.factor_norm * self.psi_sup

    @property
    def ratio(self):
        return self.tensor_norm / self.bound if self.bound else math.inf

    def to_dict(self):
        data = {
            "bandlimit": self.bandlimit,
            "tensor_norm": self.tensor_norm,
            "factor_norm": self.factor_norm,
            "psi_sup": self.psi_sup,
            "bound": self.bound,
            "ratio": self.ratio,
        }
        if self.tensor_curve is not None:
            data["tensor_curve"] = self.tensor_curve.to_dict()
        return data


def check_tensor_bound(phi, psi, k, l, bandlimit, psi_sup=None, with_curve=True):
    """Compare ``||phi x psi||_M`` on the 2-torus with ``||phi||_M ||psi||_inf`` on the circle."""
    tensor = tensorize(phi, psi, psi_sup)
    plane = TorusGrid(2, bandlimit)
    line = TorusGrid(1, bandlimit)
    op = assemble(realize(tensor, plane.product_grid), k, l, plane)
    curve = None
    if with_curve:
        curve = relative_bound_curve(op, sorted({0, bandlimit // 4, bandlimit // 2}), probes=0)
    report = TensorBoundReport(bandlimit, multiplier_norm(op),
                               multiplier_norm(assemble(realize(phi, line.product_grid), k, l, line)),
                               tensor.psi_sup, curve)
    log.info("Formsum Lab: tensor bound N=%d %.6e <= %.6e", bandlimit, report.tensor_norm, report.bound)
    return report
