"""Formsum Lab: scenario runner for the form-sum numerical experiments.

    formsum-lab run <config.json> [--out DIR] [--threads K]
    formsum-lab run --preset <name>
    formsum-lab presets

Exit codes: 0 every asserted verdict passed, 1 a verdict failed,
2 configuration error, 3 rejected pre-condition, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from coefficients import (
    MollifierSpec,
    coefficient_sum,
    constant,
    delta,
    named_function,
    realize,
    spec_from_dict,
)
from formsum import (
    OperatorSpec,
    assemble_lower,
    assemble_principal,
    build_generalized_sum,
    certify_relative_bound,
    export_matrix,
    sobolev_gram,
    verify_garding,
    verify_resolvent_identity,
)
from multipliers import (
    FAMILIES,
    EmbeddingParameters,
    assemble,
    check_interpolation,
    check_symmetry,
    check_tensor_bound,
    closure_gaps,
    compactness_proxy,
    embedding_sweep,
    is_small_relative,
    relative_bound_curve,
)
from spectra import (
    Window,
    asserted_verdicts,
    build_study_sums,
    compute_spectrum,
    convergence_study,
    delta_well_ground_state,
    symmetric_compact_check,
    write_convergence_csv,
    write_csv,
)
from spectral_core import (
    TWO_PI,
    LabError,
    NumericError,
    PreconditionError,
    TorusGrid,
    convolution_matrix,
    interpolation_check,
    random_field,
    sobolev_weights,
)

__version__ = "1.0.0"

log = logging.getLogger("formsum_lab")

SEED_ENV = "FORMSUM_LAB_SEED"

# Settings with defaults; scenario "parameters" override per key.
_settings = {
    "seed": 0x5EED,
    "output": "lab_out",
    "threads": 1,
    "angles": 64,
    "probes": 100,
    "eps": 0.5,
    "window": {"re_min": -10.0, "re_max": 50.0, "im_max": 25.0},
    "small_relative_threshold": 0.1,
    "compactness_threshold": 0.05,
    "oracle_tolerance": 5e-3,
    "bandlimit": 128,
    "dimension": 1,
}

KINDS = ("garding", "multiplier_table", "embedding_sweep", "relative_bound", "formsum_build",
         "convergence_study", "symmetric_compact", "resolvent_identity")


class ConfigError(LabError):
    """The scenario file is unreadable or malformed."""


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    kind: str
    grid: TorusGrid
    seed: int
    output: str
    parameters: dict
    name: str = "scenario"

    def to_dict(self):
        # the worker count is not part of a scenario's identity
        return {
            "kind": self.kind,
            "name": self.name,
            "grid": {"dimension": self.grid.dimension, "bandlimit": self.grid.bandlimit},
            "seed": self.seed,
            "output": self.output,
            "parameters": {k: v for k, v in self.parameters.items() if k != "threads"},
        }

    def setting(self, key):
        return self.parameters.get(key, _settings[key])

    def rng(self):
        return np.random.default_rng(self.seed)


def scenario_from_dict(data, name="scenario"):
    if not isinstance(data, dict):
        raise ConfigError("a scenario must be a JSON object")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}; known: {', '.join(KINDS)}")
    grid_block = data.get("grid", {})
    parameters = data.get("parameters", {})
    if not isinstance(grid_block, dict) or not isinstance(parameters, dict):
        raise ConfigError("'grid' and 'parameters' must be JSON objects")
    try:
        grid = TorusGrid(int(grid_block.get("dimension", _settings["dimension"])),
                         int(grid_block.get("bandlimit", _settings["bandlimit"])))
        seed = int(data.get("seed", _settings["seed"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, PreconditionError):
            raise
        raise ConfigError(f"malformed grid or seed: {exc}") from exc
    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        try:
            seed = int(env_seed, 0)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={env_seed!r} is not an integer") from exc
    return Scenario(kind, grid, seed, str(data.get("output", _settings["output"])), parameters,
                    str(data.get("name", name)))


def load_scenario(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(data, name=path.stem)


@dataclass
class ScenarioResult:
    summary: dict
    verdicts: dict
    reported: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    scenario_hash: str
    versions: dict
    wall_time: float
    verdicts: dict
    files: dict

    @property
    def passed(self):
        return all(self.verdicts.values())

    @property
    def exit_code(self):
        return 0 if self.passed else 1

    def to_dict(self):
        return {"scenario_hash": self.scenario_hash, "versions": self.versions,
                "verdicts": self.verdicts, "files": self.files}


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _one(dimension=1):
    return {"variant": "smooth_samples", "function": "one", "dimension": dimension}


def _laplacian(lower=(), m=1):
    """``(-1)^m d^2m + 1`` on the circle with the given lower-order slots."""
    return {"m": m, "n": 1, "shift": 1.0,
            "principal": [{"alpha": [m], "beta": [m], "coefficient": _one()}],
            "lower": list(lower)}


_DELTA_WELL_SCHEDULE = {"kind": "gaussian", "parameters": [1.0, 0.5, 0.25, 0.125, 0.0625]}

PRESETS = {
    "garding-constant": {
        "description": "Garding constant of -u'' (delta = 1)",
        "anchor": {"result": "Garding inequality",
                   "statement": "Re (L0 u, u) >= delta ||grad^m u||^2"},
        "scenario": {"kind": "garding", "grid": {"dimension": 1, "bandlimit": 128},
                     "parameters": {"operator": _laplacian(), "expect_delta": 1.0}},
    },
    "delta-multiplier-table": {
        "description": "Multiplier norms of the point mass against the rank-one closed form",
        "anchor": {"result": "multiplier norm",
                   "statement": "the norm of phi in M[k,-l] is the norm of f -> phi f from H^k to H^-l"},
        "scenario": {"kind": "multiplier_table", "grid": {"dimension": 1, "bandlimit": 128},
                     "parameters": {"coefficient": {"variant": "delta", "x0": [0.0]},
                                    "pairs": [[1, 1], [2, 1], [1, 2], [2, 0], [0, 2]],
                                    "interpolation": [[2, 0, 1, 1]],
                                    "closed_form": True,
                                    "closure_widths": [1.0, 0.5, 0.25, 0.125]}},
    },
    "embedding-h2": {
        "description": "H^-l embeds in M[k,-l] for k > n/2: N-stable ratio",
        "anchor": {"result": "H2 embedding",
                   "statement": "H^-l is contained in the closure of test functions in M[k,-l] when k > n/2"},
        "scenario": {"kind": "embedding_sweep", "grid": {"dimension": 1, "bandlimit": 64},
                     "parameters": {"sweeps": [{"lemma": "H2", "k": 1, "l": 1,
                                                "bandlimits": [16, 32, 64]}]}},
    },
    "embedding-hp": {
        "description": "H_p^gamma embeds in M[k,-l] for k <= n/2 (with the endpoint case in 2-d)",
        "anchor": {"result": "Hp embedding",
                   "statement": "H_p^gamma is contained in M[k,-l] when k <= n/2, gamma <= l, p > n/(k+l-gamma)"},
        "scenario": {"kind": "embedding_sweep", "grid": {"dimension": 1, "bandlimit": 32},
                     "parameters": {"sweeps": [
                         {"lemma": "Hp", "dimension": 1, "k": 0.5, "l": 0.5, "gamma": 0.25, "p": 4.0,
                          "bandlimits": [16, 32]},
                         {"lemma": "Polking", "dimension": 2, "k": 0.5, "l": 0.5, "gamma": 0.0, "p": 2.0,
                          "bandlimits": [6, 8], "per_family": 4}]}},
    },
    "interpolation-chain": {
        "description": "Symmetry and interpolation of multiplier norms over random coefficients",
        "anchor": {"result": "multiplier symmetry and interpolation",
                   "statement": "M[k,-l] = M[l,-k]; M[k1,-l1] is contained in M[k2,-l2] for k2 < k1, k1+l1 = k2+l2"},
        "scenario": {"kind": "multiplier_table", "grid": {"dimension": 1, "bandlimit": 32},
                     "parameters": {"random": {"count": 20, "decay": 0.0},
                                    "pairs": [[1, 0], [2, 0], [1, 1], [2, 1]],
                                    "interpolation": [[2, 0, 1, 1]],
                                    "hilbert_interpolation": True}},
    },
    "fubini-tensor": {
        "description": "Tensor product bound ||phi x psi||_M <= ||phi||_M ||psi||_inf",
        "anchor": {"result": "tensor products",
                   "statement": "phi(x) psi(y) lies in M[k,-l] of the product space with norm at most ||phi|| ||psi||_inf"},
        "scenario": {"kind": "multiplier_table", "grid": {"dimension": 2, "bandlimit": 16},
                     "parameters": {"tensor": {"phi": {"variant": "delta", "x0": [0.0]},
                                               "psi": {"variant": "smooth_samples", "function": "sin"},
                                               "k": 1, "l": 1, "bandlimits": [8, 12, 16],
                                               "tolerance": 0.05}}},
    },
    "delta-well": {
        "description": "-u'' - 2 delta with Gaussian mollifiers: resolvent and two-sided spectral convergence",
        "anchor": {"result": "main theorem",
                   "statement": "L_n converge to L in the norm-resolvent sense and their spectra converge from above"},
        "scenario": {"kind": "convergence_study", "grid": {"dimension": 1, "bandlimit": 256},
                     "parameters": {"operator": _laplacian([{"alpha": [0], "beta": [0], "coefficient":
                                                             {"variant": "delta", "x0": [0.0], "scale": -2.0}}]),
                                    "schedule": _DELTA_WELL_SCHEDULE, "oracle": -2.0, "strict": True,
                                    "monotone_lowest": True}},
    },
    "nonsymmetric-drift": {
        "description": "u'''' + u with the singular drift i delta in slot (1,0): convergence from above only",
        "anchor": {"result": "main theorem, non-symmetric case",
                   "statement": "spectra of the mollified operators converge to the limit spectrum from above"},
        "scenario": {"kind": "convergence_study", "grid": {"dimension": 1, "bandlimit": 64},
                     "parameters": {"operator": _laplacian([{"alpha": [1], "beta": [0], "coefficient":
                                                             {"variant": "delta", "x0": [0.0], "scale": [0.0, 1.0]}}],
                                                           m=2),
                                    "schedule": _DELTA_WELL_SCHEDULE}},
    },
    "resolvent-identity": {
        "description": "Resolvent difference factorized through the normalized sums",
        "anchor": {"result": "generalized sum theorem",
                   "statement": "(S_n - rho)^-1 - (S - rho)^-1 = T0^-1/2 Z_n^-1 [T0^-1/2 (Q - Q_n) T0^-1/2] Z^-1 T0^-1/2"},
        "scenario": {"kind": "resolvent_identity", "grid": {"dimension": 1, "bandlimit": 64},
                     "parameters": {"diagonal_steps": [1, 2, 4, 8], "random_cases": 5}},
    },
}


def list_presets():
    """Return ``[(name, kind, description)]`` for the built-in presets."""
    return [(name, p["scenario"]["kind"], p["description"]) for name, p in PRESETS.items()]


def preset_scenario(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    data = copy.deepcopy(PRESETS[name]["scenario"])
    data.setdefault("name", name)
    return scenario_from_dict(data, name=name)


# ---------------------------------------------------------------------------
# Scenario handlers
# ---------------------------------------------------------------------------

@contextmanager
def _document(what):
    """Malformed scenario content is a configuration error, not a rejected pre-condition."""
    try:
        yield
    except (KeyError, TypeError, ValueError, AttributeError, IndexError) as exc:
        raise ConfigError(f"malformed {what}: {exc}") from exc


def _operator(sc):
    if "operator" not in sc.parameters:
        raise ConfigError(f"scenario kind {sc.kind!r} needs an 'operator' block")
    with _document("'operator' block"):
        spec = OperatorSpec.from_dict(sc.parameters["operator"])
    if spec.n != sc.grid.dimension:
        raise ConfigError(f"operator dimension {spec.n} does not match grid dimension {sc.grid.dimension}")
    return spec


def _schedule(sc):
    block = sc.parameters.get("schedule")
    if not isinstance(block, dict) or "parameters" not in block:
        raise ConfigError("a 'schedule' block {kind, parameters} is required")
    with _document("'schedule' block"):
        return [MollifierSpec(str(block.get("kind", "gaussian")), float(v)) for v in block["parameters"]]


def _window(sc):
    return Window.from_dict(sc.setting("window"))


def _run_garding(sc):
    spec = _operator(sc)
    report = verify_garding(assemble_principal(spec, sc.grid, shifted=False), spec.m, sc.grid, spec.shift)
    verdicts = {"coercive": report.delta > 0}
    if "expect_delta" in sc.parameters:
        verdicts["delta_matches"] = abs(report.delta - float(sc.parameters["expect_delta"])) <= 1e-9
    return ScenarioResult({"garding": report.to_dict()}, verdicts)


def _rank_one_norm(grid, k, l):
    w_k = np.linalg.norm(sobolev_weights(grid, -k))
    w_l = np.linalg.norm(sobolev_weights(grid, -l))
    return TWO_PI ** (-grid.dimension) * w_k * w_l


def _coefficient_samples(sc):
    """``(label, field, declared)`` triples on the product band of the scenario grid.

    *declared* marks the scenario's own coefficient.
    """
    wide = sc.grid.product_grid
    samples = []
    if "coefficient" in sc.parameters:
        with _document("'coefficient' block"):
            spec = spec_from_dict(sc.parameters["coefficient"])
        samples.append((str(spec), realize(spec, wide), True))
    if "random" in sc.parameters:
        block = sc.parameters["random"]
        with _document("'random' block"):
            count, decay = int(block.get("count", 20)), float(block.get("decay", 0.0))
        rng = sc.rng()
        for index in range(count):
            f = random_field(sc.grid, rng, decay)
            samples.append((f"random-{index}", ((f + f.conjugate()) * 0.5).rebanded(wide), False))
    return samples


def _run_multiplier_table(sc):
    grid = sc.grid
    with _document("'pairs' or 'interpolation' list"):
        pairs = [(float(k), float(l)) for k, l in sc.parameters.get("pairs", [[1, 1]])]
        chains = [tuple(float(v) for v in entry) for entry in sc.parameters.get("interpolation", [])]
    rows, summary, verdicts = [], {}, {}
    symmetric, interpolates, closed, hilbert = True, True, True, True
    for label, phi, declared in _coefficient_samples(sc):
        for k, l in pairs:
            norm, swapped = check_symmetry(phi, k, l, grid)
            symmetric &= abs(norm - swapped) <= 1e-9 * max(1.0, norm)
            row = [label, f"{k:g}", f"{l:g}", f"{norm:.12e}", f"{swapped:.12e}"]
            if sc.parameters.get("closed_form"):
                expected = _rank_one_norm(grid, k, l)
                closed &= abs(norm - expected) <= 1e-10 * max(1.0, expected)
                row.append(f"{expected:.12e}")
            rows.append(row)
        for k1, l1, k2, l2 in chains:
            interpolates &= check_interpolation(phi, k1, l1, k2, l2, grid)
        if sc.parameters.get("hilbert_interpolation"):
            lhs, rhs = interpolation_check(convolution_matrix(phi, grid), grid, (2, 0), (0, -2), 0.5)
            hilbert &= lhs <= rhs * (1.0 + 1e-9)
        if declared:
            k, l = pairs[0]
            op = assemble(phi, k, l, grid)
            cutoffs = sorted({0, grid.bandlimit // 4, grid.bandlimit // 2})
            summary["relative_bound_curve"] = relative_bound_curve(
                op, cutoffs, rng=sc.rng(), probes=sc.setting("probes")).to_dict()
            summary["small_relative"] = is_small_relative(op, sc.setting("small_relative_threshold"))
            evidence = compactness_proxy(op, sc.setting("compactness_threshold"))
            summary["compactness"] = {"passed": evidence.passed, "first_small_index": evidence.first_small_index,
                                      "size": evidence.size}
            if "closure_widths" in sc.parameters:
                with _document("'closure_widths' list"):
                    widths = [float(h) for h in sc.parameters["closure_widths"]]
                summary["closure_gaps"] = dict(zip(map(str, widths), closure_gaps(phi, k, l, widths, grid)))
    if rows:
        header = ["sample", "k", "l", "norm", "swapped_norm"]
        if sc.parameters.get("closed_form"):
            header.append("closed_form")
        verdicts["symmetry"] = symmetric
        if sc.parameters.get("closed_form"):
            verdicts["closed_form"] = closed
        if sc.parameters.get("interpolation"):
            verdicts["interpolation"] = interpolates
        if sc.parameters.get("hilbert_interpolation"):
            verdicts["hilbert_interpolation"] = hilbert
        tables = {"multipliers": (header, rows)}
    else:
        tables = {}
    if "tensor" in sc.parameters:
        block = sc.parameters["tensor"]
        with _document("'tensor' block"):
            phi, psi = spec_from_dict(block["phi"]), spec_from_dict(block["psi"])
            tolerance = float(block.get("tolerance", 0.05))
            k, l = float(block.get("k", 1)), float(block.get("l", 1))
            bandlimits = [int(n) for n in block.get("bandlimits", [sc.grid.bandlimit])]
            psi_sup = None if block.get("psi_sup") is None else float(block["psi_sup"])
        tensor_rows, reports = [], []
        for bandlimit in bandlimits:
            report = check_tensor_bound(phi, psi, k, l, bandlimit, psi_sup)
            reports.append(report.to_dict())
            tensor_rows.append([bandlimit, f"{report.tensor_norm:.12e}", f"{report.bound:.12e}",
                                f"{report.ratio:.12e}"])
        summary["tensor"] = reports
        verdicts["tensor_bound"] = all(r["ratio"] <= 1.0 + tolerance for r in reports)
        tables["tensor"] = (["bandlimit", "tensor_norm", "bound", "ratio"], tensor_rows)
    if not verdicts:
        raise ConfigError("multiplier_table needs 'coefficient', 'random' or 'tensor'")
    return ScenarioResult(summary, verdicts, tables=tables)


def _declared_samples(block):
    """``samples: [{"id": ..., "coefficient": {...}}]`` entries of a sweep block."""
    samples = []
    for index, entry in enumerate(block.get("samples", [])):
        spec = spec_from_dict(entry["coefficient"])
        samples.append((str(entry.get("id", f"declared-{index}")), spec))
    return samples


def _run_embedding(sc):
    sweeps = sc.parameters.get("sweeps")
    if not sweeps or not isinstance(sweeps, list):
        raise ConfigError("embedding_sweep needs a non-empty 'sweeps' list")
    summary, verdicts, tables = {}, {}, {}
    threads = sc.setting("threads")
    for index, block in enumerate(sweeps):
        with _document(f"sweep {index}"):
            lemma = str(block.get("lemma", "H2"))
            params = EmbeddingParameters(float(block.get("k", 1)), float(block.get("l", 1)),
                                         float(block.get("gamma", 0.0)), float(block.get("p", 2.0)))
            dimension = int(block.get("dimension", sc.grid.dimension))
            bandlimits = [int(n) for n in block.get("bandlimits", [sc.grid.bandlimit])]
            families = tuple(str(f) for f in block.get("families", FAMILIES))
            per_family = int(block.get("per_family", 8))
            samples = _declared_samples(block)
        maxima, rows, columns = [], [], []
        for bandlimit in bandlimits:
            report = embedding_sweep(lemma, params, TorusGrid(dimension, bandlimit), families=families,
                                     per_family=per_family, seed=sc.seed, threads=threads,
                                     samples=samples)
            maxima.append(report.max_ratio)
            columns = report.columns
            summary[f"{lemma}-{index}-N{bandlimit}"] = report.to_dict()
            rows += [[bandlimit, row[0]] + [f"{v:.12e}" for v in row[1:]] for row in report.csv_rows()]
        key = f"{lemma.lower()}_{index}"
        verdicts[f"{key}_finite"] = all(math.isfinite(v) for v in maxima)
        spread = (max(maxima) - min(maxima)) / min(maxima)
        summary[f"{lemma}-{index}-spread"] = spread
        if lemma == "H2":
            verdicts[f"{key}_stable"] = spread < 0.10
        tables[f"embedding_{key}"] = (["bandlimit"] + columns, rows)
    return ScenarioResult(summary, verdicts, tables=tables)


def _run_relative_bound(sc):
    spec = _operator(sc)
    with _document("'eps_values' list"):
        eps_values = [float(eps) for eps in sc.parameters.get("eps_values", [0.5, 0.25, 0.1])]
    lower = assemble_lower(spec, sc.grid, rng=sc.rng())
    gram = sobolev_gram(sc.grid, spec.m)
    rows, bounds = [], []
    for eps in eps_values:
        cert = certify_relative_bound(lower.matrix, gram, eps, rng=sc.rng(),
                                      probes=sc.setting("probes"), angles=sc.setting("angles"))
        bounds.append(cert.bound)
        rows.append([f"{cert.eps:.12e}", f"{cert.bound:.12e}", f"{cert.worst_residual:.12e}"])
    summary = {"curves": {f"{a}:{b}": c.to_dict() for (a, b), c in lower.curves.items()}}
    verdicts = {"certified": True,
                "monotone": all(b >= a for a, b in zip(bounds, bounds[1:]))}
    return ScenarioResult(summary, verdicts, tables={"relative_bound": (["eps", "M", "worst_residual"], rows)})


def _run_formsum_build(sc):
    spec = _operator(sc)
    principal = assemble_principal(spec, sc.grid, shifted=False)
    garding = verify_garding(principal, spec.m, sc.grid, spec.shift)
    lower = assemble_lower(spec, sc.grid, rng=sc.rng())
    cert = certify_relative_bound(lower.matrix, sobolev_gram(sc.grid, spec.m), sc.setting("eps"),
                                  rng=sc.rng(), probes=sc.setting("probes"), angles=sc.setting("angles"))
    gsum = build_generalized_sum(principal + spec.shift * np.eye(sc.grid.size), lower.matrix,
                                 sc.setting("angles"))
    spectrum = compute_spectrum(gsum, 0.0, _window(sc))
    inside = all(gsum.sector.contains(z) for z in spectrum.eigenvalues)
    summary = {"garding": garding.to_dict(), "certificate": cert.to_dict(),
               "sector": gsum.sector.to_dict(), "rho": gsum.rho, "z_floor": gsum.z_floor(gsum.rho)}
    matrices = {"S": gsum.s} if sc.parameters.get("export") else {}
    shifted = compute_spectrum(gsum, spec.shift, _window(sc))
    return ScenarioResult(summary, {"sector_contains_spectrum": inside, "z_separated": summary["z_floor"] > 0},
                          tables={"spectrum": (["re", "im"], shifted.csv_rows())}, matrices=matrices)


def _run_convergence(sc):
    spec = _operator(sc)
    schedule = _schedule(sc)
    window = _window(sc)
    study = build_study_sums(spec, schedule, sc.grid, sc.setting("eps"), sc.setting("threads"),
                             sc.setting("angles"))
    report = convergence_study(spec, schedule, sc.grid, rho=sc.parameters.get("rho"), window=window,
                               threads=sc.setting("threads"), study=study)
    verdicts = asserted_verdicts(report)
    reported = {k: v for k, v in report.verdicts.items() if isinstance(v, bool) and k not in verdicts}
    if sc.parameters.get("strict"):
        for key in ("q_gap_strictly_decreasing", "resolvent_strictly_decreasing"):
            verdicts[key] = reported.pop(key)
    if sc.parameters.get("monotone_lowest"):
        verdicts["lowest_non_increasing"] = reported.pop("lowest_non_increasing")
    if sc.parameters.get("assert_upper_threshold"):
        verdicts["upper_threshold"] = reported.pop("upper_threshold")
    summary = report.to_dict()
    if "oracle" in sc.parameters:
        kappa, ground = delta_well_ground_state(float(sc.parameters["oracle"]))
        summary["oracle"] = {"kappa": kappa, "lambda": ground, "computed": report.limit_lowest}
        verdicts["oracle_match"] = abs(report.limit_lowest - ground) <= sc.setting("oracle_tolerance")
    check = symmetric_compact_check(study.limit, study.sums, sc.grid, spec.m, spec.shift, window,
                                    sc.setting("compactness_threshold"))
    summary["symmetric_compact"] = check.to_dict()
    if check.applicable:
        verdicts["symmetric_compact"] = check.passed
    return ScenarioResult(summary, verdicts, reported, tables={"convergence": report})


def _run_symmetric_compact(sc):
    spec = _operator(sc)
    study = build_study_sums(spec, _schedule(sc), sc.grid, sc.setting("eps"), sc.setting("threads"),
                             sc.setting("angles"))
    check = symmetric_compact_check(study.limit, study.sums, sc.grid, spec.m, spec.shift, _window(sc),
                                    sc.setting("compactness_threshold"))
    verdicts = {"symmetric_compact": check.passed} if check.applicable else {}
    reported = {} if check.applicable else {"applicable": False}
    return ScenarioResult({"symmetric_compact": check.to_dict()}, verdicts, reported)


def _random_sectorial_spec(rng):
    a, b = (0.2 * rng.uniform() * np.exp(2j * np.pi * rng.uniform()) for _ in range(2))
    coefficient = coefficient_sum(constant(1.0), named_function("sin", scale=a), named_function("cos", scale=b))
    weight = rng.uniform(0.2, 1.0) * np.exp(2j * np.pi * rng.uniform())
    well = delta((rng.uniform(0.0, TWO_PI),), scale=weight)
    return OperatorSpec(1, 1, {((1,), (1,)): coefficient}, {((0,), (0,)): well})


def _run_resolvent_identity(sc):
    grid = sc.grid
    rows, checks = [], []
    t = assemble_principal(OperatorSpec(1, 1, {((1,), (1,)): constant(1.0)}), grid)
    limit = build_generalized_sum(t, np.zeros_like(t))
    for step in sc.parameters.get("diagonal_steps", [1, 2, 4, 8]):
        approx = build_generalized_sum(t, np.eye(grid.size) / float(step))
        rho = min(limit.rho, approx.rho)
        checks.append(verify_resolvent_identity(limit, approx, rho))
        rows.append([f"diagonal-{step}", f"{rho:.12e}", f"{checks[-1].residual:.12e}",
                     f"{checks[-1].relative:.12e}"])
    rng = sc.rng()
    for case in range(int(sc.parameters.get("random_cases", 5))):
        spec = _random_sectorial_spec(rng)
        t = assemble_principal(spec, grid)
        limit = build_generalized_sum(t, assemble_lower(spec, grid, with_curves=False).matrix)
        mollifier = MollifierSpec("gaussian", float(rng.uniform(0.1, 1.0)))
        approx = build_generalized_sum(t, assemble_lower(spec, grid, mollifier, with_curves=False).matrix)
        rho = min(limit.rho, approx.rho)
        checks.append(verify_resolvent_identity(limit, approx, rho))
        rows.append([f"random-{case}", f"{rho:.12e}", f"{checks[-1].residual:.12e}",
                     f"{checks[-1].relative:.12e}"])
    summary = {"cases": [c.to_dict() for c in checks]}
    return ScenarioResult(summary, {"identity": all(c.passed for c in checks)},
                          tables={"resolvent_identity": (["case", "rho", "residual", "relative"], rows)})


_HANDLERS = {
    "garding": _run_garding,
    "multiplier_table": _run_multiplier_table,
    "embedding_sweep": _run_embedding,
    "relative_bound": _run_relative_bound,
    "formsum_build": _run_formsum_build,
    "convergence_study": _run_convergence,
    "symmetric_compact": _run_symmetric_compact,
    "resolvent_identity": _run_resolvent_identity,
}


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _dumps(data):
    return json.dumps(data, sort_keys=True, indent=2, default=_json_default) + "\n"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_outputs(sc, result, anchor, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for table, content in result.tables.items():
        path = out_dir / f"{sc.name}_{table}.csv"
        if hasattr(content, "csv_rows"):
            write_convergence_csv(content, path)
        else:
            write_csv(path, *content)
        written.append(path)
    for label, matrix in result.matrices.items():
        written.append(export_matrix(out_dir / f"{sc.name}_{label}.fslm", matrix))
    verdict_path = out_dir / f"{sc.name}.json"
    verdict_path.write_text(_dumps({"scenario": sc.to_dict(), "anchor": anchor, "results": result.summary,
                                    "verdicts": result.verdicts, "reported": result.reported}))
    written.append(verdict_path)
    return {path.name: _sha256(path) for path in sorted(written)}


def run(config=None, preset=None, out=None, threads=None):
    """Execute one scenario (file or preset), write its artifacts, return the manifest."""
    if (config is None) == (preset is None):
        raise ConfigError("give exactly one of a config path or a preset name")
    started = time.perf_counter()
    sc = preset_scenario(preset) if preset else load_scenario(config)
    if threads is not None:
        sc.parameters = {**sc.parameters, "threads": int(threads)}
    anchor = PRESETS[preset]["anchor"] if preset else sc.parameters.get("anchor")
    log.info("Formsum Lab: running %s (%s) on n=%d N=%d seed=%#x",
             sc.name, sc.kind, sc.grid.dimension, sc.grid.bandlimit, sc.seed)
    result = _HANDLERS[sc.kind](sc)
    out_dir = Path(out or sc.output)
    files = _write_outputs(sc, result, anchor, out_dir)
    scenario_hash = hashlib.sha256(_dumps(sc.to_dict()).encode()).hexdigest()
    manifest = RunManifest(scenario_hash,
                           {"formsum_lab": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
                           time.perf_counter() - started, dict(result.verdicts), files)
    manifest_path = out_dir / f"{sc.name}_manifest.json"
    manifest_path.write_text(_dumps(manifest.to_dict()))
    for key, value in manifest.verdicts.items():
        log.info("Formsum Lab: verdict %s=%s", key, "pass" if value else "FAIL")
    log.info("Formsum Lab: %s finished in %.2fs, %d file(s) in %s",
             sc.name, manifest.wall_time, len(files) + 1, out_dir)
    return manifest


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(prog="formsum-lab",
                                     description="Run form-sum numerical experiments")
    parser.add_argument("--verbose", action="store_true", help="log numerical internals")
    commands = parser.add_subparsers(dest="command", required=True)
    run_cmd = commands.add_parser("run", help="run a scenario file or a preset")
    run_cmd.add_argument("config", nargs="?", help="scenario JSON file")
    run_cmd.add_argument("--preset", help="built-in preset name")
    run_cmd.add_argument("--out", help="output directory")
    run_cmd.add_argument("--threads", type=int, help="scenario-internal worker threads")
    commands.add_parser("presets", help="list built-in presets")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    if args.command == "presets":
        for name, kind, description in list_presets():
            print(f"{name:24s} {kind:20s} {description}")
        return 0
    try:
        manifest = run(args.config, args.preset, args.out, args.threads)
    except ConfigError as exc:
        log.error("Formsum Lab: configuration error: %s", exc)
        return 2
    except PreconditionError as exc:
        log.error("Formsum Lab: rejected: %s", exc)
        return 3
    except NumericError as exc:
        log.error("Formsum Lab: numerical failure: %s", exc)
        return 4
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
