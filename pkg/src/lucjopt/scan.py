"""Dissociation-curve driver: bond-length sweeps with multi-directional
bootstrapping, exact-diagonalization comparison, and result emission.

The three-pass protocol optimizes every parameter except the leading
orbital rotation (held at zero and excluded) while sweeping left to
right, right to left, and left to right again, carrying converged
parameters from the neighboring geometry; the lowest-energy solution per
point then seeds a final optimization over all parameters with the
leading rotation initialized to the identity.  The first point of the
first pass starts from the best of a small set of zero-plus-noise
restarts (or from a parameter file).

Orbital continuity across geometries is the fixture generator's
responsibility; this module trusts the fixture ordering.
"""

from __future__ import annotations

import dataclasses
import hashlib
import importlib.resources
import json
import logging
import os

import numpy as np
import scipy

from . import ansatz, derivatives, fock, optimize
from .ansatz import LucjParams, default_connectivity
from .fock import FockBasis
from .hamiltonian import MolecularHamiltonian, load_fcidump

logger = logging.getLogger(__name__)

VARIATIONAL_SLACK = 1e-9
S_SQUARED_FLAG_THRESHOLD = 0.1


@dataclasses.dataclass
class ScanSpec:
    points: list  # of (bond_length_angstrom, fcidump path)
    n_layers: int
    optimizer: str = "lm"  # lm | sr | lbfgs
    topology: str = "square_lattice"
    sigma: float = 0.0
    noise_targets: tuple = ("g", "s", "h")
    bootstrap: str = "three_pass"  # none | three_pass
    seed: int = 0
    n_restarts: int = 5
    init_scale: float = 0.2
    init_params_path: str | None = None
    max_iters: int = 60
    grad_tol: float = 1e-5
    rel_energy_tol: float = 1e-8
    hyper_budget: int = 50
    lbfgs_max_iters: int = 2000

    def __post_init__(self):
        lengths = [b for b, _ in self.points]
        if any(b2 <= b1 for b1, b2 in zip(lengths, lengths[1:])):
            raise ValueError("bond lengths must be strictly increasing")
        if self.optimizer not in ("lm", "sr", "lbfgs"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.bootstrap not in ("none", "three_pass"):
            raise ValueError(f"unknown bootstrap mode {self.bootstrap!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["points"] = [[float(b), str(p)] for b, p in self.points]
        d["noise_targets"] = list(self.noise_targets)
        return d


@dataclasses.dataclass
class PointResult:
    bond_length: float
    e_method: float
    e_fci: float
    error: float
    s_squared: float
    n_iterations: int
    init_source: str
    seed: int
    s_squared_flagged: bool


@dataclasses.dataclass
class ScanResult:
    spec: ScanSpec
    points: list  # of PointResult
    traces: list  # per point, list of IterationRecord
    final_params: list  # per point, LucjParams
    provenance: dict
    pass_energies: list = dataclasses.field(default_factory=list)  # per point


def _provenance(spec: ScanSpec) -> dict:
    blob = json.dumps(spec.to_dict(), sort_keys=True).encode()
    return {
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": spec.seed,
        "versions": {
            "lucjopt": "0.1.0",
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def _load_points(spec: ScanSpec):
    hams = []
    for bond, path in spec.points:
        if not os.path.exists(path):
            raise FileNotFoundError(f"fixture not found: {path}")
        hams.append((float(bond), load_fcidump(path)))
    first = hams[0][1]
    for _, h in hams:
        if (h.n_orbitals, h.n_alpha, h.n_beta) != (
            first.n_orbitals, first.n_alpha, first.n_beta,
        ):
            raise ValueError("fixtures must share orbital and electron counts")
    return hams


def _active_without_final(params: LucjParams) -> np.ndarray:
    n = params.n_orbitals
    per_layer = n * n + len(params.connectivity.s_sites) + len(
        params.connectivity.s_prime_pairs
    )
    return np.arange(params.n_layers * per_layer)


def _optimize_point(spec: ScanSpec, params0, basis, h, active):
    if spec.optimizer == "lm":
        cfg = optimize.LmConfig(
            max_iters=spec.max_iters,
            grad_tol=spec.grad_tol,
            rel_energy_tol=spec.rel_energy_tol,
            hyper_budget=spec.hyper_budget,
        )
        nm = optimize.NoiseModel(sigma=spec.sigma, seed=spec.seed,
                                 targets=spec.noise_targets)
        return optimize.run_lm(params0, basis, h, cfg, nm, active=active)
    if spec.optimizer == "lbfgs":
        return optimize.run_lbfgs(
            params0, basis, h, tol=spec.grad_tol,
            max_iters=spec.lbfgs_max_iters, active=active,
        )
    return optimize.run_sr(
        params0, basis, h, optimize.SrConfig(), max_iters=spec.max_iters * 10,
        grad_tol=spec.grad_tol, active=active,
    )


def initial_params(spec: ScanSpec, n_orbitals: int, restart: int) -> LucjParams:
    conn = default_connectivity(n_orbitals, spec.topology)
    if spec.init_params_path:
        params = LucjParams.load(spec.init_params_path)
        if params.n_orbitals != n_orbitals or params.n_layers != spec.n_layers:
            raise ValueError("parameter file does not match the scan ansatz")
        return params
    rng = np.random.default_rng((spec.seed, restart))
    return ansatz.random_perturbation(
        n_orbitals, spec.n_layers, conn, rng, scale=spec.init_scale
    )


def _energy_of(params, basis, h) -> float:
    return fock.energy_expectation(h, ansatz.prepare_state(params, basis))


def run_scan(spec: ScanSpec) -> ScanResult:
    """Execute the sweep; per-point failures are recorded, not raised."""
    hams = _load_points(spec)
    n_points = len(hams)
    first_h = hams[0][1]
    basis = FockBasis.for_hamiltonian(first_h)
    n = first_h.n_orbitals
    fci = [fock.fci_solve(h, basis, 1)[0][0] for _, h in hams]

    template = LucjParams.zero(n, spec.n_layers, default_connectivity(n, spec.topology))
    active_masked = _active_without_final(template)
    iter_counts = [0] * n_points
    traces = [[] for _ in range(n_points)]

    def seeded_first_point():
        best = None
        h = hams[0][1]
        for restart in range(max(spec.n_restarts, 1)):
            p0 = initial_params(spec, n, restart)
            theta = p0.flatten()
            theta[len(active_masked):] = 0.0  # leading rotation held at zero
            p0 = p0.like(theta)
            p, tr = _optimize_point(spec, p0, basis, h, active_masked)
            iter_counts[0] += len(tr)
            traces[0].extend(tr)
            e = _energy_of(p, basis, h)
            label = "file" if spec.init_params_path else f"restart:{restart}"
            logger.info("first point %s: E=%.8f after %d iterations", label, e, len(tr))
            if best is None or e < best[0]:
                best = (e, p, label)
        return best

    pass_energies = [dict() for _ in range(n_points)]
    if spec.bootstrap == "none":
        results = []
        for k, (bond, h) in enumerate(hams):
            best = None
            for restart in range(max(spec.n_restarts, 1)):
                p0 = initial_params(spec, n, restart)
                p, tr = _optimize_point(spec, p0, basis, h, None)
                iter_counts[k] += len(tr)
                traces[k].extend(tr)
                e = _energy_of(p, basis, h)
                label = "file" if spec.init_params_path else f"restart:{restart}"
                if best is None or e < best[0]:
                    best = (e, p, label)
            results.append(best)
            pass_energies[k]["independent"] = best[0]
        final = results
    else:
        per_point: list[dict] = [dict() for _ in range(n_points)]
        e0, p0, src0 = seeded_first_point()
        per_point[0]["pass1"] = (e0, p0)
        current = p0
        order_passes = [
            ("pass1", range(1, n_points)),
            ("pass2", range(n_points - 1, -1, -1)),
            ("pass3", range(n_points)),
        ]
        for pass_name, order in order_passes:
            for k in order:
                bond, h = hams[k]
                p, tr = _optimize_point(spec, current, basis, h, active_masked)
                iter_counts[k] += len(tr)
                traces[k].extend(tr)
                per_point[k][pass_name] = (_energy_of(p, basis, h), p)
                pass_energies[k][pass_name] = per_point[k][pass_name][0]
                logger.info("%s point %d (d=%.3f): E=%.8f (%d iterations)",
                            pass_name, k, bond, per_point[k][pass_name][0], len(tr))
                current = p
        final = []
        for k in range(n_points):
            bond, h = hams[k]
            label, (e_best, p_best) = min(
                per_point[k].items(), key=lambda kv: kv[1][0]
            )
            if k == 0 and label == "pass1":
                label = src0
            # final restart over all parameters, leading rotation at identity
            theta = p_best.flatten()
            theta[len(active_masked):] = 0.0
            p_final, tr = _optimize_point(spec, p_best.like(theta), basis, h, None)
            iter_counts[k] += len(tr)
            traces[k].extend(tr)
            e_final = _energy_of(p_final, basis, h)
            logger.info("final restart point %d: E=%.8f (%d iterations, from %s)",
                        k, e_final, len(tr), label)
            if e_final > e_best:
                p_final, e_final = p_best, e_best
            final.append((e_final, p_final, label))

    points = []
    params_out = []
    for k, (bond, h) in enumerate(hams):
        e, p, label = final[k]
        s2 = fock.expectation("s_squared", ansatz.prepare_state(p, basis))
        error = e - fci[k]
        points.append(PointResult(
            bond_length=bond,
            e_method=e,
            e_fci=fci[k],
            error=error,
            s_squared=s2,
            n_iterations=iter_counts[k],
            init_source=label,
            seed=spec.seed,
            s_squared_flagged=s2 > S_SQUARED_FLAG_THRESHOLD,
        ))
        params_out.append(p)
        if error < -VARIATIONAL_SLACK:
            raise AssertionError(
                f"variational bound violated at {bond}: error {error:.3e}"
            )
    return ScanResult(
        spec=spec, points=points, traces=traces, final_params=params_out,
        provenance=_provenance(spec), pass_energies=pass_energies,
    )


@dataclasses.dataclass
class ComparisonSummary:
    diffs: list  # per point, E_other - E_lm
    n_lm_not_worse: int
    median_diff: float


def compare_optimizers(
    spec_lm: ScanSpec, spec_other: ScanSpec, matched_init: bool = True
) -> tuple[ScanResult, ScanResult, ComparisonSummary]:
    """Run two scans differing only in the optimizer and pair the results."""
    d1, d2 = spec_lm.to_dict(), spec_other.to_dict()
    d1.pop("optimizer"); d2.pop("optimizer")
    d1.pop("max_iters"); d2.pop("max_iters")
    d1.pop("lbfgs_max_iters"); d2.pop("lbfgs_max_iters")
    if d1 != d2:
        raise ValueError("specs must differ only in the optimizer")
    if matched_init:
        for s in (spec_lm, spec_other):
            if s.bootstrap != "none":
                raise ValueError("matched-init comparison requires bootstrap='none'")
    res_lm = run_scan(spec_lm)
    res_other = run_scan(spec_other)
    diffs = [
        b.e_method - a.e_method for a, b in zip(res_lm.points, res_other.points)
    ]
    summary = ComparisonSummary(
        diffs=diffs,
        n_lm_not_worse=sum(d >= -VARIATIONAL_SLACK for d in diffs),
        median_diff=float(np.median(diffs)),
    )
    return res_lm, res_other, summary


def monotonicity_report(results_by_layers: dict, tol: float = 1e-9) -> list[dict]:
    """Flag points where more layers give a higher energy.

    Violations are reported, not raised; they are expected in hard
    regions of strongly correlated curves.
    """
    layer_values = sorted(results_by_layers)
    if len(layer_values) < 2:
        raise ValueError("need results for at least two layer counts")
    rows = []
    for l_low, l_high in zip(layer_values, layer_values[1:]):
        low, high = results_by_layers[l_low], results_by_layers[l_high]
        for p_low, p_high in zip(low.points, high.points):
            rows.append({
                "bond_length": p_low.bond_length,
                "layers_low": l_low,
                "layers_high": l_high,
                "e_low": p_low.e_method,
                "e_high": p_high.e_method,
                "violation": p_high.e_method > p_low.e_method + tol,
            })
    return rows


CSV_COLUMNS = (
    "bond_length_angstrom,e_method_hartree,e_fci_hartree,error_hartree,"
    "s_squared,n_iterations,init_source,seed"
)


def emit_outputs(result: ScanResult, out_dir) -> dict:
    """Write curve.csv, per-point trace JSONL, and plotdata.json."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    csv_path = os.path.join(out_dir, "curve.csv")
    with open(csv_path, "w") as f:
        f.write(CSV_COLUMNS + "\n")
        for p in result.points:
            f.write(
                f"{p.bond_length:.17g},{p.e_method:.17g},{p.e_fci:.17g},"
                f"{p.error:.17g},{p.s_squared:.17g},{p.n_iterations},"
                f"{p.init_source},{p.seed}\n"
            )
    paths["curve"] = csv_path
    for k, (p, trace) in enumerate(zip(result.points, result.traces)):
        t_path = os.path.join(out_dir, f"trace_{k:03d}_{p.bond_length:.4f}.jsonl")
        with open(t_path, "w") as f:
            for rec in trace:
                f.write(rec.to_json() + "\n")
        paths.setdefault("traces", []).append(t_path)
    plot = plotdata(result)
    validate_plotdata(plot)
    plot_path = os.path.join(out_dir, "plotdata.json")
    with open(plot_path, "w") as f:
        json.dump(plot, f, indent=1, sort_keys=True)
    paths["plotdata"] = plot_path
    params_dir = os.path.join(out_dir, "params")
    os.makedirs(params_dir, exist_ok=True)
    for k, params in enumerate(result.final_params):
        params.save(os.path.join(params_dir, f"point_{k:03d}.json"))
    paths["params"] = params_dir
    return paths


def plotdata(result: ScanResult, label: str | None = None) -> dict:
    pts = result.points
    return {
        "schema": "lucjopt-plotdata-1",
        "series": [
            {
                "label": label or result.spec.optimizer,
                "bond_lengths": [p.bond_length for p in pts],
                "energies": [p.e_method for p in pts],
                "fci_energies": [p.e_fci for p in pts],
                "errors": [p.error for p in pts],
                "s_squared": [p.s_squared for p in pts],
                "n_iterations": [p.n_iterations for p in pts],
            }
        ],
        "provenance": result.provenance,
    }


def plotdata_schema() -> dict:
    ref = importlib.resources.files("lucjopt").joinpath("schemas/plotdata.schema.json")
    return json.loads(ref.read_text())


def validate_plotdata(doc: dict):
    import jsonschema

    jsonschema.validate(doc, plotdata_schema())
