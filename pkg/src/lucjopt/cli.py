"""Command-line entry point.

Subcommands take a declarative TOML/JSON configuration file; a handful
of flags override config values.  Every run is reproducible from
(config, seed).  Exit codes: 0 success, 1 error, 2 ran but did not
converge.  All outputs land under --out; report paths write figures
next to the delimited/JSON outputs.
"""

from __future__ import annotations

import json
import os
import sys

import click

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NONCONVERGED = 2


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise click.ClickException(f"config file not found: {path}")
    if path.endswith(".json"):
        with open(path) as f:
            return json.load(f)
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as f:
        return tomllib.load(f)


_OPTIMIZER_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["lm", "lbfgs", "sr"]},
        "max_iters": {"type": "integer", "minimum": 1},
        "grad_tol": {"type": "number", "exclusiveMinimum": 0},
        "rel_energy_tol": {"type": "number", "exclusiveMinimum": 0},
        "hyper_budget": {"type": "integer", "minimum": 4},
    },
    "additionalProperties": False,
}

_ANSATZ_SCHEMA = {
    "type": "object",
    "properties": {
        "n_layers": {"type": "integer", "minimum": 0},
        "topology": {"enum": ["square_lattice"]},
    },
    "required": ["n_layers"],
    "additionalProperties": False,
}

_NOISE_SCHEMA = {
    "type": "object",
    "properties": {
        "sigma": {"type": "number", "minimum": 0},
        "targets": {"type": "array", "items": {"enum": ["g", "s", "h"]}},
    },
    "additionalProperties": False,
}

_INIT_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["zero_noise", "file"]},
        "scale": {"type": "number", "minimum": 0},
        "path": {"type": "string"},
        "n_restarts": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

OPTIMIZE_SCHEMA = {
    "type": "object",
    "properties": {
        "fixture": {"type": "string"},
        "ansatz": _ANSATZ_SCHEMA,
        "optimizer": _OPTIMIZER_SCHEMA,
        "noise": _NOISE_SCHEMA,
        "init": _INIT_SCHEMA,
        "seed": {"type": "integer"},
    },
    "required": ["fixture", "ansatz"],
    "additionalProperties": False,
}

SCAN_SCHEMA = {
    "type": "object",
    "properties": {
        "points": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "array", "minItems": 2, "maxItems": 2,
                "prefixItems": [{"type": "number"}, {"type": "string"}],
            },
        },
        "manifest": {"type": "string"},
        "molecule": {"type": "string"},
        "max_points": {"type": "integer", "minimum": 1},
        "ansatz": _ANSATZ_SCHEMA,
        "optimizer": _OPTIMIZER_SCHEMA,
        "noise": _NOISE_SCHEMA,
        "init": _INIT_SCHEMA,
        "bootstrap": {"enum": ["none", "three_pass"]},
        "seed": {"type": "integer"},
    },
    "required": ["ansatz"],
    "additionalProperties": False,
}

ESTIMATE_SCHEMA = {
    "type": "object",
    "properties": {
        "fixture": {"type": "string"},
        "ansatz": _ANSATZ_SCHEMA,
        "element": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["overlap", "hamiltonian", "gradient", "energy"]},
                "g": {"type": "integer", "minimum": 0},
                "h": {"type": "integer", "minimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "shots": {"type": "integer", "minimum": 16},
        "init": _INIT_SCHEMA,
        "seed": {"type": "integer"},
    },
    "required": ["fixture", "ansatz", "element"],
    "additionalProperties": False,
}

COST_SCHEMA = {
    "type": "object",
    "properties": {
        "n_orbitals": {"type": "integer", "minimum": 1},
        "n_layers": {"type": "integer", "minimum": 0},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "method": {"enum": ["qsr", "qlm"]},
        "n_factors": {"type": "integer", "minimum": 0},
        "lambda_norm": {"type": "number", "exclusiveMinimum": 0},
        "fixture": {"type": "string"},
        "theta_space": {"type": "boolean"},
        "params": {"type": "string"},
    },
    "required": ["n_orbitals", "n_layers"],
    "additionalProperties": False,
}


def _validate_config(config: dict, schema: dict):
    import jsonschema

    try:
        jsonschema.validate(config, schema)
    except jsonschema.ValidationError as exc:
        raise click.ClickException(f"invalid config: {exc.message}")


def _set_threads(threads: int | None):
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--out", "out_dir", type=click.Path(), default="out",
              show_default=True, help="Output directory.")
@click.option("--threads", type=int, default=None,
              help="Cap the BLAS/OpenMP thread count.")
@click.option("-v", "--verbose", count=True, help="Increase logging verbosity.")
@click.pass_context
def main(ctx, seed, out_dir, threads, verbose):
    """Simulate and optimize cluster-Jastrow wavefunctions."""
    _set_threads(threads)
    import logging

    logging.basicConfig(
        level=logging.DEBUG if verbose > 1 else
        logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["out"] = out_dir


def _resolve_init(config: dict, spec_kwargs: dict):
    init = config.get("init", {})
    if init.get("kind") == "file":
        spec_kwargs["init_params_path"] = init["path"]
    if "scale" in init:
        spec_kwargs["init_scale"] = init["scale"]
    if "n_restarts" in init:
        spec_kwargs["n_restarts"] = init["n_restarts"]


def _scan_spec_from_config(config: dict, seed_override):
    from .scan import ScanSpec

    points = [(float(b), p) for b, p in config.get("points", [])]
    if not points and "manifest" in config:
        with open(config["manifest"]) as f:
            manifest = json.load(f)
        base = os.path.dirname(os.path.abspath(config["manifest"]))
        entries = manifest["points"]
        if "molecule" in config:
            entries = [e for e in entries if e["molecule"] == config["molecule"]]
        points = [
            (float(e["bond_length_angstrom"]), os.path.join(base, e["fcidump"]))
            for e in entries
        ]
        points.sort()
        if "max_points" in config and len(points) > config["max_points"]:
            idx = [round(i * (len(points) - 1) / (config["max_points"] - 1))
                   for i in range(config["max_points"])]
            points = [points[i] for i in idx]
    if not points:
        raise click.ClickException("scan config provides no points")
    optimizer = config.get("optimizer", {})
    noise = config.get("noise", {})
    kwargs = dict(
        points=points,
        n_layers=config["ansatz"]["n_layers"],
        topology=config["ansatz"].get("topology", "square_lattice"),
        optimizer=optimizer.get("kind", "lm"),
        sigma=noise.get("sigma", 0.0),
        noise_targets=tuple(noise.get("targets", ["g", "s", "h"])),
        bootstrap=config.get("bootstrap", "three_pass"),
        seed=seed_override if seed_override is not None else config.get("seed", 0),
    )
    for key in ("max_iters", "grad_tol", "rel_energy_tol", "hyper_budget"):
        if key in optimizer:
            kwargs[key] = optimizer[key]
    _resolve_init(config, kwargs)
    return ScanSpec(**kwargs)


@main.command()
@click.option("-c", "--config", "config_path", type=click.Path(), required=True,
              help="TOML/JSON run description.")
@click.option("--fixture", type=click.Path(), default=None,
              help="Override the fixture path from the config.")
@click.pass_context
def optimize(ctx, config_path, fixture):
    """Optimize the ansatz on a single fixture; write trace and parameters."""
    config = _load_config(config_path)
    _validate_config(config, OPTIMIZE_SCHEMA)
    if fixture:
        config["fixture"] = fixture
    if not os.path.exists(config["fixture"]):
        click.echo(f"error: fixture not found: {config['fixture']}", err=True)
        sys.exit(EXIT_ERROR)
    from . import scan as scan_mod
    from .scan import ScanSpec, run_scan, emit_outputs
    from .plotting import convergence_figure

    seed = ctx.obj["seed"]
    optimizer = config.get("optimizer", {})
    noise = config.get("noise", {})
    kwargs = dict(
        points=[(1.0, config["fixture"])],
        n_layers=config["ansatz"]["n_layers"],
        topology=config["ansatz"].get("topology", "square_lattice"),
        optimizer=optimizer.get("kind", "lm"),
        sigma=noise.get("sigma", 0.0),
        noise_targets=tuple(noise.get("targets", ["g", "s", "h"])),
        bootstrap="none",
        seed=seed if seed is not None else config.get("seed", 0),
    )
    for key in ("max_iters", "grad_tol", "rel_energy_tol", "hyper_budget"):
        if key in optimizer:
            kwargs[key] = optimizer[key]
    _resolve_init(config, kwargs)
    spec = ScanSpec(**kwargs)
    result = run_scan(spec)
    out = ctx.obj["out"]
    emit_outputs(result, out)
    point = result.points[0]
    convergence_figure(
        result.traces[0], os.path.join(out, "convergence.png"),
        reference=point.e_fci,
    )
    summary = {
        "energy": point.e_method,
        "e_fci": point.e_fci,
        "error": point.error,
        "s_squared": point.s_squared,
        "n_iterations": point.n_iterations,
        "converged": point.error is not None and abs(point.error) < 1e3,
    }
    trace = result.traces[0]
    grad_norm = trace[-1].grad_norm if trace else float("inf")
    converged = grad_norm <= max(spec.grad_tol, spec.sigma) or (
        spec.optimizer == "lm"
        and len(trace) >= 2
        and abs(trace[-1].energy - trace[-2].energy)
        / max(abs(trace[-2].energy), 1e-12)
        <= max(spec.rel_energy_tol, spec.sigma)
    )
    summary["converged"] = bool(converged)
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    click.echo(
        f"energy {point.e_method:.10f}  exact {point.e_fci:.10f}  "
        f"error {point.error:.3e}  iterations {point.n_iterations}"
    )
    sys.exit(EXIT_OK if converged else EXIT_NONCONVERGED)


@main.command()
@click.option("-c", "--config", "config_path", type=click.Path(), required=True)
@click.pass_context
def scan(ctx, config_path):
    """Run a bond-length sweep; write curve.csv, plotdata.json, figures."""
    config = _load_config(config_path)
    _validate_config(config, SCAN_SCHEMA)
    spec = _scan_spec_from_config(config, ctx.obj["seed"])
    for _, path in spec.points:
        if not os.path.exists(path):
            click.echo(f"error: fixture not found: {path}", err=True)
            sys.exit(EXIT_ERROR)
    from .scan import run_scan, emit_outputs, plotdata
    from .plotting import render_scan_figures

    result = run_scan(spec)
    out = ctx.obj["out"]
    emit_outputs(result, out)
    render_scan_figures(plotdata(result), os.path.join(out, "figures"))
    worst = max(abs(p.error) for p in result.points)
    click.echo(f"{len(result.points)} points; worst |error| {worst:.3e} Hartree")
    sys.exit(EXIT_OK)


@main.command()
@click.option("-c", "--config", "config_path", type=click.Path(), default=None)
@click.option("--n-orbitals", type=int, default=None)
@click.option("--n-layers", type=int, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--method", type=click.Choice(["qsr", "qlm"]), default=None)
@click.option("--fixture", type=click.Path(), default=None,
              help="Derive the variance constant from this fixture.")
@click.pass_context
def cost(ctx, config_path, n_orbitals, n_layers, epsilon, method, fixture):
    """Emit the per-iteration circuit/shot cost report (Markdown + CSV)."""
    config = _load_config(config_path)
    for key, val in (("n_orbitals", n_orbitals), ("n_layers", n_layers),
                     ("epsilon", epsilon), ("method", method),
                     ("fixture", fixture)):
        if val is not None:
            config[key] = val
    _validate_config(config, COST_SCHEMA)
    from .costmodel import cost_report, report_markdown, report_csv

    kwargs = dict(
        n_orbitals=config["n_orbitals"],
        n_layers=config["n_layers"],
        epsilon=config.get("epsilon", 1e-3),
        method=config.get("method", "qlm"),
    )
    if "fixture" in config:
        from .hamiltonian import load_fcidump, double_factorize

        h = load_fcidump(config["fixture"])
        df = double_factorize(h, trunc_tol=1e-10)
        kwargs["n_factors"] = df.n_factors
        kwargs["lambda_norm"] = df.lambda_norm
    else:
        if "n_factors" in config:
            kwargs["n_factors"] = config["n_factors"]
        if "lambda_norm" in config:
            kwargs["lambda_norm"] = config["lambda_norm"]
    if config.get("theta_space"):
        from .ansatz import LucjParams, jacobian_alpha_theta

        params = LucjParams.load(config["params"])
        kwargs["theta_space"] = True
        kwargs["jacobian_colnorms"] = jacobian_alpha_theta(params).column_norms
    estimates = cost_report(**kwargs)
    out = ctx.obj["out"]
    os.makedirs(out, exist_ok=True)
    md = report_markdown(estimates)
    with open(os.path.join(out, "cost.md"), "w") as f:
        f.write(md + "\n")
    with open(os.path.join(out, "cost.csv"), "w") as f:
        f.write(report_csv(estimates))
    click.echo(md)
    sys.exit(EXIT_OK)


@main.command()
@click.option("-c", "--config", "config_path", type=click.Path(), required=True)
@click.pass_context
def estimate(ctx, config_path):
    """Evaluate one matrix element exactly and by sampling; print both."""
    config = _load_config(config_path)
    _validate_config(config, ESTIMATE_SCHEMA)
    import numpy as np

    from . import ansatz as ansatz_mod
    from . import estimators
    from .fock import FockBasis
    from .hamiltonian import load_fcidump, double_factorize

    if not os.path.exists(config["fixture"]):
        click.echo(f"error: fixture not found: {config['fixture']}", err=True)
        sys.exit(EXIT_ERROR)
    h = load_fcidump(config["fixture"])
    basis = FockBasis.for_hamiltonian(h)
    df = double_factorize(h, trunc_tol=1e-10)
    seed = ctx.obj["seed"]
    seed = seed if seed is not None else config.get("seed", 0)
    init = config.get("init", {})
    if init.get("kind") == "file":
        params = ansatz_mod.LucjParams.load(init["path"])
    else:
        rng = np.random.default_rng(seed)
        params = ansatz_mod.random_perturbation(
            h.n_orbitals, config["ansatz"]["n_layers"],
            ansatz_mod.default_connectivity(h.n_orbitals),
            rng, scale=init.get("scale", 0.1),
        )
    angles = ansatz_mod.angles_of(params)
    shots = config.get("shots", 4096)
    element = config["element"]
    kind = element["kind"]
    g = element.get("g", 0)
    hh = element.get("h", g)
    if kind == "overlap":
        exact, _ = estimators.overlap_element_channels(angles, g, hh, basis)
        sampled, _ = estimators.overlap_element_channels(
            angles, g, hh, basis, shots=shots, seed=seed
        )
        bound = 9.0 / shots
    elif kind == "hamiltonian":
        exact = estimators.hamiltonian_element_channels(angles, g, hh, basis, h)
        sampled = estimators.hamiltonian_element_channels(
            angles, g, hh, basis, h, df=df, shots=shots, seed=seed
        )
        bound = 81.0 * df.lambda_norm**2 / shots
    elif kind == "gradient":
        exact = estimators.shift_rule_gradient(angles, g, basis, h)
        sampled = estimators.shift_rule_gradient(
            angles, g, basis, h, df=df, shots=shots, seed=seed
        )
        bound = estimators.SHIFT_RULE.y_one_norm**2 * df.lambda_norm**2 / shots
    else:
        exact, _ = estimators.energy_sample(params, basis, df, h, shots=0)
        sampled, bound = estimators.energy_sample(
            params, basis, df, h, shots=shots, seed=seed
        )
    report = {
        "kind": kind, "g": g, "h": hh, "shots": shots, "seed": seed,
        "exact": [float(np.real(exact)), float(np.imag(exact))],
        "sampled": [float(np.real(sampled)), float(np.imag(sampled))],
        "abs_deviation": float(abs(exact - sampled)),
        "variance_bound": bound,
        "std_bound": float(np.sqrt(bound)),
    }
    out = ctx.obj["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "estimate.json"), "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    click.echo(
        f"{kind}[{g},{hh}] exact {exact:.8f}  sampled {sampled:.8f}  "
        f"|dev| {report['abs_deviation']:.3e}  std bound {report['std_bound']:.3e}"
    )
    sys.exit(EXIT_OK)


@main.command()
@click.argument("fixture", type=click.Path())
@click.option("--fci", "with_fci", is_flag=True,
              help="Also compute and print the exact ground-state energy.")
@click.pass_context
def validate(ctx, fixture, with_fci):
    """Validate an FCIDUMP fixture (header, indices, integral symmetry)."""
    if not os.path.exists(fixture):
        click.echo(f"error: fixture not found: {fixture}", err=True)
        sys.exit(EXIT_ERROR)
    from .hamiltonian import load_fcidump, FcidumpError

    try:
        h = load_fcidump(fixture)
    except (FcidumpError, ValueError) as exc:
        click.echo(f"error: invalid fixture: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(
        f"ok: N={h.n_orbitals} electrons=({h.n_alpha},{h.n_beta}) "
        f"core={h.core_energy:.10f}"
    )
    if with_fci:
        from .fock import FockBasis, fci_solve

        basis = FockBasis.for_hamiltonian(h)
        (e0, _), = fci_solve(h, basis, 1)
        click.echo(f"fci_energy {e0:.12f}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
