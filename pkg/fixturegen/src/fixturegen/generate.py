"""Dissociation-grid fixture generation with orbital continuity tracking.

For each geometry: restricted Hartree-Fock in the minimal basis (seeded
from the previous geometry's orbitals), maximum-overlap alignment of the
occupied and virtual blocks against the previous geometry (so orbitals
evolve continuously along the grid), frozen-core active-space reduction,
and FCIDUMP emission.  A manifest records SCF energies, permutations,
alignment overlaps, file checksums, and (optionally) exact ground-state
energies obtained through the consumer package's command-line interface.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
import subprocess

import click
import numpy as np
from scipy.optimize import linear_sum_assignment

from . import active, basis, integrals, scf

MOLECULES = {
    # symbol, total electrons, frozen orbitals, active orbitals
    "N2": ("N", 14, 2, 8),
    "C2": ("C", 12, 2, 8),
}

DEFAULT_GRIDS = {
    "N2": [round(0.9 + 0.1 * k, 4) for k in range(22)],  # 0.9 .. 3.0
    "C2": [round(1.0 + 0.1 * k, 4) for k in range(21)],  # 1.0 .. 3.0
}

ALIGNMENT_THRESHOLD = 0.9


@dataclasses.dataclass
class FixtureRecipe:
    molecule: str
    grid: list
    out_dir: str
    basis: str = "STO-6G"
    fci_command: str | None = None

    def __post_init__(self):
        if self.molecule not in MOLECULES:
            raise ValueError(f"unknown molecule {self.molecule!r}")
        if any(b2 <= b1 for b1, b2 in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly increasing")
        if self.basis != "STO-6G":
            raise ValueError("only the minimal STO-6G basis is supported")


def point_matrices(symbol: str, bond_angstrom: float):
    shells, charges = basis.diatomic(symbol, bond_angstrom)
    bset = integrals.BasisSet(shells)
    s, t, v = integrals.one_electron_matrices(bset, charges)
    eri = integrals.electron_repulsion(bset)
    e_nuc = basis.nuclear_repulsion(charges)
    return bset, s, t + v, eri, e_nuc


def align_orbitals(c_prev, bset_prev, c_curr, bset_curr, n_occ,
                   mo_energy=None, degeneracy_tol=1e-7):
    """Permute, rotate and sign-fix the current orbitals to follow the
    previous geometry, matching within the occupied and virtual blocks
    separately.

    Self-consistent solutions mix degenerate orbitals (the pi pairs of a
    diatomic) with an arbitrary angle at every geometry; after the
    maximum-overlap assignment, each degenerate group is rotated onto the
    previous geometry's gauge by its orthogonal Procrustes solution.

    Orbitals are compared through the current geometry's overlap with
    basis functions identified by label, so the comparison follows the
    atoms instead of penalizing their displacement.

    Returns (aligned coefficients, permutation, per-orbital overlap
    diagonals after alignment).
    """
    s12 = integrals.cross_overlap(bset_curr, bset_curr)
    o = c_prev.T @ s12 @ c_curr
    n = o.shape[0]
    perm = np.empty(n, dtype=int)
    for block in (np.arange(n_occ), np.arange(n_occ, n)):
        cost = -np.abs(o[np.ix_(block, block)])
        rows, cols = linear_sum_assignment(cost)
        perm[block[rows]] = block[cols]
    aligned = c_curr[:, perm].copy()
    if mo_energy is not None:
        energy = np.asarray(mo_energy)[perm]
        start = 0
        scale = max(1.0, float(np.abs(energy).max()))
        while start < n:
            stop = start + 1
            while stop < n and abs(energy[stop] - energy[stop - 1]) < degeneracy_tol * scale:
                stop += 1
            if stop - start > 1:
                group = np.arange(start, stop)
                o_gg = c_prev[:, group].T @ s12 @ aligned[:, group]
                u, _, vt = np.linalg.svd(o_gg)
                aligned[:, group] = aligned[:, group] @ (u @ vt).T
            start = stop
    diag = np.einsum("pi,pq,qi->i", c_prev, s12, aligned)
    aligned[:, diag < 0] *= -1.0
    return aligned, perm, np.abs(diag)


def _sha256(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def fci_energy_via_cli(command: str, fixture_path: str) -> float:
    """Ground-state energy through the consumer CLI (external interface)."""
    proc = subprocess.run(
        command.split() + ["validate", str(fixture_path), "--fci"],
        capture_output=True, text=True, check=True,
    )
    match = re.search(r"fci_energy\s+(-?\d+\.\d+)", proc.stdout)
    if match is None:
        raise RuntimeError(f"no fci_energy in output: {proc.stdout!r}")
    return float(match.group(1))


def generate(recipe: FixtureRecipe, extra_points=()) -> dict:
    """Produce FCIDUMP fixtures plus the manifest for one molecule.

    ``extra_points`` are (label, bond_length_angstrom) pairs emitted with
    custom file names (continuity-aligned against the nearest grid
    neighbor below).
    """
    symbol, n_elec, n_frozen, n_active = MOLECULES[recipe.molecule]
    os.makedirs(recipe.out_dir, exist_ok=True)
    n_occ = n_elec // 2
    rows = []
    mo_prev = None
    bset_prev = None
    prefix = recipe.molecule.lower()

    for bond in recipe.grid:
        bset, s, hcore, eri, e_nuc = point_matrices(symbol, bond)
        if mo_prev is None:
            result = scf.robust_rhf(s, hcore, eri, n_elec, e_nuc)
        else:
            result = scf.restricted_hartree_fock(
                s, hcore, eri, n_elec, e_nuc, mo_guess=mo_prev
            )
        row = {
            "molecule": recipe.molecule,
            "bond_length_angstrom": bond,
            "e_rhf": result.energy,
            "scf_converged": result.converged,
            "scf_iterations": result.n_iterations,
        }
        if not result.converged:
            row["flagged"] = "scf_not_converged"
            rows.append(row)
            continue
        c = result.mo_coeff
        if mo_prev is not None:
            c, perm, diag = align_orbitals(
                mo_prev, bset_prev, c, bset, n_occ, mo_energy=result.mo_energy
            )
            row["permutation"] = perm.tolist()
            row["min_alignment_overlap"] = float(diag.min())
            row["alignment_ok"] = bool(diag.min() >= ALIGNMENT_THRESHOLD)
        h_mo, eri_mo = active.mo_integrals(hcore, eri, c)
        h1, eri_act, core = active.active_space(h_mo, eri_mo, e_nuc, n_frozen, n_active)
        name = f"{prefix}_d{bond:.4f}.fcidump"
        path = os.path.join(recipe.out_dir, name)
        active.write_fcidump(path, h1, eri_act, core, n_elec - 2 * n_frozen)
        row["fcidump"] = name
        row["sha256"] = _sha256(path)
        if recipe.fci_command:
            row["e_fci"] = fci_energy_via_cli(recipe.fci_command, path)
        rows.append(row)
        mo_prev, bset_prev = c, bset

    for label, bond in extra_points:
        bset, s, hcore, eri, e_nuc = point_matrices(symbol, bond)
        result = scf.restricted_hartree_fock(s, hcore, eri, n_elec, e_nuc,
                                             mo_guess=mo_prev)
        c = result.mo_coeff
        if mo_prev is not None:
            c, _, _ = align_orbitals(
                mo_prev, bset_prev, c, bset, n_occ, mo_energy=result.mo_energy
            )
        h_mo, eri_mo = active.mo_integrals(hcore, eri, c)
        h1, eri_act, core = active.active_space(h_mo, eri_mo, e_nuc, n_frozen, n_active)
        path = os.path.join(recipe.out_dir, label)
        active.write_fcidump(path, h1, eri_act, core, n_elec - 2 * n_frozen)
        row = {
            "molecule": recipe.molecule,
            "bond_length_angstrom": bond,
            "e_rhf": result.energy,
            "scf_converged": result.converged,
            "scf_iterations": result.n_iterations,
            "fcidump": label,
            "sha256": _sha256(path),
        }
        if recipe.fci_command:
            row["e_fci"] = fci_energy_via_cli(recipe.fci_command, path)
        rows.append(row)

    manifest = {
        "molecule": recipe.molecule,
        "basis": recipe.basis,
        "n_frozen": n_frozen,
        "n_active": n_active,
        "n_electrons_active": n_elec - 2 * n_frozen,
        "alignment_threshold": ALIGNMENT_THRESHOLD,
        "points": rows,
    }
    return manifest


@click.command()
@click.option("--molecule", type=click.Choice(sorted(MOLECULES)), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--grid", type=str, default=None,
              help="start:stop:step in Angstrom (default per molecule).")
@click.option("--fci-command", type=str, default=None,
              help="Consumer CLI used to record exact energies (e.g. 'lucjopt').")
@click.option("--manifest", "manifest_name", type=str, default="manifest.json")
def main(molecule, out_dir, grid, fci_command, manifest_name):
    """Generate dissociation-grid FCIDUMP fixtures and a manifest."""
    if grid:
        start, stop, step = (float(tok) for tok in grid.split(":"))
        values = []
        b = start
        while b <= stop + 1e-9:
            values.append(round(b, 4))
            b += step
    else:
        values = DEFAULT_GRIDS[molecule]
    recipe = FixtureRecipe(molecule=molecule, grid=values, out_dir=out_dir,
                           fci_command=fci_command)
    extra = []
    if molecule == "N2":
        extra = [("n2_2.118bohr.fcidump", 2.118 * basis.ANGSTROM_PER_BOHR)]
    manifest = generate(recipe, extra_points=extra)
    path = os.path.join(out_dir, manifest_name)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    n_ok = sum(1 for r in manifest["points"] if "fcidump" in r)
    click.echo(f"{n_ok}/{len(manifest['points'])} points written to {out_dir}")


if __name__ == "__main__":
    main()
