"""Figure rendering for the CLI report paths.

Consumes the same plotdata/trace structures the scan emits, so external
tools and these helpers see identical inputs.  All functions write PNG
files and return the path.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

MHA_PER_HARTREE = 1e3
CHEMICAL_ACCURACY_MHA = 1.6


def dissociation_figure(plotdata: dict, path: str) -> str:
    """Total energies of every series against the exact reference."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    first = plotdata["series"][0]
    ax.plot(first["bond_lengths"], first["fci_energies"], "k-", lw=1.2, label="exact")
    for series in plotdata["series"]:
        ax.plot(series["bond_lengths"], series["energies"], "o--", ms=4,
                label=series["label"])
    ax.set_xlabel("bond length (Å)")
    ax.set_ylabel("energy (Hartree)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def error_figure(plotdata: dict, path: str) -> str:
    """Energy errors versus the exact reference, log scale, with the
    1 kcal/mol line."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for series in plotdata["series"]:
        errors = [max(e * MHA_PER_HARTREE, 1e-9) for e in series["errors"]]
        ax.semilogy(series["bond_lengths"], errors, "o--", ms=4, label=series["label"])
    ax.axhline(CHEMICAL_ACCURACY_MHA, color="gray", ls=":", lw=1,
               label="1 kcal/mol")
    ax.set_xlabel("bond length (Å)")
    ax.set_ylabel("error vs exact (mHa)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def spin_figure(plotdata: dict, path: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for series in plotdata["series"]:
        ax.plot(series["bond_lengths"], series["s_squared"], "o--", ms=4,
                label=series["label"])
    ax.set_xlabel("bond length (Å)")
    ax.set_ylabel("spin squared")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def convergence_figure(records: list, path: str, reference: float | None = None) -> str:
    """Energy and gradient-norm trace of one optimization run."""
    its = [r.iteration for r in records]
    energies = [r.energy for r in records]
    grads = [r.grad_norm for r in records]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(its, energies, "o-", ms=3)
    if reference is not None:
        ax1.axhline(reference, color="gray", ls=":", lw=1)
    ax1.set_ylabel("energy (Hartree)")
    ax2.semilogy(its, [max(g, 1e-16) for g in grads], "o-", ms=3)
    ax2.set_ylabel("gradient max-norm")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_scan_figures(plotdata: dict, out_dir: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    return [
        dissociation_figure(plotdata, os.path.join(out_dir, "dissociation.png")),
        error_figure(plotdata, os.path.join(out_dir, "errors.png")),
        spin_figure(plotdata, os.path.join(out_dir, "spin_squared.png")),
    ]
