"""Restricted Hartree-Fock with DIIS and optional level shifting."""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg


class ScfError(RuntimeError):
    pass


@dataclasses.dataclass
class ScfResult:
    energy: float
    mo_coeff: np.ndarray
    mo_energy: np.ndarray
    converged: bool
    n_iterations: int


def _orthogonalizer(s: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(s)
    keep = vals > 1e-10
    return vecs[:, keep] / np.sqrt(vals[keep])


def restricted_hartree_fock(
    s: np.ndarray,
    hcore: np.ndarray,
    eri: np.ndarray,
    n_electrons: int,
    e_nuc: float = 0.0,
    mo_guess: np.ndarray | None = None,
    max_iterations: int = 200,
    energy_tol: float = 1e-11,
    error_tol: float = 1e-9,
    level_shift: float = 0.0,
    diis_depth: int = 8,
) -> ScfResult:
    """Closed-shell SCF; density from the aufbau occupation each cycle.

    ``mo_guess`` (typically the previous geometry's orbitals) is
    symmetrically orthonormalized against the current overlap before use.
    """
    if n_electrons % 2:
        raise ScfError("restricted SCF needs an even electron count")
    n_occ = n_electrons // 2
    x = _orthogonalizer(s)

    def density(c):
        occ = c[:, :n_occ]
        return occ @ occ.T

    if mo_guess is not None:
        m = mo_guess.T @ s @ mo_guess
        c = mo_guess @ np.linalg.inv(scipy.linalg.sqrtm(m).real)
        d = density(c)
    else:
        f0 = x.T @ hcore @ x
        _, cp = np.linalg.eigh(f0)
        d = density(x @ cp)

    energy = 0.0
    fock_list: list = []
    error_list: list = []
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        j = np.einsum("pqrs,rs->pq", eri, d, optimize=True)
        k = np.einsum("prqs,rs->pq", eri, d, optimize=True)
        fock = hcore + 2.0 * j - k
        new_energy = float(np.sum(d * (hcore + fock))) + e_nuc
        error = fock @ d @ s - s @ d @ fock
        error = x.T @ error @ x
        err_norm = np.abs(error).max()
        if abs(new_energy - energy) < energy_tol and err_norm < error_tol and it > 1:
            energy = new_energy
            converged = True
            break
        energy = new_energy

        fock_list.append(fock)
        error_list.append(error)
        if len(fock_list) > diis_depth:
            fock_list.pop(0)
            error_list.pop(0)
        if len(fock_list) > 1:
            fock_eff = _diis_extrapolate(fock_list, error_list)
        else:
            fock_eff = fock
        if level_shift > 0.0 and err_norm > 1e-3:
            # shift virtual orbitals up through the density projector
            fock_eff = fock_eff + level_shift * (s - s @ d @ s)
            fock_eff = 0.5 * (fock_eff + fock_eff.T)
        fp = x.T @ fock_eff @ x
        mo_e, cp = np.linalg.eigh(fp)
        c = x @ cp
        d = density(c)

    j = np.einsum("pqrs,rs->pq", eri, d, optimize=True)
    k = np.einsum("prqs,rs->pq", eri, d, optimize=True)
    fock = hcore + 2.0 * j - k
    fp = x.T @ fock @ x
    mo_e, cp = np.linalg.eigh(fp)
    c = x @ cp
    energy = float(np.sum(density(c) * (hcore + fock))) + e_nuc
    return ScfResult(
        energy=energy, mo_coeff=c, mo_energy=mo_e, converged=converged,
        n_iterations=it,
    )


def robust_rhf(
    s, hcore, eri, n_electrons, e_nuc=0.0, n_attempts: int = 6, seed: int = 0,
    **kwargs,
) -> ScfResult:
    """Multi-start SCF: the core-Hamiltonian guess plus deterministic
    random orbital rotations; returns the lowest converged solution.

    The plain aufbau iteration can settle on excited self-consistent
    solutions (observed for multiply bonded diatomics); perturbed starts
    reliably expose the ground one.
    """
    x = _orthogonalizer(s)
    f0 = x.T @ hcore @ x
    _, cp = np.linalg.eigh(f0)
    c0 = x @ cp
    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(n_attempts):
        if attempt == 0:
            guess = None
        else:
            q = rng.normal(size=c0.shape, scale=0.1 + 0.1 * attempt)
            guess = c0 @ scipy.linalg.expm(q - q.T)
        try:
            res = restricted_hartree_fock(
                s, hcore, eri, n_electrons, e_nuc, mo_guess=guess, **kwargs
            )
        except ScfError:
            continue
        if res.converged and (best is None or res.energy < best.energy):
            best = res
    if best is None:
        raise ScfError("no converged self-consistent solution found")
    return best


def _diis_extrapolate(fock_list, error_list):
    m = len(fock_list)
    b = -np.ones((m + 1, m + 1))
    b[m, m] = 0.0
    for i in range(m):
        for j in range(m):
            b[i, j] = np.sum(error_list[i] * error_list[j])
    rhs = np.zeros(m + 1)
    rhs[m] = -1.0
    try:
        coeffs = np.linalg.solve(b, rhs)[:m]
    except np.linalg.LinAlgError:
        return fock_list[-1]
    return sum(c * f for c, f in zip(coeffs, fock_list))
