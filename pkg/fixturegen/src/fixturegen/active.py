"""Frozen-core active-space reduction and FCIDUMP emission."""

from __future__ import annotations

import numpy as np


def mo_integrals(hcore_ao, eri_ao, mo_coeff):
    h_mo = mo_coeff.T @ hcore_ao @ mo_coeff
    eri_mo = np.einsum(
        "pqrs,pi,qj,rk,sl->ijkl", eri_ao, mo_coeff, mo_coeff, mo_coeff, mo_coeff,
        optimize=True,
    )
    return h_mo, eri_mo


def active_space(h_mo, eri_mo, e_nuc, n_frozen: int, n_active: int):
    """Fold the frozen-core mean field into the active one-body part.

    Returns (h1_active, eri_active, core_energy); molecular orbitals are
    assumed ordered with the frozen ones first.
    """
    frozen = list(range(n_frozen))
    act = list(range(n_frozen, n_frozen + n_active))
    core = e_nuc
    core += 2.0 * sum(h_mo[i, i] for i in frozen)
    for i in frozen:
        for j in frozen:
            core += 2.0 * eri_mo[i, i, j, j] - eri_mo[i, j, j, i]
    h1 = h_mo[np.ix_(act, act)].copy()
    for a_idx, a in enumerate(act):
        for b_idx, b in enumerate(act):
            for i in frozen:
                h1[a_idx, b_idx] += 2.0 * eri_mo[a, b, i, i] - eri_mo[a, i, i, b]
    eri = eri_mo[np.ix_(act, act, act, act)].copy()
    return h1, eri, float(core)


def write_fcidump(path, h1, eri, core_energy, n_electrons, ms2=0, tol=1e-14):
    """Write chemists'-notation integrals in FCIDUMP format, 16 digits."""
    n = h1.shape[0]
    lines = [
        f"&FCI NORB={n},NELEC={n_electrons},MS2={ms2},",
        "  ORBSYM=" + ",".join(["1"] * n) + ",",
        "  ISYM=1,",
        "&END",
    ]

    def fmt(value, i, j, k, l):
        return f"{value:23.16E} {i:4d} {j:4d} {k:4d} {l:4d}"

    for p in range(n):
        for q in range(p + 1):
            for r in range(p + 1):
                s_max = q if r == p else r
                for s in range(s_max + 1):
                    if abs(eri[p, q, r, s]) > tol:
                        lines.append(fmt(eri[p, q, r, s], p + 1, q + 1, r + 1, s + 1))
    for p in range(n):
        for q in range(p + 1):
            if abs(h1[p, q]) > tol:
                lines.append(fmt(h1[p, q], p + 1, q + 1, 0, 0))
    lines.append(fmt(core_energy, 0, 0, 0, 0))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
