"""Minimal STO-6G-style basis data.

Each Slater orbital with unit exponent is expanded in six Gaussians by
maximizing the overlap with the normalized expansion; the 2s and 2p fits
share one exponent set (optimized for the summed overlaps), following
the classic minimal-basis construction.  The 1s fit reproduces the
widely tabulated expansion to ~1e-5 relative; the shared 2sp set is
re-derived with the same procedure (see ``derive`` and the regression
test).  Element scale factors are the standard molecular Slater
exponents; scaling r -> zeta r multiplies the exponents by zeta^2 and
leaves the contraction coefficients unchanged.
"""

from __future__ import annotations

import dataclasses

import numpy as np

# six-Gaussian expansion of the zeta=1 Slater 1s orbital
STO6G_1S_EXPONENTS = (
    23.103032854, 4.235915720, 1.185057138, 0.407099088, 0.158088502,
    0.065109562,
)
STO6G_1S_COEFFS = (
    0.009163600, 0.049361464, 0.168538211, 0.370562669, 0.416491618,
    0.130334247,
)

# shared-exponent expansion of the zeta=1 Slater 2s and 2p orbitals
STO6G_2SP_EXPONENTS = (
    10.308732094, 2.040366870, 0.634143545, 0.243977808, 0.105959666,
    0.048569055,
)
STO6G_2S_COEFFS = (
    -0.013252728, -0.046991600, -0.033785695, 0.250241086, 0.595117382,
    0.240706894,
)
STO6G_2P_COEFFS = (
    0.003759662, 0.037679220, 0.173896324, 0.418036106, 0.425860151,
    0.101708620,
)

# standard molecular Slater exponents (1s, 2sp)
ELEMENT_ZETA = {
    "H": (1.24, None),
    "C": (5.67, 1.72),
    "N": (6.67, 1.95),
    "O": (7.66, 2.25),
}

ATOMIC_NUMBER = {"H": 1, "C": 6, "N": 7, "O": 8}

ANGSTROM_PER_BOHR = 0.529177210903


@dataclasses.dataclass(frozen=True)
class Shell:
    """Contracted Cartesian shell: l = 0 (s) or 1 (p, components x/y/z)."""

    center: tuple
    l: int
    exponents: tuple
    coefficients: tuple

    @property
    def n_components(self) -> int:
        return 1 if self.l == 0 else 3


def element_shells(symbol: str, center) -> list:
    """STO-6G shell list (1s, 2s, 2p for first-row atoms) at ``center``."""
    zeta1, zeta2 = ELEMENT_ZETA[symbol]
    center = tuple(float(x) for x in center)
    shells = [Shell(center, 0,
                    tuple(a * zeta1**2 for a in STO6G_1S_EXPONENTS),
                    STO6G_1S_COEFFS)]
    if zeta2 is not None:
        shells.append(Shell(center, 0,
                            tuple(a * zeta2**2 for a in STO6G_2SP_EXPONENTS),
                            STO6G_2S_COEFFS))
        shells.append(Shell(center, 1,
                            tuple(a * zeta2**2 for a in STO6G_2SP_EXPONENTS),
                            STO6G_2P_COEFFS))
    return shells


def diatomic(symbol: str, bond_length_angstrom: float):
    """Shells and nuclear charges of a homonuclear diatomic on the z axis."""
    d = bond_length_angstrom / ANGSTROM_PER_BOHR
    centers = [(0.0, 0.0, 0.0), (0.0, 0.0, d)]
    shells = []
    charges = []
    for c in centers:
        shells.extend(element_shells(symbol, c))
        charges.append((ATOMIC_NUMBER[symbol], c))
    return shells, charges


def nuclear_repulsion(charges) -> float:
    total = 0.0
    for i, (zi, ci) in enumerate(charges):
        for zj, cj in charges[i + 1:]:
            total += zi * zj / np.linalg.norm(np.subtract(ci, cj))
    return float(total)


# --- derivation of the expansions (regression oracle) ------------------------

def _radial_grid(n=400, rmax=60.0):
    xs, ws = np.polynomial.legendre.leggauss(n)
    return 0.5 * rmax * (xs + 1.0), 0.5 * rmax * ws


def derive(kind: str, n_gauss: int = 6):
    """Re-derive one expansion by overlap maximization.

    kind is "1s" or "2sp"; returns (exponents, coeffs) with coefficients
    over radially normalized primitives ((coeff_2s, coeff_2p) for "2sp").
    Deterministic Nelder-Mead refinement from a geometric start.
    """
    from scipy.optimize import minimize

    r, w = _radial_grid()

    def ogram(funcs):
        mats = np.array([f for f in funcs])
        return (mats * w * r**2) @ mats.T

    def best(sto_vals, prim_vals):
        v = (prim_vals * w * r**2) @ sto_vals
        m = (prim_vals * w * r**2) @ prim_vals.T
        sol = np.linalg.solve(m, v)
        s2 = float(v @ sol)
        return np.sqrt(s2), sol / np.sqrt(s2)

    def prim_s(alphas):
        vals = np.exp(-np.outer(alphas, r**2))
        norms = 1.0 / np.sqrt(np.sum(vals**2 * w * r**2, axis=1))
        return norms[:, None] * vals

    def prim_p(alphas):
        vals = r * np.exp(-np.outer(alphas, r**2))
        norms = 1.0 / np.sqrt(np.sum(vals**2 * w * r**2, axis=1))
        return norms[:, None] * vals

    sto_1s = 2.0 * np.exp(-r)
    sto_2 = (2.0 / np.sqrt(3.0)) * r * np.exp(-r)

    if kind == "1s":
        def neg(log_a):
            s, _ = best(sto_1s, prim_s(np.exp(log_a)))
            return -s
        x0 = np.log(np.geomspace(0.06, 25.0, n_gauss))
    elif kind == "2sp":
        def neg(log_a):
            a = np.exp(log_a)
            s1, _ = best(sto_2, prim_s(a))
            s2, _ = best(sto_2, prim_p(a))
            return -(s1 + s2)
        x0 = np.log(np.geomspace(0.04, 20.0, n_gauss))
    else:
        raise ValueError(kind)

    res = minimize(neg, x0, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14,
                            "maxiter": 40000, "maxfev": 40000})
    alphas = np.sort(np.exp(res.x))[::-1]
    if kind == "1s":
        _, c = best(sto_1s, prim_s(alphas))
        return alphas, c
    _, cs = best(sto_2, prim_s(alphas))
    _, cp = best(sto_2, prim_p(alphas))
    return alphas, (cs, cp)
