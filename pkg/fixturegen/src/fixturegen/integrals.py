"""Gaussian one- and two-electron integrals over s/p shells.

McMurchie-Davidson scheme: Cartesian overlap distributions are expanded
in Hermite Gaussians (E coefficients, computed recursively on primitive
pair arrays), Coulomb integrals contract them against the Hermite
Coulomb tensor R built from Boys functions.  Everything is vectorized
over primitive pairs, so contraction comes for free.

Conventions: chemists' notation (pq|rs); Cartesian p components ordered
x, y, z; all quantities in atomic units.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammainc, gamma

from .basis import Shell


def boys(n_max: int, x: np.ndarray) -> np.ndarray:
    """F_n(x) for n = 0..n_max, shape (n_max+1,) + x.shape.

    The top order comes from the regularized incomplete gamma function;
    lower orders follow by stable downward recursion.  Small arguments
    use the Taylor series.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    small = x < 1e-13
    xs = np.where(small, 1.0, x)
    n = n_max
    top = gamma(n + 0.5) * gammainc(n + 0.5, xs) / (2.0 * xs ** (n + 0.5))
    out[n_max] = np.where(small, 1.0 / (2 * n + 1) - x / (2 * n + 3), top)
    ex = np.exp(-x)
    for n in range(n_max - 1, -1, -1):
        out[n] = (2.0 * x * out[n + 1] + ex) / (2 * n + 1)
    return out


class ShellPair:
    """Primitive-pair data of two contracted shells (flattened pairs)."""

    def __init__(self, sa: Shell, sb: Shell):
        self.sa, self.sb = sa, sb
        a = np.asarray(sa.exponents)
        b = np.asarray(sb.exponents)
        ca = np.asarray(sa.coefficients) * _primitive_norm(a, sa.l)
        cb = np.asarray(sb.coefficients) * _primitive_norm(b, sb.l)
        self.alpha = np.repeat(a, len(b))
        self.beta = np.tile(b, len(a))
        self.weight = np.repeat(ca, len(cb)) * np.tile(cb, len(ca))
        self.p = self.alpha + self.beta
        av = np.asarray(sa.center)
        bv = np.asarray(sb.center)
        self.ab = av - bv
        self.centers = (
            self.alpha[:, None] * av[None, :] + self.beta[:, None] * bv[None, :]
        ) / self.p[:, None]
        mu = self.alpha * self.beta / self.p
        self.k = np.exp(-mu * float(self.ab @ self.ab))
        self._e_cache: dict = {}

    def e_coeff(self, dim: int, i: int, j: int, t: int) -> np.ndarray:
        """Hermite expansion coefficient E_t^{ij} along one dimension."""
        key = (dim, i, j, t)
        if key in self._e_cache:
            return self._e_cache[key]
        if t < 0 or t > i + j:
            val = np.zeros_like(self.p)
        elif i == j == t == 0:
            mu = self.alpha * self.beta / self.p
            val = np.exp(-mu * self.ab[dim] ** 2)
        elif i > 0:
            x_pa = -self.beta / self.p * self.ab[dim]
            val = (
                self.e_coeff(dim, i - 1, j, t - 1) / (2 * self.p)
                + x_pa * self.e_coeff(dim, i - 1, j, t)
                + (t + 1) * self.e_coeff(dim, i - 1, j, t + 1)
            )
        else:
            x_pb = self.alpha / self.p * self.ab[dim]
            val = (
                self.e_coeff(dim, i, j - 1, t - 1) / (2 * self.p)
                + x_pb * self.e_coeff(dim, i, j - 1, t)
                + (t + 1) * self.e_coeff(dim, i, j - 1, t + 1)
            )
        self._e_cache[key] = val
        return val

    def components(self):
        return [_CART[self.sa.l], _CART[self.sb.l]]


_CART = {0: [(0, 0, 0)], 1: [(1, 0, 0), (0, 1, 0), (0, 0, 1)]}


def _primitive_norm(alpha: np.ndarray, l: int) -> np.ndarray:
    if l == 0:
        return (2.0 * alpha / np.pi) ** 0.75
    return (2.0 * alpha / np.pi) ** 0.75 * 2.0 * np.sqrt(alpha)


def _overlap_1d(pair: ShellPair, dim: int, i: int, j: int) -> np.ndarray:
    return pair.e_coeff(dim, i, j, 0) * np.sqrt(np.pi / pair.p)


def overlap_block(pair: ShellPair) -> np.ndarray:
    la, lb = pair.components()
    out = np.zeros((len(la), len(lb)))
    for ia, ca in enumerate(la):
        for ib, cb in enumerate(lb):
            val = pair.weight.copy()
            for dim in range(3):
                val = val * _overlap_1d(pair, dim, ca[dim], cb[dim])
            out[ia, ib] = val.sum()
    return out


def kinetic_block(pair: ShellPair) -> np.ndarray:
    la, lb = pair.components()
    out = np.zeros((len(la), len(lb)))
    beta = pair.beta
    for ia, ca in enumerate(la):
        for ib, cb in enumerate(lb):
            s_dims = [
                {
                    dj: _overlap_1d(pair, dim, ca[dim], dj)
                    for dj in {cb[dim], cb[dim] + 2, max(cb[dim] - 2, 0)}
                }
                for dim in range(3)
            ]
            total = np.zeros_like(pair.p)
            for dim in range(3):
                j = cb[dim]
                t_dim = (
                    beta * (2 * j + 1) * s_dims[dim][j]
                    - 2.0 * beta**2 * s_dims[dim][j + 2]
                )
                if j >= 2:
                    t_dim = t_dim - 0.5 * j * (j - 1) * s_dims[dim][j - 2]
                rest = np.ones_like(pair.p)
                for other in range(3):
                    if other != dim:
                        rest = rest * s_dims[other][cb[other]]
                total = total + t_dim * rest
            out[ia, ib] = (pair.weight * total).sum()
    return out


def _hermite_coulomb(t_max, u_max, v_max, p, pc, n_extra=0):
    """R_{tuv} tensor, shape (t_max+1, u_max+1, v_max+1) + p.shape."""
    n_max = t_max + u_max + v_max + n_extra
    r2 = np.sum(pc**2, axis=-1)
    f = boys(n_max, p * r2)
    base = f * (-2.0 * p) ** np.arange(n_max + 1).reshape(
        (-1,) + (1,) * p.ndim
    )
    cache = {}

    def r(t, u, v, n):
        if t < 0 or u < 0 or v < 0:
            return 0.0
        key = (t, u, v, n)
        if key in cache:
            return cache[key]
        if t == u == v == 0:
            val = base[n]
        elif t > 0:
            val = (t - 1) * r(t - 2, u, v, n + 1) + pc[..., 0] * r(t - 1, u, v, n + 1)
        elif u > 0:
            val = (u - 1) * r(t, u - 2, v, n + 1) + pc[..., 1] * r(t, u - 1, v, n + 1)
        else:
            val = (v - 1) * r(t, u, v - 2, n + 1) + pc[..., 2] * r(t, u, v - 1, n + 1)
        cache[key] = val
        return val

    out = np.empty((t_max + 1, u_max + 1, v_max + 1) + p.shape)
    for t in range(t_max + 1):
        for u in range(u_max + 1):
            for v in range(v_max + 1):
                out[t, u, v] = r(t, u, v, 0)
    return out


def nuclear_block(pair: ShellPair, charges) -> np.ndarray:
    la, lb = pair.components()
    out = np.zeros((len(la), len(lb)))
    l_tot = pair.sa.l + pair.sb.l
    for z, center in charges:
        pc = pair.centers - np.asarray(center)[None, :]
        r_tens = _hermite_coulomb(l_tot, l_tot, l_tot, pair.p, pc)
        for ia, ca in enumerate(la):
            for ib, cb in enumerate(lb):
                acc = np.zeros_like(pair.p)
                for t in range(ca[0] + cb[0] + 1):
                    et = pair.e_coeff(0, ca[0], cb[0], t)
                    for u in range(ca[1] + cb[1] + 1):
                        eu = pair.e_coeff(1, ca[1], cb[1], u)
                        for v in range(ca[2] + cb[2] + 1):
                            ev = pair.e_coeff(2, ca[2], cb[2], v)
                            acc = acc + et * eu * ev * r_tens[t, u, v]
                out[ia, ib] += -z * (pair.weight * 2.0 * np.pi / pair.p * acc).sum()
    return out


def _hermite_density(pair: ShellPair):
    """E_t E_u E_v stacked per component pair: (ncomp_a*ncomp_b, T, U, V, nprim)."""
    la, lb = pair.components()
    l_tot = pair.sa.l + pair.sb.l
    size = l_tot + 1
    out = np.zeros((len(la) * len(lb), size, size, size, len(pair.p)))
    for ia, ca in enumerate(la):
        for ib, cb in enumerate(lb):
            idx = ia * len(lb) + ib
            for t in range(ca[0] + cb[0] + 1):
                et = pair.e_coeff(0, ca[0], cb[0], t)
                for u in range(ca[1] + cb[1] + 1):
                    eu = pair.e_coeff(1, ca[1], cb[1], u)
                    for v in range(ca[2] + cb[2] + 1):
                        ev = pair.e_coeff(2, ca[2], cb[2], v)
                        out[idx, t, u, v] = et * eu * ev
    return out * pair.weight[None, None, None, None, :]


def eri_block(bra: ShellPair, ket: ShellPair) -> np.ndarray:
    """(ab|cd) over the component quartets of two shell pairs."""
    e_bra = _hermite_density(bra)
    e_ket = _hermite_density(ket)
    n_bra_comp, tb, ub, vb, n_bra = e_bra.shape
    n_ket_comp, tk, uk, vk, n_ket = e_ket.shape
    p = bra.p[:, None]
    q = ket.p[None, :]
    rho = p * q / (p + q)
    pq = bra.centers[:, None, :] - ket.centers[None, :, :]
    r_tens = _hermite_coulomb(tb + tk - 2, ub + uk - 2, vb + vk - 2, rho, pq)
    pref = 2.0 * np.pi**2.5 / (p * q * np.sqrt(p + q))
    out = np.zeros((n_bra_comp, n_ket_comp))
    sign = {0: 1.0, 1: -1.0, 2: 1.0}
    for tau in range(tk):
        for nu in range(uk):
            for phi in range(vk):
                s = sign[tau] * sign[nu] * sign[phi]
                # contract ket Hermite density with the shifted R block
                r_slab = r_tens[tau:tau + tb, nu:nu + ub, phi:phi + vb]
                for b_comp in range(n_bra_comp):
                    w = np.einsum(
                        "tuvP,tuvPQ->PQ", e_bra[b_comp], r_slab, optimize=True
                    )
                    out[b_comp] += s * np.einsum(
                        "PQ,kQ->k", w * pref, e_ket[:, tau, nu, phi, :]
                    )
    return out


class BasisSet:
    """Flat AO indexing over a shell list."""

    def __init__(self, shells):
        self.shells = list(shells)
        self.offsets = []
        n = 0
        for s in self.shells:
            self.offsets.append(n)
            n += s.n_components
        self.n_ao = n

    def pairs(self):
        for i, si in enumerate(self.shells):
            for j, sj in enumerate(self.shells[: i + 1]):
                yield i, j, ShellPair(si, sj)


def one_electron_matrices(basis: BasisSet, charges):
    n = basis.n_ao
    s = np.zeros((n, n))
    t = np.zeros((n, n))
    v = np.zeros((n, n))
    for i, j, pair in basis.pairs():
        oi, oj = basis.offsets[i], basis.offsets[j]
        ni, nj = basis.shells[i].n_components, basis.shells[j].n_components
        blocks = (overlap_block(pair), kinetic_block(pair), nuclear_block(pair, charges))
        for mat, block in zip((s, t, v), blocks):
            mat[oi:oi + ni, oj:oj + nj] = block
            mat[oj:oj + nj, oi:oi + ni] = block.T
    return s, t, v


def cross_overlap(basis_a: BasisSet, basis_b: BasisSet) -> np.ndarray:
    """Overlap between two AO sets (e.g. adjacent geometries)."""
    out = np.zeros((basis_a.n_ao, basis_b.n_ao))
    for i, si in enumerate(basis_a.shells):
        for j, sj in enumerate(basis_b.shells):
            pair = ShellPair(si, sj)
            oi, oj = basis_a.offsets[i], basis_b.offsets[j]
            block = overlap_block(pair)
            out[oi:oi + si.n_components, oj:oj + sj.n_components] = block
    return out


def electron_repulsion(basis: BasisSet) -> np.ndarray:
    n = basis.n_ao
    eri = np.zeros((n, n, n, n))
    pair_list = list(basis.pairs())
    for a, (i, j, bra) in enumerate(pair_list):
        for k, l, ket in pair_list[: a + 1]:
            block = eri_block(bra, ket)
            oi, oj = basis.offsets[i], basis.offsets[j]
            ok, ol = basis.offsets[k], basis.offsets[l]
            ni = basis.shells[i].n_components
            nj = basis.shells[j].n_components
            nk = basis.shells[k].n_components
            nl = basis.shells[l].n_components
            vals = block.reshape(ni, nj, nk, nl)
            for ci in range(ni):
                for cj in range(nj):
                    for ck in range(nk):
                        for cl in range(nl):
                            val = vals[ci, cj, ck, cl]
                            p, qq = oi + ci, oj + cj
                            r, ss = ok + ck, ol + cl
                            for (w, x, y, z) in {
                                (p, qq, r, ss), (qq, p, r, ss),
                                (p, qq, ss, r), (qq, p, ss, r),
                                (r, ss, p, qq), (ss, r, p, qq),
                                (r, ss, qq, p), (ss, r, qq, p),
                            }:
                                eri[w, x, y, z] = val
    return eri
