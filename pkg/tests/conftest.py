import numpy as np
import pytest

from lucjopt.hamiltonian import MolecularHamiltonian
from lucjopt.fock import FockBasis

FIXTURE_DIR = "fixtures"


def random_hamiltonian(n_orbitals, n_alpha, n_beta, rng, core=0.0, scale=1.0):
    """Random symmetric integrals with exact 8-fold ERI symmetry."""
    h1 = rng.normal(size=(n_orbitals, n_orbitals), scale=scale)
    h1 = 0.5 * (h1 + h1.T)
    eri = rng.normal(size=(n_orbitals,) * 4, scale=scale)
    eri = eri + eri.transpose(1, 0, 2, 3)
    eri = eri + eri.transpose(0, 1, 3, 2)
    eri = eri + eri.transpose(2, 3, 0, 1)
    eri /= 8.0
    return MolecularHamiltonian(
        n_orbitals=n_orbitals,
        n_alpha=n_alpha,
        n_beta=n_beta,
        core_energy=core,
        h1=h1,
        eri=eri,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


@pytest.fixture
def small_h(rng):
    """Canonical (2e,4o) random-integral instance used across modules."""
    return random_hamiltonian(4, 1, 1, rng, core=-0.5, scale=0.4)


@pytest.fixture
def small_basis(small_h):
    return FockBasis.for_hamiltonian(small_h)


def brute_force_hamiltonian(h: MolecularHamiltonian, basis: FockBasis) -> np.ndarray:
    """Dense H built by literal second-quantized operator algebra on kets.

    Independent oracle: represents each determinant as (alpha_mask,
    beta_mask), applies creation/annihilation with explicit sign
    bookkeeping (alpha block before beta block, orbital 0 first in the
    ordered product), and accumulates
    sum h_pq a+_ps a_qs + 1/2 sum (pq|rs) a+_ps a+_rt a_st a_qs + core.
    """
    n = h.n_orbitals
    strings_a = list(map(int, basis.alpha_strings))
    strings_b = list(map(int, basis.beta_strings))
    dim = basis.dim

    def annihilate(state, pos):
        mask, sign = state
        if not (mask >> pos) & 1:
            return None
        below = (mask & ((1 << pos) - 1)).bit_count()
        return (mask ^ (1 << pos), sign * (-1) ** below)

    def create(state, pos):
        mask, sign = state
        if (mask >> pos) & 1:
            return None
        below = (mask & ((1 << pos) - 1)).bit_count()
        return (mask | (1 << pos), sign * (-1) ** below)

    def apply_ops(ket, ops):
        # ops act right-to-left; spin-orbital position = p for alpha, n+p for beta
        state = (ket, 1)
        for action, pos in reversed(ops):
            state = action(state, pos)
            if state is None:
                return None
        return state

    mat = np.zeros((dim, dim))
    for ja, sa in enumerate(strings_a):
        for jb, sb in enumerate(strings_b):
            ket = sa | (sb << n)
            col = ja * len(strings_b) + jb
            amps = {}

            def add(state, value):
                if state is None or value == 0.0:
                    return
                mask, sign = state
                amps[mask] = amps.get(mask, 0.0) + sign * value

            for spin in (0, 1):
                off = spin * n
                for p in range(n):
                    for q in range(n):
                        add(apply_ops(ket, [(create, off + p), (annihilate, off + q)]),
                            h.h1[p, q])
            for s_spin in (0, 1):
                for t_spin in (0, 1):
                    so, to = s_spin * n, t_spin * n
                    for p in range(n):
                        for q in range(n):
                            for r in range(n):
                                for s in range(n):
                                    val = 0.5 * h.eri[p, q, r, s]
                                    if val == 0.0:
                                        continue
                                    ops = [(create, so + p), (create, to + r),
                                           (annihilate, to + s), (annihilate, so + q)]
                                    add(apply_ops(ket, ops), val)
            for mask, value in amps.items():
                ia = strings_a.index(mask & ((1 << n) - 1))
                ib = strings_b.index(mask >> n)
                mat[ia * len(strings_b) + ib, col] += value
    mat[np.diag_indices(dim)] += h.core_energy
    return mat
