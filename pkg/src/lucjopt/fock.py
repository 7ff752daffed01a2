"""Exact linear algebra in the fixed-(n_up, n_down) determinant sector.

States are dense complex vectors over determinants |I_a, I_b> indexed as
``i = i_alpha * dim_beta + i_beta``.  Determinant convention: occupation
bitstrings with orbital 0 as the least significant bit, alpha creation
operators (ascending orbital) before beta creation operators in the
ordered product; signs follow from that ordering and are locked by unit
tests against hand-computed cases.

All per-sector combinatorial tables (string enumeration, excitation
tables, one-body lift maps) are cached; they are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import dataclasses
from functools import lru_cache
from math import comb

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .hamiltonian import MolecularHamiltonian, DoubleFactorization

FCI_DENSE_LIMIT = 20000
_DENSE_CACHE_LIMIT = 8192
ANTIHERMITIAN_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class FockBasis:
    """Determinant basis of the fixed-(n_alpha, n_beta) sector."""

    n_orbitals: int
    n_alpha: int
    n_beta: int

    def __post_init__(self):
        n = self.n_orbitals
        if not (0 <= self.n_alpha <= n and 0 <= self.n_beta <= n):
            raise ValueError("electron counts out of range")

    @property
    def dim_alpha(self) -> int:
        return comb(self.n_orbitals, self.n_alpha)

    @property
    def dim_beta(self) -> int:
        return comb(self.n_orbitals, self.n_beta)

    @property
    def dim(self) -> int:
        return self.dim_alpha * self.dim_beta

    @property
    def alpha_strings(self) -> np.ndarray:
        return sector(self.n_orbitals, self.n_alpha).strings

    @property
    def beta_strings(self) -> np.ndarray:
        return sector(self.n_orbitals, self.n_beta).strings

    def index_of(self, alpha_string: int, beta_string: int) -> int:
        ia = sector(self.n_orbitals, self.n_alpha).index[alpha_string]
        ib = sector(self.n_orbitals, self.n_beta).index[beta_string]
        return ia * self.dim_beta + ib

    @classmethod
    def for_hamiltonian(cls, h: MolecularHamiltonian) -> "FockBasis":
        return cls(h.n_orbitals, h.n_alpha, h.n_beta)


@dataclasses.dataclass
class FockVector:
    """Complex amplitude vector over a FockBasis."""

    basis: FockBasis
    amps: np.ndarray

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=complex).reshape(self.basis.dim)

    @property
    def mat(self) -> np.ndarray:
        """View of the amplitudes as a (dim_alpha, dim_beta) matrix."""
        return self.amps.reshape(self.basis.dim_alpha, self.basis.dim_beta)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def dot(self, other: "FockVector") -> complex:
        """Inner product <self|other>."""
        return complex(np.vdot(self.amps, other.amps))

    def copy(self) -> "FockVector":
        return FockVector(self.basis, self.amps.copy())


class SpinSector:
    """Cached combinatorics of one spin species: C(norb, nocc) strings."""

    def __init__(self, norb: int, nocc: int):
        self.norb = norb
        self.nocc = nocc
        masks = [s for s in range(1 << norb) if s.bit_count() == nocc]
        self.strings = np.array(sorted(masks), dtype=np.int64)
        self.dim = len(self.strings)
        self.index = {int(s): i for i, s in enumerate(self.strings)}
        bits = (self.strings[:, None] >> np.arange(norb)[None, :]) & 1
        self.occ = bits.astype(bool)
        self.occf = bits.astype(float)
        self._excitations = None
        self._lift_matrix = None
        self._pairs: dict = {}
        self._occ_idx: dict = {}

    def occ_indices(self, p: int) -> np.ndarray:
        """Indices of strings with orbital p occupied."""
        if p not in self._occ_idx:
            self._occ_idx[p] = np.flatnonzero(self.occ[:, p])
        return self._occ_idx[p]

    def pair_exchange(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        """Aligned index arrays (p occupied & p+1 empty) <-> swapped partner.

        Adjacent-orbital exchange carries no fermionic string sign under
        the orbital-0-least-significant ordering.
        """
        if p not in self._pairs:
            lo = np.flatnonzero(self.occ[:, p] & ~self.occ[:, p + 1])
            swap = self.strings[lo] ^ (1 << p) ^ (1 << (p + 1))
            hi = np.array([self.index[int(s)] for s in swap], dtype=np.intp)
            self._pairs[p] = (lo.astype(np.intp), hi)
        return self._pairs[p]

    def parity_below(self, p: int) -> np.ndarray:
        """(-1)**(number of occupied orbitals below p), per string."""
        mask = (1 << p) - 1
        counts = np.bitwise_count(self.strings & mask)
        return 1.0 - 2.0 * (counts & 1)

    @property
    def excitations(self):
        """COO arrays (target, source, p, q, sign) of E_pq = a+_p a_q."""
        if self._excitations is None:
            tgt, src, ps, qs, sg = [], [], [], [], []
            for j, s in enumerate(self.strings):
                s = int(s)
                occ = [p for p in range(self.norb) if s >> p & 1]
                for q in occ:
                    for p in range(self.norb):
                        if p == q:
                            tgt.append(j); src.append(j); ps.append(p); qs.append(q)
                            sg.append(1.0)
                        elif not (s >> p & 1):
                            t = s ^ (1 << q) | (1 << p)
                            sign_q = (s & ((1 << q) - 1)).bit_count()
                            sign_p = ((s ^ (1 << q)) & ((1 << p) - 1)).bit_count()
                            tgt.append(self.index[t]); src.append(j)
                            ps.append(p); qs.append(q)
                            sg.append(-1.0 if (sign_q + sign_p) & 1 else 1.0)
            self._excitations = (
                np.array(tgt, dtype=np.intp), np.array(src, dtype=np.intp),
                np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp),
                np.array(sg, dtype=float),
            )
        return self._excitations

    @property
    def lift_matrix(self) -> scipy.sparse.csr_matrix:
        """Sparse map vec(c) -> vec(sum_pq c_pq E_pq) on this sector."""
        if self._lift_matrix is None:
            tgt, src, ps, qs, sg = self.excitations
            rows = tgt * self.dim + src
            cols = ps * self.norb + qs
            self._lift_matrix = scipy.sparse.csr_matrix(
                (sg, (rows, cols)), shape=(self.dim * self.dim, self.norb**2)
            )
        return self._lift_matrix

    def lift(self, c: np.ndarray) -> np.ndarray:
        """Dense matrix of the one-body operator sum_pq c_pq a+_p a_q."""
        out = self.lift_matrix @ c.reshape(-1)
        return out.reshape(self.dim, self.dim)

    def lift_many(self, cs: np.ndarray) -> np.ndarray:
        """Lift a stack of coefficient matrices, shape (k, norb, norb)."""
        k = cs.shape[0]
        out = self.lift_matrix @ cs.reshape(k, -1).T
        return np.ascontiguousarray(out.T).reshape(k, self.dim, self.dim)


@lru_cache(maxsize=None)
def sector(norb: int, nocc: int) -> SpinSector:
    return SpinSector(norb, nocc)


def hartree_fock_state(basis: FockBasis) -> FockVector:
    """Reference determinant occupying the lowest orbitals of each spin."""
    amps = np.zeros(basis.dim, dtype=complex)
    sa = (1 << basis.n_alpha) - 1
    sb = (1 << basis.n_beta) - 1
    amps[basis.index_of(sa, sb)] = 1.0
    return FockVector(basis, amps)


def real_matmat(h_real: np.ndarray, z: np.ndarray) -> np.ndarray:
    """h_real @ z for complex z via two real GEMMs.

    The real/imag parts are materialized contiguously; strided views of
    complex arrays would force BLAS onto a slow path.
    """
    if not np.iscomplexobj(z):
        return h_real @ z
    if z.ndim == 1 or z.shape[-1] <= 4:
        # thin case: one GEMM over stacked real/imag parts halves the
        # memory traffic through h_real
        flat = z.reshape(z.shape[0], -1) if z.ndim > 1 else z.reshape(-1, 1)
        stacked = np.hstack([flat.real, flat.imag])
        out = h_real @ stacked
        k = flat.shape[1]
        return (out[:, :k] + 1j * out[:, k:]).reshape(z.shape)
    zr = np.ascontiguousarray(z.real)
    zi = np.ascontiguousarray(z.imag)
    return h_real @ zr + 1j * (h_real @ zi)


class HamiltonianAction:
    """Cached machinery to apply a MolecularHamiltonian in one sector.

    Spin-resolved structure: H = Ha (x) 1 + 1 (x) Hb + sum_pq A_pq (x) C_pq
    + core, with Ha/Hb the same-spin blocks built from the normal-ordered
    one-body part h' and C_pq = sum_rs (pq|rs) E_rs on the opposite spin.
    """

    def __init__(self, h: MolecularHamiltonian, basis: FockBasis):
        if h.n_orbitals != basis.n_orbitals:
            raise ValueError("Hamiltonian and basis orbital counts differ")
        self.h = h
        self.basis = basis
        n = h.n_orbitals
        self.sec_a = sector(n, basis.n_alpha)
        self.sec_b = sector(n, basis.n_beta)
        eri_flat = h.eri.reshape(n * n, n * n)
        # D[pq] = lift of (pq|..) on each spin, used by both spin blocks.
        self._d_a = self.sec_a.lift_many(eri_flat.reshape(n * n, n, n))
        if basis.n_beta == basis.n_alpha:
            self._d_b = self._d_a
        else:
            self._d_b = self.sec_b.lift_many(eri_flat.reshape(n * n, n, n))
        h1c = h.one_body_corrected
        self.h_spin_a = self._spin_block(self.sec_a, self._d_a, h1c)
        if basis.n_beta == basis.n_alpha:
            self.h_spin_b = self.h_spin_a
        else:
            self.h_spin_b = self._spin_block(self.sec_b, self._d_b, h1c)
        self._dense = None

    def _spin_block(self, sec: SpinSector, d: np.ndarray, h1c: np.ndarray):
        n = self.h.n_orbitals
        block = sec.lift(h1c)
        tgt, src, ps, qs, sg = sec.excitations
        for pq in range(n * n):
            sel = ps * n + qs == pq
            if not sel.any():
                continue
            np.add.at(block, tgt[sel], sg[sel, None] * d[pq][src[sel]] * 0.5)
        return block

    def energy(self, a_mat: np.ndarray) -> float:
        """<A|H|A> via the spin-block structure (no dense matrix traffic).

        Cost is dominated by 2 N^2 small GEMMs on the string-sector
        blocks; intended for the many single-state evaluations of the
        hyperparameter search.
        """
        n = self.h.n_orbitals
        same = self.h_spin_a @ a_mat + a_mat @ self.h_spin_b.T
        total = np.vdot(a_mat, same)
        tgt, src, ps, qs, sg = self.sec_a.excitations
        pq_idx = ps * n + qs
        hops = np.zeros((n * n,) + a_mat.shape, dtype=a_mat.dtype)
        np.add.at(hops, (pq_idx, tgt), sg[:, None] * a_mat[src])
        cross = np.matmul(hops, np.transpose(self._d_b, (0, 2, 1)))
        total += np.einsum("ij,pij->", a_mat.conj(), cross)
        total += self.h.core_energy * np.vdot(a_mat, a_mat)
        return float(np.real(total))

    def matmat(self, z: np.ndarray) -> np.ndarray:
        """Apply H to a stack of states, shape (..., dim_a, dim_b)."""
        if self._dense is not None:
            da, db = self.sec_a.dim, self.sec_b.dim
            flat = z.reshape(-1, da * db).T
            return real_matmat(self._dense, flat).T.reshape(z.shape)
        n = self.h.n_orbitals
        out = np.matmul(self.h_spin_a, z) + np.matmul(z, self.h_spin_b.T)
        tgt, src, ps, qs, sg = self.sec_a.excitations
        single = z.ndim == 2
        zs = z[None] if single else z
        acc = np.zeros_like(zs)
        for pq in range(n * n):
            sel = ps * n + qs == pq
            if not sel.any():
                continue
            hop = np.zeros_like(zs)
            np.add.at(hop, (slice(None), tgt[sel]), sg[sel, None] * zs[:, src[sel]])
            acc += np.matmul(hop, self._d_b[pq].T)
        out += acc[0] if single else acc
        out += self.h.core_energy * z
        return out

    def dense(self) -> np.ndarray:
        """Real symmetric matrix of H on the full sector (built lazily)."""
        if self._dense is None:
            n = self.h.n_orbitals
            da, db = self.sec_a.dim, self.sec_b.dim
            full = np.zeros((da, db, da, db))
            tgt, src, ps, qs, sg = self.sec_a.excitations
            for t, s, p, q, g in zip(tgt, src, ps, qs, sg):
                full[t, :, s, :] += g * self._d_b[p * n + q]
            for k in range(db):
                full[:, k, :, k] += self.h_spin_a
            for i in range(da):
                full[i, :, i, :] += self.h_spin_b
            full = full.reshape(da * db, da * db)
            full[np.diag_indices_from(full)] += self.h.core_energy
            self._dense = full
        return self._dense


_ACTION_CACHE: dict = {}


def hamiltonian_action(h: MolecularHamiltonian, basis: FockBasis) -> HamiltonianAction:
    key = (id(h), basis)
    action = _ACTION_CACHE.get(key)
    if action is None or action.h is not h:
        action = HamiltonianAction(h, basis)
        _ACTION_CACHE[key] = action
    return action


def apply_hamiltonian(h: MolecularHamiltonian, v: FockVector) -> FockVector:
    """Exact action H|v>, including the core-energy term."""
    action = hamiltonian_action(h, v.basis)
    if v.basis.dim <= _DENSE_CACHE_LIMIT:
        action.dense()
    out = action.matmat(v.mat)
    return FockVector(v.basis, out.reshape(-1))


def energy_expectation(h: MolecularHamiltonian, v: FockVector) -> float:
    action = hamiltonian_action(h, v.basis)
    return action.energy(v.mat) / float(np.real(v.dot(v)))


def fci_solve(
    h: MolecularHamiltonian,
    basis: FockBasis,
    n_states: int = 1,
    dense_limit: int = FCI_DENSE_LIMIT,
) -> list[tuple[float, FockVector]]:
    """Lowest eigenpairs of H on the sector, energies ascending.

    Dense diagonalization when dim <= dense_limit, otherwise an iterative
    Lanczos solve (ARPACK via scipy, full reorthogonalization of the
    Krylov basis).
    """
    action = hamiltonian_action(h, basis)
    dim = basis.dim
    if n_states > dim:
        raise ValueError(f"requested {n_states} states from a dim-{dim} sector")
    if dim <= dense_limit:
        mat = action.dense()
        vals, vecs = scipy.linalg.eigh(mat, subset_by_index=[0, n_states - 1])
        return [
            (float(vals[k]), FockVector(basis, vecs[:, k].astype(complex)))
            for k in range(n_states)
        ]
    da, db = basis.dim_alpha, basis.dim_beta

    def matvec(x):
        return action.matmat(x.reshape(da, db)).reshape(-1)

    op = scipy.sparse.linalg.LinearOperator((dim, dim), matvec=matvec, dtype=float)
    v0 = hartree_fock_state(basis).amps.real
    vals, vecs = scipy.sparse.linalg.eigsh(op, k=n_states, which="SA", v0=v0)
    order = np.argsort(vals)
    return [
        (float(vals[k]), FockVector(basis, vecs[:, k].astype(complex)))
        for k in order
    ]


@lru_cache(maxsize=256)
def _rotation_matrix_cached(u_bytes: bytes, n: int, nocc: int, is_complex: bool):
    u = np.frombuffer(u_bytes, dtype=complex if is_complex else float)
    u = u.reshape(n, n)
    sec = sector(n, nocc)
    if nocc == 0:
        return np.ones((1, 1), dtype=u.dtype)
    orbs = np.array(
        [[p for p in range(n) if s >> p & 1] for s in sec.strings], dtype=np.intp
    )
    dim = sec.dim
    out = np.empty((dim, dim), dtype=complex if is_complex else float)
    # det(u[occ(I), occ(J)]) in row chunks to bound the stacked workspace
    chunk = max(1, int(4e6 / (dim * nocc * nocc)))
    for lo in range(0, dim, chunk):
        hi = min(dim, lo + chunk)
        sub = u[orbs[lo:hi, None, :, None], orbs[None, :, None, :]]
        out[lo:hi] = np.linalg.det(sub)
    out.setflags(write=False)
    return out


def orbital_rotation_matrix(u: np.ndarray, norb: int, nocc: int) -> np.ndarray:
    """Lift of the single-particle unitary u to one spin-string sector.

    Convention: the lifted operator W satisfies W|J> = sum_I det(u[I, J])|I>
    with rows/columns indexed by the occupied orbital lists in ascending
    order, i.e. the second-quantized image of a+_q -> sum_p u_pq a+_p.
    """
    u = np.asarray(u)
    is_complex = np.iscomplexobj(u)
    dtype = complex if is_complex else float
    return _rotation_matrix_cached(
        np.ascontiguousarray(u, dtype=dtype).tobytes(), norb, nocc, is_complex
    )


def check_antihermitian(kappa: np.ndarray, tol: float = ANTIHERMITIAN_TOL):
    scale = max(1.0, float(np.abs(kappa).max()))
    if np.abs(kappa + kappa.conj().T).max() > tol * scale:
        raise ValueError("generator is not antihermitian")


def apply_orbital_rotation(kappa: np.ndarray, v: FockVector) -> FockVector:
    """Apply exp(K) with K = sum_pq kappa_pq (a+_pa a_qa + a+_pb a_qb)."""
    kappa = np.asarray(kappa, dtype=complex)
    check_antihermitian(kappa)
    u = scipy.linalg.expm(kappa)
    return apply_orbital_unitary(u, v)


def apply_orbital_unitary(u: np.ndarray, v: FockVector) -> FockVector:
    """Apply the Fock-space lift of the orbital-space unitary u to both spins."""
    b = v.basis
    wa = orbital_rotation_matrix(u, b.n_orbitals, b.n_alpha)
    wb = wa if b.n_beta == b.n_alpha else orbital_rotation_matrix(u, b.n_orbitals, b.n_beta)
    out = wa @ v.mat @ wb.T
    return FockVector(b, out.reshape(-1))


def diagonal_coulomb_angles(
    j_same: np.ndarray, j_opposite: np.ndarray, basis: FockBasis
) -> np.ndarray:
    """Per-determinant phase angles of the diagonal Coulomb layer.

    angle(I) = sum_p j_opposite[p,p] n_pa n_pb
             + sum_{p<r} j_same[p,r] (n_pa n_ra + n_pb n_rb)

    Same-spin pairs are unordered and counted once; only the strict upper
    triangle of ``j_same`` (symmetrized) and the diagonal of
    ``j_opposite`` enter, matching the connectivity-set structure.
    """
    n = basis.n_orbitals
    sec_a = sector(n, basis.n_alpha)
    sec_b = sector(n, basis.n_beta)
    j_same = np.asarray(j_same, dtype=float)
    j_opposite = np.asarray(j_opposite, dtype=float)
    j0 = 0.5 * (j_same + j_same.T)
    np.fill_diagonal(j0, 0.0)
    cross = sec_a.occf @ np.diag(np.diag(j_opposite)) @ sec_b.occf.T
    same_a = 0.5 * np.einsum("ip,pr,ir->i", sec_a.occf, j0, sec_a.occf)
    same_b = 0.5 * np.einsum("ip,pr,ir->i", sec_b.occf, j0, sec_b.occf)
    return cross + same_a[:, None] + same_b[None, :]


def apply_diagonal_coulomb(
    j_same: np.ndarray, j_opposite: np.ndarray, v: FockVector
) -> FockVector:
    """Multiply each determinant amplitude by exp(i * angle(I))."""
    angles = diagonal_coulomb_angles(j_same, j_opposite, v.basis)
    out = np.exp(1j * angles) * v.mat
    return FockVector(v.basis, out.reshape(-1))


def apply_double_factorized(
    df: DoubleFactorization, h: MolecularHamiltonian, v: FockVector
) -> FockVector:
    """Apply the factorized Hamiltonian U0+ N0 U0 + 1/2 sum s U+ N^2 U + core."""
    b = v.basis
    sec_a = sector(b.n_orbitals, b.n_alpha)
    sec_b = sector(b.n_orbitals, b.n_beta)
    out = h.core_energy * v.mat

    def rotated_diag_power(u, weights, power):
        wa = orbital_rotation_matrix(u, b.n_orbitals, b.n_alpha)
        wb = wa if b.n_beta == b.n_alpha else orbital_rotation_matrix(
            u, b.n_orbitals, b.n_beta
        )
        t = wa @ v.mat @ wb.T
        diag = (sec_a.occf @ weights)[:, None] + (sec_b.occf @ weights)[None, :]
        t *= diag**power
        return wa.T @ t @ wb

    out = out + rotated_diag_power(df.u0, df.eta, 1)
    for f in df.factors:
        out = out + 0.5 * f.sign * rotated_diag_power(f.u, f.xi, 2)
    return FockVector(b, out.reshape(-1))


def apply_s_plus(v: FockVector) -> FockVector:
    """S+ = sum_p a+_pa a_pb, mapping to the (n_alpha+1, n_beta-1) sector."""
    b = v.basis
    if b.n_alpha >= b.n_orbitals or b.n_beta <= 0:
        target = FockBasis(b.n_orbitals, min(b.n_alpha + 1, b.n_orbitals), max(b.n_beta - 1, 0))
        return FockVector(target, np.zeros(target.dim, dtype=complex))
    target = FockBasis(b.n_orbitals, b.n_alpha + 1, b.n_beta - 1)
    sec_a = sector(b.n_orbitals, b.n_alpha)
    sec_b = sector(b.n_orbitals, b.n_beta)
    sec_a2 = sector(b.n_orbitals, b.n_alpha + 1)
    sec_b2 = sector(b.n_orbitals, b.n_beta - 1)
    out = np.zeros((target.dim_alpha, target.dim_beta), dtype=complex)
    amat = v.mat
    cross_sign = -1.0 if b.n_alpha & 1 else 1.0  # a_pb through the alpha block
    for p in range(b.n_orbitals):
        ia = np.flatnonzero(~sec_a.occ[:, p])
        jb = np.flatnonzero(sec_b.occ[:, p])
        if len(ia) == 0 or len(jb) == 0:
            continue
        bit = 1 << p
        ia_new = np.array([sec_a2.index[int(s) | bit] for s in sec_a.strings[ia]])
        jb_new = np.array([sec_b2.index[int(s) ^ bit] for s in sec_b.strings[jb]])
        sign_a = sec_a.parity_below(p)[ia]
        sign_b = sec_b.parity_below(p)[jb]
        out[np.ix_(ia_new, jb_new)] += cross_sign * np.outer(sign_a, sign_b) * amat[np.ix_(ia, jb)]
    return FockVector(target, out.reshape(-1))


def apply_s_squared(v: FockVector) -> FockVector:
    """S^2 |v> = S- S+ |v> + Sz(Sz+1) |v>, staying in the sector."""
    b = v.basis
    sz = 0.5 * (b.n_alpha - b.n_beta)
    splus = apply_s_plus(v)
    # S- is the adjoint of S+ from the raised sector back down.
    out = _apply_s_minus(splus, b)
    out.amps += sz * (sz + 1) * v.amps
    return out


def _apply_s_minus(v: FockVector, target: FockBasis) -> FockVector:
    b = v.basis
    if b.n_alpha <= 0 or b.n_beta >= b.n_orbitals:
        return FockVector(target, np.zeros(target.dim, dtype=complex))
    sec_a = sector(b.n_orbitals, b.n_alpha)
    sec_b = sector(b.n_orbitals, b.n_beta)
    sec_a2 = sector(b.n_orbitals, b.n_alpha - 1)
    sec_b2 = sector(b.n_orbitals, b.n_beta + 1)
    out = np.zeros((target.dim_alpha, target.dim_beta), dtype=complex)
    amat = v.mat
    cross_sign = -1.0 if (b.n_alpha - 1) & 1 else 1.0
    for p in range(b.n_orbitals):
        ia = np.flatnonzero(sec_a.occ[:, p])
        jb = np.flatnonzero(~sec_b.occ[:, p])
        if len(ia) == 0 or len(jb) == 0:
            continue
        bit = 1 << p
        ia_new = np.array([sec_a2.index[int(s) ^ bit] for s in sec_a.strings[ia]])
        jb_new = np.array([sec_b2.index[int(s) | bit] for s in sec_b.strings[jb]])
        sign_a = sec_a2.parity_below(p)[ia_new]
        sign_b = sec_b2.parity_below(p)[jb_new]
        out[np.ix_(ia_new, jb_new)] += cross_sign * np.outer(sign_a, sign_b) * amat[np.ix_(ia, jb)]
    return FockVector(target, out.reshape(-1))


def expectation(
    op_kind: str,
    v: FockVector,
    h: MolecularHamiltonian | None = None,
    generators: list | None = None,
    signs: list | None = None,
):
    """Exact expectation value of a named operator.

    op_kind one of:
      - "hamiltonian" (requires ``h``)
      - "s_squared"  (S-S+ + Sz(Sz+1))
      - "number"     (total particle number)
      - "parity_up" / "parity_down"  (spin-resolved particle-number parity)
      - "binary_projector" (requires ``generators``: Z-product Pauli
        operators given as (alpha_orbital_mask, beta_orbital_mask) bit
        masks, and ``signs``: the target irrep labels +-1)
    """
    b = v.basis
    nrm2 = np.real(v.dot(v))
    if op_kind == "hamiltonian":
        if h is None:
            raise ValueError("hamiltonian expectation requires h")
        return float(np.real(v.dot(apply_hamiltonian(h, v))) / nrm2)
    if op_kind == "s_squared":
        splus = apply_s_plus(v)
        sz = 0.5 * (b.n_alpha - b.n_beta)
        return float((np.real(splus.dot(splus)) + sz * (sz + 1) * nrm2) / nrm2)
    if op_kind == "number":
        return float(b.n_alpha + b.n_beta)
    if op_kind == "parity_up":
        return float((-1) ** b.n_alpha)
    if op_kind == "parity_down":
        return float((-1) ** b.n_beta)
    if op_kind == "binary_projector":
        if generators is None or signs is None:
            raise ValueError("binary_projector requires generators and signs")
        diag = np.ones((b.dim_alpha, b.dim_beta))
        sec_a = sector(b.n_orbitals, b.n_alpha)
        sec_b = sector(b.n_orbitals, b.n_beta)
        for (mask_a, mask_b), s in zip(generators, signs):
            par_a = 1.0 - 2.0 * (np.bitwise_count(sec_a.strings & mask_a) & 1)
            par_b = 1.0 - 2.0 * (np.bitwise_count(sec_b.strings & mask_b) & 1)
            diag *= 0.5 * (1.0 + s * np.outer(par_a, par_b))
        return float(np.sum(diag * np.abs(v.mat) ** 2) / nrm2)
    raise ValueError(f"unknown op_kind {op_kind!r}")
