"""Molecular Hamiltonians: FCIDUMP ingestion, double factorization, variance norm.

The second-quantized Hamiltonian is

    H = sum_{pq,s} h_pq a+_ps a_qs
        + 1/2 sum_{pqrs,st} (pq|rs) a+_ps a+_rt a_st a_qs  +  core

with ``(pq|rs)`` the electron repulsion integrals in chemists' notation.
Reordering the two-body string to a product of one-body density operators
E_pq = sum_s a+_ps a_qs folds a one-body correction into h:

    H = sum_pq h'_pq E_pq + 1/2 sum_pqrs (pq|rs) E_pq E_rs + core,
    h'_pq = h_pq - 1/2 sum_r (pr|rq).

The double factorization diagonalizes the ERI supermatrix M_(pq),(rs) =
(pq|rs) and expresses each retained eigenvector as a squared one-body
operator diagonalized by an orbital rotation.  The corrected one-body part
h' is diagonalized the same way.  This normal-ordering convention is fixed
here and unit-tested against the exact-diagonalization oracle.
"""

from __future__ import annotations

import dataclasses
import re

import numpy as np

H1_SYMMETRY_TOL = 1e-12
ERI_SYMMETRY_TOL = 1e-10


class FcidumpError(ValueError):
    """Malformed or inconsistent FCIDUMP content."""


@dataclasses.dataclass(frozen=True, eq=False)
class MolecularHamiltonian:
    """Active-space one- and two-electron integrals in Hartree.

    Attributes:
        n_orbitals: Number of spatial orbitals N.
        n_alpha: Number of spin-up electrons.
        n_beta: Number of spin-down electrons.
        core_energy: Scalar energy (nuclear repulsion plus frozen core).
        h1: Real symmetric N x N one-body integrals.
        eri: Real (N, N, N, N) two-body integrals ``(pq|rs)`` in chemists'
            notation with 8-fold permutational symmetry.
        orbsym: Orbital symmetry labels parsed from FCIDUMP, stored only.
    """

    n_orbitals: int
    n_alpha: int
    n_beta: int
    core_energy: float
    h1: np.ndarray
    eri: np.ndarray
    orbsym: tuple = ()

    def __post_init__(self):
        n = self.n_orbitals
        if self.h1.shape != (n, n):
            raise ValueError(f"h1 shape {self.h1.shape} incompatible with N={n}")
        if self.eri.shape != (n, n, n, n):
            raise ValueError(f"eri shape {self.eri.shape} incompatible with N={n}")
        if not (0 < self.n_alpha <= n and 0 < self.n_beta <= n):
            raise ValueError(
                f"electron counts ({self.n_alpha},{self.n_beta}) out of range for N={n}"
            )
        scale = max(1.0, float(np.abs(self.h1).max()))
        if np.abs(self.h1 - self.h1.T).max() > H1_SYMMETRY_TOL * scale:
            raise ValueError("h1 is not symmetric")
        validate_eri_symmetry(self.eri)
        self.h1.setflags(write=False)
        self.eri.setflags(write=False)

    @property
    def one_body_corrected(self) -> np.ndarray:
        """h' = h1 - 1/2 sum_r (pr|rq), the normal-ordered one-body part."""
        return self.h1 - 0.5 * np.einsum("prrq->pq", self.eri)


def validate_eri_symmetry(eri: np.ndarray, tol: float = ERI_SYMMETRY_TOL):
    """Assert the 8-fold symmetry (pq|rs)=(qp|rs)=(pq|sr)=(rs|pq) pairwise."""
    scale = max(1.0, float(np.abs(eri).max()))
    for name, perm in [
        ("(qp|rs)", (1, 0, 2, 3)),
        ("(pq|sr)", (0, 1, 3, 2)),
        ("(rs|pq)", (2, 3, 0, 1)),
    ]:
        dev = np.abs(eri - eri.transpose(perm)).max()
        if dev > tol * scale:
            raise ValueError(f"ERI symmetry {name} violated by {dev:.3e}")


@dataclasses.dataclass(frozen=True, eq=False)
class DoubleFactorization:
    """Low-rank form H = U0+ N0 U0 + 1/2 sum_g s_g Ug+ Ng^2 Ug + core.

    ``eta`` are the eigenvalues of the corrected one-body part and ``u0``
    the orthogonal matrix diagonalizing it (h' = u0.T @ diag(eta) @ u0).
    Each factor carries ``xi`` (eigenvalues scaled by sqrt of the ERI
    supermatrix eigenvalue magnitude), the orthogonal rotation ``u`` with
    the same row convention as u0, and ``sign`` of the supermatrix
    eigenvalue.  Negative eigenvalues are retained with their sign so the
    reconstruction is exact; the variance constant uses magnitudes only.

    ``lambda_norm`` is 2*||eta||_1 + sum_g 2*||xi_g||_1^2.
    """

    eta: np.ndarray
    u0: np.ndarray
    factors: tuple  # of DfFactor
    lambda_norm: float
    trunc_tol: float

    @property
    def n_factors(self) -> int:
        return len(self.factors)


@dataclasses.dataclass(frozen=True, eq=False)
class DfFactor:
    xi: np.ndarray
    u: np.ndarray
    sign: float


def load_fcidump(path) -> MolecularHamiltonian:
    """Read an FCIDUMP file (1-based indices, chemists' notation).

    Index-0 lines carry the one-body integrals (``i j 0 0``) and the core
    energy (``0 0 0 0``); all symmetry-equivalent ERI entries are filled.
    """
    with open(path) as f:
        text = f.read()
    header_match = re.search(r"(&END|/)", text, re.IGNORECASE)
    if text.lstrip()[:4].upper() != "&FCI" or header_match is None:
        raise FcidumpError(f"{path}: missing &FCI ... &END header")
    header = text[: header_match.start()]
    body = text[header_match.end():]

    def header_int(key):
        m = re.search(rf"{key}\s*=\s*(-?\d+)", header, re.IGNORECASE)
        if m is None:
            raise FcidumpError(f"{path}: header missing {key}")
        return int(m.group(1))

    norb = header_int("NORB")
    nelec = header_int("NELEC")
    ms2_match = re.search(r"MS2\s*=\s*(-?\d+)", header, re.IGNORECASE)
    ms2 = int(ms2_match.group(1)) if ms2_match else 0
    orbsym_match = re.search(r"ORBSYM\s*=\s*([0-9,\s]+)", header, re.IGNORECASE)
    orbsym = ()
    if orbsym_match:
        orbsym = tuple(
            int(tok) for tok in orbsym_match.group(1).replace(",", " ").split()
        )
    if (nelec + ms2) % 2 != 0:
        raise FcidumpError(f"{path}: NELEC={nelec}, MS2={ms2} have mixed parity")
    n_alpha = (nelec + ms2) // 2
    n_beta = (nelec - ms2) // 2

    h1 = np.zeros((norb, norb))
    eri = np.zeros((norb, norb, norb, norb))
    core = 0.0
    for raw in body.splitlines():
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 5:
            raise FcidumpError(f"{path}: malformed line {line!r}")
        try:
            value = float(tokens[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(t) for t in tokens[1:])
        except ValueError as exc:
            raise FcidumpError(f"{path}: malformed line {line!r}") from exc
        for idx in (i, j, k, l):
            if idx < 0 or idx > norb:
                raise FcidumpError(f"{path}: orbital index {idx} out of range 0..{norb}")
        if i == 0:
            core = value
        elif k == 0:
            p, q = i - 1, j - 1
            h1[p, q] = value
            h1[q, p] = value
        else:
            p, q, r, s = i - 1, j - 1, k - 1, l - 1
            for a, b, c, d in _eri_images(p, q, r, s):
                eri[a, b, c, d] = value
    return MolecularHamiltonian(
        n_orbitals=norb,
        n_alpha=n_alpha,
        n_beta=n_beta,
        core_energy=core,
        h1=h1,
        eri=eri,
        orbsym=orbsym,
    )


def _eri_images(p, q, r, s):
    return {
        (p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
        (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p),
    }


def write_fcidump(h: MolecularHamiltonian, path, tol: float = 0.0):
    """Write ``h`` in FCIDUMP format with 16 significant digits.

    Only the canonical representative of each 8-fold symmetry class is
    emitted.  Entries with magnitude <= ``tol`` are skipped (the core
    energy line is always written).
    """
    n = h.n_orbitals
    nelec = h.n_alpha + h.n_beta
    ms2 = h.n_alpha - h.n_beta
    orbsym = h.orbsym if h.orbsym else (1,) * n
    lines = [
        f"&FCI NORB={n},NELEC={nelec},MS2={ms2},",
        "  ORBSYM=" + ",".join(str(x) for x in orbsym) + ",",
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
                    val = h.eri[p, q, r, s]
                    if abs(val) > tol:
                        lines.append(fmt(val, p + 1, q + 1, r + 1, s + 1))
    for p in range(n):
        for q in range(p + 1):
            if abs(h.h1[p, q]) > tol:
                lines.append(fmt(h.h1[p, q], p + 1, q + 1, 0, 0))
    lines.append(fmt(h.core_energy, 0, 0, 0, 0))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def double_factorize(h: MolecularHamiltonian, trunc_tol: float = 0.0) -> DoubleFactorization:
    """Eigendecompose the ERI supermatrix and nest-diagonalize each factor.

    Eigenpairs with |eigenvalue| > trunc_tol are retained.  Each retained
    eigenvector is reshaped to a symmetric N x N matrix, eigendecomposed,
    and scaled by sqrt(|eigenvalue|); the eigenvalue sign is kept so the
    reconstruction stays exact for non-PSD active-space integrals.
    """
    if trunc_tol < 0:
        raise ValueError("trunc_tol must be >= 0")
    n = h.n_orbitals
    supermatrix = h.eri.reshape(n * n, n * n)
    eigvals, eigvecs = np.linalg.eigh(supermatrix)
    order = np.argsort(-np.abs(eigvals))
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    keep = np.abs(eigvals) > trunc_tol

    factors = []
    for lam, vec in zip(eigvals[keep], eigvecs[:, keep].T):
        mat = vec.reshape(n, n)
        mat = 0.5 * (mat + mat.T)  # eigenvector inherits (pq|rs)=(qp|rs)
        w, basis = np.linalg.eigh(mat)
        factors.append(
            DfFactor(xi=np.sqrt(abs(lam)) * w, u=basis.T.copy(), sign=float(np.sign(lam)))
        )

    eta, basis0 = np.linalg.eigh(h.one_body_corrected)
    df = DoubleFactorization(
        eta=eta,
        u0=basis0.T.copy(),
        factors=tuple(factors),
        lambda_norm=_lambda_norm(eta, factors),
        trunc_tol=trunc_tol,
    )
    return df


def _lambda_norm(eta, factors) -> float:
    return 2.0 * np.abs(eta).sum() + sum(
        2.0 * np.abs(f.xi).sum() ** 2 for f in factors
    )


def lambda_of(df: DoubleFactorization) -> float:
    """Recompute 2*||eta||_1 + sum_g 2*||xi_g||_1^2 from the stored vectors."""
    return _lambda_norm(df.eta, df.factors)


def reconstruct_eri(df: DoubleFactorization, n_orbitals: int) -> np.ndarray:
    """Rebuild (pq|rs) = sum_g s_g X^g_pq X^g_rs from the stored factors."""
    eri = np.zeros((n_orbitals,) * 4)
    for f in df.factors:
        x = f.u.T @ np.diag(f.xi) @ f.u
        eri += f.sign * np.einsum("pq,rs->pqrs", x, x)
    return eri


def reconstruct_one_body(df: DoubleFactorization) -> np.ndarray:
    """Rebuild the corrected one-body matrix h' = u0.T @ diag(eta) @ u0."""
    return df.u0.T @ np.diag(df.eta) @ df.u0
