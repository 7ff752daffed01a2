"""Layered cluster-Jastrow parameterization and its circuit-angle map.

A state with L correlator layers and N orbitals is

    |Psi> = R(-k_L) prod_{mu=L-1..0} R(k_mu) D(J_mu) R(-k_mu) |HF>

applied right to left, where R(k) is the orbital rotation exp of the
antihermitian generator assembled from the real parameter blocks
(kappa1 strictly lower triangular -> antisymmetric part, kappa2 lower
triangular including the diagonal -> i times the symmetric part) and
D(J) is the diagonal density-density phase layer restricted to the
connectivity sets.

Parameter vector layout (``LucjParams.flatten``): for each layer mu in
ascending order [kappa1 row-major (p>r), kappa2 row-major (p>=r), j1
over the on-site set, j2 over the same-spin pair set], then the final
rotation's kappa1 and kappa2.  Total count (L+1)N^2 + L(|S|+|S'|).

The circuit form merges adjacent orbital rotations into L+1 blocks, each
compiled to a fixed sequence of two-orbital mixers (XX+YY), single-orbital
phases (P) and density-density phases (NN) by a deterministic
column-by-column Givens elimination; gate angles for the two spin chains
are identical by construction.  Qubit convention: spin-up orbital p is
qubit p, spin-down orbital p is qubit N+p.
"""

from __future__ import annotations

import dataclasses
import json
from math import atan2, pi

import numpy as np
import scipy.linalg

from . import fock
from .fock import FockBasis, FockVector, SpinSector, sector

_ELIM_TINY = 1e-14


@dataclasses.dataclass(frozen=True)
class Connectivity:
    """On-site set S and unordered same-spin pair set S'."""

    s_sites: tuple
    s_prime_pairs: tuple

    def __post_init__(self):
        if len(set(self.s_sites)) != len(self.s_sites):
            raise ValueError("duplicate on-site entries")
        norm = []
        for p, r in self.s_prime_pairs:
            if p == r:
                raise ValueError(f"same-spin pair ({p},{p}) is not allowed")
            norm.append((min(p, r), max(p, r)))
        if len(set(norm)) != len(norm):
            raise ValueError("duplicate same-spin pairs")
        object.__setattr__(self, "s_sites", tuple(int(p) for p in self.s_sites))
        object.__setattr__(self, "s_prime_pairs", tuple(norm))

    def to_dict(self):
        return {"s": list(self.s_sites), "s_prime": [list(p) for p in self.s_prime_pairs]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["s"]), tuple(tuple(p) for p in d["s_prime"]))


def default_connectivity(n_orbitals: int, topology: str = "square_lattice") -> Connectivity:
    """Connectivity induced by mapping the two spin chains to adjacent
    rows of a square qubit lattice: every orbital is an on-site coupling
    and same-spin couplings are the nearest-neighbor pairs (p, p+1)."""
    if topology != "square_lattice":
        raise ValueError(f"unsupported topology {topology!r}")
    return Connectivity(
        s_sites=tuple(range(n_orbitals)),
        s_prime_pairs=tuple((p, p + 1) for p in range(n_orbitals - 1)),
    )


def n_theta(n_orbitals: int, n_layers: int, connectivity: Connectivity) -> int:
    return (n_layers + 1) * n_orbitals**2 + n_layers * (
        len(connectivity.s_sites) + len(connectivity.s_prime_pairs)
    )


def n_gates(n_orbitals: int, n_layers: int, connectivity: Connectivity) -> int:
    return (n_layers + 1) * 2 * n_orbitals**2 + n_layers * (
        len(connectivity.s_sites) + 2 * len(connectivity.s_prime_pairs)
    )


@dataclasses.dataclass
class LucjParams:
    """Layered kappa/J parameter set with connectivity.

    kappa1/kappa2 have shape (L, N, N); only the strict lower triangle of
    kappa1 and the lower triangle (including diagonal) of kappa2 are
    meaningful.  final_kappa1/final_kappa2 parameterize the leading
    orbital rotation R(-k_L).
    """

    n_orbitals: int
    n_layers: int
    connectivity: Connectivity
    kappa1: np.ndarray
    kappa2: np.ndarray
    j1: np.ndarray
    j2: np.ndarray
    final_kappa1: np.ndarray
    final_kappa2: np.ndarray

    @classmethod
    def zero(cls, n_orbitals: int, n_layers: int, connectivity: Connectivity | None = None):
        conn = connectivity or default_connectivity(n_orbitals)
        n, loc = n_orbitals, n_layers
        return cls(
            n_orbitals=n,
            n_layers=loc,
            connectivity=conn,
            kappa1=np.zeros((loc, n, n)),
            kappa2=np.zeros((loc, n, n)),
            j1=np.zeros((loc, len(conn.s_sites))),
            j2=np.zeros((loc, len(conn.s_prime_pairs))),
            final_kappa1=np.zeros((n, n)),
            final_kappa2=np.zeros((n, n)),
        )

    @property
    def n_params(self) -> int:
        return n_theta(self.n_orbitals, self.n_layers, self.connectivity)

    def _tril_indices(self):
        n = self.n_orbitals
        return np.tril_indices(n, k=-1), np.tril_indices(n, k=0)

    def flatten(self) -> np.ndarray:
        strict, lower = self._tril_indices()
        chunks = []
        for mu in range(self.n_layers):
            chunks += [self.kappa1[mu][strict], self.kappa2[mu][lower],
                       self.j1[mu], self.j2[mu]]
        chunks += [self.final_kappa1[strict], self.final_kappa2[lower]]
        theta = np.concatenate(chunks) if chunks else np.zeros(0)
        assert theta.size == self.n_params
        return theta

    @classmethod
    def unflatten(cls, theta: np.ndarray, n_orbitals: int, n_layers: int,
                  connectivity: Connectivity) -> "LucjParams":
        out = cls.zero(n_orbitals, n_layers, connectivity)
        theta = np.asarray(theta, dtype=float)
        if theta.size != out.n_params:
            raise ValueError(f"expected {out.n_params} parameters, got {theta.size}")
        strict, lower = out._tril_indices()
        ns, nl = len(strict[0]), len(lower[0])
        s, sp = len(connectivity.s_sites), len(connectivity.s_prime_pairs)
        pos = 0
        for mu in range(n_layers):
            out.kappa1[mu][strict] = theta[pos:pos + ns]; pos += ns
            out.kappa2[mu][lower] = theta[pos:pos + nl]; pos += nl
            out.j1[mu] = theta[pos:pos + s]; pos += s
            out.j2[mu] = theta[pos:pos + sp]; pos += sp
        out.final_kappa1[strict] = theta[pos:pos + ns]; pos += ns
        out.final_kappa2[lower] = theta[pos:pos + nl]; pos += nl
        return out

    def like(self, theta: np.ndarray) -> "LucjParams":
        return LucjParams.unflatten(theta, self.n_orbitals, self.n_layers, self.connectivity)

    def kappa_generator(self, layer: int) -> np.ndarray:
        """Antihermitian N x N generator of layer ``layer`` (or the final
        rotation for layer == n_layers)."""
        if layer == self.n_layers:
            k1, k2 = self.final_kappa1, self.final_kappa2
        else:
            k1, k2 = self.kappa1[layer], self.kappa2[layer]
        k1 = np.tril(k1, k=-1)
        k2 = np.tril(k2, k=0)
        return (k1 - k1.T) + 1j * (k2 + k2.T)

    def j_matrices(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """(j_same, j_opposite) matrices of the layer's phase operator."""
        n = self.n_orbitals
        j_same = np.zeros((n, n))
        j_opp = np.zeros((n, n))
        for value, p in zip(self.j1[layer], self.connectivity.s_sites):
            j_opp[p, p] = value
        for value, (p, r) in zip(self.j2[layer], self.connectivity.s_prime_pairs):
            j_same[p, r] = value
            j_same[r, p] = value
        return j_same, j_opp

    def to_json_dict(self) -> dict:
        return {
            "n_orbitals": self.n_orbitals,
            "n_layers": self.n_layers,
            "connectivity": self.connectivity.to_dict(),
            "theta": self.flatten().tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LucjParams":
        conn = Connectivity.from_dict(d["connectivity"])
        return cls.unflatten(
            np.array(d["theta"], dtype=float), d["n_orbitals"], d["n_layers"], conn
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def random_perturbation(
    n_orbitals: int, n_layers: int, connectivity: Connectivity, rng, scale: float = 0.01
) -> LucjParams:
    """Zero-plus-noise initialization, uniform in [-scale, scale]."""
    base = LucjParams.zero(n_orbitals, n_layers, connectivity)
    theta = rng.uniform(-scale, scale, size=base.n_params)
    return base.like(theta)


# --- Givens compilation -----------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Gate:
    """One parameterized gate of the compiled circuit.

    kind: "xxyy" (two-orbital mixer exp(i a (XX+YY)/2)), "p" (orbital
    phase exp(i a |1><1|)), or "nn" (density-density phase
    exp(i a |11><11|)).  spin is "a", "b", or "ab" for the on-site nn
    gate coupling the two chains.  ``orbs`` are spatial orbital indices,
    ``qubits`` the chain positions, ``block`` a label of the circuit
    segment the gate belongs to.
    """

    kind: str
    spin: str
    orbs: tuple
    qubits: tuple
    block: tuple

    def pauli_terms(self, n_orbitals: int):
        """Generator B = sum_l b_l sigma_l with ||b||_1 = 1.

        Pauli factors are returned as (coefficient, ((qubit, "XYZ"), ...))
        with an empty tuple for the identity.
        """
        q = self.qubits
        if self.kind == "xxyy":
            return [
                (0.5, ((q[0], "X"), (q[1], "X"))),
                (0.5, ((q[0], "Y"), (q[1], "Y"))),
            ]
        if self.kind == "p":
            return [(0.5, ()), (-0.5, ((q[0], "Z"),))]
        if self.kind == "nn":
            return [
                (0.25, ()),
                (-0.25, ((q[0], "Z"),)),
                (-0.25, ((q[1], "Z"),)),
                (0.25, ((q[0], "Z"), (q[1], "Z"))),
            ]
        raise ValueError(f"unknown gate kind {self.kind}")


@dataclasses.dataclass
class AngleVector:
    """Compiled circuit: gate descriptors plus their angle values."""

    n_orbitals: int
    gates: tuple
    alphas: np.ndarray

    @property
    def n_gates(self) -> int:
        return len(self.gates)

    def replaced(self, alphas: np.ndarray) -> "AngleVector":
        return AngleVector(self.n_orbitals, self.gates, np.asarray(alphas, dtype=float))


def givens_plan(u: np.ndarray):
    """Deterministic column-by-column elimination of a unitary.

    Returns (rotations, phases) with rotations a list of (m, theta, phi)
    in elimination order and phases the N diagonal phase angles, such
    that ``u = T_1 ... T_K D``: applied to a state, D acts first, then
    T_K ... T_1, where T_k = P_m(phi_k) G_{m,m+1}(theta_k).
    """
    u = np.asarray(u, dtype=complex)
    n = u.shape[0]
    w = u.copy()
    rotations = []
    for j in range(n - 1):
        for i in range(n - 1, j, -1):
            m = i - 1
            target = w[i, j]
            pivot = w[m, j]
            if abs(target) < _ELIM_TINY:
                theta, phi = 0.0, 0.0
            elif abs(pivot) < _ELIM_TINY:
                theta, phi = pi / 2, 0.0
            else:
                ratio = target / pivot
                theta = atan2(abs(ratio), 1.0)
                phi = _wrap_angle(pi / 2 - np.angle(ratio))
            rotations.append((m, theta, phi))
            if theta != 0.0:
                c, s = np.cos(theta), np.sin(theta)
                ephi = np.exp(-1j * phi)
                top = c * ephi * w[m] - 1j * s * w[i]
                bot = -1j * s * ephi * w[m] + c * w[i]
                w[m], w[i] = top, bot
    phases = np.angle(np.diagonal(w))
    return rotations, phases


def _wrap_angle(a: float) -> float:
    return float((a + pi) % (2 * pi) - pi)


def plan_reconstruct(rotations, phases) -> np.ndarray:
    """Rebuild the unitary from a Givens plan (test oracle)."""
    n = len(phases)
    w = np.diag(np.exp(1j * np.asarray(phases)))
    for m, theta, phi in reversed(rotations):
        c, s = np.cos(theta), np.sin(theta)
        t = np.eye(n, dtype=complex)
        t[m, m] = c * np.exp(1j * phi)
        t[m, m + 1] = 1j * s * np.exp(1j * phi)
        t[m + 1, m] = 1j * s
        t[m + 1, m + 1] = c
        w = t @ w
    return w


def _block_unitaries(params: LucjParams) -> list[np.ndarray]:
    """The L+1 merged orbital-rotation blocks of the circuit."""
    loc = params.n_layers
    exps = [scipy.linalg.expm(params.kappa_generator(mu)) for mu in range(loc + 1)]
    blocks = [exps[0].conj().T]
    for mu in range(loc):
        blocks.append(exps[mu + 1].conj().T @ exps[mu])
    return blocks


def angles_of(params: LucjParams) -> AngleVector:
    """Compile the parameter set to the gate/angle list, in application order."""
    n = params.n_orbitals
    conn = params.connectivity
    gates: list[Gate] = []
    alphas: list[float] = []

    def emit_rotation_block(u, label):
        rotations, phases = givens_plan(u)
        for p in range(n):
            for spin, q in (("a", p), ("b", n + p)):
                gates.append(Gate("p", spin, (p,), (q,), label))
                alphas.append(float(phases[p]))
        for m, theta, phi in reversed(rotations):
            for spin, off in (("a", 0), ("b", n)):
                gates.append(Gate("xxyy", spin, (m, m + 1), (off + m, off + m + 1), label))
                alphas.append(float(theta))
            for spin, off in (("a", 0), ("b", n)):
                gates.append(Gate("p", spin, (m,), (off + m,), label))
                alphas.append(float(phi))

    blocks = _block_unitaries(params)
    emit_rotation_block(blocks[0], ("rot", 0))
    for mu in range(params.n_layers):
        for value, p in zip(params.j1[mu], conn.s_sites):
            gates.append(Gate("nn", "ab", (p,), (p, n + p), ("j", mu)))
            alphas.append(float(value))
        for value, (p, r) in zip(params.j2[mu], conn.s_prime_pairs):
            for spin, off in (("a", 0), ("b", n)):
                gates.append(Gate("nn", spin, (p, r), (off + p, off + r), ("j", mu)))
                alphas.append(float(value))
        emit_rotation_block(blocks[mu + 1], ("rot", mu + 1))
    av = AngleVector(n, tuple(gates), np.array(alphas))
    assert av.n_gates == n_gates(n, params.n_layers, conn)
    return av


# --- gate application on sector blocks --------------------------------------

def apply_gate(
    mat: np.ndarray, sec_a: SpinSector, sec_b: SpinSector, gate: Gate, alpha: float
) -> None:
    """Apply one gate in place to a state block of shape (.., dim_a, dim_b)."""
    if gate.kind == "xxyy":
        sec = sec_a if gate.spin == "a" else sec_b
        lo, hi = sec.pair_exchange(gate.orbs[0])
        c, s = np.cos(alpha), 1j * np.sin(alpha)
        if gate.spin == "a":
            a, b = mat[..., lo, :], mat[..., hi, :]
            mat[..., lo, :], mat[..., hi, :] = c * a + s * b, s * a + c * b
        else:
            a, b = mat[..., lo], mat[..., hi]
            mat[..., lo], mat[..., hi] = c * a + s * b, s * a + c * b
    elif gate.kind == "p":
        phase = np.exp(1j * alpha)
        p = gate.orbs[0]
        if gate.spin == "a":
            mat[..., sec_a.occ_indices(p), :] *= phase
        else:
            mat[..., sec_b.occ_indices(p)] *= phase
    elif gate.kind == "nn":
        phase = np.exp(1j * alpha)
        if gate.spin == "ab":
            p = gate.orbs[0]
            rows = sec_a.occ_indices(p)
            cols = sec_b.occ_indices(p)
            if mat.ndim == 2:
                mat[np.ix_(rows, cols)] *= phase
            else:
                mat[:, rows[:, None], cols[None, :]] *= phase
        else:
            p, r = gate.orbs
            sec = sec_a if gate.spin == "a" else sec_b
            both = np.flatnonzero(sec.occ[:, p] & sec.occ[:, r])
            if gate.spin == "a":
                mat[..., both, :] *= phase
            else:
                mat[..., both] *= phase
    else:
        raise ValueError(f"unknown gate kind {gate.kind}")


def apply_gate_sequence(
    mat: np.ndarray,
    sec_a: SpinSector,
    sec_b: SpinSector,
    angles: AngleVector,
    start: int = 0,
    stop: int | None = None,
    alphas: np.ndarray | None = None,
) -> np.ndarray:
    """Apply gates[start:stop] in order, in place; returns ``mat``."""
    values = angles.alphas if alphas is None else alphas
    stop = angles.n_gates if stop is None else stop
    for g in range(start, stop):
        apply_gate(mat, sec_a, sec_b, angles.gates[g], values[g])
    return mat


def apply_generator(
    mat: np.ndarray, sec_a: SpinSector, sec_b: SpinSector, gate: Gate
) -> np.ndarray:
    """Return B_g |state>, the gate generator applied to a block (fresh array)."""
    out = np.zeros_like(mat)
    if gate.kind == "xxyy":
        sec = sec_a if gate.spin == "a" else sec_b
        lo, hi = sec.pair_exchange(gate.orbs[0])
        if gate.spin == "a":
            out[..., lo, :] = mat[..., hi, :]
            out[..., hi, :] = mat[..., lo, :]
        else:
            out[..., lo] = mat[..., hi]
            out[..., hi] = mat[..., lo]
    elif gate.kind == "p":
        p = gate.orbs[0]
        if gate.spin == "a":
            idx = sec_a.occ_indices(p)
            out[..., idx, :] = mat[..., idx, :]
        else:
            idx = sec_b.occ_indices(p)
            out[..., idx] = mat[..., idx]
    elif gate.kind == "nn":
        if gate.spin == "ab":
            p = gate.orbs[0]
            rows, cols = sec_a.occ_indices(p), sec_b.occ_indices(p)
            if mat.ndim == 2:
                out[np.ix_(rows, cols)] = mat[np.ix_(rows, cols)]
            else:
                out[:, rows[:, None], cols[None, :]] = mat[:, rows[:, None], cols[None, :]]
        else:
            p, r = gate.orbs
            sec = sec_a if gate.spin == "a" else sec_b
            both = np.flatnonzero(sec.occ[:, p] & sec.occ[:, r])
            if gate.spin == "a":
                out[..., both, :] = mat[..., both, :]
            else:
                out[..., both] = mat[..., both]
    else:
        raise ValueError(f"unknown gate kind {gate.kind}")
    return out


# --- state preparation -------------------------------------------------------

def circuit_factors(params: LucjParams):
    """Factor sequence of the ansatz in application order.

    Yields ("rot", layer, sign) for exp(sign * K_layer) and
    ("j", layer) for the diagonal phase layers; layer == n_layers denotes
    the final rotation (sign -1).
    """
    for mu in range(params.n_layers):
        yield ("rot", mu, -1.0)
        yield ("j", mu)
        yield ("rot", mu, +1.0)
    yield ("rot", params.n_layers, -1.0)


def prepare_state(params: LucjParams, basis: FockBasis) -> FockVector:
    """Apply the layered ansatz to the reference determinant (exact).

    Adjacent orbital rotations are merged into the L+1 circuit blocks;
    the unmerged factor product is exercised independently by the
    derivative machinery and the finite-difference cross-checks.
    """
    v = fock.hartree_fock_state(basis)
    blocks = _block_unitaries(params)
    v = fock.apply_orbital_unitary(blocks[0], v)
    for mu in range(params.n_layers):
        j_same, j_opp = params.j_matrices(mu)
        v = fock.apply_diagonal_coulomb(j_same, j_opp, v)
        v = fock.apply_orbital_unitary(blocks[mu + 1], v)
    return v


def prepare_state_factors(params: LucjParams, basis: FockBasis) -> FockVector:
    """Literal unmerged factor product (reference path for tests)."""
    v = fock.hartree_fock_state(basis)
    for factor in circuit_factors(params):
        if factor[0] == "rot":
            _, layer, sign = factor
            kappa = sign * params.kappa_generator(layer)
            v = fock.apply_orbital_rotation(kappa, v)
        else:
            _, layer = factor
            j_same, j_opp = params.j_matrices(layer)
            v = fock.apply_diagonal_coulomb(j_same, j_opp, v)
    return v


def prepare_from_angles(angles: AngleVector, basis: FockBasis,
                        alphas: np.ndarray | None = None) -> FockVector:
    """Apply the compiled gate list to the reference determinant."""
    sec_a = sector(basis.n_orbitals, basis.n_alpha)
    sec_b = sector(basis.n_orbitals, basis.n_beta)
    mat = fock.hartree_fock_state(basis).mat.copy()
    apply_gate_sequence(mat, sec_a, sec_b, angles, alphas=alphas)
    return FockVector(basis, mat.reshape(-1))


# --- theta -> alpha Jacobian --------------------------------------------------

@dataclasses.dataclass
class AngleJacobian:
    """Finite-difference d alpha / d theta with branch diagnostics."""

    matrix: np.ndarray          # (n_gates, n_theta)
    flagged_columns: np.ndarray  # bool, Givens branch discontinuity detected
    step: float

    @property
    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.matrix, axis=0)


def jacobian_alpha_theta(params: LucjParams, step: float = 1e-5) -> AngleJacobian:
    """Central finite differences of the circuit angles w.r.t. theta.

    Angle differences are wrapped to (-pi, pi] before dividing (phase
    angles live on the circle); a column is flagged when any wrapped jump
    exceeds pi/2, signalling a Givens-elimination branch discontinuity
    under the FD step.
    """
    theta0 = params.flatten()
    base = angles_of(params)
    n_g = base.n_gates
    n_t = theta0.size
    jac = np.zeros((n_g, n_t))
    flagged = np.zeros(n_t, dtype=bool)
    for i in range(n_t):
        tp = theta0.copy(); tp[i] += step
        tm = theta0.copy(); tm[i] -= step
        ap = angles_of(params.like(tp)).alphas
        am = angles_of(params.like(tm)).alphas
        diff = ap - am
        diff = (diff + pi) % (2 * pi) - pi
        if np.abs(diff).max() > pi / 2:
            flagged[i] = True
        jac[:, i] = diff / (2 * step)
    return AngleJacobian(matrix=jac, flagged_columns=flagged, step=step)
