"""Exact wavefunction-derivative states and the optimizer matrices.

For each parameter the derivative of a factor exp(A(theta)) is evaluated
with the exact integral formula d exp(A)[E] = exp(A) * C where
C = V [ (V+ E V) o Phi ] V+, Phi_kl = phi(lam_l - lam_k),
phi(x) = (e^x - 1)/x, computed in the eigenbasis of the one-body
generator; diagonal phase layers are differentiated directly.  The
resulting one-body insertions are lifted to the determinant sector and
propagated through the remaining circuit factors, giving all derivative
states in one forward sweep.

The gradient alone is also available through an adjoint (backward) sweep
at a cost independent of the parameter count.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg

from . import ansatz, fock
from .ansatz import AngleVector, LucjParams
from .fock import FockBasis, FockVector
from .hamiltonian import MolecularHamiltonian


@dataclasses.dataclass
class DerivativeBundle:
    """State, derivative states and energy at one parameter point.

    ``dpsi[k]`` is the derivative w.r.t. the flat parameter
    ``param_indices[k]``, stored as (dim_alpha, dim_beta) blocks.
    """

    psi: FockVector
    dpsi: np.ndarray
    energy: float | None
    param_indices: np.ndarray
    n_params_total: int

    @property
    def n_active(self) -> int:
        return len(self.param_indices)

    def dpsi_flat(self) -> np.ndarray:
        return self.dpsi.reshape(self.n_active, -1)


@dataclasses.dataclass
class LmSystem:
    """Gradient, derivative-overlap and Hamiltonian matrices at one point."""

    e0: float
    g: np.ndarray
    s: np.ndarray
    h: np.ndarray | None
    param_indices: np.ndarray
    n_params_total: int


def _phi_matrix(lam: np.ndarray) -> np.ndarray:
    diff = lam[None, :] - lam[:, None]
    out = np.ones_like(diff)
    small = np.abs(diff) < 1e-12
    safe = np.where(small, 1.0, diff)
    out = (np.exp(safe) - 1.0) / safe
    out[small] = 1.0 + 0.5 * diff[small]
    return out


def _kappa_direction_stack(params: LucjParams, layer: int, local_idx: np.ndarray) -> np.ndarray:
    """Direction matrices dK/dtheta for the requested kappa coordinates.

    ``local_idx`` indexes the layer's N^2 kappa coordinates in flatten
    order (kappa1 strict lower row-major, then kappa2 lower row-major).
    """
    n = params.n_orbitals
    strict = np.tril_indices(n, k=-1)
    lower = np.tril_indices(n, k=0)
    ns = len(strict[0])
    out = np.zeros((len(local_idx), n, n), dtype=complex)
    for k, li in enumerate(local_idx):
        if li < ns:
            p, r = strict[0][li], strict[1][li]
            out[k, p, r] = 1.0
            out[k, r, p] = -1.0
        else:
            p, r = lower[0][li - ns], lower[1][li - ns]
            if p == r:
                out[k, p, p] = 2.0j
            else:
                out[k, p, r] = 1.0j
                out[k, r, p] = 1.0j
    return out


def _factor_params(params: LucjParams, active: np.ndarray):
    """Per-factor lists of (slot, local-coordinate) for the active set."""
    n = params.n_orbitals
    nsq = n * n
    s = len(params.connectivity.s_sites)
    sp = len(params.connectivity.s_prime_pairs)
    per_layer = nsq + s + sp
    slots = {int(i): k for k, i in enumerate(active)}
    kappa = [[] for _ in range(params.n_layers + 1)]
    jays = [[] for _ in range(params.n_layers)]
    for i, k in slots.items():
        layer, off = divmod(i, per_layer)
        if layer >= params.n_layers:  # final rotation block
            kappa[params.n_layers].append((k, i - params.n_layers * per_layer))
        elif off < nsq:
            kappa[layer].append((k, off))
        else:
            jays[layer].append((k, off - nsq))
    return kappa, jays


class _CircuitSweep:
    """Shared machinery for forward/backward sweeps over circuit factors."""

    def __init__(self, params: LucjParams, basis: FockBasis):
        self.params = params
        self.basis = basis
        self.sec_a = fock.sector(basis.n_orbitals, basis.n_alpha)
        self.sec_b = fock.sector(basis.n_orbitals, basis.n_beta)
        self.same_sector = basis.n_alpha == basis.n_beta

    def rotation_ops(self, layer: int, sign: float):
        gen = sign * self.params.kappa_generator(layer)
        u = scipy.linalg.expm(gen)
        n = self.basis.n_orbitals
        wa = fock.orbital_rotation_matrix(u, n, self.basis.n_alpha)
        wb = wa if self.same_sector else fock.orbital_rotation_matrix(u, n, self.basis.n_beta)
        return gen, wa, wb

    def insertion_generators(self, gen: np.ndarray, sign: float, local_idx) -> np.ndarray:
        """C matrices of d exp(gen)/dtheta = exp(gen) C for each coordinate."""
        m_eigs, v = np.linalg.eigh(1j * gen)
        lam = -1j * m_eigs
        phi = _phi_matrix(lam)
        dirs = sign * _kappa_direction_stack(self.params, 0, np.array([li for li in local_idx]))
        mids = v.conj().T[None] @ dirs @ v
        return v[None] @ (mids * phi[None]) @ v.conj().T

    def j_phase(self, layer: int):
        j_same, j_opp = self.params.j_matrices(layer)
        angles = fock.diagonal_coulomb_angles(j_same, j_opp, self.basis)
        return np.exp(1j * angles)

    def j_masks(self, local_idx) -> np.ndarray:
        """Diagonal generator values of the layer phase coordinates."""
        conn = self.params.connectivity
        s = len(conn.s_sites)
        occa, occb = self.sec_a.occf, self.sec_b.occf
        masks = np.empty((len(local_idx), occa.shape[0], occb.shape[0]))
        for k, li in enumerate(local_idx):
            if li < s:
                p = conn.s_sites[li]
                masks[k] = np.outer(occa[:, p], occb[:, p])
            else:
                p, r = conn.s_prime_pairs[li - s]
                ma = occa[:, p] * occa[:, r]
                mb = occb[:, p] * occb[:, r]
                masks[k] = ma[:, None] + mb[None, :]
        return masks


def derivative_bundle(
    params: LucjParams,
    basis: FockBasis,
    method: str = "analytic",
    h: MolecularHamiltonian | None = None,
    active: np.ndarray | None = None,
    fd_step: float = 1e-5,
) -> DerivativeBundle:
    """State and derivative states w.r.t. the (active) flat parameters."""
    n_total = params.n_params
    active = np.arange(n_total) if active is None else np.asarray(active, dtype=int)
    if method.startswith("fd"):
        return _fd_bundle(params, basis, active, h, fd_step)
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")

    sweep = _CircuitSweep(params, basis)
    kappa_lists, j_lists = _factor_params(params, active)
    phi = fock.hartree_fock_state(basis).mat.astype(complex)
    d = np.zeros((len(active),) + phi.shape, dtype=complex)

    def rotate_stack(stack, wa, wb):
        # (k, da, db) -> wa @ stack @ wb.T as two large GEMMs
        out = np.tensordot(stack, wa, axes=([1], [1]))  # (k, db, da')
        out = np.tensordot(out, wb, axes=([1], [1]))    # (k, da', db')
        return out

    def rot_factor(layer, sign):
        nonlocal phi, d
        gen, wa, wb = sweep.rotation_ops(layer, sign)
        entries = kappa_lists[layer]
        d = rotate_stack(d, wa, wb)
        if entries:
            slots = [slot for slot, _ in entries]
            cs = sweep.insertion_generators(gen, sign, [li for _, li in entries])
            la = sweep.sec_a.lift_many(cs)
            lb = la if sweep.same_sector else sweep.sec_b.lift_many(cs)
            ins = np.matmul(la, phi[None]) + np.matmul(phi[None], np.transpose(lb, (0, 2, 1)))
            d[slots] += rotate_stack(ins, wa, wb)
        phi = wa @ phi @ wb.T

    def j_factor(layer):
        nonlocal phi, d
        phase = sweep.j_phase(layer)
        entries = j_lists[layer]
        if entries:
            slots = [slot for slot, _ in entries]
            masks = sweep.j_masks([li for _, li in entries])
            d[slots] += 1j * masks * phi[None]
        d *= phase[None]
        phi = phase * phi

    for factor in ansatz.circuit_factors(params):
        if factor[0] == "rot":
            rot_factor(factor[1], factor[2])
        else:
            j_factor(factor[1])

    psi = FockVector(basis, phi.reshape(-1))
    energy = fock.energy_expectation(h, psi) if h is not None else None
    return DerivativeBundle(
        psi=psi, dpsi=d, energy=energy, param_indices=active, n_params_total=n_total
    )


def _fd_bundle(params, basis, active, h, step):
    theta0 = params.flatten()
    psi = ansatz.prepare_state(params, basis)
    d = np.zeros((len(active), basis.dim_alpha, basis.dim_beta), dtype=complex)
    for k, i in enumerate(active):
        tp = theta0.copy(); tp[i] += step
        tm = theta0.copy(); tm[i] -= step
        vp = ansatz.prepare_state(params.like(tp), basis)
        vm = ansatz.prepare_state(params.like(tm), basis)
        d[k] = (vp.mat - vm.mat) / (2 * step)
    energy = fock.energy_expectation(h, psi) if h is not None else None
    return DerivativeBundle(
        psi=psi, dpsi=d, energy=energy, param_indices=np.asarray(active),
        n_params_total=params.n_params,
    )


def gradient(bundle: DerivativeBundle, h: MolecularHamiltonian) -> np.ndarray:
    """dE/dtheta_i = 2 Re[<dPsi_i|H|Psi> - E <dPsi_i|Psi>]."""
    psi = bundle.psi
    hpsi = fock.apply_hamiltonian(h, psi).amps
    e0 = float(np.real(np.vdot(psi.amps, hpsi)))
    v = bundle.dpsi_flat()
    return 2.0 * np.real(v.conj() @ hpsi - e0 * (v.conj() @ psi.amps))


def overlap_matrix(bundle: DerivativeBundle) -> np.ndarray:
    """S_ij = Re[<dPsi_i|dPsi_j> - <dPsi_i|Psi><Psi|dPsi_j>], symmetrized."""
    v = bundle.dpsi_flat()
    b = v.conj() @ bundle.psi.amps
    s = np.real(v.conj() @ v.T - np.outer(b, b.conj()))
    return 0.5 * (s + s.T)


def hamiltonian_matrix(bundle: DerivativeBundle, h: MolecularHamiltonian) -> np.ndarray:
    """H_ij = Re[<dPsi_i|H|dPsi_j>] over the projected derivative states."""
    psi = bundle.psi.amps
    v = bundle.dpsi_flat()
    b = v.conj() @ psi
    vbar = v - np.outer(np.conj(b), psi)
    action = fock.hamiltonian_action(h, bundle.psi.basis)
    basis = bundle.psi.basis
    if basis.dim <= fock._DENSE_CACHE_LIMIT:
        action.dense()  # many columns: the dense GEMM path is far cheaper
    hv = action.matmat(vbar.reshape(-1, basis.dim_alpha, basis.dim_beta))
    mat = np.real(vbar.conj() @ hv.reshape(vbar.shape).T)
    return 0.5 * (mat + mat.T)


def build_lm_system(
    params: LucjParams,
    basis: FockBasis,
    h: MolecularHamiltonian,
    active: np.ndarray | None = None,
    with_hamiltonian: bool = True,
) -> LmSystem:
    bundle = derivative_bundle(params, basis, "analytic", h=h, active=active)
    return LmSystem(
        e0=bundle.energy,
        g=gradient(bundle, h),
        s=overlap_matrix(bundle),
        h=hamiltonian_matrix(bundle, h) if with_hamiltonian else None,
        param_indices=bundle.param_indices,
        n_params_total=bundle.n_params_total,
    )


def energy_and_gradient(
    params: LucjParams,
    basis: FockBasis,
    h: MolecularHamiltonian,
    active: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Adjoint-mode energy gradient; cost independent of parameter count."""
    n_total = params.n_params
    active = np.arange(n_total) if active is None else np.asarray(active, dtype=int)
    sweep = _CircuitSweep(params, basis)
    kappa_lists, j_lists = _factor_params(params, active)

    factors = list(ansatz.circuit_factors(params))
    states = [fock.hartree_fock_state(basis).mat.astype(complex)]
    ops = []
    for factor in factors:
        phi = states[-1]
        if factor[0] == "rot":
            gen, wa, wb = sweep.rotation_ops(factor[1], factor[2])
            states.append(wa @ phi @ wb.T)
            ops.append(("rot", factor[1], factor[2], gen, wa, wb))
        else:
            phase = sweep.j_phase(factor[1])
            states.append(phase * phi)
            ops.append(("j", factor[1], phase))

    psi_mat = states[-1]
    psi = FockVector(basis, psi_mat.reshape(-1))
    hpsi = fock.apply_hamiltonian(h, psi).amps
    e0 = float(np.real(np.vdot(psi.amps, hpsi)))
    chi = (hpsi - e0 * psi.amps).reshape(psi_mat.shape)

    g = np.zeros(len(active))
    b = chi
    for op, phi_prev in zip(reversed(ops), reversed(states[:-1])):
        if op[0] == "rot":
            _, layer, sign, gen, wa, wb = op
            b = wa.conj().T @ b @ wb.conj()
            entries = kappa_lists[layer]
            if entries:
                ga = b @ phi_prev.conj().T
                gb = b.T @ phi_prev.conj()
                ra = (sweep.sec_a.lift_matrix.T @ ga.reshape(-1)).reshape(gen.shape)
                rb = (sweep.sec_b.lift_matrix.T @ gb.reshape(-1)).reshape(gen.shape)
                cs = sweep.insertion_generators(gen, sign, [li for _, li in entries])
                vals = np.einsum("nij,ij->n", cs.conj(), ra + rb)
                for (slot, _), val in zip(entries, vals):
                    g[slot] += 2.0 * np.real(val)
        else:
            _, layer, phase = op
            b = phase.conj() * b
            entries = j_lists[layer]
            if entries:
                w = phi_prev.conj() * b
                masks = sweep.j_masks([li for _, li in entries])
                vals = -1j * np.einsum("nij,ij->n", masks.astype(complex), w)
                for (slot, _), val in zip(entries, vals):
                    g[slot] += 2.0 * np.real(val)
    return e0, g


# --- circuit-angle (alpha) space ---------------------------------------------

def derivative_states_alpha(angles: AngleVector, basis: FockBasis):
    """|Psi^g> = d|Psi>/d alpha_g for every gate, plus the state itself."""
    sec_a = fock.sector(basis.n_orbitals, basis.n_alpha)
    sec_b = fock.sector(basis.n_orbitals, basis.n_beta)
    phi = fock.hartree_fock_state(basis).mat.astype(complex)
    d = np.zeros((angles.n_gates,) + phi.shape, dtype=complex)
    for g, gate in enumerate(angles.gates):
        ansatz.apply_gate(d[:g], sec_a, sec_b, gate, angles.alphas[g])
        ansatz.apply_gate(phi, sec_a, sec_b, gate, angles.alphas[g])
        d[g] = 1j * ansatz.apply_generator(phi, sec_a, sec_b, gate)
    return FockVector(basis, phi.reshape(-1)), d


def alpha_gradient(angles: AngleVector, basis: FockBasis, h: MolecularHamiltonian) -> np.ndarray:
    """dE/d alpha_g by an adjoint sweep over the gate list."""
    sec_a = fock.sector(basis.n_orbitals, basis.n_alpha)
    sec_b = fock.sector(basis.n_orbitals, basis.n_beta)
    psi = ansatz.prepare_from_angles(angles, basis)
    hpsi = fock.apply_hamiltonian(h, psi).amps
    e0 = float(np.real(np.vdot(psi.amps, hpsi)))
    chi = (hpsi - e0 * psi.amps).reshape(psi.mat.shape)
    g_out = np.zeros(angles.n_gates)
    phi = psi.mat.copy()
    b = chi.copy()
    inv = angles.replaced(-angles.alphas)
    for g in range(angles.n_gates - 1, -1, -1):
        gate = angles.gates[g]
        contrib = 1j * ansatz.apply_generator(phi, sec_a, sec_b, gate)
        g_out[g] = 2.0 * np.real(np.sum(contrib.conj() * b))
        ansatz.apply_gate(phi, sec_a, sec_b, gate, inv.alphas[g])
        ansatz.apply_gate(b, sec_a, sec_b, gate, inv.alphas[g])
    return g_out


def alpha_overlap_matrix(angles: AngleVector, basis: FockBasis) -> np.ndarray:
    """Alpha-space derivative overlap matrix from explicit derivative states."""
    psi, d = derivative_states_alpha(angles, basis)
    v = d.reshape(angles.n_gates, -1)
    b = v.conj() @ psi.amps
    s = np.real(v.conj() @ v.T - np.outer(b, b.conj()))
    return 0.5 * (s + s.T)


def alpha_hamiltonian_matrix(
    angles: AngleVector, basis: FockBasis, h: MolecularHamiltonian
) -> np.ndarray:
    """Alpha-space Re[<Psi^g|H|Psi^h>] over projected derivative states."""
    psi, d = derivative_states_alpha(angles, basis)
    v = d.reshape(angles.n_gates, -1)
    b = v.conj() @ psi.amps
    vbar = v - np.outer(np.conj(b), psi.amps)
    action = fock.hamiltonian_action(h, basis)
    hv = action.matmat(vbar.reshape(-1, basis.dim_alpha, basis.dim_beta)).reshape(vbar.shape)
    mat = np.real(vbar.conj() @ hv.T)
    return 0.5 * (mat + mat.T)


def validate_bundle(
    bundle: DerivativeBundle,
    params: LucjParams,
    basis: FockBasis,
    rng,
    n_samples: int = 3,
    step: float = 1e-5,
    tol: float = 1e-7,
):
    """Spot-check sampled derivative states against central differences."""
    theta0 = params.flatten()
    picks = rng.choice(bundle.n_active, size=min(n_samples, bundle.n_active), replace=False)
    for k in picks:
        i = bundle.param_indices[k]
        tp = theta0.copy(); tp[i] += step
        tm = theta0.copy(); tm[i] -= step
        vp = ansatz.prepare_state(params.like(tp), basis)
        vm = ansatz.prepare_state(params.like(tm), basis)
        fd = (vp.mat - vm.mat) / (2 * step)
        dev = np.abs(fd - bundle.dpsi[k]).max()
        if dev > tol:
            raise AssertionError(f"derivative state {i} deviates from FD by {dev:.2e}")
