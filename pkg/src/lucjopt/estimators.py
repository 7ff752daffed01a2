"""Desk-scale simulation of the measurement protocols.

Shift-rule derivatives, channel-based overlap/Hamiltonian matrix
elements, and shot-sampled energy estimates with variance-optimal
budget allocation.  States are simulated exactly; sampling draws
measurement outcomes from the exact distributions, so every estimator
here is unbiased by construction and its variance obeys the analytic
bound used for the shot accounting.

Pauli insertions from the mixer generators ((XX+YY)/2) do not conserve
particle number term by term, so channel branches are tracked on the
direct sum of determinant sectors reachable from the fixed sector; the
unitary gates act block-diagonally on that sum.  Multi-sector states are
dicts mapping (n_up, n_down) to amplitude blocks of shape
(..., dim_up, dim_down); a leading axis batches independent branches.
Projective channel branches keep pure states pure (unnormalized);
sampled mode simulates the two-outcome measurements and multiplies the
conditional statistics by the success probability of the post-selection
chain.
"""

from __future__ import annotations

import dataclasses
from math import sqrt, pi

import numpy as np

from . import ansatz, fock
from .ansatz import AngleVector
from .fock import FockBasis, FockVector
from .hamiltonian import DoubleFactorization, MolecularHamiltonian


@dataclasses.dataclass(frozen=True)
class ShiftRule:
    """Four-point rule for derivatives of second-degree trig polynomials."""

    y: tuple = (1.0, -1.0, (sqrt(2) - 2) / sqrt(8), -(sqrt(2) - 2) / sqrt(8))
    delta: tuple = (pi / 4, -pi / 4, pi / 2, -pi / 2)

    @property
    def y_one_norm(self) -> float:
        return float(np.abs(self.y).sum())


SHIFT_RULE = ShiftRule()


@dataclasses.dataclass(frozen=True)
class ChannelExpansion:
    """Quasi-probability weights of Pauli left/right multiplication.

    sigma rho = sum_d l_coeffs[d] G_{sigma,d}[rho] and
    rho sigma = sum_d r_coeffs[d] G_{sigma,d}[rho], with channels
    G_0 = project(+), G_1 = rotate(-pi/4), G_2 = project(-),
    G_3 = rotate(+pi/4) and ||L||_1 = ||R||_1 = 3.
    """

    l_coeffs: tuple = (1.0, 0.5j, -1.0, -0.5j)
    r_coeffs: tuple = (1.0, -0.5j, -1.0, 0.5j)


CHANNELS = ChannelExpansion()


@dataclasses.dataclass
class ShotBudget:
    """Shot allocation over measurement groups."""

    total_shots: int
    allocation: list  # of (group_id, shots)
    achieved_variance_factor: float  # sum_k w_k^2 / S_k

    def shots_of(self, group_id) -> int:
        for gid, s in self.allocation:
            if gid == group_id:
                return s
        return 0


def allocate_shots(weights, total_shots: int, group_ids=None) -> ShotBudget:
    """Proportional allocation S_k ~ |w_k| S / ||w||_1, largest-remainder
    rounding, at least one shot per nonzero-weight group."""
    w = np.abs(np.asarray(weights, dtype=float))
    n = len(w)
    group_ids = list(range(n)) if group_ids is None else list(group_ids)
    nonzero = np.flatnonzero(w > 0)
    if total_shots < len(nonzero):
        raise ValueError(
            f"{total_shots} shots cannot cover {len(nonzero)} nonzero-weight groups"
        )
    shots = np.zeros(n, dtype=int)
    if len(nonzero):
        quota = w[nonzero] * total_shots / w[nonzero].sum()
        base = np.maximum(np.floor(quota).astype(int), 1)
        remainder = quota - np.floor(quota)
        surplus = total_shots - base.sum()
        if surplus > 0:
            order = np.argsort(-remainder)
            for idx in order[:surplus]:
                base[idx] += 1
        while base.sum() > total_shots:
            candidates = np.flatnonzero(base > 1)
            idx = candidates[np.argsort(remainder[candidates])[0]]
            base[idx] -= 1
        shots[nonzero] = base
    achieved = float(sum(w[k] ** 2 / shots[k] for k in nonzero))
    return ShotBudget(
        total_shots=int(shots.sum()),
        allocation=[(group_ids[k], int(shots[k])) for k in range(n)],
        achieved_variance_factor=achieved,
    )


# --- multi-sector pure states -------------------------------------------------

def _as_multisector(v: FockVector) -> dict:
    return {(v.basis.n_alpha, v.basis.n_beta): v.mat.astype(complex).copy()}


def _norm2(state: dict) -> float:
    return float(sum(np.sum(np.abs(b) ** 2) for b in state.values()))


def _col_norms2(state: dict, k: int) -> np.ndarray:
    out = np.zeros(k)
    for b in state.values():
        out += np.sum(np.abs(b) ** 2, axis=(-2, -1))
    return out


def _inner(x: dict, y: dict) -> complex:
    total = 0.0 + 0.0j
    for key in x.keys() & y.keys():
        total += np.vdot(x[key], y[key])
    return complex(total)


def _col_inner(x: dict, y: dict, k: int) -> np.ndarray:
    out = np.zeros(k, dtype=complex)
    for key in x.keys() & y.keys():
        out += np.einsum("...ij,...ij->...", x[key].conj(), y[key])
    return out


def _scaled(state: dict, factor) -> dict:
    return {k: factor * b for k, b in state.items()}


def _add(x: dict, y: dict, fx=1.0, fy=1.0) -> dict:
    out = {k: fx * b.copy() for k, b in x.items()}
    for k, b in y.items():
        if k in out:
            out[k] = out[k] + fy * b
        else:
            out[k] = fy * b.copy()
    return out


def _stack(states: list[dict]) -> dict:
    """Stack branch states along a new leading axis (union of sectors)."""
    keys = set()
    for s in states:
        keys |= s.keys()
    out = {}
    for key in keys:
        n_a, n_b = None, None
        for s in states:
            if key in s:
                n_a, n_b = s[key].shape[-2:]
                break
        blocks = [
            s.get(key, np.zeros((n_a, n_b), dtype=complex)) for s in states
        ]
        out[key] = np.stack(blocks, axis=0)
    return out


def _column(state: dict, idx: int) -> dict:
    return {k: b[idx] for k, b in state.items()}


def _apply_pauli_spin(sec, ops):
    """Per-spin Pauli action: (flip_mask, per-string phase array)."""
    flip = 0
    phase = np.ones(sec.dim, dtype=complex)
    for p, letter in ops:
        bit = sec.occ[:, p]
        if letter == "X":
            flip ^= 1 << p
        elif letter == "Y":
            flip ^= 1 << p
            phase = phase * np.where(bit, -1j, 1j)
        elif letter == "Z":
            phase = phase * np.where(bit, -1.0, 1.0)
        else:
            raise ValueError(f"unknown Pauli letter {letter}")
    return flip, phase


def apply_pauli(state: dict, n: int, pauli) -> dict:
    """Apply a Pauli product ((qubit, letter), ...) to a multi-sector state.

    Qubits 0..n-1 address the spin-up chain, n..2n-1 the spin-down chain.
    The operators act at the qubit level (the Jordan-Wigner string signs
    are already part of the determinant representation).
    """
    ops_a = [(q, s) for q, s in pauli if q < n]
    ops_b = [(q - n, s) for q, s in pauli if q >= n]
    out: dict = {}
    for (ka, kb), block in state.items():
        sec_a = fock.sector(n, ka)
        sec_b = fock.sector(n, kb)
        flip_a, phase_a = _apply_pauli_spin(sec_a, ops_a)
        flip_b, phase_b = _apply_pauli_spin(sec_b, ops_b)
        tgt_a = sec_a.strings ^ flip_a
        tgt_b = sec_b.strings ^ flip_b
        counts_a = np.bitwise_count(tgt_a).astype(int)
        counts_b = np.bitwise_count(tgt_b).astype(int)
        lead = block.shape[:-2]
        for ka2 in np.unique(counts_a):
            sel_a = np.flatnonzero(counts_a == ka2)
            sec_a2 = fock.sector(n, int(ka2))
            idx_a = np.array([sec_a2.index[int(s)] for s in tgt_a[sel_a]], dtype=np.intp)
            for kb2 in np.unique(counts_b):
                sel_b = np.flatnonzero(counts_b == kb2)
                sec_b2 = fock.sector(n, int(kb2))
                idx_b = np.array(
                    [sec_b2.index[int(s)] for s in tgt_b[sel_b]], dtype=np.intp
                )
                key = (int(ka2), int(kb2))
                if key not in out:
                    out[key] = np.zeros(
                        lead + (sec_a2.dim, sec_b2.dim), dtype=complex
                    )
                vals = (
                    phase_a[sel_a, None] * phase_b[None, sel_b]
                ) * block[..., sel_a[:, None], sel_b[None, :]]
                out[key][..., idx_a[:, None], idx_b[None, :]] += vals
    return out


_CHANNEL_COMBOS = {
    0: (0.5, 0.5),
    1: (1 / sqrt(2), -1j / sqrt(2)),
    2: (0.5, -0.5),
    3: (1 / sqrt(2), 1j / sqrt(2)),
}


def apply_channel(state: dict, n: int, pauli, d: int, sigma_state: dict | None = None) -> dict:
    """Ket branch of the channel G_{sigma,d} on a pure multi-sector state."""
    if sigma_state is None:
        sigma_state = apply_pauli(state, n, pauli)
    fx, fy = _CHANNEL_COMBOS[d]
    return _add(state, sigma_state, fx, fy)


def apply_gates_multisector(state: dict, n: int, angles: AngleVector,
                            start: int, stop: int) -> dict:
    for (ka, kb), block in state.items():
        ansatz.apply_gate_sequence(
            block, fock.sector(n, ka), fock.sector(n, kb), angles, start, stop
        )
    return state


def pauli_expectation(state: dict, n: int, pauli) -> float:
    """<psi|sigma|psi> (real for Hermitian Pauli products)."""
    return float(np.real(_inner(state, apply_pauli(state, n, pauli))))


def _sector_energy_cols(state: dict, n: int, h: MolecularHamiltonian, k: int) -> np.ndarray:
    """Per-column <block|H|block> summed over sectors (may be unnormalized)."""
    out = np.zeros(k)
    for (ka, kb), block in state.items():
        basis = FockBasis(n, ka, kb)
        action = fock.hamiltonian_action(h, basis)
        blk = block if block.ndim == 3 else block[None]
        hb = action.matmat(blk)
        out += np.real(np.einsum("kij,kij->k", blk.conj(), hb))
    return out


def _sector_energy(state: dict, n: int, h: MolecularHamiltonian) -> float:
    return float(_sector_energy_cols({k: b[None] for k, b in state.items()}, n, h, 1)[0])


# --- energy sampling ------------------------------------------------------------

def df_group_weights(df: DoubleFactorization) -> np.ndarray:
    """Lagrange weights (2||eta||_1, 2||xi_g||_1^2, ...) over the 1+N_g groups."""
    return np.array(
        [2.0 * np.abs(df.eta).sum()]
        + [2.0 * np.abs(f.xi).sum() ** 2 for f in df.factors]
    )


def _df_group_observable(df: DoubleFactorization, group: int, n: int, ka: int, kb: int):
    """(rotation, per-determinant values) of one measurement group."""
    sec_a = fock.sector(n, ka)
    sec_b = fock.sector(n, kb)
    if group == 0:
        weights, power, coeff, u = df.eta, 1, 1.0, df.u0
    else:
        f = df.factors[group - 1]
        weights, power, coeff, u = f.xi, 2, 0.5 * f.sign, f.u
    diag = (sec_a.occf @ weights)[:, None] + (sec_b.occf @ weights)[None, :]
    return u, coeff * diag**power


def _rotate_block(block, u, n, ka, kb):
    wa = fock.orbital_rotation_matrix(u, n, ka)
    wb = wa if kb == ka else fock.orbital_rotation_matrix(u, n, kb)
    return wa @ block @ wb.T


def sample_energy_of_state(
    state: dict,
    n: int,
    df: DoubleFactorization,
    h: MolecularHamiltonian,
    shots: int,
    rng,
    success_prob: float = 1.0,
) -> float:
    """Unbiased sampled estimate of Tr[H rho] for a post-selected state.

    ``state`` must be normalized; ``success_prob`` is the probability of
    the post-selection chain that produced it and is folded in through
    simulated Bernoulli successes (failed shots contribute zero).  The
    core energy is measured as its own zero-conditional-variance group.
    """
    weights = df_group_weights(df)
    core_w = abs(h.core_energy)
    chain = success_prob < 1.0
    all_w = np.concatenate([weights, [core_w]]) if (core_w > 0 and chain) else weights
    estimate = 0.0 if (core_w > 0 and chain) else h.core_energy * success_prob
    nonzero = np.flatnonzero(all_w > 0)
    if shots >= len(nonzero):
        allocation = allocate_shots(all_w, shots).allocation
        scales = {gid: s for gid, s in allocation}
    else:
        # budget below the group count: importance-sample the group per
        # shot (same unbiasedness and ||w||_1^2/S variance accounting)
        probs = all_w[nonzero] / all_w[nonzero].sum()
        counts = rng.multinomial(shots, probs)
        allocation = list(zip(nonzero.tolist(), counts.tolist()))
        scales = {
            int(gid): shots * p for gid, p in zip(nonzero.tolist(), probs)
        }
    for gid, s in allocation:
        if s == 0:
            continue
        successes = rng.binomial(s, success_prob) if chain else s
        denom = scales[gid]
        if gid == len(weights):  # core term
            estimate += h.core_energy * successes / denom
            continue
        if successes == 0:
            continue
        probs_all, values_all = [], []
        for (ka, kb), block in state.items():
            u, vals = _df_group_observable(df, gid, n, ka, kb)
            rotated = _rotate_block(block, u, n, ka, kb)
            probs_all.append(np.abs(rotated.reshape(-1)) ** 2)
            values_all.append(vals.reshape(-1))
        probs = np.concatenate(probs_all)
        values = np.concatenate(values_all)
        probs = probs / probs.sum()
        counts = rng.multinomial(successes, probs)
        estimate += (counts @ values) / denom
    return float(estimate)


def energy_sample(
    params,
    basis: FockBasis,
    df: DoubleFactorization,
    h: MolecularHamiltonian,
    shots: int = 0,
    seed: int = 0,
) -> tuple[float, float]:
    """Sampled energy of the prepared state; shots == 0 is the exact
    (infinite-shot) path.  Returns (estimate, variance bound Lambda^2/S)."""
    psi = ansatz.prepare_state(params, basis)
    if shots == 0:
        return fock.energy_expectation(h, psi), 0.0
    rng = np.random.default_rng(seed)
    state = _as_multisector(psi)
    est = sample_energy_of_state(state, basis.n_orbitals, df, h, shots, rng)
    return est, df.lambda_norm**2 / shots


# --- shift rules ----------------------------------------------------------------

def _energy_of_angles(angles: AngleVector, basis: FockBasis, h: MolecularHamiltonian,
                      alphas: np.ndarray) -> float:
    psi = ansatz.prepare_from_angles(angles, basis, alphas=alphas)
    return fock.energy_expectation(h, psi)


def shift_rule_gradient(
    angles: AngleVector,
    gate_index: int,
    basis: FockBasis,
    h: MolecularHamiltonian,
    df: DoubleFactorization | None = None,
    shots: int | None = None,
    seed: int = 0,
    order: int = 1,
) -> float:
    """dE/d alpha_g (or d^2E/d alpha_g^2 for order == 2) by shift rules.

    Exact mode (shots None) evaluates the shifted energies exactly;
    sampled mode draws them with a Lagrange-allocated budget, giving
    variance <= ||y||_1^2 Lambda^2 / S for the first derivative.
    """
    rule = SHIFT_RULE
    if order == 1:
        combos = list(zip(rule.y, rule.delta))
    elif order == 2:
        combos = [
            (y1 * y2, d1 + d2)
            for y1, d1 in zip(rule.y, rule.delta)
            for y2, d2 in zip(rule.y, rule.delta)
        ]
    else:
        raise ValueError("order must be 1 or 2")
    if shots is None:
        total = 0.0
        for w, d in combos:
            alphas = angles.alphas.copy()
            alphas[gate_index] += d
            total += w * _energy_of_angles(angles, basis, h, alphas)
        return total
    if df is None:
        raise ValueError("sampled mode requires the double factorization")
    rng = np.random.default_rng(seed)
    budget = allocate_shots([abs(w) for w, _ in combos], shots)
    total = 0.0
    for (k, s), (w, d) in zip(budget.allocation, combos):
        if s == 0 or w == 0.0:
            continue
        alphas = angles.alphas.copy()
        alphas[gate_index] += d
        psi = ansatz.prepare_from_angles(angles, basis, alphas=alphas)
        est = sample_energy_of_state(
            _as_multisector(psi), basis.n_orbitals, df, h, s, rng
        )
        total += w * est
    return float(total)


def overlap_hessian_shiftrule(
    angles: AngleVector,
    gate_g: int,
    gate_h: int,
    basis: FockBasis,
) -> float:
    """S_gh from second-derivative shift rules on the echo probability.

    P(delta) = |<Psi(alpha)|Psi(alpha+delta)>|^2 is the probability that
    the echo circuit collapses back onto the reference determinant, and
    S_gh = (1/2) d^2 [1 - P] / d delta_g d delta_h at delta = 0.
    """
    rule = SHIFT_RULE
    psi0 = ansatz.prepare_from_angles(angles, basis)

    def probability(shift_g, shift_h):
        alphas = angles.alphas.copy()
        alphas[gate_g] += shift_g
        alphas[gate_h] += shift_h
        psi = ansatz.prepare_from_angles(angles, basis, alphas=alphas)
        return abs(psi0.dot(psi)) ** 2

    total = 0.0
    for y1, d1 in zip(rule.y, rule.delta):
        for y2, d2 in zip(rule.y, rule.delta):
            if gate_g == gate_h:
                p = probability(d1 + d2, 0.0)
            else:
                p = probability(d1, d2)
            total += y1 * y2 * p
    return -0.5 * total


# --- channel-based matrix elements ------------------------------------------------

def _phi_state(angles: AngleVector, basis: FockBasis, upto: int) -> dict:
    """|Phi_g> = gates[0..upto] applied to the reference (multi-sector form)."""
    psi = fock.hartree_fock_state(basis)
    state = _as_multisector(psi)
    return apply_gates_multisector(state, basis.n_orbitals, angles, 0, upto + 1)


def state_overlap_with_derivative(
    angles: AngleVector, gate_index: int, basis: FockBasis,
    shots: int | None = None, rng=None,
) -> complex:
    """<Psi|Psi^g> = i <Phi_g|B_g|Phi_g>, exact or sampled Pauli-wise."""
    n = basis.n_orbitals
    state = _phi_state(angles, basis, gate_index)
    terms = angles.gates[gate_index].pauli_terms(n)
    if shots is None:
        val = sum(
            coeff * (1.0 if not pauli else pauli_expectation(state, n, pauli))
            for coeff, pauli in terms
        )
        return 1j * val
    weights = [abs(c) if pauli else 0.0 for c, pauli in terms]
    exact_part = sum(c for c, pauli in terms if not pauli)
    budget = allocate_shots(weights, shots)
    val = exact_part
    for (k, s), (coeff, pauli) in zip(budget.allocation, terms):
        if not pauli or s == 0:
            continue
        p_plus = 0.25 * _norm2(_add(state, apply_pauli(state, n, pauli)))
        p_plus = min(max(p_plus, 0.0), 1.0)
        plus = rng.binomial(s, p_plus)
        val += coeff * (2.0 * plus / s - 1.0)
    return 1j * val


def _d_branch_stack(base: dict, n: int, pauli) -> dict:
    """Stack of the four channel branches of one Pauli insertion."""
    sigma = apply_pauli(base, n, pauli)
    return _stack([apply_channel(base, n, pauli, d, sigma) for d in range(4)])


def derivative_cross_overlap(
    angles: AngleVector,
    gate_g: int,
    gate_h: int,
    basis: FockBasis,
    shots: int | None = None,
    rng=None,
) -> complex:
    """<Psi^h|Psi^g> by the channel expansion (gate_h >= gate_g)."""
    n = basis.n_orbitals
    channels = CHANNELS
    base = _phi_state(angles, basis, gate_g)
    terms_g = angles.gates[gate_g].pauli_terms(n)
    terms_h = angles.gates[gate_h].pauli_terms(n)

    if shots is None:
        total = 0.0 + 0.0j
        for bl, pauli_l in terms_g:
            stack = _d_branch_stack(base, n, pauli_l)
            apply_gates_multisector(stack, n, angles, gate_g + 1, gate_h + 1)
            for bm, pauli_m in terms_h:
                if not pauli_m:
                    vals = _col_norms2(stack, 4)
                else:
                    vals = np.real(_col_inner(stack, apply_pauli(stack, n, pauli_m), 4))
                total += bl * bm * np.dot(np.asarray(channels.l_coeffs), vals)
        return total

    flat, weights = [], []
    for bl, pauli_l in terms_g:
        for d in range(4):
            for bm, pauli_m in terms_h:
                w = abs(bl) * abs(bm) * abs(channels.l_coeffs[d])
                flat.append((bl, pauli_l, d, bm, pauli_m))
                weights.append(w)
    budget = allocate_shots(weights, shots)
    total = 0.0 + 0.0j
    for (k, s), (bl, pauli_l, d, bm, pauli_m) in zip(budget.allocation, flat):
        if s == 0:
            continue
        coeff = bl * bm * channels.l_coeffs[d]
        branch = apply_channel(base, n, pauli_l, d)
        p_branch = _norm2(branch)
        if p_branch <= 1e-300:
            continue
        branch = _scaled(branch, 1.0 / sqrt(p_branch))
        apply_gates_multisector(branch, n, angles, gate_g + 1, gate_h + 1)
        success = p_branch if d in (0, 2) else 1.0
        n_success = rng.binomial(s, success) if success < 1.0 else s
        if n_success == 0:
            continue
        if not pauli_m:
            mean = n_success / s
        else:
            sig = apply_pauli(branch, n, pauli_m)
            p_plus = 0.25 * _norm2(_add(branch, sig))
            p_plus = min(max(p_plus, 0.0), 1.0)
            plus = rng.binomial(n_success, p_plus)
            mean = (2.0 * plus - n_success) / s
        total += coeff * mean
    return total


def overlap_element_channels(
    angles: AngleVector,
    gate_g: int,
    gate_h: int,
    basis: FockBasis,
    shots: int | None = None,
    seed: int = 0,
) -> tuple[complex, float]:
    """(<Psi^h|Psi^g>, S_gh) via the channel protocol (gate_h >= gate_g).

    S_gh subtracts the single-derivative overlaps <Psi|Psi^g> and
    <Psi|Psi^h>, measured the same way; in sampled mode the shot budget
    is split evenly over the required quantities.
    """
    if gate_h < gate_g:
        raise ValueError("gate_h must be >= gate_g")
    rng = np.random.default_rng(seed)
    sub = None if shots is None else max(shots // 3, 1)
    cross = derivative_cross_overlap(angles, gate_g, gate_h, basis, sub, rng)
    o_g = state_overlap_with_derivative(angles, gate_g, basis, sub, rng)
    if gate_h == gate_g:
        o_h = o_g
    else:
        o_h = state_overlap_with_derivative(angles, gate_h, basis, sub, rng)
    s_el = float(np.real(np.conj(cross)) - np.real(np.conj(o_g) * o_h))
    return cross, s_el


def hamiltonian_element_channels(
    angles: AngleVector,
    gate_g: int,
    gate_h: int,
    basis: FockBasis,
    h: MolecularHamiltonian,
    df: DoubleFactorization | None = None,
    shots: int | None = None,
    seed: int = 0,
) -> complex:
    """<Psi^h|H|Psi^g> by double channel insertion (gate_h >= gate_g).

    The generator Pauli of gate g left-multiplies the state (weights L),
    the generator Pauli of gate h right-multiplies it (weights R); the
    Hamiltonian is measured through the double-factorized groups.
    """
    if gate_h < gate_g:
        raise ValueError("gate_h must be >= gate_g")
    n = basis.n_orbitals
    channels = CHANNELS
    base = _phi_state(angles, basis, gate_g)
    terms_g = angles.gates[gate_g].pauli_terms(n)
    terms_h = angles.gates[gate_h].pauli_terms(n)
    n_gates_total = angles.n_gates
    lr = np.array(
        [[ld * rf for rf in channels.r_coeffs] for ld in channels.l_coeffs]
    )  # (d, f)

    if shots is None:
        total = 0.0 + 0.0j
        for bl, pauli_l in terms_g:
            stack1 = _d_branch_stack(base, n, pauli_l)  # leading axis d = 0..3
            apply_gates_multisector(stack1, n, angles, gate_g + 1, gate_h + 1)
            for bm, pauli_m in terms_h:
                sigma1 = apply_pauli(stack1, n, pauli_m)
                branches = []
                for f in range(4):
                    fx, fy = _CHANNEL_COMBOS[f]
                    branches.append(_add(stack1, sigma1, fx, fy))
                # merge (d, f) into one 16-column stack: index d*4 + f
                merged = _stack(
                    [
                        {key: blk[d] for key, blk in branches[f].items()}
                        for d in range(4)
                        for f in range(4)
                    ]
                )
                apply_gates_multisector(merged, n, angles, gate_h + 1, n_gates_total)
                vals = _sector_energy_cols(merged, n, h, 16).reshape(4, 4)
                total += bl * bm * np.sum(lr * vals)
        return total

    if df is None:
        raise ValueError("sampled mode requires the double factorization")
    rng = np.random.default_rng(seed)
    flat, weights = [], []
    for bl, pauli_l in terms_g:
        for d in range(4):
            for bm, pauli_m in terms_h:
                for f in range(4):
                    flat.append((bl, pauli_l, d, bm, pauli_m, f))
                    weights.append(
                        abs(bl) * abs(bm)
                        * abs(channels.l_coeffs[d]) * abs(channels.r_coeffs[f])
                    )
    budget = allocate_shots(weights, shots)
    total = 0.0 + 0.0j
    for (k, s), (bl, pauli_l, d, bm, pauli_m, f) in zip(budget.allocation, flat):
        if s == 0:
            continue
        coeff = bl * bm * channels.l_coeffs[d] * channels.r_coeffs[f]
        branch1 = apply_channel(base, n, pauli_l, d)
        p1 = _norm2(branch1)
        if p1 <= 1e-300:
            continue
        branch1 = _scaled(branch1, 1.0 / sqrt(p1))
        apply_gates_multisector(branch1, n, angles, gate_g + 1, gate_h + 1)
        branch2 = apply_channel(branch1, n, pauli_m, f)
        p2 = _norm2(branch2)
        if p2 <= 1e-300:
            continue
        branch2 = _scaled(branch2, 1.0 / sqrt(p2))
        apply_gates_multisector(branch2, n, angles, gate_h + 1, n_gates_total)
        est = sample_energy_of_state(
            branch2, n, df, h, s, rng, success_prob=p1 * p2
        )
        total += coeff * est
    return total


# --- channel identity verification -------------------------------------------------

_PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli_matrix(label: str) -> np.ndarray:
    mat = np.array([[1.0]], dtype=complex)
    for ch in label:
        mat = np.kron(mat, _PAULI_1Q[ch])
    return mat


def verify_channel_identity(sigma_label: str, rho: np.ndarray) -> float:
    """Max deviation of the left/right multiplication channel identities.

    Checks sum_d L_d G_{sigma,d}[rho] == sigma rho and
    sum_d R_d G_{sigma,d}[rho] == rho sigma elementwise.
    """
    sigma = pauli_matrix(sigma_label)
    dim = sigma.shape[0]
    if rho.shape != (dim, dim):
        raise ValueError("density matrix dimension does not match the Pauli label")
    eye = np.eye(dim)
    p_plus = 0.5 * (eye + sigma)
    p_minus = 0.5 * (eye - sigma)
    r_minus = (eye - 1j * sigma) / sqrt(2)  # exp(-i pi/4 sigma)
    r_plus = (eye + 1j * sigma) / sqrt(2)
    g = [
        p_plus @ rho @ p_plus,
        r_minus @ rho @ r_minus.conj().T,
        p_minus @ rho @ p_minus,
        r_plus @ rho @ r_plus.conj().T,
    ]
    left = sum(c * gd for c, gd in zip(CHANNELS.l_coeffs, g))
    right = sum(c * gd for c, gd in zip(CHANNELS.r_coeffs, g))
    dev_left = np.abs(left - sigma @ rho).max()
    dev_right = np.abs(right - rho @ sigma).max()
    return float(max(dev_left, dev_right))


def random_density_matrix(dim: int, rng) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


# --- full-matrix conveniences -------------------------------------------------------

def overlap_matrix_channels(angles: AngleVector, basis: FockBasis) -> np.ndarray:
    """All S_gh elements by the exact channel protocol."""
    n_g = angles.n_gates
    singles = np.array([
        state_overlap_with_derivative(angles, g, basis) for g in range(n_g)
    ])
    out = np.zeros((n_g, n_g))
    for g in range(n_g):
        for hh in range(g, n_g):
            cross = derivative_cross_overlap(angles, g, hh, basis)
            val = float(np.real(np.conj(cross)) - np.real(np.conj(singles[g]) * singles[hh]))
            out[g, hh] = val
            out[hh, g] = val
    return out


def hamiltonian_matrix_channels(
    angles: AngleVector, basis: FockBasis, h: MolecularHamiltonian
) -> np.ndarray:
    """All <Psi^h|H|Psi^g> elements by the exact channel protocol."""
    n_g = angles.n_gates
    out = np.zeros((n_g, n_g), dtype=complex)
    for g in range(n_g):
        for hh in range(g, n_g):
            val = hamiltonian_element_channels(angles, g, hh, basis, h)
            out[g, hh] = np.conj(val)
            out[hh, g] = val
    return out
