import numpy as np
import pytest

from lucjopt import fock
from lucjopt.fock import FockBasis, FockVector
from lucjopt.hamiltonian import MolecularHamiltonian

from conftest import brute_force_hamiltonian, random_hamiltonian


def test_hartree_fock_is_first_basis_vector():
    basis = FockBasis(2, 1, 1)
    hf = fock.hartree_fock_state(basis)
    expected = np.zeros(4)
    expected[0] = 1.0
    np.testing.assert_array_equal(hf.amps, expected)
    assert hf.norm() == 1.0


def test_hartree_fock_number_expectation():
    basis = FockBasis(5, 3, 2)
    hf = fock.hartree_fock_state(basis)
    assert fock.expectation("number", hf) == 5.0


def test_sign_convention_hand_computed():
    # alpha sector of 2 orbitals, 1 electron: strings [01, 10]
    # E_10 = a+_1 a_0 maps |01> -> +|10>; E_01 maps |10> -> +|01>
    sec = fock.sector(2, 1)
    c = np.zeros((2, 2))
    c[1, 0] = 1.0
    lifted = sec.lift(c)
    np.testing.assert_array_equal(lifted, [[0.0, 0.0], [1.0, 0.0]])
    # 3 orbitals, 2 electrons: a+_2 a_0 on |011> crosses occupied orbital 1
    sec3 = fock.sector(3, 2)
    c3 = np.zeros((3, 3))
    c3[2, 0] = 1.0
    lifted3 = sec3.lift(c3)
    i_src = sec3.index[0b011]
    i_tgt = sec3.index[0b110]
    assert lifted3[i_tgt, i_src] == -1.0


def test_apply_hamiltonian_diagonal_one_body():
    h1 = np.diag([-2.0, -1.0, 0.5])
    h = MolecularHamiltonian(3, 2, 1, 0.25, h1, np.zeros((3,) * 4))
    basis = FockBasis.for_hamiltonian(h)
    for k in range(basis.dim):
        e_k = np.zeros(basis.dim)
        e_k[k] = 1.0
        v = FockVector(basis, e_k)
        hv = fock.apply_hamiltonian(h, v)
        ia, ib = divmod(k, basis.dim_beta)
        sa = int(basis.alpha_strings[ia])
        sb = int(basis.beta_strings[ib])
        occ_sum = sum(h1[p, p] for p in range(3) if sa >> p & 1)
        occ_sum += sum(h1[p, p] for p in range(3) if sb >> p & 1)
        np.testing.assert_allclose(hv.amps, (0.25 + occ_sum) * e_k, atol=1e-14)


def test_apply_hamiltonian_hermitian(small_h, small_basis, rng):
    u = FockVector(small_basis, rng.normal(size=small_basis.dim) + 1j * rng.normal(size=small_basis.dim))
    v = FockVector(small_basis, rng.normal(size=small_basis.dim) + 1j * rng.normal(size=small_basis.dim))
    lhs = u.dot(fock.apply_hamiltonian(small_h, v))
    rhs = np.conj(v.dot(fock.apply_hamiltonian(small_h, u)))
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_dense_matches_brute_force(rng):
    h = random_hamiltonian(3, 2, 1, rng, core=0.3)
    basis = FockBasis.for_hamiltonian(h)
    dense = fock.hamiltonian_action(h, basis).dense()
    reference = brute_force_hamiltonian(h, basis)
    np.testing.assert_allclose(dense, reference, atol=1e-12)


def test_fci_matches_dense_diagonalization_random_4orb(rng):
    h = random_hamiltonian(4, 2, 2, rng)
    basis = FockBasis.for_hamiltonian(h)
    reference = brute_force_hamiltonian(h, basis)
    ref_vals = np.linalg.eigvalsh(reference)
    pairs = fock.fci_solve(h, basis, n_states=3)
    for k, (energy, _) in enumerate(pairs):
        assert energy == pytest.approx(ref_vals[k], abs=1e-10)


def test_fci_solve_diagonal_case():
    h1 = np.diag([-3.0, -1.0, 2.0])
    h = MolecularHamiltonian(3, 1, 2, -0.5, h1, np.zeros((3,) * 4))
    basis = FockBasis.for_hamiltonian(h)
    (e0, v0), = fock.fci_solve(h, basis, 1)
    assert e0 == pytest.approx(-0.5 + (-3.0) + (-3.0 - 1.0))


def test_fci_residual(small_h, small_basis):
    pairs = fock.fci_solve(small_h, small_basis, n_states=2)
    for energy, vec in pairs:
        hv = fock.apply_hamiltonian(small_h, vec)
        residual = np.linalg.norm(hv.amps - energy * vec.amps)
        assert residual <= 1e-9


def test_fci_iterative_fallback_matches_dense(small_h, small_basis):
    dense = fock.fci_solve(small_h, small_basis, n_states=1)
    iterative = fock.fci_solve(small_h, small_basis, n_states=1, dense_limit=1)
    assert iterative[0][0] == pytest.approx(dense[0][0], abs=1e-9)


def test_orbital_rotation_identity(small_basis, rng):
    v = FockVector(small_basis, rng.normal(size=small_basis.dim) + 0j)
    out = fock.apply_orbital_rotation(np.zeros((4, 4)), v)
    np.testing.assert_allclose(out.amps, v.amps, atol=1e-14)


def test_orbital_rotation_unitary_and_inverse(small_basis, rng):
    k = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    kappa = k - k.conj().T
    v = FockVector(small_basis, rng.normal(size=small_basis.dim) + 1j * rng.normal(size=small_basis.dim))
    rotated = fock.apply_orbital_rotation(kappa, v)
    assert rotated.norm() == pytest.approx(v.norm(), abs=1e-12)
    back = fock.apply_orbital_rotation(-kappa, rotated)
    np.testing.assert_allclose(back.amps, v.amps, atol=1e-12)


def test_orbital_rotation_rejects_non_antihermitian(small_basis):
    bad = np.eye(4)
    v = fock.hartree_fock_state(small_basis)
    with pytest.raises(ValueError, match="antihermitian"):
        fock.apply_orbital_rotation(bad, v)


def test_single_excitation_two_by_two_rotation():
    # one alpha electron in two orbitals: amplitudes follow the 2x2 cos/sin block
    basis = FockBasis(2, 1, 0)
    hf = fock.hartree_fock_state(basis)
    t = 0.3
    kappa = np.array([[0.0, -t], [t, 0.0]])
    rotated = fock.apply_orbital_rotation(kappa, hf)
    np.testing.assert_allclose(rotated.amps, [np.cos(t), np.sin(t)], atol=1e-12)


def test_diagonal_coulomb_identity_and_modulus(small_basis, rng):
    v = FockVector(small_basis, rng.normal(size=small_basis.dim) + 1j * rng.normal(size=small_basis.dim))
    out = fock.apply_diagonal_coulomb(np.zeros((4, 4)), np.zeros((4, 4)), v)
    np.testing.assert_array_equal(out.amps, v.amps)
    j_same = rng.normal(size=(4, 4))
    j_same = 0.5 * (j_same + j_same.T)
    j_opp = np.diag(rng.normal(size=4))
    out = fock.apply_diagonal_coulomb(j_same, j_opp, v)
    np.testing.assert_allclose(np.abs(out.amps), np.abs(v.amps), atol=1e-14)


def test_diagonal_coulomb_pi_phase_flip():
    basis = FockBasis(2, 1, 1)
    amps = np.zeros(basis.dim, dtype=complex)
    amps[basis.index_of(0b01, 0b01)] = 1.0  # both spins on orbital 0
    v = FockVector(basis, amps)
    j_opp = np.zeros((2, 2))
    j_opp[0, 0] = np.pi
    out = fock.apply_diagonal_coulomb(np.zeros((2, 2)), j_opp, v)
    np.testing.assert_allclose(out.amps, -amps, atol=1e-14)


def test_sector_invariants_under_layer_operations(small_h, small_basis, rng):
    v = FockVector(small_basis, rng.normal(size=small_basis.dim) + 1j * rng.normal(size=small_basis.dim))
    v.amps /= v.norm()
    k = rng.normal(size=(4, 4))
    kappa = k - k.T
    rotated = fock.apply_orbital_rotation(kappa, v)
    assert fock.expectation("number", rotated) == 2.0
    assert rotated.norm() == pytest.approx(1.0, abs=1e-12)
    phased = fock.apply_diagonal_coulomb(np.eye(4) * 0.3, np.eye(4) * 0.2, rotated)
    assert phased.norm() == pytest.approx(1.0, abs=1e-12)


def test_s_plus_adjointness(rng):
    basis = FockBasis(4, 2, 2)
    raised = FockBasis(4, 3, 1)
    u = FockVector(basis, rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim))
    w = FockVector(raised, rng.normal(size=raised.dim) + 1j * rng.normal(size=raised.dim))
    lhs = w.dot(fock.apply_s_plus(u))
    rhs = fock._apply_s_minus(w, basis).dot(u)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_s_squared_closed_shell_reference():
    basis = FockBasis(4, 2, 2)
    hf = fock.hartree_fock_state(basis)
    assert fock.expectation("s_squared", hf) == pytest.approx(0.0, abs=1e-13)


def test_s_squared_triplet_reference():
    basis = FockBasis(2, 2, 0)
    hf = fock.hartree_fock_state(basis)  # two parallel spins: S=1
    assert fock.expectation("s_squared", hf) == pytest.approx(2.0, abs=1e-12)


def test_s_squared_open_shell_determinant():
    # one up, one down in different orbitals: <S^2> = 1 (singlet/triplet mix)
    basis = FockBasis(2, 1, 1)
    amps = np.zeros(basis.dim, dtype=complex)
    amps[basis.index_of(0b01, 0b10)] = 1.0
    assert fock.expectation("s_squared", FockVector(basis, amps)) == pytest.approx(1.0, abs=1e-12)


def test_parity_expectations(small_basis):
    hf = fock.hartree_fock_state(small_basis)
    assert fock.expectation("parity_up", hf) == (-1) ** small_basis.n_alpha
    assert fock.expectation("parity_down", hf) == (-1) ** small_basis.n_beta


def test_binary_projector_parity_sector():
    basis = FockBasis(3, 2, 1)
    hf = fock.hartree_fock_state(basis)
    gen = (0b111, 0b111)  # product of all Z's on both chains: (-1)^(na+nb)
    val = fock.expectation("binary_projector", hf, generators=[gen], signs=[-1])
    assert val == pytest.approx(1.0)  # na+nb=3 odd -> eigenvalue -1 sector
    val = fock.expectation("binary_projector", hf, generators=[gen], signs=[+1])
    assert val == pytest.approx(0.0)


def test_fci_ground_state_spin_pure(small_h, small_basis):
    (e0, v0), = fock.fci_solve(small_h, small_basis, 1)
    s2 = fock.expectation("s_squared", v0)
    assert s2 == pytest.approx(0.0, abs=1e-8) or s2 == pytest.approx(2.0, abs=1e-8)
