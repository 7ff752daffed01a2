import numpy as np
import pytest
import scipy.linalg

from lucjopt import ansatz, derivatives, fock
from lucjopt.ansatz import (
    Connectivity,
    LucjParams,
    angles_of,
    default_connectivity,
    givens_plan,
    jacobian_alpha_theta,
    n_gates,
    n_theta,
    plan_reconstruct,
    prepare_from_angles,
    prepare_state,
    random_perturbation,
)
from lucjopt.fock import FockBasis

from conftest import random_hamiltonian


def test_default_connectivity_square():
    conn = default_connectivity(8)
    assert len(conn.s_sites) == 8
    assert conn.s_prime_pairs == tuple((p, p + 1) for p in range(7))


def test_default_connectivity_two_orbitals():
    conn = default_connectivity(2)
    assert conn.s_prime_pairs == ((0, 1),)


def test_connectivity_rejects_bad_pairs():
    with pytest.raises(ValueError, match="not allowed"):
        Connectivity((0, 1), ((1, 1),))
    with pytest.raises(ValueError, match="duplicate"):
        Connectivity((0, 1), ((0, 1), (1, 0)))


def test_unsupported_topology():
    with pytest.raises(ValueError, match="topology"):
        default_connectivity(4, "heavy_hex")


@pytest.mark.parametrize("n", [2, 3, 5, 8, 10])
@pytest.mark.parametrize("n_layers", [1, 2, 4])
def test_parameter_and_gate_count_formulas(n, n_layers):
    conn = default_connectivity(n)
    params = LucjParams.zero(n, n_layers, conn)
    s, sp = len(conn.s_sites), len(conn.s_prime_pairs)
    assert params.flatten().size == (n_layers + 1) * n**2 + n_layers * (s + sp)
    assert params.flatten().size == n_theta(n, n_layers, conn)
    av = angles_of(params)
    assert len(av.gates) == (n_layers + 1) * 2 * n**2 + n_layers * (s + 2 * sp)
    assert len(av.gates) == n_gates(n, n_layers, conn)


def test_flatten_round_trip(rng):
    conn = default_connectivity(5)
    theta = rng.normal(size=n_theta(5, 3, conn))
    params = LucjParams.unflatten(theta, 5, 3, conn)
    np.testing.assert_array_equal(params.flatten(), theta)


def test_json_round_trip(tmp_path, rng):
    conn = default_connectivity(3)
    params = random_perturbation(3, 2, conn, rng, scale=0.3)
    path = tmp_path / "params.json"
    params.save(path)
    back = LucjParams.load(path)
    np.testing.assert_array_equal(back.flatten(), params.flatten())
    assert back.connectivity == params.connectivity


def test_generator_is_antihermitian(rng):
    params = random_perturbation(4, 2, default_connectivity(4), rng, scale=0.7)
    for layer in range(3):
        k = params.kappa_generator(layer)
        np.testing.assert_allclose(k + k.conj().T, 0.0, atol=1e-14)


def test_givens_plan_reconstructs_random_unitaries(rng):
    for n in (2, 3, 5, 7):
        for _ in range(5):
            a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            u = scipy.linalg.expm(a - a.conj().T)
            rotations, phases = givens_plan(u)
            assert len(rotations) == n * (n - 1) // 2
            np.testing.assert_allclose(plan_reconstruct(rotations, phases), u, atol=1e-12)


def test_givens_plan_identity_gives_zero_angles():
    rotations, phases = givens_plan(np.eye(4))
    assert all(theta == 0.0 and phi == 0.0 for _, theta, phi in rotations)
    np.testing.assert_array_equal(phases, np.zeros(4))


def test_prepare_state_zero_params_is_reference():
    basis = FockBasis(4, 2, 2)
    params = LucjParams.zero(4, 2)
    state = prepare_state(params, basis)
    np.testing.assert_allclose(state.amps, fock.hartree_fock_state(basis).amps, atol=1e-14)


def test_prepare_state_normalized_random_draws(rng):
    basis = FockBasis(3, 2, 1)
    conn = default_connectivity(3)
    for _ in range(100):
        params = random_perturbation(3, 1, conn, rng, scale=1.0)
        assert prepare_state(params, basis).norm() == pytest.approx(1.0, abs=1e-12)


def test_angles_zero_params_all_zero():
    params = LucjParams.zero(4, 2)
    av = angles_of(params)
    np.testing.assert_array_equal(av.alphas, np.zeros(av.n_gates))


def test_angle_vector_length_n8_l2():
    conn = default_connectivity(8)
    av = angles_of(LucjParams.zero(8, 2, conn))
    assert av.n_gates == 3 * 128 + 2 * (8 + 2 * 7)


def test_prepare_state_equals_gate_list(rng):
    basis = FockBasis(4, 2, 1)
    conn = default_connectivity(4)
    for _ in range(5):
        params = random_perturbation(4, 2, conn, rng, scale=0.8)
        v1 = prepare_state(params, basis)
        v2 = prepare_from_angles(angles_of(params), basis)
        np.testing.assert_allclose(v1.amps, v2.amps, atol=1e-12)


def test_generator_pauli_one_norms():
    params = random_perturbation(3, 1, default_connectivity(3), np.random.default_rng(0))
    av = angles_of(params)
    for gate in av.gates:
        coeffs = [c for c, _ in gate.pauli_terms(3)]
        assert sum(abs(c) for c in coeffs) == pytest.approx(1.0, abs=1e-15)


def test_spin_chain_angle_pairing():
    params = random_perturbation(4, 2, default_connectivity(4), np.random.default_rng(1), 0.5)
    av = angles_of(params)
    g = 0
    while g < av.n_gates:
        gate = av.gates[g]
        if gate.spin == "a":
            twin = av.gates[g + 1]
            assert twin.spin == "b"
            assert twin.kind == gate.kind
            assert twin.orbs == gate.orbs
            assert av.alphas[g + 1] == av.alphas[g]
            g += 2
        else:
            assert gate.spin == "ab"
            g += 1


def test_jacobian_j_sector_columns():
    n, n_layers = 4, 2
    conn = default_connectivity(n)
    params = random_perturbation(n, n_layers, conn, np.random.default_rng(2), 0.3)
    jac = jacobian_alpha_theta(params)
    s, sp = len(conn.s_sites), len(conn.s_prime_pairs)
    per_layer = n**2 + s + sp
    for mu in range(n_layers):
        base = mu * per_layer + n**2
        for k in range(s):  # on-site entries feed exactly one gate
            col = jac.matrix[:, base + k]
            assert np.linalg.norm(col) == pytest.approx(1.0, abs=1e-9)
            assert (np.abs(col) > 1e-12).sum() == 1
        for k in range(sp):  # same-spin entries feed two equal angles
            col = jac.matrix[:, base + s + k]
            assert np.linalg.norm(col) == pytest.approx(np.sqrt(2), abs=1e-9)
            assert (np.abs(col) > 1e-12).sum() == 2


def test_jacobian_chain_rule(small_h, small_basis, rng):
    params = random_perturbation(4, 1, default_connectivity(4), rng, scale=0.4)
    jac = jacobian_alpha_theta(params)
    assert not jac.flagged_columns.any()
    av = angles_of(params)
    g_alpha = derivatives.alpha_gradient(av, small_basis, small_h)
    g_theta = derivatives.gradient(
        derivatives.derivative_bundle(params, small_basis), small_h
    )
    np.testing.assert_allclose(jac.matrix.T @ g_alpha, g_theta, atol=1e-6)


def test_jacobian_zero_kappa_point():
    """At the identity the compiled-angle map is smooth only along the
    diagonal-phase coordinates; those columns match the analytic
    linearization of the exponential (d phase / d kappa2_pp = -/+2) and
    the off-diagonal rotation coordinates hit the polar branch point and
    are flagged."""
    n = 3
    conn = default_connectivity(n)
    params = LucjParams.zero(n, 1, conn)
    jac = jacobian_alpha_theta(params)
    av = angles_of(params)
    strict = np.tril_indices(n, k=-1)
    lower = np.tril_indices(n, k=0)
    ns = len(strict[0])
    diag_local = [ns + k for k in range(len(lower[0])) if lower[0][k] == lower[1][k]]
    offdiag_local = [k for k in range(n**2) if k not in diag_local]
    per_layer = n**2 + len(conn.s_sites) + len(conn.s_prime_pairs)
    for offset, expected_hits in ((0, 4), (per_layer, 2)):  # layer 0 / final
        for k in diag_local:
            idx = offset + k
            assert not jac.flagged_columns[idx]
            col = jac.matrix[:, idx]
            hits = np.flatnonzero(np.abs(col) > 1e-6)
            # layer-0 coordinates enter both exp(-K) and the merged exp(+K)
            assert len(hits) == expected_hits
            for gi in hits:
                assert av.gates[gi].kind == "p"
                assert abs(col[gi]) == pytest.approx(2.0, abs=1e-6)
    for k in offdiag_local:
        assert jac.flagged_columns[k]  # branch discontinuity at kappa = 0


def test_expressibility_two_orbital_reaches_fci(rng):
    from lucjopt import optimize

    h = random_hamiltonian(2, 1, 1, rng, core=0.1, scale=0.7)
    basis = FockBasis.for_hamiltonian(h)
    (e_fci, _), = fock.fci_solve(h, basis, 1)
    params0 = random_perturbation(2, 3, default_connectivity(2), rng, scale=0.01)
    best, _ = optimize.run_lm(params0, basis, h, optimize.LmConfig(max_iters=60))
    e = fock.energy_expectation(h, prepare_state(best, basis))
    assert e - e_fci <= 1e-9
