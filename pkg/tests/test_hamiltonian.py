import numpy as np
import pytest

from lucjopt.hamiltonian import (
    DoubleFactorization,
    FcidumpError,
    MolecularHamiltonian,
    double_factorize,
    lambda_of,
    load_fcidump,
    reconstruct_eri,
    reconstruct_one_body,
    validate_eri_symmetry,
    write_fcidump,
)
from lucjopt import fock

from conftest import random_hamiltonian


def h2_like():
    h1 = np.diag([-1.25, -0.47])
    eri = np.zeros((2, 2, 2, 2))
    eri[0, 0, 0, 0] = 0.675
    return MolecularHamiltonian(
        n_orbitals=2, n_alpha=1, n_beta=1, core_energy=0.71, h1=h1, eri=eri
    )


def test_fcidump_round_trip(tmp_path):
    h = h2_like()
    path = tmp_path / "h2.fcidump"
    write_fcidump(h, path)
    back = load_fcidump(path)
    assert back.n_orbitals == 2
    assert back.n_alpha == back.n_beta == 1
    np.testing.assert_array_equal(back.h1, h.h1)
    np.testing.assert_array_equal(back.eri, h.eri)
    assert back.core_energy == h.core_energy


def test_fcidump_round_trip_random(tmp_path, rng):
    h = random_hamiltonian(4, 2, 2, rng, core=1.5)
    path = tmp_path / "r.fcidump"
    write_fcidump(h, path)
    back = load_fcidump(path)
    np.testing.assert_allclose(back.h1, h.h1, atol=1e-14)
    np.testing.assert_allclose(back.eri, h.eri, atol=1e-14)
    validate_eri_symmetry(back.eri)


def test_fcidump_out_of_range_index(tmp_path):
    path = tmp_path / "bad.fcidump"
    path.write_text(
        "&FCI NORB=8,NELEC=10,MS2=0,\n&END\n"
        " 1.0 9 1 1 1\n"
    )
    with pytest.raises(FcidumpError, match="out of range"):
        load_fcidump(path)


def test_fcidump_malformed_header(tmp_path):
    path = tmp_path / "bad.fcidump"
    path.write_text("NORB=2\n 1.0 1 1 0 0\n")
    with pytest.raises(FcidumpError, match="header"):
        load_fcidump(path)


def test_fcidump_malformed_line(tmp_path):
    path = tmp_path / "bad.fcidump"
    path.write_text("&FCI NORB=2,NELEC=2,MS2=0,\n&END\n 1.0 1 1\n")
    with pytest.raises(FcidumpError, match="malformed"):
        load_fcidump(path)


def test_double_factorize_one_body_limit(rng):
    h1 = rng.normal(size=(3, 3))
    h1 = 0.5 * (h1 + h1.T)
    h = MolecularHamiltonian(3, 1, 1, 0.0, h1, np.zeros((3, 3, 3, 3)))
    df = double_factorize(h, trunc_tol=1e-12)
    assert df.n_factors == 0
    assert df.lambda_norm == pytest.approx(2 * np.abs(df.eta).sum())


def test_double_factorize_reconstruction(small_h):
    df = double_factorize(small_h, trunc_tol=0.0)
    np.testing.assert_allclose(
        reconstruct_eri(df, small_h.n_orbitals), small_h.eri, atol=1e-10
    )
    np.testing.assert_allclose(
        reconstruct_one_body(df), small_h.one_body_corrected, atol=1e-12
    )


def test_double_factorize_rank_one_recovery():
    xi = np.array([1.0, 0.5])
    eri = np.einsum("p,q,r,s->pqrs", xi, xi, xi, xi)
    h = MolecularHamiltonian(2, 1, 1, 0.0, np.zeros((2, 2)), eri)
    df = double_factorize(h, trunc_tol=1e-12)
    assert df.n_factors == 1
    f = df.factors[0]
    x = f.u.T @ np.diag(f.xi) @ f.u
    np.testing.assert_allclose(x, np.outer(xi, xi), atol=1e-12)
    lead = np.argmax(np.abs(f.xi))
    direction = f.u[lead]
    direction = direction / direction[np.argmax(np.abs(direction))] * xi[0]
    np.testing.assert_allclose(direction, xi / np.linalg.norm(xi) * direction[0] / (xi[0] / np.linalg.norm(xi)), atol=1e-12)
    # recovered factor direction is proportional to xi up to sign
    ratio = f.u[lead] / (xi / np.linalg.norm(xi))
    assert np.allclose(ratio, ratio[0], atol=1e-12)


def test_lambda_formula_examples():
    df = DoubleFactorization(
        eta=np.array([1.0, -1.0]), u0=np.eye(2), factors=(), lambda_norm=4.0,
        trunc_tol=0.0,
    )
    assert lambda_of(df) == pytest.approx(4.0)
    from lucjopt.hamiltonian import DfFactor

    df2 = DoubleFactorization(
        eta=np.zeros(2), u0=np.eye(2),
        factors=(DfFactor(xi=np.array([1.0, 1.0]), u=np.eye(2), sign=1.0),),
        lambda_norm=8.0, trunc_tol=0.0,
    )
    assert lambda_of(df2) == pytest.approx(8.0)


def test_lambda_monotone_in_truncation(small_h):
    tols = [0.0, 1e-3, 1e-2, 1e-1, 1.0]
    lambdas = [double_factorize(small_h, t).lambda_norm for t in tols]
    assert all(a >= b - 1e-12 for a, b in zip(lambdas, lambdas[1:]))


def test_factorized_action_matches_raw(small_h, small_basis, rng):
    df = double_factorize(small_h, trunc_tol=0.0)
    for _ in range(20):
        amps = rng.normal(size=small_basis.dim) + 1j * rng.normal(size=small_basis.dim)
        v = fock.FockVector(small_basis, amps)
        raw = fock.apply_hamiltonian(small_h, v)
        fac = fock.apply_double_factorized(df, small_h, v)
        np.testing.assert_allclose(
            fac.amps, raw.amps, atol=1e-9 * np.linalg.norm(raw.amps)
        )


def test_eri_symmetry_preserved_through_load_and_factorize(tmp_path, rng):
    h = random_hamiltonian(3, 1, 1, rng)
    path = tmp_path / "s.fcidump"
    write_fcidump(h, path)
    back = load_fcidump(path)
    validate_eri_symmetry(back.eri, tol=1e-10)
    df = double_factorize(back, trunc_tol=0.0)
    validate_eri_symmetry(reconstruct_eri(df, 3), tol=1e-10)
