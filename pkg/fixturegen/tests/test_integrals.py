import numpy as np
import pytest

from fixturegen import basis, integrals, scf
from fixturegen.basis import Shell


def numeric_grid(extent=8.0, n=80):
    xs, ws = np.polynomial.legendre.leggauss(n)
    grid = extent * xs
    weights = extent * ws
    x, y, z = np.meshgrid(grid, grid, grid, indexing="ij")
    wx, wy, wz = np.meshgrid(weights, weights, weights, indexing="ij")
    return (x, y, z), wx * wy * wz


def primitive(center, l_vec, alpha):
    cx, cy, cz = center

    def f(x, y, z):
        poly = (x - cx) ** l_vec[0] * (y - cy) ** l_vec[1] * (z - cz) ** l_vec[2]
        return poly * np.exp(-alpha * ((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2))

    return f


@pytest.mark.parametrize("la,lb", [(0, 0), (0, 1), (1, 1)])
def test_overlap_against_quadrature(la, lb):
    rng = np.random.default_rng(3)
    (x, y, z), w = numeric_grid()
    sa = Shell((0.0, 0.1, -0.2), la, (0.9,), (1.0,))
    sb = Shell((0.3, -0.2, 0.8), lb, (1.7,), (1.0,))
    pair = integrals.ShellPair(sa, sb)
    block = integrals.overlap_block(pair)
    na = integrals._primitive_norm(np.array([0.9]), la)[0]
    nb = integrals._primitive_norm(np.array([1.7]), lb)[0]
    for ia, ca in enumerate(integrals._CART[la]):
        for ib, cb in enumerate(integrals._CART[lb]):
            fa = primitive(sa.center, ca, 0.9)
            fb = primitive(sb.center, cb, 1.7)
            numeric = np.sum(w * fa(x, y, z) * fb(x, y, z)) * na * nb
            assert block[ia, ib] == pytest.approx(numeric, abs=1e-9)


def test_kinetic_against_quadrature():
    (x, y, z), w = numeric_grid()
    sa = Shell((0.0, 0.0, 0.0), 1, (0.8,), (1.0,))
    sb = Shell((0.0, 0.0, 1.1), 1, (1.3,), (1.0,))
    pair = integrals.ShellPair(sa, sb)
    block = integrals.kinetic_block(pair)
    na = integrals._primitive_norm(np.array([0.8]), 1)[0]
    nb = integrals._primitive_norm(np.array([1.3]), 1)[0]
    # del^2 g for p_x at B: apply to x' exp(-b r'^2) analytically
    b = 1.3
    for ia, ca in enumerate(integrals._CART[1]):
        for ib, cb in enumerate(integrals._CART[1]):
            fa = primitive(sa.center, ca, 0.8)
            fb = primitive(sb.center, cb, b)
            r2 = x**2 + y**2 + (z - 1.1) ** 2
            lap = (4 * b**2 * r2 - 10 * b) * fb(x, y, z)
            numeric = -0.5 * np.sum(w * fa(x, y, z) * lap) * na * nb
            assert block[ia, ib] == pytest.approx(numeric, abs=1e-8)


def test_boys_values():
    # F_0(x) = sqrt(pi/(4x)) erf(sqrt(x)); spot values
    from scipy.special import erf

    for x in (1e-16, 1e-6, 0.1, 1.0, 7.5, 40.0):
        f = integrals.boys(4, np.array([x]))
        if x < 1e-12:
            assert f[0][0] == pytest.approx(1.0, abs=1e-10)
        else:
            ref = 0.5 * np.sqrt(np.pi / x) * erf(np.sqrt(x))
            assert f[0][0] == pytest.approx(ref, rel=1e-12)
    # downward consistency: F_{n-1} = (2x F_n + exp(-x))/(2n-1)
    x = np.array([2.3])
    f = integrals.boys(6, x)
    for n in range(1, 7):
        lhs = f[n - 1][0]
        rhs = (2 * x[0] * f[n][0] + np.exp(-x[0])) / (2 * n - 1)
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_nuclear_s_functions_closed_form():
    # <s_A|1/r_C|s_B> for single primitives has the standard Boys form
    a, b = 1.1, 0.7
    A = np.array([0.0, 0.0, 0.0])
    B = np.array([0.0, 0.0, 1.2])
    C = (0.2, -0.1, 0.5)
    sa = Shell(tuple(A), 0, (a,), (1.0,))
    sb = Shell(tuple(B), 0, (b,), (1.0,))
    pair = integrals.ShellPair(sa, sb)
    block = integrals.nuclear_block(pair, [(1.0, C)])
    p = a + b
    P = (a * A + b * B) / p
    k = np.exp(-a * b / p * np.sum((A - B) ** 2))
    t = p * np.sum((P - np.array(C)) ** 2)
    f0 = integrals.boys(0, np.array([t]))[0][0]
    na = integrals._primitive_norm(np.array([a]), 0)[0]
    nb = integrals._primitive_norm(np.array([b]), 0)[0]
    ref = -2.0 * np.pi / p * k * f0 * na * nb
    assert block[0, 0] == pytest.approx(ref, rel=1e-12)


def test_eri_s_functions_closed_form():
    # (s_A s_A | s_B s_B) single primitives: 2 pi^2.5/(p q sqrt(p+q)) F_0
    a, b = 0.9, 1.4
    A = (0.0, 0.0, 0.0)
    B = (0.0, 0.0, 1.3)
    sa = Shell(A, 0, (a,), (1.0,))
    sb = Shell(B, 0, (b,), (1.0,))
    bra = integrals.ShellPair(sa, sa)
    ket = integrals.ShellPair(sb, sb)
    val = integrals.eri_block(bra, ket)[0, 0]
    p, q = 2 * a, 2 * b
    rho = p * q / (p + q)
    t = rho * 1.3**2
    f0 = integrals.boys(0, np.array([t]))[0][0]
    na = integrals._primitive_norm(np.array([a]), 0)[0]
    nb = integrals._primitive_norm(np.array([b]), 0)[0]
    ref = 2 * np.pi**2.5 / (p * q * np.sqrt(p + q)) * f0 * na**2 * nb**2
    assert val == pytest.approx(ref, rel=1e-12)


def test_eri_permutational_symmetry():
    shells, _ = basis.diatomic("C", 1.3)
    bset = integrals.BasisSet(shells[:3])  # one atom: s, s, p
    eri = integrals.electron_repulsion(bset)
    for perm in [(1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)]:
        np.testing.assert_allclose(eri, eri.transpose(perm), atol=1e-13)


def test_hydrogen_atom_energy():
    """Unit-exponent hydrogen: exact Slater energy is -0.5; the projected
    6-Gaussian energy must sit just above it."""
    sh = [Shell((0.0, 0.0, 0.0), 0, basis.STO6G_1S_EXPONENTS, basis.STO6G_1S_COEFFS)]
    bset = integrals.BasisSet(sh)
    charges = [(1, (0.0, 0.0, 0.0))]
    s, t, v = integrals.one_electron_matrices(bset, charges)
    e = (t[0, 0] + v[0, 0]) / s[0, 0]
    assert -0.5 <= e <= -0.4997


def test_cross_overlap_consistency():
    shells_a, _ = basis.diatomic("N", 1.1)
    bset_a = integrals.BasisSet(shells_a)
    s_aa, _, _ = integrals.one_electron_matrices(bset_a, [])
    cross = integrals.cross_overlap(bset_a, bset_a)
    np.testing.assert_allclose(cross, s_aa, atol=1e-12)


def test_n2_rhf_reference_energy():
    """Ground self-consistent solution with the textbook orbital pattern."""
    from fixturegen import generate as gen

    bset, s, hcore, eri, e_nuc = gen.point_matrices("N", 1.1)
    res = scf.robust_rhf(s, hcore, eri, 14, e_nuc, n_attempts=4)
    assert res.converged
    assert res.energy == pytest.approx(-108.54247130, abs=2e-7)
    occ = res.mo_energy[:7]
    # degenerate pi pair among the occupied orbitals
    gaps = np.diff(np.sort(occ))
    assert gaps.min() <= 1e-8
