import numpy as np
import pytest

from lucjopt.ansatz import default_connectivity, n_gates
from lucjopt.costmodel import (
    cost_report,
    report_csv,
    report_markdown,
    scaling_check,
)
from lucjopt.estimators import SHIFT_RULE


@pytest.mark.parametrize(
    "n,n_layers",
    [(2, 1), (3, 1), (4, 2), (5, 2), (6, 3), (8, 2), (8, 6), (10, 4), (12, 2), (16, 3)],
)
def test_formula_reproduction(n, n_layers):
    """Re-derive every closed-form count independently."""
    conn = default_connectivity(n)
    s, sp = n, n - 1
    n_g = (n_layers + 1) * 2 * n**2 + n_layers * (s + 2 * sp)
    assert n_g == n_gates(n, n_layers, conn)
    n_factors = 7
    lam = 3.5
    eps = 1e-3
    y1 = 1 + np.sqrt(2)
    rows = {e.quantity: e for e in cost_report(
        n, n_layers, conn, n_factors=n_factors, lambda_norm=lam, epsilon=eps
    )}
    assert rows["gradient"].circuits == 4 * n_g * (1 + n_factors)
    assert rows["gradient"].shots == int(np.ceil(n_g * y1**2 * lam**2 / eps**2))
    assert rows["overlap_shiftrule"].circuits == 16 * n_g * (n_g + 1) // 2
    assert rows["overlap_shiftrule"].shots == int(
        np.ceil(n_g * (n_g + 1) / 2 * y1**4 / eps**2)
    )
    assert rows["overlap_channels"].circuits == (
        4 * n_g + 16 * n_g + n_g * (n_g - 1) // 2 * 64
    )
    assert rows["overlap_channels"].shots == int(
        np.ceil((2 * n_g + 9 * n_g * (n_g - 1) / 2) / eps**2)
    )
    assert rows["hamiltonian_channels"].circuits == (
        256 * (1 + n_factors) * n_g * (n_g + 1) // 2
    )
    assert rows["hamiltonian_channels"].shots == int(
        np.ceil(n_g * (n_g + 1) / 2 * 81 * lam**2 / eps**2)
    )


def test_worked_example_n8_l2():
    rows = {e.quantity: e for e in cost_report(8, 2, n_factors=8)}
    n_g = 3 * 128 + 2 * (8 + 2 * 7)
    assert rows["gradient"].inputs["n_gates"] == n_g
    assert rows["gradient"].circuits == 4 * n_g * 9


def test_epsilon_scaling():
    base = cost_report(8, 2, epsilon=1e-3)
    halved = cost_report(8, 2, epsilon=5e-4)
    for b, h in zip(base, halved):
        assert h.shots == pytest.approx(4 * b.shots, rel=1e-9)
        assert h.circuits == b.circuits


def test_channels_more_economical_per_element():
    """Per matrix element the channel protocol needs fewer shots than the
    echo shift rule: constant 9 versus ||y||_1^4 = (3 + 2 sqrt(2))^2."""
    y1_4 = SHIFT_RULE.y_one_norm**4
    assert y1_4 == pytest.approx((3 + 2 * np.sqrt(2)) ** 2, abs=1e-12)
    assert y1_4 > 9
    rows = {e.quantity: e for e in cost_report(8, 4, epsilon=1e-2)}
    n_g = rows["gradient"].inputs["n_gates"]
    per_element_shift = rows["overlap_shiftrule"].shots / (n_g * (n_g + 1) / 2)
    per_element_chan = rows["overlap_channels"].shots / (n_g * (n_g - 1) / 2)
    assert per_element_chan < per_element_shift


def test_qsr_has_no_hamiltonian_row():
    qsr = {e.quantity for e in cost_report(6, 2, method="qsr")}
    qlm = {e.quantity for e in cost_report(6, 2, method="qlm")}
    assert "hamiltonian_channels" not in qsr
    assert {"gradient", "overlap_shiftrule", "overlap_channels"} <= qsr
    assert "hamiltonian_channels" in qlm


def test_counts_monotone():
    for key in ("circuits", "shots"):
        prev = None
        for n in (4, 6, 8, 10):
            rows = cost_report(n, 2)
            total = sum(getattr(e, key) for e in rows)
            if prev is not None:
                assert total >= prev
            prev = total
        prev = None
        for loc in (1, 2, 3, 4):
            rows = cost_report(8, loc)
            total = sum(getattr(e, key) for e in rows)
            if prev is not None:
                assert total >= prev
            prev = total
    base = cost_report(8, 2, lambda_norm=2.0)[0].shots
    assert cost_report(8, 2, lambda_norm=4.0)[0].shots >= base


N_SWEEP = [16, 24, 32, 48, 64, 96]
L_SWEEP = [8, 12, 16, 24, 32, 48]


@pytest.mark.parametrize("quantity,metric,variable,expected,tol", [
    ("hamiltonian_channels", "circuits", "N", 5.0, 0.1),
    ("overlap_channels", "circuits", "N", 4.0, 0.1),
    ("overlap_shiftrule", "circuits", "N", 4.0, 0.1),
    ("gradient", "circuits", "N", 3.0, 0.1),
    ("gradient", "circuits", "L", 1.0, 0.05),
    ("overlap_channels", "circuits", "L", 2.0, 0.1),
    ("hamiltonian_channels", "circuits", "L", 2.0, 0.1),
    ("overlap_shiftrule", "shots", "N", 4.0, 0.1),
    ("overlap_channels", "shots", "N", 4.0, 0.1),
    ("gradient", "shots", "N", 2.0, 0.1),
    ("hamiltonian_channels", "shots", "N", 4.0, 0.1),
    ("gradient", "shots", "L", 1.0, 0.05),
    ("hamiltonian_channels", "shots", "L", 2.0, 0.1),
])
def test_scaling_exponents(quantity, metric, variable, expected, tol):
    values = N_SWEEP if variable == "N" else L_SWEEP
    slope = scaling_check(quantity, metric, variable, values)
    assert slope == pytest.approx(expected, abs=tol)


def test_scaling_check_requires_points():
    with pytest.raises(ValueError, match="4 sweep points"):
        scaling_check("gradient", "circuits", "N", [8, 16, 32])


def test_theta_space_multiplier():
    norms = np.array([1.0, 3.0, 2.0])
    plain = cost_report(4, 1)
    scaled = cost_report(4, 1, theta_space=True, jacobian_colnorms=norms)
    for p, s in zip(plain, scaled):
        assert abs(s.shots - 9 * p.shots) <= 9  # equal up to ceil rounding
    with pytest.raises(ValueError, match="column norms"):
        cost_report(4, 1, theta_space=True)


def test_report_formats():
    rows = cost_report(4, 1)
    md = report_markdown(rows)
    assert md.splitlines()[0].startswith("| quantity")
    csv = report_csv(rows)
    assert csv.splitlines()[0] == "quantity,circuits,shots,epsilon"
    assert len(csv.strip().splitlines()) == len(rows) + 1
