"""Closed-form circuit and shot counting for one optimizer iteration.

Counts follow the measurement protocols: four shifted energies per gate
for the gradient (each energy needing 1 + N_factor circuit groups),
echo circuits for the shift-rule overlap, and quasi-probability channel
insertions (4 branches per side, up to 4 Pauli terms per generator) for
the channel-based overlap and Hamiltonian matrices.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .ansatz import Connectivity, default_connectivity, n_gates
from .estimators import SHIFT_RULE

QUANTITIES = ("gradient", "overlap_shiftrule", "overlap_channels", "hamiltonian_channels")


@dataclasses.dataclass(frozen=True)
class CostEstimate:
    quantity: str
    circuits: int
    shots: int
    epsilon: float
    inputs: dict

    def as_row(self) -> dict:
        row = {"quantity": self.quantity, "circuits": self.circuits, "shots": self.shots,
               "epsilon": self.epsilon}
        row.update({k: v for k, v in self.inputs.items()})
        return row


def _counts(quantity: str, n_g: int, n_factors: int, lambda_norm: float,
            epsilon: float) -> tuple[int, float]:
    y1 = SHIFT_RULE.y_one_norm
    pairs_incl = n_g * (n_g + 1) // 2
    pairs_excl = n_g * (n_g - 1) // 2
    if quantity == "gradient":
        circuits = 4 * n_g * (1 + n_factors)
        shots = n_g * y1**2 * lambda_norm**2 / epsilon**2
    elif quantity == "overlap_shiftrule":
        circuits = 16 * pairs_incl
        shots = pairs_incl * y1**4 / epsilon**2
    elif quantity == "overlap_channels":
        circuits = 4 * n_g + 16 * n_g + 64 * pairs_excl
        shots = (2 * n_g + 9 * pairs_excl) / epsilon**2
    elif quantity == "hamiltonian_channels":
        circuits = 256 * (1 + n_factors) * pairs_incl
        shots = pairs_incl * 81 * lambda_norm**2 / epsilon**2
    else:
        raise ValueError(f"unknown quantity {quantity!r}")
    return circuits, shots


def cost_report(
    n_orbitals: int,
    n_layers: int,
    connectivity: Connectivity | None = None,
    n_factors: int | None = None,
    lambda_norm: float | None = None,
    epsilon: float = 1e-3,
    method: str = "qlm",
    theta_space: bool = False,
    jacobian_colnorms: np.ndarray | None = None,
) -> list[CostEstimate]:
    """Per-quantity circuit and shot counts for one iteration.

    ``method`` is "qsr" (gradient and overlap rows only) or "qlm" (all
    rows).  ``n_factors`` defaults to the O(N) rule N_factor = N and
    ``lambda_norm`` to N when no factorization-derived values are given.
    When ``theta_space`` is set, shot counts are multiplied by the
    largest squared column norm of the supplied angle Jacobian.
    """
    if n_orbitals <= 0 or n_layers < 0 or epsilon <= 0:
        raise ValueError("inputs must be positive")
    if method not in ("qsr", "qlm"):
        raise ValueError(f"unknown method {method!r}")
    conn = connectivity or default_connectivity(n_orbitals)
    n_factors = n_orbitals if n_factors is None else n_factors
    lambda_norm = float(n_orbitals) if lambda_norm is None else lambda_norm
    n_g = n_gates(n_orbitals, n_layers, conn)
    scale = 1.0
    if theta_space:
        if jacobian_colnorms is None:
            raise ValueError("theta_space costs require jacobian column norms")
        scale = float(np.max(np.asarray(jacobian_colnorms)) ** 2)
    quantities = QUANTITIES if method == "qlm" else (
        "gradient", "overlap_shiftrule", "overlap_channels",
    )
    inputs = {
        "n_orbitals": n_orbitals, "n_layers": n_layers, "n_gates": n_g,
        "n_factors": n_factors, "lambda_norm": lambda_norm,
        "theta_space": theta_space,
        "jacobian_colnorm_max": math.sqrt(scale) if theta_space else None,
    }
    out = []
    for quantity in quantities:
        circuits, shots = _counts(quantity, n_g, n_factors, lambda_norm, epsilon)
        out.append(CostEstimate(
            quantity=quantity,
            circuits=int(circuits),
            shots=int(math.ceil(shots * scale)),
            epsilon=epsilon,
            inputs=inputs,
        ))
    return out


def scaling_check(
    quantity: str,
    metric: str,
    variable: str,
    values,
    n_layers: int = 2,
    n_orbitals: int = 8,
    epsilon: float = 1e-3,
) -> float:
    """Fitted log-log exponent of a count against N or L.

    Sweeping N uses the stated input scalings N_factor = N with the
    variance constant held fixed (it appears explicitly in the shot
    rows); sweeping L holds N and N_factor fixed.
    """
    values = list(values)
    if len(values) < 4:
        raise ValueError("need at least 4 sweep points")
    counts = []
    for v in values:
        if variable == "N":
            n, loc = int(v), n_layers
            nf = n
        elif variable == "L":
            n, loc = n_orbitals, int(v)
            nf = n_orbitals
        else:
            raise ValueError("variable must be 'N' or 'L'")
        conn = default_connectivity(n)
        n_g = n_gates(n, loc, conn)
        circuits, shots = _counts(quantity, n_g, nf, 1.0, epsilon)
        counts.append(circuits if metric == "circuits" else shots)
    slope, _ = np.polyfit(np.log(np.asarray(values, dtype=float)), np.log(counts), 1)
    return float(slope)


def report_rows(estimates: list[CostEstimate]) -> list[dict]:
    return [e.as_row() for e in estimates]


def report_markdown(estimates: list[CostEstimate]) -> str:
    lines = [
        "| quantity | circuits | shots | epsilon |",
        "| --- | ---: | ---: | ---: |",
    ]
    for e in estimates:
        lines.append(f"| {e.quantity} | {e.circuits} | {e.shots} | {e.epsilon:g} |")
    return "\n".join(lines)


def report_csv(estimates: list[CostEstimate]) -> str:
    lines = ["quantity,circuits,shots,epsilon"]
    for e in estimates:
        lines.append(f"{e.quantity},{e.circuits},{e.shots},{e.epsilon:.17g}")
    return "\n".join(lines) + "\n"
