"""Update steps and outer loops: metric-preconditioned descent, the
shifted-Newton linear-expansion step with adaptive (shift, rescale)
hyperparameters, a quasi-Newton baseline, Gaussian matrix-noise
injection, and symmetry-constrained update projection.
"""

from __future__ import annotations

import dataclasses
import json
import time
import warnings

import numpy as np
import scipy.linalg
import scipy.optimize

from . import derivatives, fock
from .ansatz import LucjParams
from .derivatives import LmSystem
from .fock import FockBasis
from .hamiltonian import MolecularHamiltonian

_ALPHA_SENTINEL = 1e12


@dataclasses.dataclass
class SrConfig:
    tau: float = 0.05
    regularization: float = 1e-8
    pinv_cutoff: float = 1e-10

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclasses.dataclass
class LmConfig:
    alpha0: float = 1e-4
    xi0: float = 0.5
    hyper_budget: int = 50
    max_iters: int = 100
    grad_tol: float = 1e-5
    rel_energy_tol: float = 1e-8
    pinv_cutoff: float = 1e-10

    def __post_init__(self):
        if not (0.0 <= self.xi0 <= 1.0):
            raise ValueError("xi0 must lie in [0, 1]")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be >= 0")


@dataclasses.dataclass
class NoiseModel:
    sigma: float = 0.0
    seed: int = 0
    targets: tuple = ("g", "s", "h")

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclasses.dataclass
class IterationRecord:
    iteration: int
    energy: float
    grad_norm: float
    alpha: float | None
    xi: float | None
    step_norm: float
    s_squared: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


def _pinv_solve(mat: np.ndarray, rhs: np.ndarray, rcond: float) -> np.ndarray:
    return np.linalg.pinv(mat, rcond=rcond, hermitian=True) @ rhs


def sr_step(sys: LmSystem, cfg: SrConfig) -> np.ndarray:
    """Solve (S + reg I) x = -(tau/2) g with a relative singular-value cutoff."""
    s = sys.s
    if np.abs(s).max() < 1e-300:
        warnings.warn("derivative overlap matrix is numerically zero; zero step")
        return np.zeros_like(sys.g)
    mat = s + cfg.regularization * np.eye(len(s))
    return _pinv_solve(mat, -0.5 * cfg.tau * sys.g, cfg.pinv_cutoff)


def rescale_update(x: np.ndarray, s: np.ndarray, xi: float) -> np.ndarray:
    """Step damping x' = x / (1 + (1-xi) Q / ((1-xi) + xi sqrt(1+Q)))."""
    q = max(float(x @ s @ x), 0.0)
    denom = 1.0 + (1.0 - xi) * q / ((1.0 - xi) + xi * np.sqrt(1.0 + q))
    return x / denom


class LmSolver:
    """Factored shifted-Newton solver for one assembled system.

    The system is truncated to the span of overlap-matrix eigenvectors
    above the relative cutoff (thresholding and subsequent truncation):
    directions the wavefunction does not actually move along carry only
    numerical noise in the Hessian block and would pollute the step at
    every shift magnitude.  In the truncated space the pencil
    (A + alpha S) is diagonalized once in the S-metric, so every
    (shift, rescale) evaluation of the hyperparameter search is a cheap
    closed-form filter 1/(lambda_i + alpha).
    """

    def __init__(self, sys: LmSystem, pinv_cutoff: float = 1e-10):
        if sys.h is None:
            raise ValueError("the linear-expansion step needs the Hamiltonian block")
        self.sys = sys
        self.pinv_cutoff = pinv_cutoff
        s_eigs, s_vecs = np.linalg.eigh(sys.s)
        keep = s_eigs > pinv_cutoff * max(float(s_eigs.max(initial=0.0)), 1e-300)
        v = s_vecs[:, keep]
        s_red = s_eigs[keep]
        a_red = v.T @ (sys.h - sys.e0 * sys.s) @ v
        a_red = 0.5 * (a_red + a_red.T)
        self.empty = v.shape[1] == 0
        if self.empty:
            return
        # S-metric whitening: diag(s)^{-1/2} A diag(s)^{-1/2} = Q L Q^T
        inv_sqrt = 1.0 / np.sqrt(s_red)
        b = inv_sqrt[:, None] * a_red * inv_sqrt[None, :]
        lam, q = np.linalg.eigh(0.5 * (b + b.T))
        self.lam = lam
        # maps whitened coordinates back to the full parameter space
        self.back = v * inv_sqrt[None, :] @ q
        self.g_white = q.T @ (inv_sqrt * (v.T @ sys.g))
        self.scale = max(float(np.abs(lam).max(initial=0.0)), 1e-300)

    def step(self, alpha: float, xi: float) -> tuple[np.ndarray, float]:
        if self.empty:
            return np.zeros_like(self.sys.g), self.sys.e0
        denom = self.lam + alpha
        filt = np.where(
            np.abs(denom) > self.pinv_cutoff * max(self.scale, alpha),
            denom, np.inf,
        )
        y = -0.5 * self.g_white / filt
        q_norm = float(y @ y)  # S-metric norm: whitened coordinates
        damp = 1.0 + (1.0 - xi) * q_norm / ((1.0 - xi) + xi * np.sqrt(1.0 + q_norm))
        x = self.back @ (y / damp)
        return x, predicted_energy(self.sys, x)


def lm_step(
    sys: LmSystem,
    alpha: float,
    xi: float,
    pinv_cutoff: float = 1e-10,
) -> tuple[np.ndarray, float]:
    """Shifted-Newton update (A + alpha S) x = -g/2 followed by rescaling.

    Returns (rescaled step, predicted energy from the Rayleigh quotient
    of the block system at (1, x')).
    """
    return LmSolver(sys, pinv_cutoff).step(alpha, xi)


def predicted_energy(sys: LmSystem, x: np.ndarray) -> float:
    num = sys.e0 + sys.g @ x + x @ sys.h @ x
    den = 1.0 + x @ sys.s @ x
    return float(num / den)


def eq6_eigen_step(sys: LmSystem) -> tuple[np.ndarray, float]:
    """Small-instance oracle: the generalized eigenproblem form of the update.

    Solves the block eigenproblem directly and returns the eigenvector of
    the lowest eigenvalue whose leading component exceeds 1e-8, normalized
    to x0 = 1.
    """
    n = len(sys.g)
    hb = np.zeros((n + 1, n + 1))
    hb[0, 0] = sys.e0
    hb[0, 1:] = 0.5 * sys.g
    hb[1:, 0] = 0.5 * sys.g
    hb[1:, 1:] = sys.h
    sb = np.zeros((n + 1, n + 1))
    sb[0, 0] = 1.0
    sb[1:, 1:] = sys.s
    vals, vecs = scipy.linalg.eig(hb, sb)
    best = None
    for k in range(len(vals)):
        if not np.isfinite(vals[k]):
            continue
        if abs(np.imag(vals[k])) > 1e-8:
            continue
        if abs(vecs[0, k]) <= 1e-8:
            continue
        lam = float(np.real(vals[k]))
        if best is None or lam < best[0]:
            best = (lam, vecs[:, k])
    if best is None:
        raise np.linalg.LinAlgError("no admissible eigenvector in block system")
    lam, vec = best
    vec = np.real(vec / vec[0])
    return vec[1:], lam


def inject_noise(sys: LmSystem, nm: NoiseModel, rng=None) -> LmSystem:
    """Add i.i.d. N(0, sigma^2) to the targeted blocks.

    Matrix noise is drawn on the upper triangle (diagonal included) and
    mirrored, so every element has standard deviation sigma and the
    matrices stay exactly symmetric.  Deterministic under the seed.
    """
    if nm.sigma == 0.0:
        return sys
    rng = np.random.default_rng(nm.seed) if rng is None else rng
    g, s, h = sys.g, sys.s, sys.h

    def sym_noise(mat):
        n = len(mat)
        upper = np.triu(rng.normal(scale=nm.sigma, size=(n, n)))
        noise = upper + np.triu(upper, k=1).T
        return mat + noise

    if "g" in nm.targets:
        g = g + rng.normal(scale=nm.sigma, size=g.shape)
    if "s" in nm.targets:
        s = sym_noise(s)
    if "h" in nm.targets and h is not None:
        h = sym_noise(h)
    return LmSystem(
        e0=sys.e0, g=g, s=s, h=h,
        param_indices=sys.param_indices, n_params_total=sys.n_params_total,
    )


def _expand_step(x: np.ndarray, active: np.ndarray, n_total: int) -> np.ndarray:
    full = np.zeros(n_total)
    full[active] = x
    return full


def tune_hyperparams(
    params: LucjParams,
    basis: FockBasis,
    h: MolecularHamiltonian,
    sys: LmSystem,
    prev: tuple[float, float],
    budget: int = 50,
    pinv_cutoff: float = 1e-10,
) -> tuple[float, float, float]:
    """Pick (alpha, xi) minimizing the energy of the stepped state.

    A bounded quasi-Newton search with numerical gradients starts from the
    previous iteration's values; the candidate set additionally contains
    the start point and the large-shift asymptote (vanishing step), so the
    returned pair never increases the energy relative to standing still.
    Returns (alpha, xi, energy at the chosen pair).
    """
    theta0 = params.flatten()
    cache: dict = {}
    solver = LmSolver(sys, pinv_cutoff)

    def stepped_energy(alpha, xi):
        alpha = max(float(alpha), 0.0)
        xi = min(max(float(xi), 0.0), 1.0)
        key = (alpha, xi)
        if key in cache:
            return cache[key]
        try:
            x, _ = solver.step(alpha, xi)
        except np.linalg.LinAlgError:
            cache[key] = np.inf
            return np.inf
        theta = theta0 + _expand_step(x, sys.param_indices, sys.n_params_total)
        from .ansatz import prepare_state

        state = prepare_state(params.like(theta), basis)
        e = fock.energy_expectation(h, state)
        cache[key] = e
        return e

    # geometric shift grid guards against wild steps from an indefinite or
    # near-singular system (large shifts fall back to damped
    # metric-preconditioned descent); the huge-shift sentinel guarantees a
    # no-worse-than-zero step
    candidates = [tuple(prev), (_ALPHA_SENTINEL, prev[1])]
    candidates += [
        (a, prev[1])
        for a in (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4, 1e5)
    ]
    for alpha, xi in candidates:
        stepped_energy(alpha, xi)
    search_budget = max((budget - len(cache)) // 2, 2)
    alpha_floor = 1e-9

    def refine(start):
        # quasi-Newton in (log shift, rescale) so numerical gradients stay
        # meaningful across shift decades
        z0 = np.array([np.log10(max(start[0], 0.0) + alpha_floor), start[1]])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = scipy.optimize.minimize(
                lambda z: stepped_energy(10.0 ** z[0] - alpha_floor, z[1]),
                x0=z0,
                method="L-BFGS-B",
                bounds=[(-9.0, 9.0), (0.0, 1.0)],
                options={"maxfun": search_budget, "eps": 1e-4},
            )
        if np.all(np.isfinite(result.x)):
            stepped_energy(10.0 ** result.x[0] - alpha_floor, result.x[1])

    refine(prev)
    finite = {k: v for k, v in cache.items() if np.isfinite(v) and k[0] < _ALPHA_SENTINEL}
    if finite:
        best_start = min(finite, key=finite.get)
        if best_start != tuple(prev):
            refine(best_start)
    best = None
    for (alpha, xi), e in cache.items():
        if np.isfinite(e) and (best is None or e < best[2]):
            best = (alpha, xi, e)
    if best is None:
        return prev[0], prev[1], np.inf
    return best


def run_lm(
    params0: LucjParams,
    basis: FockBasis,
    h: MolecularHamiltonian,
    cfg: LmConfig | None = None,
    nm: NoiseModel | None = None,
    active: np.ndarray | None = None,
) -> tuple[LucjParams, list[IterationRecord]]:
    """Outer linear-expansion loop with per-iteration hyperparameter tuning.

    Stops when the (noisy) gradient max-norm falls below max(grad_tol,
    sigma), when the relative energy change falls below
    max(rel_energy_tol, sigma), or at max_iters.  Returns the best-energy
    iterate encountered (exact energies), not necessarily the last.
    """
    cfg = cfg or LmConfig()
    nm = nm or NoiseModel(sigma=0.0)
    rng = np.random.default_rng(nm.seed)
    params = params0
    trace: list[IterationRecord] = []
    prev_hyper = (cfg.alpha0, cfg.xi0)
    best: tuple[float, LucjParams] | None = None
    window: list[float] = []  # recent energies for the total-change criterion
    t0 = time.perf_counter()

    for iteration in range(cfg.max_iters):
        bundle = derivatives.derivative_bundle(params, basis, "analytic", h=h, active=active)
        sys = LmSystem(
            e0=bundle.energy,
            g=derivatives.gradient(bundle, h),
            s=derivatives.overlap_matrix(bundle),
            h=derivatives.hamiltonian_matrix(bundle, h),
            param_indices=bundle.param_indices,
            n_params_total=bundle.n_params_total,
        )
        noisy = inject_noise(sys, nm, rng)
        grad_norm = float(np.abs(noisy.g).max()) if len(noisy.g) else 0.0
        s2 = fock.expectation("s_squared", bundle.psi)
        if best is None or sys.e0 < best[0]:
            best = (sys.e0, params)
        if grad_norm <= max(cfg.grad_tol, nm.sigma):
            trace.append(IterationRecord(
                iteration, sys.e0, grad_norm, None, None, 0.0, s2,
                time.perf_counter() - t0,
            ))
            break
        alpha, xi, e_new = tune_hyperparams(
            params, basis, h, noisy, prev_hyper, cfg.hyper_budget, cfg.pinv_cutoff
        )
        x, _ = lm_step(noisy, alpha, xi, cfg.pinv_cutoff)
        theta = params.flatten() + _expand_step(x, noisy.param_indices, noisy.n_params_total)
        params = params.like(theta)
        prev_hyper = (alpha, xi)
        state = None
        if not np.isfinite(e_new):
            from .ansatz import prepare_state

            state = prepare_state(params, basis)
            e_new = fock.energy_expectation(h, state)
        trace.append(IterationRecord(
            iteration, e_new, grad_norm, alpha, xi, float(np.linalg.norm(x)), s2,
            time.perf_counter() - t0,
        ))
        if best is None or e_new < best[0]:
            best = (e_new, params)
        # total relative energy change over a short window (a single-step
        # plateau inside a saddle region must not end the run)
        window.append(e_new)
        if len(window) > 4:
            window.pop(0)
        if len(window) == 4:
            rel = abs(window[-1] - window[0]) / max(abs(window[0]), 1e-12)
            if rel <= max(cfg.rel_energy_tol, nm.sigma):
                break
    return best[1], trace


def run_sr(
    params0: LucjParams,
    basis: FockBasis,
    h: MolecularHamiltonian,
    cfg: SrConfig | None = None,
    max_iters: int = 500,
    grad_tol: float = 1e-5,
    active: np.ndarray | None = None,
) -> tuple[LucjParams, list[IterationRecord]]:
    """Fixed-step metric-preconditioned descent loop."""
    cfg = cfg or SrConfig()
    params = params0
    trace: list[IterationRecord] = []
    t0 = time.perf_counter()
    best = None
    for iteration in range(max_iters):
        bundle = derivatives.derivative_bundle(params, basis, "analytic", h=h, active=active)
        g = derivatives.gradient(bundle, h)
        s = derivatives.overlap_matrix(bundle)
        sys = LmSystem(bundle.energy, g, s, None, bundle.param_indices, bundle.n_params_total)
        grad_norm = float(np.abs(g).max()) if len(g) else 0.0
        s2 = fock.expectation("s_squared", bundle.psi)
        if best is None or bundle.energy < best[0]:
            best = (bundle.energy, params)
        if grad_norm <= grad_tol:
            trace.append(IterationRecord(
                iteration, bundle.energy, grad_norm, None, None, 0.0, s2,
                time.perf_counter() - t0,
            ))
            break
        x = sr_step(sys, cfg)
        theta = params.flatten() + _expand_step(x, sys.param_indices, sys.n_params_total)
        params = params.like(theta)
        trace.append(IterationRecord(
            iteration, bundle.energy, grad_norm, None, None, float(np.linalg.norm(x)),
            s2, time.perf_counter() - t0,
        ))
    return best[1], trace


def minimize_lbfgs(fun_and_grad, x0, tol=1e-5, max_iters=1000, memory=10, callback=None):
    """Limited-memory quasi-Newton with strong-Wolfe line search.

    Thin wrapper over scipy's L-BFGS-B (the optimizer the reference
    comparisons use), unconstrained, with convergence on the gradient
    max-norm.  Returns (x, f, info dict with flags and iteration count).
    """
    result = scipy.optimize.minimize(
        fun_and_grad,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={
            "maxcor": memory,
            "gtol": tol,
            "ftol": 0.0,
            "maxiter": max_iters,
            "maxls": 40,
        },
    )
    info = {
        "n_iterations": int(result.nit),
        "converged": bool(result.success),
        "line_search_failure": "ABNORMAL" in str(result.message).upper()
        or "ROUNDING" in str(result.message).upper(),
        "message": str(result.message),
    }
    return result.x, float(result.fun), info


def run_lbfgs(
    params0: LucjParams,
    basis: FockBasis,
    h: MolecularHamiltonian,
    tol: float = 1e-5,
    max_iters: int = 2000,
    active: np.ndarray | None = None,
) -> tuple[LucjParams, list[IterationRecord]]:
    """Quasi-Newton baseline on E(theta) with the adjoint analytic gradient."""
    n_total = params0.n_params
    active = np.arange(n_total) if active is None else np.asarray(active, dtype=int)
    theta_full = params0.flatten()
    trace: list[IterationRecord] = []
    t0 = time.perf_counter()
    last = {}

    def fun_and_grad(z):
        theta = theta_full.copy()
        theta[active] = z
        p = params0.like(theta)
        e, g = derivatives.energy_and_gradient(p, basis, h, active=active)
        last["e"], last["g"], last["params"] = e, g, p
        return e, g

    def callback(_zk):
        trace.append(IterationRecord(
            len(trace), last["e"], float(np.abs(last["g"]).max()), None, None,
            0.0, np.nan, time.perf_counter() - t0,
        ))

    x, f, info = minimize_lbfgs(
        fun_and_grad, theta_full[active], tol=tol, max_iters=max_iters, callback=callback
    )
    theta = theta_full.copy()
    theta[active] = x
    params = params0.like(theta)
    e_final, g_final = derivatives.energy_and_gradient(params, basis, h, active=active)
    state = None
    from .ansatz import prepare_state

    state = prepare_state(params, basis)
    trace.append(IterationRecord(
        len(trace), e_final, float(np.abs(g_final).max()), None, None, 0.0,
        fock.expectation("s_squared", state), time.perf_counter() - t0,
    ))
    return params, trace


def constrained_update(x: np.ndarray, grad_b) -> np.ndarray:
    """Project the update off the constraint gradients (first-order
    conservation of the constrained observables).

    ``grad_b`` is one vector or a list of vectors; multiple constraints
    compose through Gram-Schmidt orthogonalization of their gradients.
    """
    grads = [np.asarray(grad_b)] if np.ndim(grad_b) == 1 else [np.asarray(g) for g in grad_b]
    out = np.asarray(x, dtype=float).copy()
    basis_vecs = []
    for g in grads:
        v = g.copy()
        for b in basis_vecs:
            v -= (v @ b) * b
        nrm = np.linalg.norm(v)
        if nrm <= 1e-300:
            continue
        v /= nrm
        basis_vecs.append(v)
        out -= (out @ v) * v
    return out
