"""Discretized variational solvers for the large-deviations rate functions.

A rate problem minimizes the Cameron-Martin energy of a pair of controls
(f, g) subject to a terminal constraint on the log-price path built by
chaining f through a Volterra kernel into the volatility path and both
channels into the price integral. Optionally the volatility starting point
ranges over a compact interval and is optimized jointly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from .kernels import (
    DomainError,
    HurstParams,
    KernelKind,
    KernelSpec,
    TimeGrid,
    l2_energy,
    operator_matrix,
)
from .model import ModelParams, VolFunction, constant_vol, linear_vol

INFEASIBLE = math.inf


@dataclass
class ControlVector:
    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.f.shape != self.g.shape or self.f.ndim != 1:
            raise DomainError("controls f and g must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.g))):
            raise DomainError("controls must be finite")


@dataclass
class VariationalProblem:
    kernel: KernelSpec
    vol: VolFunction
    grid: TimeGrid
    rho: float = 0.0
    include_drift: bool = False
    start: Tuple[float, float] = (0.0, 0.0)   # (lo, hi); fixed start when lo == hi
    level: float = 1.0
    sense: str = ">="                          # ">=", "=", "<="
    constraint_node: Optional[int] = None      # index into grid, default last

    def __post_init__(self):
        lo, hi = self.start
        if lo > hi:
            raise DomainError("start interval needs lo <= hi")
        if self.sense not in (">=", "=", "<="):
            raise DomainError(f"unknown constraint sense {self.sense}")
        if not -1.0 < self.rho < 1.0:
            raise DomainError("rho must lie in (-1, 1)")

    @property
    def rho_bar(self) -> float:
        return math.sqrt(1.0 - self.rho * self.rho)

    @property
    def node_index(self) -> int:
        return self.grid.n - 1 if self.constraint_node is None else self.constraint_node

    def homogeneous_factor(self) -> np.ndarray:
        """Per-node multiplier of the starting point in the volatility path.

        The mean-reverting kernel decays the start exponentially; for the
        small-time limits the start enters as a constant.
        """
        if self.kernel.kind is KernelKind.F_FOU:
            return np.exp(self.kernel.beta * self.grid.t)
        return np.ones(self.grid.n)


@dataclass
class RateResult:
    value: float
    controls: ControlVector
    y_path: np.ndarray
    x_path: np.ndarray
    start_used: float
    converged: bool
    iterations: int
    kkt_residual: float
    level_used: float = math.nan


def path_from_controls(problem: VariationalProblem, controls: ControlVector,
                       start: Optional[float] = None):
    """Build (y_path, x_path) on the grid from the controls.

    y = start * homogeneous_factor + (kernel operator applied to f);
    x = cumulative quadrature of [-1/2 sigma_tilde(y)^2 if drift]
        + sigma_tilde(y) (rho f + rho_bar g).
    """
    grid = problem.grid
    if controls.f.shape != (grid.n,):
        raise DomainError(f"controls have length {controls.f.size}, grid has {grid.n}")
    u = problem.start[0] if start is None else start
    A = operator_matrix(problem.kernel, grid)
    y = u * problem.homogeneous_factor() + A @ controls.f
    sig = problem.vol.sigma_tilde(y)
    integrand = sig * (problem.rho * controls.f + problem.rho_bar * controls.g)
    if problem.include_drift:
        integrand = integrand - 0.5 * sig * sig
    x = np.cumsum(grid.w * integrand)
    return y, x


def _terminal_and_grad(problem, A, hom, f, g, u):
    """Terminal x value and its gradient with respect to (f, g, u)."""
    grid = problem.grid
    w = grid.w
    rho, rho_bar = problem.rho, problem.rho_bar
    y = u * hom + A @ f
    sig = problem.vol.sigma_tilde(y)
    dsig = problem.vol.sigma_tilde_deriv(y)
    mix = rho * f + rho_bar * g
    j = problem.node_index
    mask = np.zeros(grid.n)
    mask[: j + 1] = 1.0
    wm = w * mask
    if problem.include_drift:
        xT = float(wm @ (sig * mix - 0.5 * sig * sig))
        dx_dy = wm * dsig * (mix - sig)
    else:
        xT = float(wm @ (sig * mix))
        dx_dy = wm * dsig * mix
    grad_f = A.T @ dx_dy + wm * sig * rho
    grad_g = wm * sig * rho_bar
    grad_u = float(dx_dy @ hom)
    return xT, grad_f, grad_g, grad_u


def penalized_objective(problem: VariationalProblem, z: np.ndarray, nu: float, mu: float,
                        level: float, free_start: bool):
    """Augmented-Lagrangian objective and gradient over stacked variables
    z = [f, g(, u)] for the equality constraint x_terminal = level."""
    n = problem.grid.n
    f = z[:n]
    g = z[n : 2 * n]
    u = z[2 * n] if free_start else problem.start[0]
    A = operator_matrix(problem.kernel, problem.grid)
    hom = problem.homogeneous_factor()
    w = problem.grid.w
    xT, gf, gg, gu = _terminal_and_grad(problem, A, hom, f, g, u)
    r = xT - level
    energy = 0.5 * float(w @ (f * f) + w @ (g * g))
    val = energy + nu * r + 0.5 * mu * r * r
    coef = nu + mu * r
    grad = np.empty_like(z)
    grad[:n] = w * f + coef * gf
    grad[n : 2 * n] = w * g + coef * gg
    if free_start:
        grad[2 * n] = coef * gu
    return val, grad, r


def _solve_equality(problem: VariationalProblem, level: float,
                    feas_tol: float = 1e-6, max_outer: int = 25) -> RateResult:
    grid = problem.grid
    n = grid.n
    lo, hi = problem.start
    free_start = hi > lo
    A = operator_matrix(problem.kernel, grid)
    hom = problem.homogeneous_factor()
    w = grid.w

    # infeasibility screen: if the vol function vanishes identically on the
    # reachable paths, the constraint gradient is zero everywhere
    probe = np.max(np.abs(problem.vol.sigma_tilde(np.linspace(-10, 10, 41))))
    if probe == 0.0 and abs(level) > feas_tol:
        zero = ControlVector(np.zeros(n), np.zeros(n))
        y, x = path_from_controls(problem, zero, start=lo)
        return RateResult(INFEASIBLE, zero, y, x, lo, False, 0, math.nan, level)

    ones = np.ones(n)
    scale = abs(level) if level != 0 else 1.0
    starts = []
    u_seeds = [0.5 * (lo + hi)] if not free_start else [0.5 * (lo + hi), lo, hi]
    for u0 in u_seeds:
        starts.append((np.zeros(n), np.zeros(n), u0))
        starts.append((np.zeros(n), math.copysign(scale, level) * ones, u0))
        starts.append((math.copysign(scale, level) * ones, np.zeros(n), u0))
        starts.append((0.5 * scale * ones, 0.5 * scale * ones, u0))
        starts.append((-0.5 * scale * ones, math.copysign(scale, level) * ones, u0))

    best = None
    total_iters = 0
    for si, (f0, g0, u0) in enumerate(starts):
        z = np.concatenate([f0, g0, [u0]]) if free_start else np.concatenate([f0, g0])
        bounds = None
        if free_start:
            bounds = [(None, None)] * (2 * n) + [(lo, hi)]
        nu, mu = 0.0, 10.0
        r_prev = math.inf
        converged = False
        for outer in range(max_outer):
            res = minimize(
                lambda zz: penalized_objective(problem, zz, nu, mu, level, free_start)[:2],
                z,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-12},
            )
            z = res.x
            total_iters += res.nit
            _, _, r = penalized_objective(problem, z, nu, mu, level, free_start)
            if abs(r) <= 1e-9:
                converged = True
                break
            nu += mu * r
            if abs(r) > 0.25 * abs(r_prev):
                mu *= 10.0
            r_prev = r
        f = z[:n]
        g = z[n : 2 * n]
        u = float(z[2 * n]) if free_start else lo
        xT, gf, gg, gu = _terminal_and_grad(problem, A, hom, f, g, u)
        r = xT - level
        energy = 0.5 * float(w @ (f * f) + w @ (g * g))
        # least-squares KKT multiplier for the reported stationarity residual
        ge = np.concatenate([w * f, w * g])
        gr = np.concatenate([gf, gg])
        denom = float(gr @ gr)
        lam = -float(ge @ gr) / denom if denom > 0 else 0.0
        kkt = float(np.linalg.norm(ge + lam * gr))
        cand = (energy, si, f, g, u, r, kkt, converged and abs(r) <= feas_tol)
        if abs(r) <= feas_tol and (best is None or energy < best[0] - 1e-14):
            best = cand
    if best is None:
        zero = ControlVector(np.zeros(n), np.zeros(n))
        y, x = path_from_controls(problem, zero, start=lo)
        return RateResult(INFEASIBLE, zero, y, x, lo, False, total_iters, math.nan, level)
    energy, _, f, g, u, r, kkt, ok = best
    cv = ControlVector(f, g)
    y, x = path_from_controls(problem, cv, start=u)
    return RateResult(energy, cv, y, x, u, ok, total_iters, kkt, level)


def _unconstrained_terminal(problem: VariationalProblem) -> float:
    """Terminal x at zero controls, minimized/maximized over the start
    interval by a coarse scan (the zero-control path costs zero energy)."""
    lo, hi = problem.start
    us = [lo] if hi <= lo else list(np.linspace(lo, hi, 9))
    zero = ControlVector(np.zeros(problem.grid.n), np.zeros(problem.grid.n))
    vals = []
    for u in us:
        _, x = path_from_controls(problem, zero, start=u)
        vals.append(x[problem.node_index])
    return vals


def solve(problem: VariationalProblem) -> RateResult:
    """Minimize the control energy subject to the terminal constraint.

    Equality constraints go straight to the augmented-Lagrangian solver.
    Inequality senses first check zero-control feasibility (value 0), then
    scan a geometric ladder of equality levels on the constraint side,
    keeping the smallest energy; the scan stops early once values increase
    monotonically.
    """
    if problem.sense == "=":
        return _solve_equality(problem, problem.level)
    x0_vals = _unconstrained_terminal(problem)
    if problem.sense == ">=":
        if max(x0_vals) >= problem.level:
            n = problem.grid.n
            zero = ControlVector(np.zeros(n), np.zeros(n))
            u = problem.start[0] if len(x0_vals) == 1 else float(
                np.linspace(problem.start[0], problem.start[1], 9)[int(np.argmax(x0_vals))]
            )
            y, x = path_from_controls(problem, zero, start=u)
            return RateResult(0.0, zero, y, x, u, True, 0, 0.0, problem.level)
        levels = problem.level * np.geomspace(1.0, 4.0, 11) if problem.level > 0 else \
            problem.level + np.linspace(0.0, 2.0 * abs(problem.level) + 1.0, 11)
    else:
        if min(x0_vals) <= problem.level:
            n = problem.grid.n
            zero = ControlVector(np.zeros(n), np.zeros(n))
            u = problem.start[0] if len(x0_vals) == 1 else float(
                np.linspace(problem.start[0], problem.start[1], 9)[int(np.argmin(x0_vals))]
            )
            y, x = path_from_controls(problem, zero, start=u)
            return RateResult(0.0, zero, y, x, u, True, 0, 0.0, problem.level)
        levels = problem.level * np.geomspace(1.0, 4.0, 11) if problem.level < 0 else \
            problem.level - np.linspace(0.0, 2.0 * abs(problem.level) + 1.0, 11)
    best = None
    increases = 0
    prev = None
    for lv in levels:
        res = _solve_equality(problem, float(lv))
        if math.isfinite(res.value) and (best is None or res.value < best.value):
            best = res
        if prev is not None and math.isfinite(res.value) and res.value > prev + 1e-12:
            increases += 1
            if increases >= 2:
                break
        else:
            increases = 0
        prev = res.value if math.isfinite(res.value) else prev
    if best is None:
        n = problem.grid.n
        zero = ControlVector(np.zeros(n), np.zeros(n))
        y, x = path_from_controls(problem, zero, start=problem.start[0])
        return RateResult(INFEASIBLE, zero, y, x, problem.start[0], False, 0, math.nan, problem.level)
    return best


# ---------------------------------------------------------------------------
# Brute-force oracle (tests only)
# ---------------------------------------------------------------------------

def brute_force_rate(problem: VariationalProblem, coarse_n: int = 6) -> float:
    """Independent global search on a coarse grid; used as a test oracle.

    Dense deterministic multistart (structured points plus a seeded random
    lattice) over the stacked control space, refined by Powell on a
    quadratic-penalty objective with two penalty rounds.
    """
    if coarse_n > 8:
        raise DomainError("oracle restricted to coarse grids (n <= 8)")
    grid = TimeGrid.uniform(coarse_n)
    prob = VariationalProblem(
        kernel=problem.kernel, vol=problem.vol, grid=grid, rho=problem.rho,
        include_drift=problem.include_drift, start=problem.start,
        level=problem.level, sense=problem.sense,
    )
    n = coarse_n
    lo, hi = prob.start
    free_start = hi > lo
    dim = 2 * n + (1 if free_start else 0)
    level = prob.level

    def assemble(z):
        f, g = z[:n], z[n : 2 * n]
        u = min(max(z[2 * n], lo), hi) if free_start else lo
        return f, g, u

    def terminal(z):
        f, g, u = assemble(z)
        _, x = path_from_controls(prob, ControlVector(f, g), start=u)
        return x[prob.node_index]

    def energy(z):
        f, g, _ = assemble(z)
        return l2_energy(f, g, grid)

    if prob.sense == ">=":
        viol = lambda z: max(0.0, level - terminal(z))
    elif prob.sense == "<=":
        viol = lambda z: max(0.0, terminal(z) - level)
    else:
        viol = lambda z: abs(terminal(z) - level)

    rng = np.random.default_rng(12345)
    scale = abs(level) if level != 0 else 1.0
    sgn = 1.0 if level >= 0 else -1.0
    starts = [np.zeros(dim)]
    for base in (sgn * scale, 2 * sgn * scale, -sgn * scale):
        for ch in range(3):
            z = np.zeros(dim)
            if ch == 0:
                z[n : 2 * n] = base
            elif ch == 1:
                z[:n] = base
            else:
                z[:2 * n] = 0.5 * base
            starts.append(z)
    for _ in range(8):
        z = rng.uniform(-2.5 * scale, 2.5 * scale, dim)
        starts.append(z)
    if free_start:
        for z in starts:
            z[2 * n] = rng.uniform(lo, hi)

    from scipy.optimize import minimize as _min

    best = math.inf
    for z0 in starts:
        z = z0.copy()
        for mu, xt, ft in ((50.0, 1e-6, 1e-9), (5e3, 1e-9, 1e-12)):
            obj = lambda zz: energy(zz) + mu * viol(zz) ** 2
            res = _min(obj, z, method="Powell", options={"maxiter": 20000, "xtol": xt, "ftol": ft})
            z = res.x
        e = energy(z)
        if e < best + 0.05:
            # worth polishing against a stiffer penalty
            for mu in (5e5, 5e7):
                obj = lambda zz: energy(zz) + mu * viol(zz) ** 2
                res = _min(obj, z, method="Powell", options={"maxiter": 20000, "xtol": 1e-12, "ftol": 1e-14})
                z = res.x
            if viol(z) <= 1e-6:
                best = min(best, energy(z))
    return best


# ---------------------------------------------------------------------------
# Named rate functions
# ---------------------------------------------------------------------------

def _tilde_vol(params: ModelParams) -> VolFunction:
    return params.vol


def tail_rate(params: ModelParams, y_level: float, b: float,
              include_drift: bool = True, grid: Optional[TimeGrid] = None) -> RateResult:
    """Large-strike rate: infimum over terminal values >= y_level of the
    energy driving the mean-reverting volatility kernel, drift included by
    default. The starting point contributes nothing at this speed and is
    fixed to 0."""
    if b < 0.5:
        import warnings

        warnings.warn(f"tails scaling needs b >= 1/2, got {b}")
    grid = grid or TimeGrid.uniform(48)
    kernel = KernelSpec(KernelKind.F_FOU, params.hurst, beta=params.beta,
                        xi=params.xi if params.xi > 0 else 1.0)
    prob = VariationalProblem(
        kernel=kernel, vol=_tilde_vol(params), grid=grid, rho=params.rho,
        include_drift=include_drift, start=(0.0, 0.0), level=y_level, sense=">=",
    )
    return solve(prob)


def smalltime_rate(params: ModelParams, k_level: float, b: float,
                   grid: Optional[TimeGrid] = None) -> RateResult:
    """Small-time rate at log-strike k: kernel is the pointwise kernel limit,
    no drift, start 0; sense >= k for k > 0 and <= k for k < 0."""
    if b < 0.5 - 2.0 * params.hurst.H:
        import warnings

        warnings.warn(f"small-time scaling needs b >= 1/2 - 2H, got {b}")
    if k_level == 0.0:
        grid = grid or TimeGrid.uniform(48)
        n = grid.n
        zero = ControlVector(np.zeros(n), np.zeros(n))
        kernel = KernelSpec(KernelKind.G_ZERO, params.hurst, xi=params.xi if params.xi > 0 else 1.0)
        prob = VariationalProblem(kernel=kernel, vol=_tilde_vol(params), grid=grid,
                                  rho=params.rho, include_drift=False)
        y, x = path_from_controls(prob, zero)
        return RateResult(0.0, zero, y, x, 0.0, True, 0, 0.0, 0.0)
    grid = grid or TimeGrid.uniform(48)
    kernel = KernelSpec(KernelKind.G_ZERO, params.hurst, xi=params.xi if params.xi > 0 else 1.0)
    prob = VariationalProblem(
        kernel=kernel, vol=_tilde_vol(params), grid=grid, rho=params.rho,
        include_drift=False, start=(0.0, 0.0), level=k_level,
        sense=">=" if k_level > 0 else "<=",
    )
    return solve(prob)


def rate_with_random_start(params: ModelParams, k_level: float,
                           support: Tuple[float, float],
                           grid: Optional[TimeGrid] = None) -> RateResult:
    """Small-time rate with the volatility starting point free over a compact
    interval (diffusive scheme); returns the minimizing start."""
    lo, hi = support
    if lo > hi:
        raise DomainError("support needs lo <= hi")
    grid = grid or TimeGrid.uniform(48)
    kernel = KernelSpec(KernelKind.G_ZERO, params.hurst, xi=params.xi if params.xi > 0 else 1.0)
    if k_level == 0.0:
        n = grid.n
        zero = ControlVector(np.zeros(n), np.zeros(n))
        prob = VariationalProblem(kernel=kernel, vol=_tilde_vol(params), grid=grid,
                                  rho=params.rho, include_drift=False, start=(lo, hi))
        y, x = path_from_controls(prob, zero, start=lo)
        return RateResult(0.0, zero, y, x, lo, True, 0, 0.0, 0.0)
    prob = VariationalProblem(
        kernel=kernel, vol=_tilde_vol(params), grid=grid, rho=params.rho,
        include_drift=False, start=(lo, hi), level=k_level,
        sense=">=" if k_level > 0 else "<=",
    )
    return solve(prob)
