"""Volterra kernels of the fractional OU family and their RKHS operators.

Implements pointwise kernel evaluation (with endpoint-singularity-aware
quadrature), the integral operator f -> int_0^t Phi(t,s) f(s) ds on a
discrete time grid, Cameron-Martin energies and Gram (covariance) matrices.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gamma as _gamma


class DomainError(ValueError):
    """Raised when an argument lies outside the kernel's domain."""


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature fails to reach its tolerance."""


def kappa(H: float) -> float:
    """Normalising constant of the fractional Volterra kernel.

    kappa(H) = sqrt(2H * Gamma(1 - (H - 1/2)) / (Gamma(H + 1/2) * Gamma(2 - 2H))).
    Equals 1 at H = 1/2.
    """
    if not 0.0 < H < 1.0:
        raise DomainError(f"Hurst parameter must lie in (0,1), got {H}")
    h_minus = H - 0.5
    h_plus = H + 0.5
    return math.sqrt(2.0 * H * _gamma(1.0 - h_minus) / (_gamma(h_plus) * _gamma(2.0 - 2.0 * H)))


@dataclass(frozen=True)
class HurstParams:
    """Hurst parameter with its derived constants."""

    H: float

    def __post_init__(self):
        if not 0.0 < self.H < 1.0:
            raise DomainError(f"Hurst parameter must lie in (0,1), got {self.H}")

    @property
    def h_minus(self) -> float:
        return self.H - 0.5

    @property
    def h_plus(self) -> float:
        return self.H + 0.5

    @property
    def kappa_h(self) -> float:
        return kappa(self.H)


class KernelKind(str, enum.Enum):
    K_FBM = "K_fbm"
    F_FOU = "F_fou"
    G_EPS = "G_eps"
    G_ZERO = "G_zero"
    IDENTITY = "Identity"


@dataclass(frozen=True)
class KernelSpec:
    """Which Volterra kernel to use, with its parameters.

    beta and xi are ignored for K_fbm and Identity; eps only matters for G_eps.
    G_eps with eps = 0 coincides with G_zero, which itself is xi * K_fbm.
    """

    kind: KernelKind
    hurst: HurstParams
    beta: float = 0.0
    xi: float = 1.0
    eps: float = 0.0

    def __post_init__(self):
        if self.kind in (KernelKind.F_FOU, KernelKind.G_EPS, KernelKind.G_ZERO) and self.xi <= 0:
            raise DomainError("xi must be positive")
        if self.kind is KernelKind.G_EPS and self.eps < 0:
            raise DomainError("eps must be nonnegative")

    @property
    def effective_beta(self) -> float:
        """Mean-reversion rate actually entering the kernel formula."""
        if self.kind is KernelKind.F_FOU:
            return self.beta
        if self.kind is KernelKind.G_EPS:
            return self.beta * self.eps ** 2
        return 0.0

    @property
    def effective_xi(self) -> float:
        if self.kind in (KernelKind.K_FBM, KernelKind.IDENTITY):
            return 1.0
        return self.xi

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "H": self.hurst.H,
            "beta": self.beta,
            "xi": self.xi,
            "eps": self.eps,
        }

    @staticmethod
    def from_dict(d: dict) -> "KernelSpec":
        return KernelSpec(
            kind=KernelKind(d["kind"]),
            hurst=HurstParams(float(d.get("H", 0.5))),
            beta=float(d.get("beta", 0.0)),
            xi=float(d.get("xi", 1.0)),
            eps=float(d.get("eps", 0.0)),
        )


@dataclass(frozen=True)
class TimeGrid:
    """Discretisation of (0, 1]: strictly increasing nodes with panel weights.

    Node k is the right endpoint of the panel (t_{k-1}, t_k] with t_0 = 0, so
    the weights are the panel widths and sum to the last node. Controls and
    paths are stored as one value per node.
    """

    nodes: tuple
    weights: tuple

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise DomainError("grid needs at least one node")
        if t[0] <= 0 or t[-1] > 1.0 + 1e-12:
            raise DomainError("nodes must lie in (0, 1]")
        if np.any(np.diff(t) <= 0):
            raise DomainError("nodes must be strictly increasing")
        if np.any(w <= 0):
            raise DomainError("weights must be strictly positive")
        if abs(w.sum() - t[-1]) > 1e-12:
            raise DomainError("weights must sum to the last node (panels start at 0)")

    @staticmethod
    def uniform(n: int) -> "TimeGrid":
        """Uniform grid k/n, k = 1..n; first node at 1/n since kernels are
        undefined at s = 0."""
        if n < 1:
            raise DomainError("n must be >= 1")
        t = np.arange(1, n + 1) / n
        w = np.full(n, 1.0 / n)
        return TimeGrid(nodes=tuple(t), weights=tuple(w))

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.nodes, dtype=float)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def n(self) -> int:
        return len(self.nodes)


# ---------------------------------------------------------------------------
# tanh-sinh quadrature with combined endpoint power weight
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _tanh_sinh_rule(h: float, n: int):
    """Nodes q in (0,1) and Jacobian weights for int_0^1 f(q) dq.

    Double-exponential clustering at both endpoints; q computed via a stable
    logistic form so that q and 1-q stay accurate down to ~1e-300.
    """
    k = np.arange(-n, n + 1)
    x = k * h
    y = 0.5 * math.pi * np.sinh(x)
    # q = (1 + tanh(y)) / 2 = 1 / (1 + exp(-2y)), computed stably on each side
    with np.errstate(over="ignore"):
        q = np.where(y >= 0, 1.0 / (1.0 + np.exp(-2.0 * y)), np.exp(2.0 * y) / (1.0 + np.exp(2.0 * y)))
        qc = np.where(y >= 0, np.exp(-2.0 * y) / (1.0 + np.exp(-2.0 * y)), 1.0 / (1.0 + np.exp(2.0 * y)))
    # dq/dx = (pi/2) cosh(x) sech^2(y) / 2 ; sech^2(y) = 4 q qc
    jac = h * math.pi * np.cosh(x) * q * qc
    keep = (q > 1e-280) & (qc > 1e-280) & (jac > 0)
    return q[keep], qc[keep], jac[keep]


def _singular_integral(s, t, gamma_exp, g, h=0.06, n=64):
    """Vectorised int_s^t (u-s)^gamma_exp * g(u) du, gamma_exp > -1.

    s, t broadcastable arrays with 0 < s < t; g is applied elementwise to the
    quadrature nodes (shape (..., nq)).
    """
    q, _, jac = _tanh_sinh_rule(h, n)
    s = np.asarray(s, dtype=float)[..., None]
    t = np.asarray(t, dtype=float)[..., None]
    span = t - s
    u = s + span * q
    vals = g(u) * np.power(q, gamma_exp)
    return np.power(span[..., 0], gamma_exp + 1.0) * np.sum(jac * vals, axis=-1)


def _kernel_values(H: float, beta: float, xi: float, t, s, h=0.06, n=64):
    """Evaluate the Volterra kernel F^H with rate beta and scale xi.

    beta = 0 and xi = 1 gives K^H; beta = 0 with general xi gives G^H_0.
    Vectorised over broadcastable t, s with 0 < s < t.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if H == 0.5:
        return xi * np.exp(beta * (t - s))
    hm = H - 0.5
    kap = kappa(H)
    shape = np.broadcast_shapes(t.shape, s.shape)
    tb = np.broadcast_to(t, shape).astype(float)
    sb = np.broadcast_to(s, shape).astype(float)
    if H < 0.5:

        def g2(u):
            return (beta - hm / u) * np.power(u, hm) * np.exp(beta * (tb[..., None] - u))

        inner = _singular_integral(sb, tb, hm, g2, h=h, n=n)
        bracket = np.power(tb * (tb - sb), hm) + inner
        return xi * kap * np.power(sb, -hm) * bracket
    else:
        def g2(u):
            return np.power(u, hm) * np.exp(beta * (tb[..., None] - u))

        inner = _singular_integral(sb, tb, hm - 1.0, g2, h=h, n=n)
        return xi * kap * hm * np.power(sb, -hm) * inner


def eval_kernel(spec: KernelSpec, t: float, s: float, rtol: float = 1e-8) -> float:
    """Pointwise kernel value Phi(t, s) for 0 < s < t <= 1.

    For H != 1/2 the inner integral is computed at two quadrature levels and
    the refinement must agree to rtol, otherwise QuadratureError is raised.
    """
    if not (0.0 < s < t <= 1.0 + 1e-12):
        raise DomainError(f"need 0 < s < t <= 1, got s={s}, t={t}")
    if spec.kind is KernelKind.IDENTITY:
        return 1.0
    H = spec.hurst.H
    beta = spec.effective_beta
    xi = spec.effective_xi
    if H == 0.5:
        return float(xi * math.exp(beta * (t - s)))
    ta, sa = np.array([t]), np.array([s])
    h = 0.12
    prev = _kernel_values(H, beta, xi, ta, sa, h=h, n=int(math.ceil(5.0 / h))).item()
    for _ in range(5):
        h *= 0.5
        cur = _kernel_values(H, beta, xi, ta, sa, h=h, n=int(math.ceil(5.0 / h))).item()
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    raise QuadratureError(
        f"kernel quadrature did not converge at (t={t}, s={s}): last refinement {prev} vs {cur}"
    )


def eval_kernel_batch(spec: KernelSpec, t, s) -> np.ndarray:
    """Vectorised kernel evaluation without the adaptive convergence check."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if spec.kind is KernelKind.IDENTITY:
        return np.ones(np.broadcast_shapes(t.shape, s.shape))
    return _kernel_values(spec.hurst.H, spec.effective_beta, spec.effective_xi, t, s)


# ---------------------------------------------------------------------------
# Operator and Gram matrices
# ---------------------------------------------------------------------------

_matrix_cache: dict = {}


def _cache_key(tag: str, spec: KernelSpec, grid: TimeGrid):
    return (tag, spec.kind.value, spec.hurst.H, spec.effective_beta, spec.effective_xi, grid.nodes)


def operator_matrix(spec: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Matrix A with A[i, j] = int over panel j of Phi(t_i, s) ds (j <= i).

    apply_operator is then A @ f for panelwise-constant controls f. Panels
    touching the singular endpoints are integrated with the tanh-sinh rule.
    """
    key = _cache_key("op", spec, grid)
    if key in _matrix_cache:
        return _matrix_cache[key]
    t = grid.t
    n = grid.n
    edges = np.concatenate([[0.0], t])
    A = np.zeros((n, n))
    if spec.kind is KernelKind.IDENTITY:
        for i in range(n):
            A[i, : i + 1] = np.diff(edges[: i + 2])
        _matrix_cache[key] = A
        return A
    q, qc, jac = _tanh_sinh_rule(0.06, 64)
    for i in range(n):
        ti = t[i]
        lo = edges[: i + 1]
        hi = edges[1 : i + 2]
        span = (hi - lo)[:, None]
        s_nodes = lo[:, None] + span * q[None, :]
        # keep strictly inside (0, ti)
        s_nodes = np.clip(s_nodes, 1e-300, ti * (1.0 - 1e-15))
        vals = eval_kernel_batch(spec, np.full_like(s_nodes, ti), s_nodes)
        A[i, : i + 1] = np.sum(span * jac[None, :] * vals, axis=1)
    _matrix_cache[key] = A
    return A


def apply_operator(spec: KernelSpec, f, grid: TimeGrid) -> np.ndarray:
    """Path t -> int_0^t Phi(t,s) f(s) ds for panelwise-constant control f."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n,):
        raise ValueError(f"control has shape {f.shape}, expected ({grid.n},)")
    return operator_matrix(spec, grid) @ f


def l2_energy(f, g, grid: TimeGrid) -> float:
    """Cameron-Martin energy (1/2)(||f||^2 + ||g||^2) in L^2(0, 1]."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (grid.n,) or g.shape != (grid.n,):
        raise ValueError("controls must have one value per grid node")
    w = grid.w
    return 0.5 * float(w @ (f * f) + w @ (g * g))


def gram_matrix(spec: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Covariance matrix G[i, j] = int_0^min(ti,tj) Phi(ti,r) Phi(tj,r) dr."""
    key = _cache_key("gram", spec, grid)
    if key in _matrix_cache:
        return _matrix_cache[key]
    t = grid.t
    n = grid.n
    G = np.zeros((n, n))
    if spec.kind is KernelKind.IDENTITY:
        G = np.minimum.outer(t, t)
        _matrix_cache[key] = G
        return G
    q, qc, jac = _tanh_sinh_rule(0.05, 80)
    for i in range(n):
        ti = t[i]
        # r-nodes on (0, ti), clustered at both endpoints
        r = ti * q
        r = np.clip(r, 1e-300, ti * (1.0 - 1e-15))
        ki = eval_kernel_batch(spec, np.full_like(r, ti), r)
        tj = t[i:][:, None]
        kj = eval_kernel_batch(spec, np.broadcast_to(tj, (n - i, r.size)), np.broadcast_to(r, (n - i, r.size)))
        G[i, i:] = ti * np.sum(jac * ki * kj, axis=1)
        G[i:, i] = G[i, i:]
    asym = np.max(np.abs(G - G.T))
    if asym > 1e-10:
        raise QuadratureError(f"Gram matrix asymmetry {asym} exceeds 1e-10")
    _matrix_cache[key] = G
    return G
