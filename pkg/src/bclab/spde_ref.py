"""Reference objects for the continuum limit.

White noise on a grid, the heat semigroup on the line with or without a
Dirichlet point at the origin, stationary OU covariances, and a spectral
Dirichlet OU used to evaluate time-integrated second-chaos functionals exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BCS = ("full_line", "dirichlet")

_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


def _radius_of(f, default: float = 12.0) -> float:
    return float(getattr(f, "radius", default))


def _panels(lo: float, hi: float, width: float, breaks=(0.0,)) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on [lo, hi], split at ``breaks``."""
    cuts = [lo] + sorted(b for b in breaks if lo < b < hi) + [hi]
    nodes, weights = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = max(1, math.ceil((b - a) / width))
        edges = np.linspace(a, b, m + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes.append((mid[:, None] + half[:, None] * _GL_X).ravel())
        weights.append((half[:, None] * _GL_W).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def inner_product(H, G, radius: float | None = None, width: float = 0.25) -> float:
    """``<H, G>_{L^2}`` by composite Gauss-Legendre, split at the origin."""
    r = radius if radius is not None else max(_radius_of(H), _radius_of(G))
    x, w = _panels(-r, r, width)
    return float(np.sum(w * H(x) * G(x)))


# ---------------------------------------------------------------- white noise


@dataclass
class WhiteNoiseSample:
    """Cell values ``g_i ~ N(0, variance/du)`` at the midpoints ``lo + (i + 1/2) du``."""

    lo: float
    du: float
    values: np.ndarray
    variance: float

    @property
    def points(self) -> np.ndarray:
        return self.lo + (np.arange(self.values.size) + 0.5) * self.du

    def pair(self, H) -> float:
        """``Y(H) = sum_i H(u_i) g_i du``; linear in ``H``."""
        return float(np.dot(H(self.points), self.values)) * self.du

    def pair_many(self, M: np.ndarray) -> np.ndarray:
        """Pair every row of a matrix of grid values."""
        return (M @ self.values) * self.du


def sample_white_noise(grid, variance: float, rng: np.random.Generator) -> WhiteNoiseSample:
    """Draw white noise with covariance ``variance * <H, G>`` on ``grid = (lo, hi, du)``."""
    lo, hi, du = grid
    if not du > 0:
        raise ValueError("grid spacing must be positive")
    if not hi > lo:
        raise ValueError("grid must have hi > lo")
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    m = int(round((hi - lo) / du))
    g = rng.standard_normal(m) * math.sqrt(variance / du)
    return WhiteNoiseSample(lo, du, g, variance)


# ---------------------------------------------------------------- heat semigroups


class HeatKernel:
    """Heat kernel of ``a * d^2/du^2`` on the line, optionally killed at 0.

    The Dirichlet kernel is built by images on each half-line; points on
    opposite sides of the origin do not communicate.
    """

    def __init__(self, a: float, bc: str = "full_line"):
        if not a > 0:
            raise ValueError("viscosity must be positive")
        if bc not in BCS:
            raise ValueError(f"bc must be one of {BCS}")
        self.a = a
        self.bc = bc

    def gaussian(self, t: float, x):
        s = 4.0 * self.a * t
        return np.exp(-np.asarray(x) ** 2 / s) / math.sqrt(math.pi * s)

    def density(self, t: float, u, v):
        if not t > 0:
            raise ValueError("t must be positive")
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        p = self.gaussian(t, u - v)
        if self.bc == "dirichlet":
            same = (u * v) > 0
            p = np.where(same, p - self.gaussian(t, u + v), 0.0)
        return p


class HeatImage:
    """``u -> int p_t(u, v) H(v) dv``, evaluated by quadrature on demand."""

    def __init__(self, H, t: float, kernel: HeatKernel):
        self.H = H
        self.t = t
        self.kernel = kernel
        scale = math.sqrt(kernel.a * t)
        r = _radius_of(H)
        self.radius = r + 8.0 * scale
        self._x, w = _panels(-r, r, min(0.5, scale))
        self._hw = w * H(self._x)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        flat = u.reshape(-1)
        out = np.empty(flat.size)
        step = max(1, 4_000_000 // max(1, self._x.size))
        for s in range(0, flat.size, step):
            block = flat[s:s + step]
            out[s:s + step] = self.kernel.density(self.t, block[:, None], self._x[None, :]) @ self._hw
        out = out.reshape(u.shape)
        return float(out) if out.ndim == 0 else out


def heat_apply(H, t: float, kernel: HeatKernel):
    """The semigroup applied to ``H``; ``t = 0`` returns ``H`` itself."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return H
    return HeatImage(H, t, kernel)


def dirichlet_series_density(t: float, u, v, a: float, length: float, modes: int | None = None):
    """Dirichlet heat kernel on ``(0, length)`` from its sine expansion."""
    if not t > 0:
        raise ValueError("t must be positive")
    if modes is None:
        # keep terms down to exp(-50)
        modes = int(math.ceil(length / math.pi * math.sqrt(50.0 / (a * t)))) + 1
    k = np.arange(1, modes + 1)
    w = k * math.pi / length
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    su = np.sin(np.multiply.outer(u, w))
    sv = np.sin(np.multiply.outer(v, w))
    decay = np.exp(-a * w * w * t)
    return (2.0 / length) * (su * decay) @ sv.T


def ou_covariance(H, G, t: float, a: float, c: float, bc: str = "full_line") -> float:
    """Stationary OU covariance ``E[Y_t(H) Y_0(G)] = (c/a) <P_t H, G>``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not a > 0:
        raise ValueError("viscosity must be positive")
    kernel = HeatKernel(a, bc)
    PH = heat_apply(H, t, kernel)
    return (c / a) * inner_product(PH, G, radius=_radius_of(G))


def ou_covariance_curve(H, G, times, a: float, c: float, bc: str = "full_line") -> np.ndarray:
    return np.array([ou_covariance(H, G, t, a, c, bc) for t in times])


# ---------------------------------------------------------------- spectral Dirichlet OU


class SpectralDirichletOU:
    """Stationary OU ``dY = a Y'' dt + noise`` on ``(-L, 0) u (0, L)``, Dirichlet at
    0 and at ``+-L``, with unit white-noise marginal.

    Modes: ``e_k = sqrt(2/L) sin(k pi |u| / L)`` on one half-line, zero on the
    other.  Index ``0..K-1`` is the right half-line, ``K..2K-1`` the left one.
    """

    def __init__(self, half_length: float, modes: int, a: float = 1.0):
        if not half_length > 0 or modes < 1 or not a > 0:
            raise ValueError("half_length, modes and a must be positive")
        self.L = float(half_length)
        self.K = int(modes)
        self.a = a
        self.freq = np.arange(1, self.K + 1) * math.pi / self.L
        rate = a * self.freq ** 2
        self.rates = np.concatenate((rate, rate))

    @property
    def size(self) -> int:
        return 2 * self.K

    def _primitive(self, x):
        # antiderivative of the mode vector along x >= 0 (right) and x <= 0 (left)
        x = np.asarray(x, dtype=float)
        amp = math.sqrt(2.0 / self.L)
        xr = np.clip(x, 0.0, self.L)
        xl = np.clip(-x, 0.0, self.L)
        right = amp * (1.0 - np.cos(np.multiply.outer(xr, self.freq))) / self.freq
        left = -amp * (1.0 - np.cos(np.multiply.outer(xl, self.freq))) / self.freq
        return np.concatenate((right, left), axis=-1)

    def box_coefficients(self, u, eps: float, weight=None) -> np.ndarray:
        """``<w(u) iota_eps^u, e_k>`` for every u (rows) and mode (columns)."""
        u = np.asarray(u, dtype=float)
        coef = (self._primitive(u + eps) - self._primitive(u)) / eps
        if weight is not None:
            coef *= np.asarray(weight, dtype=float)[..., None]
        return coef

    def quadratic_kernel(self, psi, eps: float, chi: bool = False, du: float | None = None,
                         radius: float | None = None) -> np.ndarray:
        """``f_kl = int psi(u) c_k(u) c_l(u) du`` for the box kernel (times chi when asked)."""
        r = radius if radius is not None else self.L
        du = du or eps / 16.0
        x, w = _panels(-r, r - eps, du * _GL_ORDER / 2.0)
        weight = np.minimum(1.0, np.abs(x) / eps) if chi else None
        f = np.zeros((self.size, self.size))
        block = max(1, 2_000_000 // self.size)
        for s in range(0, x.size, block):
            C = self.box_coefficients(x[s:s + block], eps, None if weight is None else weight[s:s + block])
            f += (C * (w[s:s + block] * psi(x[s:s + block]))[:, None]).T @ C
        return f

    def time_integral_variance(self, f: np.ndarray, T: float) -> float:
        """Exact variance of ``int_0^T sum_kl (a_k a_l - delta_kl) f_kl ds``."""
        mu = self.rates[:, None] + self.rates[None, :]
        g = T / mu - (1.0 - np.exp(-mu * T)) / mu ** 2
        return float(np.sum(4.0 * f * f * g))

    def stationary_sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.size,) if size is None else (size, self.size)
        return rng.standard_normal(shape)

    def ar1_paths(self, rng: np.random.Generator, T: float, steps: int, replicas: int):
        """Exact AR(1) discretisation; yields the coefficient array at each step point."""
        h = T / steps
        phi = np.exp(-self.rates * h)
        sd = np.sqrt(1.0 - phi * phi)
        x = self.stationary_sample(rng, replicas)
        yield x
        for _ in range(steps):
            x = phi * x + sd * rng.standard_normal(x.shape)
            yield x

    def quadratic_functional_mc(self, f: np.ndarray, T: float, steps: int, replicas: int,
                                rng: np.random.Generator) -> np.ndarray:
        """Trapezoidal time integral of ``sum_kl (a_k a_l - delta_kl) f_kl`` per replica."""
        tr = np.trace(f)
        vals = []
        for x in self.ar1_paths(rng, T, steps, replicas):
            vals.append(np.einsum("rk,kl,rl->r", x, f, x) - tr)
        vals = np.array(vals)
        h = T / steps
        return h * (vals[1:-1].sum(axis=0) + 0.5 * (vals[0] + vals[-1]))


# ---------------------------------------------------------------- second chaos pairing


def chaos_pairing_samples(psi, eps: float, half_length: float, rng: np.random.Generator, samples: int,
                          cells_per_eps: int = 32, fine_per_cell: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Two evaluations of ``int (Y(rho_eps^u)^2 - ||rho_eps^u||^2) psi(u) du`` on white noise.

    The noise is sampled on a fine grid.  The direct route pairs it with the
    kernel exactly (Brownian increments at grid nodes).  The chaos route
    expands in the orthonormal cell indicators ``e_k`` of a coarser grid and
    evaluates the double sum ``sum_kl (Y(e_k) Y(e_l) - delta_kl) F_kl``.
    Returns ``(double_sum, direct)`` per sample.
    """
    if cells_per_eps < 1 or fine_per_cell < 1:
        raise ValueError("grid refinements must be positive")
    h = eps / cells_per_eps
    duf = h / fine_per_cell
    m = int(round(2.0 * half_length / h))
    nf = m * fine_per_cell
    shift = int(round(eps / duf))
    # u on fine nodes with the whole box inside the domain
    j = np.arange(0, nf - shift)
    u = -half_length + j * duf
    w = duf * psi(u)
    chi = np.minimum(1.0, np.abs(u) / eps)
    edges = -half_length + h * np.arange(m + 1)
    lo = np.maximum(u[:, None], edges[None, :-1])
    hi = np.minimum(u[:, None] + eps, edges[None, 1:])
    C = np.clip(hi - lo, 0.0, None) * (chi / (eps * math.sqrt(h)))[:, None]
    F = (C * w[:, None]).T @ C
    trF = float(np.trace(F))
    norm_sq = chi * chi / eps
    dsum = np.empty(samples)
    direct = np.empty(samples)
    for s in range(samples):
        g = rng.standard_normal(nf) * math.sqrt(duf)
        W = np.concatenate(([0.0], np.cumsum(g)))
        y = chi * (W[j + shift] - W[j]) / eps
        direct[s] = float(np.sum(w * (y * y - norm_sq)))
        a = g.reshape(m, fine_per_cell).sum(axis=1) / math.sqrt(h)
        dsum[s] = float(a @ F @ a) - trF
    return dsum, direct
