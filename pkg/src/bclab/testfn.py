"""Test functions, lattice calculus, approximate-identity kernels and Sobolev norms.

Test functions come in three classes distinguished by their behaviour at the
origin:

* ``S``     smooth and rapidly decaying on the whole line,
* ``S_Dir`` smooth on each half-line with all even derivatives vanishing at 0,
* ``S_0``   smooth with every derivative vanishing at 0.

Built-in members are addressed by string ids such as ``"sdir:odd-gauss:1"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.hermite import herm2poly
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

SPACES = ("S", "S_Dir", "S_0")
VALUE_TOL = 1e-10
DERIV_TOL = 1e-8
_SIDE = 1e-12


class TestFunction:
    """A real function with analytic derivatives up to order four."""

    __test__ = False  # keep pytest from collecting the class

    def __init__(self, ident: str, derivs, space: str, radius: float = 12.0):
        if space not in SPACES:
            raise ValueError(f"unknown space tag {space!r}")
        self.ident = ident
        self._derivs = derivs
        self.space = space
        self.radius = float(radius)

    def __repr__(self):
        return f"TestFunction({self.ident!r}, space={self.space})"

    def __call__(self, u):
        return self._derivs(np.asarray(u, dtype=float), 0)

    def value_and_slope(self, u):
        """``(H(u), H'(u))`` sharing work where the family allows it."""
        u = np.asarray(u, dtype=float)
        pair = getattr(self._derivs, "pair", None)
        if pair is not None:
            return pair(u)
        return self._derivs(u, 0), self._derivs(u, 1)

    def deriv(self, u, j: int = 1):
        if not 0 <= j <= 4:
            raise ValueError("derivative order must be in 0..4")
        return self._derivs(np.asarray(u, dtype=float), j)

    def scaled(self, c: float) -> "TestFunction":
        return TestFunction(f"{c}*{self.ident}", lambda u, j: c * self._derivs(u, j), self.space, self.radius)

    def shifted(self, c: float) -> "TestFunction":
        """The translate ``u -> H(u + c)``; the space tag is dropped to ``S`` unless c = 0."""
        space = self.space if c == 0 else "S"
        return TestFunction(f"{self.ident}@{c}", lambda u, j: self._derivs(u + c, j), space,
                            self.radius + abs(c))

    @cached_property
    def decay_constant(self) -> float:
        """``K = sup (1+u^2) H(u)^2``."""
        return _grid_sup(lambda u: (1 + u * u) * self(u) ** 2, self.radius)

    def side_values(self, j: int) -> tuple[float, float]:
        """Derivative of order ``j`` just left and just right of the origin."""
        return float(self.deriv(-_SIDE, j)), float(self.deriv(_SIDE, j))

    def in_space(self, tag: str) -> bool:
        """Numerical membership check for ``tag`` at the origin."""
        if tag == "S":
            # no jump in any derivative across 0
            return all(abs(l - r) <= max(DERIV_TOL, 1e-6 * abs(r)) for l, r in map(self.side_values, range(5)))
        if tag == "S_Dir":
            return all(abs(v) <= (VALUE_TOL if j == 0 else DERIV_TOL)
                       for j in (0, 2, 4) for v in self.side_values(j))
        if tag == "S_0":
            return all(abs(v) <= (VALUE_TOL if j == 0 else DERIV_TOL)
                       for j in range(5) for v in self.side_values(j))
        raise ValueError(f"unknown space tag {tag!r}")


def _grid_sup(fn, radius: float, points: int = 40001) -> float:
    u = np.linspace(-radius, radius, points)
    u = u[u != 0.0]
    u = np.concatenate((u, [-_SIDE, _SIDE]))
    vals = np.abs(fn(u))
    best = float(vals.max())
    # polish around the best few grid points
    du = 2 * radius / (points - 1)
    for i in np.argsort(vals)[-4:]:
        lo, hi = u[i] - du, u[i] + du
        if lo < 0 < hi:
            continue
        res = optimize.minimize_scalar(lambda x: -abs(float(fn(np.array(x)))), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


# ---------------------------------------------------------------- families


class _PolyGauss:
    """Derivatives of ``P(u) exp(-u^2)``; ``half`` restricts to one side of 0,
    ``even`` reflects the right half to the left."""

    def __init__(self, poly: Polynomial, half: str | None = None, even: bool = False):
        two_u = Polynomial([0.0, 2.0])
        polys = [poly]
        for _ in range(4):
            polys.append(polys[-1].deriv() - two_u * polys[-1])
        # highest degree first for np.polyval
        self.coefs = [p.coef[::-1].copy() for p in polys]
        self.half = half
        self.even = even

    def __call__(self, u, j):
        if self.even:
            au = np.abs(u)
            val = np.polyval(self.coefs[j], au) * np.exp(-au * au)
            return np.where(u < 0, (-1) ** j * val, val)
        val = np.polyval(self.coefs[j], u) * np.exp(-u * u)
        if self.half == "right":
            val = np.where(u > 0, val, 0.0)
        return val

    def pair(self, u):
        if self.even or self.half:
            return self(u, 0), self(u, 1)
        g = np.exp(-u * u)
        return np.polyval(self.coefs[0], u) * g, np.polyval(self.coefs[1], u) * g


def _poly_gauss_derivs(poly: Polynomial, half: str | None = None, even: bool = False):
    return _PolyGauss(poly, half, even)


def _flat_derivs(half: str | None = None):
    # exp(g) with g = -1/u^2 - u^2; derivatives by Faa di Bruno
    def derivs(u, j):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        mask = np.abs(u) > 0.02
        if half == "right":
            mask &= u > 0
        x = u[mask]
        f = np.exp(-1.0 / x ** 2 - x ** 2)
        g1 = 2.0 / x ** 3 - 2.0 * x
        g2 = -6.0 / x ** 4 - 2.0
        g3 = 24.0 / x ** 5
        g4 = -120.0 / x ** 6
        if j == 0:
            factor = 1.0
        elif j == 1:
            factor = g1
        elif j == 2:
            factor = g2 + g1 ** 2
        elif j == 3:
            factor = g3 + 3 * g1 * g2 + g1 ** 3
        else:
            factor = g4 + 4 * g1 * g3 + 3 * g2 ** 2 + 6 * g1 ** 2 * g2 + g1 ** 4
        out[mask] = factor * f
        return out if out.ndim else float(out)

    return derivs


def builtin_family(space_tag: str, index: int, family: str | None = None) -> TestFunction:
    """Representative members of each space.

    ``S``: Hermite-Gaussians ``H_k(u) exp(-u^2)``.
    ``S_Dir``: ``u^m exp(-u^2)`` with ``m = 2*index - 1`` (family ``odd-gauss``),
    its right half only (``half-gauss``) or its even reflection (``abs-gauss``).
    ``S_0``: ``exp(-1/u^2 - u^2)`` (``flat``) or its right half (``flat-half``).
    """
    tag = {"s": "S", "sdir": "S_Dir", "s0": "S_0"}.get(space_tag.lower(), space_tag)
    defaults = {"S": "hermite-gauss", "S_Dir": "odd-gauss", "S_0": "flat"}
    if tag not in defaults:
        raise ValueError(f"unknown space tag {space_tag!r}")
    family = family or defaults[tag]
    index = int(index)
    short = {"S": "s", "S_Dir": "sdir", "S_0": "s0"}[tag]
    ident = f"{short}:{family}:{index}"
    if tag == "S" and family == "hermite-gauss":
        if not 0 <= index <= 12:
            raise ValueError("hermite-gauss index must be in 0..12")
        coef = np.zeros(index + 1)
        coef[index] = 1.0
        return TestFunction(ident, _poly_gauss_derivs(Polynomial(herm2poly(coef))), "S")
    if tag == "S_Dir" and family in ("odd-gauss", "half-gauss", "abs-gauss"):
        if not 1 <= index <= 6:
            raise ValueError("odd power index must be in 1..6")
        m = 2 * index - 1
        poly = Polynomial([0.0] * m + [1.0])
        kw = {"odd-gauss": {}, "half-gauss": {"half": "right"}, "abs-gauss": {"even": True}}[family]
        return TestFunction(ident, _poly_gauss_derivs(poly, **kw), "S_Dir")
    if tag == "S_0" and family in ("flat", "flat-half"):
        if index != 0:
            raise ValueError("flat family has the single index 0")
        return TestFunction(ident, _flat_derivs("right" if family == "flat-half" else None), "S_0")
    raise ValueError(f"unknown family {family!r} for space {tag}")


def get_test_function(ident: str) -> TestFunction:
    """Registry lookup by id ``"<space>:<family>:<index>"``."""
    parts = ident.split(":")
    if len(parts) != 3:
        raise ValueError(f"test function id must look like 'sdir:odd-gauss:1', got {ident!r}")
    space, family, index = parts
    return builtin_family(space, int(index), family)


def required_space(delta: float) -> str:
    """Test-function space matching the bath exponent."""
    if delta > 1:
        return "S"
    if delta > -1:
        return "S_Dir"
    return "S_0"


# ---------------------------------------------------------------- norms and lattice calculus


def norm_inf_k(H: TestFunction, k: int) -> float:
    """``sup_{i,j<=k} sup_{u != 0} (1+|u|)^i |H^(j)(u)|``."""
    if not 0 <= k <= 4:
        raise ValueError("k must be in 0..4")
    # for fixed j the weight (1+|u|)^i is largest at i = k
    return max(_grid_sup(lambda u, j=j: (1 + np.abs(u)) ** k * H.deriv(u, j), H.radius) for j in range(k + 1))


@dataclass(frozen=True)
class GridFunction:
    """Samples at the points ``(x0 + i)/n``."""

    values: np.ndarray
    n: float
    x0: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def du(self) -> float:
        return 1.0 / self.n

    @property
    def points(self) -> np.ndarray:
        return (self.x0 + np.arange(self.values.size)) / self.n

    def at(self, x):
        idx = np.asarray(x) - self.x0
        if np.any(idx < 0) or np.any(idx >= self.values.size):
            raise IndexError("lattice index outside the grid")
        return self.values[idx]

    @classmethod
    def sample(cls, fn, n: float, lo: float, hi: float) -> "GridFunction":
        x0 = math.floor(lo * n)
        x1 = math.ceil(hi * n)
        pts = np.arange(x0, x1 + 1) / n
        return cls(fn(pts), n, x0)


def _lattice_values(H, n, x):
    if isinstance(H, GridFunction):
        if H.n != n:
            raise ValueError("grid scale differs from n")
        return H.at
    return lambda y: H(np.asarray(y) / n)


def discrete_grad(H, n: int, x):
    """Forward lattice gradient ``n (H((x+1)/n) - H(x/n))``."""
    f = _lattice_values(H, n, x)
    x = np.asarray(x)
    return n * (f(x + 1) - f(x))


def discrete_laplacian(H, n: int, x):
    """Lattice Laplacian ``n^2 (H((x+1)/n) + H((x-1)/n) - 2 H(x/n))``."""
    f = _lattice_values(H, n, x)
    x = np.asarray(x)
    return n * n * (f(x + 1) + f(x - 1) - 2 * f(x))


def norm_2n(H, n: int, shift: float = 0.0, radius: float | None = None) -> float:
    """Discrete norm ``(n^-1 sum_x H((x + shift)/n)^2)^(1/2)``, shift in lattice units.

    The sum runs over ``|(x + shift)/n| <= radius``; built-in families are
    negligible beyond their radius.
    """
    r = radius if radius is not None else getattr(H, "radius", 12.0)
    x = np.arange(math.floor(-r * n - shift), math.ceil(r * n - shift) + 1)
    vals = H((x + shift) / n)
    return math.sqrt(float(np.sum(vals * vals)) / n)


def norm_2n_bound(H: TestFunction) -> float:
    """Uniform bound ``(1 + pi^2/3) K`` on the squared discrete norm."""
    return (1.0 + math.pi ** 2 / 3.0) * H.decay_constant


# ---------------------------------------------------------------- kernels


def kernel_iota(u: float, eps: float):
    """``v -> eps^-1 1_{(u, u+eps]}(v)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return lambda v: np.where((np.asarray(v) > u) & (np.asarray(v) <= u + eps), 1.0 / eps, 0.0)


def kernel_chi(u, eps: float):
    """``min(1, |u/eps|)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = np.minimum(1.0, np.abs(np.asarray(u, dtype=float) / eps))
    return float(out) if out.ndim == 0 else out


def kernel_rho(u: float, eps: float):
    c = kernel_chi(u, eps)
    iota = kernel_iota(u, eps)
    return lambda v: c * iota(v)


class KernelFamily:
    """The kernels ``iota_eps``, ``chi_eps``, ``rho_eps`` and the mollifier at one scale."""

    def __init__(self, eps: float):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.eps = eps

    def iota(self, u):
        return kernel_iota(u, self.eps)

    def chi(self, u):
        return kernel_chi(u, self.eps)

    def rho(self, u):
        return kernel_rho(u, self.eps)

    def check_rho(self, G: GridFunction) -> GridFunction:
        return mollify_check_rho(G, self.eps)


def _cumulative(G: GridFunction) -> np.ndarray:
    g = G.values
    F = np.empty(g.size)
    F[0] = 0.0
    np.cumsum(0.5 * (g[1:] + g[:-1]) * G.du, out=F[1:])
    return F


def _antiderivative_at(G: GridFunction, F: np.ndarray, u: np.ndarray) -> np.ndarray:
    # exact integral of the piecewise-linear interpolant, G = 0 off the grid
    g = G.values
    s = (np.asarray(u) * G.n) - G.x0
    i = np.clip(np.floor(s).astype(np.int64), 0, g.size - 1)
    theta = np.clip(s - i, 0.0, 1.0)
    nxt = np.minimum(i + 1, g.size - 1)
    val = F[i] + G.du * (theta * g[i] + 0.5 * theta ** 2 * (g[nxt] - g[i]))
    val = np.where(s <= 0, 0.0, val)
    return np.where(s >= g.size - 1, F[-1], val)


def mollify_check_rho(G: GridFunction, eps: float) -> GridFunction:
    """``u -> chi_eps(u) eps^-1 int_u^{u+eps} G`` on the grid of ``G``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    F = _cumulative(G)
    u = G.points
    avg = (_antiderivative_at(G, F, u + eps) - F) / eps
    return GridFunction(kernel_chi(u, eps) * avg, G.n, G.x0)


# ---------------------------------------------------------------- Sobolev norms on D = R minus {0}


def _halves(G: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    if not (G.x0 <= 0 <= G.x0 + G.values.size - 1):
        raise ValueError("grid must contain the origin as a node")
    i0 = -G.x0
    return G.values[: i0 + 1][::-1], G.values[i0:]


def l2_norm(G: GridFunction) -> float:
    g = G.values
    return math.sqrt(float(np.sum(0.5 * (g[1:] ** 2 + g[:-1] ** 2)) * G.du))


def sobolev_int_norm(G: GridFunction, k: int) -> float:
    """``||G||_L2 + sum_{i<=k} ||d^i G||_L2`` with derivatives taken on each half-line."""
    if k not in (1, 2):
        raise ValueError("integer order must be 1 or 2")
    total = l2_norm(G)
    for order in range(1, k + 1):
        sq = 0.0
        for half in _halves(G):
            d = np.diff(half, n=order) / G.du ** order
            sq += float(np.sum(d * d)) * G.du
        total += math.sqrt(sq)
    return total


def frac_seminorm_sq(G: GridFunction, alpha: float) -> float:
    """Gagliardo double integral over (0,inf)^2 and (-inf,0)^2 of the
    piecewise-linear interpolant, ``G`` extended by zero off the grid."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    du = G.du
    total = 0.0
    for half in _halves(G):
        m = half.size
        slope_sq = float(np.sum(np.diff(half) ** 2)) / du
        # lags below du/2: |G(u+h) - G(u)|^2 ~ h^2 |G'|^2
        local = slope_sq * (0.5 * du) ** (2 - alpha) / (2 - alpha)
        lags = np.arange(1, m)
        edges_lo = (lags - 0.5) * du
        edges_hi = (lags + 0.5) * du
        weights = (edges_lo ** -alpha - edges_hi ** -alpha) / alpha
        acc = 0.0
        for k in range(1, m):
            diff = half[k:] - half[:-k]
            # pairs that leave the grid see G = 0 on the far side
            tail = half[m - k:]
            acc += weights[k - 1] * (float(diff @ diff) + float(tail @ tail)) * du
        # partners beyond the last lag
        far = (m - 0.5) * du
        acc += float(half @ half) * du * far ** -alpha / alpha
        total += 2.0 * (local + acc)
    return total


def sobolev_frac_norm(G: GridFunction, alpha: float) -> float:
    """Full fractional norm ``||G||_L2 + (Gagliardo double integral)^(1/2)``."""
    if alpha == 0:
        return l2_norm(G)
    if alpha == 1:
        return sobolev_int_norm(G, 1)
    return l2_norm(G) + math.sqrt(frac_seminorm_sq(G, alpha))


def sobolev_norm(G: GridFunction, order: float) -> float:
    if order == 0:
        return l2_norm(G)
    if float(order).is_integer():
        return sobolev_int_norm(G, int(order))
    return sobolev_frac_norm(G, order)


# ---------------------------------------------------------------- gluing functions


def _bump_raw(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = (u > 0) & (u < 1)
    out[m] = np.exp(-1.0 / (u[m] * (1.0 - u[m])))
    return out


@lru_cache(maxsize=1)
def _bump_tables():
    mass, _ = integrate.quad(lambda x: float(_bump_raw(x)), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    grid = np.linspace(0.0, 1.0, 8001)
    vals = _bump_raw(grid) / mass
    cum = integrate.cumulative_simpson(vals, x=grid, initial=0.0)
    cum /= cum[-1]
    return 1.0 / mass, CubicSpline(grid, cum)


def bump_a():
    """Normalised bump ``c exp(-1/(u(1-u)))`` on (0, 1)."""
    c, _ = _bump_tables()
    return lambda u: c * _bump_raw(u)


def _bump_cdf(s):
    _, spline = _bump_tables()
    s = np.asarray(s, dtype=float)
    return np.where(s <= 0, 0.0, np.where(s >= 1, 1.0, spline(np.clip(s, 0.0, 1.0))))


def psi_glue(alpha: float, beta_param: float):
    """``u phi(u)`` for u > 0 with ``phi`` a smooth step from 1 on (-inf, beta]
    to 0 on [beta + 1/alpha, inf); zero for u <= 0."""
    if not 0 < beta_param < 1:
        raise ValueError("beta_param must lie in (0, 1)")
    if not alpha > 1.0 / (1.0 - beta_param):
        raise ValueError("alpha must exceed 1/(1 - beta_param)")

    def psi(u):
        u = np.asarray(u, dtype=float)
        phi = 1.0 - _bump_cdf(alpha * (u - beta_param))
        out = np.where(u > 0, u * phi, 0.0)
        return float(out) if out.ndim == 0 else out

    return psi


def tanaka(eps: float):
    """Convex C^1 approximation of ``max(u, 0)``: 0, ``u^2/(2 eps)``, ``u - eps/2``."""
    if not eps > 0:
        raise ValueError("eps must be positive")

    def h(u):
        u = np.asarray(u, dtype=float)
        out = np.where(u <= 0, 0.0, np.where(u <= eps, u * u / (2 * eps), u - eps / 2))
        return float(out) if out.ndim == 0 else out

    return h


def cutoff_Phi(n: int):
    """Even cutoff: ``int_0^{n|u|} a`` on [-1/n, 1/n] and 1 outside."""
    if not n >= 1:
        raise ValueError("n must be positive")

    def phi(u):
        out = _bump_cdf(n * np.abs(np.asarray(u, dtype=float)))
        return float(out) if out.ndim == 0 else out

    return phi
