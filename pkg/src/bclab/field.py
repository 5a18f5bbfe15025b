"""Moving-frame fluctuation field, Dynkin decomposition and time-integral observers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .dynamics import LocalIntegralObserver, Observer, RunContext, Trajectory
from .model import ChainState, ModelParams, derive_params, frame_speed
from .testfn import TestFunction, required_space

TERM_NAMES = ("laplacian_term", "nonlinear_term", "laplacian_correction", "frame_mismatch", "bath_term")


@dataclass
class GeneratorTerms:
    laplacian_term: float
    nonlinear_term: float
    laplacian_correction: float
    frame_mismatch: float
    bath_term: float

    @property
    def total(self) -> float:
        return (self.laplacian_term + self.nonlinear_term + self.laplacian_correction
                + self.frame_mismatch + self.bath_term)

    def as_dict(self) -> dict:
        return asdict(self)


def _context_for(state: ChainState, t_macro: float, p: ModelParams) -> RunContext:
    tau = t_macro * p.n ** 2
    if abs(tau - state.tau) > 1e-9 * max(1.0, tau):
        raise ValueError("state.tau does not match t_macro * n^2")
    ctx = RunContext(p, state.length, 1.0)
    ctx.set_step(0, tau)
    return ctx


def _field(sites, u, H, p: ModelParams, rho: float) -> float:
    return float(H(u) @ (sites - rho)) / math.sqrt(p.n)


@njit(cache=True)
def _lattice_sums(sites, h0, h1, rho, n):
    # one pass over the torus; neighbours wrap, the seam sits where H is negligible
    L = sites.size
    s_field = 0.0
    s_lap = 0.0
    s_quad = 0.0
    s_frame = 0.0
    s_qv = 0.0
    for i in range(L):
        ip = i + 1 if i + 1 < L else 0
        im = i - 1 if i > 0 else L - 1
        xb = sites[i] - rho
        xn = sites[ip] - rho
        grad = n * (h0[ip] - h0[i])
        lap = n * n * (h0[ip] + h0[im] - 2.0 * h0[i])
        s_field += h0[i] * xb
        s_lap += lap * xb
        s_quad += grad * xb * xn
        s_frame += (h1[i] - grad) * xb
        d = xn - xb
        s_qv += grad * grad * d * d
    return s_field, s_lap, s_quad, s_frame, s_qv


def _terms(sites, u, H, p: ModelParams, ctx: RunContext, bath_on: bool):
    """Field value, the five generator terms (as a tuple) and the QV integrand."""
    n = p.n
    rho = ctx.derived.rho
    h0, h1 = H.value_and_slope(u)
    s_field, s_lap, s_quad, s_frame, s_qv = _lattice_sums(sites, h0, h1, rho, float(n))
    rn = math.sqrt(n)
    lap_term = p.gamma * s_lap / rn
    a = p.alpha
    if a != 0.0:
        nonlinear = -a * n ** (0.5 - p.kappa) * s_quad
        lap_corr = a * rho * n ** (-0.5 - p.kappa) * s_lap
        frame = 2.0 * a * rho * n ** (0.5 - p.kappa) * s_frame
    else:
        nonlinear = lap_corr = frame = 0.0
    qv = p.gamma / n * s_qv
    bath = 0.0
    if bath_on:
        hb = float(H(ctx.frac / n))
        bath = n ** (1.5 - p.delta) * hb * (p.lam / sites[ctx.bath_index] - p.beta)
        qv += 2.0 * n ** (1.0 - p.delta) * hb * hb
    return s_field / rn, (lap_term, nonlinear, lap_corr, frame, bath), qv


def generator_action(state: ChainState, H: TestFunction, t_macro: float, p: ModelParams,
                     bath_enabled: bool = True) -> GeneratorTerms:
    """The five pieces of ``(d/ds + n^2 L) Y_s(H)`` on the current state."""
    ctx = _context_for(state, t_macro, p)
    _, terms, _ = _terms(state.sites, ctx.frame_coords, H, p, ctx, bath_enabled)
    return GeneratorTerms(*terms)


def qv_integrand(state: ChainState, H: TestFunction, t_macro: float, p: ModelParams,
                 bath_enabled: bool = True) -> float:
    """Integrand of the predictable quadratic variation of the Dynkin martingale."""
    ctx = _context_for(state, t_macro, p)
    _, _, qv = _terms(state.sites, ctx.frame_coords, H, p, ctx, bath_enabled)
    return qv


def off_theory(H: TestFunction, p: ModelParams) -> bool:
    """True when ``H`` lies outside the test space matching ``delta``."""
    return not H.in_space(required_space(p.delta))


class FieldObserver(Observer):
    """Field values and, optionally, the Dynkin decomposition for one test function.

    With ``dynkin=True`` the generator integral, predictable quadratic
    variation and realised quadratic variation are accumulated by left-point
    sums at every substep.
    """

    def __init__(self, H: TestFunction, name: str | None = None, dynkin: bool = True,
                 bath_enabled: bool = True):
        self.H = H
        self.name = name or f"field:{H.ident}"
        self.per_step = dynkin
        self.dynkin = dynkin
        self.bath_enabled = bath_enabled
        self._off = None
        self.reset()

    def reset(self):
        self.y0 = None
        self.y = 0.0
        self.prev = None
        self.integrals = [0.0] * len(TERM_NAMES)
        self.total_integral = 0.0
        self.qv = 0.0
        self.rqv = 0.0

    def observe(self, state, ctx):
        if self._off is None:
            self._off = off_theory(self.H, ctx.p)
        u = ctx.frame_coords
        if not self.dynkin:
            self.y = _field(state.sites, u, self.H, ctx.p, ctx.derived.rho)
            if self.y0 is None:
                self.y0 = self.y
            return
        bath_on = self.bath_enabled and ctx.bath_active
        y, terms, qv = _terms(state.sites, u, self.H, ctx.p, ctx, bath_on)
        if self.y0 is None:
            self.y0 = y
        if self.prev is not None:
            p_terms, p_total, p_qv = self.prev
            ds = ctx.ds
            for i, v in enumerate(p_terms):
                self.integrals[i] += v * ds
            self.total_integral += p_total * ds
            self.qv += p_qv * ds
            dm = y - self.y - p_total * ds
            self.rqv += dm * dm
        self.prev = (terms, sum(terms), qv)
        self.y = y

    def record(self, ctx):
        rec = {"t": ctx.t, "H_id": self.H.ident, "Y": self.y, "bath_site": ctx.bath_index}
        if self.dynkin:
            rec.update({
                "M": self.y - self.y0 - self.total_integral,
                "QV": self.qv,
                "RQV": self.rqv,
                "integral": self.total_integral,
                "terms": dict(zip(TERM_NAMES, self.integrals)),
                "off_theory": bool(self._off),
            })
        return rec

    def get_state(self):
        return {"y0": self.y0, "y": self.y, "prev": self.prev, "integrals": self.integrals,
                "total_integral": self.total_integral, "qv": self.qv, "rqv": self.rqv, "off": self._off}

    def set_state(self, s):
        self.y0, self.y = s["y0"], s["y"]
        self.prev = None if s["prev"] is None else (tuple(s["prev"][0]), s["prev"][1], s["prev"][2])
        self.integrals = list(s["integrals"])
        self.total_integral, self.qv, self.rqv = s["total_integral"], s["qv"], s["rqv"]
        self._off = s["off"]


def dynkin_martingale(traj: Trajectory, name: str) -> np.ndarray:
    recs = traj.records.get(name)
    if not recs or "M" not in recs[0]:
        raise KeyError(f"trajectory carries no generator accumulator for {name!r}")
    return np.array([r["M"] for r in recs])


def predictable_qv(traj: Trajectory, name: str) -> np.ndarray:
    recs = traj.records.get(name)
    if not recs or "QV" not in recs[0]:
        raise KeyError(f"trajectory carries no quadratic-variation accumulator for {name!r}")
    return np.array([r["QV"] for r in recs])


class TimeIntegralObserver(Observer):
    """Left-point integral ``int_0^t f(state_s) ds`` with its running sup of squares.

    ``f`` may return a scalar or a fixed-length vector.
    """

    per_step = True

    def __init__(self, name: str, integrand):
        self.name = name
        self.integrand = integrand
        self.value = 0.0
        self.sup_sq = 0.0
        self.prev = None

    def observe(self, state, ctx):
        if self.prev is not None:
            self.value = self.value + self.prev * ctx.ds
            self.sup_sq = np.maximum(self.sup_sq, self.value * self.value)
        f = self.integrand(state, ctx)
        self.prev = np.asarray(f, dtype=float) if np.ndim(f) else float(f)

    def record(self, ctx):
        return {"t": ctx.t, "integral": _plain(self.value), "sup_sq": _plain(self.sup_sq)}

    def get_state(self):
        return {"value": _plain(self.value), "sup_sq": _plain(self.sup_sq), "prev": _plain(self.prev)}

    def set_state(self, s):
        self.value, self.sup_sq, self.prev = (_arr(s[k]) for k in ("value", "sup_sq", "prev"))


def _plain(x):
    if x is None:
        return None
    return x.tolist() if isinstance(x, np.ndarray) else float(x)


def _arr(x):
    return np.asarray(x, dtype=float) if isinstance(x, list) else x


class MomentsObserver(Observer):
    """Window mean, variance, second moment about rho and lag-one covariance."""

    name = "moments"

    def observe(self, state, ctx):
        s = state.sites
        self._m = float(s.mean())
        c = s - self._m
        self._v = float(c @ c) / s.size
        self._c1 = float(c[:-1] @ c[1:] + c[-1] * c[0]) / s.size
        d = s - ctx.derived.rho
        self._m2 = float(d @ d) / s.size

    def record(self, ctx):
        return {"t": ctx.t, "mean": self._m, "var": self._v, "m2": self._m2, "lag1": self._c1}


# ---------------------------------------------------------------- box averages and local integrands


def box_averages(sites: np.ndarray, ell: int, rho: float) -> np.ndarray:
    """``ell^-1 sum_{y=x+1}^{x+ell} (xi_y - rho)`` for every torus site ``x``."""
    L = sites.size
    if not 1 <= ell < L:
        raise ValueError("box length must satisfy 1 <= ell < window length")
    ext = np.concatenate((sites, sites[:ell + 1])) - rho
    cs = np.concatenate(([0.0], np.cumsum(ext)))
    x = np.arange(L)
    return (cs[x + ell + 1] - cs[x + 1]) / ell


def box_average(state: ChainState, x: int, eps: float, n: int, rho: float | None = None) -> float:
    """Box average of the centred energies to the right of site ``x`` (torus index)."""
    ell = math.floor(eps * n)
    if ell < 1:
        raise ValueError("floor(eps*n) must be at least 1")
    if rho is None:
        raise ValueError("rho is required")
    L = state.length
    idx = (x + 1 + np.arange(ell)) % L
    return float(np.sum(state.sites[idx] - rho)) / ell


def boundary_sites(ctx: RunContext, eps: float, mirrored: bool = False) -> np.ndarray:
    """Torus indices with frame coordinate in (0, eps] (or [-eps, 0) when mirrored)."""
    span = eps * ctx.p.n
    f = ctx.frac
    if mirrored:
        j = np.arange(math.ceil(-span - f), 0)
    else:
        j = np.arange(0 if f > 0 else 1, math.floor(span - f) + 1)
    return (ctx.bath_index + j) % ctx.length


def iota_pairing(state: ChainState, ctx: RunContext, eps: float, mirrored: bool = False) -> float:
    """Field tested against the box kernel of width ``eps`` at the origin."""
    idx = boundary_sites(ctx, eps, mirrored)
    return float(np.sum(state.sites[idx] - ctx.derived.rho)) / (eps * math.sqrt(ctx.p.n))


class BoundaryObserver(Observer):
    """Both orientations of ``sup_t (int_0^t Y_s(iota_eps^0) ds)^2``."""

    per_step = True

    def __init__(self, eps: float, name: str | None = None):
        self.eps = eps
        self.name = name or f"bc:{eps:.6g}"
        self.parts = [TimeIntegralObserver("right", lambda s, c: iota_pairing(s, c, eps)),
                      TimeIntegralObserver("left", lambda s, c: iota_pairing(s, c, eps, True))]

    def observe(self, state, ctx):
        for part in self.parts:
            part.observe(state, ctx)

    def record(self, ctx):
        r, l = (part.record(ctx) for part in self.parts)
        return {"t": ctx.t, "integral": r["integral"], "sup_sq": r["sup_sq"],
                "integral_mirror": l["integral"], "sup_sq_mirror": l["sup_sq"]}

    def get_state(self):
        return {"right": self.parts[0].get_state(), "left": self.parts[1].get_state()}

    def set_state(self, s):
        self.parts[0].set_state(s["right"])
        self.parts[1].set_state(s["left"])


def boundary_functional(traj: Trajectory, eps: float, name: str | None = None) -> tuple[float, float]:
    """``sup_{t<=T} (int_0^t Y_s(iota_eps^0) ds)^2`` and its mirrored variant."""
    name = name or f"bc:{eps:.6g}"
    if name not in traj.records:
        raise KeyError(f"trajectory has no boundary observer {name!r}")
    last = traj.records[name][-1]
    return last["sup_sq"], last["sup_sq_mirror"]


def bath_fluctuation_integrand(state, ctx):
    """``sqrt(n) (xi_z - rho)`` at the bath site."""
    return math.sqrt(ctx.p.n) * (state.sites[ctx.bath_index] - ctx.derived.rho)


def bath_gradient_integrand(state, ctx):
    """``lambda / xi_z - beta`` at the bath site."""
    return ctx.p.lam / state.sites[ctx.bath_index] - ctx.p.beta


def box_replacement_integrand(ell):
    """``ell^-1 sum_{k=1}^{ell} (xi_{z+k} - xi_z)`` with ``z`` the bath site.

    ``ell`` may be a list of box lengths; the integrand is then a vector.
    """
    ells = np.atleast_1d(np.asarray(ell, dtype=np.int64))
    if np.any(ells < 1):
        raise ValueError("box length must be at least 1")
    kmax = int(ells.max())
    offsets = np.arange(1, kmax + 1)
    scalar = np.ndim(ell) == 0

    def f(state, ctx):
        z = ctx.bath_index
        s = state.sites
        cs = np.cumsum(s[(z + offsets) % ctx.length])
        out = cs[ells - 1] / ells - s[z]
        return float(out[0]) if scalar else out

    return f


# compiled counterparts of the integrands above, for long runs


def local_bath_observer(n: int, name: str = "bath") -> LocalIntegralObserver:
    """Rows: ``sqrt(n) (xi_z - rho)`` and ``lambda/xi_z - beta``."""
    return LocalIntegralObserver(name, [0], [[math.sqrt(n)], [1.0]], [0, 1], labels=["fluctuation", "gradient"])


def local_box_observer(ells, name: str = "box") -> LocalIntegralObserver:
    """One row per box length: ``ell^-1 sum_{k=1}^{ell} (xi_{z+k} - xi_z)``."""
    ells = [int(e) for e in ells]
    if min(ells) < 1:
        raise ValueError("box length must be at least 1")
    off = np.arange(0, max(ells) + 1)
    w = np.zeros((len(ells), off.size))
    for j, ell in enumerate(ells):
        w[j, 1:ell + 1] = 1.0 / ell
        w[j, 0] = -1.0
    return LocalIntegralObserver(name, off, w, [0] * len(ells), labels=ells)


def local_boundary_observer(ells, n: int, name: str = "bc") -> LocalIntegralObserver:
    """``Y(iota_eps^0)`` and its mirror for ``eps = ell/n``; rows alternate right, left."""
    ells = [int(e) for e in ells]
    if min(ells) < 1:
        raise ValueError("box length must be at least 1")
    top = max(ells)
    off = np.arange(-top, top + 1)
    w = np.zeros((2 * len(ells), off.size))
    w0 = np.zeros_like(w)
    labels = []
    for j, ell in enumerate(ells):
        c = math.sqrt(n) / ell
        # frame coordinates (k + frac)/n in (0, eps] or [-eps, 0)
        w[2 * j, top:top + ell] = c
        w[2 * j + 1, top - ell:top] = c
        w0[2 * j, top + 1:top + ell + 1] = c
        w0[2 * j + 1, top - ell:top] = c
        labels += [(ell, "right"), (ell, "left")]
    return LocalIntegralObserver(name, off, w, [0] * (2 * len(ells)), weights_integral=w0, labels=labels)


def bg_integrand(psi, eps):
    """``sum_x psi(u_x) (xib_x xib_{x+1} - box_x^2 + sigma^2/ell)`` with ``ell = floor(eps n)``.

    ``eps`` may be a list, giving a vector integrand.
    """
    eps_list = np.atleast_1d(np.asarray(eps, dtype=float))
    scalar = np.ndim(eps) == 0
    cache = {"key": None, "w": None}

    def f(state, ctx):
        n = ctx.p.n
        ells = np.floor(eps_list * n + 1e-9).astype(int)
        if np.any(ells < 1):
            raise ValueError("floor(eps*n) must be at least 1")
        key = (ctx.shift_mod, ctx.length, n)
        if cache["key"] != key:
            cache["key"], cache["w"] = key, psi(ctx.frame_coords)
        w = cache["w"]
        rho = ctx.derived.rho
        xb = state.sites - rho
        pair = float(w[:-1] @ (xb[:-1] * xb[1:]) + w[-1] * xb[-1] * xb[0])
        wsum = float(w.sum())
        out = np.empty(ells.size)
        for j, ell in enumerate(ells):
            box = box_averages(state.sites, int(ell), rho)
            out[j] = pair - float(w @ (box * box)) + ctx.derived.sigma2 / ell * wsum
        return float(out[0]) if scalar else out

    return f


# ---------------------------------------------------------------- quadratic (Burgers) functional


def quadratic_lattice_form(state: ChainState, H: TestFunction, eps: float, ctx: RunContext) -> float:
    """``sum_x grad_n H(u_x) box_x^2`` with the box of ``floor(eps n)`` sites."""
    n = ctx.p.n
    ell = math.floor(eps * n)
    if ell < 1:
        raise ValueError("floor(eps*n) must be at least 1")
    u = ctx.frame_coords
    h0 = H(u)
    grad = n * (np.roll(h0, -1) - h0)
    box = box_averages(state.sites, ell, ctx.derived.rho)
    return float(grad @ (box * box))


def quadratic_field_form(state: ChainState, H: TestFunction, eps: float, ctx: RunContext) -> float:
    """``n^-1 sum_z grad_n H(z/n) Y(iota_eps^{z/n})^2`` with the field pairing computed directly."""
    n = ctx.p.n
    L = ctx.length
    z = np.arange(-(L // 2), L - L // 2)
    u = ctx.frame_coords
    order = np.argsort(u, kind="stable")
    us = u[order]
    xs = state.sites[order] - ctx.derived.rho
    cs = np.concatenate(([0.0], np.cumsum(xs)))
    lo = np.searchsorted(us, z / n, side="right")
    hi = np.searchsorted(us, z / n + eps, side="right")
    y = (cs[hi] - cs[lo]) / (eps * math.sqrt(n))
    grad = n * (H((z + 1) / n) - H(z / n))
    return float(grad @ (y * y)) / n


class QuadraticObserver(Observer):
    """Time integrals of both forms of the quadratic functional."""

    per_step = True

    def __init__(self, H: TestFunction, eps: float, name: str | None = None):
        self.name = name or f"quad:{H.ident}:{eps:.6g}"
        self.lattice = TimeIntegralObserver("lattice", lambda s, c: quadratic_lattice_form(s, H, eps, c))
        self.fieldf = TimeIntegralObserver("field", lambda s, c: quadratic_field_form(s, H, eps, c))

    def observe(self, state, ctx):
        self.lattice.observe(state, ctx)
        self.fieldf.observe(state, ctx)

    def record(self, ctx):
        return {"t": ctx.t, "lattice": self.lattice.value, "field": self.fieldf.value}


def quadratic_functional(traj: Trajectory, name: str) -> np.ndarray:
    recs = traj.records[name]
    return np.array([[r["lattice"], r["field"]] for r in recs])
