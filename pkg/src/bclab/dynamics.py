"""Time integration of the drift / exchange / heat-bath dynamics.

One microscopic substep of length ``dt`` is the symmetric composition

    drift(dt/2) -> exchange(dt) -> bath(dt) -> drift(dt/2)

The inner loop runs in numba.  Random numbers are drawn in numpy from one
independent stream per purpose, so the realised path does not depend on how
the substeps are grouped into chunks (per-step observation or not).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .model import ChainState, ModelParams, ParameterError, derive_params, frame_speed, sample_gibbs

logger = logging.getLogger(__name__)
logging.getLogger("numba").setLevel(logging.WARNING)

CHECKPOINT_VERSION = 1
STREAM_NAMES = ("init", "exchange_count", "exchange_site", "bath_normal", "bath_uniform", "bath_gamma")

# MALA substep size and the point beyond which the bath site is redrawn from
# its stationary law, both in units of 1/beta^2
BATH_SUBSTEP = 0.05
BATH_RESAMPLE = 80.0


class NumericalBlowupError(RuntimeError):
    def __init__(self, site: int, tau: float, last_good: ChainState | None = None):
        super().__init__(f"non-finite or non-positive energy at site {site}, tau={tau:.6g}")
        self.site = site
        self.tau = tau
        self.last_good = last_good


@dataclass
class IntegratorConfig:
    t_macro_max: float = 0.5
    dt_micro: float | None = None
    exchange_mode: str = "event"
    bath_enabled: bool = True
    sample_dt: float | None = None
    window_buffer: float = 10.0

    def __post_init__(self):
        if self.exchange_mode not in ("event", "tau-leap"):
            raise ParameterError(f"unknown exchange mode {self.exchange_mode!r}")
        if self.dt_micro is not None and not self.dt_micro > 0:
            raise ParameterError("dt_micro must be positive")
        if not self.t_macro_max > 0:
            raise ParameterError("t_macro_max must be positive")
        if not self.window_buffer > 0:
            raise ParameterError("window_buffer must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EventLog:
    exchange_count: int = 0
    bath_steps: int = 0
    bath_accepted: int = 0
    bath_trajectory: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def default_dt(p: ModelParams) -> float:
    """Default microscopic substep.

    Bounds the exchange rate per bond per step by 0.1 and the drift increment
    of ``log xi`` by 0.01 at a site of size ``rho + 4 sigma``.
    """
    d = derive_params(p)
    dt = 0.1 / p.gamma
    if p.alpha != 0:
        big_site = d.rho + 4.0 * d.sigma
        dt = min(dt, 0.01 * p.n ** p.kappa / (abs(p.alpha) * big_site))
    return dt


def window_length(p: ModelParams, cfg: IntegratorConfig) -> int:
    """Torus length ``2 * ceil(B * n)``; the frame coordinate is wrapped on it."""
    return max(4, 2 * math.ceil(cfg.window_buffer * p.n))


def bath_site(tau: float, p: ModelParams, length: int | None = None) -> int:
    """Lattice index of the heat-bath site at microscopic time ``tau``."""
    if tau < 0:
        raise ParameterError("tau must be nonnegative")
    site = -math.floor(frame_speed(p) * tau)
    if length is not None:
        site %= length
    return int(site)


class RandomStreams:
    """Independent PCG64 streams, one per random purpose, for one replica."""

    def __init__(self, seed=0, replica=None):
        if isinstance(seed, np.random.SeedSequence):
            root = seed
        else:
            if replica is None:
                key = ()
            elif isinstance(replica, tuple):
                key = tuple(int(k) for k in replica)
            else:
                key = (int(replica),)
            root = np.random.SeedSequence(int(seed), spawn_key=key)
        children = root.spawn(len(STREAM_NAMES))
        self.gens = {name: np.random.Generator(np.random.PCG64(c)) for name, c in zip(STREAM_NAMES, children)}

    def __getitem__(self, name) -> np.random.Generator:
        return self.gens[name]

    def get_state(self) -> dict:
        return {k: g.bit_generator.state for k, g in self.gens.items()}

    def set_state(self, state: dict):
        for k, s in state.items():
            self.gens[k].bit_generator.state = s


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _drift(sites, mid, old, a, h):
    # explicit midpoint in log coordinates; positivity is automatic
    L = sites.size
    for i in range(L):
        old[i] = sites[i]
    for i in range(L):
        mid[i] = old[i] * math.exp(0.5 * h * a * (old[(i + 1) % L] - old[i - 1]))
    for i in range(L):
        sites[i] = old[i] * math.exp(h * a * (mid[(i + 1) % L] - mid[i - 1]))


@njit(cache=True)
def _swap_events(sites, bond_u, start, count):
    L = sites.size
    for e in range(start, start + count):
        b = int(bond_u[e] * L)
        if b >= L:
            b = L - 1
        c = b + 1
        if c == L:
            c = 0
        tmp = sites[b]
        sites[b] = sites[c]
        sites[c] = tmp


@njit(cache=True)
def _swap_sublattice(sites, parity, coin):
    L = sites.size
    first = 0 if coin < 0.5 else 1
    swaps = 0
    for sweep in range(2):
        start = first if sweep == 0 else 1 - first
        for b in range(start, L, 2):
            if parity[b] & 1:
                c = b + 1
                if c == L:
                    c = 0
                tmp = sites[b]
                sites[b] = sites[c]
                sites[c] = tmp
                swaps += 1
    return swaps


@njit(cache=True)
def _mala(x, h, m, lam, beta, normals, uniforms, offset):
    # Metropolis-adjusted Langevin steps targeting x^lam exp(-beta x) on (0, inf)
    accepted = 0
    sq = math.sqrt(2.0 * h)
    for i in range(m):
        g = lam / x - beta
        y = x + h * g + sq * normals[offset + i]
        if y <= 0.0:
            continue
        gy = lam / y - beta
        log_ratio = lam * (math.log(y) - math.log(x)) - beta * (y - x)
        fwd = y - x - h * g
        bwd = x - y - h * gy
        log_ratio += (fwd * fwd - bwd * bwd) / (4.0 * h)
        if math.log(uniforms[offset + i]) < log_ratio:
            x = y
            accepted += 1
    return x, accepted


@njit(cache=True)
def _local_rows(sites, b, frac, off, w, kind, lam, beta, rho, out):
    # f_j = sum_k w[j, k] g_kind(xi_{b + off_k}); w[1] applies when the frame shift is integral
    L = sites.size
    wk = w[1] if frac == 0.0 else w[0]
    for j in range(out.size):
        acc = 0.0
        for k in range(off.size):
            c = wk[j, k]
            if c != 0.0:
                x = sites[(b + off[k]) % L]
                acc += c * ((lam / x - beta) if kind[j] == 1 else (x - rho))
        out[j] = acc


@njit(cache=True)
def _advance(sites, n_steps, tau0, k0, dt, a, v, tau_leap, counts, bond_u, parity, coins,
             bath_on, m_sub, h_sub, resample, lam, beta, normals, uniforms, gammas, bath_sites,
             loc_off, loc_w, loc_kind, loc_val, loc_sup, ds, rho):
    L = sites.size
    mid = np.empty(L)
    old = np.empty(L)
    f = np.empty(loc_val.size)
    ptr = 0
    swaps = 0
    accepted = 0
    for j in range(n_steps):
        tau = tau0 + (k0 + j) * dt
        shift = v * tau
        fl = math.floor(shift)
        b = (-int(fl)) % L
        if loc_val.size:
            # left-point rule: integrand at the start of the substep
            _local_rows(sites, b, shift - fl, loc_off, loc_w, loc_kind, lam, beta, rho, f)
            for r in range(f.size):
                loc_val[r] += f[r] * ds
        if a != 0.0:
            _drift(sites, mid, old, a, 0.5 * dt)
        if tau_leap:
            swaps += _swap_sublattice(sites, parity[j], coins[j])
        else:
            _swap_events(sites, bond_u, ptr, counts[j])
            ptr += counts[j]
            swaps += counts[j]
        if bath_on:
            bath_sites[j] = b
            if resample:
                sites[b] = gammas[j]
            else:
                x, acc = _mala(sites[b], h_sub, m_sub, lam, beta, normals, uniforms, j * m_sub)
                sites[b] = x
                accepted += acc
        if a != 0.0:
            _drift(sites, mid, old, a, 0.5 * dt)
        for i in range(L):
            s = sites[i]
            if not (s > 0.0 and s < np.inf):
                return j, i, swaps, accepted
        for r in range(loc_val.size):
            sq = loc_val[r] * loc_val[r]
            if sq > loc_sup[r]:
                loc_sup[r] = sq
    return -1, -1, swaps, accepted


# ---------------------------------------------------------------- single operators


def drift_step(state: ChainState, p: ModelParams, dt: float) -> ChainState:
    """Advance the Hamiltonian drift alone by ``dt`` (microscopic units)."""
    out = state.copy()
    a = p.alpha * p.n ** (-p.kappa)
    if a != 0.0 and dt != 0.0:
        sites = out.sites
        _drift(sites, np.empty_like(sites), np.empty_like(sites), a, dt)
        bad = np.flatnonzero(~(np.isfinite(sites) & (sites > 0)))
        if bad.size:
            raise NumericalBlowupError(int(bad[0]), state.tau, state)
    return out


def exchange_step(state: ChainState, p: ModelParams, dt: float, rng: np.random.Generator,
                  mode: str = "event") -> tuple[ChainState, int]:
    """Apply the exchange noise over ``dt``; returns the new state and the swap count."""
    out = state.copy()
    L = out.length
    if mode == "event":
        count = int(rng.poisson(p.gamma * L * dt))
        _swap_events(out.sites, rng.random(count), 0, count)
        return out, count
    if p.gamma * dt > 0.1:
        raise ParameterError("tau-leap mode requires gamma*dt <= 0.1")
    parity = (rng.poisson(p.gamma * dt, size=L) & 1).astype(np.uint8)
    count = _swap_sublattice(out.sites, parity, rng.random())
    return out, int(count)


def _bath_plan(p: ModelParams, dt: float) -> tuple[bool, int, float]:
    h = p.n ** (-p.delta) * dt
    scale = p.beta * p.beta
    if h * scale > BATH_RESAMPLE * (p.lam + 1.0):
        return True, 0, h
    m = max(1, math.ceil(h * scale / BATH_SUBSTEP))
    return False, m, h / m


def bath_step(state: ChainState, p: ModelParams, dt: float, tau: float,
              rng: np.random.Generator) -> ChainState:
    """Langevin heat-bath move of the single site under the bath at ``tau``."""
    out = state.copy()
    b = bath_site(tau, p, out.length)
    resample, m, h = _bath_plan(p, dt)
    if h == 0.0:
        return out
    if resample:
        out.sites[b] = max(rng.gamma(p.lam + 1.0, 1.0 / p.beta), np.finfo(float).tiny)
    else:
        normals = rng.standard_normal(m)
        uniforms = rng.random(m)
        out.sites[b], _ = _mala(out.sites[b], h, m, p.lam, p.beta, normals, uniforms, 0)
    return out


# ---------------------------------------------------------------- observation plumbing


class RunContext:
    """Geometry of the current step point, shared by all observers."""

    def __init__(self, p: ModelParams, length: int, dt: float, bath_active: bool = True):
        self.p = p
        self.bath_active = bath_active
        self.derived = derive_params(p)
        self.length = length
        self.dt = dt
        self.ds = dt / p.n ** 2
        self.speed = frame_speed(p)
        self.index = np.arange(length, dtype=np.float64)
        self.set_step(0, 0.0)

    def set_step(self, step: int, tau: float):
        self.step = step
        self.tau = tau
        self.t = tau / self.p.n ** 2
        shift = self.speed * tau
        fl = math.floor(shift)
        self.frac = shift - fl
        self.bath_index = int(-fl % self.length)
        self.shift_mod = shift % self.length
        self._coords = None

    @property
    def frame_coords(self) -> np.ndarray:
        """Frame coordinate ``(x + c_n t)/n`` of every window site, wrapped to [-L/2, L/2)."""
        if self._coords is None:
            L = self.length
            w = np.mod(self.index + (self.shift_mod + 0.5 * L), L) - 0.5 * L
            self._coords = w / self.p.n
        return self._coords


class Observer:
    """Base observer.  ``observe`` is called at step points, ``record`` at sampling times."""

    name = "observer"
    per_step = False

    def observe(self, state: ChainState, ctx: RunContext):
        pass

    def record(self, ctx: RunContext) -> dict:
        return {}

    def get_state(self) -> dict:
        return {}

    def set_state(self, state: dict):
        pass


class LocalIntegralObserver(Observer):
    """Time integrals of fixed combinations of site functions next to the bath site,
    accumulated inside the compiled loop.

    Row ``j`` integrates ``sum_k weights[j, k] g_j(xi_{z + offsets[k]})`` with ``z``
    the bath site and ``g_j(x) = x - rho`` (kind 0) or ``lambda/x - beta``
    (kind 1).  ``weights_integral`` replaces ``weights`` at instants where the
    frame shift is an integer.  Records carry the integrals and the running
    maxima of their squares.
    """

    per_step = False
    fused = True

    def __init__(self, name: str, offsets, weights, kinds, weights_integral=None, labels=None):
        self.name = name
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        w = np.atleast_2d(np.asarray(weights, dtype=float))
        w0 = w if weights_integral is None else np.atleast_2d(np.asarray(weights_integral, dtype=float))
        if w.shape != w0.shape or w.shape[1] != self.offsets.size:
            raise ParameterError("weights must have shape (rows, len(offsets))")
        self.weights = np.ascontiguousarray(np.stack((w, w0)))
        self.kinds = np.ascontiguousarray(kinds, dtype=np.int64)
        if self.kinds.size != w.shape[0]:
            raise ParameterError("one kind per row is required")
        self.labels = list(labels) if labels is not None else list(range(w.shape[0]))
        self.value = np.zeros(w.shape[0])
        self.sup_sq = np.zeros(w.shape[0])

    def record(self, ctx):
        return {"t": ctx.t, "integral": self.value.tolist(), "sup_sq": self.sup_sq.tolist()}

    def get_state(self):
        return {"value": self.value.tolist(), "sup_sq": self.sup_sq.tolist()}

    def set_state(self, s):
        self.value = np.array(s["value"], dtype=float)
        self.sup_sq = np.array(s["sup_sq"], dtype=float)


def _merge_fused(observers):
    fused = [o for o in observers if getattr(o, "fused", False)]
    if not fused:
        return fused, np.zeros(1, dtype=np.int64), np.zeros((2, 0, 1)), np.zeros(0, dtype=np.int64)
    lo = min(int(o.offsets.min()) for o in fused)
    hi = max(int(o.offsets.max()) for o in fused)
    off = np.arange(lo, hi + 1, dtype=np.int64)
    rows = sum(o.kinds.size for o in fused)
    w = np.zeros((2, rows, off.size))
    kinds = np.concatenate([o.kinds for o in fused])
    r = 0
    for o in fused:
        m = o.kinds.size
        w[:, r:r + m, o.offsets - lo] = o.weights
        r += m
    return fused, off, w, kinds


@dataclass
class Trajectory:
    params: ModelParams
    config: IntegratorConfig
    times: list
    records: dict
    final_state: ChainState
    log: EventLog
    dt: float

    def series(self, name: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records[name]])


def _sampling_stride(p: ModelParams, cfg: IntegratorConfig, dt: float) -> int:
    if cfg.sample_dt is None:
        return 0
    return max(1, int(round(cfg.sample_dt * p.n ** 2 / dt)))


def plan_steps(p: ModelParams, cfg: IntegratorConfig) -> tuple[int, float]:
    dt_target = cfg.dt_micro if cfg.dt_micro is not None else default_dt(p)
    horizon = cfg.t_macro_max * p.n ** 2
    n_steps = max(1, math.ceil(horizon / dt_target - 1e-9))
    dt = horizon / n_steps
    if cfg.exchange_mode == "tau-leap" and p.gamma * dt > 0.1 + 1e-12:
        raise ParameterError("tau-leap mode requires gamma*dt_micro <= 0.1")
    return n_steps, dt


def run(p: ModelParams, cfg: IntegratorConfig, observers=(), rng=None, state: ChainState | None = None,
        checkpoint_path=None, checkpoint_every: int = 0, on_record=None,
        _resume: dict | None = None) -> Trajectory:
    """Integrate the dynamics up to ``cfg.t_macro_max`` (macroscopic units).

    ``rng`` is a :class:`RandomStreams`, an integer seed or ``None`` (seed 0).
    Observers are notified at every substep if any of them asks for it, and at
    sampling times otherwise.  ``on_record(t, records)`` is called at each
    sampling time with the fresh records.
    """
    names = [o.name for o in observers]
    if len(set(names)) != len(names):
        raise ParameterError("observer names must be pairwise distinct")
    streams = rng if isinstance(rng, RandomStreams) else RandomStreams(0 if rng is None else rng)
    n_steps, dt = plan_steps(p, cfg)
    L = window_length(p, cfg)
    stride = _sampling_stride(p, cfg, dt)
    per_step = any(o.per_step for o in observers)

    if _resume is not None:
        state = _resume["state"]
        streams.set_state(_resume["streams"])
        log = EventLog(**_resume["log"])
        for o in observers:
            o.set_state(_resume["observers"][o.name])
        times = list(_resume["times"])
        records = {k: list(v) for k, v in _resume["records"].items()}
    else:
        if state is None:
            state = sample_gibbs(p, L, streams["init"])
        else:
            state = state.copy()
            if state.length != L:
                raise ParameterError(f"state length {state.length} differs from window length {L}")
        state.meta.setdefault("tau0", state.tau)
        state.step = 0
        log = EventLog()
        times, records = [], {o.name: [] for o in observers}
    tau0 = state.meta["tau0"]
    a = p.alpha * p.n ** (-p.kappa)
    v = frame_speed(p)
    resample, m_sub, h_sub = _bath_plan(p, dt)
    bath_on = cfg.bath_enabled and h_sub > 0
    ctx = RunContext(p, L, dt, bath_on)
    tau_leap = cfg.exchange_mode == "tau-leap"
    fused, loc_off, loc_w, loc_kind = _merge_fused(observers)
    sizes = [o.kinds.size for o in fused]
    rho = ctx.derived.rho

    def is_sample(k):
        return k == n_steps or (stride and k % stride == 0)

    def notify(k, sample):
        ctx.set_step(k, state.tau)
        for o in observers:
            if o.per_step or sample:
                o.observe(state, ctx)
        if sample:
            times.append(ctx.t)
            fresh = {}
            for o in observers:
                rec = o.record(ctx)
                rec.setdefault("t", ctx.t)
                records[o.name].append(rec)
                fresh[o.name] = rec
            if on_record is not None:
                on_record(ctx.t, fresh)

    k = state.step
    if _resume is None:
        notify(0, True)
        if bath_on:
            log.bath_trajectory.append((state.tau, ctx.bath_index))
    n_samples_done = len(times)
    empty_f = np.empty(0)
    empty_i = np.empty(0, dtype=np.int64)
    empty_p = np.empty((0, 0), dtype=np.uint8)
    while k < n_steps:
        if per_step:
            stop = k + 1
        elif stride:
            stop = min(n_steps, (k // stride + 1) * stride)
        else:
            stop = n_steps
        m = stop - k
        if tau_leap:
            parity = (streams["exchange_count"].poisson(p.gamma * dt, size=(m, L)) & 1).astype(np.uint8)
            coins = streams["exchange_site"].random(m)
            counts, bond_u = empty_i, empty_f
        else:
            counts = streams["exchange_count"].poisson(p.gamma * L * dt, size=m).astype(np.int64)
            bond_u = streams["exchange_site"].random(int(counts.sum()))
            parity, coins = empty_p, empty_f
        normals = uniforms = gammas = empty_f
        if bath_on:
            if resample:
                gammas = np.maximum(streams["bath_gamma"].gamma(p.lam + 1.0, 1.0 / p.beta, size=m),
                                    np.finfo(float).tiny)
            else:
                normals = streams["bath_normal"].standard_normal(m * m_sub)
                uniforms = streams["bath_uniform"].random(m * m_sub)
        bsites = np.full(m, -1, dtype=np.int64)
        last_sites = state.sites.copy()
        loc_val = np.concatenate([o.value for o in fused]) if fused else empty_f
        loc_sup = np.concatenate([o.sup_sq for o in fused]) if fused else empty_f
        bad_step, bad_site, swaps, acc = _advance(
            state.sites, m, tau0, k, dt, a, v, tau_leap, counts, bond_u, parity, coins,
            bath_on, m_sub, h_sub, resample, p.lam, p.beta, normals, uniforms, gammas, bsites,
            loc_off, loc_w, loc_kind, loc_val, loc_sup, ctx.ds, rho)
        r = 0
        for o, size in zip(fused, sizes):
            o.value = loc_val[r:r + size].copy()
            o.sup_sq = loc_sup[r:r + size].copy()
            r += size
        if bad_step >= 0:
            tau_bad = tau0 + (k + bad_step) * dt
            last_good = ChainState(last_sites, tau0 + k * dt, step=k, meta=dict(state.meta))
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, p, cfg, last_good, streams, log, observers, times, records)
            raise NumericalBlowupError(int(bad_site), tau_bad, last_good)
        log.exchange_count += int(swaps)
        if bath_on:
            log.bath_steps += m * max(m_sub, 1)
            log.bath_accepted += int(acc)
            last = log.bath_trajectory[-1][1] if log.bath_trajectory else -1
            change = np.flatnonzero(np.diff(np.concatenate(([last], bsites))))
            for j in change:
                log.bath_trajectory.append((tau0 + (k + int(j)) * dt, int(bsites[j])))
        k = stop
        state.step = k
        state.tau = tau0 + k * dt
        notify(k, is_sample(k))
        if checkpoint_path is not None and checkpoint_every and is_sample(k):
            if (len(times) - n_samples_done) % checkpoint_every == 0:
                save_checkpoint(checkpoint_path, p, cfg, state, streams, log, observers, times, records)
    return Trajectory(p, cfg, times, records, state, log, dt)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, p, cfg, state, streams, log, observers=(), times=(), records=None):
    """Write a JSON checkpoint; floats are stored via ``repr`` so reloads are bit-exact."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "params": p.as_dict(),
        "config": cfg.as_dict(),
        "tau": state.tau,
        "step": state.step,
        "tau0": state.meta.get("tau0", 0.0),
        "sites": state.sites.tolist(),
        "rng": streams.get_state(),
        "log": log.as_dict(),
        "observers": {o.name: o.get_state() for o in observers},
        "times": list(times),
        "records": records or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    state = ChainState(np.array(doc["sites"], dtype=np.float64), tau=doc["tau"], step=doc["step"],
                       meta={"tau0": doc["tau0"]})
    log = doc["log"]
    log["bath_trajectory"] = [tuple(x) for x in log["bath_trajectory"]]
    return {
        "params": ModelParams.from_dict(doc["params"]),
        "config": IntegratorConfig(**doc["config"]),
        "state": state,
        "streams": doc["rng"],
        "log": log,
        "observers": doc["observers"],
        "times": doc["times"],
        "records": doc["records"],
    }


def resume(path, observers=(), checkpoint_every: int = 0, on_record=None) -> Trajectory:
    """Continue a run from a checkpoint written by :func:`run`."""
    doc = load_checkpoint(path)
    return run(doc["params"], doc["config"], observers, RandomStreams(0), checkpoint_path=path,
               checkpoint_every=checkpoint_every, on_record=on_record, _resume=doc)
