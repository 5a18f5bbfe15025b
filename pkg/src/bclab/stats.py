"""Estimators and verdicts: bootstrap scaling fits, white-noise checks,
OU covariance comparisons and the kernel functionals R and S."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

N_BOOT = 1000
LEVEL = 0.95
MIN_REPLICAS = 8


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("at least two samples are needed for a standard error")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def bootstrap_ci(x, stat=np.mean, n_boot: int = N_BOOT, level: float = LEVEL, seed: int = 0):
    """Percentile bootstrap interval for ``stat`` of a 1-d sample."""
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    boots = np.array([stat(x[i]) for i in idx])
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def _ols_slope(lx: np.ndarray, ly: np.ndarray) -> float:
    lxc = lx - lx.mean()
    return float(lxc @ (ly - ly.mean()) / (lxc @ lxc))


def loglog_slope(abscissa, samples, n_boot: int = N_BOOT, level: float = LEVEL, paired: bool = False,
                 seed: int = 0, intercept: bool = False):
    """Least-squares slope of ``log mean(samples[i])`` against ``log abscissa[i]``.

    The interval comes from a bootstrap over replicas: independently at each
    grid point, or jointly when ``paired`` (same replicas reused across points).
    Returns ``(slope, (lo, hi))`` and additionally the intercept when asked.
    """
    x = np.asarray(abscissa, dtype=float)
    groups = [np.asarray(s, dtype=float) for s in samples]
    if len(groups) != x.size or x.size < 2:
        raise ValueError("need one sample per abscissa value and at least two values")
    means = np.array([g.mean() for g in groups])
    if np.any(means <= 0):
        raise ValueError("log-log fit needs positive means")
    lx = np.log(x)
    slope = _ols_slope(lx, np.log(means))
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    if paired:
        size = groups[0].size
        if any(g.size != size for g in groups):
            raise ValueError("paired bootstrap needs equal replica counts")
        stack = np.vstack(groups)
        for b in range(n_boot):
            i = rng.integers(0, size, size)
            m = stack[:, i].mean(axis=1)
            boots[b] = _ols_slope(lx, np.log(np.maximum(m, 1e-300)))
    else:
        for b in range(n_boot):
            m = np.array([g[rng.integers(0, g.size, g.size)].mean() for g in groups])
            boots[b] = _ols_slope(lx, np.log(np.maximum(m, 1e-300)))
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    if intercept:
        return slope, (float(lo), float(hi)), float(np.log(means).mean() - slope * lx.mean())
    return slope, (float(lo), float(hi))


@dataclass
class ScalingReport:
    name: str
    abscissa: list
    means: list
    ses: list
    slope: float
    ci: tuple
    target: float
    replicas: int
    label: str = "n"
    extra: dict = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return self.replicas >= MIN_REPLICAS and self.ci[0] <= self.target <= self.ci[1]

    def rows(self) -> list[dict]:
        return [{"name": self.name, self.label: x, "estimate": m, "se": s, "target_slope": self.target,
                 "slope": self.slope, "ci_lo": self.ci[0], "ci_hi": self.ci[1],
                 "pass": self.verdict} for x, m, s in zip(self.abscissa, self.means, self.ses)]

    def summary(self) -> str:
        return (f"{self.name}: slope {self.slope:+.3f} CI [{self.ci[0]:+.3f}, {self.ci[1]:+.3f}] "
                f"target {self.target:+.3f}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict
        return d


def scaling_report(name: str, abscissa, samples, target: float, label: str = "n",
                   paired: bool = False, seed: int = 0, **extra) -> ScalingReport:
    groups = [np.asarray(s, dtype=float) for s in samples]
    slope, ci = loglog_slope(abscissa, groups, paired=paired, seed=seed)
    stats = [mean_se(g) for g in groups]
    return ScalingReport(name, [float(a) for a in abscissa], [m for m, _ in stats], [s for _, s in stats],
                         slope, ci, float(target), min(g.size for g in groups), label, dict(extra))


REPLACEMENT_TARGETS = {"box_ell": 1.0, "box_n": -2.0}


def replacement_scaling(abscissa, samples, mode: str, delta: float = 0.0, label: str | None = None,
                        seed: int = 0, paired: bool = False) -> ScalingReport:
    """Slope check for the replacement bounds.

    ``mode``: ``box_ell`` (slope +1 in the box length), ``box_n`` (-2 in n),
    ``boundary`` (delta - 1 in n) or ``bath_h1`` (delta - 2 in n).
    """
    if len(abscissa) < 3 and mode != "box_ell":
        raise ValueError("n grid needs at least three points")
    if mode in REPLACEMENT_TARGETS:
        target = REPLACEMENT_TARGETS[mode]
    elif mode == "boundary":
        target = delta - 1.0
    elif mode == "bath_h1":
        target = delta - 2.0
    else:
        raise ValueError(f"unknown replacement mode {mode!r}")
    label = label or ("ell" if mode == "box_ell" else "n")
    return scaling_report(f"replacement:{mode}", abscissa, samples, target, label=label, seed=seed,
                          paired=paired, delta=delta)


# ---------------------------------------------------------------- white noise


@dataclass
class WhiteNoiseVerdict:
    z: dict
    n_samples: int
    threshold: float = 3.0

    @property
    def verdict(self) -> bool:
        return all(abs(v) <= self.threshold for v in self.z.values())


def whitenoise_test(yh, yg, var_h: float, var_g: float, cov_hg: float, threshold: float = 3.0,
                    min_samples: int = 1000, skew_h: float = 0.0, kurt_h: float = 0.0) -> WhiteNoiseVerdict:
    """z-scores for zero means, the covariance structure and the shape of ``Y(H)``.

    ``yh``, ``yg``: paired samples of ``Y(H)`` and ``Y(G)``; the targets are the
    exact finite-n values (``sigma^2`` times the discrete pairings).  The shape
    targets default to the Gaussian ones; pass the finite-n skewness and excess
    kurtosis of the lattice sum to test against those instead.
    """
    yh = np.asarray(yh, dtype=float)
    yg = np.asarray(yg, dtype=float)
    N = yh.size
    if N < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {N}")
    if yh.std() == 0 or yg.std() == 0:
        raise ValueError("degenerate sample variance")
    z = {}
    for key, y in (("mean_H", yh), ("mean_G", yg)):
        m, s = mean_se(y)
        z[key] = m / s
    for key, prod, target in (("var_H", yh * yh, var_h), ("var_G", yg * yg, var_g), ("cov_HG", yh * yg, cov_hg)):
        m, s = mean_se(prod)
        z[key] = (m - target) / s
    c = yh - yh.mean()
    sd = c.std()
    skew = float(np.mean(c ** 3)) / sd ** 3
    kurt = float(np.mean(c ** 4)) / sd ** 4 - 3.0
    z["skew_H"] = (skew - skew_h) / math.sqrt(6.0 / N)
    z["kurt_H"] = (kurt - kurt_h) / math.sqrt(24.0 / N)
    return WhiteNoiseVerdict(z, N, threshold)


# ---------------------------------------------------------------- Boltzmann-Gibbs bound


@dataclass
class BGReport:
    grid: list  # (n, eps) pairs
    lhs: list
    lhs_se: list
    bound: list
    ratios: list
    fitted_c: float
    calibration_n: int
    spread: float
    violations: list

    @property
    def verdict(self) -> bool:
        return self.spread <= 4.0 and not self.violations

    def rows(self) -> list[dict]:
        return [{"n": n, "eps": e, "lhs": l, "se": s, "bound": b, "ratio": r, "fitted_c": self.fitted_c,
                 "pass": self.verdict}
                for (n, e), l, s, b, r in zip(self.grid, self.lhs, self.lhs_se, self.bound, self.ratios)]


def bg_principle_test(samples: dict, bounds: dict, calibration_n: int | None = None) -> BGReport:
    """``samples[(n, eps)]``: replica values of the left side; ``bounds[(n, eps)]``:
    the bound without its constant.

    C is fitted as the largest ratio on the calibration row (smallest n by
    default); every other grid point must respect ``C * bound``.
    """
    grid = sorted(samples)
    if not grid:
        raise ValueError("empty grid")
    ns = sorted({n for n, _ in grid})
    cal = calibration_n if calibration_n is not None else ns[0]
    lhs, ses, bnd, ratios = [], [], [], []
    for key in grid:
        m, s = mean_se(samples[key])
        b = float(bounds[key])
        if not b > 0:
            raise ValueError("bound must be positive")
        lhs.append(m)
        ses.append(s)
        bnd.append(b)
        ratios.append(m / b)
    ratios_arr = np.array(ratios)
    cal_mask = np.array([n == cal for n, _ in grid])
    fitted = float(ratios_arr[cal_mask].max())
    positive = ratios_arr[ratios_arr > 0]
    spread = float(positive.max() / positive.min()) if positive.size else math.inf
    violations = [grid[i] for i in range(len(grid)) if not cal_mask[i] and lhs[i] > fitted * bnd[i]]
    return BGReport(grid, lhs, ses, bnd, ratios, fitted, cal, spread, violations)


# ---------------------------------------------------------------- kernel functionals


@dataclass
class RSFunctionals:
    R: float
    S: float
    parts: dict

    def __post_init__(self):
        if self.R < 0 or self.S < 0:
            raise ValueError("R and S are nonnegative")


def rs_functionals(K: np.ndarray, u: np.ndarray, v: np.ndarray | None = None) -> RSFunctionals:
    """R and S of a two-argument kernel sampled as ``K[i, j] = rho(u_i, v_j)``.

    Grids are uniform; integrals are midpoint sums.
    R = sup_u || |u - .| rho(u, .) ||_1^(1/2) + || <rho(u, .), 1> - 1 ||_{L^4_u},
    S = sup_u (||rho(u, .)||_1 + ||rho(u, .)||_1^2) * sup_v ||rho(., v)||_1^(1/2).
    """
    K = np.asarray(K, dtype=float)
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    du = float(u[1] - u[0])
    dv = float(v[1] - v[0])
    absK = np.abs(K)
    moment = float(np.max((absK * np.abs(u[:, None] - v[None, :])).sum(axis=1) * dv))
    mass = K.sum(axis=1) * dv
    l4 = float(np.sum((mass - 1.0) ** 4) * du) ** 0.25
    row = absK.sum(axis=1) * dv
    col = absK.sum(axis=0) * du
    row_term = float(np.max(row + row ** 2))
    col_term = float(np.max(col))
    R = math.sqrt(moment) + l4
    S = row_term * math.sqrt(col_term)
    return RSFunctionals(R, S, {"moment": moment, "mass_l4": l4, "row": row_term, "col": col_term})


def psi_weight_norm(psi, radius: float = 12.0, points: int = 200001) -> float:
    """``((int u^2 psi^4)^(1/2) + ||psi||_2)^2``."""
    u = np.linspace(-radius, radius, points)
    du = u[1] - u[0]
    p = psi(u)
    a = math.sqrt(float(np.sum(u * u * p ** 4)) * du)
    b = math.sqrt(float(np.sum(p * p)) * du)
    return (a + b) ** 2


@dataclass
class NonlinearityVerdict:
    pairs: list
    lhs: list
    rhs: list
    ratios: list
    fitted_k: float
    decreasing: bool
    violations: list
    chaos_z: float
    chaos_rel_rms: float

    @property
    def verdict(self) -> bool:
        return self.decreasing and not self.violations and abs(self.chaos_z) <= 3.0 and self.chaos_rel_rms < 0.05


def nonlinearity_approx_test(pairs, lhs, rhs, chaos_diff, chaos_scale: float) -> NonlinearityVerdict:
    """``pairs`` ordered from coarse to fine; K is fitted on the coarsest pair.

    ``chaos_diff``: per-sample differences between the truncated double sum and
    the direct formula; ``chaos_scale``: rms of the direct formula.
    """
    lhs = [float(x) for x in lhs]
    rhs = [float(x) for x in rhs]
    ratios = [l / r for l, r in zip(lhs, rhs)]
    k = ratios[0]
    violations = [pairs[i] for i in range(1, len(pairs)) if lhs[i] > k * rhs[i] * (1 + 1e-9)]
    decreasing = all(b < a for a, b in zip(lhs, lhs[1:]))
    d = np.asarray(chaos_diff, dtype=float)
    m, s = mean_se(d)
    z = m / s if s > 0 else (0.0 if m == 0 else math.inf)
    rel = float(np.sqrt(np.mean(d * d))) / chaos_scale
    return NonlinearityVerdict(list(pairs), lhs, rhs, ratios, k, decreasing, violations, z, rel)


# ---------------------------------------------------------------- OU covariance


@dataclass
class OUVerdict:
    lags: list
    empirical: list
    se: list
    predictions: dict
    z: dict
    expected_bc: str

    @property
    def better_fit(self) -> str:
        score = {bc: float(np.sum(np.square(z))) for bc, z in self.z.items()}
        return min(score, key=score.get)

    def accepted(self, bc: str, threshold: float = 3.0) -> bool:
        return all(abs(z) <= threshold for z in self.z[bc])

    def max_rejection(self, bc: str) -> float:
        return float(np.max(np.abs(self.z[bc])))

    @property
    def verdict(self) -> bool:
        others = [bc for bc in self.z if bc != self.expected_bc]
        return self.accepted(self.expected_bc) and all(self.max_rejection(bc) >= 5.0 for bc in others)


def ou_covariance_test(per_replica, lags, predictions: dict, expected_bc: str) -> OUVerdict:
    """Compare replica estimates of ``E[Y_t(H) Y_0(H)]`` (rows: replicas, cols: lags)
    with each boundary hypothesis."""
    arr = np.asarray(per_replica, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("per_replica must be a (replicas, lags) array with at least two replicas")
    emp = arr.mean(axis=0)
    se = arr.std(axis=0, ddof=1) / math.sqrt(arr.shape[0])
    z = {bc: list((emp - np.asarray(pred)) / se) for bc, pred in predictions.items()}
    return OUVerdict(list(map(float, lags)), emp.tolist(), se.tolist(),
                     {k: list(map(float, v)) for k, v in predictions.items()}, z, expected_bc)


def lagged_products(series: np.ndarray, lag_steps) -> np.ndarray:
    """Time-averaged ``Y_{s+t} Y_s`` along one stationary series for each lag."""
    y = np.asarray(series, dtype=float)
    out = []
    for k in lag_steps:
        out.append(float(np.mean(y[k:] * y[: y.size - k])) if k else float(np.mean(y * y)))
    return np.array(out)


# ---------------------------------------------------------------- output


def write_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys: list = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))
    return path
