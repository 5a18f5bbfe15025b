"""Model parameters, derived constants and the product Gamma reference measure.

The chain carries positive energies ``xi_x`` on a finite periodic window.  The
reference measure is a product of Gamma(lambda + 1, rate beta) laws, which is
invariant for the drift, the exchange noise and the Langevin heat bath alike.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np


class ParameterError(ValueError):
    """Raised when a parameter lies outside its admissible domain."""


@dataclass(frozen=True)
class ModelParams:
    beta: float = 1.0
    lam: float = 0.0
    alpha: float = 1.0
    gamma: float = 1.0
    kappa: float = 0.5
    delta: float = 0.0
    n: int = 16

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if not self.lam > -1:
            raise ParameterError(f"lambda must exceed -1, got {self.lam}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if not self.kappa >= 0.5:
            raise ParameterError(f"kappa must be at least 1/2, got {self.kappa}")
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n}")
        for name in ("alpha", "delta"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        object.__setattr__(self, "n", int(self.n))

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {k: d[k] for k in ("beta", "lam", "alpha", "gamma", "kappa", "delta", "n") if k in d}
        return cls(**known)


@dataclass(frozen=True)
class DerivedParams:
    rho: float
    sigma2: float
    c_n: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def derive_params(p: ModelParams) -> DerivedParams:
    """Closed-form site mean, site variance and moving-frame velocity."""
    if not p.beta > 0 or not p.lam > -1:
        raise ParameterError("beta must be positive and lambda must exceed -1")
    rho = (p.lam + 1.0) / p.beta
    sigma2 = (p.lam + 1.0) / (p.beta * p.beta)
    c_n = 2.0 * p.alpha * rho * float(p.n) ** (2.0 - p.kappa)
    return DerivedParams(rho=rho, sigma2=sigma2, c_n=c_n)


def frame_speed(p: ModelParams) -> float:
    """Frame velocity in lattice sites per unit of microscopic time."""
    return derive_params(p).c_n / float(p.n) ** 2


@dataclass
class ChainState:
    """Positive site energies on a periodic window plus the microscopic clock."""

    sites: np.ndarray
    tau: float = 0.0
    periodic: bool = True
    step: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sites = np.ascontiguousarray(self.sites, dtype=np.float64)
        if self.sites.ndim != 1 or self.sites.size < 3:
            raise ParameterError("window length must be at least 3")
        if not np.all(self.sites > 0):
            raise ParameterError("site energies must be strictly positive")
        if self.tau < 0:
            raise ParameterError("tau must be nonnegative")

    @property
    def length(self) -> int:
        return self.sites.size

    def copy(self) -> "ChainState":
        return ChainState(self.sites.copy(), self.tau, self.periodic, self.step, dict(self.meta))


def sample_gibbs(p: ModelParams, window, rng: np.random.Generator) -> ChainState:
    """I.i.d. Gamma(lambda + 1, rate beta) energies on ``window`` sites.

    ``window`` is either a length or a range of lattice indices.
    """
    length = len(window) if isinstance(window, range) else int(window)
    if length < 3:
        raise ParameterError("window must contain at least 3 sites")
    sites = rng.gamma(p.lam + 1.0, 1.0 / p.beta, size=length)
    # shape < 1 can underflow to exactly 0 in double precision
    tiny = np.finfo(float).tiny
    np.maximum(sites, tiny, out=sites)
    return ChainState(sites=sites, tau=0.0)


def potential_grad(u, p: ModelParams):
    """Derivative of the site potential ``beta*u - lambda*log(u)``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0):
        raise ParameterError("potential gradient is defined for positive arguments only")
    out = p.beta - p.lam / u_arr
    return float(out) if out.ndim == 0 else out


CONFIG_KEYS = ("beta", "lambda", "alpha", "gamma", "kappa", "delta", "n", "window_buffer", "seed")


def parse_keyvalue(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Values are converted to int or float when possible, comma separated values
    become lists.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParameterError(f"line {lineno}: empty key")
        out[key] = _convert(value)
    return out


def _convert(value: str):
    if "," in value:
        return [_convert(v.strip()) for v in value.split(",") if v.strip()]
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if "/" in value:
        num, den = value.split("/", 1)
        try:
            return float(num) / float(den)
        except ValueError:
            pass
    return value


def load_model_config(path) -> tuple[ModelParams, dict]:
    """Read model parameters from a key=value file.

    Returns the parameters and the remaining (non-model) entries.
    """
    values = parse_keyvalue(Path(path).read_text())
    model_keys = {"beta", "lambda", "alpha", "gamma", "kappa", "delta", "n"}
    params = ModelParams.from_dict({k: v for k, v in values.items() if k in model_keys})
    rest = {k: v for k, v in values.items() if k not in model_keys}
    return params, rest
