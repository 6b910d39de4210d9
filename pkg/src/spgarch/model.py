"""The unified spatial GARCH-type model family.

A model is fixed by the pair of link functions acting on the volatility
(``f``) and on the squared observations (``gamma``):

* ``SPARCH``   ``f(x) = gamma(x) = x 1[x >= 0]`` and no volatility feedback
* ``SPGARCH``  same links, with volatility feedback through ``W2``
* ``HSPGARCH`` ``f = gamma = log`` (hybrid, log-linear dynamics)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special, stats

from spgarch.errors import DomainError

__all__ = [
    "Variant",
    "StandardNormal",
    "TruncatedNormal",
    "ModelSpec",
    "Theta",
    "ALPHA_MIN",
    "f_eval",
    "gamma_eval",
    "tau_inverse_log_h",
    "log_eps_sq_mean",
    "log_eps_sq_var",
]

ALPHA_MIN = 1e-10
# |eps| below this makes log(eps^2) meaningless for the hybrid model
EPS_FLOOR = 1e-12


class Variant(str, enum.Enum):
    SPARCH = "spARCH"
    SPGARCH = "spGARCH"
    HSPGARCH = "H-spGARCH"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for v in cls:
            if v.value.replace("-", "").lower() == key or v.name.lower() == key:
                return v
        raise ValueError(f"unknown variant {value!r}")

    @property
    def log_linear(self) -> bool:
        return self is Variant.HSPGARCH


@dataclass(frozen=True)
class StandardNormal:
    def ppf(self, u):
        return special.ndtri(u)

    def to_json(self):
        return {"type": "normal"}


@dataclass(frozen=True)
class TruncatedNormal:
    """Standard normal conditioned on ``|eps| <= bound``."""

    bound: float

    def __post_init__(self):
        if not (self.bound > 0 and math.isfinite(self.bound)):
            raise ValueError("TruncatedNormal bound must be a positive finite number")

    def ppf(self, u):
        lo = special.ndtr(-self.bound)
        hi = special.ndtr(self.bound)
        return special.ndtri(lo + np.asarray(u) * (hi - lo))

    def to_json(self):
        return {"type": "truncated_normal", "bound": self.bound}


def innovation_from_json(obj):
    if obj is None or obj == "normal":
        return StandardNormal()
    if isinstance(obj, dict):
        kind = obj.get("type", "normal")
        if kind == "normal":
            return StandardNormal()
        if kind == "truncated_normal":
            return TruncatedNormal(float(obj["bound"]))
    raise ValueError(f"unknown innovation {obj!r}")


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.SPGARCH
    innovation: StandardNormal | TruncatedNormal = StandardNormal()

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))

    def to_json(self):
        return {"variant": self.variant.value, "innovation": self.innovation.to_json()}

    @classmethod
    def from_json(cls, obj):
        return cls(Variant.parse(obj.get("variant", "spGARCH")),
                   innovation_from_json(obj.get("innovation")))


@dataclass(frozen=True)
class Theta:
    """Parameters ``(rho, lambda, alpha)`` in ``[0,1) x [0,1) x [ALPHA_MIN, inf)``."""

    rho: float
    lam: float
    alpha: float

    def __post_init__(self):
        for name in ("rho", "lam", "alpha"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho={self.rho} outside [0, 1)")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"lambda={self.lam} outside [0, 1)")
        if not self.alpha >= ALPHA_MIN:
            raise ValueError(f"alpha={self.alpha} must be >= {ALPHA_MIN}")

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.lam, self.alpha])

    @classmethod
    def from_array(cls, x) -> "Theta":
        return cls(float(x[0]), float(x[1]), float(x[2]))

    def to_json(self):
        return {"rho": self.rho, "lambda": self.lam, "alpha": self.alpha}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["rho"], obj["lambda"], obj["alpha"])


def _positive_part(x):
    return np.where(x >= 0, x, 0.0)


def _log_checked(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("log link needs strictly positive arguments")
    return np.log(x)


def f_eval(spec: ModelSpec, x):
    """Volatility link ``f``; vectorised."""
    if spec.variant.log_linear:
        out = _log_checked(x)
    else:
        out = _positive_part(np.asarray(x, dtype=np.float64))
    return out if np.ndim(out) else float(out)


def gamma_eval(spec: ModelSpec, x):
    """Componentwise link ``gamma`` applied to squared observations."""
    return f_eval(spec, x)


def tau_inverse_log_h(spec: ModelSpec, u):
    """Map ``u = f(h)`` back to ``log h``."""
    if spec.variant.log_linear:
        out = np.asarray(u, dtype=np.float64)
    else:
        out = _log_checked(u)
    return out if np.ndim(out) else float(out)


@lru_cache(maxsize=64)
def _truncated_log_moments(bound: float):
    z = 2.0 * special.ndtr(bound) - 1.0
    pdf = stats.norm.pdf
    # log(x^2) is integrable at 0; tell quad about the algebraic-log singularity
    m1, _ = integrate.quad(lambda x: 2.0 * pdf(x), 0.0, bound, weight="alg-loga", wvar=(0.0, 0.0))
    m1 = 2.0 * m1 / z
    m2, _ = integrate.quad(lambda x: 4.0 * np.log(x) ** 2 * pdf(x), 0.0, bound, limit=200)
    m2 = 2.0 * m2 / z
    return m1, m2 - m1 * m1


def log_eps_sq_mean(spec: ModelSpec) -> float:
    """``E log(eps^2)`` for the innovation distribution."""
    innov = spec.innovation if isinstance(spec, ModelSpec) else spec
    if isinstance(innov, StandardNormal):
        return float(special.digamma(0.5) + math.log(2.0))
    return _truncated_log_moments(float(innov.bound))[0]


def log_eps_sq_var(spec: ModelSpec) -> float:
    """``Var log(eps^2)``; equals ``pi^2 / 2`` for standard normal innovations."""
    innov = spec.innovation if isinstance(spec, ModelSpec) else spec
    if isinstance(innov, StandardNormal):
        return float(special.polygamma(1, 0.5))
    return _truncated_log_moments(float(innov.bound))[1]
