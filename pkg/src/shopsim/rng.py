"""Counter-based random streams and inverse-CDF samplers.

Every random number in the package is a pure function of a master seed, an
entity path (a tuple of integer labels such as ``(Stage.EPS, u, i, t)``) and a
position counter.  The path is folded into 64 bits with the SplitMix64
finalizer; the resulting word plus the counter form the 128-bit counter of a
Philox4x32-10 block cipher keyed by the master seed.  Because nothing depends
on call order, draws for any subset of entities can be generated in any order,
on any number of threads, and always agree.

All samplers consume exactly one uniform per variate (inverse transform), so a
single keyed uniform identifies a single draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Sequence

import numpy as np
from scipy import special, stats

from .exceptions import DegenerateSupportError, ParameterError, UnsupportedFamilyError

__all__ = [
    "Stage",
    "StreamKey",
    "DistributionSpec",
    "philox4x32",
    "keyed_uniforms",
    "sample",
    "draw",
    "draws",
    "mean_of",
    "truncnorm_from_uniform",
    "EULER_GAMMA",
]

EULER_GAMMA = 0.5772156649015329

_MASK32 = np.uint64(0xFFFFFFFF)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = 0x9E3779B9
_PHILOX_W1 = 0xBB67AE85
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0**-53


class Stage(IntEnum):
    """First label of every entity path; keeps the model stages apart."""

    CATALOG = 1
    POPULATION = 2
    CUSTOMER = 3
    PRODUCT = 4
    CATEGORY = 5
    GLOBAL = 6
    PAIR = 7
    PRICE_PARAM = 8
    PRICE = 9
    EPS = 10
    VISIT = 11
    CATE = 12
    PROD = 13
    QTY = 14
    CALIB = 15
    SAMPLE = 16
    TEST = 99


def _u64(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype == np.uint64:
        return a
    if a.dtype.kind not in "iub":
        raise TypeError(f"entity labels must be integers, got dtype {a.dtype}")
    return a.astype(np.int64).astype(np.uint64)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _hash_path(labels: Sequence[Any]) -> np.ndarray:
    h = _splitmix(np.asarray(np.uint64(len(labels)) + _GOLDEN, dtype=np.uint64))
    for w in labels:
        h = _splitmix(h ^ _splitmix(_u64(w) + _GOLDEN))
    return h


def philox4x32(c0, c1, c2, c3, k0: int, k1: int, rounds: int = 10):
    """Philox4x32 block function on uint64 arrays holding 32-bit words."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    k0 = int(k0) & 0xFFFFFFFF
    k1 = int(k1) & 0xFFFFFFFF
    with np.errstate(over="ignore"):
        for _ in range(rounds):
            p0 = c0 * _PHILOX_M0
            p1 = c2 * _PHILOX_M1
            c0, c1, c2, c3 = (
                (p1 >> np.uint64(32)) ^ c1 ^ np.uint64(k0),
                p1 & _MASK32,
                (p0 >> np.uint64(32)) ^ c3 ^ np.uint64(k1),
                p0 & _MASK32,
            )
            k0 = (k0 + _PHILOX_W0) & 0xFFFFFFFF
            k1 = (k1 + _PHILOX_W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def keyed_uniforms(master_seed: int, *labels, counter=0) -> np.ndarray:
    """Uniforms on the open interval (0, 1), broadcast over array-valued labels.

    ``keyed_uniforms(seed, Stage.EPS, u[:, None], i[None, :], t)`` returns one
    uniform per (u, i) pair for week ``t``.
    """
    seed = int(master_seed) % (1 << 64)
    with np.errstate(over="ignore"):
        h = _hash_path(labels)
        n = _u64(counter)
        h, n = np.broadcast_arrays(h, n)
        x0, x1, _, _ = philox4x32(
            h & _MASK32, h >> np.uint64(32), n & _MASK32, n >> np.uint64(32),
            seed & 0xFFFFFFFF, seed >> 32,
        )
        bits = ((x0 << np.uint64(32)) | x1) >> np.uint64(11)
    out = (bits.astype(np.float64) + 0.5) * _TWO_M53
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    entity_path: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) % (1 << 64))
        object.__setattr__(self, "entity_path", tuple(int(x) for x in self.entity_path))

    def child(self, *labels: int) -> "StreamKey":
        return StreamKey(self.master_seed, self.entity_path + tuple(int(x) for x in labels))

    def uniforms(self, n: int, start: int = 0) -> np.ndarray:
        """The first ``n`` values of this key's stream (positions start..start+n-1)."""
        return keyed_uniforms(self.master_seed, *self.entity_path, counter=np.arange(start, start + n, dtype=np.uint64))

    def grid(self, *labels, counter=0) -> np.ndarray:
        """Vectorized uniforms for sub-paths ``entity_path + labels``."""
        return keyed_uniforms(self.master_seed, *self.entity_path, *labels, counter=counter)

    def derive_seed(self) -> int:
        """A 64-bit seed for a fresh, independent key tree rooted at this path."""
        with np.errstate(over="ignore"):
            h = _hash_path((self.master_seed,) + self.entity_path)
        return int(h)


# ---------------------------------------------------------------------------
# Distribution families
# ---------------------------------------------------------------------------

PARAM_NAMES: dict[str, tuple[str, ...]] = {
    "Gumbel": ("loc", "scale"),
    "Normal": ("mu", "sigma"),
    "TruncatedNormal": ("mu", "sigma", "lo", "hi"),
    "HalfNormal": ("loc", "scale"),
    "LogNormal": ("mu", "sigma"),
    "Beta": ("a", "b"),
    "Uniform": ("lo", "hi"),
    "Poisson": ("lam",),
    "Bernoulli": ("p",),
    "Categorical": (),
    "Constant": ("value",),
}

_ALIASES = {"TN": "TruncatedNormal", "N": "Normal", "U": "Uniform", "Fixed": "Constant"}


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _parse_float(x) -> float:
    if isinstance(x, str):
        return float(x.strip().lower().replace("infinity", "inf"))
    return float(x)


@dataclass(frozen=True)
class DistributionSpec:
    """A named family plus its parameters, in the order of ``PARAM_NAMES``.

    ``Categorical`` takes the probability vector as its params.  ``Constant``
    is a point mass, used for fixed model constants such as the price
    sensitivity scale.
    """

    family: str
    params: tuple[float, ...] = field(default=())

    def __post_init__(self):
        family = _ALIASES.get(self.family, self.family)
        if family not in PARAM_NAMES:
            raise UnsupportedFamilyError(f"unknown distribution family {self.family!r}")
        object.__setattr__(self, "family", family)
        params = tuple(float(p) for p in self.params)
        if family == "TruncatedNormal" and len(params) == 2:
            params = params + (-math.inf, math.inf)
        object.__setattr__(self, "params", params)
        self._validate()

    def _validate(self):
        f, p = self.family, self.params
        names = PARAM_NAMES[f]
        if f != "Categorical" and len(p) != len(names):
            raise ParameterError(f"{f} expects {len(names)} parameters {names}, got {len(p)}")
        if any(math.isnan(x) for x in p):
            raise ParameterError(f"{f} parameters must not be NaN")
        finite = [x for k, x in zip(names, p) if k not in ("lo", "hi")]
        if any(math.isinf(x) for x in finite):
            raise ParameterError(f"{f} parameters must be finite: {p}")
        if f in ("Gumbel", "Normal", "LogNormal", "HalfNormal", "TruncatedNormal") and p[1] <= 0:
            raise ParameterError(f"{f} scale must be > 0, got {p[1]}")
        if f == "TruncatedNormal" and not p[2] < p[3]:
            raise ParameterError(f"truncation bounds need lo < hi, got ({p[2]}, {p[3]})")
        if f == "Beta" and (p[0] <= 0 or p[1] <= 0):
            raise ParameterError(f"Beta parameters must be > 0, got {p}")
        if f == "Uniform" and (math.isinf(p[0]) or math.isinf(p[1]) or p[0] > p[1]):
            raise ParameterError(f"Uniform needs finite lo <= hi, got {p}")
        if f == "Poisson" and p[0] < 0:
            raise ParameterError(f"Poisson rate must be >= 0, got {p[0]}")
        if f == "Bernoulli" and not 0.0 <= p[0] <= 1.0:
            raise ParameterError(f"Bernoulli p must lie in [0, 1], got {p[0]}")
        if f == "Categorical":
            if not p or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
                raise ParameterError("Categorical needs a nonnegative probability vector summing to 1")

    def param(self, name: str) -> float:
        return self.params[PARAM_NAMES[self.family].index(name)]

    def with_param(self, name: str, value: float) -> "DistributionSpec":
        names = PARAM_NAMES[self.family]
        if name not in names:
            raise ParameterError(f"{self.family} has no parameter {name!r}; expected one of {names}")
        params = list(self.params)
        params[names.index(name)] = float(value)
        return DistributionSpec(self.family, tuple(params))

    def to_json(self) -> dict:
        return {"family": self.family, "params": [_json_float(x) for x in self.params]}

    @classmethod
    def from_json(cls, obj) -> "DistributionSpec":
        if isinstance(obj, (int, float)) and not isinstance(obj, bool):
            return cls("Constant", (float(obj),))
        if not isinstance(obj, dict) or "family" not in obj:
            raise ParameterError(f"distribution must be an object with 'family' and 'params', got {obj!r}")
        return cls(obj["family"], tuple(_parse_float(x) for x in obj.get("params", ())))

    def __str__(self):
        args = ", ".join(f"{x:g}" for x in self.params)
        return f"{self.family}({args})"


def truncnorm_from_uniform(u, mu, sigma, lo=-np.inf, hi=np.inf) -> np.ndarray:
    """Inverse-CDF truncated normal; broadcasts over all arguments.

    Regions lying in the upper tail are reflected into the lower tail, where
    ``ndtr`` keeps full relative precision.  ``sigma == 0`` is a point mass at
    ``clip(mu, lo, hi)``.
    """
    u, mu, sigma, lo, hi = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (u, mu, sigma, lo, hi)))
    point = sigma == 0
    safe_sigma = np.where(point, 1.0, sigma)
    a = (lo - mu) / safe_sigma
    b = (hi - mu) / safe_sigma
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    pa = special.ndtr(a2)
    pb = special.ndtr(b2)
    mass = pb - pa
    if np.any((mass < 1e-12) & ~point):
        raise DegenerateSupportError(
            "truncated normal region carries less than 1e-12 probability mass"
        )
    # in reflected coordinates the quantile level is 1 - u
    z = special.ndtri(pa + np.where(flip, 1.0 - u, u) * mass)
    z = np.where(flip, -z, z)
    x = np.where(point, mu, mu + safe_sigma * z)
    x = np.clip(x, lo, hi)
    return x


def sample(spec: DistributionSpec, u) -> np.ndarray:
    """Transform uniforms on (0, 1) into variates of ``spec``."""
    u = np.asarray(u, dtype=float)
    f, p = spec.family, spec.params
    if f == "Gumbel":
        return p[0] - p[1] * np.log(-np.log(u))
    if f == "Normal":
        return p[0] + p[1] * special.ndtri(u)
    if f == "TruncatedNormal":
        return truncnorm_from_uniform(u, *p)
    if f == "HalfNormal":
        return p[0] + p[1] * special.ndtri(0.5 + 0.5 * u)
    if f == "LogNormal":
        return np.exp(p[0] + p[1] * special.ndtri(u))
    if f == "Beta":
        return special.betaincinv(p[0], p[1], u)
    if f == "Uniform":
        return p[0] + (p[1] - p[0]) * u
    if f == "Constant":
        return np.full_like(u, p[0])
    if f == "Poisson":
        return stats.poisson.ppf(u, p[0]).astype(np.int64)
    if f == "Bernoulli":
        return (u < p[0]).astype(np.int64)
    if f == "Categorical":
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, u, side="right").astype(np.int64)
    raise UnsupportedFamilyError(f"no sampler for {f}")


def draw(spec: DistributionSpec, key: StreamKey, position: int = 0):
    """One variate; identical for identical ``(spec, key, position)``."""
    x = sample(spec, key.uniforms(1, start=position))[0]
    return x.item()


def draws(spec: DistributionSpec, key: StreamKey, n: int) -> np.ndarray:
    return sample(spec, key.uniforms(n))


def mean_of(spec: DistributionSpec) -> float:
    f, p = spec.family, spec.params
    if f == "Beta":
        return p[0] / (p[0] + p[1])
    if f == "TruncatedNormal":
        mu, sigma, lo, hi = p
        a, b = (lo - mu) / sigma, (hi - mu) / sigma
        # reflect into the lower tail for precision, then flip the sign back
        sign = 1.0
        if a > 0:
            a, b, sign = -b, -a, -1.0
        mass = special.ndtr(b) - special.ndtr(a)
        if mass < 1e-12:
            raise DegenerateSupportError("truncated normal region carries less than 1e-12 probability mass")
        pdf = stats.norm.pdf
        return mu + sign * sigma * (pdf(a) - pdf(b)) / mass
    if f == "LogNormal":
        return math.exp(p[0] + 0.5 * p[1] ** 2)
    if f == "Gumbel":
        return p[0] + p[1] * EULER_GAMMA
    if f == "Normal":
        return p[0]
    if f == "HalfNormal":
        return p[0] + p[1] * math.sqrt(2.0 / math.pi)
    if f == "Uniform":
        return 0.5 * (p[0] + p[1])
    if f in ("Constant", "Poisson", "Bernoulli"):
        return p[0]
    raise UnsupportedFamilyError(f"no closed-form mean implemented for {f}")
