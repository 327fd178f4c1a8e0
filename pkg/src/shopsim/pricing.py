"""High-low pricing: a two-state Markov discount process per product.

State 0 is the base price, state 1 a discount whose depth is redrawn from a
Beta law every week the product stays discounted.  Transition probabilities
``a01`` (base -> discount) and ``a11`` (discount -> discount) are drawn once
per product.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy import special

from .exceptions import InvalidPriceError, NonErgodicError, ParameterError
from .population import Catalog, PopulationCoefficients
from .rng import DistributionSpec, Stage, StreamKey, mean_of

# counter positions inside a (PRICE, product, week) stream
_TRANSITION = 0
_DEPTH = 1


@dataclass(frozen=True)
class DiscountPolicy:
    trans_01: tuple[float, float]
    trans_11: tuple[float, float]
    depth: tuple[float, float]
    name: str = "policy"

    def __post_init__(self):
        for label in ("trans_01", "trans_11", "depth"):
            pair = tuple(float(x) for x in getattr(self, label))
            if len(pair) != 2 or min(pair) <= 0:
                raise ParameterError(f"{label} needs two Beta parameters > 0, got {pair}")
            object.__setattr__(self, label, pair)

    @property
    def trans_01_dist(self) -> DistributionSpec:
        return DistributionSpec("Beta", self.trans_01)

    @property
    def trans_11_dist(self) -> DistributionSpec:
        return DistributionSpec("Beta", self.trans_11)

    @property
    def depth_dist(self) -> DistributionSpec:
        return DistributionSpec("Beta", self.depth)

    @property
    def expected_depth(self) -> float:
        return mean_of(self.depth_dist)

    @property
    def discount_state_probability(self) -> float:
        return stationary_discount_probability(mean_of(self.trans_01_dist), mean_of(self.trans_11_dist))

    def to_json(self) -> dict:
        return {"name": self.name, "trans_01": list(self.trans_01), "trans_11": list(self.trans_11),
                "depth": list(self.depth)}

    @classmethod
    def from_json(cls, obj: dict) -> "DiscountPolicy":
        return cls(tuple(obj["trans_01"]), tuple(obj["trans_11"]), tuple(obj["depth"]), obj.get("name", "policy"))


BASELINE_POLICY = DiscountPolicy((1, 5), (2, 5), (15, 35), "baseline")

SCENARIO_POLICIES: tuple[DiscountPolicy, ...] = (
    DiscountPolicy((60, 40), (60, 40), (5, 95), "I"),
    DiscountPolicy((30, 70), (30, 70), (10, 90), "II"),
    DiscountPolicy((60, 40), (60, 40), (25, 75), "III"),
    DiscountPolicy((30, 70), (30, 70), (50, 50), "IV"),
    DiscountPolicy((60, 40), (60, 40), (40, 60), "V"),
)


@dataclass(frozen=True)
class ProductPriceProcess:
    a01: float
    a11: float
    state: int = 0
    depth: float = 0.0
    product: int = 0
    week: int = 1

    def __post_init__(self):
        if not (0.0 <= self.a01 <= 1.0 and 0.0 <= self.a11 <= 1.0):
            raise ParameterError(f"transition probabilities must lie in [0, 1], got ({self.a01}, {self.a11})")
        if self.state == 0 and self.depth != 0.0:
            raise ParameterError("base state requires zero discount depth")


def sample_process(policy: DiscountPolicy, product: int, key: StreamKey) -> ProductPriceProcess:
    a01 = float(special.betaincinv(*policy.trans_01, key.grid(Stage.PRICE_PARAM, 0, product)))
    a11 = float(special.betaincinv(*policy.trans_11, key.grid(Stage.PRICE_PARAM, 1, product)))
    return ProductPriceProcess(a01, a11, state=0, depth=0.0, product=product, week=1)


def _transition(state, a01, a11, u):
    """Next state given uniforms ``u``: go/stay in state 1 with prob a01 / a11."""
    p_one = np.where(state == 1, a11, a01)
    return (u < p_one).astype(np.int8)


def step(process: ProductPriceProcess, policy: DiscountPolicy, key: StreamKey) -> ProductPriceProcess:
    """Advance one week; randomness keyed by (PRICE, product, next week)."""
    t = process.week + 1
    u = key.grid(Stage.PRICE, process.product, t, counter=np.array([_TRANSITION, _DEPTH], dtype=np.uint64))
    s = int(_transition(np.int8(process.state), process.a01, process.a11, u[0]))
    d = float(special.betaincinv(*policy.depth, u[1])) if s == 1 else 0.0
    return replace(process, state=s, depth=d, week=t)


def run_chain(process: ProductPriceProcess, policy: DiscountPolicy, n_steps: int,
              key: StreamKey) -> tuple[np.ndarray, np.ndarray]:
    """States and depths of ``n_steps`` consecutive ``step`` calls, with the uniforms drawn in one batch."""
    t = np.arange(process.week + 1, process.week + 1 + n_steps)
    u_trans = key.grid(Stage.PRICE, process.product, t, counter=_TRANSITION)
    states = np.empty(n_steps, dtype=np.int8)
    s, a01, a11 = process.state, process.a01, process.a11
    for k, u in enumerate(u_trans.tolist()):
        s = int(u < (a11 if s == 1 else a01))
        states[k] = s
    depth = np.zeros(n_steps)
    on = np.flatnonzero(states)
    if on.size:
        depth[on] = special.betaincinv(*policy.depth, key.grid(Stage.PRICE, process.product, t[on], counter=_DEPTH))
    return states, depth


def price_at(alpha_i0, alpha_1, z, state, depth):
    """(1 - D) * (alpha_i0 + alpha_1 * Z); D must be 0 in the base state."""
    state = np.asarray(state)
    depth = np.asarray(depth, dtype=float)
    if np.any((state == 0) & (depth != 0)):
        raise ParameterError("base state requires zero discount depth")
    price = (1.0 - depth) * (np.asarray(alpha_i0) + np.asarray(alpha_1) * np.asarray(z))
    if np.any(~(price > 0)):
        raise InvalidPriceError("computed price is not strictly positive")
    return price if price.ndim else float(price)


def stationary_discount_probability(a01: float, a11: float) -> float:
    """Long-run probability of the discount state, a01 / (a01 + 1 - a11)."""
    if not (0.0 <= a01 <= 1.0 and 0.0 <= a11 <= 1.0):
        raise ParameterError(f"transition probabilities must lie in [0, 1], got ({a01}, {a11})")
    denom = a01 + (1.0 - a11)
    if denom == 0:
        raise NonErgodicError("a01 = 0 and a11 = 1: both states absorbing, no unique stationary law")
    return a01 / denom


def effective_discount(policy: DiscountPolicy) -> float:
    return policy.discount_state_probability * policy.expected_depth


@dataclass(frozen=True)
class PriceTrajectory:
    """Arrays of shape (n_products, T); column ``t - 1`` holds week ``t``."""

    state: np.ndarray
    depth: np.ndarray
    price: np.ndarray
    base_price: np.ndarray
    a01: np.ndarray
    a11: np.ndarray

    @property
    def n_products(self) -> int:
        return self.price.shape[0]

    @property
    def weeks(self) -> int:
        return self.price.shape[1]

    def week(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(state, depth, price) vectors for week ``t`` (1-based)."""
        return self.state[:, t - 1], self.depth[:, t - 1], self.price[:, t - 1]

    def to_frame(self) -> pd.DataFrame:
        n, T = self.price.shape
        return pd.DataFrame(
            {
                "product_id": np.repeat(np.arange(n), T),
                "week": np.tile(np.arange(1, T + 1), n),
                "state": self.state.ravel(),
                "depth": self.depth.ravel(),
                "base_price": np.repeat(self.base_price, T),
                "price": self.price.ravel(),
            }
        )


def generate_price_paths(catalog: Catalog, pop: PopulationCoefficients, policy: DiscountPolicy, weeks: int,
                         key: StreamKey) -> PriceTrajectory:
    """Vectorized ``step`` over all products; same keys, same values."""
    if weeks < 1:
        raise ParameterError("weeks must be >= 1")
    n = catalog.n_products
    if pop.n_products != n:
        raise ParameterError("population and catalog disagree on the number of products")
    i = np.arange(n)
    a01 = special.betaincinv(*policy.trans_01, key.grid(Stage.PRICE_PARAM, 0, i))
    a11 = special.betaincinv(*policy.trans_11, key.grid(Stage.PRICE_PARAM, 1, i))
    state = np.zeros((n, weeks), dtype=np.int8)
    depth = np.zeros((n, weeks))
    for t in range(2, weeks + 1):
        u_trans = key.grid(Stage.PRICE, i, t, counter=_TRANSITION)
        s = _transition(state[:, t - 2], a01, a11, u_trans)
        state[:, t - 1] = s
        on = np.flatnonzero(s)
        if on.size:
            depth[on, t - 1] = special.betaincinv(*policy.depth, key.grid(Stage.PRICE, on, t, counter=_DEPTH))
    base = pop.base_price
    if np.any(~(base > 0)):
        raise InvalidPriceError("base price must be strictly positive")
    price = price_at(pop.alpha_i0[:, None], pop.alpha_1, pop.z[:, None], state, depth)
    for arr in (state, depth, price):
        arr.setflags(write=False)
    return PriceTrajectory(state, depth, price, base, a01, a11)
