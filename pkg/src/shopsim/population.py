"""Product catalog and the sampled population of model coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd
from scipy import special

from .exceptions import ConfigError, InfeasibleCatalogError, ParameterError
from .rng import DistributionSpec, Stage, StreamKey, sample, truncnorm_from_uniform

D = DistributionSpec
INF = float("inf")

# Order matters: the index of a name is part of its random-stream path.
PRIOR_NAMES: tuple[str, ...] = (
    "gamma0_store",
    "gamma1_store",
    "gamma2_store",
    "theta",
    "gamma0_cate",
    "gamma1_cate",
    "beta_x",
    "c",
    "beta_u_w",
    "beta_i_w",
    "beta_z",
    "epsilon",
    "alpha_i0",
    "alpha_1",
    "z_mu",
    "z_sigma",
    "gamma0_prod",
    "gamma_prod",
    "x_mu",
    "x_sigma",
)

DEFAULT_PRIORS: dict[str, DistributionSpec] = {
    "gamma0_store": D("Gumbel", (0.0, 0.1)),
    "gamma1_store": D("TruncatedNormal", (0.01, 0.01, 0.0, INF)),
    "gamma2_store": D("Uniform", (0.2, 0.3)),
    "theta": D("Uniform", (0.25, 0.45)),
    "gamma0_cate": D("Normal", (-5.0, 0.5)),
    "gamma1_cate": D("TruncatedNormal", (0.1, 0.04, 0.0, 0.12)),
    "beta_x": D("LogNormal", (-1.0, 1.0)),
    "c": D("Constant", (-1.4,)),
    "beta_u_w": D("TruncatedNormal", (-3.0, 0.8, -INF, 0.0)),
    "beta_i_w": D("TruncatedNormal", (-3.0, 1.0, -INF, 0.0)),
    "beta_z": D("LogNormal", (1.0, 0.4)),
    "epsilon": D("Gumbel", (0.0, 0.1)),
    "alpha_i0": D("TruncatedNormal", (1.3, 0.5, 0.0, INF)),
    "alpha_1": D("LogNormal", (0.08, 1.2)),
    "z_mu": D("HalfNormal", (0.0, 1.0)),
    "z_sigma": D("HalfNormal", (0.0, 1.0)),
    "gamma0_prod": D("Gumbel", (0.0, 0.1)),
    "gamma_prod": D("LogNormal", (-4.0, 0.05)),
    "x_mu": D("Normal", (0.0, 1.0)),
    "x_sigma": D("Normal", (0.0, 1.0)),
}

# Store-visit priors used for the discount-policy scenarios (marketing mode).
SCENARIO_STORE_OVERRIDES: dict[str, DistributionSpec] = {
    "gamma0_store": D("Gumbel", (-1.85, 0.1)),
    "gamma1_store": D("TruncatedNormal", (0.1, 0.05, 0.0, INF)),
    "gamma2_store": D("Uniform", (0.0, 0.001)),
    "theta": D("Constant", (0.0,)),
}


@dataclass(frozen=True)
class PriorSet:
    """One distribution per model coefficient; missing names take defaults."""

    specs: Mapping[str, DistributionSpec] = field(default_factory=lambda: dict(DEFAULT_PRIORS))

    def __post_init__(self):
        unknown = set(self.specs) - set(PRIOR_NAMES)
        if unknown:
            raise ConfigError(f"unknown prior(s) {sorted(unknown)}", "$.priors")
        merged = dict(DEFAULT_PRIORS)
        merged.update(self.specs)
        object.__setattr__(self, "specs", {k: merged[k] for k in PRIOR_NAMES})

    def __getitem__(self, name: str) -> DistributionSpec:
        return self.specs[name]

    def with_overrides(self, overrides: Mapping[str, DistributionSpec]) -> "PriorSet":
        return PriorSet({**self.specs, **overrides})

    def with_param(self, address: str, value: float) -> "PriorSet":
        """Set one parameter addressed as ``"<prior>.<param>"`` (e.g. ``gamma0_cate.mu``)."""
        name, _, param = address.partition(".")
        if name not in self.specs:
            raise ParameterError(f"unknown prior {name!r} in address {address!r}")
        return self.with_overrides({name: self.specs[name].with_param(param, value)})

    def to_json(self) -> dict:
        return {k: v.to_json() for k, v in self.specs.items()}

    @classmethod
    def from_json(cls, obj: Mapping) -> "PriorSet":
        if not isinstance(obj, Mapping):
            raise ConfigError("priors must be an object", "$.priors")
        specs = {}
        for name, value in obj.items():
            try:
                specs[name] = DistributionSpec.from_json(value)
            except ParameterError as exc:
                raise ConfigError(str(exc), f"$.priors.{name}") from exc
        return cls(specs)


@dataclass(frozen=True)
class Catalog:
    category_of: np.ndarray
    n_categories: int

    def __post_init__(self):
        cat = np.asarray(self.category_of, dtype=np.int64)
        cat.setflags(write=False)
        object.__setattr__(self, "category_of", cat)
        if cat.ndim != 1 or cat.size == 0:
            raise InfeasibleCatalogError("catalog needs at least one product")
        if cat.min() < 0 or cat.max() >= self.n_categories:
            raise InfeasibleCatalogError("category ids must lie in [0, n_categories)")
        sizes = np.bincount(cat, minlength=self.n_categories)
        if np.any(sizes == 0):
            raise InfeasibleCatalogError(f"categories {np.flatnonzero(sizes == 0).tolist()} are empty")
        order = np.argsort(cat, kind="stable")
        starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        for arr in (sizes, order, starts):
            arr.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "is_sorted", bool(np.all(np.diff(cat) >= 0)))

    @property
    def n_products(self) -> int:
        return int(self.category_of.size)

    @property
    def category_members(self) -> list[np.ndarray]:
        return [self.order[s : s + n] for s, n in zip(self.starts, self.sizes)]

    def members(self, j: int) -> np.ndarray:
        return self.order[self.starts[j] : self.starts[j] + self.sizes[j]]


def build_catalog(n_products: int, n_categories: int, key: StreamKey, concentration: float = 0.3) -> Catalog:
    """Assign products to categories with right-skewed category sizes.

    Category weights follow a symmetric Dirichlet(concentration); every
    category receives one product and the remainder are assigned by
    categorical draws on the weights.  Product ids are contiguous per
    category.
    """
    if n_categories < 1 or n_products < n_categories:
        raise InfeasibleCatalogError(
            f"need n_products >= n_categories >= 1, got {n_products} products, {n_categories} categories"
        )
    if concentration <= 0:
        raise ParameterError("category concentration must be > 0")
    j = np.arange(n_categories)
    gammas = special.gammaincinv(concentration, key.grid(0, j))
    # gammaincinv underflows to 0 for tiny uniforms at small concentration
    gammas = np.maximum(gammas, np.finfo(float).tiny)
    weights = gammas / gammas.sum()
    extra = n_products - n_categories
    counts = np.ones(n_categories, dtype=np.int64)
    if extra:
        cdf = np.cumsum(weights)
        cdf[-1] = 1.0
        picks = np.searchsorted(cdf, key.grid(1, np.arange(extra)), side="right")
        counts += np.bincount(picks, minlength=n_categories)
    return Catalog(np.repeat(j, counts), n_categories)


@dataclass(frozen=True)
class PopulationCoefficients:
    """Sampled coefficients.  Pair-level terms are regenerated on demand from ``key``."""

    key: StreamKey
    priors: PriorSet
    # per customer
    beta_u_w: np.ndarray
    theta: np.ndarray
    # per product
    beta_i_w: np.ndarray
    alpha_i0: np.ndarray
    z: np.ndarray
    # per category
    gamma0_cate: np.ndarray
    gamma1_cate: np.ndarray
    # globals
    c: float
    alpha_1: float
    gamma0_store: float
    gamma1_store: float
    gamma2_store: float
    gamma0_prod: float
    z_mu: float
    z_sigma: float
    x_mu: float
    x_sigma: float

    @property
    def n_customers(self) -> int:
        return int(self.beta_u_w.size)

    @property
    def n_products(self) -> int:
        return int(self.beta_i_w.size)

    @property
    def base_price(self) -> np.ndarray:
        return self.alpha_i0 + self.alpha_1 * self.z

    def pair_coefficients(self, customers, products) -> dict[str, np.ndarray]:
        """beta_x, x, beta_z, gamma_prod for broadcast (customer, product) index arrays."""
        u = np.asarray(customers, dtype=np.int64)
        i = np.asarray(products, dtype=np.int64)
        self._check_range(u, i)
        out = {}
        for name in ("beta_x", "beta_z", "gamma_prod"):
            out[name] = sample(self.priors[name], self.key.grid(Stage.PAIR, _pid(name), u, i))
        z = special.ndtri(self.key.grid(Stage.PAIR, _pid("x_mu"), u, i))
        # N(mu, sigma) and N(mu, -sigma) are the same law, so the sign of a drawn sigma is irrelevant
        out["x"] = self.x_mu + abs(self.x_sigma) * z
        return out

    def price_sensitivity(self, u, i):
        u_arr = np.asarray(u, dtype=np.int64)
        i_arr = np.asarray(i, dtype=np.int64)
        self._check_range(u_arr, i_arr)
        out = self.c * self.beta_u_w[u_arr] * self.beta_i_w[i_arr]
        return out if np.ndim(out) else float(out)

    def _check_range(self, u, i):
        if u.size and (u.min() < 0 or u.max() >= self.n_customers):
            raise IndexError(f"customer index out of range [0, {self.n_customers})")
        if i.size and (i.min() < 0 or i.max() >= self.n_products):
            raise IndexError(f"product index out of range [0, {self.n_products})")

    def customers_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"customer_id": np.arange(self.n_customers), "beta_u_w": self.beta_u_w, "theta": self.theta}
        )

    def products_frame(self, catalog: Catalog | None = None) -> pd.DataFrame:
        df = pd.DataFrame(
            {
                "product_id": np.arange(self.n_products),
                "beta_i_w": self.beta_i_w,
                "alpha_i0": self.alpha_i0,
                "z": self.z,
                "base_price": self.base_price,
            }
        )
        if catalog is not None:
            df.insert(1, "category_id", catalog.category_of)
            df["gamma0_cate"] = self.gamma0_cate[catalog.category_of]
            df["gamma1_cate"] = self.gamma1_cate[catalog.category_of]
        return df

    def globals_dict(self) -> dict[str, float]:
        names = ("c", "alpha_1", "gamma0_store", "gamma1_store", "gamma2_store", "gamma0_prod",
                 "z_mu", "z_sigma", "x_mu", "x_sigma")
        return {k: float(getattr(self, k)) for k in names}

    def to_frame(self, catalog: Catalog | None = None) -> pd.DataFrame:
        """Long audit table: one row per customer and one row per product."""
        cust = self.customers_frame()
        cust.insert(0, "entity", "customer")
        cust = cust.rename(columns={"customer_id": "id"})
        prod = self.products_frame(catalog)
        prod.insert(0, "entity", "product")
        prod = prod.rename(columns={"product_id": "id"})
        df = pd.concat([cust, prod], ignore_index=True, sort=False)
        for k, v in self.globals_dict().items():
            df[k] = v
        return df


def _pid(name: str) -> int:
    return PRIOR_NAMES.index(name)


def sample_population(priors: PriorSet, catalog: Catalog, n_customers: int, key: StreamKey) -> PopulationCoefficients:
    """Draw all customer-, product-, category- and global-level coefficients.

    Each value is keyed by (level, prior, entity id), so customer ``k``'s draws
    do not depend on how many customers are sampled.
    """
    if n_customers < 1:
        raise ParameterError("n_customers must be >= 1")
    u = np.arange(n_customers)
    i = np.arange(catalog.n_products)
    j = np.arange(catalog.n_categories)

    def per(level, name, ids):
        return sample(priors[name], key.grid(level, _pid(name), ids))

    def glob(name):
        return float(sample(priors[name], key.grid(Stage.GLOBAL, _pid(name))))

    z_mu, z_sigma = glob("z_mu"), glob("z_sigma")
    if z_sigma < 0:
        raise ParameterError("z_sigma prior produced a negative scale")
    z = truncnorm_from_uniform(key.grid(Stage.PRODUCT, _pid("z_mu"), i), z_mu, z_sigma, 0.0, np.inf)
    theta = per(Stage.CUSTOMER, "theta", u)
    if np.any((theta < 0) | (theta >= 1)):
        raise ParameterError("theta prior must produce values in [0, 1)")

    return PopulationCoefficients(
        key=key,
        priors=priors,
        beta_u_w=per(Stage.CUSTOMER, "beta_u_w", u),
        theta=theta,
        beta_i_w=per(Stage.PRODUCT, "beta_i_w", i),
        alpha_i0=per(Stage.PRODUCT, "alpha_i0", i),
        z=z,
        gamma0_cate=per(Stage.CATEGORY, "gamma0_cate", j),
        gamma1_cate=per(Stage.CATEGORY, "gamma1_cate", j),
        c=glob("c"),
        alpha_1=glob("alpha_1"),
        gamma0_store=glob("gamma0_store"),
        gamma1_store=glob("gamma1_store"),
        gamma2_store=glob("gamma2_store"),
        gamma0_prod=glob("gamma0_prod"),
        z_mu=z_mu,
        z_sigma=z_sigma,
        x_mu=glob("x_mu"),
        x_sigma=glob("x_sigma"),
    )


def price_sensitivity(pop: PopulationCoefficients, u, i):
    return pop.price_sensitivity(u, i)
