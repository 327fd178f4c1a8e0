"""Weekly simulation loop and the transaction log."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import special

from . import choice
from .exceptions import ConfigError
from .population import (
    SCENARIO_STORE_OVERRIDES,
    Catalog,
    PopulationCoefficients,
    PriorSet,
    build_catalog,
    sample_population,
)
from .pricing import BASELINE_POLICY, DiscountPolicy, PriceTrajectory, generate_price_paths
from .rng import Stage, StreamKey, sample

MODES = ("feature", "marketing")

LOG_COLUMNS = (
    "week",
    "customer_id",
    "product_id",
    "category_id",
    "quantity",
    "unit_price",
    "discount_depth",
    "base_price",
)
_LOG_DTYPES = {
    "week": np.int64,
    "customer_id": np.int64,
    "product_id": np.int64,
    "category_id": np.int64,
    "quantity": np.int64,
    "unit_price": np.float64,
    "discount_depth": np.float64,
    "base_price": np.float64,
}


@dataclass(frozen=True)
class SimulationConfig:
    n_customers: int
    n_products: int
    n_categories: int
    weeks: int
    master_seed: int = 0
    priors: PriorSet = field(default_factory=PriorSet)
    policy: DiscountPolicy = BASELINE_POLICY
    mode: str = "feature"
    category_concentration: float = 0.3
    # execution knobs; never change outputs
    threads: int = 1
    chunk_size: int = 128

    def __post_init__(self):
        for name in ("n_customers", "n_products", "n_categories", "weeks", "threads", "chunk_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1", f"$.simulation.{name}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}", "$.simulation.mode")

    @classmethod
    def marketing(cls, **kwargs) -> "SimulationConfig":
        """Marketing-mode config with the scenario store-visit priors applied."""
        priors = kwargs.pop("priors", PriorSet()).with_overrides(SCENARIO_STORE_OVERRIDES)
        return cls(priors=priors, mode="marketing", **kwargs)

    @property
    def root_key(self) -> StreamKey:
        return StreamKey(self.master_seed)


@dataclass
class CustomerState:
    """Per-customer carry-over between weeks (arrays aligned with ``customer_ids``)."""

    customer_ids: np.ndarray
    prev_visit: np.ndarray
    prev_visit_prob: np.ndarray
    prev_sv: np.ndarray
    last_purchase_week: np.ndarray  # 0 = never purchased

    @classmethod
    def initial(cls, customer_ids) -> "CustomerState":
        ids = np.asarray(customer_ids, dtype=np.int64)
        n = ids.size
        return cls(ids, np.zeros(n, dtype=bool), np.ones(n), np.zeros(n), np.zeros(n, dtype=np.int64))

    def subset(self, mask) -> "CustomerState":
        return CustomerState(*(getattr(self, f)[mask] for f in
                               ("customer_ids", "prev_visit", "prev_visit_prob", "prev_sv", "last_purchase_week")))


@dataclass(frozen=True)
class CustomerBlock:
    """Week-invariant utility inputs for a set of customers over all products."""

    customer_ids: np.ndarray
    static_utility: np.ndarray  # beta_x * x + beta_z * z, shape (n, I)
    beta_w: np.ndarray
    gamma_prod: np.ndarray
    theta: np.ndarray

    @classmethod
    def build(cls, pop: PopulationCoefficients, customer_ids) -> "CustomerBlock":
        u = np.asarray(customer_ids, dtype=np.int64)
        i = np.arange(pop.n_products)
        pair = pop.pair_coefficients(u[:, None], i[None, :])
        static = pair["beta_x"] * pair["x"] + pair["beta_z"] * pop.z[None, :]
        beta_w = pop.c * pop.beta_u_w[u][:, None] * pop.beta_i_w[None, :]
        return cls(u, static, beta_w, pair["gamma_prod"], pop.theta[u])


@dataclass
class WeekOutcome:
    records: dict[str, np.ndarray]
    states: CustomerState
    visited: np.ndarray
    visit_prob: np.ndarray


def week_utilities(block: CustomerBlock, pop: PopulationCoefficients, log_price: np.ndarray, week: int,
                   key: StreamKey) -> np.ndarray:
    """Product utilities (customers x products) for one week, noise included."""
    u = block.customer_ids[:, None]
    i = np.arange(log_price.size)[None, :]
    eps = sample(pop.priors["epsilon"], key.grid(Stage.EPS, u, i, week))
    return block.static_utility + block.beta_w * log_price[None, :] + eps


def simulate_week(block: CustomerBlock, states: CustomerState, depth: np.ndarray, price: np.ndarray,
                  base_price: np.ndarray, pop: PopulationCoefficients, catalog: Catalog, week: int,
                  key: StreamKey, mode: str = "feature") -> WeekOutcome:
    """Visit, category, product and quantity draws for every customer in ``block``."""
    n_i = catalog.n_products
    if price.shape != (n_i,) or depth.shape != (n_i,) or block.beta_w.shape[1] != n_i:
        raise ConfigError("price vectors and customer block must cover every catalog product")
    if not np.array_equal(states.customer_ids, block.customer_ids):
        raise ConfigError("customer state and block are misaligned")
    u_ids = block.customer_ids
    t = week

    mu = week_utilities(block, pop, np.log(price), t, key)
    mu_sorted = mu if catalog.is_sorted else mu[:, catalog.order]
    cv = choice.segment_logsumexp(mu_sorted, catalog.starts)
    p_cate = choice.category_choice_prob(pop.gamma0_cate[None, :], pop.gamma1_cate[None, :], cv)
    sv = special.logsumexp(cv, axis=1)

    x_store = float(depth.sum()) if mode == "marketing" else 0.0
    mu_store = choice.store_utility(pop.gamma0_store, pop.gamma1_store, pop.gamma2_store,
                                    states.prev_visit, states.prev_sv, x_store)
    s = choice.store_propensity(mu_store)
    p_visit = np.atleast_1d(choice.store_visit_prob(block.theta, s, states.prev_visit_prob, t))
    if t == 1:
        visited = np.ones(u_ids.size, dtype=bool)
    else:
        visited = key.grid(Stage.VISIT, u_ids, t) < p_visit

    j = np.arange(catalog.n_categories)
    buy = visited[:, None] & (key.grid(Stage.CATE, u_ids[:, None], j[None, :], t) < p_cate)
    rows, cats = np.nonzero(buy)

    products = _pick_products(mu_sorted, cv, rows, cats, catalog, key.grid(Stage.PROD, u_ids[rows], cats, t))
    mu_chosen = mu[rows, products]
    lam = choice.quantity_rate(pop.gamma0_prod, block.gamma_prod[rows, products], mu_chosen)
    qty = choice.shifted_poisson_from_uniform(lam, key.grid(Stage.QTY, u_ids[rows], products, t))

    records = {
        "week": np.full(rows.size, t, dtype=np.int64),
        "customer_id": u_ids[rows],
        "product_id": products.astype(np.int64),
        "category_id": cats.astype(np.int64),
        "quantity": qty.astype(np.int64),
        "unit_price": price[products],
        "discount_depth": depth[products],
        "base_price": base_price[products],
    }
    purchased = np.zeros(u_ids.size, dtype=bool)
    purchased[rows] = True
    new_states = CustomerState(
        customer_ids=u_ids,
        prev_visit=visited,
        prev_visit_prob=p_visit,
        prev_sv=sv,
        last_purchase_week=np.where(purchased, t, states.last_purchase_week),
    )
    return WeekOutcome(records, new_states, visited, p_visit)


def _pick_products(mu_sorted, cv, rows, cats, catalog: Catalog, u_pick) -> np.ndarray:
    """Inverse-CDF multinomial pick of one product per (row, category) pair."""
    if rows.size == 0:
        return np.zeros(0, dtype=np.int64)
    lens = catalog.sizes[cats]
    seg_start = np.cumsum(lens) - lens
    total = int(lens.sum())
    within = np.arange(total) - np.repeat(seg_start, lens)
    cols = np.repeat(catalog.starts[cats], lens) + within
    probs = np.exp(mu_sorted[np.repeat(rows, lens), cols] - np.repeat(cv[rows, cats], lens))
    csum = np.cumsum(probs)
    before = np.repeat(csum[seg_start] - probs[seg_start], lens)
    seg_cdf = csum - before
    seg_total = np.add.reduceat(probs, seg_start)
    below = seg_cdf <= np.repeat(u_pick * seg_total, lens)
    k = np.minimum(np.add.reduceat(below.astype(np.int64), seg_start), lens - 1)
    return catalog.order[catalog.starts[cats] + k]


@dataclass
class SimulationResult:
    config: SimulationConfig
    catalog: Catalog
    population: PopulationCoefficients
    prices: PriceTrajectory
    log: pd.DataFrame
    visits: np.ndarray  # (n_customers, weeks) bool
    final_states: CustomerState


def build_world(config: SimulationConfig) -> tuple[Catalog, PopulationCoefficients, PriceTrajectory]:
    root = config.root_key
    catalog = build_catalog(config.n_products, config.n_categories, root.child(Stage.CATALOG),
                            config.category_concentration)
    pop = sample_population(config.priors, catalog, config.n_customers, root.child(Stage.POPULATION))
    prices = generate_price_paths(catalog, pop, config.policy, config.weeks, root)
    return catalog, pop, prices


def _run_chunk(customer_ids, config, catalog, pop, prices):
    key = config.root_key
    block = CustomerBlock.build(pop, customer_ids)
    states = CustomerState.initial(customer_ids)
    parts = []
    visits = np.zeros((customer_ids.size, config.weeks), dtype=bool)
    for t in range(1, config.weeks + 1):
        _, depth, price = prices.week(t)
        out = simulate_week(block, states, depth, price, prices.base_price, pop, catalog, t, key, config.mode)
        parts.append(out.records)
        visits[:, t - 1] = out.visited
        states = out.states
    records = {c: np.concatenate([p[c] for p in parts]) for c in LOG_COLUMNS}
    return records, visits, states


def run_simulation(config: SimulationConfig, world=None) -> SimulationResult:
    """Simulate every customer over ``config.weeks`` weeks.

    Customers are processed in fixed-size chunks, optionally on a thread
    pool; all randomness is keyed by entity so the log does not depend on
    either the chunk size or the number of threads.
    """
    catalog, pop, prices = world if world is not None else build_world(config)
    ids = np.arange(config.n_customers, dtype=np.int64)
    chunks = [ids[k : k + config.chunk_size] for k in range(0, ids.size, config.chunk_size)]

    def work(chunk):
        return _run_chunk(chunk, config, catalog, pop, prices)

    if config.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=min(config.threads, len(chunks))) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    records = {c: np.concatenate([r[0][c] for r in results]) for c in LOG_COLUMNS}
    log = make_log(records)
    visits = np.concatenate([r[1] for r in results], axis=0)
    final = CustomerState(*(np.concatenate([getattr(r[2], f) for r in results]) for f in
                            ("customer_ids", "prev_visit", "prev_visit_prob", "prev_sv", "last_purchase_week")))
    return SimulationResult(config, catalog, pop, prices, log, visits, final)


def make_log(records: dict[str, np.ndarray] | None = None) -> pd.DataFrame:
    """Transaction log in canonical (week, customer, category) order."""
    if records is None:
        records = {c: np.zeros(0, dtype=_LOG_DTYPES[c]) for c in LOG_COLUMNS}
    df = pd.DataFrame({c: np.asarray(records[c], dtype=_LOG_DTYPES[c]) for c in LOG_COLUMNS})
    order = np.lexsort((df["category_id"].to_numpy(), df["customer_id"].to_numpy(), df["week"].to_numpy()))
    return df.iloc[order].reset_index(drop=True)


def export_log(log: pd.DataFrame, path) -> None:
    frame = make_log({c: log[c].to_numpy() for c in LOG_COLUMNS})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        frame.to_csv(fh, index=False, lineterminator="\n")


def read_log(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype=_LOG_DTYPES, float_precision="round_trip")
    missing = [c for c in LOG_COLUMNS if c not in df.columns]
    if missing:
        raise ConfigError(f"transaction log lacks columns {missing}")
    return df[list(LOG_COLUMNS)]


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def with_seed(config: SimulationConfig, seed: int) -> SimulationConfig:
    return replace(config, master_seed=int(seed))
