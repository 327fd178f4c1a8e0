"""Business metrics, price-sensitivity segments and stage-wise price elasticities."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from . import choice
from .exceptions import ValidationError
from .population import Catalog, PopulationCoefficients
from .pricing import PriceTrajectory
from .rng import Stage, StreamKey
from .simulator import CustomerBlock, CustomerState, week_utilities

# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    n_customers: int
    weeks: int
    retention_window: int
    recency: np.ndarray  # weeks since last purchase, per customer-week with a prior purchase
    penetration: np.ndarray  # categories purchased per customer-week
    basket_size: np.ndarray  # items per customer-week
    sales_volume: np.ndarray  # items per product-week
    retention_rate: float
    total_demand: int
    revenue: float
    realized_discount: float
    n_transactions: int

    def summary(self) -> dict[str, float]:
        return {
            "n_transactions": int(self.n_transactions),
            "total_demand": int(self.total_demand),
            "revenue": float(self.revenue),
            "realized_discount": float(self.realized_discount),
            "retention_rate": float(self.retention_rate),
            "mean_penetration": float(self.penetration.mean()) if self.penetration.size else 0.0,
            "mean_basket_size": float(self.basket_size.mean()) if self.basket_size.size else 0.0,
            "mean_recency": float(self.recency.mean()) if self.recency.size else float("nan"),
            "mean_sales_volume": float(self.sales_volume.mean()) if self.sales_volume.size else 0.0,
        }

    def histograms(self) -> dict[str, pd.DataFrame]:
        out = {}
        for name in ("recency", "penetration", "basket_size", "sales_volume"):
            values, counts = np.unique(getattr(self, name), return_counts=True)
            out[name] = pd.DataFrame({"bin": values, "count": counts})
        return out


def _check_log(log: pd.DataFrame, weeks: int, n_customers: int):
    if len(log) == 0:
        return
    w = log["week"].to_numpy()
    if w.min() < 1 or w.max() > weeks:
        raise ValidationError(f"log contains weeks outside 1..{weeks}")
    c = log["customer_id"].to_numpy()
    if c.min() < 0 or c.max() >= n_customers:
        raise ValidationError(f"log contains customers outside 0..{n_customers - 1}")
    if (log["quantity"].to_numpy() < 1).any():
        raise ValidationError("log contains quantities below 1")


def compute_metrics(log: pd.DataFrame, n_customers: int, weeks: int, retention_window: int = 4,
                    n_products: int | None = None, customers=None) -> MetricsReport:
    """Aggregate a transaction log.

    ``customers`` restricts the customer-week distributions to a subset of
    customer ids (used for segments); ``n_products`` adds zero-sales
    product-weeks to the sales-volume distribution.
    """
    if weeks < 1 or n_customers < 1 or retention_window < 1:
        raise ValidationError("weeks, n_customers and retention_window must be >= 1")
    _check_log(log, weeks, n_customers)
    ids = np.arange(n_customers) if customers is None else np.asarray(customers, dtype=np.int64)
    if customers is not None:
        log = log[log["customer_id"].isin(ids)]
    pos = np.full(n_customers, -1, dtype=np.int64)
    pos[ids] = np.arange(ids.size)

    cust = pos[log["customer_id"].to_numpy()]
    week = log["week"].to_numpy()
    qty = log["quantity"].to_numpy()
    # at most one record per customer-category-week, so records count categories
    penetration = np.zeros((ids.size, weeks), dtype=np.int64)
    np.add.at(penetration, (cust, week - 1), 1)
    basket = np.zeros((ids.size, weeks), dtype=np.int64)
    np.add.at(basket, (cust, week - 1), qty)

    bought = penetration > 0
    week_idx = np.arange(1, weeks + 1)
    last = np.maximum.accumulate(np.where(bought, week_idx[None, :], 0), axis=1)
    recency = (week_idx[None, :] - last)[last > 0]

    start = max(1, weeks - retention_window + 1)
    retained = bought[:, start - 1 :].any(axis=1)

    n_prod = n_products if n_products is not None else (int(log["product_id"].max()) + 1 if len(log) else 0)
    sales = np.zeros((n_prod, weeks), dtype=np.int64)
    if len(log):
        np.add.at(sales, (log["product_id"].to_numpy(), week - 1), qty)
    if n_products is None:
        sales = sales[sales.sum(axis=1) > 0]

    return MetricsReport(
        n_customers=int(ids.size),
        weeks=weeks,
        retention_window=retention_window,
        recency=recency.astype(np.int64),
        penetration=penetration.ravel(),
        basket_size=basket.ravel(),
        sales_volume=sales.ravel(),
        retention_rate=float(retained.mean()) if ids.size else 0.0,
        total_demand=int(qty.sum()),
        revenue=math.fsum(qty * log["unit_price"].to_numpy()),
        realized_discount=float(log["discount_depth"].mean()) if len(log) else 0.0,
        n_transactions=int(len(log)),
    )


# ---------------------------------------------------------------------------
# Behaviour distributions (calibration targets)
# ---------------------------------------------------------------------------

BEHAVIOR_NAMES = (
    "store_visit_prob",
    "category_purchase_prob",
    "product_choice_prob",
    "quantity",
    "price",
    "category_size",
    "recency",
    "penetration",
    "basket_size",
    "sales_volume",
)


def behavior_samples(log: pd.DataFrame, catalog: Catalog, n_customers: int, weeks: int,
                     retention_window: int = 4) -> dict[str, np.ndarray]:
    """Empirical distributions that can be computed from any transaction log.

    A shopping trip is a customer-week with at least one purchase, so the same
    definitions apply to real data where non-buying visits are unobserved.
    """
    m = compute_metrics(log, n_customers, weeks, retention_window, n_products=catalog.n_products)
    trips = m.penetration.reshape(n_customers, weeks) > 0
    n_trips = int(trips.sum())
    cat_counts = np.bincount(log["category_id"].to_numpy(), minlength=catalog.n_categories)
    prod_counts = np.bincount(log["product_id"].to_numpy(), minlength=catalog.n_products)
    cat_of = catalog.category_of
    bought_cats = cat_counts[cat_of] > 0
    mean_price = log.groupby("product_id")["unit_price"].mean().to_numpy() if len(log) else np.zeros(0)
    return {
        "store_visit_prob": trips.mean(axis=1),
        "category_purchase_prob": cat_counts / n_trips if n_trips else np.zeros(catalog.n_categories),
        "product_choice_prob": prod_counts[bought_cats] / cat_counts[cat_of][bought_cats],
        "quantity": log["quantity"].to_numpy().astype(float),
        "price": mean_price,
        "category_size": catalog.sizes.astype(float),
        "recency": m.recency.astype(float),
        "penetration": m.penetration.astype(float),
        "basket_size": m.basket_size.astype(float),
        "sales_volume": m.sales_volume.astype(float),
    }


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

SEGMENT_LABELS_3 = ("high", "medium", "low")


@dataclass
class SegmentAssignment:
    mean_sensitivity: np.ndarray  # per customer
    segment: np.ndarray  # per customer; 0 = most price sensitive
    labels: tuple[str, ...]

    @property
    def segment_means(self) -> np.ndarray:
        return np.array([self.mean_sensitivity[self.segment == k].mean() for k in range(len(self.labels))])

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.segment == k)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "customer_id": np.arange(self.segment.size),
            "mean_sensitivity": self.mean_sensitivity,
            "segment": [self.labels[k] for k in self.segment],
        })


def segment_customers(pop: PopulationCoefficients, catalog: Catalog | None = None, n_segments: int = 3) -> SegmentAssignment:
    """Split customers into equal-size groups by the rank of their average price sensitivity."""
    n = pop.n_customers
    if n_segments < 1 or n < n_segments:
        raise ValidationError(f"cannot split {n} customers into {n_segments} segments")
    # mean over products of c * b_u * b_i factorizes exactly
    mean_sens = pop.c * pop.beta_u_w * pop.beta_i_w.mean()
    ranks = np.lexsort((np.arange(n), mean_sens))
    segment = np.empty(n, dtype=np.int64)
    for k, part in enumerate(np.array_split(ranks, n_segments)):
        segment[part] = k
    labels = SEGMENT_LABELS_3 if n_segments == 3 else tuple(f"segment_{k + 1}" for k in range(n_segments))
    return SegmentAssignment(mean_sens, segment, labels)


# ---------------------------------------------------------------------------
# Elasticities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElasticityComponents:
    e_store: float
    e_cate: float
    e_prod: float
    e_quant: float

    @property
    def e_overall(self) -> float:
        return self.e_store + self.e_cate + self.e_prod + self.e_quant

    def as_dict(self) -> dict[str, float]:
        return {**asdict(self), "e_overall": self.e_overall}


def _check_prob(name, x):
    x = np.asarray(x, dtype=float)
    if np.any(~((x >= 0) & (x <= 1))):
        raise ValidationError(f"{name} must lie in [0, 1]")


def elasticity_components(beta_w, gamma1_cate, gamma_prod, gamma2_store, p_store, p_cate, p_prod, lam, depth,
                          mode: str = "feature", theta=0.0, p_visit=None) -> ElasticityComponents:
    """Own-price elasticity of expected quantity, split by decision stage.

    ``p_store`` is the current-week store propensity.  With ``theta > 0`` the
    visit probability mixes in last week's probability, which dampens the store
    term by ``(1 - theta) * p_store / p_visit``; with ``theta = 0`` the classical
    form ``-gamma2 * (1 - p_store) * (1 - D)`` is recovered.  Works elementwise
    on arrays as well.
    """
    for name, val in (("p_store", p_store), ("p_cate", p_cate), ("p_prod", p_prod), ("theta", theta)):
        _check_prob(name, val)
    if np.any(np.asarray(lam) < 0):
        raise ValidationError("lambda must be >= 0")
    d = np.asarray(depth, dtype=float)
    if np.any((d < 0) | (d >= 1)):
        raise ValidationError("discount depth must lie in [0, 1)")
    if mode not in ("feature", "marketing"):
        raise ValidationError(f"unknown mode {mode!r}")

    if mode == "marketing":
        e_store = -gamma2_store * (1.0 - p_store) * (1.0 - d)
        if np.any(np.asarray(theta) > 0):
            if p_visit is None:
                raise ValidationError("p_visit is required when theta > 0")
            with np.errstate(divide="ignore", invalid="ignore"):
                damp = np.where(np.asarray(theta) > 0, (1.0 - theta) * p_store / p_visit, 1.0)
            e_store = e_store * damp
    else:
        e_store = np.zeros_like(np.asarray(beta_w, dtype=float))
    e_cate = p_prod * (1.0 - p_cate) * gamma1_cate * beta_w
    e_prod = (1.0 - p_prod) * beta_w
    e_quant = lam / (1.0 + lam) * gamma_prod * beta_w

    def unwrap(x):
        return x if np.ndim(x) else float(x)

    return ElasticityComponents(unwrap(e_store), unwrap(e_cate), unwrap(e_prod), unwrap(e_quant))


@dataclass(frozen=True)
class ChainInputs:
    """Everything the expectation chain of one (customer, product, week) needs.

    ``others`` are the (noise-included) utilities of the other products in the
    category; ``other_cvs`` the inclusive values of the other categories are not
    needed because the store stage depends on last week's SV only.
    """

    mu_rest: float  # utility of the focal product excluding beta_w * log(price)
    beta_w: float
    price: float
    base_price: float
    others: np.ndarray
    gamma0_cate: float
    gamma1_cate: float
    gamma0_prod: float
    gamma_prod: float
    gamma0_store: float
    gamma1_store: float
    gamma2_store: float
    prev_visit: bool
    prev_sv: float
    x_store_rest: float  # sum of the other products' discount depths
    theta: float = 0.0
    prev_visit_prob: float = 1.0
    week: int = 2
    mode: str = "marketing"


def expectation_chain(c: ChainInputs, log_price_shift: float = 0.0) -> dict[str, float]:
    """Stage probabilities and E[Q] with the focal price scaled by exp(shift)."""
    price = c.price * math.exp(log_price_shift)
    mu = c.mu_rest + c.beta_w * math.log(price)
    utils = np.concatenate(([mu], np.asarray(c.others, dtype=float)))
    p_prod = float(choice.product_choice_probs(utils)[0])
    cv = choice.category_value(utils)
    p_cate = choice.category_choice_prob(c.gamma0_cate, c.gamma1_cate, cv)
    lam = choice.quantity_rate(c.gamma0_prod, c.gamma_prod, mu)
    depth = 1.0 - price / c.base_price
    x_store = c.x_store_rest + depth if c.mode == "marketing" else 0.0
    mu_store = choice.store_utility(c.gamma0_store, c.gamma1_store, c.gamma2_store, c.prev_visit, c.prev_sv, x_store)
    p_store = choice.store_propensity(mu_store)
    p_visit = choice.store_visit_prob(c.theta, p_store, c.prev_visit_prob, c.week)
    eq = choice.expected_quantity(p_visit, p_cate, p_prod, lam)
    return {"p_store": p_store, "p_visit": p_visit, "p_cate": p_cate, "p_prod": p_prod, "lam": lam,
            "depth": depth, "mu": mu, "expected_quantity": eq}


def chain_elasticity(c: ChainInputs) -> ElasticityComponents:
    """Closed-form components evaluated at the chain's current point."""
    s = expectation_chain(c)
    return elasticity_components(c.beta_w, c.gamma1_cate, c.gamma_prod, c.gamma2_store, s["p_store"], s["p_cate"],
                                 s["p_prod"], s["lam"], s["depth"], c.mode, theta=c.theta, p_visit=s["p_visit"])


def finite_difference_elasticity(c: ChainInputs, rel_step: float = 1e-3) -> float:
    """Central difference of log E[Q] in log price (noise held fixed)."""
    h = math.log1p(rel_step)
    up = expectation_chain(c, h)["expected_quantity"]
    down = expectation_chain(c, -h)["expected_quantity"]
    return (math.log(up) - math.log(down)) / (2 * h)


ELASTICITY_COLUMNS = ("customer_id", "product_id", "category_id", "week", "price", "depth", "p_store", "p_visit",
                      "p_cate", "p_prod", "lam", "e_store", "e_cate", "e_prod", "e_quant", "e_overall",
                      "expected_quantity")


def elasticity_table(pop: PopulationCoefficients, catalog: Catalog, prices: PriceTrajectory, states: CustomerState,
                     week: int, customers, products, key: StreamKey, mode: str = "feature") -> pd.DataFrame:
    """Elasticity decomposition and E[Q] for every sampled (customer, product) pair at ``week``.

    ``states`` holds the carry-over entering ``week`` for (at least) the sampled
    customers; noise is the same keyed draw the simulator uses that week.
    """
    if not 1 <= week <= prices.weeks:
        raise ValidationError(f"week must lie in 1..{prices.weeks}")
    customers = np.asarray(customers, dtype=np.int64)
    products = np.asarray(products, dtype=np.int64)
    lookup = {int(cid): k for k, cid in enumerate(states.customer_ids)}
    try:
        rows = np.array([lookup[int(u)] for u in customers], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"no carry-over state for customer {exc.args[0]}") from None
    st = states.subset(rows)

    _, depth, price = prices.week(week)
    block = CustomerBlock.build(pop, customers)
    mu = week_utilities(block, pop, np.log(price), week, key)
    mu_sorted = mu if catalog.is_sorted else mu[:, catalog.order]
    cv = choice.segment_logsumexp(mu_sorted, catalog.starts)

    x_store = float(depth.sum()) if mode == "marketing" else 0.0
    mu_store = choice.store_utility(pop.gamma0_store, pop.gamma1_store, pop.gamma2_store, st.prev_visit,
                                    st.prev_sv, x_store)
    p_store = np.atleast_1d(choice.store_propensity(mu_store))
    p_visit = np.atleast_1d(choice.store_visit_prob(block.theta, p_store, st.prev_visit_prob, week))

    cats = catalog.category_of[products]
    cv_sel = cv[:, cats]
    mu_sel = mu[:, products]
    p_prod = np.exp(mu_sel - cv_sel)
    p_cate = choice.category_choice_prob(pop.gamma0_cate[cats][None, :], pop.gamma1_cate[cats][None, :], cv_sel)
    lam = choice.quantity_rate(pop.gamma0_prod, block.gamma_prod[:, products], mu_sel)
    beta_w = block.beta_w[:, products]
    shape = beta_w.shape
    ps = np.broadcast_to(p_store[:, None], shape)
    pv = np.broadcast_to(p_visit[:, None], shape)
    theta = np.broadcast_to(block.theta[:, None], shape)
    d = np.broadcast_to(depth[products][None, :], shape)
    comp = elasticity_components(beta_w, pop.gamma1_cate[cats][None, :], block.gamma_prod[:, products],
                                 pop.gamma2_store, ps, p_cate, p_prod, lam, d, mode, theta=theta, p_visit=pv)
    # the week-1 visit probability is pinned to 1, so the store stage does not respond
    e_store = np.zeros(shape) if week == 1 else np.broadcast_to(comp.e_store, shape)
    eq = choice.expected_quantity(pv, p_cate, p_prod, lam)

    nu, ni = beta_w.shape
    frame = pd.DataFrame({
        "customer_id": np.repeat(customers, ni),
        "product_id": np.tile(products, nu),
        "category_id": np.tile(cats, nu),
        "week": week,
        "price": np.tile(price[products], nu),
        "depth": d.ravel(),
        "p_store": ps.ravel(),
        "p_visit": pv.ravel(),
        "p_cate": p_cate.ravel(),
        "p_prod": p_prod.ravel(),
        "lam": lam.ravel(),
        "e_store": e_store.ravel(),
        "e_cate": np.broadcast_to(comp.e_cate, beta_w.shape).ravel(),
        "e_prod": np.broadcast_to(comp.e_prod, beta_w.shape).ravel(),
        "e_quant": np.broadcast_to(comp.e_quant, beta_w.shape).ravel(),
    })
    frame["e_overall"] = frame["e_store"] + frame["e_cate"] + frame["e_prod"] + frame["e_quant"]
    frame["expected_quantity"] = eq.ravel()
    return frame


def sort_by_average_elasticity(table: pd.DataFrame) -> pd.DataFrame:
    """Rows ordered by customer-average, then product-average overall elasticity."""
    cust_avg = table.groupby("customer_id")["e_overall"].mean()
    prod_avg = table.groupby("product_id")["e_overall"].mean()
    out = table.assign(_c=table["customer_id"].map(cust_avg), _p=table["product_id"].map(prod_avg))
    out = out.sort_values(["_c", "customer_id", "_p", "product_id"], kind="mergesort")
    return out.drop(columns=["_c", "_p"]).reset_index(drop=True)


def elasticity_heatmap(table: pd.DataFrame) -> pd.DataFrame:
    """Customer x product matrix of overall elasticity, both axes sorted by their averages."""
    mat = table.pivot(index="customer_id", columns="product_id", values="e_overall")
    mat = mat.loc[mat.mean(axis=1).sort_values(kind="mergesort").index]
    return mat[mat.mean(axis=0).sort_values(kind="mergesort").index]


def sample_indices(key: StreamKey, n_total: int, n_pick: int, label: int) -> np.ndarray:
    """Deterministic sample without replacement: the ``n_pick`` smallest keyed uniforms."""
    if n_pick >= n_total:
        return np.arange(n_total)
    u = key.grid(Stage.SAMPLE, label, np.arange(n_total))
    return np.sort(np.argsort(u, kind="stable")[:n_pick])
