import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shopsim.analytics import (
    ELASTICITY_COLUMNS,
    ChainInputs,
    behavior_samples,
    chain_elasticity,
    compute_metrics,
    elasticity_components,
    elasticity_heatmap,
    elasticity_table,
    expectation_chain,
    finite_difference_elasticity,
    sample_indices,
    segment_customers,
    sort_by_average_elasticity,
)
from shopsim.exceptions import ValidationError
from shopsim.population import PriorSet, build_catalog, sample_population
from shopsim.rng import DistributionSpec, StreamKey
from shopsim.simulator import (
    CustomerBlock,
    CustomerState,
    SimulationConfig,
    build_world,
    make_log,
    run_simulation,
    week_utilities,
)

prob = st.floats(0, 1)
open_prob = st.floats(1e-6, 1 - 1e-6)


def log_from(rows):
    cols = ["week", "customer_id", "product_id", "category_id", "quantity", "unit_price", "discount_depth"]
    df = pd.DataFrame(rows, columns=cols)
    df["base_price"] = df["unit_price"] / (1 - df["discount_depth"])
    return make_log({c: df[c].to_numpy() for c in df.columns})


# Hand-built fixture: two customers over three weeks, products 0..2 in categories 0..2.
FIXTURE = log_from([
    (1, 0, 0, 0, 2, 1.0, 0.0),
    (1, 0, 1, 1, 1, 2.0, 0.5),
    (2, 1, 0, 0, 3, 1.0, 0.2),
    (3, 0, 2, 2, 1, 4.0, 0.0),
])


def test_hand_built_metrics():
    m = compute_metrics(FIXTURE, n_customers=2, weeks=3, n_products=3)
    np.testing.assert_array_equal(m.penetration, [2, 0, 1, 0, 1, 0])
    np.testing.assert_array_equal(m.basket_size, [3, 0, 1, 0, 3, 0])
    # customer 0: weeks 1,2,3 -> 0,1,0; customer 1: week 1 excluded, weeks 2,3 -> 0,1
    np.testing.assert_array_equal(np.sort(m.recency), [0, 0, 0, 1, 1])
    np.testing.assert_array_equal(m.sales_volume, [2, 3, 0, 1, 0, 0, 0, 0, 1])
    assert m.total_demand == 7
    assert m.revenue == pytest.approx(11.0)
    assert m.realized_discount == pytest.approx(0.175)
    assert m.retention_rate == 1.0
    assert compute_metrics(FIXTURE, 2, 3, retention_window=1).retention_rate == 0.5
    seg = compute_metrics(FIXTURE, 2, 3, customers=[1])
    np.testing.assert_array_equal(seg.penetration, [0, 1, 0])
    assert seg.total_demand == 3
    hist = m.histograms()["recency"]
    assert hist.to_dict("list") == {"bin": [0, 1], "count": [3, 2]}


def test_single_record_metrics():
    m = compute_metrics(log_from([(1, 0, 0, 0, 2, 3.0, 0.0)]), 1, 1)
    assert (m.total_demand, m.revenue) == (2, 6.0)


def test_full_retention():
    rows = [(w, u, 0, 0, 1, 1.0, 0.0) for u in range(3) for w in range(7, 11)]
    assert compute_metrics(log_from(rows), 3, 10).retention_rate == 1.0


def test_metrics_reject_inconsistent_horizon():
    with pytest.raises(ValidationError):
        compute_metrics(FIXTURE, 2, 2)


def test_behavior_samples_cover_all_names():
    cat = build_catalog(3, 3, StreamKey(0))
    s = behavior_samples(FIXTURE, cat, 2, 3)
    np.testing.assert_allclose(s["store_visit_prob"], [2 / 3, 1 / 3])
    # four category purchases over three trips
    np.testing.assert_allclose(s["category_purchase_prob"], [2 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(s["product_choice_prob"], [1, 1, 1])
    assert all(np.isfinite(v).all() for v in s.values())


# --- segmentation ------------------------------------------------------------


def pop_with(beta_u, n_products=4, c=-1.0):
    cat = build_catalog(n_products, 1, StreamKey(0))
    pop = sample_population(PriorSet(), cat, len(beta_u), StreamKey(0))
    return cat, replace(pop, c=c, beta_u_w=np.asarray(beta_u, float), beta_i_w=-np.ones(n_products))


def test_one_customer_per_segment():
    cat, pop = pop_with([-9.0, -15.0, -12.0])
    seg = segment_customers(pop, cat)
    assert [seg.labels[k] for k in seg.segment] == ["low", "high", "medium"]
    np.testing.assert_allclose(seg.segment_means, [-15, -12, -9])


def test_tied_sensitivities_split_evenly_by_id():
    cat, pop = pop_with([-2.0] * 10)
    seg = segment_customers(pop, cat)
    np.testing.assert_array_equal(seg.segment, [0, 0, 0, 0, 1, 1, 1, 2, 2, 2])


def test_too_few_customers():
    cat, pop = pop_with([-1.0, -2.0])
    with pytest.raises(ValidationError):
        segment_customers(pop, cat)


def test_segment_sensitivity_matches_dense_average():
    cat = build_catalog(300, 10, StreamKey(1))
    pop = sample_population(PriorSet(), cat, 90, StreamKey(1))
    dense = pop.price_sensitivity(np.arange(90)[:, None], np.arange(300)[None, :]).mean(axis=1)
    seg = segment_customers(pop, cat)
    np.testing.assert_allclose(seg.mean_sensitivity, dense, rtol=1e-12)
    assert np.all(np.diff(seg.segment_means) > 0)
    assert (np.bincount(seg.segment) == 30).all()


# --- elasticities ------------------------------------------------------------


def test_worked_elasticity_example():
    e = elasticity_components(-10, 0.1, 0.02, 0.25, 0.8, 0.1, 0.5, 1.0, 0.2, "marketing")
    assert e.e_store == pytest.approx(-0.04)
    assert e.e_cate == pytest.approx(-0.45)
    assert e.e_prod == pytest.approx(-5.0)
    assert e.e_quant == pytest.approx(-0.1)
    assert e.e_overall == pytest.approx(-5.59)
    feature = elasticity_components(-10, 0.1, 0.02, 0.25, 0.8, 0.1, 0.5, 1.0, 0.2, "feature")
    assert feature.e_store == 0 and feature.e_overall == pytest.approx(-5.55)


def test_saturated_cases():
    assert elasticity_components(-3, 0.1, 0.02, 0.2, 0.5, 0.5, 1.0, 1.0, 0.0).e_prod == 0
    assert elasticity_components(-3, 0.1, 0.02, 0.2, 0.5, 0.5, 0.3, 0.0, 0.0).e_quant == 0


def test_component_domain_errors():
    with pytest.raises(ValidationError):
        elasticity_components(-3, 0.1, 0.02, 0.2, 1.5, 0.5, 0.5, 1.0, 0.0)
    with pytest.raises(ValidationError):
        elasticity_components(-3, 0.1, 0.02, 0.2, 0.5, 0.5, 0.5, -1.0, 0.0)
    with pytest.raises(ValidationError):
        elasticity_components(-3, 0.1, 0.02, 0.2, 0.5, 0.5, 0.5, 1.0, 1.0)


@given(st.floats(-50, 0), st.floats(0, 1), st.floats(0, 1), st.floats(0, 2), prob, prob, prob,
       st.floats(0, 1e4), st.floats(0, 0.99), st.sampled_from(["feature", "marketing"]))
def test_additivity_and_signs(bw, g1, g, g2, ps, pc, pp, lam, d, mode):
    e = elasticity_components(bw, g1, g, g2, ps, pc, pp, lam, d, mode)
    assert e.e_overall - (e.e_store + e.e_cate + e.e_prod + e.e_quant) == 0
    assert e.e_cate <= 0 and e.e_prod <= 0 and e.e_quant <= 0 and e.e_store <= 0


def random_chain(rng, mode="marketing", theta=None, week=None):
    base = rng.uniform(0.5, 10)
    d = rng.uniform(0, 0.6) if rng.random() < 0.7 else 0.0
    return ChainInputs(
        mu_rest=rng.normal(0, 3), beta_w=-rng.uniform(0.2, 20), price=base * (1 - d), base_price=base,
        others=rng.normal(0, 3, size=rng.integers(0, 12)), gamma0_cate=rng.normal(-5, 0.5),
        gamma1_cate=rng.uniform(0, 0.12), gamma0_prod=rng.gumbel(0, 0.1), gamma_prod=rng.uniform(0.005, 0.1),
        gamma0_store=rng.normal(-1, 1), gamma1_store=rng.uniform(0, 0.2), gamma2_store=rng.uniform(0, 0.3),
        prev_visit=bool(rng.integers(2)), prev_sv=rng.normal(0, 3), x_store_rest=rng.uniform(0, 50),
        theta=rng.uniform(0.25, 0.45) if theta is None else theta, prev_visit_prob=rng.uniform(0.05, 1),
        week=week or int(rng.integers(2, 53)), mode=mode)


@pytest.mark.parametrize("mode", ["feature", "marketing"])
def test_finite_difference_agrees_with_closed_form(mode):
    rng = np.random.default_rng(99)
    for _ in range(300):
        c = random_chain(rng, mode)
        closed = chain_elasticity(c).e_overall
        fd = finite_difference_elasticity(c)
        assert fd == pytest.approx(closed, rel=1e-2)


def test_week_one_store_stage_is_inert():
    c = random_chain(np.random.default_rng(1), week=1)
    s = expectation_chain(c)
    assert s["p_visit"] == 1.0
    fd = finite_difference_elasticity(c)
    comp = chain_elasticity(c)
    assert fd == pytest.approx(comp.e_cate + comp.e_prod + comp.e_quant, rel=1e-2)


# --- elasticity table --------------------------------------------------------

CFG = SimulationConfig(n_customers=30, n_products=200, n_categories=8, weeks=6, master_seed=4)


def table_for(cfg, week, n_c=10, n_p=25):
    catalog, pop, prices = build_world(cfg)
    if week > 1:
        states = run_simulation(replace(cfg, weeks=week - 1)).final_states
    else:
        states = CustomerState.initial(np.arange(cfg.n_customers))
    key = cfg.root_key
    cust = sample_indices(key, cfg.n_customers, n_c, 0)
    prod = sample_indices(key, cfg.n_products, n_p, 1)
    return elasticity_table(pop, catalog, prices, states, week, cust, prod, key, cfg.mode), (catalog, pop, prices,
                                                                                              states)


def test_table_shape_and_sign():
    table, _ = table_for(CFG, 6)
    assert len(table) == 10 * 25
    assert tuple(table.columns) == ELASTICITY_COLUMNS
    assert table["e_overall"].median() < 0
    np.testing.assert_allclose(table["e_overall"],
                               table[["e_store", "e_cate", "e_prod", "e_quant"]].sum(axis=1), atol=1e-12)


def test_zero_sensitivity_gives_zero_elasticity():
    cfg = replace(CFG, priors=PriorSet({"c": DistributionSpec("Constant", (0.0,))}), mode="marketing")
    table, _ = table_for(cfg, 3)
    # the store term only reacts to price through the discount depth, so it stays
    assert (table[["e_cate", "e_prod", "e_quant"]].to_numpy() == 0).all()


def test_week_one_table_has_no_store_term():
    table, _ = table_for(replace(CFG, mode="marketing"), 1)
    assert (table["e_store"] == 0).all()
    assert (table["p_visit"] == 1).all()


def test_table_row_matches_finite_difference_of_the_chain():
    cfg = replace(SimulationConfig.marketing(n_customers=30, n_products=200, n_categories=8, weeks=6,
                                             master_seed=4, priors=PriorSet({"theta": DistributionSpec(
                                                 "Uniform", (0.25, 0.45))})))
    week = 5
    table, (catalog, pop, prices, states) = table_for(cfg, week, n_c=3, n_p=8)
    _, depth, price = prices.week(week)
    for row in table.itertuples():
        u, i = row.customer_id, row.product_id
        block = CustomerBlock.build(pop, [u])
        mu = week_utilities(block, pop, np.log(price), week, cfg.root_key)[0]
        members = catalog.members(catalog.category_of[i])
        bw = block.beta_w[0, i]
        k = list(states.customer_ids).index(u)
        chain = ChainInputs(
            mu_rest=mu[i] - bw * math.log(price[i]), beta_w=bw, price=price[i], base_price=prices.base_price[i],
            others=mu[members[members != i]], gamma0_cate=pop.gamma0_cate[catalog.category_of[i]],
            gamma1_cate=pop.gamma1_cate[catalog.category_of[i]], gamma0_prod=pop.gamma0_prod,
            gamma_prod=block.gamma_prod[0, i], gamma0_store=pop.gamma0_store, gamma1_store=pop.gamma1_store,
            gamma2_store=pop.gamma2_store, prev_visit=bool(states.prev_visit[k]), prev_sv=states.prev_sv[k],
            x_store_rest=depth.sum() - depth[i], theta=block.theta[0], prev_visit_prob=states.prev_visit_prob[k],
            week=week, mode="marketing")
        s = expectation_chain(chain)
        assert s["expected_quantity"] == pytest.approx(row.expected_quantity, rel=1e-9)
        if s["expected_quantity"] > 1e-250:
            assert finite_difference_elasticity(chain) == pytest.approx(row.e_overall, rel=1e-2)


def test_sorting_and_heatmap():
    table, _ = table_for(CFG, 6)
    srt = sort_by_average_elasticity(table)
    cust_avg = srt.groupby("customer_id", sort=False)["e_overall"].mean()
    assert (np.diff(cust_avg.to_numpy()) >= 0).all()
    heat = elasticity_heatmap(table)
    assert heat.shape == (10, 25)
    assert (np.diff(heat.mean(axis=1).to_numpy()) >= 0).all()


def test_sample_indices_deterministic_and_sized():
    key = StreamKey(3)
    a = sample_indices(key, 100, 17, 0)
    assert len(set(a)) == 17 and a.max() < 100
    np.testing.assert_array_equal(a, sample_indices(key, 100, 17, 0))
    np.testing.assert_array_equal(sample_indices(key, 5, 17, 0), np.arange(5))
