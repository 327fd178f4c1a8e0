"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible without ``-s``) and
then asserts, so the suite fails if any criterion does.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from shopsim.analytics import (
    ChainInputs,
    chain_elasticity,
    elasticity_components,
    finite_difference_elasticity,
    segment_customers,
)
from shopsim.calibration import (
    ParamRange,
    ReferenceDistributions,
    SearchSpace,
    apply_params,
    calibrate,
    objective,
    simulate_behavior,
)
from shopsim.choice import (
    category_value,
    product_choice_probs,
    shifted_poisson_pmf,
    store_propensity,
    store_utility,
    store_visit_prob,
)
from shopsim.cli import run, run_scenarios
from shopsim.config import desk_config, parse_config
from shopsim.population import PriorSet, build_catalog, sample_population
from shopsim.pricing import (
    BASELINE_POLICY,
    SCENARIO_POLICIES,
    ProductPriceProcess,
    effective_discount,
    run_chain,
    stationary_discount_probability,
)
from shopsim.rng import Stage, StreamKey, mean_of
from shopsim.simulator import SimulationConfig

DESK = dict(n_customers=100, n_products=1000, n_categories=30, weeks=53)


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {name}" + (f" ({detail})" if detail else ""))
        assert ok, detail

    return emit


def matches_published(value, published, decimals):
    """Agreement with a printed figure to the precision it was printed at."""
    return abs(value - published) <= 0.5 * 10.0**-decimals + 1e-12


def test_criterion_1_policy_arithmetic(report):
    start = time.perf_counter()
    rows = []
    # baseline policy: 5.7% effective, 19% discount state, 30% depth
    rows.append(matches_published(effective_discount(BASELINE_POLICY), 0.057, 3))
    rows.append(matches_published(BASELINE_POLICY.discount_state_probability, 0.19, 2))
    rows.append(matches_published(mean_of(BASELINE_POLICY.depth_dist), 0.30, 3))
    published = {"I": (0.03, 0.60, 0.05), "II": (0.03, 0.30, 0.10), "III": (0.15, 0.60, 0.25),
                 "IV": (0.15, 0.30, 0.50), "V": (0.24, 0.60, 0.40)}
    for p in SCENARIO_POLICIES:
        got = (effective_discount(p), p.discount_state_probability, p.expected_depth)
        rows.extend(round(g, 3) == w for g, w in zip(got, published[p.name]))
    elapsed = time.perf_counter() - start
    report(1, "policy arithmetic", all(rows) and elapsed < 1.0, f"{sum(rows)}/{len(rows)} values, {elapsed:.3f}s")


def test_criterion_2_hmm_occupancy(report):
    start = time.perf_counter()
    a01 = mean_of(BASELINE_POLICY.trans_01_dist)
    a11 = mean_of(BASELINE_POLICY.trans_11_dist)
    burn_in, n = 10, 100_000
    states, _ = run_chain(ProductPriceProcess(a01, a11), BASELINE_POLICY, burn_in + n, StreamKey(2024))
    occ = float(states[burn_in:].mean())
    elapsed = time.perf_counter() - start
    ok = abs(occ - 0.19) <= 0.01 and elapsed < 10
    report(2, "HMM occupancy", ok, f"occupancy {occ:.4f} vs 0.19 +- 0.01, "
           f"pi1 {stationary_discount_probability(a01, a11):.4f}, {elapsed:.2f}s")


def _fuzz_chain(rng, mode):
    base = rng.uniform(0.5, 10)
    d = rng.uniform(0, 0.6) if rng.random() < 0.7 else 0.0
    return ChainInputs(
        mu_rest=rng.normal(0, 3), beta_w=-rng.uniform(0.2, 25), price=base * (1 - d), base_price=base,
        others=rng.normal(0, 3, size=rng.integers(0, 15)), gamma0_cate=rng.normal(-5, 0.5),
        gamma1_cate=rng.uniform(0, 0.12), gamma0_prod=rng.gumbel(0, 0.1), gamma_prod=rng.lognormal(-4, 0.05),
        gamma0_store=rng.normal(-1, 1), gamma1_store=rng.uniform(0, 0.2), gamma2_store=rng.uniform(0, 0.3),
        prev_visit=bool(rng.integers(2)), prev_sv=rng.normal(0, 3), x_store_rest=rng.uniform(0, 60),
        theta=rng.choice([0.0, rng.uniform(0.25, 0.45)]), prev_visit_prob=rng.uniform(0.05, 1),
        week=int(rng.integers(2, 54)), mode=mode)


def test_criterion_3_elasticity_correctness(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 10_000
    e = elasticity_components(
        -rng.uniform(0, 30, n), rng.uniform(0, 0.12, n), rng.uniform(0, 0.1, n), rng.uniform(0, 0.3, n),
        rng.uniform(0, 1, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n), rng.exponential(2, n),
        rng.uniform(0, 0.99, n), "marketing")
    additivity = float(np.max(np.abs(e.e_overall - (e.e_store + e.e_cate + e.e_prod + e.e_quant))))
    worst = 0.0
    for k in range(1000):
        c = _fuzz_chain(rng, "marketing" if k % 2 else "feature")
        closed = chain_elasticity(c).e_overall
        worst = max(worst, abs(finite_difference_elasticity(c) - closed) / abs(closed))
    elapsed = time.perf_counter() - start
    ok = additivity <= 1e-12 and worst < 0.01 and elapsed < 5
    report(3, "elasticity correctness", ok,
           f"max additivity error {additivity:.1e}, max FD relative error {worst:.2e}, {elapsed:.2f}s")


def test_criterion_4_population_statistics(report):
    start = time.perf_counter()
    key = StreamKey(0)
    cat = build_catalog(1000, 30, key.child(Stage.CATALOG))
    pop = sample_population(PriorSet(), cat, 1000, key.child(Stage.POPULATION))
    mean = float(pop.price_sensitivity(np.arange(1000)[:, None], np.arange(1000)[None, :]).mean())
    seg = segment_customers(pop, cat)
    target = np.array([-15.8, -12.8, -9.5])
    elapsed = time.perf_counter() - start
    ok = abs(mean + 12.6) <= 0.5 and np.all(np.abs(seg.segment_means - target) <= 1.0) and elapsed < 30
    report(4, "population statistics", ok,
           f"mean {mean:.2f}, tertiles {np.round(seg.segment_means, 2).tolist()}, {elapsed:.2f}s")


def test_criterion_5_scenario_ordering(report):
    start = time.perf_counter()
    demand_ok = retention_ok = 0
    realized_ok = True
    for seed in range(5):
        table, _, _ = run_scenarios(parse_config(desk_config(seed)))
        row = table.set_index("policy")
        d = row["total_demand"]
        demand_ok += d["I"] <= d["III"] <= d["V"]
        retention_ok += row.loc["V", "retention_rate"] >= row.loc["I", "retention_rate"]
        realized_ok &= all(row.loc[p, "realized_discount"] >= row.loc[p, "effective_discount"]
                           for p in ("III", "IV", "V"))
    elapsed = time.perf_counter() - start
    ok = demand_ok >= 4 and retention_ok >= 4 and realized_ok and elapsed < 300
    report(5, "scenario ordering", ok, f"demand I<=III<=V {demand_ok}/5, retention V>=I {retention_ok}/5, "
           f"realized>=effective {'all' if realized_ok else 'not all'}, {elapsed:.1f}s")


def test_criterion_6_determinism(report, tmp_path):
    cfg = tmp_path / "desk.json"
    cfg.write_text(json.dumps(desk_config(11)))
    codes = [run(["simulate", str(cfg), "--out", str(tmp_path / d), "--threads", t])
             for d, t in (("a", "1"), ("b", "1"), ("c", "8"))]
    logs = [(tmp_path / d / "transactions.csv").read_bytes() for d in "abc"]
    records = logs[0].count(b"\n") - 1
    ok = codes == [0, 0, 0] and logs[0] == logs[1] == logs[2] and records > 0
    report(6, "determinism", ok, f"exit codes {codes}, {records} records")


@pytest.mark.slow
def test_criterion_7_calibration_self_recovery(report):
    start = time.perf_counter()
    template = SimulationConfig(**DESK)
    space = SearchSpace({"gamma0_cate.mu": ParamRange(-6.5, -3.5), "gamma0_store.loc": ParamRange(-1.0, 1.0)})
    theta_star = {"gamma0_cate.mu": -5.0, "gamma0_store.loc": 0.0}
    star = apply_params(template, theta_star)
    reference = ReferenceDistributions(simulate_behavior(replace(star, master_seed=1001)))
    yardstick = objective(simulate_behavior(replace(star, master_seed=2002)), reference, space.selected,
                          space.aliases)
    result = calibrate(space, reference, template, 200, StreamKey(7))
    elapsed = time.perf_counter() - start
    ok = result.best_objective >= 0.9 * yardstick and elapsed < 600
    report(7, "calibration self-recovery", ok,
           f"best {result.best_objective:.3f} vs 0.9 x {yardstick:.3f}, {len(result.history)} trials, {elapsed:.0f}s")


def test_criterion_8_distribution_laws(report):
    rng = np.random.default_rng(8)
    softmax_err = max(abs(product_choice_probs(rng.normal(0, s, rng.integers(1, 500))).sum() - 1)
                      for s in (1, 100, 1e4, 1e6) for _ in range(250))
    lam = np.linspace(0, 50, 501)
    pmf_err = float(np.max(np.abs(shifted_poisson_pmf(lam[:, None], np.arange(1, 201)[None, :]).sum(axis=1) - 1)))
    big = rng.uniform(-1e6, 1e6, size=(200, 50))
    lse_ok = all(math.isfinite(category_value(r)) and r.max() <= category_value(r) <= r.max() + math.log(r.size)
                 for r in big)
    lse_ok &= category_value([1e6, 1e6]) == pytest.approx(1e6 + math.log(2), abs=1e-9)
    n = 100_000
    s = store_propensity(store_utility(rng.normal(0, 50, n), rng.normal(0, 50, n), rng.normal(0, 50, n),
                                       rng.integers(0, 2, n).astype(bool), rng.normal(0, 1e3, n),
                                       rng.uniform(0, 1e3, n)))
    p = store_visit_prob(rng.uniform(0, 1, n), s, rng.uniform(0, 1, n), 2)
    store_ok = bool(np.all((p >= 0) & (p <= 1)))
    ok = softmax_err <= 1e-9 and pmf_err <= 1e-9 and lse_ok and store_ok
    report(8, "distribution laws", ok, f"softmax {softmax_err:.1e}, pmf mass {pmf_err:.1e}, "
           f"logsumexp {'ok' if lse_ok else 'unstable'}, store in [0,1] {'ok' if store_ok else 'violated'}")
