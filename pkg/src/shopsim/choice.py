"""Stage laws of the customer decision model.

All functions accept scalars or numpy arrays and broadcast like ufuncs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .exceptions import DomainError, EmptyChoiceSetError, ShopsimError

LOG_RATE_CAP = 30.0
MAX_QUANTITY = 10**6


class QuantityOverflowError(ShopsimError):
    """A sampled quantity hit the hard cap; the configuration is implausible."""


@dataclass(frozen=True)
class UtilityContext:
    x: float
    beta_x: float
    beta_z: float
    beta_w: float
    z: float
    price: float
    eps: float = 0.0

    def utility(self) -> float:
        return product_utility(self.beta_x, self.x, self.beta_z, self.z, self.beta_w, self.price, self.eps)


def product_utility(beta_x, x, beta_z, z, beta_w, price, eps=0.0):
    """beta_x * x + beta_z * z + beta_w * log(price) + eps."""
    price = np.asarray(price, dtype=float)
    if np.any(~(price > 0)):
        raise DomainError("price must be strictly positive")
    out = beta_x * x + beta_z * z + beta_w * np.log(price) + eps
    return out if np.ndim(out) else float(out)


def _nonempty(utilities, axis):
    a = np.asarray(utilities, dtype=float)
    if a.size == 0 or (a.ndim and a.shape[axis] == 0):
        raise EmptyChoiceSetError("choice set is empty")
    return a


def product_choice_probs(utilities, axis: int = -1) -> np.ndarray:
    """Multinomial logit shares within one category (max-shifted softmax)."""
    a = _nonempty(utilities, axis)
    return special.softmax(a, axis=axis)


def category_value(utilities, axis: int = -1):
    """Inclusive value log(sum(exp(mu))) of a category."""
    a = _nonempty(utilities, axis)
    out = special.logsumexp(a, axis=axis)
    return out if np.ndim(out) else float(out)


def store_value(category_values, axis: int = -1):
    """Inclusive value over all categories; same computation one level up."""
    return category_value(category_values, axis=axis)


def segment_logsumexp(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """log-sum-exp over contiguous column segments beginning at ``starts``.

    ``values`` has shape (..., n); the result has shape (..., len(starts)).
    """
    seg_max = np.maximum.reduceat(values, starts, axis=-1)
    sizes = np.diff(np.append(starts, values.shape[-1]))
    shifted = np.exp(values - np.repeat(seg_max, sizes, axis=-1))
    return seg_max + np.log(np.add.reduceat(shifted, starts, axis=-1))


def category_choice_prob(gamma0, gamma1, cv):
    """Probability of buying in a category: logistic(gamma0 + gamma1 * CV)."""
    out = special.expit(gamma0 + gamma1 * np.asarray(cv, dtype=float))
    return out if np.ndim(out) else float(out)


def quantity_rate(gamma0, gamma, mu):
    """Poisson rate exp(gamma0 + gamma * mu); the exponent is capped at 30."""
    out = np.exp(np.minimum(gamma0 + gamma * np.asarray(mu, dtype=float), LOG_RATE_CAP))
    return out if np.ndim(out) else float(out)


def shifted_poisson_pmf(lam, q):
    """P(Q = q) = lam**(q-1) exp(-lam) / (q-1)! for q >= 1."""
    q = np.asarray(q)
    if np.any(q < 1):
        raise DomainError("shifted Poisson support starts at q = 1")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("rate must be >= 0")
    out = stats.poisson.pmf(q - 1, lam)
    return out if np.ndim(out) else float(out)


def shifted_poisson_from_uniform(lam, u) -> np.ndarray:
    """1 + Poisson(lam) by inverse CDF of uniforms ``u``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("rate must be >= 0")
    k = stats.poisson.ppf(u, lam)
    q = np.asarray(k, dtype=np.int64) + 1
    if np.any(q >= MAX_QUANTITY):
        raise QuantityOverflowError(f"sampled quantity reached the cap of {MAX_QUANTITY}")
    return q


def shifted_poisson(lam, key) -> int:
    return int(shifted_poisson_from_uniform(lam, key.uniforms(1))[0])


def store_utility(gamma0, gamma1, gamma2, visited_prev, sv_prev, x_store):
    """gamma0 + [visited last week] * gamma1 * SV_prev + gamma2 * x_store."""
    repeat = np.where(np.asarray(visited_prev, dtype=bool), gamma1 * np.asarray(sv_prev, dtype=float), 0.0)
    out = gamma0 + repeat + gamma2 * np.asarray(x_store, dtype=float)
    return out if np.ndim(out) else float(out)


def store_propensity(mu_store):
    out = special.expit(mu_store)
    return out if np.ndim(out) else float(out)


def store_visit_prob(theta, s, prev_prob, t: int):
    """1 in week 1, afterwards (1 - theta) * s + theta * previous probability."""
    if t < 1:
        raise DomainError("weeks are numbered from 1")
    if t == 1:
        out = np.ones(np.broadcast(np.asarray(theta), np.asarray(s), np.asarray(prev_prob)).shape)
    else:
        out = (1.0 - np.asarray(theta)) * s + np.asarray(theta) * prev_prob
    return out if np.ndim(out) else float(out)


def expected_quantity(p_visit, p_cate, p_prod, lam):
    """E[Q] = P(visit) * P(category) * P(product) * (lambda + 1)."""
    return p_visit * p_cate * p_prod * (lam + 1.0)
