"""Distribution matching: KS-complement objective and budgeted black-box search."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np
import pandas as pd

from .analytics import BEHAVIOR_NAMES, behavior_samples
from .exceptions import ShopsimError, ValidationError
from .rng import Stage, StreamKey
from .simulator import SimulationConfig, run_simulation

DEFAULT_SELECTED = ("category_purchase_prob", "category_count")
# "category count" read as the number of categories bought per customer-week
DEFAULT_ALIASES = {"category_count": "penetration"}


def ks_complement(sample_a, sample_b) -> float:
    """1 - sup_x |F_a(x) - F_b(x)| for the two empirical CDFs."""
    a = np.sort(np.asarray(sample_a, dtype=float).ravel())
    b = np.sort(np.asarray(sample_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValidationError("KS-complement needs two nonempty samples")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValidationError("samples must be finite")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(1.0 - np.max(np.abs(fa - fb)))


@dataclass
class ReferenceDistributions:
    samples: dict[str, np.ndarray]

    def __post_init__(self):
        for name, values in self.samples.items():
            arr = np.asarray(values, dtype=float).ravel()
            if arr.size == 0 or not np.isfinite(arr).all():
                raise ValidationError(f"reference sample {name!r} must be nonempty and finite")
            self.samples[name] = arr

    def __getitem__(self, name):
        return self.samples[name]

    def __contains__(self, name):
        return name in self.samples

    @classmethod
    def from_dir(cls, directory, names: Sequence[str]) -> "ReferenceDistributions":
        """Read ``<name>.csv`` (one numeric column, optional header) for each name."""
        out = {}
        for name in names:
            path = Path(directory) / f"{name}.csv"
            if not path.exists():
                raise FileNotFoundError(f"missing reference distribution {name!r} ({path})")
            df = pd.read_csv(path, header=None, comment="#")
            col = pd.to_numeric(df.iloc[:, 0], errors="coerce")
            if col.isna().iloc[0] and col.iloc[1:].notna().all():
                col = col.iloc[1:]  # header row
            if col.isna().any():
                raise ValidationError(f"reference {name!r} contains non-numeric values")
            out[name] = col.to_numpy(dtype=float)
        return cls(out)

    def to_dir(self, directory) -> None:
        Path(directory).mkdir(parents=True, exist_ok=True)
        for name, values in self.samples.items():
            pd.DataFrame({name: values}).to_csv(Path(directory) / f"{name}.csv", index=False, lineterminator="\n")


def resolve(name: str, aliases: Mapping[str, str] | None = None) -> str:
    return (aliases or DEFAULT_ALIASES).get(name, name)


def objective(sim_outputs: Mapping[str, np.ndarray], reference, selected: Sequence[str],
              aliases: Mapping[str, str] | None = None) -> float:
    """Sum of KS-complement scores over the selected distributions."""
    ref = reference.samples if isinstance(reference, ReferenceDistributions) else reference
    total = 0.0
    for name in selected:
        sim_name = resolve(name, aliases)
        if sim_name not in sim_outputs:
            raise ValidationError(f"simulated outputs lack distribution {name!r}")
        if name not in ref and sim_name not in ref:
            raise ValidationError(f"reference lacks distribution {name!r}")
        ref_sample = ref[name] if name in ref else ref[sim_name]
        total += ks_complement(sim_outputs[sim_name], ref_sample)
    return total


@dataclass(frozen=True)
class ParamRange:
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)) or self.lower > self.upper:
            raise ValidationError(f"bounds must be finite with lower <= upper, got ({self.lower}, {self.upper})")
        if self.scale not in ("linear", "log"):
            raise ValidationError(f"scale must be 'linear' or 'log', got {self.scale!r}")
        if self.scale == "log" and self.lower <= 0:
            raise ValidationError("log-scaled ranges need a positive lower bound")

    def from_unit(self, u: float) -> float:
        if self.lower == self.upper:
            return self.lower
        if self.scale == "log":
            lo, hi = math.log(self.lower), math.log(self.upper)
            return min(max(math.exp(lo + u * (hi - lo)), self.lower), self.upper)
        return self.lower + u * (self.upper - self.lower)

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


@dataclass(frozen=True)
class SearchSpace:
    """Tunable prior parameters, addressed as ``"<prior>.<param>"``."""

    params: Mapping[str, ParamRange]
    selected: tuple[str, ...] = DEFAULT_SELECTED
    aliases: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_ALIASES))

    def to_json(self) -> dict:
        return {
            "params": {k: {"lower": r.lower, "upper": r.upper, "scale": r.scale} for k, r in self.params.items()},
            "selected": list(self.selected),
            "aliases": dict(self.aliases),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SearchSpace":
        params = {}
        for k, v in obj["params"].items():
            if isinstance(v, Mapping):
                params[k] = ParamRange(float(v["lower"]), float(v["upper"]), v.get("scale", "linear"))
            else:
                params[k] = ParamRange(float(v[0]), float(v[1]), v[2] if len(v) > 2 else "linear")
        return cls(params, tuple(obj.get("selected", DEFAULT_SELECTED)), dict(obj.get("aliases", DEFAULT_ALIASES)))


class SearchStrategy(Protocol):
    def propose(self, trial: int, space: SearchSpace, history: Sequence["Trial"]) -> dict[str, float]: ...


@dataclass(frozen=True)
class RandomSearch:
    """Uniform (or log-uniform) sampling of the box; trial ``k`` depends only on ``(key, k)``."""

    key: StreamKey

    def propose(self, trial, space, history=()):
        names = list(space.params)
        u = self.key.grid(Stage.CALIB, trial, np.arange(len(names)), counter=1)
        return {n: space.params[n].from_unit(float(x)) for n, x in zip(names, np.atleast_1d(u))}


@dataclass
class Trial:
    index: int
    params: dict[str, float]
    seed: int
    objective: float
    error: str | None = None


@dataclass
class CalibrationResult:
    best_params: dict[str, float]
    best_objective: float
    history: list[Trial]

    def history_frame(self) -> pd.DataFrame:
        rows = []
        for t in self.history:
            rows.append({"trial": t.index, **t.params, "seed": t.seed, "objective": t.objective,
                         "error": t.error or ""})
        return pd.DataFrame(rows)

    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate([t.objective for t in self.history])


def apply_params(config: SimulationConfig, params: Mapping[str, float]) -> SimulationConfig:
    priors = config.priors
    for address, value in params.items():
        priors = priors.with_param(address, value)
    return replace(config, priors=priors)


def simulate_behavior(config: SimulationConfig) -> dict[str, np.ndarray]:
    res = run_simulation(config)
    return behavior_samples(res.log, res.catalog, config.n_customers, config.weeks)


def trial_seed(key: StreamKey, trial: int) -> int:
    return key.child(Stage.CALIB, trial).derive_seed()


def calibrate(space: SearchSpace, reference, sim_template: SimulationConfig, budget: int, key: StreamKey,
              strategy: SearchStrategy | None = None, workers: int = 1,
              simulate: Callable[[SimulationConfig], Mapping[str, np.ndarray]] = simulate_behavior,
              ) -> CalibrationResult:
    """Run ``budget`` trials and return the best parameters with the full history.

    Each trial simulates with its own keyed seed; a failing trial scores
    ``-inf`` and the search carries on.  Strategies that read ``history`` are
    run sequentially; the default random search parallelizes over trials.
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    strategy = strategy or RandomSearch(key)
    unknown = [n for n in space.selected if n not in reference and resolve(n, space.aliases) not in reference]
    if unknown:
        raise ValidationError(f"reference lacks selected distributions {unknown}")

    def run_trial(k: int, params: dict[str, float]) -> Trial:
        seed = trial_seed(key, k)
        try:
            cfg = replace(apply_params(sim_template, params), master_seed=seed)
            outputs = simulate(cfg)
            score = objective(outputs, reference, space.selected, space.aliases)
        except (ShopsimError, ValueError, FloatingPointError) as exc:
            return Trial(k, params, seed, -math.inf, f"{type(exc).__name__}: {exc}")
        return Trial(k, params, seed, score)

    history: list[Trial] = []
    if isinstance(strategy, RandomSearch) and workers > 1:
        proposals = [strategy.propose(k, space, ()) for k in range(budget)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            history = list(pool.map(run_trial, range(budget), proposals))
    else:
        for k in range(budget):
            history.append(run_trial(k, strategy.propose(k, space, history)))

    best = max(history, key=lambda t: (t.objective, -t.index))
    return CalibrationResult(dict(best.params), best.objective, history)


__all__ = [
    "BEHAVIOR_NAMES",
    "DEFAULT_SELECTED",
    "CalibrationResult",
    "ParamRange",
    "RandomSearch",
    "ReferenceDistributions",
    "SearchSpace",
    "Trial",
    "calibrate",
    "ks_complement",
    "objective",
]
