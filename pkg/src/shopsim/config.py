"""JSON run configuration: schema validation and conversion to typed settings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .calibration import DEFAULT_ALIASES, DEFAULT_SELECTED, ParamRange, SearchSpace
from .exceptions import ConfigError, ParameterError, ShopsimError
from .population import PRIOR_NAMES, PriorSet
from .pricing import BASELINE_POLICY, SCENARIO_POLICIES, DiscountPolicy
from .rng import PARAM_NAMES
from .simulator import MODES, SimulationConfig

_NUMBER_OR_INF = {"oneOf": [{"type": "number"}, {"enum": ["inf", "-inf", "Infinity", "-Infinity"]}]}
_DIST = {
    "oneOf": [
        {"type": "number"},
        {
            "type": "object",
            "required": ["family"],
            "properties": {"family": {"type": "string"}, "params": {"type": "array", "items": _NUMBER_OR_INF}},
            "additionalProperties": False,
        },
    ]
}
_BETA_PAIR = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2}
_POLICY = {
    "oneOf": [
        {"type": "string"},
        {
            "type": "object",
            "required": ["trans_01", "trans_11", "depth"],
            "properties": {"name": {"type": "string"}, "trans_01": _BETA_PAIR, "trans_11": _BETA_PAIR,
                           "depth": _BETA_PAIR},
            "additionalProperties": False,
        },
    ]
}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["simulation", "priors"],
    "additionalProperties": False,
    "properties": {
        "simulation": {
            "type": "object",
            "required": ["n_customers", "n_products", "n_categories", "weeks"],
            "additionalProperties": False,
            "properties": {
                "n_customers": _POS_INT,
                "n_products": _POS_INT,
                "n_categories": _POS_INT,
                "weeks": _POS_INT,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "mode": {"enum": list(MODES)},
                "category_concentration": {"type": "number", "exclusiveMinimum": 0},
                "threads": _POS_INT,
                "chunk_size": _POS_INT,
            },
        },
        "priors": {
            "type": "object",
            "propertyNames": {"enum": list(PRIOR_NAMES)},
            "additionalProperties": _DIST,
        },
        "pricing": _POLICY,
        "policies": {"type": "array", "items": _POLICY, "minItems": 1},
        "segmentation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_segments": _POS_INT, "retention_window": _POS_INT,
                           "store_overrides": {"type": "boolean"}},
        },
        "elasticity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"week": _POS_INT, "n_customers": _POS_INT, "n_products": _POS_INT},
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "budget": _POS_INT,
                "workers": _POS_INT,
                "params": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "required": ["lower", "upper"],
                        "additionalProperties": False,
                        "properties": {"lower": {"type": "number"}, "upper": {"type": "number"},
                                       "scale": {"enum": ["linear", "log"]}},
                    },
                },
                "selected": {"type": "array", "items": {"type": "string"}},
                "aliases": {"type": "object", "additionalProperties": {"type": "string"}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(CONFIG_SCHEMA)


def json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate(obj: Any) -> None:
    """Raise ConfigError for the first schema violation, located by JSON path."""
    errors = sorted(_VALIDATOR.iter_errors(obj), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, json_path(err.absolute_path))


@dataclass(frozen=True)
class CalibrationSettings:
    space: SearchSpace
    budget: int = 50
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    simulation: SimulationConfig
    policy: DiscountPolicy = BASELINE_POLICY
    policies: tuple[DiscountPolicy, ...] = SCENARIO_POLICIES
    n_segments: int = 3
    retention_window: int = 4
    store_overrides: bool = True
    elasticity_week: int | None = None
    elasticity_customers: int = 100
    elasticity_products: int = 100
    calibration: CalibrationSettings | None = None
    output_dir: str | None = None
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, simulation=replace(self.simulation, master_seed=int(seed)))

    def with_threads(self, threads: int) -> "RunConfig":
        return replace(self, simulation=replace(self.simulation, threads=int(threads)))


def _policy(obj, path: str) -> DiscountPolicy:
    if isinstance(obj, str):
        named = {p.name: p for p in (BASELINE_POLICY, *SCENARIO_POLICIES)}
        if obj not in named:
            raise ConfigError(f"unknown policy name {obj!r}; known: {sorted(named)}", path)
        return named[obj]
    try:
        return DiscountPolicy.from_json(obj)
    except ParameterError as exc:
        raise ConfigError(str(exc), path) from exc


def parse_config(obj: Mapping[str, Any]) -> RunConfig:
    validate(obj)
    sim = obj["simulation"]
    priors = PriorSet.from_json(obj["priors"])
    policy = _policy(obj["pricing"], "$.pricing") if "pricing" in obj else BASELINE_POLICY
    policies = tuple(_policy(p, f"$.policies[{k}]") for k, p in enumerate(obj.get("policies", ())))
    try:
        simulation = SimulationConfig(
            n_customers=sim["n_customers"],
            n_products=sim["n_products"],
            n_categories=sim["n_categories"],
            weeks=sim["weeks"],
            master_seed=sim.get("seed", 0),
            priors=priors,
            policy=policy,
            mode=sim.get("mode", "feature"),
            category_concentration=sim.get("category_concentration", 0.3),
            threads=sim.get("threads", 1),
            chunk_size=sim.get("chunk_size", 128),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc), "$.simulation") from exc

    seg = obj.get("segmentation", {})
    el = obj.get("elasticity", {})
    if "week" in el and el["week"] > simulation.weeks:
        raise ConfigError(f"week must not exceed simulation.weeks = {simulation.weeks}", "$.elasticity.week")

    calibration = None
    if "calibration" in obj:
        cal = obj["calibration"]
        params = {}
        for address, box in cal.get("params", {}).items():
            path = f"$.calibration.params.{address}"
            try:
                name, _, pname = address.partition(".")
                if name not in PRIOR_NAMES or pname not in PARAM_NAMES[priors[name].family]:
                    raise ParameterError(f"{address!r} does not name a prior parameter")
                params[address] = ParamRange(box["lower"], box["upper"], box.get("scale", "linear"))
            except (ShopsimError, ValueError) as exc:
                raise ConfigError(str(exc), path) from exc
        space = SearchSpace(params, tuple(cal.get("selected", DEFAULT_SELECTED)),
                            dict(cal.get("aliases", DEFAULT_ALIASES)))
        calibration = CalibrationSettings(space, cal.get("budget", 50), cal.get("workers", 1))

    return RunConfig(
        simulation=simulation,
        policy=policy,
        policies=policies or SCENARIO_POLICIES,
        n_segments=seg.get("n_segments", 3),
        retention_window=seg.get("retention_window", 4),
        store_overrides=seg.get("store_overrides", True),
        elasticity_week=el.get("week"),
        elasticity_customers=el.get("n_customers", 100),
        elasticity_products=el.get("n_products", 100),
        calibration=calibration,
        output_dir=obj.get("output", {}).get("dir"),
        raw=obj,
    )


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file.  OSError propagates; bad JSON is a ConfigError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return parse_config(obj)


def config_with_priors(raw: Mapping[str, Any], priors: PriorSet, seed: int | None = None) -> dict:
    """Copy of a raw config with its priors section replaced (and optionally the seed)."""
    out = json.loads(json.dumps(raw))
    out["priors"] = priors.to_json()
    if seed is not None:
        out["simulation"]["seed"] = int(seed)
    return out


def desk_config(seed: int = 0) -> dict:
    """A small ready-to-run config: 100 customers, 1000 products, 30 categories, 53 weeks."""
    return {
        "simulation": {"n_customers": 100, "n_products": 1000, "n_categories": 30, "weeks": 53, "seed": seed},
        "priors": {},
        "pricing": BASELINE_POLICY.to_json(),
    }
