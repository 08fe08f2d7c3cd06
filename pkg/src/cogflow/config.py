"""Config loading and resolution for the CLI.

One JSON document with sections {space, semantics, polarize, blend,
flow, experiment}. Unknown keys are rejected, every key has a default,
and dotted --set overrides (e.g. blend.lambda=0) apply to the resolved
document. The provenance digest is the sha256 of the resolved config.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

from .cogspace import CognitiveSpace, ScoreVector
from .errors import ConfigError
from .flow import AffineDecoder, GenerationRequest, IdentityDecoder, IntegrationConfig
from .harness import ExperimentConfig
from .polarize import (
    DEFAULT_CACHE_PATH,
    LlmBackend,
    PolarizationCache,
    PolarizerBackend,
    TemplateBackend,
)
from .semantics import SemanticModel, TargetDistribution

DEFAULT_CONFIG = {
    "space": {
        "dimensions": [
            {
                "name": "valence",
                "low_pole_text": "unpleasant, negative mood",
                "high_pole_text": "pleasant, positive mood",
            },
            {
                "name": "arousal",
                "low_pole_text": "calm, subdued, low energy",
                "high_pole_text": "intense, energetic, stimulating",
            },
        ]
    },
    "semantics": {
        "latent_dim": None,  # null -> max(2, n)
        "base_mean": 0.0,  # scalar broadcast or explicit vector
        "effect_magnitudes": 1.0,  # scalar broadcast or per-dimension list
        "position_bias": 0.0,
        "default_variance": 1.0,
        "dimension_directions": None,  # null -> coordinate axes
        "explicit_bindings": {},  # prompt -> [{weight, mean, variance}, ...]
    },
    "polarize": {
        "backend": "template",  # template | llm
        "cache_path": None,  # null -> $COGFLOW_CACHE_PATH or ./polarize_cache.ndjson
        "llm": {
            "endpoint": "",
            "model": "",
            "timeout_s": 30.0,
            "retries": 3,
        },
    },
    "blend": {
        "mode": "stochastic",  # stochastic | full_average
        "lambda": 0.5,  # base-velocity share; 0 drops the base, 1 is pure base
        "draw_scope": "per_eval",  # per_eval | per_step
    },
    "flow": {
        "solver": "rk4",  # euler | midpoint | rk4
        "steps": 100,
        "sample_count": 2048,
        "seed": 0,
        "record_trajectory": False,
        "decoder": {"kind": "identity", "matrix": None, "offset": None},
    },
    "experiment": {
        "kind": "vertex_recovery",
        "base_prompt": "a mountain lake",
        "score": None,  # null -> hypercube center
        "path_start": None,  # null -> axis sweep of dimension 1
        "path_stop": None,
        "grid_points": 5,
        "deltas": [1e-2, 1e-3, 1e-4],
        "equivalence_seeds": 200,
        "oracle_steps": 2000,
        "output_dir": "cogflow_out",
    },
}

# keys whose values are free-form mappings
_FREE_PATHS = {"semantics.explicit_bindings"}
# list-of-record keys with a fixed per-record schema
_RECORD_PATHS = {"space.dimensions": ({"name"}, {"name", "low_pole_text", "high_pole_text"})}


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    return raw


def resolve_config(user: dict | None = None) -> dict:
    """Merge a user document over the defaults, rejecting unknown keys."""
    return _merge(DEFAULT_CONFIG, user or {}, "")


def _merge(default: dict, user: dict, path: str) -> dict:
    if not isinstance(user, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    unknown = set(user) - set(default)
    if unknown:
        prefix = f"{path}." if path else ""
        names = ", ".join(sorted(f"{prefix}{k}" for k in unknown))
        raise ConfigError(f"unknown config key(s): {names}")
    out = {}
    for key, dval in default.items():
        here = f"{path}.{key}" if path else key
        if key not in user:
            out[key] = copy.deepcopy(dval)
            continue
        uval = user[key]
        if here in _FREE_PATHS:
            out[key] = copy.deepcopy(uval)
        elif here in _RECORD_PATHS:
            out[key] = _check_records(here, uval)
        elif isinstance(dval, dict):
            out[key] = _merge(dval, uval, here)
        else:
            out[key] = copy.deepcopy(uval)
    return out


def _check_records(path: str, records) -> list[dict]:
    required, allowed = _RECORD_PATHS[path]
    if not isinstance(records, list):
        raise ConfigError(f"{path} must be a list of objects")
    out = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise ConfigError(f"{path}[{i}] must be an object")
        unknown = set(rec) - allowed
        if unknown:
            raise ConfigError(f"unknown key(s) in {path}[{i}]: {sorted(unknown)}")
        missing = required - set(rec)
        if missing:
            raise ConfigError(f"{path}[{i}] missing required key(s): {sorted(missing)}")
        out.append(copy.deepcopy(rec))
    return out


def apply_overrides(resolved: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value overrides; values parse as JSON, else string."""
    out = copy.deepcopy(resolved)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = out
        free = False
        for depth, key in enumerate(keys[:-1]):
            free = free or ".".join(keys[: depth + 1]) in _FREE_PATHS
            if not isinstance(node, dict) or (key not in node and not free):
                raise ConfigError(f"unknown override path: {dotted}")
            node = node.setdefault(key, {}) if free else node[key]
        last = keys[-1]
        free = free or dotted in _FREE_PATHS
        if not isinstance(node, dict) or (last not in node and not free):
            raise ConfigError(f"unknown override path: {dotted}")
        node[last] = value
    return out


def config_digest(resolved: dict) -> str:
    # output location is not part of the experiment definition
    significant = copy.deepcopy(resolved)
    significant.get("experiment", {}).pop("output_dir", None)
    canonical = json.dumps(significant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_space(resolved: dict) -> CognitiveSpace:
    return CognitiveSpace.from_records(resolved["space"]["dimensions"])


def build_model(resolved: dict, space: CognitiveSpace) -> SemanticModel:
    sem = resolved["semantics"]
    bindings = {
        prompt: TargetDistribution.from_records(records)
        for prompt, records in sem["explicit_bindings"].items()
    }
    return SemanticModel.for_space(
        space,
        latent_dim=sem["latent_dim"],
        base_mean=sem["base_mean"],
        dimension_directions=sem["dimension_directions"],
        effect_magnitudes=sem["effect_magnitudes"],
        position_bias=sem["position_bias"],
        default_variance=sem["default_variance"],
        explicit_bindings=bindings,
    )


def build_backend(resolved: dict) -> PolarizerBackend:
    pol = resolved["polarize"]
    kind = pol["backend"]
    if kind == "template":
        return TemplateBackend()
    if kind == "llm":
        llm = pol["llm"]
        return LlmBackend(
            endpoint=llm["endpoint"],
            model=llm["model"],
            timeout=llm["timeout_s"],
            retries=llm["retries"],
        )
    raise ConfigError(f"polarize.backend must be 'template' or 'llm', got {kind!r}")


def resolve_cache_path(resolved: dict) -> str:
    configured = resolved["polarize"]["cache_path"]
    if configured:
        return configured
    return os.environ.get("COGFLOW_CACHE_PATH") or DEFAULT_CACHE_PATH


def build_cache(resolved: dict) -> PolarizationCache:
    return PolarizationCache(resolve_cache_path(resolved))


def build_integration(resolved: dict) -> IntegrationConfig:
    flow_cfg = resolved["flow"]
    return IntegrationConfig(
        solver=flow_cfg["solver"],
        steps=flow_cfg["steps"],
        record_trajectory=flow_cfg["record_trajectory"],
    )


def build_decoder(resolved: dict):
    decoder = resolved["flow"]["decoder"]
    kind = decoder["kind"]
    if kind == "identity":
        return IdentityDecoder()
    if kind == "affine":
        if decoder["matrix"] is None or decoder["offset"] is None:
            raise ConfigError("affine decoder needs flow.decoder.matrix and .offset")
        return AffineDecoder(matrix=decoder["matrix"], offset=decoder["offset"])
    raise ConfigError(f"flow.decoder.kind must be 'identity' or 'affine', got {kind!r}")


def _score_or_center(values, space: CognitiveSpace) -> ScoreVector:
    if values is None:
        return ScoreVector((0.5,) * space.n)
    return ScoreVector(tuple(values))


def build_request(resolved: dict, space: CognitiveSpace) -> GenerationRequest:
    flow_cfg = resolved["flow"]
    blend_cfg = resolved["blend"]
    return GenerationRequest(
        base_prompt=resolved["experiment"]["base_prompt"],
        score=_score_or_center(resolved["experiment"]["score"], space),
        seed=flow_cfg["seed"],
        sample_count=flow_cfg["sample_count"],
        blend_mode=blend_cfg["mode"],
        base_mix=blend_cfg["lambda"],
        draw_scope=blend_cfg["draw_scope"],
        integration=build_integration(resolved),
        decoder=build_decoder(resolved),
    )


def build_experiment(
    resolved: dict,
    out_dir=None,
    threads: int = 1,
    backend: PolarizerBackend | None = None,
    cache: PolarizationCache | None = None,
) -> ExperimentConfig:
    space = build_space(resolved)
    model = build_model(resolved, space)
    exp = resolved["experiment"]
    blend_cfg = resolved["blend"]
    flow_cfg = resolved["flow"]

    def maybe_score(values):
        return None if values is None else ScoreVector(tuple(values))

    return ExperimentConfig(
        kind=exp["kind"],
        space=space,
        model=model,
        base_prompt=exp["base_prompt"],
        blend_mode=blend_cfg["mode"],
        base_mix=blend_cfg["lambda"],
        draw_scope=blend_cfg["draw_scope"],
        integration=build_integration(resolved),
        sample_count=flow_cfg["sample_count"],
        seed=flow_cfg["seed"],
        score=maybe_score(exp["score"]),
        path_start=maybe_score(exp["path_start"]),
        path_stop=maybe_score(exp["path_stop"]),
        grid_points=exp["grid_points"],
        deltas=tuple(exp["deltas"]),
        equivalence_seeds=exp["equivalence_seeds"],
        oracle_steps=exp["oracle_steps"],
        output_dir=Path(out_dir if out_dir is not None else exp["output_dir"]),
        threads=threads,
        backend=backend if backend is not None else build_backend(resolved),
        cache=cache,
        config_digest=config_digest(resolved),
    )
