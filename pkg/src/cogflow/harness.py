"""Named experiments verifying the blending mechanism, with reports.

Each experiment compares sampled endpoint statistics against an
independent reference (bound target distributions, the moment ODE, or
exact counting) and emits a MetricsReport. The tolerance convention for
statistical comparisons is |empirical - oracle| <= 3 * SE + 1e-9 per
scalar; criteria report the normalized discrepancy max |diff| / (3 * SE
+ 1e-9), so values <= 1 pass.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from ._fsio import atomic_write_text
from .blend import BlendSpec
from .cogspace import CognitiveSpace, ScoreVector
from .errors import ContractViolation
from .flow import (
    GenerationRequest,
    IntegrationConfig,
    SampleBatch,
    build_blend_spec,
    generate,
    moment_reference,
)
from .polarize import (
    PolarizationCache,
    PolarizerBackend,
    TemplateBackend,
    build_all_sets,
)
from .semantics import SemanticModel, bind

TOLERANCE_FLOOR = 1e-9

RECORD_FIELDS = (
    "label",
    "score",
    "empirical_mean",
    "empirical_cov",
    "oracle_mean",
    "oracle_cov",
    "discrepancy",
    "eval_count",
    "wall_ms",
    "extra",
)


@dataclass(frozen=True)
class Criterion:
    name: str
    value: float | None
    threshold: float
    passed: bool | None  # None marks an inconclusive criterion

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "pass": self.passed,
        }


@dataclass
class MetricsReport:
    experiment: str
    config_digest: str
    records: list[dict]
    criteria: list[Criterion]

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.criteria)

    def to_json_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "experiment": self.experiment,
            "records": self.records,
            "summary": {"criteria": [c.to_json_dict() for c in self.criteria]},
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "MetricsReport":
        return cls(
            experiment=payload["experiment"],
            config_digest=payload["config_digest"],
            records=payload["records"],
            criteria=[
                Criterion(
                    name=c["name"],
                    value=c["value"],
                    threshold=c["threshold"],
                    passed=c["pass"],
                )
                for c in payload["summary"]["criteria"]
            ],
        )


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs, plus provenance."""

    kind: str
    space: CognitiveSpace
    model: SemanticModel
    base_prompt: str = "a mountain lake"
    blend_mode: str = "stochastic"
    base_mix: float = 0.5
    draw_scope: str = "per_eval"
    integration: IntegrationConfig = dc_field(default_factory=IntegrationConfig)
    sample_count: int = 2048
    seed: int = 0
    score: ScoreVector | None = None
    path_start: ScoreVector | None = None
    path_stop: ScoreVector | None = None
    grid_points: int = 5
    deltas: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    equivalence_seeds: int = 200
    oracle_steps: int = 2000
    output_dir: Path = Path("cogflow_out")
    threads: int = 1
    backend: PolarizerBackend = dc_field(default_factory=TemplateBackend)
    cache: PolarizationCache | None = None
    config_digest: str = ""

    def __post_init__(self):
        if self.score is not None and len(self.score) != self.space.n:
            raise ContractViolation("score does not match the space")
        for point in (self.path_start, self.path_stop):
            if point is not None and len(point) != self.space.n:
                raise ContractViolation("path point does not match the space")
        if not self.config_digest:
            self.config_digest = digest_of(self.fingerprint())

    def fingerprint(self) -> dict:
        return {
            "kind": self.kind,
            "space": self.space.to_records(),
            "semantics": self.model.to_config(),
            "base_prompt": self.base_prompt,
            "blend": {
                "mode": self.blend_mode,
                "lambda": self.base_mix,
                "draw_scope": self.draw_scope,
            },
            "flow": {
                "solver": self.integration.solver,
                "steps": self.integration.steps,
                "sample_count": self.sample_count,
                "seed": self.seed,
            },
            "experiment": {
                "score": None if self.score is None else list(self.score.values),
                "path_start": None
                if self.path_start is None
                else list(self.path_start.values),
                "path_stop": None
                if self.path_stop is None
                else list(self.path_stop.values),
                "grid_points": self.grid_points,
                "deltas": list(self.deltas),
                "equivalence_seeds": self.equivalence_seeds,
                "oracle_steps": self.oracle_steps,
            },
        }

    def center_score(self) -> ScoreVector:
        return ScoreVector((0.5,) * self.space.n)


def digest_of(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None  # strict JSON has no NaN/Inf
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def make_record(label: str, **fields) -> dict:
    unknown = set(fields) - set(RECORD_FIELDS)
    if unknown:
        raise ContractViolation(f"unknown record fields: {sorted(unknown)}")
    record = {key: None for key in RECORD_FIELDS}
    record["label"] = label
    for key, value in fields.items():
        record[key] = _jsonable(value)
    return record


def _map_ordered(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _request(cfg: ExperimentConfig, score: ScoreVector, **overrides) -> GenerationRequest:
    params = {
        "base_prompt": cfg.base_prompt,
        "score": score,
        "seed": cfg.seed,
        "sample_count": cfg.sample_count,
        "blend_mode": cfg.blend_mode,
        "base_mix": cfg.base_mix,
        "draw_scope": cfg.draw_scope,
        "integration": cfg.integration,
    }
    params.update(overrides)
    return GenerationRequest(**params)


def _generate(cfg: ExperimentConfig, request: GenerationRequest, model=None) -> SampleBatch:
    return generate(
        request, cfg.space, model if model is not None else cfg.model, cfg.backend, cfg.cache
    )


def _empirical(endpoints: np.ndarray):
    """Mean, covariance (ddof=1), and the standard error of the mean."""
    mean = endpoints.mean(axis=0)
    if endpoints.shape[0] < 2:
        cov = np.full((endpoints.shape[1], endpoints.shape[1]), np.nan)
    else:
        cov = np.atleast_2d(np.cov(endpoints, rowvar=False, ddof=1))
    se_mean = np.sqrt(np.diag(cov) / endpoints.shape[0])
    return mean, cov, se_mean


def _cov_se(cov: np.ndarray, count: int) -> np.ndarray:
    # Gaussian sampling error of covariance entries
    d = np.diag(cov)
    return np.sqrt((np.outer(d, d) + cov**2) / (count - 1))


def normalized_discrepancy(diff, se) -> float:
    """max |diff| / (3 * SE + floor); <= 1 means within tolerance."""
    diff = np.abs(np.asarray(diff, dtype=float))
    denom = 3.0 * np.asarray(se, dtype=float) + TOLERANCE_FLOOR
    return float(np.max(diff / denom))


def _oracle_spec(cfg: ExperimentConfig, score: ScoreVector, base_mix: float) -> BlendSpec:
    request = _request(cfg, score, blend_mode="full_average", base_mix=base_mix)
    return build_blend_spec(request, cfg.space, cfg.model, cfg.backend, cfg.cache)


def vertex_recovery(cfg: ExperimentConfig) -> MetricsReport:
    """Endpoints at vertex scores against their exact references.

    Leg A (anchor target): base_mix=0, full mode, position bias zeroed;
    the blend reduces to the anchor's own field, so endpoints must match
    the anchor's bound target. Leg B (half-base): base_mix=0.5 with the
    configured model, checked against the moment ODE.
    """
    flat_model = replace(cfg.model, position_bias=0.0)
    sets = build_all_sets(cfg.backend, cfg.base_prompt, cfg.space, cfg.cache)
    oracle_cfg = IntegrationConfig(solver="rk4", steps=cfg.oracle_steps)

    def run_vertex(prompt_set):
        anchor = prompt_set.anchor
        score = ScoreVector(tuple(float(b) for b in anchor.bits))
        label = "".join(str(b) for b in anchor.bits)
        records = []
        # leg A: pure-anchor blend vs the bound target
        request = _request(cfg, score, blend_mode="full_average", base_mix=0.0)
        batch = _generate(cfg, request, model=flat_model)
        target = bind(flat_model, prompt_set.chains[0].result)
        target_mean = target.mean()
        target_var = target.components[0][2]
        mean, cov, se_mean = _empirical(batch.endpoints)
        var = np.diag(cov)
        se_var = var * np.sqrt(2.0 / (batch.endpoints.shape[0] - 1))
        d_mean = normalized_discrepancy(mean - target_mean, se_mean)
        d_var = normalized_discrepancy(var - target_var, se_var)
        records.append(
            make_record(
                f"vertex_{label}_anchor_target",
                score=list(score.values),
                empirical_mean=mean,
                empirical_cov=cov,
                oracle_mean=target_mean,
                oracle_cov=target_var * np.eye(len(mean)),
                discrepancy=max(d_mean, d_var),
                eval_count=batch.metadata["eval_count"],
                wall_ms=batch.metadata["wall_ms"],
                extra={"mean_discrepancy": d_mean, "variance_discrepancy": d_var},
            )
        )
        # leg B: half-base blend vs the moment oracle
        request_half = _request(cfg, score, blend_mode="full_average", base_mix=0.5)
        batch_half = _generate(cfg, request_half)
        oracle = moment_reference(_oracle_spec(cfg, score, 0.5), oracle_cfg)
        mean_h, cov_h, se_h = _empirical(batch_half.endpoints)
        d_mean_h = normalized_discrepancy(mean_h - oracle.endpoint_mean, se_h)
        d_cov_h = normalized_discrepancy(
            cov_h - oracle.endpoint_cov, _cov_se(cov_h, batch_half.endpoints.shape[0])
        )
        records.append(
            make_record(
                f"vertex_{label}_half_base",
                score=list(score.values),
                empirical_mean=mean_h,
                empirical_cov=cov_h,
                oracle_mean=oracle.endpoint_mean,
                oracle_cov=oracle.endpoint_cov,
                discrepancy=max(d_mean_h, d_cov_h),
                eval_count=batch_half.metadata["eval_count"],
                wall_ms=batch_half.metadata["wall_ms"],
                extra={"mean_discrepancy": d_mean_h, "cov_discrepancy": d_cov_h},
            )
        )
        return records, d_mean, d_var, d_mean_h, d_cov_h

    results = _map_ordered(run_vertex, sets, cfg.threads)
    records = [rec for result in results for rec in result[0]]
    criteria = [
        Criterion("anchor_target_mean", max(r[1] for r in results), 1.0, None),
        Criterion("anchor_target_variance", max(r[2] for r in results), 1.0, None),
        Criterion("half_base_oracle_mean", max(r[3] for r in results), 1.0, None),
        Criterion("half_base_oracle_cov", max(r[4] for r in results), 1.0, None),
    ]
    criteria = [replace(c, passed=bool(c.value <= c.threshold)) for c in criteria]
    return MetricsReport("vertex_recovery", cfg.config_digest, records, criteria)


def _axis_direction(cfg: ExperimentConfig, start: ScoreVector, stop: ScoreVector):
    """Latent direction of the swept dimension, if the path is axis-aligned."""
    delta = np.asarray(stop.values) - np.asarray(start.values)
    moving = np.nonzero(np.abs(delta) > 0)[0]
    if len(moving) != 1:
        return None, None
    axis = int(moving[0])
    direction = cfg.model.dimension_directions[axis] * np.sign(delta[axis])
    return axis, direction


def continuity_sweep(cfg: ExperimentConfig) -> MetricsReport:
    """Endpoint displacement under small score perturbations, on a path.

    Shared seeds pair the samples, so displacement isolates the score's
    effect; the displacement between successive delta levels must scale
    linearly. Axis-aligned paths also get a monotone-response criterion
    on the projected endpoint mean.
    """
    if cfg.blend_mode != "full_average":
        raise ContractViolation(
            "continuity_sweep needs full_average mode (stochastic draws break pairing)"
        )
    default_start, default_stop = _default_path(cfg)
    start = cfg.path_start if cfg.path_start is not None else default_start
    stop = cfg.path_stop if cfg.path_stop is not None else default_stop
    start_arr = np.asarray(start.values)
    step = np.asarray(stop.values) - start_arr
    if not np.any(step != 0.0):
        raise ContractViolation("path_start and path_stop coincide")
    unit = step / np.linalg.norm(step)
    points = max(2, cfg.grid_points)
    axis, proj_direction = _axis_direction(cfg, start, stop)

    def run_point(j):
        frac = j / (points - 1)
        score_values = start_arr + frac * step
        score = ScoreVector(tuple(score_values))
        batch = _generate(cfg, _request(cfg, score))
        mean, cov, se_mean = _empirical(batch.endpoints)
        displacements = {}
        for delta in cfg.deltas:
            probe_values = score_values + delta * unit
            if np.any((probe_values < 0.0) | (probe_values > 1.0)):
                probe_values = score_values - delta * unit
            probe = ScoreVector(tuple(probe_values))
            probe_batch = _generate(cfg, _request(cfg, probe))
            diff = probe_batch.endpoints - batch.endpoints
            displacements[delta] = float(np.linalg.norm(diff, axis=1).mean())
        ordered = sorted(cfg.deltas, reverse=True)
        ratios = []
        for big, small in zip(ordered, ordered[1:]):
            if displacements[small] > 0.0:
                ratios.append(displacements[big] / displacements[small])
        projection = None
        proj_se = None
        if proj_direction is not None:
            projection = float(mean @ proj_direction)
            proj_se = float(
                np.sqrt(proj_direction @ cov @ proj_direction / batch.endpoints.shape[0])
            )
        record = make_record(
            f"path_point_{j}",
            score=list(score.values),
            empirical_mean=mean,
            empirical_cov=cov,
            eval_count=batch.metadata["eval_count"],
            wall_ms=batch.metadata["wall_ms"],
            extra={
                "displacements": {f"{d:g}": v for d, v in displacements.items()},
                "ratios": ratios,
                "projection": projection,
                "projection_se": proj_se,
            },
        )
        return record, ratios, projection, proj_se

    results = _map_ordered(run_point, range(points), cfg.threads)
    records = [r[0] for r in results]
    all_ratios = [ratio for r in results for ratio in r[1]]
    criteria = []
    if all_ratios:
        outside = max(max(0.0, 5.0 - r, r - 20.0) for r in all_ratios)
        criteria.append(
            Criterion("displacement_ratio_window", outside, 0.0, outside <= 0.0)
        )
    else:
        criteria.append(Criterion("displacement_ratio_window", None, 0.0, None))
    if proj_direction is not None:
        worst = -np.inf
        for (_, _, p0, se0), (_, _, p1, se1) in zip(results, results[1:]):
            pair_se = float(np.hypot(se0, se1))
            worst = max(worst, -(p1 - p0) - (3.0 * pair_se + TOLERANCE_FLOOR))
        criteria.append(
            Criterion("monotone_response", float(worst), 0.0, bool(worst <= 0.0))
        )
    return MetricsReport("continuity_sweep", cfg.config_digest, records, criteria)


def _default_path(cfg: ExperimentConfig) -> tuple[ScoreVector, ScoreVector]:
    center = [0.5] * cfg.space.n
    start, stop = list(center), list(center)
    start[0], stop[0] = 0.0, 1.0
    return ScoreVector(tuple(start)), ScoreVector(tuple(stop))


def order_bias_experiment(cfg: ExperimentConfig) -> MetricsReport:
    """Per-chain rewrite-order bias versus its Latin-square average.

    Recovers each chain's per-dimension effective weights from the bound
    target means; single chains overweight late positions, and averaging
    the n cyclic chains cancels the bias exactly.
    """
    if getattr(cfg.backend, "backend_id", "") != "template":
        raise ContractViolation("order_bias_experiment needs the template backend")
    beta = cfg.model.position_bias
    if beta == 0.0:
        warnings.warn("position_bias is 0; order-bias experiment is vacuous")
    model = cfg.model
    sets = build_all_sets(cfg.backend, cfg.base_prompt, cfg.space, cfg.cache)
    n = cfg.space.n
    basis = model.dimension_directions.T  # (D, n)
    records = []
    worst_chain = 0.0
    worst_average = 0.0
    for prompt_set in sets:
        signs = np.array([1.0 if b else -1.0 for b in prompt_set.anchor.bits])
        chain_weights = []
        for chain in prompt_set.chains:
            mean = bind(model, chain.result).mean()
            coeff, *_ = np.linalg.lstsq(basis, mean - model.base_mean, rcond=None)
            effective = coeff / (signs * model.effect_magnitudes)
            chain_weights.append(effective)
        chain_weights = np.array(chain_weights)  # (n_chains, n)
        averaged = chain_weights.mean(axis=0)
        chain_dev = float(np.max(np.abs(chain_weights - 1.0)))
        avg_dev = float(np.max(np.abs(averaged - 1.0)))
        worst_chain = max(worst_chain, chain_dev)
        worst_average = max(worst_average, avg_dev)
        label = "".join(str(b) for b in prompt_set.anchor.bits)
        records.append(
            make_record(
                f"anchor_{label}",
                score=[float(b) for b in prompt_set.anchor.bits],
                discrepancy=avg_dev,
                extra={
                    "chain_effective_weights": chain_weights,
                    "averaged_effective_weights": averaged,
                    "worst_chain_deviation": chain_dev,
                },
            )
        )
    expected_worst = beta * (n - 1) / (2.0 * n)
    criteria = [
        Criterion(
            "averaged_weights_unbiased",
            worst_average,
            1e-12,
            worst_average <= 1e-12,
        ),
        Criterion(
            "worst_chain_deviation_matches",
            abs(worst_chain - expected_worst),
            1e-12,
            abs(worst_chain - expected_worst) <= 1e-12,
        ),
    ]
    return MetricsReport("order_bias", cfg.config_digest, records, criteria)


def cost_accounting(cfg: ExperimentConfig) -> MetricsReport:
    """Exact inner-evaluation counts for both modes and their ratio."""
    score = cfg.score if cfg.score is not None else cfg.center_score()
    n = cfg.space.n
    per_call = {
        "stochastic": (1 << n) + 1,
        "full_average": n * (1 << n) + 1,
    }
    calls = cfg.integration.steps * cfg.integration.stages_per_step
    records = []
    actual = {}
    for mode in ("stochastic", "full_average"):
        batch = _generate(cfg, _request(cfg, score, blend_mode=mode))
        expected = cfg.sample_count * calls * per_call[mode]
        actual[mode] = batch.metadata["eval_count"]
        records.append(
            make_record(
                f"mode_{mode}",
                score=list(score.values),
                eval_count=batch.metadata["eval_count"],
                wall_ms=batch.metadata["wall_ms"],
                extra={
                    "expected_eval_count": expected,
                    "per_call_evals": per_call[mode],
                },
            )
        )
    expected_ratio = per_call["stochastic"] / per_call["full_average"]
    measured_ratio = actual["stochastic"] / actual["full_average"]
    criteria = [
        Criterion(
            "stochastic_count_exact",
            abs(actual["stochastic"] - cfg.sample_count * calls * per_call["stochastic"]),
            0.0,
            None,
        ),
        Criterion(
            "full_count_exact",
            abs(actual["full_average"] - cfg.sample_count * calls * per_call["full_average"]),
            0.0,
            None,
        ),
        Criterion("eval_ratio_exact", abs(measured_ratio - expected_ratio), 0.0, None),
    ]
    criteria = [replace(c, passed=bool(c.value <= c.threshold)) for c in criteria]
    return MetricsReport("cost_accounting", cfg.config_digest, records, criteria)


def stochastic_equivalence(cfg: ExperimentConfig) -> MetricsReport:
    """Stochastic-mode endpoint mean against the full-average reference."""
    if cfg.model.position_bias == 0.0:
        warnings.warn("position_bias is 0; chains are identical and modes agree exactly")
    score = cfg.score if cfg.score is not None else cfg.center_score()
    seeds = cfg.equivalence_seeds
    batches = {}
    for mode in ("stochastic", "full_average"):
        batches[mode] = _generate(
            cfg, _request(cfg, score, blend_mode=mode, sample_count=seeds)
        )
    stats = {mode: _empirical(b.endpoints) for mode, b in batches.items()}
    records = [
        make_record(
            f"mode_{mode}",
            score=list(score.values),
            empirical_mean=stats[mode][0],
            empirical_cov=stats[mode][1],
            eval_count=batches[mode].metadata["eval_count"],
            wall_ms=batches[mode].metadata["wall_ms"],
            extra={"seeds": seeds},
        )
        for mode in batches
    ]
    if seeds < 2:
        criteria = [Criterion("stochastic_matches_full", None, 1.0, None)]
        return MetricsReport("stochastic_equivalence", cfg.config_digest, records, criteria)
    diff = stats["stochastic"][0] - stats["full_average"][0]
    combined_se = np.hypot(stats["stochastic"][2], stats["full_average"][2])
    value = normalized_discrepancy(diff, combined_se)
    criteria = [Criterion("stochastic_matches_full", value, 1.0, value <= 1.0)]
    records.append(
        make_record(
            "mode_difference",
            score=list(score.values),
            discrepancy=value,
            extra={"mean_difference": diff, "combined_se": combined_se},
        )
    )
    return MetricsReport("stochastic_equivalence", cfg.config_digest, records, criteria)


EXPERIMENTS = {
    "vertex_recovery": vertex_recovery,
    "continuity_sweep": continuity_sweep,
    "order_bias": order_bias_experiment,
    "cost_accounting": cost_accounting,
    "stochastic_equivalence": stochastic_equivalence,
}


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    runner = EXPERIMENTS.get(cfg.kind)
    if runner is None:
        raise ContractViolation(
            f"unknown experiment kind {cfg.kind!r}; expected one of {sorted(EXPERIMENTS)}"
        )
    return runner(cfg)


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ";".join(_csv_cell(v) for v in value)
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True).replace(",", ";")
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_report(report: MetricsReport, directory) -> list[Path]:
    """Write metrics.json, metrics.csv, and series.csv atomically."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digest_line = f"# config_digest={report.config_digest}"
    written = []

    json_path = directory / "metrics.json"
    atomic_write_text(json_path, json.dumps(report.to_json_dict(), indent=2) + "\n")
    written.append(json_path)

    csv_lines = [digest_line, ",".join(RECORD_FIELDS)]
    for record in report.records:
        csv_lines.append(",".join(_csv_cell(record[field]) for field in RECORD_FIELDS))
    csv_path = directory / "metrics.csv"
    atomic_write_text(csv_path, "\n".join(csv_lines) + "\n")
    written.append(csv_path)

    # plot-ready series: score components vs projection / discrepancy
    n = max(
        (len(r["score"]) for r in report.records if r.get("score")),
        default=0,
    )
    series_header = (
        ["index"]
        + [f"s{i + 1}" for i in range(n)]
        + ["projection", "discrepancy"]
    )
    series_lines = [digest_line, ",".join(series_header)]
    for idx, record in enumerate(report.records):
        score = record.get("score") or [None] * n
        extra = record.get("extra") or {}
        row = (
            [str(idx)]
            + [_csv_cell(s) for s in score]
            + [_csv_cell(extra.get("projection")), _csv_cell(record.get("discrepancy"))]
        )
        series_lines.append(",".join(row))
    series_path = directory / "series.csv"
    atomic_write_text(series_path, "\n".join(series_lines) + "\n")
    written.append(series_path)
    return written
