"""Probability-flow ODE integration and the end-to-end generation pipeline.

Time runs from t = 0 (standard-normal noise) to t = 1 (data); the state
follows dx/dt = v(x, t) on the uniform grid t_i = i / N with fixed-step
explicit solvers. Endpoints of affine blends can be cross-checked against
a moment ODE that evolves the exact Gaussian mean and covariance, which
is the module's independent oracle.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import streams
from .blend import AnchorFields, BlendedField, BlendSpec, DRAW_SCOPES, MODES
from .cogspace import CognitiveSpace, ScoreVector
from .errors import ContractViolation, DivergenceError
from .polarize import PolarizationCache, PolarizerBackend, TemplateBackend, build_all_sets
from .semantics import SemanticModel, VelocityField, bind, field_for_prompt
from ._fsio import atomic_write_text

SOLVERS = ("euler", "midpoint", "rk4")
_STAGES = {"euler": 1, "midpoint": 2, "rk4": 4}


@dataclass(frozen=True)
class IntegrationConfig:
    solver: str = "rk4"
    steps: int = 100
    record_trajectory: bool = False

    def __post_init__(self):
        solver = str(self.solver).lower()
        if solver not in SOLVERS:
            raise ContractViolation(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        object.__setattr__(self, "solver", solver)
        if self.steps < 1:
            raise ContractViolation(f"steps must be >= 1, got {self.steps}")

    @property
    def stages_per_step(self) -> int:
        return _STAGES[self.solver]


class IntegrationResult(NamedTuple):
    endpoint: np.ndarray
    trajectory: np.ndarray | None  # (N+1, ...) with row 0 = x0


def _check_finite(x: np.ndarray, step: int):
    finite = np.isfinite(x)
    if finite.all():
        return
    if x.ndim > 1:
        bad = int(np.argmin(finite.all(axis=-1)))
        raise DivergenceError(step, sample_index=bad)
    raise DivergenceError(step)


def integrate(
    field: VelocityField, x0, config: IntegrationConfig
) -> IntegrationResult:
    """Integrate dx/dt = field(x, t) from t=0 to t=1.

    x0 may be one state (D,) or a batch (B, D); batches advance in
    lockstep, which matches per-sample integration exactly because the
    draw streams are keyed per row.
    """
    x = np.array(x0, dtype=float)
    n_steps = config.steps
    h = 1.0 / n_steps
    trajectory = None
    if config.record_trajectory:
        trajectory = np.empty((n_steps + 1,) + x.shape)
        trajectory[0] = x
    begin_step = getattr(field, "begin_step", None)
    for i in range(n_steps):
        t = i / n_steps
        if begin_step is not None:
            begin_step(i)
        if config.solver == "euler":
            x = x + h * field.eval(x, t)
        elif config.solver == "midpoint":
            k1 = field.eval(x, t)
            x = x + h * field.eval(x + 0.5 * h * k1, t + 0.5 * h)
        else:  # rk4
            t_next = (i + 1) / n_steps
            k1 = field.eval(x, t)
            k2 = field.eval(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = field.eval(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = field.eval(x + h * k3, t_next)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(x, i)
        if trajectory is not None:
            trajectory[i + 1] = x
    return IntegrationResult(endpoint=x, trajectory=trajectory)


@dataclass(frozen=True)
class IdentityDecoder:
    kind: str = "identity"

    def apply(self, latents: np.ndarray) -> np.ndarray:
        return np.array(latents, copy=True)


@dataclass(frozen=True)
class AffineDecoder:
    matrix: np.ndarray  # (out_dim, latent_dim)
    offset: np.ndarray  # (out_dim,)
    kind: str = "affine"

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        offset = np.asarray(self.offset, dtype=float)
        if matrix.ndim != 2 or offset.shape != (matrix.shape[0],):
            raise ContractViolation("affine decoder needs matrix (M, D) and offset (M,)")
        matrix.flags.writeable = False
        offset.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "offset", offset)

    def apply(self, latents: np.ndarray) -> np.ndarray:
        return latents @ self.matrix.T + self.offset


@dataclass(frozen=True)
class GenerationRequest:
    base_prompt: str
    score: ScoreVector
    seed: int = 0
    sample_count: int = 2048
    blend_mode: str = "stochastic"
    base_mix: float = 0.5
    draw_scope: str = "per_eval"
    integration: IntegrationConfig = dc_field(default_factory=IntegrationConfig)
    decoder: IdentityDecoder | AffineDecoder = dc_field(default_factory=IdentityDecoder)

    def __post_init__(self):
        if self.sample_count < 1:
            raise ContractViolation(f"sample_count must be >= 1, got {self.sample_count}")
        if self.blend_mode not in MODES:
            raise ContractViolation(f"blend_mode must be one of {MODES}")
        if self.draw_scope not in DRAW_SCOPES:
            raise ContractViolation(f"draw_scope must be one of {DRAW_SCOPES}")

    def to_config(self) -> dict:
        decoder: dict = {"kind": self.decoder.kind}
        if isinstance(self.decoder, AffineDecoder):
            decoder["matrix"] = self.decoder.matrix.tolist()
            decoder["offset"] = self.decoder.offset.tolist()
        return {
            "base_prompt": self.base_prompt,
            "score": list(self.score.values),
            "seed": self.seed,
            "sample_count": self.sample_count,
            "blend_mode": self.blend_mode,
            "base_mix": self.base_mix,
            "draw_scope": self.draw_scope,
            "solver": self.integration.solver,
            "steps": self.integration.steps,
            "record_trajectory": self.integration.record_trajectory,
            "decoder": decoder,
        }


@dataclass
class SampleBatch:
    endpoints: np.ndarray  # (B, D)
    decoded: np.ndarray  # (B, out_dim)
    trajectories: np.ndarray | None  # (B, N+1, D)
    metadata: dict


def initial_states(seed: int, sample_count: int, dim: int) -> np.ndarray:
    """Per-sample standard-normal starts; sample i is a pure function of
    (seed, i), so adding samples never perturbs existing ones."""
    row_seeds = sample_seeds(seed, sample_count)
    return streams.standard_normal(
        row_seeds[:, None], streams.STREAM_INIT_STATE, np.arange(dim)[None, :]
    )


def sample_seeds(seed: int, sample_count: int) -> np.ndarray:
    return streams.counter_hash(
        seed, streams.STREAM_SAMPLE_SEED, np.arange(sample_count)
    )


def build_blend_spec(
    request: GenerationRequest,
    space: CognitiveSpace,
    model: SemanticModel,
    backend: PolarizerBackend | None = None,
    cache: PolarizationCache | None = None,
) -> BlendSpec:
    """Polarize, bind, and assemble the blended-field description."""
    backend = backend if backend is not None else TemplateBackend()
    sets = build_all_sets(backend, request.base_prompt, space, cache)
    base_field = field_for_prompt(model, request.base_prompt)
    anchor_sets = tuple(
        AnchorFields(
            anchor=ps.anchor,
            chain_fields=tuple(field_for_prompt(model, r) for r in ps.results),
        )
        for ps in sets
    )
    return BlendSpec(
        base_field=base_field,
        anchor_sets=anchor_sets,
        score=request.score,
        mode=request.blend_mode,
        base_mix=request.base_mix,
        draw_scope=request.draw_scope,
    )


def generate(
    request: GenerationRequest,
    space: CognitiveSpace,
    model: SemanticModel,
    backend: PolarizerBackend | None = None,
    cache: PolarizationCache | None = None,
) -> SampleBatch:
    """Run the full pipeline: polarize, bind, integrate, decode."""
    started = time.perf_counter()
    spec = build_blend_spec(request, space, model, backend, cache)
    x0 = initial_states(request.seed, request.sample_count, model.latent_dim)
    field = BlendedField(spec, seed=sample_seeds(request.seed, request.sample_count))
    result = integrate(field, x0, request.integration)
    decoded = request.decoder.apply(result.endpoint)
    trajectories = None
    if result.trajectory is not None:
        trajectories = np.swapaxes(result.trajectory, 0, 1)
    wall_ms = (time.perf_counter() - started) * 1e3
    metadata = {
        "seed": request.seed,
        "sample_count": request.sample_count,
        "eval_count": field.eval_counter,
        "wall_ms": wall_ms,
        "config": request.to_config(),
    }
    return SampleBatch(
        endpoints=result.endpoint,
        decoded=decoded,
        trajectories=trajectories,
        metadata=metadata,
    )


class MomentPaths(NamedTuple):
    times: np.ndarray  # (N+1,)
    means: np.ndarray  # (N+1, D)
    covariances: np.ndarray  # (N+1, D, D)

    @property
    def endpoint_mean(self) -> np.ndarray:
        return self.means[-1]

    @property
    def endpoint_cov(self) -> np.ndarray:
        return self.covariances[-1]


def blended_affine_coefficients(spec: BlendSpec, t: float) -> tuple[float, np.ndarray]:
    """Scalar slope and offset of a full-average blend of affine fields."""
    coeffs = getattr(spec.base_field, "affine_coefficients", None)
    if coeffs is None:
        raise ContractViolation("base field is not affine; no moment oracle")
    slope, offset = coeffs(t)
    slope *= spec.base_mix
    offset = spec.base_mix * offset
    anchor_share = 1.0 - spec.base_mix
    weights = spec.weights()
    for k, entry in enumerate(spec.anchor_sets):
        chain_slopes = []
        chain_offsets = []
        for f in entry.chain_fields:
            fn = getattr(f, "affine_coefficients", None)
            if fn is None:
                raise ContractViolation(
                    f"chain field of anchor {entry.anchor.bits} is not affine"
                )
            a, b = fn(t)
            chain_slopes.append(a)
            chain_offsets.append(b)
        slope += anchor_share * weights[k] * np.mean(chain_slopes)
        offset = offset + anchor_share * weights[k] * np.mean(chain_offsets, axis=0)
    return slope, offset


class _MomentField(VelocityField):
    """Packs (mean, covariance) into one state vector for integrate()."""

    def __init__(self, spec: BlendSpec, dim: int):
        self.spec = spec
        self.state_dim = dim

    def eval(self, z, t):
        d = self.state_dim
        slope, offset = blended_affine_coefficients(self.spec, t)
        m = z[:d]
        cov = z[d:].reshape(d, d)
        dm = slope * m + offset
        dcov = slope * cov + cov * slope
        return np.concatenate([dm, dcov.ravel()])


def moment_reference(spec: BlendSpec, config: IntegrationConfig) -> MomentPaths:
    """Exact mean/covariance evolution of the transported Gaussian.

    Valid only for full_average blends of affine (single-Gaussian) inner
    fields; serves as the distribution-level oracle for generate().
    """
    if spec.mode != "full_average":
        raise ContractViolation("moment oracle requires full_average mode")
    dims = {f.dim for e in spec.anchor_sets for f in e.chain_fields if hasattr(f, "dim")}
    if hasattr(spec.base_field, "dim"):
        dims.add(spec.base_field.dim)
    if len(dims) != 1:
        raise ContractViolation("cannot infer a unique latent dimension")
    dim = dims.pop()
    z0 = np.concatenate([np.zeros(dim), np.eye(dim).ravel()])
    cfg = replace(config, record_trajectory=True)
    result = integrate(_MomentField(spec, dim), z0, cfg)
    times = np.arange(cfg.steps + 1) / cfg.steps
    means = result.trajectory[:, :dim]
    covariances = result.trajectory[:, dim:].reshape(-1, dim, dim)
    return MomentPaths(times=times, means=means, covariances=covariances)


def _csv_lines(header: list[str], rows: np.ndarray) -> str:
    lines = [",".join(header)]
    for row in np.atleast_2d(rows):
        lines.append(",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def write_sample_batch(batch: SampleBatch, directory) -> list[Path]:
    """Write endpoints.csv, decoded.csv, and metadata.json atomically."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    latent_names = [f"z{i}" for i in range(batch.endpoints.shape[1])]
    decoded_names = [f"y{i}" for i in range(batch.decoded.shape[1])]
    written = []
    for name, text in (
        ("endpoints.csv", _csv_lines(latent_names, batch.endpoints)),
        ("decoded.csv", _csv_lines(decoded_names, batch.decoded)),
        ("metadata.json", json.dumps(batch.metadata, indent=2) + "\n"),
    ):
        path = directory / name
        atomic_write_text(path, text)
        written.append(path)
    return written
