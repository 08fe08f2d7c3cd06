"""Score-weighted blending of anchor velocity fields with the base field.

The blended velocity at (x, t) is

    v = base_mix * v_base + (1 - base_mix) * sum_k w_k(score) * vhat_k

where w_k are the multilinear anchor weights and vhat_k is either the
average of anchor k's chain fields (full_average mode) or one uniformly
drawn chain field (stochastic mode). base_mix = 0.5 recovers the equal
base/anchor split; base_mix = 0 drops the base-prompt velocity entirely
and base_mix = 1 ignores the anchors, which realizes the ablations.

Sums are accumulated as deviations from the base field value, so when
every inner field agrees the blend returns that shared value bit-exactly
regardless of score, mix, or mode.

Stochastic draws come from a counter-based stream keyed by (seed,
evaluation ordinal, anchor index): trajectories are reproducible and
independent of batching or scheduling. A BlendedField instance owns its
ordinal and evaluation counter and must not be shared across concurrent
callers; a BlendSpec is immutable and freely shareable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import streams
from .cogspace import CognitiveAnchor, ScoreVector, anchor_weight
from .errors import ContractViolation, SpaceMismatchError
from .semantics import VelocityField

MODES = ("stochastic", "full_average")
DRAW_SCOPES = ("per_eval", "per_step")


@dataclass(frozen=True)
class AnchorFields:
    """One anchor together with the fields bound from its prompt chains."""

    anchor: CognitiveAnchor
    chain_fields: tuple[VelocityField, ...]

    def __post_init__(self):
        if len(self.chain_fields) != len(self.anchor):
            raise ContractViolation(
                f"anchor {self.anchor.bits} needs {len(self.anchor)} chain fields, "
                f"got {len(self.chain_fields)}"
            )


@dataclass(frozen=True)
class BlendSpec:
    """Immutable description of one blended field."""

    base_field: VelocityField
    anchor_sets: tuple[AnchorFields, ...]
    score: ScoreVector
    mode: str = "stochastic"
    base_mix: float = 0.5
    draw_scope: str = "per_eval"

    def __post_init__(self):
        n = len(self.score)
        if len(self.anchor_sets) != (1 << n):
            raise ContractViolation(
                f"expected {1 << n} anchor entries for {n} dimensions, "
                f"got {len(self.anchor_sets)}"
            )
        for k, entry in enumerate(self.anchor_sets, start=1):
            if len(entry.anchor) != n:
                raise SpaceMismatchError(
                    f"anchor {entry.anchor.bits} does not match a {n}-dimensional score"
                )
            if entry.anchor.index != k:
                raise ContractViolation(
                    f"anchor entries must be in canonical order; "
                    f"position {k} holds anchor index {entry.anchor.index}"
                )
        if self.mode not in MODES:
            raise ContractViolation(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.draw_scope not in DRAW_SCOPES:
            raise ContractViolation(
                f"draw_scope must be one of {DRAW_SCOPES}, got {self.draw_scope!r}"
            )
        if not 0.0 <= self.base_mix <= 1.0:
            raise ContractViolation(f"base_mix must be in [0, 1], got {self.base_mix}")
        dims = {
            f.dim
            for entry in self.anchor_sets
            for f in entry.chain_fields
            if hasattr(f, "dim")
        }
        if hasattr(self.base_field, "dim"):
            dims.add(self.base_field.dim)
        if len(dims) > 1:
            raise SpaceMismatchError(f"inner fields disagree on latent dim: {dims}")

    @property
    def n(self) -> int:
        return len(self.score)

    @property
    def anchor_count(self) -> int:
        return len(self.anchor_sets)

    def evals_per_call(self) -> int:
        """Inner field evaluations per blended evaluation, per sample."""
        if self.mode == "stochastic":
            return self.anchor_count + 1
        return self.n * self.anchor_count + 1

    def weights(self) -> np.ndarray:
        return np.array(
            [anchor_weight(self.score, entry.anchor) for entry in self.anchor_sets]
        )


class BlendedField(VelocityField):
    """Evaluates the blend; owns the draw stream and evaluation counter.

    x may be a single state (D,) or a batch (B, D). For batched use,
    seed may be an array of per-row seeds so each row reproduces the
    stream it would own as a standalone single-sample field.
    """

    def __init__(self, spec: BlendSpec, seed):
        self.spec = spec
        self.seed = seed
        self.eval_counter = 0
        self._eval_ordinal = 0
        self._step_ordinal = 0
        self._weights = spec.weights()

    @property
    def dim(self):
        return getattr(self.spec.base_field, "dim", None)

    def begin_step(self, step_index: int):
        """Integrator hook; freezes draws within a step in per_step scope."""
        self._step_ordinal = step_index

    def _chain_value(self, entry: AnchorFields, k: int, x, t, ordinal: int):
        fields = entry.chain_fields
        n = len(fields)
        if self.spec.mode == "full_average":
            # deviation form: bit-exact when all chains agree
            first = fields[0].eval(x, t)
            if n == 1:
                return first
            acc = np.zeros_like(first)
            for f in fields[1:]:
                acc = acc + (f.eval(x, t) - first)
            return first + acc / n
        draws = streams.randbelow(n, self.seed, streams.STREAM_CHAIN_DRAW, ordinal, k)
        if np.ndim(draws) == 0:
            return fields[int(draws)].eval(x, t)
        if np.ndim(x) == 1:
            raise ContractViolation(
                "per-row seeds require batched states of shape (rows, dim)"
            )
        out = np.empty_like(np.asarray(x, dtype=float))
        for j in range(n):
            rows = draws == j
            if rows.any():
                out[rows] = fields[j].eval(np.asarray(x, dtype=float)[rows], t)
        return out

    def eval(self, x, t):
        x = np.asarray(x, dtype=float)
        ordinal = (
            self._step_ordinal
            if self.spec.draw_scope == "per_step"
            else self._eval_ordinal
        )
        base = self.spec.base_field.eval(x, t)
        acc = np.zeros_like(base)
        for k, entry in enumerate(self.spec.anchor_sets):
            vhat = self._chain_value(entry, k, x, t, ordinal)
            acc = acc + self._weights[k] * (vhat - base)
        if self.spec.draw_scope != "per_step":
            self._eval_ordinal += 1
        rows = 1 if x.ndim == 1 else x.shape[0]
        self.eval_counter += rows * self.spec.evals_per_call()
        return base + (1.0 - self.spec.base_mix) * acc


def make_blended_field(spec: BlendSpec, seed) -> BlendedField:
    """Deterministic blended field: equal (spec, seed) means equal outputs."""
    return BlendedField(spec, seed)


class ExpectedFieldCheck(NamedTuple):
    stochastic_mean: np.ndarray
    full_value: np.ndarray
    std_error: float | None  # max per-coordinate standard error


def expected_field_check(
    spec: BlendSpec, x, t: float, num_draws: int, seed: int = 0
) -> ExpectedFieldCheck:
    """Monte-Carlo check that stochastic draws average to the full blend.

    Evaluates the stochastic blend num_draws times with fresh draws at a
    fixed (x, t) and compares against the full_average value.
    """
    if spec.mode != "stochastic":
        raise ContractViolation("expected_field_check requires stochastic mode")
    if num_draws < 1:
        raise ContractViolation(f"num_draws must be >= 1, got {num_draws}")
    field = BlendedField(spec, seed)
    samples = np.stack([field.eval(x, t) for _ in range(num_draws)])
    full_value = BlendedField(replace(spec, mode="full_average"), seed).eval(x, t)
    mean = samples.mean(axis=0)
    if num_draws == 1:
        return ExpectedFieldCheck(mean, full_value, None)
    se = samples.std(axis=0, ddof=1) / np.sqrt(num_draws)
    return ExpectedFieldCheck(mean, full_value, float(np.max(se)))
