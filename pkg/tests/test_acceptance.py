"""Acceptance suite: one test per release criterion, each printing a
pass/fail line. All tolerances are pinned here; statistical checks use
|empirical - reference| <= 3 * SE (+1e-9 floor) with fixed seeds, so
every run is deterministic. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import time

import numpy as np
import pytest

from cogflow.cli import main as cli_main
from cogflow.cogspace import (
    CognitiveSpace,
    ScoreVector,
    enumerate_anchors,
    weight_vector,
)
from cogflow.flow import (
    GenerationRequest,
    IntegrationConfig,
    build_blend_spec,
    generate,
    initial_states,
    integrate,
    moment_reference,
)
from cogflow.harness import (
    ExperimentConfig,
    continuity_sweep,
    order_bias_experiment,
    stochastic_equivalence,
)
from cogflow.polarize import build_chain_orders
from cogflow.semantics import (
    GaussianTargetField,
    SemanticModel,
    gaussian_field,
    monte_carlo_velocity,
)

from test_flow import solver_order_slope


def report(number: int, name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{status}] criterion {number:02d} {name}{suffix}")
    assert passed, f"criterion {number} {name}{suffix}"


def make_space(n):
    return CognitiveSpace.from_names(*[f"d{i + 1}" for i in range(n)])


def biased_setup(n=2):
    space = make_space(n)
    model = SemanticModel.for_space(
        space, effect_magnitudes=1.5, position_bias=0.5, default_variance=0.6
    )
    return space, model


def test_criterion_01_weight_partition_of_unity():
    rng = np.random.default_rng(2024)
    worst_gap, worst_min = 0.0, np.inf
    for n in range(1, 5):
        space = make_space(n)
        for _ in range(10_000):
            weights = weight_vector(ScoreVector(tuple(rng.uniform(0, 1, n))), space)
            worst_gap = max(worst_gap, abs(weights.sum() - 1.0))
            worst_min = min(worst_min, weights.min())
    report(
        1,
        "weight partition of unity",
        worst_gap <= 1e-12 and worst_min >= 0.0,
        f"max |sum-1|={worst_gap:.2e}, min weight={worst_min:.2e}",
    )


def test_criterion_02_vertex_delta_exact():
    exact = True
    for n in range(1, 5):
        space = make_space(n)
        for anchor in enumerate_anchors(space):
            weights = weight_vector(ScoreVector(anchor.bits), space)
            one_hot = np.zeros(1 << n)
            one_hot[anchor.index - 1] = 1.0
            exact = exact and np.array_equal(weights, one_hot)
    report(2, "vertex weights exactly one-hot", exact)


def test_criterion_03_latin_square_property():
    ok = True
    for n in range(1, 7):
        orders = build_chain_orders(n)
        full = set(range(1, n + 1))
        ok = ok and all(set(order) == full for order in orders)
        ok = ok and all(
            {order[pos] for order in orders} == full for pos in range(n)
        )
    report(3, "cyclic chain orders form a Latin square", ok)


def test_criterion_04_gaussian_push_forward():
    mean = np.array([3.0, -2.0])
    variance = 0.25
    started = time.perf_counter()
    x0 = initial_states(seed=404, sample_count=20_000, dim=2)
    endpoints = integrate(
        GaussianTargetField(mean, variance), x0, IntegrationConfig("rk4", 200)
    ).endpoint
    elapsed = time.perf_counter() - started
    mean_gap = np.max(np.abs(endpoints.mean(axis=0) - mean))
    var_gap = np.max(np.abs(endpoints.var(axis=0, ddof=1) - variance))
    report(
        4,
        "gaussian field push-forward",
        mean_gap <= 0.05 and var_gap <= 0.05 and elapsed < 10.0,
        f"mean gap {mean_gap:.4f}, var gap {var_gap:.4f}, {elapsed:.1f}s",
    )


def test_criterion_05_closed_form_vs_monte_carlo():
    mean = np.array([1.0, -0.5])
    variance = 0.5
    worst = 0.0
    for ti, t in enumerate((0.1, 0.5, 0.9)):
        marginal_sd = np.sqrt((1 - t) ** 2 + t * t * variance)
        center = t * mean
        for i, dx in enumerate((-0.5, 0.0, 0.5)):
            for j, dy in enumerate((-0.5, 0.0, 0.5)):
                x = center + np.array([dx, dy]) * marginal_sd
                estimate, se = monte_carlo_velocity(
                    mean, variance, x, t,
                    draws=400_000, bandwidth=0.25 * marginal_sd,
                    seed=500 + ti * 9 + i * 3 + j,
                )
                closed = gaussian_field(mean, variance, x, t)
                worst = max(worst, float(np.max(np.abs(estimate - closed) / (3 * se))))
    report(
        5,
        "closed form matches Monte-Carlo oracle",
        worst <= 1.0,
        f"worst |gap|/(3se)={worst:.3f} over 27 grid points",
    )


def test_criterion_06_blend_oracle_agreement():
    space, model = biased_setup(2)
    worst_mean, worst_cov = 0.0, 0.0
    for base_mix in (0.0, 0.5):
        for score_values in ((0.0, 0.0), (0.5, 0.5), (0.3, 0.8)):
            request = GenerationRequest(
                base_prompt="a valley",
                score=ScoreVector(score_values),
                seed=606,
                sample_count=20_000,
                blend_mode="full_average",
                base_mix=base_mix,
                integration=IntegrationConfig("rk4", 100),
            )
            batch = generate(request, space, model)
            oracle = moment_reference(
                build_blend_spec(request, space, model),
                IntegrationConfig("rk4", 2000),
            )
            end = batch.endpoints
            count = end.shape[0]
            emp_mean = end.mean(axis=0)
            emp_cov = np.cov(end, rowvar=False, ddof=1)
            se_mean = np.sqrt(np.diag(emp_cov) / count)
            d = np.diag(emp_cov)
            se_cov = np.sqrt((np.outer(d, d) + emp_cov**2) / (count - 1))
            worst_mean = max(
                worst_mean,
                float(np.max(np.abs(emp_mean - oracle.endpoint_mean) / (3 * se_mean + 1e-9))),
            )
            worst_cov = max(
                worst_cov,
                float(np.max(np.abs(emp_cov - oracle.endpoint_cov) / (3 * se_cov + 1e-9))),
            )
    report(
        6,
        "blend endpoints match moment oracle",
        worst_mean <= 1.0 and worst_cov <= 1.0,
        f"worst mean ratio {worst_mean:.3f}, worst cov ratio {worst_cov:.3f}",
    )


def test_criterion_07_stochastic_unbiasedness():
    space, model = biased_setup(2)
    cfg = ExperimentConfig(
        kind="stochastic_equivalence",
        space=space,
        model=model,
        base_prompt="a valley",
        integration=IntegrationConfig("rk4", 100),
        seed=707,
        equivalence_seeds=200,
    )
    criterion = stochastic_equivalence(cfg).criteria[0]
    report(
        7,
        "stochastic mode unbiased vs full average",
        criterion.passed is True,
        f"max |diff|/(3 combined se)={criterion.value:.3f} over 200 seeds",
    )


def test_criterion_08_eval_count_accounting():
    ok = True
    details = []
    for n in range(1, 5):
        space, model = biased_setup(n)
        counts = {}
        for mode, per_call in (
            ("stochastic", (1 << n) + 1),
            ("full_average", n * (1 << n) + 1),
        ):
            request = GenerationRequest(
                base_prompt="a valley",
                score=ScoreVector((0.5,) * n),
                seed=808,
                sample_count=3,
                blend_mode=mode,
                integration=IntegrationConfig("rk4", 4),
            )
            batch = generate(request, space, model)
            expected = 3 * 4 * 4 * per_call
            ok = ok and batch.metadata["eval_count"] == expected
            counts[mode] = batch.metadata["eval_count"]
        measured = counts["stochastic"] / counts["full_average"]
        expected_ratio = ((1 << n) + 1) / (n * (1 << n) + 1)
        ok = ok and measured == expected_ratio
        details.append(f"n={n} ratio {measured:.3f}")
    report(8, "evaluation counts exact", ok, "; ".join(details))


def test_criterion_09_solver_convergence_orders():
    expected = {"euler": (1.0, 0.15), "midpoint": (2.0, 0.3), "rk4": (4.0, 0.5)}
    slopes = {solver: solver_order_slope(solver) for solver in expected}
    ok = all(
        abs(slopes[solver] - order) <= tol for solver, (order, tol) in expected.items()
    )
    detail = ", ".join(f"{s}={v:.2f}" for s, v in slopes.items())
    report(9, "solver convergence orders", ok, detail)


def test_criterion_10_order_bias_cancellation():
    ok = True
    details = []
    for n in (2, 3):
        space = make_space(n)
        model = SemanticModel.for_space(
            space, effect_magnitudes=1.5, position_bias=0.5, default_variance=0.6
        )
        cfg = ExperimentConfig(kind="order_bias", space=space, model=model)
        outcome = order_bias_experiment(cfg)
        by_name = {c.name: c for c in outcome.criteria}
        averaged = by_name["averaged_weights_unbiased"].value
        worst = max(r["extra"]["worst_chain_deviation"] for r in outcome.records)
        expected_worst = 0.5 * (n - 1) / (2 * n)
        ok = ok and averaged <= 1e-12 and abs(worst - expected_worst) <= 1e-12
        details.append(f"n={n}: averaged {averaged:.1e}, worst {worst:.6f}")
    report(10, "Latin-square order bias cancellation", ok, "; ".join(details))


def test_criterion_11_continuity_displacement_scaling():
    space, model = biased_setup(2)
    cfg = ExperimentConfig(
        kind="continuity_sweep",
        space=space,
        model=model,
        base_prompt="a valley",
        blend_mode="full_average",
        integration=IntegrationConfig("rk4", 60),
        sample_count=256,
        seed=1111,
        deltas=(1e-3, 1e-4),
        grid_points=5,
    )
    outcome = continuity_sweep(cfg)
    ratios = [r for rec in outcome.records for r in rec["extra"]["ratios"]]
    ok = len(ratios) == 5 and all(5.0 <= r <= 20.0 for r in ratios)
    report(
        11,
        "endpoint displacement scales linearly",
        ok,
        "ratios " + ", ".join(f"{r:.2f}" for r in ratios),
    )


def test_criterion_12_monotone_response():
    space, model = biased_setup(2)
    cfg = ExperimentConfig(
        kind="continuity_sweep",
        space=space,
        model=model,
        base_prompt="a valley",
        blend_mode="full_average",
        integration=IntegrationConfig("rk4", 60),
        sample_count=2048,
        seed=1212,
        deltas=(1e-3, 1e-4),
        grid_points=5,
        path_start=ScoreVector((0.0, 0.5)),
        path_stop=ScoreVector((1.0, 0.5)),
    )
    outcome = continuity_sweep(cfg)
    monotone = next(c for c in outcome.criteria if c.name == "monotone_response")
    projections = [rec["extra"]["projection"] for rec in outcome.records]
    report(
        12,
        "projected response monotone in the swept score",
        monotone.passed is True,
        "projections " + ", ".join(f"{p:.3f}" for p in projections),
    )


def test_criterion_13_generate_determinism(tmp_path):
    config = {
        "semantics": {
            "effect_magnitudes": 1.5,
            "position_bias": 0.5,
            "default_variance": 0.6,
        },
        "blend": {"mode": "full_average"},
        "flow": {"sample_count": 2048, "steps": 100, "seed": 1313},
        "experiment": {"base_prompt": "a valley"},
        "polarize": {"cache_path": str(tmp_path / "cache.ndjson")},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    for out in ("run_a", "run_b"):
        code = cli_main(
            ["generate", "--config", str(path), "--out", str(tmp_path / out)]
        )
        assert code == 0
    bytes_a = (tmp_path / "run_a" / "endpoints.csv").read_bytes()
    bytes_b = (tmp_path / "run_b" / "endpoints.csv").read_bytes()
    decoded_a = (tmp_path / "run_a" / "decoded.csv").read_bytes()
    decoded_b = (tmp_path / "run_b" / "decoded.csv").read_bytes()
    report(
        13,
        "generate is byte-identical across runs",
        bytes_a == bytes_b and decoded_a == decoded_b,
        f"{len(bytes_a)} bytes compared",
    )
