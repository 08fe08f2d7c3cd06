import numpy as np
import pytest

from cogflow.blend import (
    AnchorFields,
    BlendedField,
    BlendSpec,
    expected_field_check,
    make_blended_field,
)
from cogflow.cogspace import (
    CognitiveAnchor,
    CognitiveSpace,
    ScoreVector,
    enumerate_anchors,
)
from cogflow.errors import ContractViolation, SpaceMismatchError
from cogflow.semantics import GaussianTargetField

from conftest import ConstantField


def spec_with_constant_chains(values_by_anchor, score, n=2, **kwargs):
    """Helper: anchor k's chains are ConstantFields over its value list."""
    space = CognitiveSpace.from_names(*[f"d{i + 1}" for i in range(n)])
    anchors = enumerate_anchors(space)
    anchor_sets = tuple(
        AnchorFields(
            anchor=a,
            chain_fields=tuple(ConstantField(v) for v in values_by_anchor[i]),
        )
        for i, a in enumerate(anchors)
    )
    base = kwargs.pop("base_field", ConstantField(np.zeros(len(values_by_anchor[0][0]))))
    return BlendSpec(
        base_field=base,
        anchor_sets=anchor_sets,
        score=ScoreVector(score),
        **kwargs,
    )


def uniform_spec(value, score=(0.3, 0.8), n=2, **kwargs):
    values = [[value] * n for _ in range(1 << n)]
    kwargs.setdefault("base_field", ConstantField(value))
    return spec_with_constant_chains(values, score, n=n, **kwargs)


# --- identity collapse ----------------------------------------------------

@pytest.mark.parametrize("mode", ["stochastic", "full_average"])
@pytest.mark.parametrize("base_mix", [0.0, 0.3, 0.5, 1.0])
def test_identity_collapse_is_bit_exact(mode, base_mix):
    value = np.array([0.123456789, -7.654321e3])
    rng = np.random.default_rng(4)
    for n in (1, 2, 3):
        for _ in range(5):
            score = tuple(rng.uniform(0, 1, n))
            spec = uniform_spec(value, score=score, n=n, mode=mode, base_mix=base_mix)
            field = BlendedField(spec, seed=17)
            out = field.eval(np.zeros(2), 0.5)
            assert np.array_equal(out, value)


def test_identity_collapse_via_shared_gaussian():
    shared = GaussianTargetField(np.array([0.7, -0.2]), 0.8)
    space = CognitiveSpace.from_names("a", "b")
    spec = BlendSpec(
        base_field=shared,
        anchor_sets=tuple(
            AnchorFields(anchor=a, chain_fields=(shared, shared))
            for a in enumerate_anchors(space)
        ),
        score=ScoreVector((0.3, 0.8)),
        mode="full_average",
    )
    x = np.array([0.4, 0.9])
    out = BlendedField(spec, 0).eval(x, 0.37)
    assert np.array_equal(out, shared.eval(x, 0.37))


# --- formula --------------------------------------------------------------

def test_one_dimensional_vertex_half_mix():
    # n=1 at score (0,): weight is one-hot on the low anchor, so the blend
    # is the even split of that anchor's single chain and the base
    low, high, base = np.array([2.0, 0.0]), np.array([-2.0, 0.0]), np.array([0.0, 4.0])
    spec = spec_with_constant_chains(
        [[low], [high]], (0.0,), n=1,
        base_field=ConstantField(base), mode="full_average", base_mix=0.5,
    )
    out = BlendedField(spec, 0).eval(np.zeros(2), 0.2)
    assert np.allclose(out, 0.5 * (low + base), atol=1e-15, rtol=0)


def test_vertex_weight_coupling_full_mode():
    # at a vertex score the blend collapses to that anchor's chain mean
    rng = np.random.default_rng(2)
    values = [[rng.normal(size=3) for _ in range(2)] for _ in range(4)]
    base = rng.normal(size=3)
    for anchor in enumerate_anchors(CognitiveSpace.from_names("a", "b")):
        for lam in (0.0, 0.5, 0.8):
            spec = spec_with_constant_chains(
                values, tuple(float(b) for b in anchor.bits),
                base_field=ConstantField(base), mode="full_average", base_mix=lam,
            )
            out = BlendedField(spec, 0).eval(np.zeros(3), 0.5)
            expected = (1 - lam) * np.mean(values[anchor.index - 1], axis=0) + lam * base
            assert np.allclose(out, expected, atol=1e-14, rtol=0)


def test_base_mix_extremes():
    rng = np.random.default_rng(6)
    values = [[rng.normal(size=2) for _ in range(2)] for _ in range(4)]
    base = rng.normal(size=2)
    # base_mix=1 is bit-exactly the base field (pure-base degenerate case)
    spec_base = spec_with_constant_chains(
        values, (0.3, 0.8), base_field=ConstantField(base),
        mode="full_average", base_mix=1.0,
    )
    assert np.array_equal(BlendedField(spec_base, 0).eval(np.zeros(2), 0.1), base)
    # base_mix=0 drops the base: the anchor mix alone
    spec_anchor = spec_with_constant_chains(
        values, (0.3, 0.8), base_field=ConstantField(base),
        mode="full_average", base_mix=0.0,
    )
    out = BlendedField(spec_anchor, 0).eval(np.zeros(2), 0.1)
    from cogflow.cogspace import weight_vector

    weights = weight_vector(ScoreVector((0.3, 0.8)), CognitiveSpace.from_names("a", "b"))
    expected = sum(
        w * np.mean(vals, axis=0) for w, vals in zip(weights, values)
    ) + (1 - weights.sum()) * base
    assert np.allclose(out, expected, atol=1e-12, rtol=0)


def test_linearity_in_an_inner_field_slot():
    rng = np.random.default_rng(13)
    base = rng.normal(size=2)
    others = [[rng.normal(size=2) for _ in range(2)] for _ in range(4)]

    def blend_with(first_chain_value):
        values = [list(v) for v in others]
        values[1][0] = first_chain_value
        spec = spec_with_constant_chains(
            values, (0.3, 0.8), base_field=ConstantField(base), mode="full_average"
        )
        return BlendedField(spec, 0).eval(np.zeros(2), 0.5)

    f, g = rng.normal(size=2), rng.normal(size=2)
    mixed = blend_with((f + g) / 2)
    assert np.allclose(mixed, (blend_with(f) + blend_with(g)) / 2, atol=1e-12, rtol=0)


# --- evaluation counting --------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_eval_counts_per_call(n):
    value = np.zeros(2)
    for mode, per_call in (
        ("stochastic", (1 << n) + 1),
        ("full_average", n * (1 << n) + 1),
    ):
        spec = uniform_spec(value, score=(0.5,) * n, n=n, mode=mode)
        field = BlendedField(spec, 0)
        for calls in range(1, 4):
            field.eval(np.zeros(2), 0.5)
            assert field.eval_counter == calls * per_call


def test_eval_counts_batched_rows():
    spec = uniform_spec(np.zeros(2), mode="stochastic")
    field = BlendedField(spec, 0)
    field.eval(np.zeros((7, 2)), 0.5)
    assert field.eval_counter == 7 * 5


# --- determinism and draws -------------------------------------------------

def distinct_chain_spec(score=(0.3, 0.8), **kwargs):
    rng = np.random.default_rng(99)
    values = [[rng.normal(size=2) for _ in range(2)] for _ in range(4)]
    kwargs.setdefault("mode", "stochastic")
    return spec_with_constant_chains(
        values, score, base_field=ConstantField(rng.normal(size=2)), **kwargs
    )


def test_same_seed_reproduces_sequences():
    spec = distinct_chain_spec()
    x = np.array([0.1, 0.2])
    a = make_blended_field(spec, seed=5)
    b = make_blended_field(spec, seed=5)
    seq_a = [a.eval(x, 0.4) for _ in range(6)]
    seq_b = [b.eval(x, 0.4) for _ in range(6)]
    assert all(np.array_equal(u, v) for u, v in zip(seq_a, seq_b))


def test_different_seeds_differ():
    spec = distinct_chain_spec()
    x = np.array([0.1, 0.2])
    seq_a = np.stack([make_blended_field(spec, 5).eval(x, 0.4) for _ in range(1)])
    outs = []
    for seed in range(20):
        outs.append(make_blended_field(spec, seed).eval(x, 0.4))
    assert any(not np.array_equal(seq_a[0], o) for o in outs)


def test_full_average_ignores_seed():
    spec = distinct_chain_spec(mode="full_average")
    x = np.array([0.1, 0.2])
    a = make_blended_field(spec, 1).eval(x, 0.4)
    b = make_blended_field(spec, 999).eval(x, 0.4)
    assert np.array_equal(a, b)


def test_per_eval_draws_vary_within_a_run():
    spec = distinct_chain_spec()
    field = make_blended_field(spec, 3)
    x = np.array([0.1, 0.2])
    outs = np.stack([field.eval(x, 0.4) for _ in range(30)])
    assert len(np.unique(outs.round(12), axis=0)) > 1


def test_per_step_scope_freezes_draws_until_next_step():
    spec = distinct_chain_spec(draw_scope="per_step")
    field = make_blended_field(spec, 3)
    x = np.array([0.1, 0.2])
    field.begin_step(0)
    first = [field.eval(x, 0.4) for _ in range(4)]
    assert all(np.array_equal(first[0], o) for o in first[1:])
    outs = []
    for step in range(1, 30):
        field.begin_step(step)
        outs.append(field.eval(x, 0.4))
    assert any(not np.array_equal(first[0], o) for o in outs)


def test_row_seeds_require_batched_states():
    spec = distinct_chain_spec()
    field = make_blended_field(spec, np.array([1, 2], dtype=np.uint64))
    with pytest.raises(ContractViolation):
        field.eval(np.zeros(2), 0.5)


def test_batched_rows_match_per_row_fields():
    spec = distinct_chain_spec()
    row_seeds = np.array([11, 22, 33], dtype=np.uint64)
    batched = make_blended_field(spec, row_seeds)
    xs = np.array([[0.1, 0.2], [0.3, -0.4], [-0.5, 0.6]])
    for t in (0.0, 0.25, 0.75):
        batch_out = batched.eval(xs, t)
        for i, seed in enumerate(row_seeds):
            solo = make_blended_field(spec, int(seed))
            # advance the solo ordinal to match the batched call count
            for _ in range(batched._eval_ordinal - 1):
                solo.eval(xs[i], t)
            assert np.array_equal(solo.eval(xs[i], t), batch_out[i])


# --- expected_field_check ---------------------------------------------------

def test_expected_field_check_equal_chains_is_exact():
    spec = uniform_spec(np.array([1.0, -2.0]), mode="stochastic")
    result = expected_field_check(spec, np.zeros(2), 0.5, num_draws=16)
    assert np.array_equal(result.stochastic_mean, result.full_value)
    assert result.std_error == 0.0


def test_expected_field_check_unbiased_within_four_se():
    spec = distinct_chain_spec()
    result = expected_field_check(spec, np.array([0.2, -0.1]), 0.6, num_draws=10_000)
    assert result.std_error > 0.0
    gap = np.abs(result.stochastic_mean - result.full_value)
    assert np.all(gap <= 4.0 * result.std_error)


def test_expected_field_check_single_draw():
    spec = distinct_chain_spec()
    result = expected_field_check(spec, np.zeros(2), 0.5, num_draws=1)
    assert result.std_error is None
    assert result.stochastic_mean.shape == (2,)


def test_expected_field_check_errors():
    spec = distinct_chain_spec()
    with pytest.raises(ContractViolation):
        expected_field_check(spec, np.zeros(2), 0.5, num_draws=0)
    full = distinct_chain_spec(mode="full_average")
    with pytest.raises(ContractViolation):
        expected_field_check(full, np.zeros(2), 0.5, num_draws=10)


# --- validation -------------------------------------------------------------

def test_spec_validation_errors():
    base = ConstantField(np.zeros(2))
    space = CognitiveSpace.from_names("a", "b")
    anchors = enumerate_anchors(space)
    good_sets = tuple(
        AnchorFields(anchor=a, chain_fields=(base, base)) for a in anchors
    )
    with pytest.raises(ContractViolation):
        BlendSpec(base, good_sets[:3], ScoreVector((0.5, 0.5)))
    with pytest.raises(ContractViolation):
        BlendSpec(base, good_sets, ScoreVector((0.5, 0.5)), mode="bogus")
    with pytest.raises(ContractViolation):
        BlendSpec(base, good_sets, ScoreVector((0.5, 0.5)), base_mix=1.5)
    with pytest.raises(ContractViolation):
        BlendSpec(base, good_sets, ScoreVector((0.5, 0.5)), draw_scope="sometimes")
    shuffled = (good_sets[1], good_sets[0]) + good_sets[2:]
    with pytest.raises(ContractViolation):
        BlendSpec(base, shuffled, ScoreVector((0.5, 0.5)))
    with pytest.raises(ContractViolation):
        AnchorFields(anchor=CognitiveAnchor((0, 1)), chain_fields=(base,))


def test_spec_dimension_mismatch():
    base = ConstantField(np.zeros(2))
    odd = ConstantField(np.zeros(3))
    space = CognitiveSpace.from_names("a", "b")
    sets = tuple(
        AnchorFields(anchor=a, chain_fields=(base, odd))
        for a in enumerate_anchors(space)
    )
    with pytest.raises(SpaceMismatchError):
        BlendSpec(base, sets, ScoreVector((0.5, 0.5)))
