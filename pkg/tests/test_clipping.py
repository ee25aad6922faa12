import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpclip.errors import ConfigurationError
from dpclip.layered import LayeredVector, layer_norms
from dpclip import network
from dpclip.clipping import (
    ClipSpec,
    MultiplierSpec,
    aggregate_clipped,
    alc_constants,
    clip_full,
    clip_layerwise,
    fgc_with_multipliers,
    layer_norm_estimates,
    unscale,
    zhang_constants,
)


def _vec(*parts):
    return LayeredVector([np.asarray(p, dtype=float) for p in parts])


# ---------------------------------------------------------------- clip_full


def test_clip_inactive_below_bound():
    v = _vec([0.3, 0.4])  # norm 0.5
    w = clip_full(v, 1.0)
    assert w == v


def test_clip_scales_to_bound():
    w = clip_full(_vec([3.0, 4.0]), 1.0)
    np.testing.assert_allclose(w.layers[0], [0.6, 0.8], rtol=1e-12)


def test_clip_zero_vector_stays_zero():
    w = clip_full(_vec([0.0, 0.0, 0.0]), 0.5)
    assert w.norm() == 0.0


def test_clip_rejects_nonpositive_bound():
    with pytest.raises(ConfigurationError):
        clip_full(_vec([1.0]), 0.0)
    with pytest.raises(ConfigurationError):
        clip_full(_vec([1.0]), -1.0)


@settings(max_examples=300, deadline=None)
@given(
    parts=st.lists(
        st.lists(st.floats(-1e8, 1e8), min_size=1, max_size=5),
        min_size=1,
        max_size=3,
    ),
    c=st.floats(min_value=1e-6, max_value=1e6),
)
def test_clip_contraction_and_direction(parts, c):
    v = LayeredVector([np.array(p) for p in parts])
    w = clip_full(v, c)
    assert w.norm() <= c
    # direction preservation: w = lambda * v with lambda in [0, 1]
    n = v.norm()
    lam = 1.0 if n <= c else c / n
    for a, b in zip(v.layers, w.layers):
        np.testing.assert_allclose(b, lam * a, rtol=1e-9, atol=1e-300)


@settings(max_examples=200, deadline=None)
@given(
    parts=st.lists(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=5), min_size=1, max_size=3),
    c=st.floats(min_value=1e-6, max_value=1e4),
)
def test_clip_idempotent_exactly(parts, c):
    v = LayeredVector([np.array(p) for p in parts])
    w = clip_full(v, c)
    assert clip_full(w, c) == w


def test_clip_positive_homogeneity_power_of_two_exact():
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = _vec(rng.normal(size=4), rng.normal(size=3))
        c = float(rng.uniform(0.1, 2.0))
        for alpha in (0.25, 0.5, 2.0, 8.0):
            left = clip_full(v * alpha, alpha * c)
            right = clip_full(v, c) * alpha
            assert left == right


# ----------------------------------------------------------- clip_layerwise


def test_layerwise_huge_constants_identity():
    v = _vec([1.0, 2.0], [3.0])
    w = clip_layerwise(v, [1e12, 1e12])
    assert w == v


def test_layerwise_clips_each_part():
    v = _vec([3.0, 4.0], [1.0])  # norms 5 and 1
    w = clip_layerwise(v, [1.0, 2.0])
    assert layer_norms(w) == pytest.approx([1.0, 1.0], rel=1e-12)


def test_layerwise_matches_clip_full_per_layer():
    rng = np.random.default_rng(1)
    v = _vec(rng.normal(size=6), rng.normal(size=2), rng.normal(size=4))
    cs = [0.5, 3.0, 0.01]
    w = clip_layerwise(v, cs)
    for h in range(3):
        alone = clip_full(LayeredVector([v.layers[h]]), cs[h])
        np.testing.assert_array_equal(w.layers[h], alone.layers[0])


def test_layerwise_zero_constant_zeroes_layer():
    v = _vec([1.0, 1.0], [2.0])
    w = clip_layerwise(v, [0.0, 1.0])
    assert layer_norms(w)[0] == 0.0


def test_layerwise_length_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        clip_layerwise(_vec([1.0], [1.0]), [1.0])


def test_layer_groups_clip_jointly():
    v = _vec([3.0], [4.0], [7.0])
    w = clip_layerwise(v, [1.0, 7.0], layer_groups=(0, 0, 1))
    # group {0,1} has joint norm 5 -> scaled by 1/5; group {2} untouched
    np.testing.assert_allclose(w.layers[0], [0.6], rtol=1e-12)
    np.testing.assert_allclose(w.layers[1], [0.8], rtol=1e-12)
    np.testing.assert_array_equal(w.layers[2], [7.0])


# ------------------------------------------------------------ alc constants


def _norm_model(dim=4, classes=3, hidden=(5,), batchnorm=False, seed=0):
    model = network.mlp(dim, hidden, classes, batchnorm=batchnorm)
    weights = network.init_weights(model, seed=seed)
    rng = np.random.default_rng(seed + 100)
    data = network.Batch(rng.normal(size=(20, dim)), rng.integers(0, classes, size=20))
    return model, weights, data


def test_alc_equal_estimates_give_master_everywhere(monkeypatch):
    model, weights, data = _norm_model()
    monkeypatch.setattr(
        "dpclip.clipping.layer_norm_estimates",
        lambda *a, **k: np.array([2.0, 2.0, 2.0, 2.0]),
    )
    cs = alc_constants(model, weights, data, master_c=0.7)
    np.testing.assert_allclose(cs, 0.7)


def test_alc_ratio_arithmetic(monkeypatch):
    model, weights, data = _norm_model()
    monkeypatch.setattr(
        "dpclip.clipping.layer_norm_estimates",
        lambda *a, **k: np.array([1.0, 2.0, 4.0]),
    )
    cs = alc_constants(model, weights, data, master_c=0.8)
    np.testing.assert_allclose(cs, [0.2, 0.4, 0.8], rtol=1e-12)


def test_alc_scales_linearly_with_master():
    model, weights, data = _norm_model()
    c1 = alc_constants(model, weights, data, master_c=0.5)
    c2 = alc_constants(model, weights, data, master_c=1.0)
    np.testing.assert_allclose(c2, 2.0 * c1, rtol=1e-12)
    assert np.max(c1) == pytest.approx(0.5, rel=1e-12)


def test_alc_zero_estimates_fall_back_to_master(monkeypatch):
    # all-zero estimates (untrained degenerate edge) must not divide 0/0
    model, weights, data = _norm_model()
    monkeypatch.setattr(
        "dpclip.clipping.layer_norm_estimates",
        lambda *a, **k: np.zeros(model.num_param_layers),
    )
    cs = alc_constants(model, weights, data, master_c=0.3)
    np.testing.assert_allclose(cs, 0.3)


def test_zhang_zero_constants_zero_downstream_clip():
    v = _vec([1.0, 2.0], [3.0])
    w = clip_layerwise(v, [0.0, 0.0])
    assert w.norm() == 0.0


def test_zhang_equals_estimates_and_alc_identity():
    model, weights, data = _norm_model()
    e = layer_norm_estimates(model, weights, data)
    z = zhang_constants(model, weights, data)
    np.testing.assert_allclose(z, e, rtol=1e-14)
    # alc with master C = max(e) reproduces zhang exactly
    a = alc_constants(model, weights, data, master_c=float(e.max()))
    np.testing.assert_allclose(a, z, rtol=1e-12)


def test_estimates_reject_empty_public_set():
    model, weights, _ = _norm_model()
    with pytest.raises(ConfigurationError):
        layer_norm_estimates(model, weights, None)


def test_estimates_batchnorm_model_uses_micro_batches():
    model, weights, data = _norm_model(batchnorm=True)
    e = layer_norm_estimates(model, weights, data)
    assert e.shape == (model.num_param_layers,)
    assert np.all(e >= 0)


def test_estimates_mean_of_per_sample_norms():
    model, weights, data = _norm_model()
    e = layer_norm_estimates(model, weights, data)
    norms = network.per_sample_layer_norms(model, weights, data)
    np.testing.assert_allclose(e, norms.mean(axis=0), rtol=1e-12)


# -------------------------------------------------------- aggregate_clipped


def test_aggregate_single_unit_is_batch_clipping():
    v = _vec([3.0, 4.0])
    u = aggregate_clipped([v], ClipSpec(scope="full"), 1.0)
    np.testing.assert_allclose(u.layers[0], [0.6, 0.8], rtol=1e-12)


def test_aggregate_opposite_units_cancel():
    v = _vec([1.0, -2.0])
    u = aggregate_clipped([v, v * -1.0], ClipSpec(scope="full"), 0.5)
    assert u.norm() == 0.0


def test_aggregate_hand_arithmetic():
    grads = [_vec([2.0]), _vec([-2.0]), _vec([0.5])]
    u = aggregate_clipped(grads, ClipSpec(scope="full"), 1.0)
    assert u.layers[0][0] == pytest.approx(0.5, rel=1e-12)


def test_aggregate_layerwise_scope_clips_per_layer():
    rng = np.random.default_rng(6)
    grads = [_vec(rng.normal(size=3) * 10, rng.normal(size=2) * 10) for _ in range(3)]
    cs = np.array([0.2, 0.5])
    spec = ClipSpec(scope="layerwise")
    u = aggregate_clipped(grads, spec, cs)
    expected = clip_layerwise(grads[0], cs)
    for g in grads[1:]:
        expected = expected + clip_layerwise(g, cs)
    assert u == expected
    assert layer_norms(u)[0] <= 3 * 0.2 + 1e-12


def test_aggregate_norm_bounded_by_m_times_c():
    rng = np.random.default_rng(2)
    grads = [_vec(rng.normal(size=5) * 100) for _ in range(7)]
    u = aggregate_clipped(grads, ClipSpec(scope="full"), 0.3)
    assert u.norm() <= 7 * 0.3 + 1e-12


def test_aggregate_sensitivity_bound():
    # swapping one unit's gradient moves U by at most 2C
    rng = np.random.default_rng(3)
    for _ in range(200):
        grads = [_vec(rng.normal(size=4) * 10) for _ in range(4)]
        changed = list(grads)
        changed[2] = _vec(rng.normal(size=4) * 10)
        c = float(rng.uniform(0.05, 2.0))
        u1 = aggregate_clipped(grads, ClipSpec(scope="full"), c)
        u2 = aggregate_clipped(changed, ClipSpec(scope="full"), c)
        assert (u1 - u2).norm() <= 2 * c * (1 + 1e-12)


# ----------------------------------------------------------------- fgc


def test_fgc_unit_factors_equal_clip_full():
    rng = np.random.default_rng(4)
    v = _vec(rng.normal(size=3), rng.normal(size=2))
    spec = MultiplierSpec(factors=(1.0, 1.0), c=0.4)
    assert fgc_with_multipliers(v, spec) == clip_full(v, 0.4)


def test_fgc_unscale_recovers_without_clipping():
    rng = np.random.default_rng(5)
    v = _vec(rng.normal(size=3), rng.normal(size=2))
    spec = MultiplierSpec(factors=(3.0, 1.5), c=1e9)
    out = unscale(fgc_with_multipliers(v, spec), spec)
    for a, b in zip(out.layers, v.layers):
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_fgc_rejects_factors_below_one():
    with pytest.raises(ConfigurationError):
        MultiplierSpec(factors=(0.5, 2.0), c=1.0)


def test_fgc_multipliers_from_estimates_flatten_layer_norms():
    # factors M/e_h raise each layer's expected norm to about M on fresh data
    model, weights, data = _norm_model(seed=11)
    e = layer_norm_estimates(model, weights, data)
    M = float(e.max())
    factors = M / e
    rng = np.random.default_rng(999)
    fresh = network.Batch(rng.normal(size=(60, 4)), rng.integers(0, 3, size=60))
    norms = network.per_sample_layer_norms(model, weights, fresh)
    scaled_means = (norms * factors).mean(axis=0)
    np.testing.assert_allclose(scaled_means, M, rtol=0.10)


# ----------------------------------------------------------------- spec


def test_clip_spec_validation():
    with pytest.raises(ConfigurationError):
        ClipSpec(mode="weird")
    with pytest.raises(ConfigurationError):
        ClipSpec(master_c=0.0)
    with pytest.raises(ConfigurationError):
        ClipSpec(c_decay=0.0)
    with pytest.raises(ConfigurationError):
        ClipSpec(constant_strategy="enhanced_alc", scope="full")
    spec = ClipSpec(mode="bc", scope="layerwise", constant_strategy="enhanced_alc")
    assert spec.master_c == 1.0
