import numpy as np
import pytest
from scipy.special import expit

from gafvit import attention, autodiff as ad
from gafvit.errors import DimensionMismatch, OutOfRange
from gafvit.gaf import MultiChannelImage


def make_params(w1, w2, ratio=1):
    return attention.ChannelAttentionParams(
        w1=ad.Tensor(np.asarray(w1, dtype=np.float64), requires_grad=True),
        w2=ad.Tensor(np.asarray(w2, dtype=np.float64), requires_grad=True),
        reduction_ratio=ratio)


def gate_oracle(pooled, w1, w2):
    hidden = np.maximum(pooled @ np.asarray(w1).T, 0.0)
    return expit(hidden @ np.asarray(w2).T)


def test_squeeze_is_channel_mean():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 7, 3))
    pooled = attention.squeeze(x).value
    assert pooled.shape == (3,)
    for c in range(3):
        assert np.allclose(pooled[c], x[:, :, c].mean(), atol=1e-15)


def test_squeeze_constant_planes_exact():
    x = np.stack([np.full((4, 4), 2.0), np.full((4, 4), -3.0)], axis=-1)
    assert np.array_equal(attention.squeeze(x).value, [2.0, -3.0])


def test_squeeze_accepts_image_and_batch():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(6, 6, 4))
    image = MultiChannelImage(data=data)
    assert np.array_equal(attention.squeeze(image).value, data.mean(axis=(0, 1)))
    batch = rng.normal(size=(3, 6, 6, 4))
    pooled = attention.squeeze(batch).value
    assert pooled.shape == (3, 4)
    assert np.allclose(pooled, batch.mean(axis=(1, 2)), atol=1e-15)
    with pytest.raises(DimensionMismatch):
        attention.squeeze(np.zeros((5, 4)))


def test_excite_zero_input_gates_half():
    params = attention.init_attention_params(6, rng=np.random.default_rng(2))
    gate = attention.excite(np.zeros(6), params).value
    assert np.array_equal(gate, np.full(6, 0.5))


def test_excite_single_channel_frozen():
    params = make_params([[2.0]], [[3.0]])
    gate = attention.excite(np.array([0.5]), params).value
    # relu(0.5 * 2) = 1, sigmoid(3) follows
    assert np.allclose(gate, [expit(3.0)], atol=1e-15)


def test_excite_matches_numpy_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = int(rng.integers(2, 9))
        w1 = rng.normal(size=(c, c))
        w2 = rng.normal(size=(c, c))
        pooled = rng.normal(size=c)
        gate = attention.excite(pooled, make_params(w1, w2)).value
        assert np.allclose(gate, gate_oracle(pooled, w1, w2), atol=1e-14)
        assert gate.min() > 0.0 and gate.max() < 1.0


def test_excite_reduction_ratio_shapes():
    rng = np.random.default_rng(4)
    params = attention.init_attention_params(6, reduction_ratio=2, rng=rng)
    assert params.w1.value.shape == (3, 6)
    assert params.w2.value.shape == (6, 3)
    gate = attention.excite(rng.normal(size=(5, 6)), params).value
    assert gate.shape == (5, 6)
    with pytest.raises(DimensionMismatch):
        attention.init_attention_params(6, reduction_ratio=4)
    with pytest.raises(DimensionMismatch):
        attention.excite(np.zeros(5), params)


def test_gate_monotone_in_preactivation():
    # pushing a hidden unit up can only raise the gates it feeds positively
    params = make_params([[1.0]], [[2.0]])
    lo = attention.excite(np.array([0.3]), params).value
    hi = attention.excite(np.array([0.9]), params).value
    assert hi[0] > lo[0]


def test_apply_weights_scales_planes():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 4, 3))
    w = np.array([0.25, 1.0, 0.0])
    out = attention.apply_weights(x, w).value
    for c in range(3):
        assert np.array_equal(out[:, :, c], x[:, :, c] * w[c])
    with pytest.raises(DimensionMismatch):
        attention.apply_weights(x, np.ones(2))


def test_unit_weights_identity_exact():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(9, 9, 6))
    out = attention.apply_weights(x, np.ones(6)).value
    assert np.array_equal(out, x)


def test_reweight_equals_composition():
    rng = np.random.default_rng(7)
    params = attention.init_attention_params(6, rng=rng, std=0.5)
    batch = rng.normal(size=(2, 9, 9, 6))
    out = attention.reweight(batch, params).value
    pooled = batch.mean(axis=(1, 2))
    gate = gate_oracle(pooled, params.w1.value, params.w2.value)
    assert np.allclose(out, batch * gate[:, None, None, :], atol=1e-14)


def test_attention_weights_report():
    rng = np.random.default_rng(8)
    params = attention.init_attention_params(4, rng=rng, std=0.5)
    image = rng.normal(size=(5, 5, 4))
    report = attention.attention_weights(image, params)
    assert isinstance(report, attention.AttentionWeights)
    assert np.array_equal(report.values,
                          attention.excite(attention.squeeze(image), params).value)


def test_attention_weights_validation():
    with pytest.raises(OutOfRange):
        attention.AttentionWeights(np.array([0.5, 1.5]))
    with pytest.raises(DimensionMismatch):
        attention.AttentionWeights(np.zeros((2, 2)))


def test_reweight_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 4, 4, 4))
    w1 = rng.normal(size=(4, 4)) * 0.5
    w2 = rng.normal(size=(4, 4)) * 0.5
    target = rng.normal(size=x.shape)

    def loss_value(w1v, w2v):
        with ad.no_grad():
            out = attention.reweight(x, make_params(w1v, w2v))
            return float(np.sum((out.value - target) ** 2))

    params = make_params(w1, w2)
    out = attention.reweight(x, params)
    diff = ad.sub(out, ad.Tensor(target))
    ad.backward(ad.tsum(ad.mul(diff, diff)))

    eps = 1e-6
    for tensor, base, which in ((params.w1, w1, "w1"), (params.w2, w2, "w2")):
        fd = np.zeros_like(base)
        for i in range(base.shape[0]):
            for j in range(base.shape[1]):
                bumped = base.copy()
                bumped[i, j] += eps
                hi = loss_value(bumped if which == "w1" else w1,
                                bumped if which == "w2" else w2)
                bumped[i, j] -= 2 * eps
                lo = loss_value(bumped if which == "w1" else w1,
                                bumped if which == "w2" else w2)
                fd[i, j] = (hi - lo) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(tensor.grad)), 1.0)
        assert np.max(np.abs(tensor.grad - fd) / denom) < 1e-4


def test_init_params_seeded_and_named():
    a = attention.init_attention_params(6, rng=np.random.default_rng(42))
    b = attention.init_attention_params(6, rng=np.random.default_rng(42))
    assert np.array_equal(a.w1.value, b.w1.value)
    assert np.array_equal(a.w2.value, b.w2.value)
    names = dict(a.named())
    assert set(names) == {"attention.w1", "attention.w2"}
    assert all(t.requires_grad for t in names.values())
