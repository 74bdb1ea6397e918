import numpy as np
import pytest
from scipy.special import erf, softmax as sp_softmax

from gafvit import attention, autodiff as ad, vit
from gafvit.errors import (DimensionMismatch, IndivisibleImage, NonFiniteInput,
                           OutOfRange)

TINY = vit.VitConfig(image_h=6, image_w=6, channels=2, patch_size=3,
                     embed_dim=8, depth=2, heads=2, mlp_dim=16, num_classes=3)


def np_layer_norm(x, scale, shift, eps=vit.LN_EPS):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return (centered / np.sqrt(var + eps)) * scale + shift


def np_gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def test_default_config_geometry():
    cfg = vit.VitConfig()
    assert cfg.n_patches == 11
    assert cfg.patch_dim == 9 * 99 * 6
    assert cfg.patch_dim == 5346
    assert cfg.head_dim == 32
    square = vit.VitConfig(patch_mode="square")
    assert square.n_patches == 121
    assert square.patch_dim == 9 * 9 * 6
    assert square.patch_dim == 486


def test_config_validation():
    with pytest.raises(IndivisibleImage):
        vit.VitConfig(image_h=100)
    with pytest.raises(IndivisibleImage):
        vit.VitConfig(image_w=100, patch_mode="square")
    # strip mode never slices along the width
    assert vit.VitConfig(image_w=100).n_patches == 11
    with pytest.raises(DimensionMismatch):
        vit.VitConfig(embed_dim=130)
    with pytest.raises(OutOfRange):
        vit.VitConfig(patch_mode="diagonal")
    with pytest.raises(OutOfRange):
        vit.VitConfig(depth=0)


def test_patchify_strip_content():
    rng = np.random.default_rng(0)
    image = rng.normal(size=(99, 99, 6))
    cfg = vit.VitConfig()
    patches = vit.patchify(image, cfg).value
    assert patches.shape == (11, 5346)
    for i in range(11):
        assert np.array_equal(patches[i], image[9 * i:9 * (i + 1)].reshape(-1))


def test_patchify_square_content():
    image = np.arange(16.0).reshape(4, 4, 1)
    cfg = vit.VitConfig(image_h=4, image_w=4, channels=1, patch_size=2,
                        patch_mode="square", embed_dim=4, depth=1, heads=1,
                        mlp_dim=4, num_classes=2)
    patches = vit.patchify(image, cfg).value
    assert patches.shape == (4, 4)
    assert np.array_equal(patches[0], image[0:2, 0:2, 0].reshape(-1))
    assert np.array_equal(patches[1], image[0:2, 2:4, 0].reshape(-1))
    assert np.array_equal(patches[2], image[2:4, 0:2, 0].reshape(-1))
    assert np.array_equal(patches[3], image[2:4, 2:4, 0].reshape(-1))


def test_patchify_square_default_geometry():
    rng = np.random.default_rng(1)
    image = rng.normal(size=(99, 99, 6))
    cfg = vit.VitConfig(patch_mode="square")
    patches = vit.patchify(image, cfg).value
    assert patches.shape == (121, 486)
    # patch index runs row-major over the 11x11 grid
    r, c = 3, 7
    assert np.array_equal(patches[r * 11 + c],
                          image[9 * r:9 * (r + 1), 9 * c:9 * (c + 1)].reshape(-1))


def test_patchify_batch_matches_singles():
    rng = np.random.default_rng(2)
    batch = rng.normal(size=(3, 6, 6, 2))
    for mode in ("strip", "square"):
        cfg = vit.VitConfig(image_h=6, image_w=6, channels=2, patch_size=3,
                            patch_mode=mode, embed_dim=8, depth=1, heads=2,
                            mlp_dim=8, num_classes=2)
        stacked = vit.patchify(batch, cfg).value
        for b in range(3):
            assert np.array_equal(stacked[b], vit.patchify(batch[b], cfg).value)


def test_patchify_shape_guard():
    cfg = vit.VitConfig()
    with pytest.raises(DimensionMismatch):
        vit.patchify(np.zeros((98, 99, 6)), cfg)
    with pytest.raises(DimensionMismatch):
        vit.patchify(np.zeros((99, 99)), cfg)


def test_embed_tokens_layout():
    rng = np.random.default_rng(3)
    params = vit.init_vit_params(TINY, rng=rng)
    patches = rng.normal(size=(TINY.n_patches, TINY.patch_dim))
    tokens = vit.embed_tokens(patches, params).value
    assert tokens.shape == (TINY.n_patches + 1, TINY.embed_dim)
    manual = patches @ params.patch_w.value.T + params.patch_b.value
    assert np.allclose(tokens[0], params.class_token.value[0] + params.pos_embed.value[0],
                       atol=1e-15)
    assert np.allclose(tokens[1:], manual + params.pos_embed.value[1:], atol=1e-14)


def test_embed_tokens_zero_weights():
    params = vit.init_vit_params(TINY, rng=np.random.default_rng(4))
    params.patch_w.value[:] = 0.0
    patches = np.random.default_rng(5).normal(size=(2, TINY.n_patches, TINY.patch_dim))
    tokens = vit.embed_tokens(patches, params).value
    assert tokens.shape == (2, TINY.n_patches + 1, TINY.embed_dim)
    expect = np.concatenate([params.class_token.value,
                             np.zeros((TINY.n_patches, TINY.embed_dim))], axis=0)
    expect = expect + params.pos_embed.value
    assert np.array_equal(tokens[0], expect)
    assert np.array_equal(tokens[1], expect)


def test_layer_norm_moments():
    rng = np.random.default_rng(6)
    x = rng.normal(loc=3.0, scale=2.5, size=(7, 13))
    ones = ad.Tensor(np.ones(13))
    zeros = ad.Tensor(np.zeros(13))
    out = vit.layer_norm(x, ones, zeros).value
    assert np.max(np.abs(out.mean(axis=-1))) < 1e-12
    assert np.max(np.abs(out.var(axis=-1) - 1.0)) < 1e-6
    shifted = vit.layer_norm(x, ad.Tensor(np.full(13, 2.0)), ad.Tensor(np.full(13, 3.0))).value
    assert np.max(np.abs(shifted.mean(axis=-1) - 3.0)) < 1e-11
    assert np.max(np.abs(shifted.var(axis=-1) - 4.0)) < 1e-5


def test_layer_norm_matches_numpy():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 5, 8))
    scale = rng.normal(size=8)
    shift = rng.normal(size=8)
    out = vit.layer_norm(x, ad.Tensor(scale), ad.Tensor(shift)).value
    assert np.allclose(out, np_layer_norm(x, scale, shift), atol=1e-13)


def zeroed_blocks(params):
    for blk in params.blocks:
        for t in (blk.q_w, blk.q_b, blk.k_w, blk.k_b, blk.v_w, blk.v_b,
                  blk.o_w, blk.o_b, blk.mlp_w1, blk.mlp_b1, blk.mlp_w2, blk.mlp_b2):
            t.value[:] = 0.0
    return params


def test_zero_weight_encoder_is_identity():
    rng = np.random.default_rng(8)
    params = zeroed_blocks(vit.init_vit_params(TINY, rng=rng))
    tokens = ad.Tensor(rng.normal(size=(3, TINY.n_patches + 1, TINY.embed_dim)))
    out = vit.encode(tokens, params)
    assert np.array_equal(out.value, tokens.value)


def test_msa_zero_weights_identity():
    params = zeroed_blocks(vit.init_vit_params(TINY, rng=np.random.default_rng(9)))
    z = ad.Tensor(np.random.default_rng(10).normal(size=(5, TINY.embed_dim)))
    out = vit.msa(z, params.blocks[0], TINY.heads)
    assert np.array_equal(out.value, z.value)
    out = vit.mlp(z, params.blocks[0])
    assert np.array_equal(out.value, z.value)


def test_msa_matches_brute_force_per_head():
    rng = np.random.default_rng(11)
    d, heads, t = 8, 2, 5
    dh = d // heads
    params = vit.init_vit_params(TINY, rng=rng, std=0.5)
    blk = params.blocks[0]
    for w in (blk.q_b, blk.k_b, blk.v_b, blk.o_b):
        w.value[:] = rng.normal(size=w.value.shape) * 0.3
    z0 = rng.normal(size=(t, d))

    h = np_layer_norm(z0, blk.ln1_scale.value, blk.ln1_shift.value)
    q = h @ blk.q_w.value.T + blk.q_b.value
    k = h @ blk.k_w.value.T + blk.k_b.value
    v = h @ blk.v_w.value.T + blk.v_b.value
    mixed = np.zeros((t, d))
    for head in range(heads):
        sl = slice(head * dh, (head + 1) * dh)
        scores = (q[:, sl] @ k[:, sl].T) / np.sqrt(dh)
        attn = sp_softmax(scores, axis=-1)
        mixed[:, sl] = attn @ v[:, sl]
    expect = z0 + mixed @ blk.o_w.value.T + blk.o_b.value

    out = vit.msa(ad.Tensor(z0), blk, heads).value
    assert np.allclose(out, expect, atol=1e-12)


def test_msa_single_token_attends_to_itself():
    rng = np.random.default_rng(12)
    params = vit.init_vit_params(TINY, rng=rng, std=0.4)
    blk = params.blocks[1]
    z0 = rng.normal(size=(1, TINY.embed_dim))
    h = np_layer_norm(z0, blk.ln1_scale.value, blk.ln1_shift.value)
    v = h @ blk.v_w.value.T + blk.v_b.value
    expect = z0 + v @ blk.o_w.value.T + blk.o_b.value
    out = vit.msa(ad.Tensor(z0), blk, TINY.heads).value
    assert np.allclose(out, expect, atol=1e-12)


def test_mlp_matches_numpy():
    rng = np.random.default_rng(13)
    params = vit.init_vit_params(TINY, rng=rng, std=0.5)
    blk = params.blocks[0]
    blk.mlp_b1.value[:] = rng.normal(size=blk.mlp_b1.value.shape) * 0.2
    blk.mlp_b2.value[:] = rng.normal(size=blk.mlp_b2.value.shape) * 0.2
    z0 = rng.normal(size=(4, TINY.embed_dim))
    h = np_layer_norm(z0, blk.ln2_scale.value, blk.ln2_shift.value)
    h = np_gelu(h @ blk.mlp_w1.value.T + blk.mlp_b1.value)
    expect = z0 + h @ blk.mlp_w2.value.T + blk.mlp_b2.value
    out = vit.mlp(ad.Tensor(z0), blk).value
    assert np.allclose(out, expect, atol=1e-12)


def test_classify_zero_head_returns_bias():
    rng = np.random.default_rng(14)
    params = vit.init_vit_params(TINY, rng=rng)
    params.head_w.value[:] = 0.0
    params.head_b.value[:] = [1.0, -2.0, 0.5]
    encoded = ad.Tensor(rng.normal(size=(4, TINY.n_patches + 1, TINY.embed_dim)))
    scores = vit.classify(encoded, params).value
    assert scores.shape == (4, TINY.num_classes)
    assert np.array_equal(scores, np.tile([1.0, -2.0, 0.5], (4, 1)))


def test_classify_uses_class_token_row():
    rng = np.random.default_rng(15)
    params = vit.init_vit_params(TINY, rng=rng, std=0.3)
    encoded = rng.normal(size=(TINY.n_patches + 1, TINY.embed_dim))
    scores = vit.classify(ad.Tensor(encoded), params).value
    h = np_layer_norm(encoded[0], params.final_ln_scale.value, params.final_ln_shift.value)
    expect = h @ params.head_w.value.T + params.head_b.value
    assert np.allclose(scores, expect, atol=1e-13)
    # other token rows must not influence the scores
    encoded2 = encoded.copy()
    encoded2[1:] += 10.0
    assert np.array_equal(vit.classify(ad.Tensor(encoded2), params).value, scores)


def test_forward_shapes_and_batch_consistency():
    rng = np.random.default_rng(16)
    att = attention.init_attention_params(TINY.channels, rng=rng)
    params = vit.init_vit_params(TINY, rng=rng)
    batch = rng.normal(size=(3, 6, 6, 2))
    scores = vit.forward(batch, att, params, TINY).value
    assert scores.shape == (3, TINY.num_classes)
    for b in range(3):
        single = vit.forward(batch[b], att, params, TINY).value
        assert np.allclose(single, scores[b], atol=1e-12)


def test_forward_no_attention_skips_reweight():
    rng = np.random.default_rng(17)
    att = attention.init_attention_params(TINY.channels, rng=rng, std=0.5)
    params = vit.init_vit_params(TINY, rng=rng)
    image = rng.normal(size=(6, 6, 2))
    plain = vit.forward(image, att, params, TINY, no_attention=True).value
    manual = vit.classify(vit.encode(vit.embed_tokens(
        vit.patchify(image, TINY), params), params), params).value
    assert np.array_equal(plain, manual)
    gated = vit.forward(image, att, params, TINY).value
    assert not np.allclose(gated, plain)


def test_forward_rejects_config_mismatch():
    rng = np.random.default_rng(18)
    att = attention.init_attention_params(TINY.channels, rng=rng)
    params = vit.init_vit_params(TINY, rng=rng)
    other = vit.VitConfig(image_h=6, image_w=6, channels=2, patch_size=3,
                          embed_dim=8, depth=1, heads=2, mlp_dim=16, num_classes=3)
    with pytest.raises(DimensionMismatch):
        vit.forward(np.zeros((6, 6, 2)), att, params, other)


def test_init_params_deterministic_and_named():
    a = vit.init_vit_params(TINY, rng=np.random.default_rng(19))
    b = vit.init_vit_params(TINY, rng=np.random.default_rng(19))
    names_a = a.named()
    names_b = b.named()
    assert [n for n, _ in names_a] == [n for n, _ in names_b]
    for (_, ta), (_, tb) in zip(names_a, names_b):
        assert np.array_equal(ta.value, tb.value)
    names = [n for n, _ in names_a]
    assert len(names) == len(set(names))
    assert "vit.block0.msa.q.w" in names
    assert "vit.block1.mlp.w2" in names
    assert names[-1] == "vit.head.b"
    scales = dict(names_a)["vit.block0.ln1.scale"].value
    assert np.array_equal(scales, np.ones(TINY.embed_dim))


def test_logits_reject_non_finite():
    with pytest.raises(NonFiniteInput):
        vit.Logits(np.array([1.0, np.nan]))
