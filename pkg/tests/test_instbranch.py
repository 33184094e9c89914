import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from isvos import tensorkit as tk
from isvos.errors import ContractError, DimensionError
from isvos.instbranch import (InstanceHead, InstancePrediction, MultiHeadAttention, PixelDecoder, QueryDecoder,
                              assignment_cost, attention_bias, classification_loss, decode_queries, dice_loss,
                              hungarian_match, is_loss, masked_attention_layer, masked_cross_attention,
                              matching_cost, pixel_decode, predict_instances, weighted_bce)
from isvos.instbranch.losses import NO_OBJECT_WEIGHT, balance_weights
from isvos.instbranch.transformer import MASK_NEG, MaskedAttentionLayer
from isvos.tensorkit.nn import Module


def P(m):
    return np.asarray(m.data, dtype=np.float64)


def zero_params(module: Module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


def mha_oracle(attn, q, k_in, v_in, bias=None):
    qp = oracles.linear(q, P(attn.q_proj.weight), P(attn.q_proj.bias))
    kp = oracles.linear(k_in, P(attn.k_proj.weight), P(attn.k_proj.bias))
    vp = oracles.linear(v_in, P(attn.v_proj.weight), P(attn.v_proj.bias))
    out = oracles.attention_heads(qp, kp, vp, attn.heads, bias)
    return oracles.linear(out, P(attn.out_proj.weight), P(attn.out_proj.bias))


def layer_oracle(layer, q, feat, embed, fg):
    """Cross-attention (masked), residual, norm; self-attention, norm; FFN, norm."""
    def ln(x, norm):
        return oracles.layer_norm(x, P(norm.gamma), P(norm.beta))
    keys = feat + (0 if embed is None else embed)
    bias = None
    if fg is not None:
        fg = fg | ~fg.any(axis=1, keepdims=True)
        bias = np.where(fg, 0.0, MASK_NEG)
    x = ln(mha_oracle(layer.cross, q, keys, feat, bias) + q, layer.norm1)
    x = ln(x + mha_oracle(layer.self_attn, x, x, x), layer.norm2)
    h = np.maximum(oracles.linear(x, P(layer.ffn1.weight), P(layer.ffn1.bias)), 0)
    return ln(x + oracles.linear(h, P(layer.ffn2.weight), P(layer.ffn2.bias)), layer.norm3)


# -- pixel decoder -------------------------------------------------------------

def test_pyramid_shapes_for_64px():
    rng = np.random.default_rng(0)
    dec = PixelDecoder(32, 16, 8, rng)
    pyr = pixel_decode(dec, tk.Tensor(rng.normal(size=(32, 4, 4))))
    assert [p.shape[1:] for p in pyr.P] == [(2, 2), (4, 4), (8, 8)]
    assert pyr.F_pixel.shape == (8, 16, 16)


def test_pyramid_zero_input_zero_weights_gives_bias():
    rng = np.random.default_rng(1)
    dec = PixelDecoder(4, 6, 5, rng)
    for conv in (dec.lateral, dec.down, dec.mid, dec.fine):
        conv.weight.data[:] = 0
    dec.embed.weight.data[:] = 0
    dec.embed.bias.data[:] = np.arange(5)
    pyr = dec(tk.Tensor(np.zeros((4, 4, 4))))
    for p in pyr.P:
        np.testing.assert_array_equal(p.data, 0)
    np.testing.assert_array_equal(pyr.F_pixel.data, np.broadcast_to(np.arange(5.0)[:, None, None], (5, 16, 16)))


def test_pyramid_is_bitwise_stable():
    x = np.random.default_rng(2).normal(size=(8, 4, 4))
    a = PixelDecoder(8, 8, 8, np.random.default_rng(9))(tk.Tensor(x))
    b = PixelDecoder(8, 8, 8, np.random.default_rng(9))(tk.Tensor(x))
    assert a.F_pixel.data.tobytes() == b.F_pixel.data.tobytes()


def test_pyramid_rejects_odd_size():
    with pytest.raises(DimensionError):
        PixelDecoder(4, 4, 4, np.random.default_rng(0))(tk.Tensor(np.zeros((4, 3, 3))))


# -- masked attention ----------------------------------------------------------

def test_attention_bias_and_empty_fallback():
    fg = np.array([[True, False, True], [False, False, False]])
    b = attention_bias(fg)
    np.testing.assert_array_equal(b[0], [0, MASK_NEG, 0])
    np.testing.assert_array_equal(b[1], 0)


@pytest.mark.parametrize("seed", range(20))
def test_all_foreground_equals_unmasked_attention(seed):
    rng = np.random.default_rng(seed)
    layer = MaskedAttentionLayer(8, 2, 16, rng)
    q, feat = rng.normal(size=(3, 8)), rng.normal(size=(10, 8))
    with tk.precision(np.float64):
        layer = MaskedAttentionLayer(8, 2, 16, np.random.default_rng(seed))
        masked = layer(tk.Tensor(q), tk.Tensor(feat), None, np.ones((3, 10), bool)).data
        plain = layer(tk.Tensor(q), tk.Tensor(feat), None, None).data
    ref = layer_oracle(layer, q, feat, None, None)
    assert np.max(np.abs(masked - ref)) <= 1e-5
    assert np.max(np.abs(plain - ref)) <= 1e-5


def test_single_admitted_position():
    rng = np.random.default_rng(3)
    attn = MultiHeadAttention(8, 2, rng)
    q, feat = rng.normal(size=(2, 8)), rng.normal(size=(6, 8))
    fg = np.zeros((2, 6), bool)
    fg[0, 4] = fg[1, 1] = True
    with tk.precision(np.float64):
        attn = MultiHeadAttention(8, 2, np.random.default_rng(3))
        out = masked_cross_attention(attn, tk.Tensor(q), tk.Tensor(feat), None, fg).data
    for n, pos in ((0, 4), (1, 1)):
        v = oracles.linear(feat[pos], P(attn.v_proj.weight), P(attn.v_proj.bias))
        expect = oracles.linear(v, P(attn.out_proj.weight), P(attn.out_proj.bias)) + q[n]
        np.testing.assert_allclose(out[n], expect, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_masked_layer_vs_direct_formula(seed):
    rng = np.random.default_rng(seed + 100)
    q, feat, embed = rng.normal(size=(4, 8)), rng.normal(size=(3, 5, 5)), rng.normal(size=8)
    fg = rng.uniform(size=(4, 25)) < 0.4
    fg[2] = False
    with tk.precision(np.float64):
        layer = MaskedAttentionLayer(8, 2, 16, np.random.default_rng(seed))
        feat8 = np.concatenate([feat, feat[:2] * 0.5, feat * -1.0], axis=0)
        out = masked_attention_layer(layer, tk.Tensor(q), tk.Tensor(feat8), fg, tk.Tensor(embed)).data
    ref = layer_oracle(layer, q, feat8.reshape(8, 25).T, embed, fg)
    assert np.max(np.abs(out - ref)) <= 1e-4


def _decoder(seed, n=4, dim=8, layers=3):
    rng = np.random.default_rng(seed)
    head = InstanceHead(dim, 6, 3, rng)
    return QueryDecoder(n, dim, 2, layers, head, rng)


def _pyramid(seed, dim=8, eps=6):
    rng = np.random.default_rng(seed)
    from isvos.instbranch import FeaturePyramid
    return FeaturePyramid(F_res4=None, B=[], P=[tk.Tensor(rng.normal(size=(dim, s, s))) for s in (2, 4, 8)],
                          F_pixel=tk.Tensor(rng.normal(size=(eps, 16, 16))))


def test_decode_queries_staging():
    with tk.precision(np.float64):
        dec, pyr = _decoder(0), _pyramid(1)
        qs, preds = decode_queries(dec, pyr)
        assert len(preds) == 4 and len(qs.q_layers) == 3
        assert qs.q_final is qs.q_layers[-1]
        # prediction 0 comes from the initial queries alone
        p0 = predict_instances(dec.head, dec.norm(dec.q_init), pyr.F_pixel)
        np.testing.assert_array_equal(preds[0].mask_logits.data, p0.mask_logits.data)
        # layers cycle through the three levels, each masked by the previous prediction
        q = dec.q_init
        for i, layer in enumerate(dec.layers):
            feat = pyr.P[i % 3]
            m = tk.resize_bilinear(tk.Tensor(preds[i].mask_logits.data), *feat.shape[1:]).data
            fg = m.reshape(4, -1) >= 0
            q = masked_attention_layer(layer, q, feat, fg, dec.level_embed[i % 3])
            np.testing.assert_allclose(q.data, qs.q_layers[i].data, atol=1e-12)


def test_decoder_unmasked_vs_oracle():
    with tk.precision(np.float64):
        dec, pyr = _decoder(2), _pyramid(3)
        qs, _ = decode_queries(dec, pyr, use_masks=False)
    q = P(dec.q_init)
    for i, layer in enumerate(dec.layers):
        feat = P(pyr.P[i % 3])
        q = layer_oracle(layer, q, feat.reshape(feat.shape[0], -1).T, P(dec.level_embed[i % 3]), None)
    assert np.max(np.abs(qs.q_final.data - q)) <= 1e-4


# -- instance head -------------------------------------------------------------

def test_zero_query_zero_bias_gives_zero_logits():
    rng = np.random.default_rng(4)
    head = InstanceHead(8, 6, 3, rng)
    pred = predict_instances(head, tk.Tensor(np.zeros((4, 8))), tk.Tensor(rng.normal(size=(6, 5, 5))))
    np.testing.assert_array_equal(pred.mask_logits.data, 0)
    np.testing.assert_allclose(tk.sigmoid(pred.mask_logits).data, 0.5)


def test_orthogonal_embedding_gives_flat_zero():
    rng = np.random.default_rng(5)
    head = InstanceHead(4, 2, 3, rng)
    q = tk.Tensor(rng.normal(size=(1, 4)))
    e = head.mask_embed(q).data[0]
    ortho = np.array([-e[1], e[0]])
    fpix = np.broadcast_to(ortho[:, None, None], (2, 3, 3)) * rng.uniform(0.5, 2, size=(1, 3, 3))
    out = predict_instances(head, q, tk.Tensor(np.ascontiguousarray(fpix))).mask_logits.data
    np.testing.assert_allclose(out, 0, atol=1e-6)


def test_head_vs_per_pixel_dot_products():
    rng = np.random.default_rng(6)
    with tk.precision(np.float64):
        head = InstanceHead(8, 6, 3, rng)
        q, fpix = rng.normal(size=(4, 8)), rng.normal(size=(6, 5, 7))
        pred = predict_instances(head, tk.Tensor(q), tk.Tensor(fpix))
    h = q
    for i, lin in enumerate(head.mask_embed.layers):
        h = oracles.linear(h, P(lin.weight), P(lin.bias))
        if i < len(head.mask_embed.layers) - 1:
            h = np.maximum(h, 0)
    assert len(head.mask_embed.layers) == 3  # two hidden layers
    ref = np.zeros((4, 5, 7))
    for n in range(4):
        for y in range(5):
            for x in range(7):
                ref[n, y, x] = sum(h[n, c] * fpix[c, y, x] for c in range(6))
    assert np.max(np.abs(pred.mask_logits.data - ref)) <= 1e-5
    np.testing.assert_allclose(pred.class_probs().data.sum(axis=1), 1.0, atol=1e-6)
    assert pred.class_logits.shape == (4, 4)


def test_class_head_skipped():
    rng = np.random.default_rng(7)
    head = InstanceHead(4, 2, 3, rng)
    pred = predict_instances(head, tk.Tensor(np.ones((2, 4))), tk.Tensor(np.ones((2, 3, 3))), with_class=False)
    assert pred.class_logits is None


# -- matching ------------------------------------------------------------------

def test_hungarian_examples():
    assert hungarian_match(np.array([[0.0, 1.0], [1.0, 0.0]])).tolist() == [0, 1]
    c = np.array([[1.0, 2.0], [3.0, 0.0]])
    a = hungarian_match(c)
    assert a.tolist() == [0, 1] and assignment_cost(c, a) == 1.0


def test_hungarian_6x4_vs_enumeration():
    c = np.random.default_rng(8).uniform(size=(6, 4))
    a = hungarian_match(c)
    assert assignment_cost(c, a) == pytest.approx(oracles.best_assignment(c), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 6), data=st.data())
def test_hungarian_optimal_and_injective(n, data):
    g = data.draw(st.integers(0, n))
    seed = data.draw(st.integers(0, 2**31))
    c = np.random.default_rng(seed).normal(size=(n, g))
    a = hungarian_match(c)
    assert len(set(a.tolist())) == g
    if g:
        assert assignment_cost(c, a) == pytest.approx(oracles.best_assignment(c), abs=1e-9)


def test_hungarian_errors():
    with pytest.raises(ContractError):
        hungarian_match(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        hungarian_match(np.array([[np.inf]]))


# -- losses --------------------------------------------------------------------

def test_balance_weights_rows_sum_to_one():
    t = np.array([[1, 0, 0, 0], [1, 1, 1, 1], [0, 0, 0, 0]], float)
    w = balance_weights(t)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    np.testing.assert_allclose(w[0], [0.5, 1 / 6, 1 / 6, 1 / 6])
    np.testing.assert_allclose(w[1], 0.25)


def test_half_probability_gives_ln2():
    t = (np.random.default_rng(9).uniform(size=(3, 20)) < 0.3).astype(float)
    assert float(weighted_bce(tk.Tensor(np.zeros((3, 20))), t).data) == pytest.approx(math.log(2), rel=1e-6)


def test_dice_perfect_and_range():
    t = (np.random.default_rng(10).uniform(size=(2, 16)) < 0.5).astype(float)
    assert float(dice_loss(tk.Tensor(t), t).data) == pytest.approx(0.0, abs=1e-7)
    assert float(dice_loss(tk.Tensor(1 - t), t).data) <= 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 10))
def test_loss_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    t = (rng.uniform(size=(3, 12)) < 0.4).astype(float)
    x = tk.Tensor(rng.normal(scale=scale, size=(3, 12)))
    d = float(dice_loss(tk.sigmoid(x), t).data)
    assert 0.0 <= d <= 1.0
    assert float(weighted_bce(x, t).data) >= 0.0
    preds = [InstancePrediction(tk.Tensor(rng.normal(size=(4, 4))), tk.Tensor(rng.normal(scale=scale, size=(4, 3, 4))))]
    assert float(is_loss(preds, t[:2].reshape(2, 3, 4), [0, 1], 3).data) >= 0.0


def test_classification_loss_weights_no_object():
    z = np.random.default_rng(11).normal(size=(4, 4))
    labels = np.array([0, 3, 2, 3])
    got = float(classification_loss(tk.Tensor(z), labels).data)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    w = np.array([1, NO_OBJECT_WEIGHT, 1, NO_OBJECT_WEIGHT])
    assert got == pytest.approx(-(w * logp[np.arange(4), labels]).sum() / w.sum(), rel=1e-5)


def _is_loss_oracle(preds, gt, labels, num_classes):
    total = 0.0
    g = len(labels)
    t = gt.reshape(g, -1)
    for cls_logits, mask_logits in preds:
        n = mask_logits.shape[0]
        x = mask_logits.reshape(n, -1)
        prob = np.exp(cls_logits - cls_logits.max(1, keepdims=True))
        prob /= prob.sum(1, keepdims=True)
        p = 1 / (1 + np.exp(-x))
        w = balance_weights(t)
        cost = np.zeros((n, g))
        for i in range(n):
            for j in range(g):
                bce = -(w[j] * (t[j] * np.log(p[i]) + (1 - t[j]) * np.log(1 - p[i]))).sum()
                dice = 1 - (2 * (p[i] * t[j]).sum() + 1) / (p[i].sum() + t[j].sum() + 1)
                cost[i, j] = -prob[i, labels[j]] + bce + dice
        best, rows = math.inf, None
        for perm in itertools.permutations(range(n), g):
            c = sum(cost[r, j] for j, r in enumerate(perm))
            if c < best:
                best, rows = c, perm
        tgt = np.full(n, num_classes)
        tgt[list(rows)] = labels
        wc = np.where(tgt == num_classes, NO_OBJECT_WEIGHT, 1.0)
        logp = np.log(prob[np.arange(n), tgt])
        total += -(wc * logp).sum() / wc.sum()
        bces = [-(w[j] * (t[j] * np.log(p[r]) + (1 - t[j]) * np.log(1 - p[r]))).sum() for j, r in enumerate(rows)]
        dices = [1 - (2 * (p[r] * t[j]).sum() + 1) / (p[r].sum() + t[j].sum() + 1) for j, r in enumerate(rows)]
        total += np.mean(bces) + np.mean(dices)
    return total


def test_is_loss_vs_direct_formula():
    rng = np.random.default_rng(12)
    gt = (rng.uniform(size=(2, 8, 8)) < 0.3).astype(float)
    labels = [1, 2]
    raw = [(rng.normal(size=(4, 4)), rng.normal(size=(4, 8, 8))) for _ in range(3)]
    with tk.precision(np.float64):
        preds = [InstancePrediction(tk.Tensor(c), tk.Tensor(m)) for c, m in raw]
        got = float(is_loss(preds, gt, labels, 3).data)
    assert got == pytest.approx(_is_loss_oracle(raw, gt, labels, 3), rel=1e-5)


def test_is_loss_near_zero_for_perfect_prediction():
    gt = np.zeros((2, 8, 8))
    gt[0, :4] = 1
    gt[1, 4:, :4] = 1
    logits = np.full((4, 8, 8), -30.0)
    logits[1] = np.where(gt[0] > 0, 30.0, -30.0)
    logits[3] = np.where(gt[1] > 0, 30.0, -30.0)
    cls = np.full((4, 4), -30.0)
    cls[1, 0] = cls[3, 2] = 30.0
    cls[0, 3] = cls[2, 3] = 30.0
    with tk.precision(np.float64):
        loss = float(is_loss([InstancePrediction(tk.Tensor(cls), tk.Tensor(logits))], gt, [0, 2], 3).data)
    assert loss < 1e-6
    # matching picks the queries carrying the objects
    c = matching_cost(InstancePrediction(tk.Tensor(cls), tk.Tensor(logits)), gt, [0, 2])
    assert hungarian_match(c).tolist() == [1, 3]
