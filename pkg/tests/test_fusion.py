import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twopath.core import DimensionError, Tensor, backward, no_grad, softmax_cross_entropy
from twopath.fusion import (
    ABLATION_METHODS,
    AblationFusion,
    ClassifierHead,
    FusionModule,
    ablation_fuse,
    classify,
    fuse,
    nearest_resize,
)
from twopath.model import ModelConfig, TwoPathwayNet, with_fusion


def _module(d_l=6, d_g=4, append="holistic", seed=0):
    return FusionModule(d_l, d_g, np.random.default_rng(seed), append, dtype=np.float64)


def _random_pair(b=3, d_g=4, d_l=6, seed=1):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((b, d_g))), Tensor(rng.standard_normal((b, d_l)))


def test_identity_modulation_gives_g_twice():
    m = _module().eval()
    m.f1.weight.data[...] = 0
    m.f1.bias.data[...] = 1
    m.f2.weight.data[...] = 0
    m.f2.bias.data[...] = 0
    g, l = _random_pair()
    with no_grad():
        z = fuse(g, l, m).data
    np.testing.assert_array_equal(z, np.concatenate([g.data, g.data], axis=1))


def test_zero_modulation_gives_zero_then_g():
    m = _module().eval()
    for f in (m.f1, m.f2):
        f.weight.data[...] = 0
        f.bias.data[...] = 0
    g, l = _random_pair()
    with no_grad():
        z = fuse(g, l, m).data
    np.testing.assert_array_equal(z[:, :4], 0)
    np.testing.assert_array_equal(z[:, 4:], g.data)


def test_full_fused_width():
    cfg = ModelConfig.full()
    assert FusionModule(cfg.d_l, cfg.d_g, np.random.default_rng(0)).out_dim == 2048


@pytest.mark.parametrize("append,width", [("holistic", 8), ("relation", 10), ("none", 4)])
def test_append_widths(append, width):
    m = _module(append=append).eval()
    g, l = _random_pair()
    with no_grad():
        assert fuse(g, l, m).shape == (3, width) and m.out_dim == width


def test_fuse_width_mismatch():
    m = _module()
    g, l = _random_pair(d_l=5)
    with pytest.raises(DimensionError):
        fuse(g, l, m)


def test_fresh_module_starts_near_identity():
    m = _module(d_l=240, d_g=64).eval()
    g, l = _random_pair(d_g=64, d_l=240)
    with no_grad():
        scale, shift = m.modulation(l)
    assert abs(scale.data.mean() - 1) < 0.05 and scale.data.std() < 0.3
    assert abs(shift.data.mean()) < 0.05 and shift.data.std() < 0.3


def test_dropout_only_in_train_mode():
    m = _module()
    g, l = _random_pair()
    with no_grad():
        m.eval()
        a, b = m(g, l, np.random.default_rng(0)).data, m(g, l, np.random.default_rng(1)).data
        assert np.array_equal(a, b)
        m.train()
        c, d = m(g, l, np.random.default_rng(0)).data, m(g, l, np.random.default_rng(1)).data
        assert not np.array_equal(c, d)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_modulation_locality(seed):
    m = _module(seed=seed % 50).eval()
    g, l = _random_pair(seed=seed)
    l2 = Tensor(l.data + np.random.default_rng(seed + 1).standard_normal(l.shape))
    with no_grad():
        z1, z2 = m(g, l).data, m(g, l2).data
    assert z1[:, 4:].tobytes() == z2[:, 4:].tobytes()
    assert not np.array_equal(z1[:, :4], z2[:, :4])


def test_gradient_reaches_both_pathways():
    net = TwoPathwayNet(ModelConfig(seed=3))
    clip = Tensor(np.random.default_rng(4).standard_normal((3, 1, 16, 32, 32)).astype(np.float32))
    loss, _ = softmax_cross_entropy(net(clip, "fused", np.random.default_rng(5)), [0, 1, 2])
    backward(loss)
    holistic_norm = sum(float(np.sum(p.grad ** 2)) for p in net.holistic.parameters())
    relation_norm = sum(float(np.sum(p.grad ** 2)) for p in net.frames.parameters() + net.relation.parameters())
    assert holistic_norm > 0 and relation_norm > 0


# ---------------------------------------------------------------- ablations

def test_sum_with_zero_projection_is_g():
    mod = AblationFusion("sum", 4, 6, np.random.default_rng(0), dtype=np.float64)
    mod.proj.weight.data[...] = 0
    mod.proj.bias.data[...] = 0
    g, l = _random_pair()
    np.testing.assert_array_equal(ablation_fuse(g, l, "sum", mod).data, g.data)


def test_concat_width():
    g, l = _random_pair(d_g=64, d_l=240)
    assert ablation_fuse(g, l, "concat").shape == (3, 304)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_max_matches_elementwise_oracle(seed):
    mod = AblationFusion("max", 4, 6, np.random.default_rng(seed), dtype=np.float64)
    g, l = _random_pair(seed=seed)
    proj = l.data @ mod.proj.weight.data.T + mod.proj.bias.data
    np.testing.assert_array_equal(ablation_fuse(g, l, "max", mod).data, np.where(g.data >= proj, g.data, proj))


def test_average_and_bilinear_shapes():
    g, l = _random_pair()
    avg = AblationFusion("average", 4, 6, np.random.default_rng(0), dtype=np.float64)
    proj = l.data @ avg.proj.weight.data.T + avg.proj.bias.data
    np.testing.assert_allclose(avg(g, l).data, (g.data + proj) / 2)
    assert ablation_fuse(g, l, "bilinear").shape == (3, 4)


def test_unknown_method():
    g, l = _random_pair()
    with pytest.raises(ValueError):
        ablation_fuse(g, l, "attention")


def test_conv_fusions_need_volumes():
    mod = AblationFusion("conv3d", 4, 6, np.random.default_rng(0), frame_channels=2)
    with pytest.raises(ValueError):
        mod(*_random_pair())


def test_nearest_resize():
    v = Tensor(np.arange(4.0).reshape(1, 1, 4, 1, 1))
    np.testing.assert_array_equal(nearest_resize(v, (2, 1, 1)).data.reshape(-1), [0, 2])
    np.testing.assert_array_equal(nearest_resize(v, (8, 1, 1)).data.reshape(-1), [0, 0, 1, 1, 2, 2, 3, 3])


@pytest.mark.parametrize("method", ("film",) + ABLATION_METHODS)
def test_every_variant_width_matches_formula(method):
    cfg = with_fusion(ModelConfig(seed=1), method)
    net = TwoPathwayNet(cfg).eval()
    expected = {"film": 2 * cfg.d_g, "concat": cfg.d_g + cfg.d_l}.get(method, cfg.d_g)
    assert net.fusion.out_dim == expected
    clip = Tensor(np.random.default_rng(2).standard_normal((2, 1, 16, 32, 32)).astype(np.float32))
    with no_grad():
        inputs = net.fusion_inputs(clip)
        if method == "film":
            z = net.fusion(inputs["g"], inputs["l"])
        else:
            vols = {k: inputs[k] for k in ("holistic_volume", "frame_volume") if k in inputs}
            z = net.fusion(inputs["g"], inputs["l"], **vols)
        assert z.shape == (2, expected)
        assert net(clip, "fused").shape == (2, cfg.classes)


# ---------------------------------------------------------------- classifier head

def test_zero_head_is_uniform():
    head = ClassifierHead(5, 4, np.random.default_rng(0))
    head.fc.weight.data[...] = 0
    head.fc.bias.data[...] = 0
    np.testing.assert_allclose(classify(Tensor(np.zeros((2, 5))), head), 0.25)


def test_single_class_probability_one():
    head = ClassifierHead(3, 1, np.random.default_rng(0))
    np.testing.assert_allclose(classify(Tensor(np.random.default_rng(1).standard_normal((4, 3))), head), 1.0)


def test_head_matches_softmax_oracle():
    rng = np.random.default_rng(2)
    head = ClassifierHead(6, 5, rng, dtype=np.float64)
    head.fc.weight.data[...] = rng.standard_normal((5, 6))
    z = rng.standard_normal((3, 6))
    logits = z @ head.fc.weight.data.T + head.fc.bias.data
    expected = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    probs = classify(Tensor(z), head)
    np.testing.assert_allclose(probs, expected, atol=1e-6)
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)


def test_head_width_mismatch():
    with pytest.raises(DimensionError):
        classify(Tensor(np.zeros((1, 4))), ClassifierHead(5, 2, np.random.default_rng(0)))
