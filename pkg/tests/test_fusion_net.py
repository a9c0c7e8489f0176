import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusiondet.errors import IncompatibleCombination, ShapeMismatch
from fusiondet.fusion_net import (
    ArchitectureConfig,
    EncoderConfig,
    Fusion,
    FusionArch,
    Preprocessor,
    Representation,
    build_encoder,
    forward_features,
    init_parameters,
    stream_inputs,
)
from fusiondet.model import Detector

ENCODERS = ["vgg16m", "vgg16", "vgg16m-mu", "vgg16-mu"]
REJECTED = {("early", "range", "vgg16m"), ("early", "range", "vgg16"), ("middle", "range", "vgg16")}


def _combos():
    for enc, fusion, rep in itertools.product(ENCODERS, Fusion, Representation):
        yield enc, fusion.value, rep.value


def _graph(fusion, rep="dense", enc="vgg16m-mu"):
    return build_encoder(FusionArch(fusion, rep), EncoderConfig.named(enc))


def _inputs(graph, rng, h=64, w=192, depth_hw=None):
    rgb = rng.normal(size=(2, 3, h, w)).astype(np.float32)
    depth = rng.random((2, 1, *(depth_hw or (h, w)))).astype(np.float32)
    return stream_inputs(graph.arch, rgb, depth)


def test_mu_block1_channels():
    assert EncoderConfig.named("vgg16m-mu").blocks()[0][0][0].out_channels == 12
    assert EncoderConfig.named("vgg16m-mu").blocks()[0][0][0].kernel == 7
    assert EncoderConfig.named("vgg16-mu").blocks()[0][0][0].out_channels == 8


def test_unknown_encoder():
    with pytest.raises(ValueError):
        EncoderConfig.named("resnet")
    with pytest.raises(ValueError):
        EncoderConfig("alexnet")


@pytest.mark.parametrize("enc,fusion,rep", list(_combos()))
def test_rejection_matrix(enc, fusion, rep):
    family = EncoderConfig.named(enc).family
    if (fusion, rep, family) in REJECTED:
        with pytest.raises(IncompatibleCombination):
            _graph(fusion, rep, enc)
    else:
        _graph(fusion, rep, enc)


def test_rejection_messages():
    with pytest.raises(IncompatibleCombination, match="early fusion"):
        _graph("early", "range")
    with pytest.raises(IncompatibleCombination, match="concatenated"):
        _graph("middle", "range", "vgg16")


def test_structure():
    g = _graph("none")
    assert g.arity == 1 and g.concat_count == 0 and g.first_convs()[0].in_channels == 3
    g = _graph("early")
    assert g.arity == 1 and g.concat_count == 0 and g.first_convs()[0].in_channels == 4
    g = _graph("middle")
    assert g.arity == 2 and g.concat_count == 1 and g.merge == "block3"
    g = _graph("late")
    single = _graph("none").out_channels
    assert g.arity == 2 and g.merge == "block5" and g.out_channels == 2 * single


@pytest.mark.parametrize("enc", ["vgg16m-mu", "vgg16-mu"])
@pytest.mark.parametrize("fusion", ["none", "early", "middle", "late"])
@pytest.mark.parametrize("rep", ["sparse", "dense", "range"])
def test_feature_map_is_4x12(enc, fusion, rep, rng):
    try:
        g = _graph(fusion, rep, enc)
    except IncompatibleCombination:
        return
    params = init_parameters(g, rng)
    depth_hw = (32, 128) if rep == "range" else None
    out = g.forward(_inputs(g, rng, depth_hw=depth_hw), params)
    assert out.shape == (2, g.out_channels, 4, 12)
    assert np.isfinite(out).all()


@pytest.mark.parametrize("enc", ENCODERS)
@pytest.mark.parametrize("fusion", ["none", "early", "middle", "late"])
def test_304x1000_shape_arithmetic(enc, fusion):
    assert _graph(fusion, "dense", enc).output_hw(304, 1000) == (19, 62)


@pytest.mark.parametrize("enc", ["vgg16m-mu", "vgg16-mu"])
def test_304x1000_forward(enc, rng):
    g = _graph("late", "dense", enc)
    out = g.forward(_inputs(g, rng, 304, 1000), init_parameters(g, rng))
    assert out.shape[2:] == (19, 62)


def test_302_rows_padded_to_304():
    pre = Preprocessor(target=(304, 1000))
    rgb = np.full((302, 1000, 3), 200, np.uint8)
    x = pre.rgb(rgb)
    assert x.shape == (3, 304, 1000)
    assert np.all(x[:, 302:] == 0) and np.all(x[:, :302] != 0)


def test_shape_mismatch(rng):
    g = _graph("late")
    params = init_parameters(g, rng)
    with pytest.raises(ShapeMismatch):
        g.forward([rng.normal(size=(1, 3, 64, 192))], params)
    with pytest.raises(ShapeMismatch):
        g.forward([rng.normal(size=(1, 4, 64, 192)), rng.normal(size=(1, 1, 64, 192))], params)
    with pytest.raises(ShapeMismatch):
        g.forward([rng.normal(size=(1, 3, 8, 192)), rng.normal(size=(1, 1, 8, 192))], params)


@pytest.mark.parametrize("enc", ENCODERS)
def test_parameter_count_ordering(enc):
    counts = [Detector(FusionArch(f, "dense"), EncoderConfig.named(enc)).num_parameters()
              for f in ("late", "middle", "early", "none")]
    assert counts == sorted(counts, reverse=True) and len(set(counts)) == 4


def test_late_streams_are_independent(rng):
    late = _graph("late")
    params = init_parameters(late, rng)
    rgb = rng.normal(size=(2, 3, 64, 192)).astype(np.float32)
    depth = rng.random((2, 1, 64, 192)).astype(np.float32)
    forward_features(late, params, rgb, np.zeros_like(depth))
    cam_a = late.stream_outputs[0].copy()
    forward_features(late, params, rgb, depth)
    cam_b = late.stream_outputs[0].copy()
    lid_b = late.stream_outputs[1].copy()
    single = _graph("none")
    forward_features(single, params, rgb, depth)
    assert np.array_equal(cam_a, cam_b)
    assert np.array_equal(cam_b, single.stream_outputs[0])
    forward_features(late, params, np.zeros_like(rgb), depth)
    assert np.array_equal(late.stream_outputs[1], lid_b)


def test_all_sentinel_depth_gives_finite_features(rng):
    g = _graph("late")
    rgb = np.full((64, 192, 3), 90, np.uint8)
    r, d = Preprocessor()(rgb, np.full((64, 192), np.inf, np.float32))
    assert np.all(d == 0)
    out = forward_features(g, init_parameters(g, rng), r[None], d[None])
    assert np.isfinite(out).all()


def test_preprocess_identity_resize_and_mean():
    pre = Preprocessor(rgb_mean=(100.0, 100.0, 100.0))
    rgb = np.full((64, 192, 3), 100, np.uint8)
    r, d = pre(rgb, np.full((64, 192), 5.0, np.float32))
    assert r.shape == (3, 64, 192) and np.all(r == 0)
    assert np.allclose(d, pre.depth_gain)


def test_depth_encoding_monotone():
    pre = Preprocessor()
    enc = pre.encode_depth(np.array([1.0, 5.0, 10.0, 40.0, np.inf, 0.0], np.float32))
    assert enc[0] == enc[1] == pre.depth_gain
    assert enc[1] > enc[2] > enc[3] > 0
    assert enc[4] == 0 and enc[5] == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(16, 400), st.integers(16, 400))
def test_resize_preserves_aspect(h, w):
    pre = Preprocessor(target=(64, 192))
    nh, nw = pre.resized_hw(h, w)
    assert nh <= 64 and nw <= 192 and (nh == 64 or nw == 192)
    # both dims come from one scale factor, so the aspect ratio holds to a pixel
    s = min(64 / h, 192 / w)
    assert abs(nh - h * s) <= 1 and abs(nw - w * s) <= 1
    x = pre.rgb(np.full((h, w, 3), 255, np.uint8))
    assert np.all(x[:, nh:] == 0) and np.all(x[:, :, nw:] == 0)


def test_range_depth_passes_through():
    d = Preprocessor().depth(np.full((32, 128), 10.0, np.float32), (64, 192))
    assert d.shape == (1, 32, 128)


def test_architecture_config_roundtrip():
    conf = ArchitectureConfig("vgg16-mu", "middle", "sparse", (64, 192))
    again = ArchitectureConfig.from_json(conf.to_json())
    assert again == conf
    with pytest.raises(ValueError):
        ArchitectureConfig.from_json('{"encoder": "vgg16m-mu", "colour": 1}')
    with pytest.raises(ValueError):
        ArchitectureConfig.from_json('{"fusion": "mid"}')
