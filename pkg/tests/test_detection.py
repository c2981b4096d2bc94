"""Anomaly maps: residual and MCDropout-uncertainty routes, scores, persistence."""

import numpy as np
import pytest

from stainad import rng as rngmod
from stainad.detection import (
    AnomalyMap,
    image_score,
    load_map,
    pixel_scores,
    residual_map,
    save_map,
    uncertainty_map,
)
from stainad.image import GrayImage
from stainad.model import ModelSpec, build, forward


def make_net(dropout=(0.0, 0.1, 0.2), seed=3):
    spec = ModelSpec(input_size=(32, 32), levels=3, channel_plan=(8, 16, 16),
                     dropout_schedule=dropout)
    return build(spec, seed)


@pytest.fixture
def img():
    g = np.linspace(0.2, 0.8, 32, dtype=np.float32)
    return GrayImage(np.outer(g, g).astype(np.float32))


# ---- image_score (map p-norm) ----


def test_score_zero_map_is_zero():
    amap = AnomalyMap(np.zeros((8, 8), dtype=np.float32), "residual")
    assert image_score(amap) == 0.0


def test_score_single_pixel_passthrough():
    v = np.zeros((8, 8), dtype=np.float32)
    v[3, 4] = 3.0
    assert image_score(AnomalyMap(v, "residual")) == pytest.approx(3.0)


def test_score_2x2_ones_p2():
    v = np.ones((2, 2), dtype=np.float32)
    assert image_score(AnomalyMap(v, "residual"), p=2) == pytest.approx(2.0)


def test_score_scale_equivariance():
    rng = np.random.default_rng(1)
    v = rng.uniform(size=(16, 16)).astype(np.float32)
    amap = AnomalyMap(v, "residual")
    for c in (0.0, 0.5, 2.0, 7.5):
        scaled = AnomalyMap((c * v).astype(np.float32), "residual")
        assert image_score(scaled) == pytest.approx(c * image_score(amap), abs=1e-6)


def test_score_p1_is_plain_sum():
    v = np.full((4, 4), 0.25, dtype=np.float32)
    assert image_score(AnomalyMap(v, "residual"), p=1) == pytest.approx(4.0)


def test_score_rejects_bad_p():
    amap = AnomalyMap(np.ones((4, 4), dtype=np.float32), "residual")
    with pytest.raises(ValueError):
        image_score(amap, p=0.5)


def test_map_rejects_negative_values():
    with pytest.raises(ValueError):
        AnomalyMap(np.full((4, 4), -1.0, dtype=np.float32), "residual")


def test_map_rejects_unknown_kind():
    with pytest.raises(ValueError):
        AnomalyMap(np.ones((4, 4), dtype=np.float32), "novelty")


# ---- residual route ----


def test_residual_matches_manual_computation(img):
    net = make_net()
    amap = residual_map(net, img)
    recon = forward(net, img)
    expected = np.abs(img.pixels - recon.pixels)
    assert np.array_equal(amap.values, expected)
    assert amap.kind == "residual"


def test_residual_values_nonnegative(img):
    amap = residual_map(make_net(), img)
    assert (amap.values >= 0).all()


# ---- uncertainty route ----


def test_uncertainty_zero_schedule_exactly_zero(img):
    net = make_net(dropout=(0.0, 0.0, 0.0))
    amap = uncertainty_map(net, img, passes=5, rng=rngmod.stream(0, rngmod.EVAL, 0))
    assert amap.kind == "uncertainty"
    assert np.count_nonzero(amap.values) == 0


def test_uncertainty_seeded_and_reproducible(img):
    net = make_net()
    a = uncertainty_map(net, img, passes=8, rng=rngmod.stream(5, rngmod.EVAL, 1))
    b = uncertainty_map(net, img, passes=8, rng=rngmod.stream(5, rngmod.EVAL, 1))
    assert a.values.tobytes() == b.values.tobytes()


def test_uncertainty_nonnegative_and_nontrivial(img):
    net = make_net()
    amap = uncertainty_map(net, img, passes=8, rng=rngmod.stream(6, rngmod.EVAL, 2))
    assert (amap.values >= 0).all()
    assert amap.values.max() > 0


def test_uncertainty_matches_population_variance(img):
    from stainad.model import mc_forward

    net = make_net()
    stack = mc_forward(net, img, passes=6, rng=rngmod.stream(7, rngmod.EVAL, 3))
    amap = uncertainty_map(net, img, passes=6, rng=rngmod.stream(7, rngmod.EVAL, 3))
    expected = np.var(stack.astype(np.float64), axis=0)
    assert np.allclose(amap.values, expected, atol=1e-10)


# ---- pixel scores ----


def test_pixel_scores_row_major_order():
    v = np.arange(6, dtype=np.float32).reshape(2, 3)
    out = pixel_scores(AnomalyMap(v, "residual"))
    assert [s for s, _ in out] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    assert [pos for _, pos in out] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


# ---- persistence ----


def test_save_load_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(2)
    v = rng.uniform(size=(16, 24)).astype(np.float32)
    amap = AnomalyMap(v, "uncertainty", source="unit-test")
    stem = tmp_path / "maps" / "item0"
    save_map(amap, stem, meta={"note": "x"})
    loaded, header = load_map(stem)
    assert np.array_equal(loaded.values, v)
    assert loaded.kind == "uncertainty"
    assert (header["height"], header["width"]) == (16, 24)
    assert header["meta"]["note"] == "x"
    assert (tmp_path / "maps" / "item0.png").is_file()


def test_load_map_rejects_wrong_dtype_header(tmp_path):
    amap = AnomalyMap(np.ones((8, 8), dtype=np.float32), "residual")
    stem = tmp_path / "m"
    save_map(amap, stem)
    import json

    header = json.loads(stem.with_suffix(".json").read_text())
    header["dtype"] = "float64-be"
    stem.with_suffix(".json").write_text(json.dumps(header))
    with pytest.raises(ValueError):
        load_map(stem)
