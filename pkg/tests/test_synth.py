import numpy as np
import pytest

from hanfuse.engine import HanConfig
from hanfuse.errors import ConfigError
from hanfuse.synth import CLASSES, NOISE_SIGMA, generate, load_dataset, make_dataset, save_dataset

CFG = HanConfig(C=8, H=4, W=4, G=4)


def test_clean_both_modalities_identical():
    sc = generate("clean-both", CFG, 1)
    np.testing.assert_array_equal(sc.rgb, sc.tir)


def test_complementary_supports_are_disjoint():
    sc = generate("complementary", CFG, 2)
    assert not (sc.rgb * sc.tir).any()
    np.testing.assert_array_equal(sc.rgb + sc.tir, sc.target)
    assert not sc.rgb[4:].any() and not sc.tir[:4].any()


@pytest.mark.parametrize("cls", CLASSES)
def test_target_is_base_field(cls):
    sc = generate(cls, CFG, 3)
    base = generate("clean-both", CFG, 3).target
    np.testing.assert_array_equal(sc.target, base)
    assert sc.rgb.shape == sc.tir.shape == sc.target.shape == CFG.shape


def test_base_field_is_unit_rms():
    s = generate("clean-both", CFG, 4).target
    assert np.sqrt(np.mean(s * s)) == pytest.approx(1.0)


def test_same_seed_is_bit_identical():
    for cls in CLASSES:
        a, b = generate(cls, CFG, 5), generate(cls, CFG, 5)
        assert a.rgb.tobytes() == b.rgb.tobytes() and a.tir.tobytes() == b.tir.tobytes()


def test_noise_level():
    cfg = HanConfig(C=16, H=16, W=16)
    for cls, part in (("noisy-tir", "tir"), ("noisy-rgb", "rgb")):
        sc = generate(cls, cfg, 6)
        sigma = np.std(getattr(sc, part) - sc.target)
        assert abs(sigma - NOISE_SIGMA) < 0.1 * NOISE_SIGMA
    sc = generate("noisy-tir", cfg, 6)
    np.testing.assert_array_equal(sc.rgb, sc.target)


def test_low_contrast_recipe():
    cfg = HanConfig(C=16, H=16, W=16)
    sc = generate("low-contrast", cfg, 7)
    resid = sc.rgb - 0.1 * sc.target
    assert abs(np.std(resid) - 0.05) < 0.005


def test_unknown_class():
    with pytest.raises(ConfigError, match="foggy"):
        generate("foggy", CFG, 0)


def test_dataset_counts_and_order():
    assert make_dataset({c: 0 for c in CLASSES}, CFG, 0) == []
    data = make_dataset({"noisy-rgb": 2, "clean-both": 2}, CFG, 0)
    assert [s.cls for s in data] == ["noisy-rgb", "noisy-rgb", "clean-both", "clean-both"]
    assert len({s.seed for s in data}) == 4


def test_dataset_determinism():
    a = make_dataset({c: 2 for c in CLASSES}, CFG, 9)
    b = make_dataset({c: 2 for c in CLASSES}, CFG, 9)
    for x, y in zip(a, b):
        assert x.cls == y.cls and x.rgb.tobytes() == y.rgb.tobytes() and x.target.tobytes() == y.target.tobytes()


def test_negative_count():
    with pytest.raises(ConfigError):
        make_dataset({"clean-both": -1}, CFG, 0)


def test_save_and_load(tmp_path):
    data = make_dataset({"complementary": 1, "noisy-tir": 2}, CFG, 1)
    save_dataset(tmp_path, data, CFG)
    cfg, back = load_dataset(tmp_path)
    assert cfg == CFG
    for x, y in zip(data, back):
        assert (x.cls, x.seed) == (y.cls, y.seed)
        assert x.tir.tobytes() == y.tir.tobytes()
