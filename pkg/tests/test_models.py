import struct

import numpy as np
import pytest

from fpie import models, weightfile
from fpie.autodiff import no_grad
from fpie.models import DiscriminatorConfig, GeneratorConfig
from fpie.tensor import make_rng

STRIDED = GeneratorConfig.strided(3, 4, 16)
BASELINE = GeneratorConfig.baseline(3, 64, 4)


def images(n, h, w, seed=0):
    return make_rng(seed).random((n, 3, h, w), dtype=np.float32)


@pytest.mark.parametrize("cfg", [STRIDED, BASELINE, GeneratorConfig.strided(3, 3, 8, use_prelu=True),
                                 GeneratorConfig.baseline(5, 8, 1, batch_norm=False)])
def test_shape_and_range(cfg):
    g = models.build_generator(cfg, make_rng(0))
    y = g(images(2, 100, 100)).value
    assert y.shape == (2, 3, 100, 100)
    assert y.min() >= 0 and y.max() <= 1


def test_build_is_deterministic():
    a = models.build_generator(BASELINE, make_rng(3))
    b = models.build_generator(BASELINE, make_rng(3))
    sa, sb = models.state_arrays(a), models.state_arrays(b)
    assert list(sa) == list(sb)
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert len(set(sa)) == len(sa)


def zero_non_skip(model):
    for p in model.parameters():
        if not p.name.endswith(("gamma", "slope")):
            p.value[...] = 0


@pytest.mark.parametrize("cfg", [STRIDED, BASELINE])
def test_zeroed_weights_give_identity(cfg):
    g = models.build_generator(cfg, make_rng(0))
    zero_non_skip(g)
    x = images(1, 32, 32)
    y = g(x).value
    assert np.all(np.isfinite(y))
    assert np.array_equal(y, x)
    const = np.full((1, 3, 16, 16), 0.3, np.float32)
    assert np.ptp(g(const).value) == 0


def test_parameter_counts():
    s = models.count_parameters(models.build_generator(STRIDED, make_rng(0)))
    b = models.count_parameters(models.build_generator(BASELINE, make_rng(0)))
    # hand count: conv = cout*cin*k*k + cout; BN adds 2*cout
    conv = lambda ci, co, k: co * ci * k * k + co
    block = lambda c, k: 2 * (conv(c, c, k) + 2 * c)
    baseline = conv(3, 64, 3) + 4 * block(64, 3) + conv(64, 64, 3) + conv(64, 3, 3)
    strided = (conv(3, 16, 3) + conv(16, 32, 4) + conv(32, 64, 4) + 2 * block(64, 3)
               + conv(64, 32, 4) + conv(32, 16, 4) + conv(16, 3, 3))
    assert (b, s) == (baseline, strided)
    assert s < b


def test_strided_rejects_indivisible_input():
    g = models.build_generator(STRIDED, make_rng(0))
    with pytest.raises(ValueError, match="divisible"):
        g(images(1, 30, 30))


def test_invalid_configs():
    with pytest.raises(ValueError):
        GeneratorConfig("strided", 3, 4, 16, 32, 2).validate()
    with pytest.raises(ValueError):
        GeneratorConfig.baseline(3, 16, 0).validate()
    with pytest.raises(ValueError):
        models.build_generator(GeneratorConfig("other"), make_rng(0))


def test_discriminator_contract():
    d = models.build_discriminator(DiscriminatorConfig(), make_rng(0))
    x = make_rng(1).random((8, 1, 100, 100), dtype=np.float32)
    p = d(x).value
    assert p.shape == (8, 1, 1, 1)
    assert np.all((p > 0) & (p < 1))


def test_untrained_discriminator_is_uninformed():
    d = models.build_discriminator(DiscriminatorConfig(), make_rng(0)).eval()
    real = make_rng(1).random((8, 1, 64, 64), dtype=np.float32)
    fake = make_rng(2).random((8, 1, 64, 64), dtype=np.float32)
    with no_grad():
        gap = abs(float(d(real).value.mean()) - float(d(fake).value.mean()))
    assert gap < 0.2


def test_discriminator_needs_grayscale():
    d = models.build_discriminator(DiscriminatorConfig(), make_rng(0))
    with pytest.raises(ValueError):
        d(images(1, 32, 32))


def test_tiny_features_are_fixed():
    x = images(2, 40, 40)
    a = models.extract_features(models.tiny_feature_extractor(), x).value
    b = models.extract_features(models.tiny_feature_extractor(), x.copy()).value
    assert np.array_equal(a, b)
    assert a.shape == (2, 128, 5, 5)
    fe = models.tiny_feature_extractor()
    assert all(not p.trainable for p in fe.parameters())
    with pytest.raises(ValueError):
        models.extract_features(fe, np.zeros((1, 1, 8, 8), np.float32))


def test_vgg_loader_reads_weight_file(tmp_path):
    rng = np.random.default_rng(0)
    tensors, cin = {}, 3
    for name, c in [("conv1_1", 4), ("conv1_2", 4), ("conv2_1", 6)]:
        tensors[f"{name}.weight"] = rng.normal(size=(c, cin, 3, 3)).astype(np.float32)
        tensors[f"{name}.bias"] = rng.normal(size=c).astype(np.float32)
        cin = c
    path = tmp_path / "vgg.fpie"
    weightfile.save(path, tensors)
    fe = models.vgg19_feature_extractor(path, "relu2_1")
    assert [s[0] for s in fe.stages] == ["relu1_1", "relu1_2", "relu2_1"]
    assert models.extract_features(fe, images(1, 16, 16)).shape == (1, 6, 8, 8)
    with pytest.raises(weightfile.WeightFileError, match="conv2_2"):
        models.vgg19_feature_extractor(path, "relu2_2")


@pytest.mark.parametrize("hw,padded", [((100, 100), (100, 100)), ((720, 1280), (720, 1280)),
                                       ((101, 99), (104, 100))])
def test_pad_to_multiple(hw, padded):
    x = images(1, *hw)
    p, crop = models.pad_to_multiple(x, 4)
    assert p.shape[2:] == padded
    assert np.array_equal(crop.apply(p), x)


def test_enhance_any_size():
    g = models.build_generator(STRIDED, make_rng(0))
    assert models.enhance(g, images(1, 101, 99)).shape == (1, 3, 101, 99)


def test_weight_file_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    buf = weightfile.encode({"ab": arr})
    expected = (b"FPIE" + struct.pack("<HI", 1, 1) + struct.pack("<H", 2) + b"ab"
                + struct.pack("<4I", 1, 1, 2, 3) + struct.pack("<6f", *range(6)))
    assert buf == expected
    assert np.array_equal(weightfile.decode(buf)["ab"].reshape(2, 3), arr)


def test_model_round_trip(tmp_path):
    g = models.build_generator(STRIDED, make_rng(0))
    path = tmp_path / "g.fpie"
    models.save_model(g, path)
    h = models.load_model(models.build_generator(STRIDED, make_rng(99)), path)
    assert all(np.array_equal(a, b) for a, b in zip(models.state_arrays(g).values(), models.state_arrays(h).values()))
    models.save_model(h, tmp_path / "h.fpie")
    assert path.read_bytes() == (tmp_path / "h.fpie").read_bytes()


def test_weight_file_errors(tmp_path):
    buf = weightfile.encode({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(weightfile.WeightFileError, match="bad magic"):
        weightfile.decode(b"XXXX" + buf[4:])
    with pytest.raises(weightfile.WeightFileError, match="bad length"):
        weightfile.decode(buf[:-3])
    with pytest.raises(weightfile.WeightFileError, match="bad length"):
        weightfile.decode(buf + b"\0")
    with pytest.raises(weightfile.WeightFileError, match="version"):
        weightfile.decode(buf[:4] + struct.pack("<H", 9) + buf[6:])
    g = models.build_generator(STRIDED, make_rng(0))
    with pytest.raises(weightfile.WeightFileError, match="do not match"):
        models.load_state(g, {"w": np.ones(4, np.float32)})
