import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from pdcovidnet.config import dump_config, load_config, parse_config
from pdcovidnet.errors import (ConfigError, CorruptionError, DecodeError, DomainError, FormatError,
                               IncompatibleWeightsError)
from pdcovidnet.imaging import (SYNTHETIC_CLASSES, class_order, generate_synthetic, load_image, save_png,
                                scan_dataset, synthetic_image)
from pdcovidnet.model import CLASS_NAMES, ModelConfig, build_pdcovidnet
from pdcovidnet.train import TrainConfig
from pdcovidnet.weights import decode, encode, load_weights, model_from_file, read_weights, save_weights

TINY = ModelConfig(input_size=32, in_channels=1, filters=(4, 4, 4, 4, 4), fc=(8, 8), classes=3)


def _png(path, arr, mode="L"):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode=mode).save(path)
    return path


class TestLoadImage:
    def test_constant_gray(self, tmp_path):
        p = _png(tmp_path / "g.png", np.full((224, 224), 128))
        img = load_image(p)
        assert img.shape == (3, 224, 224)
        assert np.all(img == 128 / 255)

    def test_downscale_shape(self, tmp_path):
        p = _png(tmp_path / "big.png", np.random.default_rng(0).integers(0, 256, size=(448, 448)))
        assert load_image(p).shape == (3, 224, 224)

    def test_checkerboard_bilinear(self, tmp_path):
        p = _png(tmp_path / "c.png", [[0, 255], [255, 0]])
        img = load_image(p, size=4, channels=1)[0]
        # sample coords per output index: 0 (clamped from -0.25), 0.25, 0.75, 1 (clamped from 1.25)
        assert img[0, 0] == 0.0
        assert img[0, 1] == pytest.approx(0.25)
        assert img[1, 1] == pytest.approx(0.375)
        assert img[1, 2] == pytest.approx(0.625)

    def test_rgb_kept(self, tmp_path):
        rgb = np.zeros((8, 8, 3))
        rgb[..., 0] = 255
        img = load_image(_png(tmp_path / "r.png", rgb, "RGB"), size=8)
        np.testing.assert_array_equal(img[0], 1.0)
        np.testing.assert_array_equal(img[1:], 0.0)

    def test_jpeg(self, tmp_path):
        p = tmp_path / "j.jpg"
        Image.fromarray(np.full((16, 16), 200, dtype=np.uint8)).save(p, format="JPEG", quality=100)
        assert load_image(p, size=16, channels=1)[0].mean() == pytest.approx(200 / 255, abs=0.01)

    def test_repeatable(self, tmp_path):
        p = _png(tmp_path / "n.png", np.random.default_rng(1).integers(0, 256, size=(50, 70)))
        assert load_image(p).tobytes() == load_image(p).tobytes()

    def test_corrupt_file(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"\x89PNG\r\n\x1a\nnot really")
        with pytest.raises(DecodeError, match="bad.png"):
            load_image(p)

    def test_unsupported_format(self, tmp_path):
        p = tmp_path / "x.bmp"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(p)
        with pytest.raises(FormatError):
            load_image(p)
        disguised = tmp_path / "x.png"
        disguised.write_bytes(p.read_bytes())
        with pytest.raises(FormatError):
            load_image(disguised)


class TestSynthetic:
    def test_counts(self, tmp_path):
        m = generate_synthetic(tmp_path, per_class=10, size=16, seed=0)
        assert len(list(tmp_path.rglob("*.png"))) == 30
        assert np.bincount(m.labels).tolist() == [10, 10, 10]

    def test_byte_identical(self, tmp_path):
        generate_synthetic(tmp_path / "a", 4, size=16, seed=3)
        generate_synthetic(tmp_path / "b", 4, size=16, seed=3)
        for f in sorted((tmp_path / "a").rglob("*.png")):
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_manifest_matches_directories(self, tmp_path):
        generate_synthetic(tmp_path, 3, size=16, seed=0)
        m = scan_dataset(tmp_path)
        assert m.class_names == list(SYNTHETIC_CLASSES)
        for rel, label in m.items:
            assert rel.split("/")[0] == m.class_names[label]

    def test_linear_separability_blob_vs_gradient(self):
        rng = np.random.default_rng(0)

        def features(label, n):
            # mean pixel value over each cell of a 4 x 4 grid
            imgs = [synthetic_image(label, 64, rng) for _ in range(n)]
            return np.array([im.reshape(4, 16, 4, 16).mean(axis=(1, 3)).ravel() for im in imgs])

        X = np.vstack([features(0, 50), features(1, 50)])
        y = np.r_[-np.ones(50), np.ones(50)]
        design = np.c_[X, np.ones(100)]
        w, *_ = np.linalg.lstsq(design, y, rcond=None)
        assert np.mean(np.sign(design @ w) == y) >= 0.9
        Xt = np.vstack([features(0, 50), features(1, 50)])
        assert np.mean(np.sign(np.c_[Xt, np.ones(100)] @ w) == y) >= 0.9

    def test_small_size_rejected(self, tmp_path):
        with pytest.raises(DomainError):
            generate_synthetic(tmp_path, 1, size=8)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            generate_synthetic(blocker / "sub", 1, size=16)


def test_class_order_follows_benchmark_convention():
    assert class_order(["Viral Pneumonia", "Normal", "COVID-19"]) == list(CLASS_NAMES)
    assert class_order(["b", "a"]) == ["a", "b"]


def test_save_png_roundtrip(tmp_path):
    img = np.random.default_rng(0).uniform(size=(3, 5, 6))
    save_png(tmp_path / "o.png", img)
    back = np.asarray(Image.open(tmp_path / "o.png")).transpose(2, 0, 1)
    np.testing.assert_array_equal(back, np.rint(img * 255))


class TestWeights:
    @pytest.fixture
    def model(self):
        m = build_pdcovidnet(TINY, rng=0)
        rng = np.random.default_rng(1)
        for p in m.parameters().values():
            p.bias[...] = rng.normal(size=p.bias.shape)
        return m

    def test_roundtrip_float32(self, model, tmp_path):
        save_weights(model, tmp_path / "w.bin")
        other = load_weights(build_pdcovidnet(TINY, rng=9), tmp_path / "w.bin")
        for name, arr in model.named_arrays().items():
            np.testing.assert_array_equal(other.named_arrays()[name], arr.astype(np.float32))
            assert np.abs(other.named_arrays()[name] - arr).max() <= np.abs(arr).max() * 2.0**-24

    def test_header_layout(self, model, tmp_path):
        save_weights(model, tmp_path / "w.bin")
        data = (tmp_path / "w.bin").read_bytes()
        assert data[:4] == b"PDCN"
        assert struct.unpack_from("<HI", data, 4) == (1, len(model.named_arrays()))
        assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])
        (n,) = struct.unpack_from("<H", data, 10)
        name = data[12:12 + n].decode()
        assert name == "branch0_d1.block1.conv1.weight"
        assert struct.unpack_from("<BB4Q", data, 12 + n) == (1, 4, 4, 1, 3, 3)

    def test_save_load_save_identical(self, model, tmp_path):
        save_weights(model, tmp_path / "a.bin")
        reloaded = model_from_file(tmp_path / "a.bin")
        save_weights(reloaded, tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_model_from_file_recovers_config(self, model, tmp_path):
        save_weights(model, tmp_path / "w.bin")
        assert model_from_file(tmp_path / "w.bin").config == TINY

    @pytest.mark.parametrize("cut", [3, 20, 200, -1])
    def test_truncated_rejected_without_mutation(self, model, tmp_path, cut):
        save_weights(model, tmp_path / "w.bin")
        data = (tmp_path / "w.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(data[:cut])
        target = build_pdcovidnet(TINY, rng=5)
        before = {k: v.copy() for k, v in target.named_arrays().items()}
        with pytest.raises(CorruptionError):
            load_weights(target, tmp_path / "t.bin")
        assert all(np.array_equal(before[k], v) for k, v in target.named_arrays().items())

    def test_bit_flip_rejected(self, model, tmp_path):
        save_weights(model, tmp_path / "w.bin")
        data = bytearray((tmp_path / "w.bin").read_bytes())
        data[len(data) // 2] ^= 0x10
        with pytest.raises(CorruptionError, match="CRC"):
            decode(bytes(data))

    def test_incompatible_names_layer(self, model, tmp_path):
        save_weights(model, tmp_path / "w.bin")
        other_cfg = ModelConfig(**{**TINY.__dict__, "filters": (4, 4, 6, 4, 4)})
        target = build_pdcovidnet(other_cfg, rng=0)
        before = {k: v.copy() for k, v in target.named_arrays().items()}
        with pytest.raises(IncompatibleWeightsError, match="branch0_d1.block3.conv1.weight"):
            load_weights(target, tmp_path / "w.bin")
        assert all(np.array_equal(before[k], v) for k, v in target.named_arrays().items())

    def test_encode_decode_direct(self):
        arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(1)}
        back = decode(encode(arrays))
        assert list(back) == ["a", "b"] and back["a"].dtype == np.float32
        np.testing.assert_array_equal(back["a"], arrays["a"])

    def test_read_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            read_weights(tmp_path / "nope.bin")


class TestConfig:
    def test_parse(self):
        train, model = parse_config(
            "# comment\nlearning_rate = 0.001\nepochs = 3\nrotation_deg = 0\nfilters = 4,4,4,4,4\n"
            "input_size = 32  # trailing\n"
        )
        assert train.learning_rate == 0.001 and train.epochs == 3
        assert train.augmentation.rotation_deg == 0.0
        assert model.filters == (4, 4, 4, 4, 4) and model.input_size == 32

    def test_defaults(self):
        train, model = parse_config("")
        assert train == TrainConfig() and model == ModelConfig()

    @pytest.mark.parametrize("text", ["learnin_rate = 1", "epochs = x", "epochs 3", "epochs = 1\nepochs = 2",
                                      "learning_rate = -1"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_dump_roundtrip(self, tmp_path):
        train = TrainConfig(learning_rate=0.003, epochs=7)
        (tmp_path / "c.cfg").write_text(dump_config(train, TINY))
        assert load_config(tmp_path / "c.cfg") == (train, TINY)
