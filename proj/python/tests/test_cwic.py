# Copyright (c) the cwic authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import numpy as np
import pytest

import cwic


@pytest.fixture(scope="module")
def model():
    return cwic.init_model(seed=3, n=64)


@pytest.fixture
def image():
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, size=(20, 36, 3), dtype=np.uint8)


def test_model_properties(model):
    assert model.n == 64
    assert model.L == 16
    assert model.importance_enabled
    assert cwic.levels_for_channels(128) == 32


def test_model_bytes_roundtrip(model, tmp_path):
    path = tmp_path / "m.cwcm"
    model.save(str(path))
    assert cwic.load_model(str(path)).checksum == model.checksum
    assert cwic.model_from_bytes(model.to_bytes()).checksum == model.checksum


def test_compress_roundtrip_shapes(model, image):
    stream = cwic.compress(image, model)
    info = cwic.stream_info(stream)
    assert (info["height"], info["width"]) == image.shape[:2]
    assert info["bpp"] == pytest.approx(8 * len(stream) / (20 * 36))
    recon = cwic.decompress(stream, model)
    assert recon.shape == image.shape
    assert recon.dtype == np.uint8


def test_entropy_coding_is_lossless(model, image):
    entropy = cwic.frequency_table_model()
    coded = cwic.compress(image, model, entropy)
    raw = cwic.compress(image, model)
    assert len(coded) <= len(raw)
    np.testing.assert_array_equal(
        cwic.decompress(coded, model, entropy), cwic.decompress(raw, model)
    )


def test_corrupt_stream_raises_format_error(model, image):
    with pytest.raises(cwic.FormatError):
        cwic.decompress(b"XXXX" + cwic.compress(image, model)[4:], model)
    with pytest.raises(ValueError):
        cwic.decompress(b"", model)


def test_ppm_io_and_metrics(image, tmp_path):
    path = tmp_path / "a.ppm"
    cwic.write_ppm(image, str(path))
    back = cwic.read_ppm(str(path))
    np.testing.assert_array_equal(back, image)
    assert cwic.mse(image, back) == 0.0
    assert cwic.ssim(image, back) == pytest.approx(1.0)
    shifted = np.clip(image.astype(int) + 5, 0, 255).astype(np.uint8)
    assert cwic.psnr(image, shifted) > 30.0
    with pytest.raises(OSError):
        cwic.read_ppm(str(tmp_path / "missing.ppm"))


def test_bad_image_shape_rejected(model):
    with pytest.raises(ValueError):
        cwic.compress(np.zeros((8, 8), dtype=np.uint8), model)


def test_quantize_importance():
    assert cwic.quantize_importance(0.01, 16) == 0
    assert cwic.quantize_importance(0.99, 16) == 15
    with pytest.raises(ValueError):
        cwic.quantize_importance(1.0, 16)
    assert cwic.bits_per_pixel(100, 10, 10) == pytest.approx(8.0)
