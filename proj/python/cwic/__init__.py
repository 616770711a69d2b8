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

"""Content-weighted learned image compression."""

from cwic._core import (
    EntropyModel,
    FormatError,
    IoError,
    Model,
    bits_per_pixel,
    compress,
    decompress,
    frequency_table_model,
    init_model,
    levels_for_channels,
    load_entropy_model,
    load_model,
    model_from_bytes,
    mse,
    psnr,
    quantize_importance,
    read_ppm,
    ssim,
    stream_info,
    write_ppm,
)

__all__ = [
    "EntropyModel",
    "FormatError",
    "IoError",
    "Model",
    "bits_per_pixel",
    "compress",
    "decompress",
    "frequency_table_model",
    "init_model",
    "levels_for_channels",
    "load_entropy_model",
    "load_model",
    "model_from_bytes",
    "mse",
    "psnr",
    "quantize_importance",
    "read_ppm",
    "ssim",
    "stream_info",
    "write_ppm",
]
