// Copyright (c) the cwic authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Python bindings: model and entropy-model files, compress, decompress, PPM
// I/O and quality metrics. Images are uint8 arrays of shape (H, W, 3).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <span>
#include <string>

#include "cwic/container.hpp"
#include "cwic/entropy.hpp"
#include "cwic/error.hpp"
#include "cwic/metrics.hpp"
#include "cwic/nets.hpp"
#include "cwic/quant.hpp"

namespace py = pybind11;

namespace cwic {
namespace {

using ImageArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

RawImage ToImage(const ImageArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) {
    throw InvalidArgument("image must have shape (H, W, 3)");
  }
  RawImage img;
  img.height = static_cast<std::size_t>(a.shape(0));
  img.width = static_cast<std::size_t>(a.shape(1));
  img.rgb.assign(a.data(), a.data() + a.size());
  return img;
}

ImageArray FromImage(const RawImage& img) {
  ImageArray a({static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width),
                py::ssize_t{3}});
  std::memcpy(a.mutable_data(), img.rgb.data(), img.rgb.size());
  return a;
}

py::bytes ToBytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::span<const std::uint8_t> ByteSpan(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

const EntropyModel* OrNull(const std::optional<EntropyModel>& e) {
  return e ? &*e : nullptr;
}

}  // namespace
}  // namespace cwic

PYBIND11_MODULE(_core, m) {
  using namespace cwic;
  m.doc() = "Content-weighted learned image compression";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<ModelParams>(m, "Model")
      .def_readonly("n", &ModelParams::n)
      .def_readonly("L", &ModelParams::L)
      .def_readonly("importance_enabled", &ModelParams::importance_enabled)
      .def_property_readonly("num_parameters", &ModelParams::NumParameters)
      .def_property_readonly("checksum", &ModelParams::Checksum)
      .def("to_bytes", [](const ModelParams& p) { return ToBytes(SerializeModel(p)); })
      .def("save", [](const ModelParams& p, const std::string& path) { SaveModel(p, path); },
           py::arg("path"));

  m.def("init_model", &InitParams, py::arg("seed"), py::arg("n") = 64,
        "Randomly initialised model with n code channels (64 or 128).");
  m.def("load_model", &LoadModel, py::arg("path"));
  m.def("model_from_bytes", [](const py::bytes& b) {
    const std::string s = b;
    return DeserializeModel(ByteSpan(s));
  }, py::arg("data"));

  py::class_<EntropyModel>(m, "EntropyModel")
      .def_property_readonly("kind", [](const EntropyModel& e) {
        return e.kind == EntropyModelKind::kNet ? "net" : "freq-table";
      })
      .def("save", [](const EntropyModel& e, const std::string& path) {
        SaveEntropyModel(e, path);
      }, py::arg("path"));
  m.def("load_entropy_model", &LoadEntropyModel, py::arg("path"));
  m.def("frequency_table_model", [] { return EntropyModel::Frequency(); },
        "Adaptive frequency-table coder with uniform initial counts.");

  m.def("compress",
        [](const ImageArray& image, const ModelParams& model,
           const std::optional<EntropyModel>& entropy, bool entropy_codes,
           bool entropy_importance) {
          CompressOptions opts;
          opts.entropy_codes = entropy && entropy_codes;
          opts.entropy_importance = entropy && entropy_importance;
          opts.importance_disabled = !model.importance_enabled;
          const RawImage img = ToImage(image);
          std::vector<std::uint8_t> out;
          {
            py::gil_scoped_release release;
            out = Compress(img, model, OrNull(entropy), opts).stream.Serialize();
          }
          return ToBytes(out);
        },
        py::arg("image"), py::arg("model"), py::arg("entropy") = py::none(),
        py::arg("entropy_codes") = true, py::arg("entropy_importance") = true,
        "Compress an (H, W, 3) uint8 image to a CWIC byte stream.");
  m.def("decompress",
        [](const py::bytes& data, const ModelParams& model,
           const std::optional<EntropyModel>& entropy) {
          const std::string s = data;
          RawImage img;
          {
            py::gil_scoped_release release;
            img = Decompress(ByteSpan(s), model, OrNull(entropy)).image;
          }
          return FromImage(img);
        },
        py::arg("data"), py::arg("model"), py::arg("entropy") = py::none());
  m.def("stream_info", [](const py::bytes& data) {
    const std::string s = data;
    const CompressedStream st = CompressedStream::Parse(ByteSpan(s));
    py::dict d;
    d["width"] = st.header.width;
    d["height"] = st.header.height;
    d["n"] = st.header.n;
    d["L"] = st.header.L;
    d["flags"] = st.header.flags;
    d["importance_bytes"] = st.imp_payload.size();
    d["code_bytes"] = st.code_payload.size();
    d["bpp"] = st.Bpp();
    return d;
  }, py::arg("data"), "Parse a stream header without decoding.");

  m.def("read_ppm", [](const std::string& path) { return FromImage(ReadPpm(path)); },
        py::arg("path"));
  m.def("write_ppm", [](const ImageArray& image, const std::string& path) {
    WritePpm(ToImage(image), path);
  }, py::arg("image"), py::arg("path"));

  m.def("mse", [](const ImageArray& x, const ImageArray& y) {
    return Mse(ToImage(x), ToImage(y));
  }, py::arg("x"), py::arg("y"));
  m.def("psnr", [](const ImageArray& x, const ImageArray& y) {
    return Psnr(ToImage(x), ToImage(y));
  }, py::arg("x"), py::arg("y"));
  m.def("ssim", [](const ImageArray& x, const ImageArray& y) {
    return Ssim(ToImage(x), ToImage(y));
  }, py::arg("x"), py::arg("y"));
  m.def("bits_per_pixel", &BitsPerPixel, py::arg("num_bytes"), py::arg("width"),
        py::arg("height"));

  m.def("quantize_importance", &QuantizeImportance, py::arg("p"), py::arg("L"));
  m.def("levels_for_channels", &LevelsForChannels, py::arg("n"));
}
