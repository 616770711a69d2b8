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

#include "cwic/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "cwic/container.hpp"
#include "cwic/error.hpp"
#include "cwic/quant.hpp"
#include "cwic/random.hpp"

namespace cwic {

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double ParseDouble(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidArgument("config: " + key + " expects a number, got \"" + v +
                          "\"");
  }
}

std::uint64_t ParseUnsigned(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long u = std::stoull(v, &used);
    if (used != v.size() || v.starts_with('-')) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw InvalidArgument("config: " + key +
                          " expects a non-negative integer, got \"" + v + "\"");
  }
}

bool ParseBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument("config: " + key + " expects true/false, got \"" + v +
                        "\"");
}

void Shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.Below(i)]);
  }
}

std::string FormatDouble(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

double TrainConfig::RateThreshold() const {
  if (rate_threshold >= 0.0) return rate_threshold;
  const double cells = static_cast<double>(patch_size / kDownsample) *
                       static_cast<double>(patch_size / kDownsample);
  return (n == 128 ? 0.5 : 1.0) * bpp * cells;
}

TrainConfig ParseTrainConfig(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) +
                            ": expected key=value");
    }
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    if (key == "gamma") {
      c.gamma = ParseDouble(key, value);
    } else if (key == "bpp") {
      c.bpp = ParseDouble(key, value);
    } else if (key == "rate_threshold") {
      c.rate_threshold = ParseDouble(key, value);
    } else if (key == "n") {
      c.n = static_cast<int>(ParseUnsigned(key, value));
    } else if (key == "batch_size") {
      c.batch_size = ParseUnsigned(key, value);
    } else if (key == "max_iters_per_stage") {
      c.max_iters_per_stage = ParseUnsigned(key, value);
    } else if (key == "lr_ladder") {
      c.lr_ladder.clear();
      std::istringstream items(value);
      std::string item;
      while (std::getline(items, item, ',')) {
        c.lr_ladder.push_back(ParseDouble(key, Trim(item)));
      }
    } else if (key == "seed") {
      c.seed = ParseUnsigned(key, value);
    } else if (key == "patch_size") {
      c.patch_size = ParseUnsigned(key, value);
    } else if (key == "importance_map") {
      c.importance_map = ParseBool(key, value);
    } else if (key == "plateau_window") {
      c.plateau_window = ParseUnsigned(key, value);
    } else if (key == "plateau_patience") {
      c.plateau_patience = ParseUnsigned(key, value);
    } else {
      throw InvalidArgument("config line " + std::to_string(line_no) +
                            ": unknown key \"" + key + "\"");
    }
  }
  return c;
}

std::string FormatTrainConfig(const TrainConfig& c) {
  std::ostringstream os;
  os << "gamma=" << FormatDouble(c.gamma) << '\n'
     << "bpp=" << FormatDouble(c.bpp) << '\n'
     << "rate_threshold=" << FormatDouble(c.rate_threshold) << '\n'
     << "n=" << c.n << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "max_iters_per_stage=" << c.max_iters_per_stage << '\n'
     << "lr_ladder=";
  for (std::size_t i = 0; i < c.lr_ladder.size(); ++i) {
    os << (i ? "," : "") << FormatDouble(c.lr_ladder[i]);
  }
  os << '\n'
     << "seed=" << c.seed << '\n'
     << "patch_size=" << c.patch_size << '\n'
     << "importance_map=" << (c.importance_map ? "true" : "false") << '\n'
     << "plateau_window=" << c.plateau_window << '\n'
     << "plateau_patience=" << c.plateau_patience << '\n';
  return os.str();
}

PatchSet LoadPatches(const std::string& dir, std::size_t patch_size,
                     std::uint64_t seed,
                     const std::function<void(const std::string&)>& warn) {
  namespace fs = std::filesystem;
  if (patch_size == 0 || patch_size % kDownsample != 0) {
    throw InvalidArgument("patches: size must be a positive multiple of 8");
  }
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  PatchSet set;
  set.patch_size = patch_size;
  for (const fs::path& file : files) {
    RawImage image;
    try {
      image = ReadPpm(file.string());
    } catch (const std::exception& e) {
      if (warn) warn("skipping " + file.string() + ": " + e.what());
      continue;
    }
    if (image.width < patch_size || image.height < patch_size) {
      if (warn) {
        warn("skipping " + file.string() + ": " + std::to_string(image.width) +
             "x" + std::to_string(image.height) + " is smaller than a " +
             std::to_string(patch_size) + " patch");
      }
      continue;
    }
    for (std::size_t ty = 0; ty + patch_size <= image.height; ty += patch_size) {
      for (std::size_t tx = 0; tx + patch_size <= image.width; tx += patch_size) {
        Tensor patch({3, patch_size, patch_size});
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t y = 0; y < patch_size; ++y) {
            for (std::size_t x = 0; x < patch_size; ++x) {
              patch[(c * patch_size + y) * patch_size + x] =
                  image.at(ty + y, tx + x, c) / 255.0;
            }
          }
        }
        set.patches.push_back(std::move(patch));
      }
    }
  }
  std::vector<std::size_t> order(set.patches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  Shuffle(order, rng);
  std::vector<Tensor> shuffled;
  shuffled.reserve(order.size());
  for (std::size_t i : order) shuffled.push_back(std::move(set.patches[i]));
  set.patches = std::move(shuffled);
  return set;
}

PatchSet SyntheticPatches(std::size_t count, std::size_t patch_size,
                          std::uint64_t seed) {
  Rng rng(seed);
  PatchSet set;
  set.patch_size = patch_size;
  const double size = static_cast<double>(patch_size);
  for (std::size_t p = 0; p < count; ++p) {
    double base[3], slope_x[3], slope_y[3], stripe_amp[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = rng.Uniform(0.2, 0.8);
      slope_x[c] = rng.Uniform(-0.3, 0.3);
      slope_y[c] = rng.Uniform(-0.3, 0.3);
      stripe_amp[c] = rng.Uniform(0.0, 0.15);
    }
    const double angle = rng.Uniform(0.0, std::numbers::pi);
    const double freq = rng.Uniform(2.0, 8.0) * 2.0 * std::numbers::pi / size;
    const double phase = rng.Uniform(0.0, 2.0 * std::numbers::pi);
    const double blob_x = rng.Uniform(0.2, 0.8) * size;
    const double blob_y = rng.Uniform(0.2, 0.8) * size;
    const double blob_r = rng.Uniform(0.1, 0.3) * size;
    const double blob_amp = rng.Uniform(-0.3, 0.3);
    Tensor patch({3, patch_size, patch_size});
    for (std::size_t y = 0; y < patch_size; ++y) {
      for (std::size_t x = 0; x < patch_size; ++x) {
        const double u = static_cast<double>(x) / size - 0.5;
        const double v = static_cast<double>(y) / size - 0.5;
        const double t = std::cos(angle) * static_cast<double>(x) +
                         std::sin(angle) * static_cast<double>(y);
        const double stripe = std::sin(freq * t + phase);
        const double dx = static_cast<double>(x) - blob_x;
        const double dy = static_cast<double>(y) - blob_y;
        const double blob = std::exp(-(dx * dx + dy * dy) / (2 * blob_r * blob_r));
        for (std::size_t c = 0; c < 3; ++c) {
          const double value = base[c] + slope_x[c] * u + slope_y[c] * v +
                               stripe_amp[c] * stripe + blob_amp * blob;
          patch[(c * patch_size + y) * patch_size + x] =
              std::clamp(value, 0.0, 1.0);
        }
      }
    }
    set.patches.push_back(std::move(patch));
  }
  return set;
}

Tensor MakeBatch(const PatchSet& set, std::span<const std::size_t> indices) {
  const std::size_t ps = set.patch_size;
  const std::size_t stride = 3 * ps * ps;
  Tensor batch({indices.size(), 3, ps, ps});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& patch = set.patches.at(indices[b]);
    std::copy(patch.vec().begin(), patch.vec().end(),
              batch.vec().begin() + static_cast<std::ptrdiff_t>(b * stride));
  }
  return batch;
}

Var DistortionLoss(Var reconstruction, Var original) {
  return SquaredError(reconstruction, original);
}

Var RateLoss(Var importance, double r) {
  const Tensor& p = importance.value();
  if (p.rank() != 4 || p.dim(1) != 1) {
    throw InvalidArgument("rate_loss: expected [N,1,h,w], got " +
                          ShapeString(p.shape()));
  }
  const std::size_t batch = p.dim(0);
  const std::size_t cells = p.dim(2) * p.dim(3);
  std::vector<double> excess(batch, 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < cells; ++i) s += p[b * cells + i];
    excess[b] = s - r;
    if (excess[b] > 0) total += excess[b];
  }
  return importance.tape()->Record(
      Tensor::Scalar(total), {importance},
      [importance, excess, cells](Tape& t, const Tensor& dy) {
        Tensor& g = t.GradBuffer(importance);
        for (std::size_t b = 0; b < excess.size(); ++b) {
          if (excess[b] <= 0) continue;
          for (std::size_t i = 0; i < cells; ++i) g[b * cells + i] += dy[0];
        }
      });
}

ObjectiveTerms Objective(const Tensor& batch, const ModelParams& params,
                         const TrainConfig& config, ModelParams* grads) {
  if (config.gamma < 0) throw InvalidArgument("objective: gamma must be >= 0");
  Tape tape;
  Var x = tape.Constant(batch);
  EncoderOutput enc = Encode(tape, x, params, grads);
  Var code = Binarize(enc.code);
  ObjectiveTerms terms;
  Var rate;
  const bool importance = config.importance_map && params.importance_enabled;
  if (importance) {
    Var p = Importance(tape, enc.features, params, grads);
    code = Mul(ImportanceMask(p, params.n, params.L), code);
    rate = RateLoss(p, config.RateThreshold());
    terms.rate = rate.value().item();
    for (double v : p.value().vec()) {
      terms.importance_sum += v;
      terms.level_sum += (v > 0 && v < 1) ? QuantizeImportance(v, params.L)
                                          : (v >= 1 ? params.L - 1 : 0);
    }
  }
  Var recon = Decode(tape, code, params, grads);
  Var total = DistortionLoss(recon, x);
  terms.distortion = total.value().item();
  if (rate.valid() && config.gamma != 0.0) {
    total = Add(total, Scale(rate, config.gamma));
  }
  terms.total = total.value().item();
  if (grads) tape.Backward(total);
  return terms;
}

void AdamStep(ModelParams& params, const ModelParams& grads, AdamState& state,
              double lr) {
  std::vector<std::span<double>> p;
  std::vector<std::span<const double>> g;
  auto pl = params.Layers();
  auto gl = grads.Layers();
  for (std::size_t i = 0; i < pl.size(); ++i) {
    p.emplace_back(pl[i]->weight.data());
    p.emplace_back(pl[i]->bias.data());
    g.emplace_back(gl[i]->weight.data());
    g.emplace_back(gl[i]->bias.data());
  }
  AdamStep(p, g, state, lr);
}

TrainResult Train(const TrainConfig& config, const PatchSet& patches,
                  ModelParams init,
                  const std::function<void(const TrainStep&)>& on_step) {
  if (patches.patches.empty()) throw InvalidArgument("train: empty patch set");
  if (config.batch_size == 0) throw InvalidArgument("train: batch size is 0");
  if (init.n != config.n) {
    throw InvalidArgument("train: initial model has n=" +
                          std::to_string(init.n) + ", config n=" +
                          std::to_string(config.n));
  }
  TrainResult result;
  result.params = std::move(init);
  result.params.importance_enabled = config.importance_map;
  ModelParams grads = result.params.ZerosLike();
  AdamState adam;
  Rng rng(config.seed);
  std::vector<std::size_t> order(patches.patches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  std::vector<std::size_t> indices(std::min(config.batch_size, order.size()));
  std::size_t iteration = 0;
  for (std::size_t stage = 0; stage < config.lr_ladder.size(); ++stage) {
    const double lr = config.lr_ladder[stage];
    PlateauDetector plateau(config.plateau_window, config.plateau_patience);
    std::size_t it = 0;
    for (; it < config.max_iters_per_stage; ++it) {
      for (std::size_t& idx : indices) {
        if (cursor == order.size()) {
          Shuffle(order, rng);
          cursor = 0;
        }
        idx = order[cursor++];
      }
      for (ConvLayer* l : grads.Layers()) {
        l->weight.Fill(0.0);
        l->bias.Fill(0.0);
      }
      const Tensor batch = MakeBatch(patches, indices);
      TrainStep step{stage, iteration++, lr,
                     Objective(batch, result.params, config, &grads)};
      AdamStep(result.params, grads, adam, lr);
      result.history.push_back(step);
      if (on_step) on_step(step);
      if (plateau.Push(step.terms.total)) {
        ++it;
        break;
      }
    }
    result.stage_iterations.push_back(it);
  }
  result.params.RoundToFloat();
  return result;
}

}  // namespace cwic
