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

// Command-line front end: train, train-entropy, compress, decompress, eval,
// curves. Exit codes: 0 success, 1 usage, 2 I/O, 3 format or corruption.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "cwic/bytes.hpp"
#include "cwic/container.hpp"
#include "cwic/entropy.hpp"
#include "cwic/error.hpp"
#include "cwic/metrics.hpp"
#include "cwic/nets.hpp"
#include "cwic/train.hpp"

namespace cwic {
namespace {

namespace fs = std::filesystem;

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitFormat = 3;

void Warn(const std::string& message) {
  std::cerr << "cwic: warning: " << message << '\n';
}

// Effective configuration, printed before any work so that the run can be
// repeated from the log.
class ConfigBlock {
 public:
  explicit ConfigBlock(std::string command) : command_(std::move(command)) {}
  template <typename T>
  ConfigBlock& Add(const std::string& key, const T& value) {
    std::ostringstream os;
    os << value;
    lines_.push_back(key + "=" + os.str());
    return *this;
  }
  ConfigBlock& Raw(const std::string& text) {
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) lines_.push_back(line);
    }
    return *this;
  }
  void Print() const {
    std::cerr << "# cwic " << command_ << " effective config\n";
    for (const std::string& l : lines_) std::cerr << "#   " << l << '\n';
  }

 private:
  std::string command_;
  std::vector<std::string> lines_;
};

std::size_t ThreadBudget() {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CWIC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw InvalidArgument(std::string("CWIC_THREADS must be a positive "
                                        "integer, got \"") + env + "\"");
    }
    return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
  }
  return hw;
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::size_t synthetic = 0;
  std::string config_file;
  std::string init;
  std::string out;
  std::size_t log_every = 100;
  TrainConfig config;
};

void AddTrain(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train encoder, decoder and importance net");
  auto* data = cmd->add_option("--data", a.data, "Directory of PPM training images");
  cmd->add_option("--synthetic", a.synthetic,
                  "Use this many synthetic patches instead of --data")
      ->excludes(data);
  cmd->add_option("--config", a.config_file, "key=value config file (flags override it)");
  cmd->add_option("--gamma", a.config.gamma, "Rate-distortion tradeoff");
  cmd->add_option("--bpp", a.config.bpp, "Target rate r0");
  cmd->add_option("--rate-threshold", a.config.rate_threshold,
                  "Explicit rate threshold r (overrides --bpp)");
  cmd->add_option("--n", a.config.n, "Code channels")->check(CLI::IsMember({64, 128}));
  cmd->add_flag("!--no-importance-map", a.config.importance_map,
                "Train without the importance map");
  cmd->add_option("--init", a.init, "Warm-start model file");
  cmd->add_option("--steps", a.config.max_iters_per_stage, "Maximum iterations per lr stage");
  cmd->add_option("--batch", a.config.batch_size, "Batch size");
  cmd->add_option("--seed", a.config.seed, "Random seed");
  cmd->add_option("--patch-size", a.config.patch_size, "Patch side (multiple of 8)");
  cmd->add_option("--log-every", a.log_every, "Progress line interval (0 disables)");
  cmd->add_option("--out", a.out, "Output model file")->required();
}

int RunTrain(const CLI::App& cmd, TrainArgs a) {
  if (a.data.empty() && a.synthetic == 0) {
    throw InvalidArgument("train: one of --data or --synthetic is required");
  }
  TrainConfig config = a.config;
  if (!a.config_file.empty()) {
    // File values first, then explicitly given flags on top.
    const std::vector<std::uint8_t> raw = ReadFileBytes(a.config_file);
    config = ParseTrainConfig(std::string(raw.begin(), raw.end()));
    const TrainConfig& f = a.config;
    if (cmd.count("--gamma")) config.gamma = f.gamma;
    if (cmd.count("--bpp")) config.bpp = f.bpp;
    if (cmd.count("--rate-threshold")) config.rate_threshold = f.rate_threshold;
    if (cmd.count("--n")) config.n = f.n;
    if (cmd.count("--no-importance-map")) config.importance_map = false;
    if (cmd.count("--steps")) config.max_iters_per_stage = f.max_iters_per_stage;
    if (cmd.count("--batch")) config.batch_size = f.batch_size;
    if (cmd.count("--seed")) config.seed = f.seed;
    if (cmd.count("--patch-size")) config.patch_size = f.patch_size;
  }
  if (config.gamma < 0) throw InvalidArgument("train: gamma must be >= 0");
  if (config.patch_size == 0 || config.patch_size % kDownsample != 0) {
    throw InvalidArgument("train: patch size must be a positive multiple of 8");
  }
  ConfigBlock block("train");
  block.Add("data", a.data.empty() ? "synthetic:" + std::to_string(a.synthetic) : a.data)
      .Add("init", a.init.empty() ? "random" : a.init)
      .Add("out", a.out)
      .Raw(FormatTrainConfig(config))
      .Add("rate_threshold_effective", config.RateThreshold());
  block.Print();

  const PatchSet patches =
      a.data.empty() ? SyntheticPatches(a.synthetic, config.patch_size, config.seed)
                     : LoadPatches(a.data, config.patch_size, config.seed, Warn);
  if (patches.patches.empty()) {
    throw InvalidArgument("train: no usable patches in " + a.data);
  }
  std::cerr << "# patches: " << patches.patches.size() << '\n';
  ModelParams init = a.init.empty() ? InitParams(config.seed, config.n) : LoadModel(a.init);
  const TrainResult result = Train(config, patches, std::move(init), [&](const TrainStep& s) {
    if (a.log_every && s.iteration % a.log_every == 0) {
      std::cerr << "stage " << s.stage << " iter " << s.iteration << " lr " << s.lr
                << " objective " << s.terms.total << " distortion "
                << s.terms.distortion << " rate " << s.terms.rate << " sum_q "
                << s.terms.level_sum << '\n';
    }
  });
  SaveModel(result.params, a.out);
  std::cout << "wrote " << a.out << " (" << result.history.size() << " iterations";
  for (std::size_t s = 0; s < result.stage_iterations.size(); ++s) {
    std::cout << (s ? ", " : "; stages ") << result.stage_iterations[s];
  }
  std::cout << ")\n";
  return 0;
}

// --- train-entropy -----------------------------------------------------------

struct TrainEntropyArgs {
  std::string model;
  std::string data;
  std::string out;
  bool freq_table = false;
  EntropyTrainConfig config;
};

void AddTrainEntropy(CLI::App& app, TrainEntropyArgs& a) {
  auto* cmd = app.add_subcommand("train-entropy", "Train the context model for entropy coding");
  cmd->add_option("--model", a.model, "Trained compressor model")->required();
  cmd->add_option("--data", a.data, "Directory of PPM images")->required();
  cmd->add_option("--out", a.out, "Output entropy model file")->required();
  cmd->add_flag("--freq-table", a.freq_table,
                "Fit adaptive frequency-table priors instead of the network");
  cmd->add_option("--steps", a.config.steps_per_stage, "Maximum steps per lr stage");
  cmd->add_option("--batch", a.config.batch_size, "Batch size");
  cmd->add_option("--seed", a.config.seed, "Random seed");
}

int RunTrainEntropy(TrainEntropyArgs a) {
  ConfigBlock block("train-entropy");
  block.Add("model", a.model).Add("data", a.data).Add("out", a.out)
      .Add("kind", a.freq_table ? "freq-table" : "net");
  if (!a.freq_table) {
    std::string ladder;
    for (double lr : a.config.lr_ladder) ladder += (ladder.empty() ? "" : ",") + std::to_string(lr);
    block.Add("lr_ladder", ladder).Add("steps_per_stage", a.config.steps_per_stage)
        .Add("batch_size", a.config.batch_size).Add("seed", a.config.seed)
        .Add("plateau_window", a.config.plateau_window)
        .Add("plateau_patience", a.config.plateau_patience);
  }
  block.Print();

  const ModelParams params = LoadModel(a.model);
  const Codec codec(params, nullptr);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.data)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ContextSample> codes, importance;
  for (const fs::path& f : files) {
    RawImage image;
    try {
      image = ReadPpm(f.string());
    } catch (const std::exception& e) {
      Warn("skipping " + f.string() + ": " + e.what());
      continue;
    }
    const CodeBundle b = codec.Compress(image, {false, false, !params.importance_enabled}).bundle;
    const auto c = HarvestCodeContexts(b.codes, b.mask);
    codes.insert(codes.end(), c.begin(), c.end());
    if (params.importance_enabled) {
      const auto i = HarvestImportanceContexts(b.imp_q, b.L);
      importance.insert(importance.end(), i.begin(), i.end());
    }
  }
  if (codes.empty()) throw InvalidArgument("train-entropy: no coded bits in " + a.data);
  std::cerr << "# samples: codes " << codes.size() << ", importance " << importance.size() << '\n';

  EntropyModel model;
  if (a.freq_table) {
    model = EntropyModel::Frequency(FitFrequencyTable(codes),
                                    importance.empty() ? FrequencyTable{}
                                                       : FitFrequencyTable(importance));
  } else {
    const ContextNet code_net = TrainContextNet(ContextNet::Random(a.config.seed), codes, a.config);
    const ContextNet imp_net =
        importance.empty() ? ContextNet{}
                           : TrainContextNet(ContextNet::Random(a.config.seed + 1), importance, a.config);
    std::cout << "code NLL " << MaskedNllBits(code_net, codes) << " bit/bit";
    if (!importance.empty()) std::cout << ", importance NLL " << MaskedNllBits(imp_net, importance) << " bit/bit";
    std::cout << '\n';
    model = EntropyModel::Net(code_net, imp_net);
  }
  SaveEntropyModel(model, a.out);
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

// --- compress / decompress ---------------------------------------------------

struct CodecArgs {
  std::string model;
  std::string entropy;
  bool freq_table = false;
  std::string in;
  std::string out;
  bool no_entropy = false;
  bool codes_only = false;
  bool imp_only = false;
};

void AddCodecOptions(CLI::App* cmd, CodecArgs& a) {
  cmd->add_option("--model", a.model, "Compressor model file")->required();
  auto* e = cmd->add_option("--entropy", a.entropy, "Entropy model file");
  cmd->add_flag("--freq-table", a.freq_table,
                "Adaptive frequency-table coding (CABAC-style baseline)")
      ->excludes(e);
  cmd->add_option("input", a.in, "Input file")->required();
  cmd->add_option("output", a.out, "Output file")->required();
}

void AddCompress(CLI::App& app, CodecArgs& a) {
  auto* cmd = app.add_subcommand("compress", "Compress a PPM image");
  AddCodecOptions(cmd, a);
  auto* none = cmd->add_flag("--no-entropy", a.no_entropy, "Store both payloads raw");
  auto* codes = cmd->add_flag("--codes-only", a.codes_only, "Entropy-code only the binary codes");
  auto* imp = cmd->add_flag("--imp-only", a.imp_only, "Entropy-code only the importance map");
  none->excludes(codes)->excludes(imp);
  codes->excludes(imp);
}

void AddDecompress(CLI::App& app, CodecArgs& a) {
  AddCodecOptions(app.add_subcommand("decompress", "Decompress a CWIC stream to PPM"), a);
}

std::optional<EntropyModel> LoadEntropy(const CodecArgs& a) {
  if (a.freq_table) return EntropyModel::Frequency();
  if (!a.entropy.empty()) return LoadEntropyModel(a.entropy);
  return std::nullopt;
}

std::string EntropyLabel(const CodecArgs& a) {
  return a.freq_table ? "freq-table" : a.entropy.empty() ? "none" : a.entropy;
}

int RunCompress(const CodecArgs& a) {
  CompressOptions opts;
  opts.entropy_codes = !a.no_entropy && !a.imp_only;
  opts.entropy_importance = !a.no_entropy && !a.codes_only;
  const ModelParams params = LoadModel(a.model);
  opts.importance_disabled = !params.importance_enabled;
  const std::optional<EntropyModel> entropy = LoadEntropy(a);
  if ((opts.entropy_codes || opts.entropy_importance) && !entropy) {
    throw InvalidArgument("compress: --entropy or --freq-table is required unless --no-entropy");
  }
  ConfigBlock("compress")
      .Add("model", a.model).Add("entropy", EntropyLabel(a)).Add("input", a.in)
      .Add("output", a.out).Add("n", params.n).Add("L", params.L)
      .Add("importance_map", params.importance_enabled ? "on" : "off")
      .Add("entropy_codes", opts.entropy_codes ? "on" : "off")
      .Add("entropy_importance", opts.entropy_importance ? "on" : "off")
      .Print();
  const RawImage image = ReadPpm(a.in);
  const CompressResult r = Compress(image, params, entropy ? &*entropy : nullptr, opts);
  const std::vector<std::uint8_t> bytes = r.stream.Serialize();
  WriteFileBytes(a.out, bytes);
  std::cout << "wrote " << a.out << ": " << bytes.size() << " bytes, "
            << r.stream.Bpp() << " bpp (payload " << r.stream.PayloadBpp()
            << " bpp; importance " << r.stream.imp_payload.size() << " B "
            << ((r.stream.header.flags & kFlagImportanceEntropyCoded) ? "coded" : "raw")
            << ", codes " << r.stream.code_payload.size() << " B "
            << ((r.stream.header.flags & kFlagCodesEntropyCoded) ? "coded" : "raw")
            << ")\n";
  return 0;
}

int RunDecompress(const CodecArgs& a) {
  const ModelParams params = LoadModel(a.model);
  const std::optional<EntropyModel> entropy = LoadEntropy(a);
  ConfigBlock("decompress")
      .Add("model", a.model).Add("entropy", EntropyLabel(a)).Add("input", a.in)
      .Add("output", a.out).Print();
  const std::vector<std::uint8_t> bytes = ReadFileBytes(a.in);
  const DecompressResult r = Decompress(bytes, params, entropy ? &*entropy : nullptr);
  WritePpm(r.image, a.out);
  std::cout << "wrote " << a.out << ": " << r.image.width << "x" << r.image.height << '\n';
  return 0;
}

// --- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string orig;
  std::string recon;
  std::string stream;
  std::string codec = "cwic";
};

void AddEval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Print one rate-distortion point");
  cmd->add_option("--orig", a.orig, "Original PPM")->required();
  cmd->add_option("--recon", a.recon, "Reconstructed PPM")->required();
  cmd->add_option("--stream", a.stream, "Compressed file (its size gives bpp)")->required();
  cmd->add_option("--codec", a.codec, "Codec label for the CSV row");
}

int RunEval(const EvalArgs& a) {
  ConfigBlock("eval").Add("orig", a.orig).Add("recon", a.recon)
      .Add("stream", a.stream).Add("codec", a.codec).Print();
  const RawImage orig = ReadPpm(a.orig);
  const RawImage recon = ReadPpm(a.recon);
  std::error_code ec;
  const auto size = fs::file_size(a.stream, ec);
  if (ec) throw IoError("cannot stat " + a.stream + ": " + ec.message());
  const RDPoint p = Evaluate(orig, recon, static_cast<std::size_t>(size),
                             fs::path(a.orig).filename().string(), a.codec);
  std::cout << kRdCsvHeader << '\n' << FormatRdRow(p) << '\n';
  return 0;
}

// --- curves -------------------------------------------------------------------

struct CurvesArgs {
  std::string images;
  std::string models;
  std::string labels;
  std::string out;
  std::string baseline;
  CodecArgs codec;
};

void AddCurves(CLI::App& app, CurvesArgs& a) {
  auto* cmd = app.add_subcommand("curves", "Rate-distortion rows for a model set");
  cmd->add_option("--images", a.images, "Directory of PPM images")->required();
  cmd->add_option("--models", a.models, "Comma-separated model files")->required();
  cmd->add_option("--labels", a.labels, "Comma-separated codec labels (default: file stems)");
  cmd->add_option("--out", a.out, "Output CSV")->required();
  cmd->add_option("--baseline-csv", a.baseline, "External codec rows to merge");
  auto* e = cmd->add_option("--entropy", a.codec.entropy, "Entropy model file");
  cmd->add_flag("--freq-table", a.codec.freq_table, "Adaptive frequency-table coding")->excludes(e);
  cmd->add_flag("--no-entropy", a.codec.no_entropy, "Store payloads raw");
}

int RunCurves(const CurvesArgs& a) {
  const std::vector<std::string> files = SplitList(a.models);
  std::vector<std::string> labels = SplitList(a.labels);
  if (files.empty()) throw InvalidArgument("curves: --models is empty");
  if (!labels.empty() && labels.size() != files.size()) {
    throw InvalidArgument("curves: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(files.size()) + " models");
  }
  if (labels.empty()) {
    for (const std::string& f : files) labels.push_back(fs::path(f).stem().string());
  }
  const std::optional<EntropyModel> entropy = LoadEntropy(a.codec);
  if (!a.codec.no_entropy && !entropy) {
    throw InvalidArgument("curves: --entropy or --freq-table is required unless --no-entropy");
  }
  const std::size_t threads = ThreadBudget();
  ConfigBlock("curves").Add("images", a.images).Add("models", a.models)
      .Add("labels", [&] {
        std::string s;
        for (const auto& l : labels) s += (s.empty() ? "" : ",") + l;
        return s;
      }())
      .Add("entropy", a.codec.no_entropy ? "none" : EntropyLabel(a.codec))
      .Add("baseline_csv", a.baseline.empty() ? "none" : a.baseline)
      .Add("out", a.out).Add("threads", threads).Print();

  std::vector<ModelParams> params;
  for (const std::string& f : files) params.push_back(LoadModel(f));
  std::vector<CurveModel> models;
  for (std::size_t i = 0; i < files.size(); ++i) models.push_back({labels[i], &params[i]});
  CurveOptions opts;
  opts.entropy = entropy ? &*entropy : nullptr;
  opts.compress.entropy_codes = opts.compress.entropy_importance = !a.codec.no_entropy;
  opts.threads = threads;
  std::vector<RDPoint> rows = RdCurve(a.images, models, opts, Warn);
  if (!a.baseline.empty()) {
    const std::vector<std::uint8_t> raw = ReadFileBytes(a.baseline);
    for (RDPoint& p : ParseRdCsv(std::string(raw.begin(), raw.end()))) {
      if (p.image != "mean") rows.push_back(std::move(p));
    }
  }
  std::vector<RDPoint> all = rows;
  for (RDPoint& m : CodecMeans(rows)) all.push_back(std::move(m));
  const std::string csv = FormatRdCsv(all);
  WriteFileBytes(a.out, std::vector<std::uint8_t>(csv.begin(), csv.end()));
  std::cout << "wrote " << a.out << ": " << rows.size() << " rows\n";
  return 0;
}

int Main(int argc, char** argv) {
  CLI::App app{"cwic: content-weighted learned image compression"};
  app.require_subcommand(1);
  TrainArgs train;
  TrainEntropyArgs train_entropy;
  CodecArgs compress, decompress;
  EvalArgs eval;
  CurvesArgs curves;
  AddTrain(app, train);
  AddTrainEntropy(app, train_entropy);
  AddCompress(app, compress);
  AddDecompress(app, decompress);
  AddEval(app, eval);
  AddCurves(app, curves);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "cwic: usage error: " << e.what() << '\n';
    return kExitUsage;
  }
  try {
    if (const auto* c = app.get_subcommand("train"); c->parsed()) return RunTrain(*c, train);
    if (app.got_subcommand("train-entropy")) return RunTrainEntropy(train_entropy);
    if (app.got_subcommand("compress")) return RunCompress(compress);
    if (app.got_subcommand("decompress")) return RunDecompress(decompress);
    if (app.got_subcommand("eval")) return RunEval(eval);
    if (app.got_subcommand("curves")) return RunCurves(curves);
  } catch (const InvalidArgument& e) {
    std::cerr << "cwic: error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "cwic: I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "cwic: format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "cwic: I/O error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace
}  // namespace cwic

int main(int argc, char** argv) { return cwic::Main(argc, argv); }
