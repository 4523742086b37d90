#include "mnm/cli/cli.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "mnm/common/error.h"
#include "mnm/synthdata/generator.h"
#include "mnm/synthdata/io.h"

namespace mnm::cli {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

nlohmann::json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void WriteJsonFile(const fs::path& path, const nlohmann::json& j) {
  WriteText(path, j.dump(2) + "\n");
}

void WriteJsonFile(const fs::path& path, const ordered_json& j) {
  WriteText(path, j.dump(2) + "\n");
}

// A generated data root holds train/val/test; a single split directory is
// accepted too.
fs::path ResolveSplit(const fs::path& data, const std::string& split) {
  if (fs::exists(data / split / "manifest.json")) return data / split;
  if (fs::exists(data / "manifest.json")) return data;
  throw IoError("no dataset found in " + data.string() + " (looked for " + split +
                "/manifest.json and manifest.json)");
}

std::string Fixed(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string Optional(const std::optional<double>& v) { return v ? Fixed(*v) : ""; }

// Model and train configs after files and --set overrides. Keys starting
// with "model." go to the model config.
struct Configs {
  ordered_json model = model::ToJson(model::ModelConfig{});
  ordered_json train = train::ToJson(train::TrainConfig{});
};

Configs LoadConfigs(const std::string& model_path, const std::string& train_path,
                    const std::vector<std::string>& overrides) {
  Configs c;
  if (!model_path.empty()) {
    c.model = model::ToJson(model::ModelConfigFromJson(ReadJsonFile(model_path)));
  }
  if (!train_path.empty()) {
    c.train = train::ToJson(train::TrainConfigFromJson(ReadJsonFile(train_path)));
  }
  for (const std::string& o : overrides) {
    if (o.rfind("model.", 0) == 0) {
      train::ApplyOverride(c.model, o.substr(6));
    } else {
      train::ApplyOverride(c.train, o);
    }
  }
  // Round trip so that bad override values surface here.
  c.model = model::ToJson(model::ModelConfigFromJson(c.model));
  c.train = train::ToJson(train::TrainConfigFromJson(c.train));
  return c;
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

metrics::EvalReport EvaluateInto(const model::Model& model, const train::TrainConfig& config,
                                 const synth::Dataset& data, bool include_negatives,
                                 const fs::path& dir, const std::string& suffix) {
  if (data.breasts.empty()) throw ConfigError("evaluation split is empty");
  const metrics::EvalInput input = train::Predict(model, data, train::ForwardOptionsFor(config));
  metrics::EvalOptions options;
  options.include_negatives = include_negatives;
  options.classification = config.mil;
  const metrics::EvalReport report = metrics::Evaluate(input, options);
  WriteJsonFile(dir / ("detections" + suffix + ".json"), metrics::DetectionsToJson(input.detections));
  WriteJsonFile(dir / ("report" + suffix + ".json"), metrics::ToJson(report));
  metrics::WriteFrocCsv(dir / ("froc" + suffix + ".csv"), report.froc);
  return report;
}

// Trains to completion (or `stop_after`) and writes checkpoint + loss log.
void TrainInto(train::Trainer& trainer, const fs::path& dir, std::size_t stop_after,
               std::ostream* progress) {
  std::vector<train::IterationLog> log;
  const std::size_t end = std::min(stop_after, trainer.config().iterations);
  while (trainer.iteration() < end) {
    log.push_back(trainer.Step());
    const train::IterationLog& l = log.back();
    if (progress != nullptr && (l.iteration + 1) % 100 == 0) {
      *progress << "iteration " << l.iteration + 1 << " loss " << l.mean.total << "\n";
    }
  }
  trainer.SaveCheckpoint(dir / "checkpoint");
  train::WriteLossCsv(dir / "loss.csv", log);
}

int CmdGenerate(const std::string& config_path, const fs::path& out_dir,
                std::optional<std::uint64_t> seed, bool force,
                const std::vector<std::string>& args, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  synth::DatasetConfig config;
  if (!config_path.empty()) config = synth::DatasetConfigFromJson(ReadJsonFile(config_path));
  if (seed) config.seed = *seed;
  config.Validate();
  PrepareRunDir(out_dir, force);
  const synth::Splits splits = synth::GenerateSplits(config, ThreadBudget());
  synth::SaveDataset(splits.train, out_dir / "train");
  synth::SaveDataset(splits.val, out_dir / "val");
  synth::SaveDataset(splits.test, out_dir / "test");
  WriteManifest(out_dir, {"generate", args, synth::ToJson(config), config.seed,
                          {"train", "val", "test"}, Seconds(start)});
  out << "generated " << splits.train.breasts.size() << "/" << splits.val.breasts.size() << "/"
      << splits.test.breasts.size() << " breasts in " << out_dir.string() << "\n";
  return kOk;
}

int CmdTrain(const fs::path& data_dir, const Configs& configs, const fs::path& out_dir,
             const std::string& from, std::size_t stop_after, bool force,
             const std::vector<std::string>& args, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const synth::Dataset data = synth::LoadDataset(ResolveSplit(data_dir, "train"));
  std::unique_ptr<train::Trainer> trainer;
  if (!from.empty()) {
    trainer = train::Trainer::Resume(from, data);
  } else {
    trainer = std::make_unique<train::Trainer>(model::ModelConfigFromJson(configs.model),
                                               train::TrainConfigFromJson(configs.train), data);
  }
  PrepareRunDir(out_dir, force);
  TrainInto(*trainer, out_dir, stop_after, &out);
  ordered_json snapshot;
  snapshot["model"] = model::ToJson(trainer->model().config());
  snapshot["train"] = train::ToJson(trainer->config());
  if (!from.empty()) snapshot["resumed_from"] = from;
  WriteManifest(out_dir, {"train", args, snapshot, trainer->config().seed,
                          {"checkpoint", "loss.csv"}, Seconds(start)});
  out << "trained to iteration " << trainer->iteration() << "\n";
  return kOk;
}

int CmdEval(const fs::path& data_dir, const fs::path& checkpoint, const std::string& model_path,
            const fs::path& out_dir, bool include_negatives, bool force,
            const std::vector<std::string>& args, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  std::optional<model::ModelConfig> expected;
  if (!model_path.empty()) expected = model::ModelConfigFromJson(ReadJsonFile(model_path));
  const train::LoadedCheckpoint loaded =
      train::LoadCheckpoint(checkpoint, expected ? &*expected : nullptr);
  const synth::Dataset data = synth::LoadDataset(ResolveSplit(data_dir, "test"));
  if (data.breasts.empty()) throw ConfigError("evaluation split is empty");
  PrepareRunDir(out_dir, force);
  const metrics::EvalReport report =
      EvaluateInto(*loaded.model, loaded.train_config, data, include_negatives, out_dir, "");
  ordered_json snapshot;
  snapshot["checkpoint"] = checkpoint.string();
  snapshot["include_negatives"] = include_negatives;
  snapshot["model"] = model::ToJson(loaded.model_config);
  snapshot["train"] = train::ToJson(loaded.train_config);
  WriteManifest(out_dir, {"eval", args, snapshot, loaded.train_config.seed,
                          {"detections.json", "report.json", "froc.csv"}, Seconds(start)});
  out << metrics::ToJson(report).dump() << "\n";
  return kOk;
}

int CmdAblate(const fs::path& data_dir, const Configs& configs, const fs::path& out_dir,
              bool force, const std::vector<std::string>& args, std::ostream& out,
              std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  const synth::Dataset train_set = synth::LoadDataset(ResolveSplit(data_dir, "train"));
  const synth::Dataset test_set = synth::LoadDataset(ResolveSplit(data_dir, "test"));
  const model::ModelConfig model_config = model::ModelConfigFromJson(configs.model);
  const train::TrainConfig base = train::TrainConfigFromJson(configs.train);
  PrepareRunDir(out_dir, force);

  const std::vector<AblationConfig> grid = AblationGrid();
  std::vector<std::optional<AblationRow>> rows(grid.size());
  std::vector<std::string> failures(grid.size());
  std::mutex io_mutex;
  auto run_one = [&](std::size_t i) {
    const AblationConfig& a = grid[i];
    try {
      train::TrainConfig tc = base;
      tc.dual_heads = a.dual_heads;
      tc.multi_view = a.multi_view;
      tc.mil = a.mil;
      const fs::path dir = out_dir / a.name;
      fs::create_directories(dir);
      train::Trainer trainer(model_config, tc, train_set);
      TrainInto(trainer, dir, tc.iterations, nullptr);
      const metrics::EvalReport r = EvaluateInto(trainer.model(), tc, test_set, true, dir, "");
      rows[i] = AblationRow{a.name, r.ap_mb, r.ap_all, r.delta, r.recall_at[0],
                            a.mil ? r.breast_auc : std::nullopt};
      std::lock_guard<std::mutex> lock(io_mutex);
      out << a.name << " done\n";
    } catch (const std::exception& e) {
      failures[i] = e.what();
      std::lock_guard<std::mutex> lock(io_mutex);
      err << a.name << " failed: " << e.what() << "\n";
    }
  };

  // Each configuration is independent; workers pull the next index.
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next == grid.size()) return;
        i = next++;
      }
      run_one(i);
    }
  };
  const std::size_t workers = std::min(ThreadBudget(), grid.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  std::vector<AblationRow> done;
  std::vector<std::string> artifacts{"ablation.csv"};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (rows[i]) {
      done.push_back(*rows[i]);
      artifacts.push_back(grid[i].name);
    }
  }
  WriteAblationCsv(out_dir / "ablation.csv", done);
  ordered_json snapshot;
  snapshot["model"] = model::ToJson(model_config);
  snapshot["train"] = train::ToJson(base);
  ordered_json failed = ordered_json::object();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!failures[i].empty()) failed[grid[i].name] = failures[i];
  }
  snapshot["failures"] = failed;
  WriteManifest(out_dir, {"ablate", args, snapshot, base.seed, artifacts, Seconds(start)});
  if (done.size() != grid.size()) {
    err << grid.size() - done.size() << " configuration(s) failed; partial results kept\n";
    return kFailure;
  }
  out << "wrote " << (out_dir / "ablation.csv").string() << "\n";
  return kOk;
}

int CmdPlot(const std::vector<std::string>& reports, std::vector<std::string> labels,
            const fs::path& out_file, double max_fp, std::ostream& out) {
  if (!labels.empty() && labels.size() != reports.size()) {
    throw ConfigError("--label count must match --report count");
  }
  std::vector<PlotSeries> series;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string label = labels.empty() ? fs::path(reports[i]).parent_path().filename().string()
                                             : labels[i];
    series.push_back({label.empty() ? reports[i] : label, metrics::ReadFrocCsv(reports[i])});
  }
  WriteText(out_file, FrocSvg(series, max_fp));
  out << "wrote " << out_file.string() << "\n";
  return kOk;
}

std::string Escape(const std::string& s) {
  std::string r;
  for (char c : s) {
    switch (c) {
      case '&': r += "&amp;"; break;
      case '<': r += "&lt;"; break;
      case '>': r += "&gt;"; break;
      case '"': r += "&quot;"; break;
      default: r += c;
    }
  }
  return r;
}

}  // namespace

int ExitCodeFor(const std::exception& error) {
  const auto* e = dynamic_cast<const Error*>(&error);
  if (e == nullptr) return kFailure;
  const std::string& kind = e->kind();
  if (kind == "config" || kind == "format" || kind == "shape") return kUsage;
  if (kind == "io") return kIo;
  if (kind == "numeric") return kNumeric;
  if (kind == "mismatch") return kMismatch;
  return kFailure;
}

ordered_json ToJson(const RunManifest& m) {
  ordered_json j;
  j["command"] = m.command;
  j["arguments"] = m.arguments;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["artifacts"] = m.artifacts;
  j["wall_seconds"] = m.wall_seconds;
  return j;
}

void WriteManifest(const fs::path& dir, const RunManifest& manifest) {
  WriteJsonFile(dir / kManifestName, ToJson(manifest));
}

RunManifest ReadManifest(const fs::path& dir) {
  const nlohmann::json j = ReadJsonFile(dir / kManifestName);
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.arguments = j.at("arguments").get<std::vector<std::string>>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    m.wall_seconds = j.at("wall_seconds").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / kManifestName).string() + ": " + e.what());
  }
}

void PrepareRunDir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw ConfigError(dir.string() + " exists and is not a directory");
  }
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ConfigError(dir.string() + " is not empty; pass --force to overwrite");
    for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path(), ec);
    if (ec) throw IoError("cannot clear " + dir.string() + ": " + ec.message());
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<AblationConfig> AblationGrid() {
  return {{"baseline", false, false, false},
          {"dual", true, false, false},
          {"dual_mv", true, true, false},
          {"dual_mil", true, false, true},
          {"full", true, true, true}};
}

void WriteAblationCsv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << "config,ap_mb,ap,delta,r_at_0.1,breast_auc\n";
  for (const AblationRow& r : rows) {
    s << r.config << "," << Optional(r.ap_mb) << "," << Optional(r.ap) << ","
      << Optional(r.delta) << "," << Fixed(r.recall_at_01) << "," << Optional(r.breast_auc)
      << "\n";
  }
  WriteText(path, s.str());
}

std::string FrocSvg(const std::vector<PlotSeries>& series, double max_fp) {
  if (!(max_fp > 0)) throw ConfigError("max_fp must be positive");
  constexpr double kW = 640, kH = 480, kLeft = 60, kRight = 170, kTop = 20, kBottom = 50;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  auto px = [&](double fp) { return kLeft + pw * std::min(fp, max_fp) / max_fp; };
  auto py = [&](double r) { return kTop + ph * (1 - r); };

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    std::ostringstream xt, yt;
    xt << f * max_fp;
    yt << f;
    s << "<text x=\"" << px(f * max_fp) << "\" y=\"" << kTop + ph + 16
      << "\" text-anchor=\"middle\">" << xt.str() << "</text>\n";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(f) + 4 << "\" text-anchor=\"end\">"
      << yt.str() << "</text>\n";
  }
  s << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10
    << "\" text-anchor=\"middle\">false positives per image</text>\n";
  s << "<text transform=\"translate(16," << kTop + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">recall</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    s << "<polyline class=\"curve\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\" points=\"";
    // Step curve clipped at max_fp.
    double last_r = 0;
    bool first = true;
    for (const metrics::FrocPoint& p : series[k].curve) {
      if (p.fp_per_image > max_fp) break;
      if (!first) s << " " << px(p.fp_per_image) << "," << py(last_r);
      s << (first ? "" : " ") << px(p.fp_per_image) << "," << py(p.recall);
      last_r = p.recall;
      first = false;
    }
    s << (first ? "" : " ") << px(max_fp) << "," << py(last_r) << "\"/>\n";
    const double ly = kTop + 10 + 18 * static_cast<double>(k);
    s << "<g class=\"legend\"><line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\""
      << kW - kRight + 30 << "\" y2=\"" << ly << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"/><text x=\"" << kW - kRight + 36 << "\" y=\"" << ly + 4 << "\">"
      << Escape(series[k].label) << "</text></g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::size_t ThreadBudget() {
  const char* env = std::getenv("MNM_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) return 1;
  return static_cast<std::size_t>(v);
}

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-view multi-instance sparse lesion detector"};
  app.require_subcommand(1);

  std::string config_path, model_path, train_path, from, checkpoint, out_dir, data_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides, reports, labels;
  bool force = false, include_negatives = true;
  std::size_t stop_after = std::numeric_limits<std::size_t>::max();
  double max_fp = 1.0;

  CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--config", config_path, "Dataset config JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Overrides the config seed");
  gen->add_flag("--force", force, "Overwrite a non-empty output directory");

  CLI::App* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--data", data_dir, "Dataset root or split directory")->required();
  tr->add_option("--model-config", model_path, "Model config JSON");
  tr->add_option("--train-config", train_path, "Train config JSON");
  tr->add_option("--set", overrides, "key=value override (model.key for the model)");
  tr->add_option("--from", from, "Resume from a checkpoint directory");
  tr->add_option("--stop-after", stop_after, "Stop (and checkpoint) after this many iterations");
  tr->add_option("--out", out_dir, "Run directory")->required();
  tr->add_flag("--force", force, "Overwrite a non-empty run directory");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--data", data_dir, "Dataset root or split directory")->required();
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--model-config", model_path, "Expected model config JSON");
  ev->add_option("--include-negatives", include_negatives,
                 "Count negative images in FROC and recall")->default_val(true);
  ev->add_option("--out", out_dir, "Output directory")->required();
  ev->add_flag("--force", force, "Overwrite a non-empty output directory");

  CLI::App* ab = app.add_subcommand("ablate", "Train and evaluate the component grid");
  ab->add_option("--data", data_dir, "Dataset root")->required();
  ab->add_option("--model-config", model_path, "Model config JSON");
  ab->add_option("--train-config", train_path, "Train config JSON");
  ab->add_option("--set", overrides, "key=value override (model.key for the model)");
  ab->add_option("--out", out_dir, "Output directory")->required();
  ab->add_flag("--force", force, "Overwrite a non-empty output directory");

  CLI::App* pl = app.add_subcommand("plot", "Overlay FROC curves as SVG");
  pl->add_option("--report", reports, "FROC CSV files")->required();
  pl->add_option("--label", labels, "Legend labels, one per report");
  pl->add_option("--max-fp", max_fp, "Upper end of the FP/image axis")->default_val(1.0);
  pl->add_option("--out", out_dir, "SVG file")->required();

  std::vector<std::string> argv_storage{"mnm"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return CmdGenerate(config_path, out_dir, seed, force, args, out);
    if (pl->parsed()) return CmdPlot(reports, labels, out_dir, max_fp, out);
    if (ev->parsed()) {
      return CmdEval(data_dir, checkpoint, model_path, out_dir, include_negatives, force, args,
                     out);
    }
    const Configs configs = LoadConfigs(model_path, train_path, overrides);
    if (tr->parsed()) {
      return CmdTrain(data_dir, configs, out_dir, from, stop_after, force, args, out);
    }
    return CmdAblate(data_dir, configs, out_dir, force, args, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return ExitCodeFor(e);
  }
}

}  // namespace mnm::cli
