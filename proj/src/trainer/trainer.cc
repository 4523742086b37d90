#include "mnm/trainer/trainer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <type_traits>

#include "mnm/common/error.h"
#include "mnm/numerics/ops.h"
#include "mnm/synthdata/generator.h"

namespace mnm::train {
namespace {

template <typename Fn>
void VisitFields(TrainConfig& c, Fn&& fn) {
  fn("iterations", c.iterations);
  fn("base_lr", c.base_lr);
  fn("weight_decay", c.weight_decay);
  fn("batch_breasts", c.batch_breasts);
  fn("lr_drop_fractions", c.lr_drop_fractions);
  fn("seed", c.seed);
  fn("dual_heads", c.dual_heads);
  fn("multi_view", c.multi_view);
  fn("mil", c.mil);
  fn("grad_clip", c.grad_clip);
  fn("flip_augment", c.flip_augment);
  fn("rematch_per_stage", c.rematch_per_stage);
  fn("malignancy_matched_only", c.malignancy_matched_only);
  fn("mil_deep_supervision", c.mil_deep_supervision);
  fn("max_consecutive_skips", c.max_consecutive_skips);
}

template <typename T>
void ReadField(const nlohmann::json& v, const std::string& key, T& out) {
  auto fail = [&](const std::string& what) {
    throw ConfigError("train config: " + key + " " + what + ", got " + v.dump());
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) fail("must be a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) fail("must be a number");
    out = v.get<double>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<std::int64_t>() < 0)) {
      fail("must be a non-negative integer");
    }
    out = v.get<T>();
  } else {
    if (!v.is_array()) fail("must be an array of numbers");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number()) fail("must be an array of numbers");
      out.push_back(x.get<double>());
    }
  }
}

std::vector<unsigned char> ReadBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void WriteBytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

nlohmann::json ReadJson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void Accumulate(loss::LossBreakdown& sum, const loss::LossBreakdown& x) {
  sum.malignant += x.malignant;
  sum.objectness += x.objectness;
  sum.giou += x.giou;
  sum.l1 += x.l1;
  sum.image += x.image;
  sum.breast += x.breast;
  sum.total += x.total;
}

loss::LossBreakdown Scaled(loss::LossBreakdown x, double f) {
  for (double* v : {&x.malignant, &x.objectness, &x.giou, &x.l1, &x.image, &x.breast, &x.total}) {
    *v *= f;
  }
  return x;
}

synth::Image FlipImage(const synth::Image& img) {
  synth::Image out = img;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      out.pixels[y * img.width + x] = img.pixels[y * img.width + (img.width - 1 - x)];
    }
  }
  return out;
}

}  // namespace

void TrainConfig::Validate() const {
  if (iterations == 0) throw ConfigError("train config: iterations must be positive");
  if (batch_breasts == 0) throw ConfigError("train config: batch_breasts must be positive");
  if (!(base_lr > 0) || !std::isfinite(base_lr)) {
    throw ConfigError("train config: base_lr must be positive");
  }
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) {
    throw ConfigError("train config: weight_decay must be >= 0");
  }
  if (!(grad_clip >= 0)) throw ConfigError("train config: grad_clip must be >= 0");
  double prev = 0;
  for (double f : lr_drop_fractions) {
    if (!(f > prev && f < 1)) {
      throw ConfigError("train config: lr_drop_fractions must be increasing in (0, 1)");
    }
    prev = f;
  }
  if (max_consecutive_skips == 0) {
    throw ConfigError("train config: max_consecutive_skips must be positive");
  }
}

nlohmann::ordered_json ToJson(const TrainConfig& config) {
  nlohmann::ordered_json j;
  TrainConfig copy = config;
  VisitFields(copy, [&](const char* key, auto& value) { j[key] = value; });
  return j;
}

TrainConfig TrainConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  std::map<std::string, bool> known;
  VisitFields(c, [&](const char* key, auto&) { known[key] = true; });
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("train config: unknown key " + key);
  }
  VisitFields(c, [&](const char* key, auto& value) {
    if (j.contains(key)) ReadField(j.at(key), key, value);
  });
  c.Validate();
  return c;
}

void ApplyOverride(nlohmann::ordered_json& config_json, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  if (!config_json.contains(key)) throw ConfigError("unknown override key " + key);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  config_json[key] = value;
}

loss::LossConfig LossConfigFor(const TrainConfig& config) {
  loss::LossConfig l;
  l.dual_heads = config.dual_heads;
  l.mil = config.mil;
  l.rematch_per_stage = config.rematch_per_stage;
  l.malignancy_matched_only = config.malignancy_matched_only;
  l.mil_deep_supervision = config.mil_deep_supervision;
  return l;
}

model::ForwardOptions ForwardOptionsFor(const TrainConfig& config) {
  model::ForwardOptions o;
  o.multi_view = config.multi_view;
  o.dual_heads = config.dual_heads;
  o.all_stage_scores = config.mil && config.mil_deep_supervision;
  return o;
}

double LrAt(std::size_t iteration, const TrainConfig& config) {
  double lr = config.base_lr;
  const double at = static_cast<double>(iteration);
  for (double f : config.lr_drop_fractions) {
    if (at >= f * static_cast<double>(config.iterations)) lr *= 0.1;
  }
  return lr;
}

AdamW::AdamW(const ParamStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.at(i).numel(), 0.0);
    v_.emplace_back(params.at(i).numel(), 0.0);
  }
}

void AdamW::Step(ParamStore& params, double lr, double weight_decay) {
  if (params.size() != m_.size()) throw ShapeError("optimizer was built for another store");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1 - std::pow(kBeta1, t), c2 = 1 - std::pow(kBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    auto values = p.mutable_data();
    const auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = kBeta1 * m[k] + (1 - kBeta1) * g;
      v[k] = kBeta2 * v[k] + (1 - kBeta2) * g * g;
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + kEpsilon);
      values[k] -= lr * (update + weight_decay * values[k]);
    }
  }
}

std::vector<unsigned char> AdamW::Serialize() const {
  std::vector<unsigned char> out;
  for (const auto* moments : {&m_, &v_}) {
    for (const auto& row : *moments) {
      for (double x : row) AppendLittleEndian(out, x);
    }
  }
  return out;
}

void AdamW::Deserialize(const std::vector<unsigned char>& blob, std::size_t steps) {
  std::size_t total = 0;
  for (const auto& row : m_) total += row.size();
  if (blob.size() != total * 2 * 8) {
    throw FormatError("optimizer state has " + std::to_string(blob.size()) + " bytes, expected " +
                      std::to_string(total * 16));
  }
  const unsigned char* p = blob.data();
  for (auto* moments : {&m_, &v_}) {
    for (auto& row : *moments) {
      for (double& x : row) {
        x = ReadLittleEndian(p);
        p += 8;
      }
    }
  }
  steps_ = steps;
}

double GradNorm(const ParamStore& params) {
  double sq = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double g : params.at(i).grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void ScaleGrads(ParamStore& params, double factor) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.at(i).grad().empty()) continue;
    for (double& g : params.at(i).mutable_grad()) g *= factor;
  }
}

SampleResult SampleBatch(const synth::Dataset& dataset, std::size_t batch,
                         std::mt19937_64& rng, bool annotated_only) {
  std::vector<std::size_t> annotated, unannotated;
  for (std::size_t i = 0; i < dataset.breasts.size(); ++i) {
    (dataset.breasts[i].annotated ? annotated : unannotated).push_back(i);
  }
  std::size_t want_annotated = annotated_only ? batch : batch - batch / 2;
  std::size_t want_unannotated = batch - want_annotated;
  SampleResult result;
  if (annotated.empty() && unannotated.empty()) throw ConfigError("sampler: empty dataset");
  if (annotated.empty()) {
    if (annotated_only) throw ConfigError("sampler: no annotated breasts");
    want_unannotated = batch;
    want_annotated = 0;
    result.fell_back = true;
  } else if (unannotated.empty() && want_unannotated > 0) {
    want_annotated = batch;
    want_unannotated = 0;
    result.fell_back = true;
  }
  auto draw = [&](const std::vector<std::size_t>& pool, std::size_t count) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t k = 0; k < count; ++k) result.indices.push_back(pool[pick(rng)]);
  };
  draw(annotated, want_annotated);
  if (want_unannotated > 0) draw(unannotated, want_unannotated);
  return result;
}

synth::BreastSample FlipBreast(const synth::BreastSample& breast) {
  synth::BreastSample out = breast;
  out.image_cc = FlipImage(breast.image_cc);
  out.image_mlo = FlipImage(breast.image_mlo);
  for (synth::Finding& f : out.findings) {
    f.box_cc = FlipHorizontal(f.box_cc, static_cast<double>(breast.image_cc.width));
    f.box_mlo = FlipHorizontal(f.box_mlo, static_cast<double>(breast.image_mlo.width));
  }
  return out;
}

Trainer::Trainer(const model::ModelConfig& model_config, const TrainConfig& train_config,
                 const synth::Dataset& train_set)
    : Trainer(std::make_unique<model::Model>(model_config), train_config, train_set) {}

Trainer::Trainer(std::unique_ptr<model::Model> model, const TrainConfig& config,
                 const synth::Dataset& train_set)
    : model_(std::move(model)), config_(config), data_(train_set), optimizer_(model_->params()) {
  config_.Validate();
  if (data_.breasts.empty()) throw ConfigError("training set is empty");
  const bool any_annotated = std::any_of(data_.breasts.begin(), data_.breasts.end(),
                                         [](const auto& b) { return b.annotated; });
  if (!config_.mil && !any_annotated) {
    throw ConfigError("training without MIL needs annotated breasts");
  }
  for (const auto& b : data_.breasts) {
    if (b.image_cc.height % model::kFeatureStride != 0 ||
        b.image_cc.width % model::kFeatureStride != 0) {
      throw ConfigError("image size must be a multiple of " +
                        std::to_string(model::kFeatureStride));
    }
    if (b.findings.size() > model_->config().num_proposals) {
      throw ConfigError("breast " + b.breast_id + " has more findings than proposals");
    }
  }
}

IterationLog Trainer::Step() {
  const std::uint64_t stream = synth::DeriveSeed(config_.seed, iteration_);
  std::mt19937_64 sample_rng(synth::DeriveSeed(stream, 0));
  std::mt19937_64 dropout_rng(synth::DeriveSeed(stream, 1));
  std::mt19937_64 flip_rng(synth::DeriveSeed(stream, 2));

  const SampleResult batch = SampleBatch(data_, config_.batch_breasts, sample_rng, !config_.mil);
  if (batch.fell_back && iteration_ == 0) {
    std::cerr << "warning: one sampling pool is empty; drawing the whole batch from the other\n";
  }
  const loss::LossConfig loss_config = LossConfigFor(config_);
  model::ForwardOptions options = ForwardOptionsFor(config_);
  options.dropout_rng = model_->config().dropout > 0 ? &dropout_rng : nullptr;
  const double inv_batch = 1.0 / static_cast<double>(batch.indices.size());

  ParamStore& params = model_->params();
  params.ZeroGrad();
  loss::LossBreakdown sum;
  bool matched = true;
  for (std::size_t idx : batch.indices) {
    const synth::BreastSample* breast = &data_.breasts[idx];
    synth::BreastSample flipped;
    if (config_.flip_augment && std::bernoulli_distribution(0.5)(flip_rng)) {
      flipped = FlipBreast(*breast);
      breast = &flipped;
    }
    const model::BreastForward f = model_->Forward(breast->image_cc, breast->image_mlo, options);
    try {
      const loss::BreastLoss l = loss::TotalLoss(f, *breast, loss_config);
      Accumulate(sum, l.breakdown);
      if (l.total.requires_grad()) Backward(ops::Scale(l.total, inv_batch));
    } catch (const NumericError&) {
      // NaN predictions make the matching cost undefined.
      matched = false;
      break;
    }
  }

  IterationLog log;
  log.iteration = iteration_;
  log.mean = Scaled(sum, inv_batch);
  log.lr = LrAt(iteration_, config_);
  log.grad_norm = GradNorm(params);
  if (!matched || !std::isfinite(log.mean.total) || !std::isfinite(log.grad_norm)) {
    log.skipped = true;
    ++consecutive_skips_;
    std::cerr << "warning: non-finite loss or gradient at iteration " << iteration_
              << "; step skipped\n";
    if (consecutive_skips_ >= config_.max_consecutive_skips) {
      throw NumericError("non-finite loss for " + std::to_string(consecutive_skips_) +
                         " consecutive iterations");
    }
  } else {
    consecutive_skips_ = 0;
    if (config_.grad_clip > 0 && log.grad_norm > config_.grad_clip) {
      ScaleGrads(params, config_.grad_clip / log.grad_norm);
    }
    optimizer_.Step(params, log.lr, config_.weight_decay);
  }
  params.ZeroGrad();
  ++iteration_;
  return log;
}

void Trainer::Run(const std::function<void(const IterationLog&)>& on_iteration) {
  while (iteration_ < config_.iterations) {
    const IterationLog log = Step();
    if (on_iteration) on_iteration(log);
  }
}

void Trainer::SaveCheckpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  model_->params().Save(dir / "params.bin", dir / "params.json");
  WriteBytes(dir / "optimizer.bin", optimizer_.Serialize());
  nlohmann::ordered_json state;
  state["format"] = kCheckpointFormat;
  state["iteration"] = iteration_;
  state["optimizer_steps"] = optimizer_.steps();
  state["consecutive_skips"] = consecutive_skips_;
  state["model_config"] = model::ToJson(model_->config());
  state["train_config"] = ToJson(config_);
  std::ofstream out(dir / "state.json");
  if (!out) throw IoError("cannot write " + (dir / "state.json").string());
  out << state.dump(2) << '\n';
}

LoadedCheckpoint LoadCheckpoint(const std::filesystem::path& dir,
                                const model::ModelConfig* expected) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no checkpoint directory " + dir.string());
  const nlohmann::json state = ReadJson(dir / "state.json");
  LoadedCheckpoint out;
  try {
    if (state.at("format") != kCheckpointFormat) {
      throw FormatError("checkpoint format " + state.at("format").dump() + ", expected " +
                        kCheckpointFormat);
    }
    out.iteration = state.at("iteration").get<std::size_t>();
    out.model_config = model::ModelConfigFromJson(state.at("model_config"));
    out.train_config = TrainConfigFromJson(state.at("train_config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "state.json").string() + ": " + e.what());
  }
  if (expected != nullptr && *expected != out.model_config) {
    throw MismatchError("checkpoint " + dir.string() + " was trained with model config " +
                        model::ToJson(out.model_config).dump() + ", not " +
                        model::ToJson(*expected).dump());
  }
  out.model = std::make_unique<model::Model>(out.model_config);
  try {
    out.model->params().Load(dir / "params.bin", dir / "params.json");
  } catch (const FormatError& e) {
    throw MismatchError("checkpoint parameters do not fit the model config: " +
                        std::string(e.what()));
  }
  return out;
}

std::unique_ptr<Trainer> Trainer::Resume(const std::filesystem::path& checkpoint,
                                         const synth::Dataset& train_set) {
  LoadedCheckpoint loaded = LoadCheckpoint(checkpoint);
  const nlohmann::json state = ReadJson(checkpoint / "state.json");
  std::unique_ptr<Trainer> t(new Trainer(std::move(loaded.model), loaded.train_config, train_set));
  t->iteration_ = loaded.iteration;
  try {
    t->consecutive_skips_ = state.at("consecutive_skips").get<std::size_t>();
    t->optimizer_.Deserialize(ReadBytes(checkpoint / "optimizer.bin"),
                              state.at("optimizer_steps").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((checkpoint / "state.json").string() + ": " + e.what());
  }
  return t;
}

void WriteLossCsv(const std::filesystem::path& path, const std::vector<IterationLog>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "iteration,malignant,objectness,giou,l1,image,breast,total\n";
  for (const IterationLog& r : log) {
    if (r.skipped) continue;
    const auto& m = r.mean;
    out << r.iteration << ',' << m.malignant << ',' << m.objectness << ',' << m.giou << ','
        << m.l1 << ',' << m.image << ',' << m.breast << ',' << m.total << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

metrics::EvalInput Predict(const model::Model& model, const synth::Dataset& dataset,
                           const model::ForwardOptions& options) {
  NoGradGuard no_grad;
  metrics::EvalInput in;
  std::vector<std::string> exam_order;
  std::map<std::string, std::pair<double, bool>> exams;
  for (const synth::BreastSample& b : dataset.breasts) {
    const model::BreastForward f = model.Forward(b.image_cc, b.image_mlo, options);
    for (synth::View view : {synth::View::kCC, synth::View::kMLO}) {
      const std::string id = b.breast_id + (view == synth::View::kCC ? "_cc" : "_mlo");
      const synth::Image& img = b.image(view);
      const model::HeadOutput& head = f.view(view).stages.back();
      const auto boxes =
          head.ClippedBoxes(static_cast<double>(img.width), static_cast<double>(img.height));
      const Tensor& logits = options.dual_heads ? head.malignancy : head.objectness;
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        in.detections.push_back({id, boxes[k], ops::SigmoidValue(logits[k])});
      }
      for (const synth::Finding& finding : b.findings) {
        in.ground_truths.push_back(
            {id, finding.box(view), finding.label == synth::Label::kMalignant});
      }
      in.all_images.push_back(id);
      if (!b.findings.empty()) in.finding_images.push_back(id);
    }
    const double score = f.breast_score.item();
    in.breast_scores.push_back(score);
    in.breast_labels.push_back(b.malignant());
    auto [it, inserted] = exams.try_emplace(b.exam_id, score, b.malignant());
    if (inserted) {
      exam_order.push_back(b.exam_id);
    } else {
      it->second.first = std::max(it->second.first, score);
      it->second.second = it->second.second || b.malignant();
    }
  }
  for (const std::string& e : exam_order) {
    in.exam_scores.push_back(exams[e].first);
    in.exam_labels.push_back(exams[e].second);
  }
  return in;
}

}  // namespace mnm::train
