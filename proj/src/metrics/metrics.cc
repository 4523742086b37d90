#include "mnm/metrics/metrics.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mnm/common/error.h"

namespace mnm::metrics {
namespace {

using ImageSet = std::unordered_set<std::string>;

ImageSet MakeSet(std::span<const std::string> images) {
  return ImageSet(images.begin(), images.end());
}

// Indices of in-set detections, score descending, index ascending on ties.
std::vector<std::size_t> RankedDetections(std::span<const Detection> dets,
                                          const ImageSet& images) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (images.contains(dets[i].image_id)) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

// gt indices per image, restricted to the set, optionally malignant only.
std::unordered_map<std::string, std::vector<std::size_t>> GtsByImage(
    std::span<const GroundTruth> gts, const ImageSet& images, bool malignant_only) {
  std::unordered_map<std::string, std::vector<std::size_t>> out;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!images.contains(gts[g].image_id)) continue;
    if (malignant_only && !gts[g].malignant) continue;
    out[gts[g].image_id].push_back(g);
  }
  return out;
}

std::size_t CountMalignant(std::span<const GroundTruth> gts, const ImageSet& images) {
  return static_cast<std::size_t>(std::count_if(gts.begin(), gts.end(), [&](const auto& g) {
    return g.malignant && images.contains(g.image_id);
  }));
}

const std::vector<std::size_t>& Lookup(
    const std::unordered_map<std::string, std::vector<std::size_t>>& m,
    const std::string& key) {
  static const std::vector<std::size_t> kEmpty;
  auto it = m.find(key);
  return it == m.end() ? kEmpty : it->second;
}

std::optional<double> OptionalFromJson(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nlohmann::json OptionalToJson(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::vector<double> DefaultIouThresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 10; ++i) t.push_back(0.25 + 0.05 * i);
  return t;
}

std::optional<double> AveragePrecisionAt(std::span<const Detection> dets,
                                         std::span<const GroundTruth> gts,
                                         std::span<const std::string> images,
                                         double iou_threshold) {
  const ImageSet set = MakeSet(images);
  const std::size_t total = CountMalignant(gts, set);
  if (total == 0) return std::nullopt;
  const auto by_image = GtsByImage(gts, set, true);
  const auto order = RankedDetections(dets, set);

  std::vector<bool> taken(gts.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Detection& d = dets[order[r]];
    double best = -1;
    std::size_t best_gt = 0;
    for (std::size_t g : Lookup(by_image, d.image_id)) {
      if (taken[g]) continue;
      const double iou = Iou(d.box, gts[g].box);
      if (iou >= iou_threshold && iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best >= 0) {
      taken[best_gt] = true;
      ++tp;
    }
    const bool group_end = r + 1 == order.size() || dets[order[r + 1]].score != d.score;
    if (group_end) {
      precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(total));
    }
  }
  // All-points interpolation: precision envelope from the right.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

std::optional<double> AveragePrecision(std::span<const Detection> dets,
                                       std::span<const GroundTruth> gts,
                                       std::span<const std::string> images,
                                       std::span<const double> iou_thresholds) {
  if (iou_thresholds.empty()) throw ConfigError("average precision: no IoU thresholds");
  double sum = 0;
  for (double t : iou_thresholds) {
    const auto ap = AveragePrecisionAt(dets, gts, images, t);
    if (!ap) return std::nullopt;
    sum += *ap;
  }
  return sum / static_cast<double>(iou_thresholds.size());
}

std::vector<FrocPoint> Froc(std::span<const Detection> dets,
                            std::span<const GroundTruth> gts,
                            std::span<const std::string> images,
                            bool benign_hits_are_fp) {
  const ImageSet set = MakeSet(images);
  const std::size_t total = CountMalignant(gts, set);
  const auto by_image = GtsByImage(gts, set, false);
  const auto order = RankedDetections(dets, set);
  const double n_images = std::max<double>(static_cast<double>(set.size()), 1.0);

  std::vector<FrocPoint> curve = {{0.0, 0.0}};
  std::vector<bool> hit(gts.size(), false);
  std::size_t tp = 0, fp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Detection& d = dets[order[r]];
    bool malignant_hit = false, benign_hit = false;
    for (std::size_t g : Lookup(by_image, d.image_id)) {
      if (!CenterHit(d.box, gts[g].box)) continue;
      if (!gts[g].malignant) {
        benign_hit = true;
        continue;
      }
      malignant_hit = true;
      if (!hit[g]) {
        hit[g] = true;
        ++tp;
      }
    }
    if (!malignant_hit && (benign_hits_are_fp || !benign_hit)) ++fp;
    const bool group_end = r + 1 == order.size() || dets[order[r + 1]].score != d.score;
    if (group_end) {
      curve.push_back({static_cast<double>(fp) / n_images,
                       total == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(total)});
    }
  }
  return curve;
}

double RecallAtFp(std::span<const FrocPoint> curve, double t) {
  if (!(t >= 0)) throw ConfigError("recall_at_fp: threshold must be >= 0");
  double best = 0;
  for (const FrocPoint& p : curve) {
    if (p.fp_per_image <= t) best = std::max(best, p.recall);
  }
  return best;
}

double RocAuc(std::span<const double> scores, std::span<const bool> labels) {
  if (scores.size() != labels.size()) {
    throw ConfigError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                      std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Walk groups of equal score from low to high; every count stays a
  // half-integer so the sum is exact.
  double correct = 0, negatives_below = 0, positives = 0, negatives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double pos = 0, neg = 0;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
      (labels[order[j]] ? pos : neg) += 1;
    }
    correct += pos * negatives_below + 0.5 * pos * neg;
    negatives_below += neg;
    positives += pos;
    negatives += neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) throw ConfigError("roc_auc: needs both classes");
  return correct / (positives * negatives);
}

EvalReport Evaluate(const EvalInput& input, const EvalOptions& options) {
  EvalReport report;
  report.include_negatives = options.include_negatives;
  report.ap_mb = AveragePrecision(input.detections, input.ground_truths, input.finding_images,
                                  options.iou_thresholds);
  report.ap_all = AveragePrecision(input.detections, input.ground_truths, input.all_images,
                                   options.iou_thresholds);
  if (report.ap_mb && report.ap_all) report.delta = *report.ap_all - *report.ap_mb;
  report.froc = Froc(input.detections, input.ground_truths,
                     options.include_negatives ? input.all_images : input.finding_images,
                     options.benign_hits_are_fp);
  for (double t : kRecallFps) report.recall_at.push_back(RecallAtFp(report.froc, t));

  auto auc = [&](const std::vector<double>& s,
                 const std::vector<bool>& l) -> std::optional<double> {
    if (!options.classification) return std::nullopt;
    if (std::find(l.begin(), l.end(), true) == l.end()) return std::nullopt;
    if (std::find(l.begin(), l.end(), false) == l.end()) return std::nullopt;
    // vector<bool> is not contiguous.
    const auto flags = std::make_unique<bool[]>(l.size());
    std::copy(l.begin(), l.end(), flags.get());
    return RocAuc(s, std::span<const bool>(flags.get(), l.size()));
  };
  report.breast_auc = auc(input.breast_scores, input.breast_labels);
  report.exam_auc = auc(input.exam_scores, input.exam_labels);
  return report;
}

nlohmann::json ToJson(const EvalReport& report) {
  nlohmann::json recalls = nlohmann::json::object();
  for (std::size_t i = 0; i < report.recall_at.size(); ++i) {
    std::ostringstream key;
    key << kRecallFps[i];
    recalls[key.str()] = report.recall_at[i];
  }
  nlohmann::json froc = nlohmann::json::array();
  for (const FrocPoint& p : report.froc) froc.push_back({p.fp_per_image, p.recall});
  return {{"ap_mb", OptionalToJson(report.ap_mb)},
          {"ap_all", OptionalToJson(report.ap_all)},
          {"delta", OptionalToJson(report.delta)},
          {"recall_at", recalls},
          {"froc", froc},
          {"breast_auc", OptionalToJson(report.breast_auc)},
          {"exam_auc", OptionalToJson(report.exam_auc)},
          {"include_negatives", report.include_negatives}};
}

EvalReport EvalReportFromJson(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.ap_mb = OptionalFromJson(j.at("ap_mb"));
    r.ap_all = OptionalFromJson(j.at("ap_all"));
    r.delta = OptionalFromJson(j.at("delta"));
    r.breast_auc = OptionalFromJson(j.at("breast_auc"));
    r.exam_auc = OptionalFromJson(j.at("exam_auc"));
    r.include_negatives = j.at("include_negatives").get<bool>();
    const auto& recalls = j.at("recall_at");
    for (double t : kRecallFps) {
      std::ostringstream key;
      key << t;
      r.recall_at.push_back(recalls.at(key.str()).get<double>());
    }
    for (const auto& p : j.at("froc")) r.froc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

nlohmann::json DetectionsToJson(std::span<const Detection> dets) {
  nlohmann::json out = nlohmann::json::array();
  for (const Detection& d : dets) {
    out.push_back({{"image_id", d.image_id},
                   {"x1", d.box.x1},
                   {"y1", d.box.y1},
                   {"x2", d.box.x2},
                   {"y2", d.box.y2},
                   {"score", d.score}});
  }
  return out;
}

std::vector<Detection> DetectionsFromJson(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("detections: expected a JSON array");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& rec = j[i];
    const std::string where = "detections[" + std::to_string(i) + "]";
    if (!rec.is_object() || rec.size() != 6) throw FormatError(where + ": expected 6 fields");
    try {
      Detection d;
      d.image_id = rec.at("image_id").get<std::string>();
      auto num = [&](const char* key) {
        const auto& v = rec.at(key);
        if (!v.is_number()) throw FormatError(where + ": " + key + " is not a number");
        return v.get<double>();
      };
      d.box = BBox::Make(num("x1"), num("y1"), num("x2"), num("y2"));
      d.score = num("score");
      if (!std::isfinite(d.score) || d.score < 0 || d.score > 1) {
        throw FormatError(where + ": score outside [0, 1]");
      }
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const ShapeError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return out;
}

void WriteFrocCsv(const std::filesystem::path& path, std::span<const FrocPoint> curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "fp_per_image,recall\n";
  for (const FrocPoint& p : curve) out << p.fp_per_image << ',' << p.recall << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<FrocPoint> ReadFrocCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "fp_per_image,recall") {
    throw FormatError(path.string() + ": missing fp_per_image,recall header");
  }
  std::vector<FrocPoint> curve;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string where = path.string() + ":" + std::to_string(row);
    if (comma == std::string::npos) throw FormatError(where + ": expected two columns");
    try {
      std::size_t used_a = 0, used_b = 0;
      const std::string a = line.substr(0, comma), b = line.substr(comma + 1);
      FrocPoint p{std::stod(a, &used_a), std::stod(b, &used_b)};
      if (used_a != a.size() || used_b != b.size() || !std::isfinite(p.fp_per_image) ||
          !std::isfinite(p.recall)) {
        throw FormatError(where + ": malformed number");
      }
      curve.push_back(p);
    } catch (const std::logic_error&) {
      throw FormatError(where + ": malformed number");
    }
  }
  if (curve.empty()) throw FormatError(path.string() + ": no curve points");
  return curve;
}

}  // namespace mnm::metrics
