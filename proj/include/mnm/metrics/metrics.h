#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnm/geometry/bbox.h"

namespace mnm::metrics {

struct Detection {
  std::string image_id;
  BBox box;
  double score = 0;  // in [0, 1]
};

struct GroundTruth {
  std::string image_id;
  BBox box;
  bool malignant = true;
};

struct FrocPoint {
  double fp_per_image = 0;
  double recall = 0;
  bool operator==(const FrocPoint&) const = default;
};

// 0.25, 0.30, ..., 0.75
std::vector<double> DefaultIouThresholds();

// AP at one IoU threshold over detections and malignant ground truths whose
// image is in `images`. Detections are matched greedily in descending score
// order (index breaks ties) to the unmatched gt of highest IoU. Precision and
// recall are taken at every distinct score; tied detections enter together.
// nullopt when no malignant gt lies in the image set.
std::optional<double> AveragePrecisionAt(std::span<const Detection> dets,
                                         std::span<const GroundTruth> gts,
                                         std::span<const std::string> images,
                                         double iou_threshold);
// Mean of AveragePrecisionAt over the thresholds.
std::optional<double> AveragePrecision(
    std::span<const Detection> dets, std::span<const GroundTruth> gts,
    std::span<const std::string> images,
    std::span<const double> iou_thresholds);

// Staircase from the (0, 0) point at an infinite threshold down through
// every distinct detection score. A detection is a hit when its center lies
// inside a malignant gt of its image; misses are false positives, except that
// benign center hits are forgiven when benign_hits_are_fp is false. Recall is
// 0 when the set holds no malignant gt.
std::vector<FrocPoint> Froc(std::span<const Detection> dets,
                            std::span<const GroundTruth> gts,
                            std::span<const std::string> images,
                            bool benign_hits_are_fp = true);

// Max recall over points with fp_per_image <= t, 0 if none. Throws
// ConfigError for negative t.
double RecallAtFp(std::span<const FrocPoint> curve, double t);

// Mann-Whitney statistic with ties counted half. Throws ConfigError unless
// both classes are present and lengths agree.
double RocAuc(std::span<const double> scores, std::span<const bool> labels);

struct EvalInput {
  std::vector<Detection> detections;
  std::vector<GroundTruth> ground_truths;
  std::vector<std::string> all_images;
  // Images holding at least one finding.
  std::vector<std::string> finding_images;
  std::vector<double> breast_scores;
  std::vector<bool> breast_labels;
  std::vector<double> exam_scores;
  std::vector<bool> exam_labels;
};

struct EvalOptions {
  // FROC and recalls over every image, or only finding_images.
  bool include_negatives = true;
  bool benign_hits_are_fp = true;
  std::vector<double> iou_thresholds = DefaultIouThresholds();
  // Breast and exam AUC are skipped when false (no MIL score to rank).
  bool classification = true;
};

inline constexpr double kRecallFps[] = {0.1, 0.25, 0.5};

struct EvalReport {
  std::optional<double> ap_mb, ap_all, delta;
  std::vector<double> recall_at;  // aligned with kRecallFps
  std::vector<FrocPoint> froc;
  std::optional<double> breast_auc, exam_auc;
  bool include_negatives = true;
};

EvalReport Evaluate(const EvalInput& input, const EvalOptions& options = {});

// Absent values serialize as null.
nlohmann::json ToJson(const EvalReport& report);
EvalReport EvalReportFromJson(const nlohmann::json& j);

nlohmann::json DetectionsToJson(std::span<const Detection> dets);
// Validates every record: image_id string, valid box, score finite in [0, 1].
std::vector<Detection> DetectionsFromJson(const nlohmann::json& j);

// `fp_per_image,recall` with a header row.
void WriteFrocCsv(const std::filesystem::path& path, std::span<const FrocPoint> curve);
std::vector<FrocPoint> ReadFrocCsv(const std::filesystem::path& path);

}  // namespace mnm::metrics
