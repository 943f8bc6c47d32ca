#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adt/geometry.hpp"

namespace adt::eval {

/// Result of greedy score-ordered matching for one class.
/// Each ground-truth box is matched at most once; detections are processed
/// in descending score order.
struct MatchResult {
  std::vector<char> det_is_tp;       // per detection (in score order)
  std::vector<int> det_matched_gt;   // flat gt index or -1
  std::vector<char> gt_matched;      // per ground-truth box of the class
};

/// Average precision for one class at one IoU threshold over a set of images.
/// `dets` and `gts` are parallel per-image lists. Detections require scores.
/// Returns nullopt when no ground truth of the class exists anywhere
/// (AP undefined; excluded from means).
std::optional<double> ap_at_iou(const std::vector<LabeledBoxes>& dets,
                                const std::vector<LabeledBoxes>& gts, int cls,
                                double iou_thresh);

/// Mean of ap_at_iou over defined classes and the given threshold list.
double map_over(const std::vector<LabeledBoxes>& dets, const std::vector<LabeledBoxes>& gts,
                int num_classes, const std::vector<double>& iou_threshs);

inline std::vector<double> coco_thresholds() {
  return {0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
}

struct PrecisionRecall {
  std::optional<double> precision;  // absent when there are no pseudo-labels
  std::optional<double> recall;     // absent when there is no ground truth
};

/// Greedy IoU matching with class agreement, in pseudo-label list order.
PrecisionRecall pseudo_label_pr(const LabeledBoxes& pseudo, const LabeledBoxes& gt,
                                double iou_thresh);

/// Per-class AP@0.5 plus the three mAP aggregates, renderable as a
/// structured-text report with stable keys.
struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> ap50;  // per class
  double map50 = 0.0;
  double map75 = 0.0;
  double map5095 = 0.0;
};

EvalReport evaluate(const std::vector<LabeledBoxes>& dets, const std::vector<LabeledBoxes>& gts,
                    const std::vector<std::string>& class_names);

std::string render_report(const EvalReport& r);

/// Parses a rendered report back into key -> value. Undefined APs are absent.
std::map<std::string, double> parse_report(const std::string& text);

}  // namespace adt::eval
