#include "adt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace adt::eval {

namespace {

struct DetRef {
  double score;
  int image;
  int index;  // within its image
};

// Detections of one class in global descending-score order, with a
// deterministic (image, index) tie-break.
std::vector<DetRef> ordered_dets(const std::vector<LabeledBoxes>& dets, int cls) {
  std::vector<DetRef> refs;
  for (int img = 0; img < static_cast<int>(dets.size()); ++img) {
    const LabeledBoxes& d = dets[img];
    if (!d.empty() && !d.scores) throw std::invalid_argument("ap_at_iou: detections need scores");
    for (int i = 0; i < static_cast<int>(d.size()); ++i)
      if (d.classes[i] == cls) refs.push_back({(*d.scores)[i], img, i});
  }
  std::sort(refs.begin(), refs.end(), [](const DetRef& a, const DetRef& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });
  return refs;
}

}  // namespace

std::optional<double> ap_at_iou(const std::vector<LabeledBoxes>& dets,
                                const std::vector<LabeledBoxes>& gts, int cls,
                                double iou_thresh) {
  if (dets.size() != gts.size()) throw std::invalid_argument("ap_at_iou: image count mismatch");
  int npos = 0;
  for (const LabeledBoxes& g : gts)
    for (int c : g.classes)
      if (c == cls) ++npos;
  if (npos == 0) return std::nullopt;

  const std::vector<DetRef> refs = ordered_dets(dets, cls);
  std::vector<std::vector<char>> gt_used(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) gt_used[i].assign(gts[i].size(), 0);

  std::vector<double> precision, recall;
  precision.reserve(refs.size());
  recall.reserve(refs.size());
  int tp = 0, fp = 0;
  for (const DetRef& r : refs) {
    const LabeledBoxes& g = gts[r.image];
    int best = -1;
    double best_iou = 0.0;
    for (int j = 0; j < static_cast<int>(g.size()); ++j) {
      if (g.classes[j] != cls || gt_used[r.image][j]) continue;
      const double v = iou(dets[r.image].boxes[r.index], g.boxes[j]);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best = j;
      }
    }
    if (best >= 0) {
      gt_used[r.image][best] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / npos);
  }

  // All-points interpolation: running max of precision from the right, then
  // the area under the resulting step curve.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double map_over(const std::vector<LabeledBoxes>& dets, const std::vector<LabeledBoxes>& gts,
                int num_classes, const std::vector<double>& iou_threshs) {
  double total = 0.0;
  int count = 0;
  for (double t : iou_threshs) {
    for (int k = 0; k < num_classes; ++k) {
      if (auto ap = ap_at_iou(dets, gts, k, t)) {
        total += *ap;
        ++count;
      }
    }
  }
  return count > 0 ? total / count : 0.0;
}

PrecisionRecall pseudo_label_pr(const LabeledBoxes& pseudo, const LabeledBoxes& gt,
                                double iou_thresh) {
  std::vector<char> gt_used(gt.size(), 0);
  int tp = 0;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (gt_used[j] || gt.classes[j] != pseudo.classes[i]) continue;
      const double v = iou(pseudo.boxes[i], gt.boxes[j]);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      gt_used[best] = 1;
      ++tp;
    }
  }
  PrecisionRecall pr;
  if (!pseudo.empty()) pr.precision = static_cast<double>(tp) / pseudo.size();
  if (!gt.empty()) pr.recall = static_cast<double>(tp) / gt.size();
  return pr;
}

EvalReport evaluate(const std::vector<LabeledBoxes>& dets, const std::vector<LabeledBoxes>& gts,
                    const std::vector<std::string>& class_names) {
  EvalReport r;
  r.class_names = class_names;
  const int k = static_cast<int>(class_names.size());
  for (int c = 0; c < k; ++c) r.ap50.push_back(ap_at_iou(dets, gts, c, 0.5));
  r.map50 = map_over(dets, gts, k, {0.5});
  r.map75 = map_over(dets, gts, k, {0.75});
  r.map5095 = map_over(dets, gts, k, coco_thresholds());
  return r;
}

std::string render_report(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "adt-eval-report 1\n";
  os << "num_classes " << r.class_names.size() << "\n";
  for (std::size_t i = 0; i < r.class_names.size(); ++i) {
    os << "ap50." << r.class_names[i] << " ";
    if (r.ap50[i])
      os << *r.ap50[i] << "\n";
    else
      os << "undefined\n";
  }
  os << "map50 " << r.map50 << "\n";
  os << "map75 " << r.map75 << "\n";
  os << "map5095 " << r.map5095 << "\n";
  return os.str();
}

std::map<std::string, double> parse_report(const std::string& text) {
  std::map<std::string, double> out;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "adt-eval-report 1")
    throw std::runtime_error("parse_report: bad header");
  std::string key, value;
  while (is >> key >> value) {
    if (value == "undefined") continue;
    out[key] = std::stod(value);
  }
  return out;
}

}  // namespace adt::eval
