#pragma once

#include <optional>
#include <vector>

namespace adt {

/// Axis-aligned box, corner coordinates in continuous pixels.
/// Width and height use the exclusive convention (x_max - x_min, no +1).
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double min_side() const { return width() < height() ? width() : height(); }
  bool valid() const;
};

/// Boxes with class ids and optional confidence scores. All lists are kept
/// the same length; scores are present for detections and absent for ground
/// truth and for pseudo-labels after filtering.
struct LabeledBoxes {
  std::vector<Box> boxes;
  std::vector<int> classes;
  std::optional<std::vector<double>> scores;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
  void push_back(const Box& b, int cls) {
    boxes.push_back(b);
    classes.push_back(cls);
    if (scores) scores->push_back(0.0);
  }
  void push_back(const Box& b, int cls, double score) {
    if (!scores) scores.emplace(boxes.size(), 0.0);
    boxes.push_back(b);
    classes.push_back(cls);
    scores->push_back(score);
  }
};

/// Intersection over union. Throws std::invalid_argument on degenerate boxes.
double iou(const Box& a, const Box& b);

/// Multiplies every coordinate by factor (> 0). Classes and scores unchanged.
LabeledBoxes scale_boxes(const LabeledBoxes& l, double factor);

/// Anisotropic variant used when an image resize rounds each axis separately.
LabeledBoxes scale_boxes_xy(const LabeledBoxes& l, double fx, double fy);

/// Keeps exactly the boxes with min(width, height) >= min_side, in order.
LabeledBoxes filter_min_size(const LabeledBoxes& l, double min_side);

/// Greedy class-wise non-maximum suppression by descending score. Kept boxes
/// of the same class have pairwise IoU < iou_thresh. Requires scores.
LabeledBoxes nms(const LabeledBoxes& l, double iou_thresh);

/// Clips a box to [0,w] x [0,h].
Box clip_box(const Box& b, double w, double h);

}  // namespace adt
