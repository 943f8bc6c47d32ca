#include "adt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace adt {

bool Box::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min < x_max && y_min < y_max;
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

LabeledBoxes scale_boxes(const LabeledBoxes& l, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("scale_boxes: factor must be > 0");
  return scale_boxes_xy(l, factor, factor);
}

LabeledBoxes scale_boxes_xy(const LabeledBoxes& l, double fx, double fy) {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("scale_boxes_xy: factors must be > 0");
  LabeledBoxes out = l;
  for (Box& b : out.boxes) {
    b.x_min *= fx;
    b.x_max *= fx;
    b.y_min *= fy;
    b.y_max *= fy;
  }
  return out;
}

LabeledBoxes filter_min_size(const LabeledBoxes& l, double min_side) {
  LabeledBoxes out;
  if (l.scores) out.scores.emplace();
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (l.boxes[i].min_side() >= min_side) {
      out.boxes.push_back(l.boxes[i]);
      out.classes.push_back(l.classes[i]);
      if (l.scores) out.scores->push_back((*l.scores)[i]);
    }
  }
  return out;
}

LabeledBoxes nms(const LabeledBoxes& l, double iou_thresh) {
  if (!l.scores) throw std::invalid_argument("nms: scores required");
  std::vector<std::size_t> order(l.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return (*l.scores)[a] > (*l.scores)[b];
  });
  std::vector<char> suppressed(l.size(), 0);
  LabeledBoxes out;
  out.scores.emplace();
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    out.boxes.push_back(l.boxes[i]);
    out.classes.push_back(l.classes[i]);
    out.scores->push_back((*l.scores)[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j] || l.classes[j] != l.classes[i]) continue;
      if (iou(l.boxes[i], l.boxes[j]) >= iou_thresh) suppressed[j] = 1;
    }
  }
  return out;
}

Box clip_box(const Box& b, double w, double h) {
  Box out;
  out.x_min = std::clamp(b.x_min, 0.0, w);
  out.y_min = std::clamp(b.y_min, 0.0, h);
  out.x_max = std::clamp(b.x_max, 0.0, w);
  out.y_max = std::clamp(b.y_max, 0.0, h);
  return out;
}

}  // namespace adt
