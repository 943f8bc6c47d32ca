#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "adt/geometry.hpp"
#include "adt/image.hpp"

namespace adt::det {

struct AnchorShape {
  double w = 0, h = 0;
  bool operator==(const AnchorShape&) const = default;
};

/// Architecture descriptor for the small two-stage detector: three
/// conv/relu/avgpool blocks (overall stride 8), a conv RPN head over a
/// single-scale anchor grid and a fully connected ROI head over the top-k
/// proposals, pooled with bilinear crop-resize.
struct ArchSpec {
  int in_channels = 3;
  int stem_channels = 8;
  int mid_channels = 16;
  int feat_channels = 32;
  int rpn_channels = 32;
  std::vector<AnchorShape> anchors = {{12, 12}, {26, 26}, {40, 18}};
  int num_classes = 5;   // foreground classes; the ROI head has K+1 outputs
  int num_proposals = 48;
  int roi_pool = 4;
  int roi_hidden = 64;
  double input_mean = 0.5;  // fixed input standardization
  double input_std = 0.125;

  static constexpr int stride = 8;

  bool operator==(const ArchSpec&) const = default;
  std::size_t param_count() const;
  std::string to_json() const;
  static ArchSpec from_json(const std::string& text);
};

/// Flat parameter vector plus its architecture. Parameters are stored as
/// 32-bit floats (the checkpoint format is exact); arithmetic runs in double.
struct ModelState {
  ArchSpec arch;
  std::vector<float> params;

  static ModelState init(const ArchSpec& arch, std::uint64_t seed);
};

/// Per-anchor and per-ROI predictions. Probabilities, not logits.
struct DetectorOutputs {
  int feat_h = 0, feat_w = 0;
  std::vector<Box> anchors;                        // anchor boxes, cell-major, shapes innermost
  std::vector<double> objectness;                  // p_i in [0,1]
  std::vector<std::array<double, 4>> rpn_offsets;  // t_i
  std::vector<Box> rois;                           // proposals fed to the ROI head
  std::vector<std::vector<double>> class_probs;    // q_j over K+1 (index 0 = background)
  std::vector<std::array<double, 4>> roi_offsets;  // o_j
};

/// Matching result for one candidate box set.
/// Class-agnostic: 1 positive, 0 negative, -1 ignore.
/// Class-aware: 0 background, 1..K foreground class.
struct BoxMatch {
  std::vector<int> labels;
  std::vector<std::array<double, 4>> targets;  // valid where positive/foreground
};

/// IoU matching against ground truth. Positive at IoU >= iou_pos (or, with
/// force_best_per_gt, as the best-overlapping candidate of each gt box),
/// negative below iou_neg, ignored in between. Targets are standard
/// center/size offsets of the matched gt relative to the candidate.
BoxMatch match(const std::vector<Box>& candidates, const LabeledBoxes& gt, double iou_pos,
               double iou_neg, bool class_aware, bool force_best_per_gt);

struct MatchConfig {
  double rpn_pos = 0.7;
  double rpn_neg = 0.3;
  double roi_fg = 0.5;
};

/// RPN labels/targets over anchors plus ROI labels/targets over proposals.
struct AnchorAssignment {
  std::vector<int> rpn_labels;  // 1 / 0 / -1
  std::vector<std::array<double, 4>> rpn_targets;
  std::vector<int> roi_labels;  // 0 bg, 1..K
  std::vector<std::array<double, 4>> roi_targets;
};

AnchorAssignment assign_targets(const DetectorOutputs& out, const LabeledBoxes& gt,
                                const MatchConfig& mc = {});

enum class LossParts { cls_only, reg_only, both };

struct LossTerms {
  double rpn_cls = 0, rpn_reg = 0, roi_cls = 0, roi_reg = 0;
  double total() const { return rpn_cls + rpn_reg + roi_cls + roi_reg; }
};

/// Detection losses from outputs and an assignment. Classification is
/// binary cross-entropy (RPN) and (K+1)-way cross-entropy (ROI); regression
/// is smooth-L1. Each term is normalized by its count of contributing
/// entries. With foreground_only, classification sums run over positives /
/// foreground ROIs only (background entries contribute nothing at all).
/// label_smoothing > 0 blends the classification targets toward uniform.
LossTerms detection_loss_terms(const DetectorOutputs& out, const AnchorAssignment& asg,
                               bool foreground_only = false, LossParts parts = LossParts::both,
                               double label_smoothing = 0.0);

double loss_rpn(const DetectorOutputs& out, const AnchorAssignment& asg);
double loss_roi(const DetectorOutputs& out, const AnchorAssignment& asg);

/// Specifies which loss to evaluate/differentiate for one image.
struct LossSpec {
  LabeledBoxes labels;
  bool foreground_only = false;
  LossParts parts = LossParts::both;
  double label_smoothing = 0.0;
};

struct ForwardEval {
  DetectorOutputs outputs;
  AnchorAssignment assignment;
  LossTerms terms;
  double loss = 0.0;
};

/// Forward pass. Deterministic; differentiable w.r.t. parameters and pixels.
/// Proposal boxes act as fixed selections within one evaluation: passing
/// pinned_rois reuses a previous pass's proposals, which is what makes
/// finite-difference checks and iterated attacks well defined.
DetectorOutputs forward(const ModelState& state, const ImageTensor& img,
                        const std::vector<Box>* pinned_rois = nullptr);

ForwardEval evaluate_loss(const ModelState& state, const ImageTensor& img, const LossSpec& spec,
                          const std::vector<Box>* pinned_rois = nullptr);

struct GradientEval {
  DetectorOutputs outputs;
  AnchorAssignment assignment;
  LossTerms terms;
  double loss = 0.0;
  std::vector<double> param_grad;  // filled when requested
  ImageTensor input_grad;          // filled when requested
};

GradientEval loss_gradients(const ModelState& state, const ImageTensor& img, const LossSpec& spec,
                            bool want_param_grad, bool want_input_grad,
                            const std::vector<Box>* pinned_rois = nullptr);

/// Eq-style conveniences.
double supervised_loss(const ModelState& state, const ImageTensor& img, const LabeledBoxes& labels);
ImageTensor input_gradient(const ModelState& state, const ImageTensor& img, const LossSpec& spec,
                           const std::vector<Box>* pinned_rois = nullptr);

/// Decoded, score-filtered, class-wise-NMS detections, clipped to the image.
/// Class = argmax of q over foreground classes, score = that probability.
LabeledBoxes detect(const ModelState& state, const ImageTensor& img, double score_thresh,
                    double nms_thresh);

/// theta - lr * grad, elementwise. Throws on non-finite update.
ModelState sgd_step(const ModelState& state, const std::vector<double>& grad, double lr);

/// Checkpoints: text header with the architecture and caller metadata, then
/// the raw little-endian float32 parameter block. Round-trip exact.
void save_checkpoint(const std::string& path, const ModelState& state, long long iteration,
                     const std::string& meta_line = "{}");

struct Checkpoint {
  ModelState state;
  long long iteration = 0;
  std::string meta_line;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace adt::det
