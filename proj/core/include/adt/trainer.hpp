#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "adt/attack.hpp"
#include "adt/augment.hpp"
#include "adt/detector.hpp"
#include "adt/geometry.hpp"
#include "adt/image.hpp"

namespace adt::train {

struct TrainConfig {
  double beta = 0.99;    // EMA smoothing
  double delta = 0.8;    // pseudo-label confidence threshold
  double lambda_s = 1.0;
  double lambda_t = 1.0;
  double lr = 0.05;
  double momentum = 0.9;
  double grad_clip = 5.0;  // global L2 clip on the batch gradient; 0 disables
  double label_smoothing = 0.0;  // classification target smoothing during training
  double r_in_min = 1.2;  // zoom-in ratio sampling interval (> 1)
  double r_in_max = 1.5;
  double r_out_min = 0.55;  // zoom-out ratio sampling interval (< 1)
  double r_out_max = 0.8;
  double s_min = 8.0;  // minimum pseudo-box side after zoom-out, pixels
  int t_max_iteration = 500;
  int burn_in = 400;
  int batch_size = 4;
  int eval_every = 100;       // 0: evaluate only at the end
  int checkpoint_every = 0;   // 0: no periodic checkpoints
  double teacher_score_thresh = 0.05;
  double nms_thresh = 0.5;
  std::uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

struct LabeledImage {
  ImageTensor image;
  LabeledBoxes labels;
};

struct SourceDataset {
  std::vector<LabeledImage> items;
  std::array<float, 3> mean = {0.5f, 0.5f, 0.5f};  // cut-out fill
};

/// Target training data is unlabeled by construction; held-out target ground
/// truth never enters this type.
struct TargetDataset {
  std::vector<ImageTensor> images;
  std::array<float, 3> mean = {0.5f, 0.5f, 0.5f};
};

struct EvalPoint {
  long long iteration = 0;
  double map50 = 0.0;
};

struct TrainState {
  det::ModelState student;
  det::ModelState teacher;
  std::vector<double> velocity;  // student SGD momentum buffer
  long long iteration = 0;
  std::uint64_t seed = 0;
  std::vector<EvalPoint> history;
};

/// Per-step diagnostics, also the source of the metrics log.
struct StepTrace {
  double loss_source = 0.0;
  double loss_target = 0.0;
  bool attacked = false;
  std::vector<std::vector<double>> attack_traces;  // per attacked image
  int pseudo_count = 0;
  double r_in = 1.0;
  double r_out = 1.0;
  std::vector<LabeledBoxes> pseudo_labels;  // zoomed-out frame, per image
  std::vector<double> pseudo_scores_prefilter;  // scores of retained labels
};

/// Writes deterministic JSON-lines metrics (no timestamps).
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::string& path);
  ~MetricsLog();
  MetricsLog(MetricsLog&&) noexcept;
  MetricsLog& operator=(MetricsLog&&) noexcept;
  void line(const std::string& json_line);
  bool open() const { return impl_ != nullptr; }

 private:
  void* impl_ = nullptr;
};

/// Supervised burn-in on labeled source data (random flips only). Returns
/// the source model. Throws std::runtime_error on divergent (non-finite)
/// loss after writing an emergency checkpoint when a directory is given.
det::ModelState pretrain_source(const SourceDataset& data, const det::ArchSpec& arch,
                                const TrainConfig& cfg, MetricsLog* log = nullptr,
                                const std::string& abort_checkpoint_dir = "");

/// theta_teacher <- beta * theta_teacher + (1 - beta) * theta_student.
det::ModelState ema_update(const det::ModelState& teacher, const det::ModelState& student,
                           double beta);

/// Keeps detections with score >= delta; scores are dropped from the result
/// (pseudo-labels act as hard ground truth downstream).
LabeledBoxes filter_pseudo_labels(const LabeledBoxes& dets, double delta);

/// Bilinear upscale by r_in > 1 (both axes, sizes rounded to nearest pixel).
ImageTensor zoom_in(const ImageTensor& img, double r_in);

struct ZoomOutResult {
  ImageTensor image;
  LabeledBoxes labels;
};

/// Downscales the strongly augmented image by r_out and maps pseudo-labels
/// from the zoomed-in frame onto it (factor r_out / r_in via the actual
/// rounded sizes), then removes boxes smaller than s_min.
ZoomOutResult zoom_out(const ImageTensor& strong_img, const LabeledBoxes& labels_from_zoomed_in,
                       double r_in, double r_out, double s_min);

/// One mutual-learning iteration over the given batches, in order:
/// strong-augment source, weak-augment target, zoom-in, EMA update, teacher
/// pseudo-labeling, strong-augment target, zoom-out with label resize,
/// optional PGD, combined lambda_s * L_s + lambda_t * L_t SGD step.
void train_step(TrainState& state, std::span<const LabeledImage> source_batch,
                std::span<const ImageTensor> target_batch, const SourceDataset& source_stats,
                const TargetDataset& target_stats, const TrainConfig& tc,
                const atk::AttackConfig& ac, StepTrace* trace = nullptr);

struct TrainOptions {
  const det::ModelState* source_model = nullptr;  // skip burn-in when provided
  const TrainState* resume = nullptr;
  std::string metrics_path;
  std::string checkpoint_dir;
};

struct TrainResult {
  det::ModelState student;
  det::ModelState teacher;
  std::vector<EvalPoint> history;
};

/// Full pipeline: burn-in (unless a source model is given), then the
/// mutual-learning loop with periodic teacher evaluation on the eval split.
TrainResult train(const SourceDataset& source, const TargetDataset& target,
                  const std::vector<LabeledImage>& target_eval, const det::ArchSpec& arch,
                  const TrainConfig& tc, const atk::AttackConfig& ac,
                  const TrainOptions& options = {});

/// Teacher-style evaluation: detect at a low score threshold, then mAP@0.5.
double evaluate_map50(const det::ModelState& model, const std::vector<LabeledImage>& eval_data,
                      int num_classes, double score_thresh = 0.05, double nms_thresh = 0.5);

/// Resumable training state: student.ckpt + teacher.ckpt + trainstate.bin.
void save_train_state(const std::filesystem::path& dir, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& dir);

/// Dataset adapters (manifest -> in-memory datasets).
SourceDataset load_labeled_dataset(const std::filesystem::path& manifest_path);
TargetDataset load_unlabeled_dataset(const std::filesystem::path& manifest_path);
std::vector<LabeledImage> load_eval_dataset(const std::filesystem::path& manifest_path);

}  // namespace adt::train
