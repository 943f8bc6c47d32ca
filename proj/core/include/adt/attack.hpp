#pragma once

#include <vector>

#include "adt/detector.hpp"
#include "adt/geometry.hpp"
#include "adt/image.hpp"
#include "adt/rng.hpp"

namespace adt::atk {

struct AttackConfig {
  double alpha = 1.0 / 255;    // step size, pixel units
  double epsilon = 4.0 / 255;  // L-inf budget
  int t_max_attack = 3;
  double p_attack = 1.0;
  det::LossParts parts = det::LossParts::both;
};

/// Foreground-only detection loss: classification and regression sums run
/// over positive anchors and foreground ROIs only, so entries matched to
/// background contribute nothing at all.
double attack_loss(const det::DetectorOutputs& out, const det::AnchorAssignment& asg,
                   det::LossParts parts = det::LossParts::both);

/// img + alpha * sign(grad), sign(0) = 0, clamped to [0,1].
ImageTensor fgsm_step(const ImageTensor& img, const ImageTensor& grad, double alpha);

/// Projects x into the L-inf epsilon ball around center, elementwise.
ImageTensor clip_to_ball(ImageTensor x, const ImageTensor& center, double epsilon);

struct PgdResult {
  ImageTensor image;
  std::vector<double> trace;  // attack loss at each iterate before stepping
};

/// Iterated sign-gradient ascent on the foreground-only loss, with every
/// iterate projected into the epsilon ball around img and into [0,1].
/// Proposal selection is frozen within each step. Empty pseudo-labels make
/// the attack a no-op: the input comes back unchanged with an empty trace.
PgdResult pgd(const det::ModelState& student, const ImageTensor& img, const LabeledBoxes& pseudo,
              const AttackConfig& cfg);

/// Bernoulli(p_attack) draw.
bool should_attack(Rng& rng, double p_attack);

}  // namespace adt::atk
