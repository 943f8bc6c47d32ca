#include "adt/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adt::atk {

double attack_loss(const det::DetectorOutputs& out, const det::AnchorAssignment& asg,
                   det::LossParts parts) {
  return det::detection_loss_terms(out, asg, /*foreground_only=*/true, parts).total();
}

ImageTensor fgsm_step(const ImageTensor& img, const ImageTensor& grad, double alpha) {
  if (!img.same_shape(grad)) throw std::invalid_argument("fgsm_step: shape mismatch");
  if (!(alpha > 0)) throw std::invalid_argument("fgsm_step: alpha must be > 0");
  ImageTensor out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const float g = grad.data[i];
    const double step = g > 0 ? alpha : (g < 0 ? -alpha : 0.0);
    out.data[i] = static_cast<float>(std::clamp(out.data[i] + step, 0.0, 1.0));
  }
  return out;
}

ImageTensor clip_to_ball(ImageTensor x, const ImageTensor& center, double epsilon) {
  if (!x.same_shape(center)) throw std::invalid_argument("clip_to_ball: shape mismatch");
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double lo = center.data[i] - epsilon;
    const double hi = center.data[i] + epsilon;
    x.data[i] = static_cast<float>(std::clamp(static_cast<double>(x.data[i]), lo, hi));
  }
  return x;
}

PgdResult pgd(const det::ModelState& student, const ImageTensor& img, const LabeledBoxes& pseudo,
              const AttackConfig& cfg) {
  if (!(cfg.alpha > 0) || cfg.epsilon < 0 || cfg.t_max_attack < 0)
    throw std::invalid_argument("pgd: invalid attack config");
  PgdResult res;
  res.image = img;
  if (pseudo.empty() || cfg.t_max_attack == 0) return res;

  const det::LossSpec spec{pseudo, /*foreground_only=*/true, cfg.parts};
  for (int t = 0; t < cfg.t_max_attack; ++t) {
    det::GradientEval ev = det::loss_gradients(student, res.image, spec,
                                               /*want_param_grad=*/false,
                                               /*want_input_grad=*/true);
    res.trace.push_back(ev.loss);
    res.image = clip_to_ball(fgsm_step(res.image, ev.input_grad, cfg.alpha), img, cfg.epsilon);
  }
  return res;
}

bool should_attack(Rng& rng, double p_attack) {
  if (p_attack < 0 || p_attack > 1) throw std::invalid_argument("should_attack: p outside [0,1]");
  return rng.bernoulli(p_attack);
}

}  // namespace adt::atk
