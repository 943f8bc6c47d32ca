#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "adt/geometry.hpp"
#include "adt/image.hpp"
#include "adt/rng.hpp"

namespace adt::aug {

struct CutoutRect {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

/// Everything needed to replay an augmentation bit-exactly.
struct AugmentRecord {
  int height = 0, width = 0;  // shape the record was produced for
  bool flipped = false;
  bool jitter = false;
  double brightness = 1.0, contrast = 1.0, saturation = 1.0;
  bool grayscale = false;
  bool blur = false;
  double blur_sigma = 0.0;
  std::vector<CutoutRect> cutouts;
  std::array<float, 3> cutout_fill = {0.5f, 0.5f, 0.5f};
};

struct AugmentConfig {
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness_range = 0.4;
  double contrast_range = 0.4;
  double saturation_range = 0.2;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double cutout_prob = 0.7;
  int cutout_max_patches = 3;
  double cutout_min_frac = 0.08;  // patch side, fraction of min image side
  double cutout_max_frac = 0.25;
  std::array<float, 3> cutout_fill = {0.5f, 0.5f, 0.5f};  // dataset channel mean
};

struct WeakResult {
  ImageTensor image;
  LabeledBoxes labels;
  AugmentRecord record;
};

struct StrongResult {
  ImageTensor image;
  AugmentRecord record;
};

/// Random horizontal flip (probability cfg.flip_prob); boxes are reflected
/// as x' = W - x. Classes and scores unchanged.
WeakResult weak_augment(const ImageTensor& img, const LabeledBoxes& labels, Rng& rng,
                        const AugmentConfig& cfg = {});

/// Color jitter, grayscale, Gaussian blur and cut-out patches, each gated by
/// its own probability. Geometry is untouched, so labels need no transform.
StrongResult strong_augment(const ImageTensor& img, Rng& rng, const AugmentConfig& cfg = {});

/// Re-applies a record. Bit-identical to the original stochastic application.
/// Throws std::invalid_argument when the image shape does not match.
std::pair<ImageTensor, LabeledBoxes> replay(const ImageTensor& img, const LabeledBoxes& labels,
                                            const AugmentRecord& record);

}  // namespace adt::aug
