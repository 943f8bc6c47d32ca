#include "adt/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adt::aug {

namespace {

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

ImageTensor hflip(const ImageTensor& img) {
  ImageTensor out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

LabeledBoxes flip_labels(const LabeledBoxes& labels, double width) {
  LabeledBoxes out = labels;
  for (Box& b : out.boxes) {
    const double new_min = width - b.x_max;
    const double new_max = width - b.x_min;
    b.x_min = new_min;
    b.x_max = new_max;
  }
  return out;
}

void apply_jitter(ImageTensor& img, double brightness, double contrast, double saturation) {
  // brightness, then contrast about the image mean, then saturation toward luma
  double mean = 0.0;
  for (float v : img.data) mean += v;
  mean = img.data.empty() ? 0.0 : mean / img.data.size();
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double r = img.at(y, x, 0) * brightness;
      double g = img.at(y, x, 1) * brightness;
      double b = img.at(y, x, 2) * brightness;
      r = (r - mean) * contrast + mean;
      g = (g - mean) * contrast + mean;
      b = (b - mean) * contrast + mean;
      const double luma = kLumaR * r + kLumaG * g + kLumaB * b;
      r = luma + (r - luma) * saturation;
      g = luma + (g - luma) * saturation;
      b = luma + (b - luma) * saturation;
      img.at(y, x, 0) = static_cast<float>(r);
      img.at(y, x, 1) = static_cast<float>(g);
      img.at(y, x, 2) = static_cast<float>(b);
    }
  }
}

void apply_grayscale(ImageTensor& img) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double luma =
          kLumaR * img.at(y, x, 0) + kLumaG * img.at(y, x, 1) + kLumaB * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(luma);
    }
  }
}

void apply_blur(ImageTensor& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  // separable pass with edge replication
  ImageTensor tmp(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xs = std::clamp(x + i, 0, img.width - 1);
          acc += kernel[i + radius] * img.at(y, xs, c);
        }
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int ys = std::clamp(y + i, 0, img.height - 1);
          acc += kernel[i + radius] * tmp.at(ys, x, c);
        }
        img.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
}

void apply_cutouts(ImageTensor& img, const std::vector<CutoutRect>& rects,
                   const std::array<float, 3>& fill) {
  for (const CutoutRect& r : rects) {
    const int y1 = std::min(img.height, r.y0 + r.h);
    const int x1 = std::min(img.width, r.x0 + r.w);
    for (int y = std::max(0, r.y0); y < y1; ++y)
      for (int x = std::max(0, r.x0); x < x1; ++x)
        for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = fill[c % 3];
  }
}

ImageTensor apply_record_image(const ImageTensor& img, const AugmentRecord& rec) {
  ImageTensor out = rec.flipped ? hflip(img) : img;
  if (rec.jitter) apply_jitter(out, rec.brightness, rec.contrast, rec.saturation);
  if (rec.grayscale) apply_grayscale(out);
  if (rec.blur) apply_blur(out, rec.blur_sigma);
  if (!rec.cutouts.empty()) apply_cutouts(out, rec.cutouts, rec.cutout_fill);
  if (rec.jitter || rec.grayscale || rec.blur) out = clamp01(std::move(out));
  return out;
}

}  // namespace

WeakResult weak_augment(const ImageTensor& img, const LabeledBoxes& labels, Rng& rng,
                        const AugmentConfig& cfg) {
  AugmentRecord rec;
  rec.height = img.height;
  rec.width = img.width;
  rec.flipped = rng.bernoulli(cfg.flip_prob);
  WeakResult res;
  res.record = rec;
  if (rec.flipped) {
    res.image = hflip(img);
    res.labels = flip_labels(labels, img.width);
  } else {
    res.image = img;
    res.labels = labels;
  }
  return res;
}

StrongResult strong_augment(const ImageTensor& img, Rng& rng, const AugmentConfig& cfg) {
  AugmentRecord rec;
  rec.height = img.height;
  rec.width = img.width;
  rec.cutout_fill = cfg.cutout_fill;

  if (rng.bernoulli(cfg.jitter_prob)) {
    rec.jitter = true;
    rec.brightness = 1.0 + rng.uniform(-cfg.brightness_range, cfg.brightness_range);
    rec.contrast = 1.0 + rng.uniform(-cfg.contrast_range, cfg.contrast_range);
    rec.saturation = 1.0 + rng.uniform(-cfg.saturation_range, cfg.saturation_range);
  }
  rec.grayscale = rng.bernoulli(cfg.grayscale_prob);
  if (rng.bernoulli(cfg.blur_prob)) {
    rec.blur = true;
    rec.blur_sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  }
  if (rng.bernoulli(cfg.cutout_prob)) {
    const int n = rng.uniform_int(1, cfg.cutout_max_patches);
    const int min_dim = std::min(img.height, img.width);
    for (int i = 0; i < n; ++i) {
      CutoutRect r;
      r.h = std::max(1, static_cast<int>(min_dim * rng.uniform(cfg.cutout_min_frac, cfg.cutout_max_frac)));
      r.w = std::max(1, static_cast<int>(min_dim * rng.uniform(cfg.cutout_min_frac, cfg.cutout_max_frac)));
      r.y0 = rng.uniform_int(0, std::max(0, img.height - r.h));
      r.x0 = rng.uniform_int(0, std::max(0, img.width - r.w));
      rec.cutouts.push_back(r);
    }
  }
  return {apply_record_image(img, rec), rec};
}

std::pair<ImageTensor, LabeledBoxes> replay(const ImageTensor& img, const LabeledBoxes& labels,
                                            const AugmentRecord& record) {
  if (img.height != record.height || img.width != record.width)
    throw std::invalid_argument("replay: image shape does not match record");
  LabeledBoxes out_labels = record.flipped ? flip_labels(labels, img.width) : labels;
  return {apply_record_image(img, record), std::move(out_labels)};
}

}  // namespace adt::aug
