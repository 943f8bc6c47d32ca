#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adt/geometry.hpp"
#include "adt/image.hpp"
#include "adt/rng.hpp"

namespace adt::synth {

constexpr int kNumClasses = 5;

/// Class ids: 0 disk, 1 square, 2 triangle, 3 ring, 4 bar.
const std::vector<std::string>& default_class_names();

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 96;
  int width = 96;
  int object_count = 6;
  double min_size = 6.0;   // sampled box side range (log-uniform)
  double max_size = 40.0;
  double bg_base = 0.45;   // background value-noise parameters
  double bg_variation = 0.15;
  int bg_cells = 6;
  double pixel_noise = 0.015;
  double max_overlap_iou = 0.30;
};

struct SceneRender {
  ImageTensor image;
  LabeledBoxes labels;  // tight boxes, one per rendered object
};

/// Renders geometric objects on a textured background. Deterministic given
/// the spec's seed. Throws std::runtime_error when objects cannot be placed.
SceneRender generate_scene(const SceneSpec& spec);

/// Single-channel depth map, linear in y with the top of the image far.
ImageTensor vertical_depth_map(int h, int w, double near, double far);

/// Atmospheric blend: out = pixel * t + fog_color * (1 - t) with
/// t = exp(-density * depth). `depth` is single-channel, same H x W.
ImageTensor apply_fog(const ImageTensor& img, double density, const ImageTensor& depth,
                      const std::array<float, 3>& fog_color = {0.78f, 0.80f, 0.84f});

/// Low-light model: out = clamp(pixel * gain + N(0, sigma^2)), gain in (0,1].
ImageTensor apply_night(const ImageTensor& img, double gain, double noise_sigma, Rng& rng);

struct ManifestEntry {
  std::string image_path;  // relative to the manifest's directory
  std::string domain;      // "source" | "target"
  std::optional<LabeledBoxes> labels;
};

struct DatasetManifest {
  std::string split;   // e.g. "source_train"
  std::string domain;  // split-level tag, matches every entry
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;
};

/// On-disk layout: `<root>/<split>.manifest` plus `<root>/images/*.ppm`.
///
/// Manifest format (fixed field order, whitespace separated):
///   adt-dataset 1
///   split <name>
///   domain <source|target>
///   classes <name>...
///   image <path> <domain> <label_count>
///   label <class> <x_min> <y_min> <x_max> <y_max>   (label_count times)
void write_dataset(const std::filesystem::path& root, const DatasetManifest& manifest,
                   const std::vector<ImageTensor>& images);

/// Reads a manifest file. Throws std::runtime_error naming the offending
/// record on malformed input or invariant violations.
DatasetManifest read_dataset(const std::filesystem::path& manifest_path);

ImageTensor load_image(const std::filesystem::path& manifest_path, const ManifestEntry& entry);

/// Configuration for the clear -> fog/night benchmark layout.
struct DatasetConfig {
  std::uint64_t seed = 1;
  int image_size = 96;
  int source_train = 200;
  int source_val = 50;
  int target_train = 200;
  int target_eval = 100;
  std::string target_domain = "fog";  // "fog" | "night"
  std::vector<double> fog_densities = {0.5, 0.9, 1.5};
  double fog_depth_near = 0.3;
  double fog_depth_far = 3.0;
  std::array<float, 3> fog_color = {0.78f, 0.80f, 0.84f};
  double night_gain_min = 0.25;
  double night_gain_max = 0.40;
  double night_noise_sigma = 0.02;
  double target_noise_sigma = 0.012;  // sensor noise on corrupted imagery
  int min_objects = 3;
  int max_objects = 7;
  double min_size = 6.0;
  double max_size = 40.0;
};

/// Writes source_train/source_val/target_train/target_eval splits under root.
/// Target entries keep their ground truth in the manifest for held-out
/// evaluation; training code must not read it.
std::vector<DatasetManifest> generate_dataset(const std::filesystem::path& root,
                                              const DatasetConfig& cfg);

}  // namespace adt::synth
