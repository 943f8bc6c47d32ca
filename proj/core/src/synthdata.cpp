#include "adt/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adt::synth {

namespace {

enum StreamId : std::uint64_t {
  kBackground = 0x11,
  kObjects = 0x22,
  kPixelNoise = 0x33,
  kScene = 0x44,
  kCorruption = 0x55,
};

struct ObjectInst {
  int cls = 0;
  double cx = 0, cy = 0;
  double w = 0, h = 0;  // full extents of the tight box
  std::array<double, 3> color{};
};

constexpr std::array<std::array<double, 3>, kNumClasses> kBaseColors = {{
    {0.85, 0.25, 0.25},  // disk
    {0.25, 0.78, 0.30},  // square
    {0.30, 0.40, 0.90},  // triangle
    {0.90, 0.84, 0.30},  // ring
    {0.82, 0.30, 0.80},  // bar
}};

bool inside_shape(const ObjectInst& o, double px, double py) {
  const double dx = px - o.cx;
  const double dy = py - o.cy;
  switch (o.cls) {
    case 0: {  // disk
      const double r = o.w * 0.5;
      return dx * dx + dy * dy <= r * r;
    }
    case 1:  // square
      return std::abs(dx) <= o.w * 0.5 && std::abs(dy) <= o.h * 0.5;
    case 2: {  // up-pointing triangle
      if (dy < -o.h * 0.5 || dy > o.h * 0.5) return false;
      const double frac = (dy + o.h * 0.5) / o.h;  // 0 at apex, 1 at base
      return std::abs(dx) <= o.w * 0.5 * frac;
    }
    case 3: {  // ring
      const double r_out = o.w * 0.5;
      const double r_in = r_out * 0.5;
      const double d2 = dx * dx + dy * dy;
      return d2 <= r_out * r_out && d2 >= r_in * r_in;
    }
    case 4:  // horizontal bar
      return std::abs(dx) <= o.w * 0.5 && std::abs(dy) <= o.h * 0.5;
    default:
      return false;
  }
}

// 3x3 supersampled coverage of one pixel.
double coverage(const ObjectInst& o, int x, int y) {
  int hit = 0;
  for (int sy = 0; sy < 3; ++sy)
    for (int sx = 0; sx < 3; ++sx)
      if (inside_shape(o, x + (sx + 0.5) / 3.0, y + (sy + 0.5) / 3.0)) ++hit;
  return hit / 9.0;
}

ImageTensor render_background(const SceneSpec& spec, Rng& rng) {
  const int cells = std::max(2, spec.bg_cells);
  // per-cell values, bilinearly upsampled
  std::vector<std::array<double, 3>> grid(static_cast<std::size_t>(cells) * cells);
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(-0.03, 0.03);
  for (auto& cell : grid) {
    const double g = spec.bg_base + rng.uniform(-spec.bg_variation, spec.bg_variation);
    for (int c = 0; c < 3; ++c) cell[c] = std::clamp(g + tint[c], 0.02, 0.98);
  }
  ImageTensor img(spec.height, spec.width, 3);
  for (int y = 0; y < spec.height; ++y) {
    const double gy = (y + 0.5) / spec.height * (cells - 1);
    const int y0 = std::min(static_cast<int>(gy), cells - 2);
    const double wy = gy - y0;
    for (int x = 0; x < spec.width; ++x) {
      const double gx = (x + 0.5) / spec.width * (cells - 1);
      const int x0 = std::min(static_cast<int>(gx), cells - 2);
      const double wx = gx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * grid[y0 * cells + x0][c] + wx * grid[y0 * cells + x0 + 1][c];
        const double bot =
            (1 - wx) * grid[(y0 + 1) * cells + x0][c] + wx * grid[(y0 + 1) * cells + x0 + 1][c];
        img.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return img;
}

Box tight_box(const ObjectInst& o) {
  return {o.cx - o.w * 0.5, o.cy - o.h * 0.5, o.cx + o.w * 0.5, o.cy + o.h * 0.5};
}

}  // namespace

const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"disk", "square", "triangle", "ring", "bar"};
  return names;
}

SceneRender generate_scene(const SceneSpec& spec) {
  if (spec.object_count < 0) throw std::invalid_argument("generate_scene: negative object count");
  if (spec.min_size <= 0 || spec.max_size < spec.min_size)
    throw std::invalid_argument("generate_scene: bad size range");

  Rng bg_rng = Rng::derive(spec.seed, kBackground);
  Rng obj_rng = Rng::derive(spec.seed, kObjects);
  Rng noise_rng = Rng::derive(spec.seed, kPixelNoise);

  ImageTensor img = render_background(spec, bg_rng);
  LabeledBoxes labels;

  std::vector<ObjectInst> placed;
  for (int n = 0; n < spec.object_count; ++n) {
    ObjectInst o;
    o.cls = obj_rng.uniform_int(0, kNumClasses - 1);
    const double s = std::exp(obj_rng.uniform(std::log(spec.min_size), std::log(spec.max_size)));
    o.w = s;
    o.h = s;
    if (o.cls == 4) {  // bars are elongated; s is the long side
      o.w = std::max(s, 6.0);
      o.h = std::max(3.0, s / 3.0);
    }
    for (int c = 0; c < 3; ++c)
      o.color[c] = std::clamp(kBaseColors[o.cls][c] + obj_rng.uniform(-0.08, 0.08), 0.05, 0.95);

    const double mx = o.w * 0.5 + 1.0;
    const double my = o.h * 0.5 + 1.0;
    if (2 * mx >= spec.width || 2 * my >= spec.height)
      throw std::runtime_error("generate_scene: object cannot fit in image");

    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      o.cx = obj_rng.uniform(mx, spec.width - mx);
      o.cy = obj_rng.uniform(my, spec.height - my);
      ok = true;
      for (const ObjectInst& p : placed) {
        if (iou(tight_box(o), tight_box(p)) > spec.max_overlap_iou) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) throw std::runtime_error("generate_scene: could not place object without overlap");
    placed.push_back(o);
  }

  for (const ObjectInst& o : placed) {
    const Box b = tight_box(o);
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x_min)) - 1);
    const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(b.x_max)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y_min)) - 1);
    const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(b.y_max)) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double cov = coverage(o, x, y);
        if (cov <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          const double v = (1.0 - cov) * img.at(y, x, c) + cov * o.color[c];
          img.at(y, x, c) = static_cast<float>(v);
        }
      }
    }
    labels.push_back(b, o.cls);
  }

  if (spec.pixel_noise > 0) {
    for (float& v : img.data)
      v = static_cast<float>(v + noise_rng.uniform(-spec.pixel_noise, spec.pixel_noise));
  }
  return {clamp01(std::move(img)), std::move(labels)};
}

ImageTensor vertical_depth_map(int h, int w, double near, double far) {
  ImageTensor depth(h, w, 1);
  for (int y = 0; y < h; ++y) {
    const double t = (y + 0.5) / h;  // 0 at top (far), 1 at bottom (near)
    const float d = static_cast<float>(far + (near - far) * t);
    for (int x = 0; x < w; ++x) depth.at(y, x, 0) = d;
  }
  return depth;
}

ImageTensor apply_fog(const ImageTensor& img, double density, const ImageTensor& depth,
                      const std::array<float, 3>& fog_color) {
  if (density < 0) throw std::invalid_argument("apply_fog: density must be >= 0");
  if (depth.height != img.height || depth.width != img.width || depth.channels != 1)
    throw std::invalid_argument("apply_fog: depth map shape mismatch");
  ImageTensor out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double t = std::exp(-density * depth.at(y, x, 0));
      for (int c = 0; c < img.channels; ++c) {
        const double v = img.at(y, x, c) * t + fog_color[c % 3] * (1.0 - t);
        out.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

ImageTensor apply_night(const ImageTensor& img, double gain, double noise_sigma, Rng& rng) {
  if (!(gain > 0.0) || gain > 1.0) throw std::invalid_argument("apply_night: gain must be in (0,1]");
  if (noise_sigma < 0) throw std::invalid_argument("apply_night: sigma must be >= 0");
  ImageTensor out(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double v = img.data[i] * gain;
    if (noise_sigma > 0) v += noise_sigma * rng.gaussian();
    out.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

namespace {

void write_box_line(std::ostream& os, int cls, const Box& b) {
  os.precision(17);
  os << "label " << cls << " " << b.x_min << " " << b.y_min << " " << b.x_max << " " << b.y_max
     << "\n";
}

}  // namespace

void write_dataset(const std::filesystem::path& root, const DatasetManifest& manifest,
                   const std::vector<ImageTensor>& images) {
  if (images.size() != manifest.entries.size())
    throw std::invalid_argument("write_dataset: image/entry count mismatch");
  std::filesystem::create_directories(root / "images");
  for (std::size_t i = 0; i < images.size(); ++i)
    write_ppm((root / manifest.entries[i].image_path).string(), images[i]);

  const std::filesystem::path mpath = root / (manifest.split + ".manifest");
  std::ofstream f(mpath);
  if (!f) throw std::runtime_error("write_dataset: cannot open " + mpath.string());
  f << "adt-dataset 1\n";
  f << "split " << manifest.split << "\n";
  f << "domain " << manifest.domain << "\n";
  f << "classes";
  for (const std::string& n : manifest.class_names) f << " " << n;
  f << "\n";
  for (const ManifestEntry& e : manifest.entries) {
    const std::size_t n = e.labels ? e.labels->size() : 0;
    f << "image " << e.image_path << " " << e.domain << " " << n << "\n";
    for (std::size_t j = 0; j < n; ++j) write_box_line(f, e.labels->classes[j], e.labels->boxes[j]);
  }
  if (!f) throw std::runtime_error("write_dataset: write failed for " + mpath.string());
}

DatasetManifest read_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("read_dataset: cannot open " + manifest_path.string());
  std::string word;
  int version = 0;
  f >> word >> version;
  if (word != "adt-dataset" || version != 1)
    throw std::runtime_error("read_dataset: bad manifest header in " + manifest_path.string());

  DatasetManifest m;
  f >> word >> m.split;
  if (word != "split") throw std::runtime_error("read_dataset: expected 'split'");
  f >> word >> m.domain;
  if (word != "domain") throw std::runtime_error("read_dataset: expected 'domain'");
  f >> word;
  if (word != "classes") throw std::runtime_error("read_dataset: expected 'classes'");
  std::string rest;
  std::getline(f, rest);
  std::istringstream cls_line(rest);
  while (cls_line >> word) m.class_names.push_back(word);
  const int num_classes = static_cast<int>(m.class_names.size());

  while (f >> word) {
    if (word != "image")
      throw std::runtime_error("read_dataset: expected 'image', got '" + word + "'");
    ManifestEntry e;
    std::size_t n = 0;
    if (!(f >> e.image_path >> e.domain >> n))
      throw std::runtime_error("read_dataset: truncated image record");
    if (e.domain != m.domain)
      throw std::runtime_error("read_dataset: domain mismatch in record " + e.image_path);
    if (n > 0 || e.domain == "source") e.labels.emplace();
    for (std::size_t j = 0; j < n; ++j) {
      int cls = 0;
      Box b;
      if (!(f >> word >> cls >> b.x_min >> b.y_min >> b.x_max >> b.y_max) || word != "label")
        throw std::runtime_error("read_dataset: truncated label in record " + e.image_path);
      if (cls < 0 || cls >= num_classes)
        throw std::runtime_error("read_dataset: invalid class in record " + e.image_path);
      if (b.x_min < 0 || b.y_min < 0 || !b.valid())
        throw std::runtime_error("read_dataset: invalid box in record " + e.image_path);
      e.labels->push_back(b, cls);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

ImageTensor load_image(const std::filesystem::path& manifest_path, const ManifestEntry& entry) {
  return read_ppm((manifest_path.parent_path() / entry.image_path).string());
}

namespace {

std::string image_name(const std::string& split, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "images/%s_%04d.ppm", split.c_str(), index);
  return buf;
}

}  // namespace

std::vector<DatasetManifest> generate_dataset(const std::filesystem::path& root,
                                              const DatasetConfig& cfg) {
  if (cfg.target_domain != "fog" && cfg.target_domain != "night")
    throw std::invalid_argument("generate_dataset: target_domain must be fog or night");

  struct SplitPlan {
    std::string name;
    std::string domain;
    int count;
    std::uint64_t stream;
    bool corrupt;
  };
  const std::vector<SplitPlan> plan = {
      {"source_train", "source", cfg.source_train, 1, false},
      {"source_val", "source", cfg.source_val, 2, false},
      {"target_train", "target", cfg.target_train, 3, true},
      {"target_eval", "target", cfg.target_eval, 4, true},
  };

  const ImageTensor depth =
      vertical_depth_map(cfg.image_size, cfg.image_size, cfg.fog_depth_near, cfg.fog_depth_far);

  std::vector<DatasetManifest> manifests;
  for (const SplitPlan& sp : plan) {
    DatasetManifest m;
    m.split = sp.name;
    m.domain = sp.domain;
    m.class_names = default_class_names();
    std::vector<ImageTensor> images;
    images.reserve(sp.count);
    for (int i = 0; i < sp.count; ++i) {
      Rng scene_rng = Rng::derive(cfg.seed, kScene + (sp.stream << 8), i);
      SceneSpec spec;
      spec.seed = scene_rng.next_u64();
      spec.height = cfg.image_size;
      spec.width = cfg.image_size;
      spec.object_count = scene_rng.uniform_int(cfg.min_objects, cfg.max_objects);
      spec.min_size = cfg.min_size;
      spec.max_size = cfg.max_size;
      SceneRender scene = generate_scene(spec);

      ImageTensor img = std::move(scene.image);
      if (sp.corrupt) {
        Rng cr = Rng::derive(cfg.seed, kCorruption + (sp.stream << 8), i);
        if (cfg.target_domain == "fog") {
          const double density = cfg.fog_densities[i % cfg.fog_densities.size()];
          img = apply_fog(img, density, depth, cfg.fog_color);
          if (cfg.target_noise_sigma > 0)
            img = apply_night(img, 1.0, cfg.target_noise_sigma, cr);
        } else {
          const double gain = cr.uniform(cfg.night_gain_min, cfg.night_gain_max);
          img = apply_night(img, gain, cfg.night_noise_sigma, cr);
        }
      }
      ManifestEntry e;
      e.image_path = image_name(sp.name, i);
      e.domain = sp.domain;
      e.labels = scene.labels;  // target labels are held out for evaluation only
      images.push_back(std::move(img));
      m.entries.push_back(std::move(e));
    }
    write_dataset(root, m, images);
    manifests.push_back(std::move(m));
  }
  return manifests;
}

}  // namespace adt::synth
