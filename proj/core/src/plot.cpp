#include "adt/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace adt::plot {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMargin = 48;

struct Color {
  float r, g, b;
};

constexpr Color kPalette[] = {
    {0.85f, 0.25f, 0.25f}, {0.20f, 0.45f, 0.85f}, {0.20f, 0.65f, 0.30f},
    {0.85f, 0.60f, 0.15f}, {0.55f, 0.30f, 0.75f}, {0.15f, 0.60f, 0.60f},
};

void put_pixel(ImageTensor& img, int x, int y, const Color& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  img.at(y, x, 0) = c.r;
  img.at(y, x, 1) = c.g;
  img.at(y, x, 2) = c.b;
}

void draw_line(ImageTensor& img, double x0, double y0, double x1, double y1, const Color& c) {
  const int steps = std::max(1, static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    put_pixel(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))),
              static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
  }
}

void fill_rect(ImageTensor& img, int x0, int y0, int x1, int y1, const Color& c) {
  for (int y = std::max(0, y0); y <= std::min(img.height - 1, y1); ++y)
    for (int x = std::max(0, x0); x <= std::min(img.width - 1, x1); ++x) put_pixel(img, x, y, c);
}

struct Frame {
  double x_min, x_max, y_min, y_max;

  double px(double x) const {
    const double span = x_max > x_min ? x_max - x_min : 1.0;
    return kMargin + (x - x_min) / span * (kWidth - 2 * kMargin);
  }
  double py(double y) const {
    const double span = y_max > y_min ? y_max - y_min : 1.0;
    return kHeight - kMargin - (y - y_min) / span * (kHeight - 2 * kMargin);
  }
};

ImageTensor blank_canvas() {
  ImageTensor img(kHeight, kWidth, 3, 1.0f);
  const Color axis{0.1f, 0.1f, 0.1f};
  draw_line(img, kMargin, kHeight - kMargin, kWidth - kMargin, kHeight - kMargin, axis);
  draw_line(img, kMargin, kMargin, kMargin, kHeight - kMargin, axis);
  return img;
}

}  // namespace

void render_lines(const std::string& ppm_path, const std::string& sidecar_path,
                  const std::vector<Series>& series, const std::string& x_label,
                  const std::string& y_label) {
  if (series.empty()) throw std::invalid_argument("render_lines: no series");
  Frame fr{1e300, -1e300, 1e300, -1e300};
  for (const Series& s : series) {
    if (s.x.size() != s.y.size() || s.x.empty())
      throw std::invalid_argument("render_lines: bad series '" + s.name + "'");
    for (double v : s.x) {
      fr.x_min = std::min(fr.x_min, v);
      fr.x_max = std::max(fr.x_max, v);
    }
    for (double v : s.y) {
      fr.y_min = std::min(fr.y_min, v);
      fr.y_max = std::max(fr.y_max, v);
    }
  }
  if (fr.y_min > 0 && fr.y_min < 0.5 * (fr.y_max - fr.y_min)) fr.y_min = 0;

  ImageTensor img = blank_canvas();
  for (std::size_t si = 0; si < series.size(); ++si) {
    const Color& c = kPalette[si % std::size(kPalette)];
    const Series& s = series[si];
    for (std::size_t i = 1; i < s.x.size(); ++i)
      draw_line(img, fr.px(s.x[i - 1]), fr.py(s.y[i - 1]), fr.px(s.x[i]), fr.py(s.y[i]), c);
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const int cx = static_cast<int>(std::lround(fr.px(s.x[i])));
      const int cy = static_cast<int>(std::lround(fr.py(s.y[i])));
      fill_rect(img, cx - 1, cy - 1, cx + 1, cy + 1, c);
    }
  }
  write_ppm(ppm_path, img);

  nlohmann::json j;
  j["type"] = "lines";
  j["x_label"] = x_label;
  j["y_label"] = y_label;
  nlohmann::json arr = nlohmann::json::array();
  for (const Series& s : series) {
    nlohmann::json e;
    e["name"] = s.name;
    e["x"] = s.x;
    e["y"] = s.y;
    arr.push_back(e);
  }
  j["series"] = arr;
  std::ofstream f(sidecar_path);
  if (!f) throw std::runtime_error("render_lines: cannot open " + sidecar_path);
  f << j.dump(2) << "\n";
}

void render_bars(const std::string& ppm_path, const std::string& sidecar_path,
                 std::vector<Bar> bars, const std::string& x_label, const std::string& y_label) {
  if (bars.empty()) throw std::invalid_argument("render_bars: no bars");
  std::sort(bars.begin(), bars.end(), [](const Bar& a, const Bar& b) { return a.x < b.x; });

  double y_max = 0.0;
  for (const Bar& b : bars) y_max = std::max(y_max, b.y);
  if (y_max <= 0) y_max = 1.0;

  ImageTensor img = blank_canvas();
  const int n = static_cast<int>(bars.size());
  const int plot_w = kWidth - 2 * kMargin;
  const int slot = plot_w / std::max(1, n);
  for (int i = 0; i < n; ++i) {
    const int x0 = kMargin + i * slot + slot / 6;
    const int x1 = kMargin + (i + 1) * slot - slot / 6;
    const int y1 = kHeight - kMargin - 1;
    const int y0 = y1 - static_cast<int>((bars[i].y / y_max) * (kHeight - 2 * kMargin - 2));
    fill_rect(img, x0, y0, x1, y1, kPalette[i % std::size(kPalette)]);
  }
  write_ppm(ppm_path, img);

  nlohmann::json j;
  j["type"] = "bars";
  j["x_label"] = x_label;
  j["y_label"] = y_label;
  nlohmann::json arr = nlohmann::json::array();
  for (const Bar& b : bars) {
    nlohmann::json e;
    e["x"] = b.x;
    e["y"] = b.y;
    arr.push_back(e);
  }
  j["bars"] = arr;  // ascending x, matching the rendered order
  std::ofstream f(sidecar_path);
  if (!f) throw std::runtime_error("render_bars: cannot open " + sidecar_path);
  f << j.dump(2) << "\n";
}

}  // namespace adt::plot
