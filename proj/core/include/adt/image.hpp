#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adt {

/// H x W x C row-major float image. Pixel data lives in [0,1]; the same
/// container is reused for gradients and depth maps, where that range does
/// not apply.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const ImageTensor& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// Clamps every value into [0,1].
ImageTensor clamp01(ImageTensor img);

/// Bilinear resize with half-pixel center alignment.
ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w);

/// Binary PPM (P6) I/O. Stored values are round(clamp(v,0,1)*255); loading
/// dequantizes as q/255, so write-then-read is the documented quantization
/// and nothing else.
void write_ppm(const std::string& path, const ImageTensor& img);
ImageTensor read_ppm(const std::string& path);

}  // namespace adt
