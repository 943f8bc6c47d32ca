#include "adt/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "adt/rng.hpp"
#include "json.hpp"

namespace adt::det {

namespace {

// ---------------------------------------------------------------------------
// parameter layout

struct Layout {
  std::size_t conv1_w, conv1_b;
  std::size_t conv2_w, conv2_b;
  std::size_t conv3_w, conv3_b;
  std::size_t rpnc_w, rpnc_b;
  std::size_t obj_w, obj_b;
  std::size_t reg_w, reg_b;
  std::size_t fc1_w, fc1_b;
  std::size_t cls_w, cls_b;
  std::size_t off_w, off_b;
  std::size_t total;
};

Layout make_layout(const ArchSpec& a) {
  const std::size_t A = a.anchors.size();
  const std::size_t roi_in = static_cast<std::size_t>(a.feat_channels) * a.roi_pool * a.roi_pool;
  Layout l{};
  std::size_t off = 0;
  auto block = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  l.conv1_w = block(static_cast<std::size_t>(a.stem_channels) * a.in_channels * 9);
  l.conv1_b = block(a.stem_channels);
  l.conv2_w = block(static_cast<std::size_t>(a.mid_channels) * a.stem_channels * 9);
  l.conv2_b = block(a.mid_channels);
  l.conv3_w = block(static_cast<std::size_t>(a.feat_channels) * a.mid_channels * 9);
  l.conv3_b = block(a.feat_channels);
  l.rpnc_w = block(static_cast<std::size_t>(a.rpn_channels) * a.feat_channels * 9);
  l.rpnc_b = block(a.rpn_channels);
  l.obj_w = block(A * a.rpn_channels);
  l.obj_b = block(A);
  l.reg_w = block(4 * A * a.rpn_channels);
  l.reg_b = block(4 * A);
  l.fc1_w = block(static_cast<std::size_t>(a.roi_hidden) * roi_in);
  l.fc1_b = block(a.roi_hidden);
  l.cls_w = block(static_cast<std::size_t>(a.num_classes + 1) * a.roi_hidden);
  l.cls_b = block(a.num_classes + 1);
  l.off_w = block(static_cast<std::size_t>(4) * a.roi_hidden);
  l.off_b = block(4);
  l.total = off;
  return l;
}

// ---------------------------------------------------------------------------
// planar double tensors

struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
  double& at(int ci, int yi, int xi) { return v[(static_cast<std::size_t>(ci) * h + yi) * w + xi]; }
  double at(int ci, int yi, int xi) const {
    return v[(static_cast<std::size_t>(ci) * h + yi) * w + xi];
  }
};

void conv3x3_forward(const Tensor3& in, const float* w, const float* b, Tensor3& out) {
  for (int oc = 0; oc < out.c; ++oc) {
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        double acc = b[oc];
        for (int ic = 0; ic < in.c; ++ic) {
          const float* wk = w + (static_cast<std::size_t>(oc) * in.c + ic) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= in.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int xx = x + kx - 1;
              if (xx < 0 || xx >= in.w) continue;
              acc += wk[ky * 3 + kx] * in.at(ic, yy, xx);
            }
          }
        }
        out.at(oc, y, x) = acc;
      }
    }
  }
}

// d_out -> d_in, d_w, d_b. Any of the gradient outputs may be null.
void conv3x3_backward(const Tensor3& in, const float* w, const Tensor3& d_out, Tensor3* d_in,
                      double* d_w, double* d_b) {
  const int oc_n = d_out.c;
  for (int oc = 0; oc < oc_n; ++oc) {
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        const double g = d_out.at(oc, y, x);
        if (g == 0.0) continue;
        if (d_b) d_b[oc] += g;
        for (int ic = 0; ic < in.c; ++ic) {
          const std::size_t wbase = (static_cast<std::size_t>(oc) * in.c + ic) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= in.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int xx = x + kx - 1;
              if (xx < 0 || xx >= in.w) continue;
              if (d_w) d_w[wbase + ky * 3 + kx] += g * in.at(ic, yy, xx);
              if (d_in) d_in->at(ic, yy, xx) += g * w[wbase + ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

// leaky activations: hidden units stay trainable even when driven negative
constexpr double kLeakySlope = 0.1;

double leaky(double x) { return x > 0 ? x : kLeakySlope * x; }

void leaky_inplace(Tensor3& t) {
  for (double& x : t.v)
    if (x < 0) x *= kLeakySlope;
}

// gradient through the activation given post-activation values
void leaky_backward_inplace(Tensor3& grad, const Tensor3& post) {
  for (std::size_t i = 0; i < grad.v.size(); ++i)
    if (post.v[i] <= 0.0) grad.v[i] *= kLeakySlope;
}

Tensor3 avgpool2(const Tensor3& in) {
  Tensor3 out(in.c, in.h / 2, in.w / 2);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(c, y, x) = 0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                  in.at(c, 2 * y + 1, 2 * x) + in.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

Tensor3 avgpool2_backward(const Tensor3& d_out, int in_h, int in_w) {
  Tensor3 d_in(d_out.c, in_h, in_w);
  for (int c = 0; c < d_out.c; ++c)
    for (int y = 0; y < d_out.h; ++y)
      for (int x = 0; x < d_out.w; ++x) {
        const double g = 0.25 * d_out.at(c, y, x);
        d_in.at(c, 2 * y, 2 * x) += g;
        d_in.at(c, 2 * y, 2 * x + 1) += g;
        d_in.at(c, 2 * y + 1, 2 * x) += g;
        d_in.at(c, 2 * y + 1, 2 * x + 1) += g;
      }
  return d_in;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_grad(double d) { return d > 1.0 ? 1.0 : (d < -1.0 ? -1.0 : d); }

constexpr double kProbEps = 1e-12;
constexpr double kDecodeClamp = 4.0;  // bounds exp() in box decoding

struct Cache {
  Tensor3 x0, a1, p1, a2, p2, a3, feat, rpnh;
  std::vector<double> obj_logits;               // anchor-indexed
  std::vector<std::array<double, 4>> reg_raw;   // anchor-indexed
  std::vector<std::vector<double>> roi_flat;    // per roi, F*P*P
  std::vector<std::vector<double>> roi_hidden;  // per roi, post-relu
  std::vector<std::vector<double>> cls_logits;  // per roi, K+1
};

std::vector<Box> make_anchors(const ArchSpec& a, int feat_h, int feat_w) {
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * a.anchors.size());
  for (int fy = 0; fy < feat_h; ++fy) {
    for (int fx = 0; fx < feat_w; ++fx) {
      const double cx = (fx + 0.5) * ArchSpec::stride;
      const double cy = (fy + 0.5) * ArchSpec::stride;
      for (const AnchorShape& s : a.anchors)
        anchors.push_back({cx - s.w / 2, cy - s.h / 2, cx + s.w / 2, cy + s.h / 2});
    }
  }
  return anchors;
}

// clipping can flatten fully-outside proposals; keep a sliver so that IoU
// and pooling stay well defined
Box ensure_min_size(Box b, double img_w, double img_h, double min_side = 1e-3) {
  if (b.width() < min_side) {
    b.x_max = std::min(img_w, b.x_min + min_side);
    b.x_min = b.x_max - min_side;
  }
  if (b.height() < min_side) {
    b.y_max = std::min(img_h, b.y_min + min_side);
    b.y_min = b.y_max - min_side;
  }
  return b;
}

double finite_or(double v, double fallback) { return std::isfinite(v) ? v : fallback; }

Box decode_box(const Box& ref, const std::array<double, 4>& t, double img_w, double img_h) {
  const double aw = std::max(ref.width(), 1e-6);
  const double ah = std::max(ref.height(), 1e-6);
  const double cx =
      (ref.x_min + ref.x_max) / 2 + std::clamp(finite_or(t[0], 0.0), -kDecodeClamp, kDecodeClamp) * aw;
  const double cy =
      (ref.y_min + ref.y_max) / 2 + std::clamp(finite_or(t[1], 0.0), -kDecodeClamp, kDecodeClamp) * ah;
  const double w = aw * std::exp(std::clamp(finite_or(t[2], 0.0), -kDecodeClamp, kDecodeClamp));
  const double h = ah * std::exp(std::clamp(finite_or(t[3], 0.0), -kDecodeClamp, kDecodeClamp));
  return ensure_min_size(clip_box({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, img_w, img_h),
                         img_w, img_h);
}

std::array<double, 4> encode_offsets(const Box& ref, const Box& gt) {
  const double aw = std::max(ref.width(), 1e-6);
  const double ah = std::max(ref.height(), 1e-6);
  const double gw = std::max(gt.width(), 1e-6);
  const double gh = std::max(gt.height(), 1e-6);
  return {((gt.x_min + gt.x_max) / 2 - (ref.x_min + ref.x_max) / 2) / aw,
          ((gt.y_min + gt.y_max) / 2 - (ref.y_min + ref.y_max) / 2) / ah, std::log(gw / aw),
          std::log(gh / ah)};
}

// bilinear sample of one feature channel at continuous feature coords
double roi_sample(const Tensor3& feat, int c, double u, double v) {
  const double uu = std::clamp(u, 0.0, static_cast<double>(feat.w - 1));
  const double vv = std::clamp(v, 0.0, static_cast<double>(feat.h - 1));
  const int x0 = static_cast<int>(uu);
  const int y0 = static_cast<int>(vv);
  const int x1 = std::min(x0 + 1, feat.w - 1);
  const int y1 = std::min(y0 + 1, feat.h - 1);
  const double wx = uu - x0, wy = vv - y0;
  return (1 - wy) * ((1 - wx) * feat.at(c, y0, x0) + wx * feat.at(c, y0, x1)) +
         wy * ((1 - wx) * feat.at(c, y1, x0) + wx * feat.at(c, y1, x1));
}

void roi_sample_backward(Tensor3& d_feat, int c, double u, double v, double g) {
  const double uu = std::clamp(u, 0.0, static_cast<double>(d_feat.w - 1));
  const double vv = std::clamp(v, 0.0, static_cast<double>(d_feat.h - 1));
  const int x0 = static_cast<int>(uu);
  const int y0 = static_cast<int>(vv);
  const int x1 = std::min(x0 + 1, d_feat.w - 1);
  const int y1 = std::min(y0 + 1, d_feat.h - 1);
  const double wx = uu - x0, wy = vv - y0;
  d_feat.at(c, y0, x0) += g * (1 - wy) * (1 - wx);
  d_feat.at(c, y0, x1) += g * (1 - wy) * wx;
  d_feat.at(c, y1, x0) += g * wy * (1 - wx);
  d_feat.at(c, y1, x1) += g * wy * wx;
}

// sample coordinate (feature units) of bin p within [lo, hi] split into P bins
double bin_coord(double lo, double hi, int p, int bins) {
  const double span = std::max(hi - lo, 1e-6);
  return (lo + (p + 0.5) * span / bins) / ArchSpec::stride - 0.5;
}

struct ForwardData {
  DetectorOutputs out;
  Cache cache;
};

void run_forward(const ModelState& state, const ImageTensor& img,
                 const std::vector<Box>* pinned_rois, bool keep_cache, ForwardData& fd) {
  const ArchSpec& a = state.arch;
  if (img.channels != a.in_channels) throw std::invalid_argument("forward: channel mismatch");
  if (img.height < ArchSpec::stride || img.width < ArchSpec::stride)
    throw std::invalid_argument("forward: image smaller than the detector stride");
  if (state.params.size() != a.param_count())
    throw std::invalid_argument("forward: parameter vector does not match descriptor");

  const Layout L = make_layout(a);
  const float* P = state.params.data();
  Cache& c = fd.cache;

  c.x0 = Tensor3(a.in_channels, img.height, img.width);
  const double inv_std = 1.0 / a.input_std;
  for (int ch = 0; ch < a.in_channels; ++ch)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        c.x0.at(ch, y, x) = (img.at(y, x, ch) - a.input_mean) * inv_std;

  c.a1 = Tensor3(a.stem_channels, img.height, img.width);
  conv3x3_forward(c.x0, P + L.conv1_w, P + L.conv1_b, c.a1);
  leaky_inplace(c.a1);
  c.p1 = avgpool2(c.a1);

  c.a2 = Tensor3(a.mid_channels, c.p1.h, c.p1.w);
  conv3x3_forward(c.p1, P + L.conv2_w, P + L.conv2_b, c.a2);
  leaky_inplace(c.a2);
  c.p2 = avgpool2(c.a2);

  c.a3 = Tensor3(a.feat_channels, c.p2.h, c.p2.w);
  conv3x3_forward(c.p2, P + L.conv3_w, P + L.conv3_b, c.a3);
  leaky_inplace(c.a3);
  c.feat = avgpool2(c.a3);

  c.rpnh = Tensor3(a.rpn_channels, c.feat.h, c.feat.w);
  conv3x3_forward(c.feat, P + L.rpnc_w, P + L.rpnc_b, c.rpnh);
  leaky_inplace(c.rpnh);

  DetectorOutputs& out = fd.out;
  out.feat_h = c.feat.h;
  out.feat_w = c.feat.w;
  const int A = static_cast<int>(a.anchors.size());
  const std::size_t n_anchors = static_cast<std::size_t>(c.feat.h) * c.feat.w * A;
  out.anchors = make_anchors(a, c.feat.h, c.feat.w);
  out.objectness.resize(n_anchors);
  out.rpn_offsets.resize(n_anchors);
  c.obj_logits.resize(n_anchors);
  c.reg_raw.resize(n_anchors);

  for (int fy = 0; fy < c.feat.h; ++fy) {
    for (int fx = 0; fx < c.feat.w; ++fx) {
      for (int an = 0; an < A; ++an) {
        const std::size_t i = (static_cast<std::size_t>(fy) * c.feat.w + fx) * A + an;
        double zo = P[L.obj_b + an];
        std::array<double, 4> zr{};
        for (int k = 0; k < 4; ++k) zr[k] = P[L.reg_b + 4 * an + k];
        for (int r = 0; r < a.rpn_channels; ++r) {
          const double h = c.rpnh.at(r, fy, fx);
          zo += P[L.obj_w + static_cast<std::size_t>(an) * a.rpn_channels + r] * h;
          for (int k = 0; k < 4; ++k)
            zr[k] += P[L.reg_w + (static_cast<std::size_t>(4) * an + k) * a.rpn_channels + r] * h;
        }
        c.obj_logits[i] = zo;
        c.reg_raw[i] = zr;
        out.objectness[i] = sigmoid(zo);
        out.rpn_offsets[i] = zr;
      }
    }
  }

  // proposals: deterministic top-k by objectness, frozen box selection
  if (pinned_rois) {
    out.rois = *pinned_rois;
  } else {
    std::vector<std::size_t> order(n_anchors);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min<std::size_t>(a.num_proposals, n_anchors);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::size_t x, std::size_t y) {
                        if (c.obj_logits[x] != c.obj_logits[y])
                          return c.obj_logits[x] > c.obj_logits[y];
                        return x < y;
                      });
    out.rois.reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t i = order[r];
      out.rois.push_back(
          decode_box(out.anchors[i], c.reg_raw[i], img.width, img.height));
    }
  }

  // ROI head
  const int P2 = a.roi_pool;
  const std::size_t roi_in = static_cast<std::size_t>(a.feat_channels) * P2 * P2;
  const std::size_t n_rois = out.rois.size();
  out.class_probs.resize(n_rois);
  out.roi_offsets.resize(n_rois);
  c.roi_flat.resize(n_rois);
  c.roi_hidden.resize(n_rois);
  c.cls_logits.resize(n_rois);

  for (std::size_t j = 0; j < n_rois; ++j) {
    const Box& b = out.rois[j];
    std::vector<double>& flat = c.roi_flat[j];
    flat.resize(roi_in);
    std::size_t idx = 0;
    for (int ch = 0; ch < a.feat_channels; ++ch)
      for (int py = 0; py < P2; ++py)
        for (int px = 0; px < P2; ++px)
          flat[idx++] = roi_sample(c.feat, ch, bin_coord(b.x_min, b.x_max, px, P2),
                                   bin_coord(b.y_min, b.y_max, py, P2));

    std::vector<double>& hid = c.roi_hidden[j];
    hid.assign(a.roi_hidden, 0.0);
    for (int hn = 0; hn < a.roi_hidden; ++hn) {
      double acc = P[L.fc1_b + hn];
      const float* wrow = P + L.fc1_w + static_cast<std::size_t>(hn) * roi_in;
      for (std::size_t q = 0; q < roi_in; ++q) acc += wrow[q] * flat[q];
      hid[hn] = leaky(acc);
    }

    std::vector<double>& cl = c.cls_logits[j];
    cl.assign(a.num_classes + 1, 0.0);
    for (int k = 0; k <= a.num_classes; ++k) {
      double acc = P[L.cls_b + k];
      const float* wrow = P + L.cls_w + static_cast<std::size_t>(k) * a.roi_hidden;
      for (int hn = 0; hn < a.roi_hidden; ++hn) acc += wrow[hn] * hid[hn];
      cl[k] = acc;
    }
    std::array<double, 4> off{};
    for (int k = 0; k < 4; ++k) {
      double acc = P[L.off_b + k];
      const float* wrow = P + L.off_w + static_cast<std::size_t>(k) * a.roi_hidden;
      for (int hn = 0; hn < a.roi_hidden; ++hn) acc += wrow[hn] * hid[hn];
      off[k] = acc;
    }
    out.roi_offsets[j] = off;

    // softmax
    std::vector<double>& probs = out.class_probs[j];
    probs.assign(a.num_classes + 1, 0.0);
    const double mx = *std::max_element(cl.begin(), cl.end());
    double denom = 0.0;
    for (int k = 0; k <= a.num_classes; ++k) denom += std::exp(cl[k] - mx);
    for (int k = 0; k <= a.num_classes; ++k) probs[k] = std::exp(cl[k] - mx) / denom;
  }

  if (!keep_cache) fd.cache = Cache{};
}

}  // namespace

// ---------------------------------------------------------------------------
// public surface

std::size_t ArchSpec::param_count() const { return make_layout(*this).total; }

std::string ArchSpec::to_json() const {
  nlohmann::json j;
  j["in_channels"] = in_channels;
  j["stem_channels"] = stem_channels;
  j["mid_channels"] = mid_channels;
  j["feat_channels"] = feat_channels;
  j["rpn_channels"] = rpn_channels;
  nlohmann::json an = nlohmann::json::array();
  for (const AnchorShape& s : anchors) an.push_back({s.w, s.h});
  j["anchors"] = an;
  j["num_classes"] = num_classes;
  j["num_proposals"] = num_proposals;
  j["roi_pool"] = roi_pool;
  j["roi_hidden"] = roi_hidden;
  j["input_mean"] = input_mean;
  j["input_std"] = input_std;
  return j.dump();
}

ArchSpec ArchSpec::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ArchSpec a;
  a.in_channels = j.at("in_channels").get<int>();
  a.stem_channels = j.at("stem_channels").get<int>();
  a.mid_channels = j.at("mid_channels").get<int>();
  a.feat_channels = j.at("feat_channels").get<int>();
  a.rpn_channels = j.at("rpn_channels").get<int>();
  a.anchors.clear();
  for (const auto& s : j.at("anchors")) a.anchors.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
  a.num_classes = j.at("num_classes").get<int>();
  a.num_proposals = j.at("num_proposals").get<int>();
  a.roi_pool = j.at("roi_pool").get<int>();
  a.roi_hidden = j.at("roi_hidden").get<int>();
  a.input_mean = j.at("input_mean").get<double>();
  a.input_std = j.at("input_std").get<double>();
  return a;
}

ModelState ModelState::init(const ArchSpec& arch, std::uint64_t seed) {
  const Layout L = make_layout(arch);
  ModelState s;
  s.arch = arch;
  s.params.assign(L.total, 0.0f);
  Rng rng = Rng::derive(seed, 0xde7ec7);

  auto fill = [&](std::size_t off, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i)
      s.params[off + i] = static_cast<float>(rng.gaussian() * stddev);
  };
  const std::size_t A = arch.anchors.size();
  const std::size_t roi_in = static_cast<std::size_t>(arch.feat_channels) * arch.roi_pool * arch.roi_pool;
  fill(L.conv1_w, static_cast<std::size_t>(arch.stem_channels) * arch.in_channels * 9,
       std::sqrt(2.0 / (arch.in_channels * 9)));
  fill(L.conv2_w, static_cast<std::size_t>(arch.mid_channels) * arch.stem_channels * 9,
       std::sqrt(2.0 / (arch.stem_channels * 9)));
  fill(L.conv3_w, static_cast<std::size_t>(arch.feat_channels) * arch.mid_channels * 9,
       std::sqrt(2.0 / (arch.mid_channels * 9)));
  fill(L.rpnc_w, static_cast<std::size_t>(arch.rpn_channels) * arch.feat_channels * 9,
       std::sqrt(2.0 / (arch.feat_channels * 9)));
  fill(L.obj_w, A * arch.rpn_channels, 0.01);
  fill(L.reg_w, 4 * A * arch.rpn_channels, 0.01);
  fill(L.fc1_w, static_cast<std::size_t>(arch.roi_hidden) * roi_in, std::sqrt(2.0 / roi_in));
  fill(L.cls_w, static_cast<std::size_t>(arch.num_classes + 1) * arch.roi_hidden, 0.01);
  fill(L.off_w, static_cast<std::size_t>(4) * arch.roi_hidden, 0.01);
  // a low objectness prior keeps the early proposal set from saturating
  for (std::size_t i = 0; i < A; ++i) s.params[L.obj_b + i] = -2.0f;
  return s;
}

BoxMatch match(const std::vector<Box>& candidates, const LabeledBoxes& gt, double iou_pos,
               double iou_neg, bool class_aware, bool force_best_per_gt) {
  if (!(0.0 <= iou_neg && iou_neg <= iou_pos && iou_pos <= 1.0))
    throw std::invalid_argument("match: need 0 <= iou_neg <= iou_pos <= 1");
  BoxMatch m;
  m.labels.assign(candidates.size(), 0);
  m.targets.assign(candidates.size(), {0, 0, 0, 0});

  std::vector<double> best_iou(candidates.size(), 0.0);
  std::vector<int> best_gt(candidates.size(), -1);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(candidates[i], gt.boxes[g]);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        best_gt[i] = static_cast<int>(g);
      }
    }
  }

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (class_aware) {
      if (best_gt[i] >= 0 && best_iou[i] >= iou_pos) {
        m.labels[i] = 1 + gt.classes[best_gt[i]];
        m.targets[i] = encode_offsets(candidates[i], gt.boxes[best_gt[i]]);
      } else {
        m.labels[i] = 0;  // background
      }
    } else {
      if (best_gt[i] >= 0 && best_iou[i] >= iou_pos)
        m.labels[i] = 1;
      else if (best_iou[i] < iou_neg)
        m.labels[i] = 0;
      else
        m.labels[i] = -1;
      if (m.labels[i] == 1) m.targets[i] = encode_offsets(candidates[i], gt.boxes[best_gt[i]]);
    }
  }

  if (force_best_per_gt && !class_aware) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      int best = -1;
      double best_v = 0.0;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double v = iou(candidates[i], gt.boxes[g]);
        if (v > best_v) {
          best_v = v;
          best = static_cast<int>(i);
        }
      }
      if (best >= 0) {
        m.labels[best] = 1;
        m.targets[best] = encode_offsets(candidates[best], gt.boxes[g]);
      }
    }
  }
  return m;
}

AnchorAssignment assign_targets(const DetectorOutputs& out, const LabeledBoxes& gt,
                                const MatchConfig& mc) {
  AnchorAssignment asg;
  BoxMatch rpn = match(out.anchors, gt, mc.rpn_pos, mc.rpn_neg, false, true);
  asg.rpn_labels = std::move(rpn.labels);
  asg.rpn_targets = std::move(rpn.targets);
  BoxMatch roi = match(out.rois, gt, mc.roi_fg, mc.roi_fg, true, false);
  asg.roi_labels = std::move(roi.labels);
  asg.roi_targets = std::move(roi.targets);
  return asg;
}

LossTerms detection_loss_terms(const DetectorOutputs& out, const AnchorAssignment& asg,
                               bool foreground_only, LossParts parts, double label_smoothing) {
  if (asg.rpn_labels.size() != out.objectness.size() || asg.roi_labels.size() != out.rois.size())
    throw std::invalid_argument("detection_loss_terms: assignment does not match outputs");
  LossTerms t;
  const bool want_cls = parts != LossParts::reg_only;
  const bool want_reg = parts != LossParts::cls_only;
  const double ls = label_smoothing;

  if (want_cls) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < out.objectness.size(); ++i) {
      const int lab = asg.rpn_labels[i];
      if (lab < 0) continue;
      if (foreground_only && lab != 1) continue;
      const double p = std::clamp(out.objectness[i], kProbEps, 1.0 - kProbEps);
      const double y = (lab == 1 ? 1.0 : 0.0) * (1.0 - ls) + 0.5 * ls;
      sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
      ++n;
    }
    t.rpn_cls = n ? sum / static_cast<double>(n) : 0.0;
  }
  if (want_reg) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < out.objectness.size(); ++i) {
      if (asg.rpn_labels[i] != 1) continue;
      for (int k = 0; k < 4; ++k) sum += smooth_l1(out.rpn_offsets[i][k] - asg.rpn_targets[i][k]);
      ++n;
    }
    t.rpn_reg = n ? sum / static_cast<double>(n) : 0.0;
  }
  if (want_cls) {
    double sum = 0.0;
    std::size_t n = 0;
    const int kk = out.class_probs.empty() ? 0 : static_cast<int>(out.class_probs[0].size());
    for (std::size_t j = 0; j < out.rois.size(); ++j) {
      const int lab = asg.roi_labels[j];
      if (foreground_only && lab == 0) continue;
      if (ls == 0.0) {
        sum += -std::log(std::max(out.class_probs[j][lab], kProbEps));
      } else {
        for (int k = 0; k < kk; ++k) {
          const double target = (k == lab ? 1.0 - ls : 0.0) + ls / kk;
          sum += -target * std::log(std::max(out.class_probs[j][k], kProbEps));
        }
      }
      ++n;
    }
    t.roi_cls = n ? sum / static_cast<double>(n) : 0.0;
  }
  if (want_reg) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < out.rois.size(); ++j) {
      if (asg.roi_labels[j] == 0) continue;
      for (int k = 0; k < 4; ++k) sum += smooth_l1(out.roi_offsets[j][k] - asg.roi_targets[j][k]);
      ++n;
    }
    t.roi_reg = n ? sum / static_cast<double>(n) : 0.0;
  }
  return t;
}

double loss_rpn(const DetectorOutputs& out, const AnchorAssignment& asg) {
  const LossTerms t = detection_loss_terms(out, asg);
  return t.rpn_cls + t.rpn_reg;
}

double loss_roi(const DetectorOutputs& out, const AnchorAssignment& asg) {
  const LossTerms t = detection_loss_terms(out, asg);
  return t.roi_cls + t.roi_reg;
}

DetectorOutputs forward(const ModelState& state, const ImageTensor& img,
                        const std::vector<Box>* pinned_rois) {
  ForwardData fd;
  run_forward(state, img, pinned_rois, false, fd);
  return std::move(fd.out);
}

ForwardEval evaluate_loss(const ModelState& state, const ImageTensor& img, const LossSpec& spec,
                          const std::vector<Box>* pinned_rois) {
  ForwardEval ev;
  ev.outputs = forward(state, img, pinned_rois);
  ev.assignment = assign_targets(ev.outputs, spec.labels);
  ev.terms = detection_loss_terms(ev.outputs, ev.assignment, spec.foreground_only, spec.parts,
                                  spec.label_smoothing);
  ev.loss = ev.terms.total();
  return ev;
}

GradientEval loss_gradients(const ModelState& state, const ImageTensor& img, const LossSpec& spec,
                            bool want_param_grad, bool want_input_grad,
                            const std::vector<Box>* pinned_rois) {
  const ArchSpec& a = state.arch;
  const Layout L = make_layout(a);
  const float* P = state.params.data();

  ForwardData fd;
  run_forward(state, img, pinned_rois, true, fd);
  Cache& c = fd.cache;
  DetectorOutputs& out = fd.out;

  GradientEval ev;
  ev.assignment = assign_targets(out, spec.labels);
  ev.terms = detection_loss_terms(out, ev.assignment, spec.foreground_only, spec.parts,
                                  spec.label_smoothing);
  ev.loss = ev.terms.total();

  const double ls = spec.label_smoothing;
  const AnchorAssignment& asg = ev.assignment;
  const bool want_cls = spec.parts != LossParts::reg_only;
  const bool want_reg = spec.parts != LossParts::cls_only;

  // gradient seeds at the head outputs
  std::vector<double> d_obj(out.objectness.size(), 0.0);
  std::vector<std::array<double, 4>> d_reg(out.objectness.size(), {0, 0, 0, 0});
  if (want_cls) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < out.objectness.size(); ++i) {
      const int lab = asg.rpn_labels[i];
      if (lab < 0 || (spec.foreground_only && lab != 1)) continue;
      ++n;
    }
    if (n) {
      const double wn = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < out.objectness.size(); ++i) {
        const int lab = asg.rpn_labels[i];
        if (lab < 0 || (spec.foreground_only && lab != 1)) continue;
        const double y = (lab == 1 ? 1.0 : 0.0) * (1.0 - ls) + 0.5 * ls;
        d_obj[i] = wn * (sigmoid(c.obj_logits[i]) - y);
      }
    }
  }
  if (want_reg) {
    std::size_t n = 0;
    for (int lab : asg.rpn_labels)
      if (lab == 1) ++n;
    if (n) {
      const double wn = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < out.objectness.size(); ++i) {
        if (asg.rpn_labels[i] != 1) continue;
        for (int k = 0; k < 4; ++k)
          d_reg[i][k] = wn * smooth_l1_grad(c.reg_raw[i][k] - asg.rpn_targets[i][k]);
      }
    }
  }

  const std::size_t n_rois = out.rois.size();
  std::vector<std::vector<double>> d_cls(n_rois);
  std::vector<std::array<double, 4>> d_off(n_rois, {0, 0, 0, 0});
  for (std::size_t j = 0; j < n_rois; ++j) d_cls[j].assign(a.num_classes + 1, 0.0);
  if (want_cls) {
    std::size_t n = 0;
    for (int lab : asg.roi_labels)
      if (!(spec.foreground_only && lab == 0)) ++n;
    if (n) {
      const double wn = 1.0 / static_cast<double>(n);
      for (std::size_t j = 0; j < n_rois; ++j) {
        const int lab = asg.roi_labels[j];
        if (spec.foreground_only && lab == 0) continue;
        for (int k = 0; k <= a.num_classes; ++k) {
          const double target = (k == lab ? 1.0 - ls : 0.0) + ls / (a.num_classes + 1);
          d_cls[j][k] = wn * (out.class_probs[j][k] - target);
        }
      }
    }
  }
  if (want_reg) {
    std::size_t n = 0;
    for (int lab : asg.roi_labels)
      if (lab != 0) ++n;
    if (n) {
      const double wn = 1.0 / static_cast<double>(n);
      for (std::size_t j = 0; j < n_rois; ++j) {
        if (asg.roi_labels[j] == 0) continue;
        for (int k = 0; k < 4; ++k)
          d_off[j][k] = wn * smooth_l1_grad(out.roi_offsets[j][k] - asg.roi_targets[j][k]);
      }
    }
  }

  // backward
  std::vector<double> d_params;
  if (want_param_grad) d_params.assign(L.total, 0.0);
  double* DP = want_param_grad ? d_params.data() : nullptr;

  Tensor3 d_feat(a.feat_channels, c.feat.h, c.feat.w);

  // ROI head
  const int P2 = a.roi_pool;
  const std::size_t roi_in = static_cast<std::size_t>(a.feat_channels) * P2 * P2;
  std::vector<double> d_hid(a.roi_hidden), d_flat(roi_in);
  for (std::size_t j = 0; j < n_rois; ++j) {
    std::fill(d_hid.begin(), d_hid.end(), 0.0);
    for (int k = 0; k <= a.num_classes; ++k) {
      const double g = d_cls[j][k];
      if (g == 0.0) continue;
      const float* wrow = P + L.cls_w + static_cast<std::size_t>(k) * a.roi_hidden;
      for (int hn = 0; hn < a.roi_hidden; ++hn) d_hid[hn] += g * wrow[hn];
      if (DP) {
        double* dw = DP + L.cls_w + static_cast<std::size_t>(k) * a.roi_hidden;
        for (int hn = 0; hn < a.roi_hidden; ++hn) dw[hn] += g * c.roi_hidden[j][hn];
        DP[L.cls_b + k] += g;
      }
    }
    for (int k = 0; k < 4; ++k) {
      const double g = d_off[j][k];
      if (g == 0.0) continue;
      const float* wrow = P + L.off_w + static_cast<std::size_t>(k) * a.roi_hidden;
      for (int hn = 0; hn < a.roi_hidden; ++hn) d_hid[hn] += g * wrow[hn];
      if (DP) {
        double* dw = DP + L.off_w + static_cast<std::size_t>(k) * a.roi_hidden;
        for (int hn = 0; hn < a.roi_hidden; ++hn) dw[hn] += g * c.roi_hidden[j][hn];
        DP[L.off_b + k] += g;
      }
    }
    for (int hn = 0; hn < a.roi_hidden; ++hn)
      if (c.roi_hidden[j][hn] <= 0.0) d_hid[hn] *= kLeakySlope;

    bool any = false;
    for (double v : d_hid)
      if (v != 0.0) {
        any = true;
        break;
      }
    if (!any) continue;

    std::fill(d_flat.begin(), d_flat.end(), 0.0);
    for (int hn = 0; hn < a.roi_hidden; ++hn) {
      const double g = d_hid[hn];
      if (g == 0.0) continue;
      const float* wrow = P + L.fc1_w + static_cast<std::size_t>(hn) * roi_in;
      for (std::size_t q = 0; q < roi_in; ++q) d_flat[q] += g * wrow[q];
      if (DP) {
        double* dw = DP + L.fc1_w + static_cast<std::size_t>(hn) * roi_in;
        for (std::size_t q = 0; q < roi_in; ++q) dw[q] += g * c.roi_flat[j][q];
        DP[L.fc1_b + hn] += g;
      }
    }
    const Box& b = out.rois[j];
    std::size_t idx = 0;
    for (int ch = 0; ch < a.feat_channels; ++ch)
      for (int py = 0; py < P2; ++py)
        for (int px = 0; px < P2; ++px) {
          const double g = d_flat[idx++];
          if (g == 0.0) continue;
          roi_sample_backward(d_feat, ch, bin_coord(b.x_min, b.x_max, px, P2),
                              bin_coord(b.y_min, b.y_max, py, P2), g);
        }
  }

  // RPN heads back to the shared hidden conv
  Tensor3 d_rpnh(a.rpn_channels, c.feat.h, c.feat.w);
  const int A = static_cast<int>(a.anchors.size());
  for (int fy = 0; fy < c.feat.h; ++fy) {
    for (int fx = 0; fx < c.feat.w; ++fx) {
      for (int an = 0; an < A; ++an) {
        const std::size_t i = (static_cast<std::size_t>(fy) * c.feat.w + fx) * A + an;
        const double go = d_obj[i];
        if (go != 0.0) {
          for (int r = 0; r < a.rpn_channels; ++r)
            d_rpnh.at(r, fy, fx) += go * P[L.obj_w + static_cast<std::size_t>(an) * a.rpn_channels + r];
          if (DP) {
            for (int r = 0; r < a.rpn_channels; ++r)
              DP[L.obj_w + static_cast<std::size_t>(an) * a.rpn_channels + r] +=
                  go * c.rpnh.at(r, fy, fx);
            DP[L.obj_b + an] += go;
          }
        }
        for (int k = 0; k < 4; ++k) {
          const double gr = d_reg[i][k];
          if (gr == 0.0) continue;
          const std::size_t wbase = L.reg_w + (static_cast<std::size_t>(4) * an + k) * a.rpn_channels;
          for (int r = 0; r < a.rpn_channels; ++r) d_rpnh.at(r, fy, fx) += gr * P[wbase + r];
          if (DP) {
            for (int r = 0; r < a.rpn_channels; ++r) DP[wbase + r] += gr * c.rpnh.at(r, fy, fx);
            DP[L.reg_b + 4 * an + k] += gr;
          }
        }
      }
    }
  }
  leaky_backward_inplace(d_rpnh, c.rpnh);
  conv3x3_backward(c.feat, P + L.rpnc_w, d_rpnh, &d_feat, DP ? DP + L.rpnc_w : nullptr,
                   DP ? DP + L.rpnc_b : nullptr);

  // backbone
  const bool need_input = want_input_grad;
  Tensor3 d_a3 = avgpool2_backward(d_feat, c.a3.h, c.a3.w);
  leaky_backward_inplace(d_a3, c.a3);
  Tensor3 d_p2(a.mid_channels, c.p2.h, c.p2.w);
  conv3x3_backward(c.p2, P + L.conv3_w, d_a3, &d_p2, DP ? DP + L.conv3_w : nullptr,
                   DP ? DP + L.conv3_b : nullptr);

  Tensor3 d_a2 = avgpool2_backward(d_p2, c.a2.h, c.a2.w);
  leaky_backward_inplace(d_a2, c.a2);
  Tensor3 d_p1(a.stem_channels, c.p1.h, c.p1.w);
  conv3x3_backward(c.p1, P + L.conv2_w, d_a2, &d_p1, DP ? DP + L.conv2_w : nullptr,
                   DP ? DP + L.conv2_b : nullptr);

  Tensor3 d_a1 = avgpool2_backward(d_p1, c.a1.h, c.a1.w);
  leaky_backward_inplace(d_a1, c.a1);
  Tensor3 d_x0;
  if (need_input) d_x0 = Tensor3(a.in_channels, c.x0.h, c.x0.w);
  conv3x3_backward(c.x0, P + L.conv1_w, d_a1, need_input ? &d_x0 : nullptr,
                   DP ? DP + L.conv1_w : nullptr, DP ? DP + L.conv1_b : nullptr);

  if (want_input_grad) {
    ev.input_grad = ImageTensor(img.height, img.width, img.channels);
    const double d_inv_std = 1.0 / a.input_std;  // chain rule through standardization
    for (int ch = 0; ch < a.in_channels; ++ch)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          ev.input_grad.at(y, x, ch) = static_cast<float>(d_x0.at(ch, y, x) * d_inv_std);
    for (float v : ev.input_grad.data)
      if (!std::isfinite(v)) throw std::runtime_error("loss_gradients: non-finite input gradient");
  }
  if (want_param_grad) {
    for (double v : d_params)
      if (!std::isfinite(v))
        throw std::runtime_error("loss_gradients: non-finite parameter gradient");
    ev.param_grad = std::move(d_params);
  }
  ev.outputs = std::move(out);
  return ev;
}

double supervised_loss(const ModelState& state, const ImageTensor& img,
                       const LabeledBoxes& labels) {
  return evaluate_loss(state, img, LossSpec{labels}).loss;
}

ImageTensor input_gradient(const ModelState& state, const ImageTensor& img, const LossSpec& spec,
                           const std::vector<Box>* pinned_rois) {
  return loss_gradients(state, img, spec, false, true, pinned_rois).input_grad;
}

LabeledBoxes detect(const ModelState& state, const ImageTensor& img, double score_thresh,
                    double nms_thresh) {
  if (score_thresh < 0 || score_thresh > 1 || nms_thresh < 0 || nms_thresh > 1)
    throw std::invalid_argument("detect: thresholds must be in [0,1]");
  const DetectorOutputs out = forward(state, img);
  LabeledBoxes dets;
  dets.scores.emplace();
  for (std::size_t j = 0; j < out.rois.size(); ++j) {
    int best = 1;
    for (int k = 2; k <= state.arch.num_classes; ++k)
      if (out.class_probs[j][k] > out.class_probs[j][best]) best = k;
    const double score = out.class_probs[j][best];
    if (score < score_thresh) continue;
    const Box b = decode_box(out.rois[j], out.roi_offsets[j], img.width, img.height);
    if (!(b.width() > 1e-3 && b.height() > 1e-3)) continue;
    dets.push_back(b, best - 1, score);
  }
  return nms(dets, nms_thresh);
}

ModelState sgd_step(const ModelState& state, const std::vector<double>& grad, double lr) {
  if (grad.size() != state.params.size()) throw std::invalid_argument("sgd_step: shape mismatch");
  if (!(lr >= 0)) throw std::invalid_argument("sgd_step: negative learning rate");
  ModelState next = state;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double v = static_cast<double>(state.params[i]) - lr * grad[i];
    if (!std::isfinite(v)) throw std::runtime_error("sgd_step: non-finite update");
    next.params[i] = static_cast<float>(v);
  }
  return next;
}

void save_checkpoint(const std::string& path, const ModelState& state, long long iteration,
                     const std::string& meta_line) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f << "ADT-CHECKPOINT 1\n";
  f << "arch " << state.arch.to_json() << "\n";
  f << "iteration " << iteration << "\n";
  f << "meta " << meta_line << "\n";
  f << "params " << state.params.size() << "\n";
  f.write(reinterpret_cast<const char*>(state.params.data()),
          static_cast<std::streamsize>(state.params.size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != "ADT-CHECKPOINT 1") throw std::runtime_error("load_checkpoint: bad magic in " + path);
  Checkpoint ck;
  std::getline(f, line);
  if (line.rfind("arch ", 0) != 0) throw std::runtime_error("load_checkpoint: missing arch");
  ck.state.arch = ArchSpec::from_json(line.substr(5));
  std::getline(f, line);
  if (line.rfind("iteration ", 0) != 0) throw std::runtime_error("load_checkpoint: missing iteration");
  ck.iteration = std::stoll(line.substr(10));
  std::getline(f, line);
  if (line.rfind("meta ", 0) != 0) throw std::runtime_error("load_checkpoint: missing meta");
  ck.meta_line = line.substr(5);
  std::getline(f, line);
  if (line.rfind("params ", 0) != 0) throw std::runtime_error("load_checkpoint: missing params");
  const std::size_t n = std::stoull(line.substr(7));
  if (n != ck.state.arch.param_count())
    throw std::runtime_error("load_checkpoint: parameter count does not match descriptor");
  ck.state.params.resize(n);
  f.read(reinterpret_cast<char*>(ck.state.params.data()),
         static_cast<std::streamsize>(n * sizeof(float)));
  if (!f) throw std::runtime_error("load_checkpoint: truncated parameter block in " + path);
  return ck;
}

}  // namespace adt::det
