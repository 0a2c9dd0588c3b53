#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "smw/raster.hpp"
#include "smw/scene.hpp"

namespace smw {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPsnrCap = 100.0;  // dB sentinel for identical images

// Peak signal-to-noise ratio in dB over all pixels and channels.
inline double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.empty())
    throw std::invalid_argument("psnr: image shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline const std::vector<double>& ssim_window_1d() {
  static const std::vector<double> win = [] {
    std::vector<double> w(kSsimWindow);
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double t = i - (kSsimWindow - 1) / 2.0;
      w[i] = std::exp(-t * t / (2.0 * kSsimSigma * kSsimSigma));
      sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return win;
}

// Valid-region separable filtering of a channel plane with the SSIM window.
inline std::vector<double> ssim_filter(const std::vector<double>& plane, int h, int w) {
  const auto& win = ssim_window_1d();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kSsimWindow; ++t) acc += win[t] * plane[y * w + x + t];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kSsimWindow; ++t) acc += win[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace detail

// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), valid-region
// windows only, averaged over channels.
inline double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: image shape mismatch");
  if (a.h < kSsimWindow || a.w < kSsimWindow)
    throw std::invalid_argument("ssim: image smaller than window");

  const int h = a.h, w = a.w;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  double total = 0.0;
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double va = a.at(r, c, ch), vb = b.at(r, c, ch);
        const std::size_t i = static_cast<std::size_t>(r) * w + c;
        x[i] = va;
        y[i] = vb;
        xx[i] = va * va;
        yy[i] = vb * vb;
        xy[i] = va * vb;
      }
    const auto mu_x = detail::ssim_filter(x, h, w);
    const auto mu_y = detail::ssim_filter(y, h, w);
    const auto e_xx = detail::ssim_filter(xx, h, w);
    const auto e_yy = detail::ssim_filter(yy, h, w);
    const auto e_xy = detail::ssim_filter(xy, h, w);
    for (int i = 0; i < oh * ow; ++i) {
      const double sxx = e_xx[i] - mu_x[i] * mu_x[i];
      const double syy = e_yy[i] - mu_y[i] * mu_y[i];
      const double sxy = e_xy[i] - mu_x[i] * mu_y[i];
      const double a1 = 2.0 * mu_x[i] * mu_y[i] + kSsimC1;
      const double a2 = 2.0 * sxy + kSsimC2;
      const double b1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kSsimC1;
      const double b2 = sxx + syy + kSsimC2;
      total += (a1 * a2) / (b1 * b2);
    }
  }
  return total / (3.0 * oh * ow);
}

// Adds scale * d(mean SSIM)/d(render) into d_render. Window statistics are
// recomputed directly per window, which doubles as an independent route
// against the separable forward.
inline void ssim_backward(const Image& render, const Image& gt, double scale,
                          Image& d_render) {
  if (!render.same_shape(gt) || !render.same_shape(d_render))
    throw std::invalid_argument("ssim_backward: image shape mismatch");
  const auto& win = detail::ssim_window_1d();
  const int h = render.h, w = render.w;
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  const double norm = scale / (3.0 * oh * ow);

  for (int ch = 0; ch < 3; ++ch)
    for (int wy = 0; wy < oh; ++wy)
      for (int wx = 0; wx < ow; ++wx) {
        double mu_x = 0.0, mu_y = 0.0, e_xx = 0.0, e_yy = 0.0, e_xy = 0.0;
        for (int ty = 0; ty < kSsimWindow; ++ty)
          for (int tx = 0; tx < kSsimWindow; ++tx) {
            const double wgt = win[ty] * win[tx];
            const double vx = render.at(wy + ty, wx + tx, ch);
            const double vy = gt.at(wy + ty, wx + tx, ch);
            mu_x += wgt * vx;
            mu_y += wgt * vy;
            e_xx += wgt * vx * vx;
            e_yy += wgt * vy * vy;
            e_xy += wgt * vx * vy;
          }
        const double sxx = e_xx - mu_x * mu_x;
        const double syy = e_yy - mu_y * mu_y;
        const double sxy = e_xy - mu_x * mu_y;
        const double a1 = 2.0 * mu_x * mu_y + kSsimC1;
        const double a2 = 2.0 * sxy + kSsimC2;
        const double b1 = mu_x * mu_x + mu_y * mu_y + kSsimC1;
        const double b2 = sxx + syy + kSsimC2;
        const double inv_b1b2 = 1.0 / (b1 * b2);
        const double s = a1 * a2 * inv_b1b2;
        for (int ty = 0; ty < kSsimWindow; ++ty)
          for (int tx = 0; tx < kSsimWindow; ++tx) {
            const double wgt = win[ty] * win[tx];
            const double vx = render.at(wy + ty, wx + tx, ch);
            const double vy = gt.at(wy + ty, wx + tx, ch);
            const double ds = wgt * ((2.0 * mu_y * a2 + 2.0 * (vy - mu_y) * a1) * inv_b1b2 -
                                     s * (2.0 * mu_x / b1 + 2.0 * (vx - mu_x) / b2));
            d_render.at(wy + ty, wx + tx, ch) += norm * ds;
          }
      }
}

// lambda_ssim * (1 - SSIM) + lambda_1 * mean L1.
inline double photometric_loss(const Image& render, const Image& gt, double ssim_weight,
                               double l1_weight, double* ssim_dissim_out = nullptr,
                               double* l1_out = nullptr) {
  if (ssim_weight < 0.0 || l1_weight < 0.0)
    throw std::invalid_argument("photometric_loss: negative weight");
  double l1 = 0.0;
  for (std::size_t i = 0; i < render.data.size(); ++i)
    l1 += std::abs(render.data[i] - gt.data[i]);
  l1 /= static_cast<double>(render.data.size());
  const double dissim = ssim_weight > 0.0 ? 1.0 - ssim(render, gt) : 0.0;
  if (ssim_dissim_out) *ssim_dissim_out = dissim;
  if (l1_out) *l1_out = l1;
  return ssim_weight * dissim + l1_weight * l1;
}

inline void photometric_backward(const Image& render, const Image& gt, double ssim_weight,
                                 double l1_weight, Image& d_render) {
  const double inv_n = 1.0 / static_cast<double>(render.data.size());
  for (std::size_t i = 0; i < render.data.size(); ++i) {
    const double d = render.data[i] - gt.data[i];
    d_render.data[i] += l1_weight * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
  }
  if (ssim_weight > 0.0) ssim_backward(render, gt, -ssim_weight, d_render);
}

namespace detail {

// Projection of a world point into feature-map pixel coordinates.
inline bool project_to_feature(const Vec3& x, const CameraView& cam, double near_plane,
                               Vec2* uv, double* dist) {
  const Vec3 p = cam.world_to_cam * (x - cam.center);
  if (dist) *dist = (x - cam.center).norm();
  if (p.z() <= near_plane) return false;
  const double su = static_cast<double>(cam.feature_map.w) / cam.width;
  const double sv = static_cast<double>(cam.feature_map.h) / cam.height;
  if (uv)
    *uv = Vec2((cam.fx * p.x() / p.z() + cam.cx) * su, (cam.fy * p.y() / p.z() + cam.cy) * sv);
  return true;
}

}  // namespace detail

// Hinge penalties keeping narrow jitters within the narrow radius and broad
// samples within the distance-scaled broad radius. Sums over every anchor in
// front of each camera in the batch.
inline double projection_loss(const std::vector<Anchor>& anchors,
                              const std::vector<const CameraView*>& cams, double narrow_radius,
                              double broad_radius_max, double near_plane = 0.01) {
  double total = 0.0;
  for (const CameraView* cam : cams)
    for (const auto& a : anchors) {
      Vec2 uv;
      double dist = 0.0;
      if (!detail::project_to_feature(a.center, *cam, near_plane, &uv, &dist)) continue;
      if (dist <= 0.0) continue;
      const double broad_radius = broad_radius_max / dist;
      for (int s = 0; s < a.narrow_offsets.rows(); ++s) {
        const double d_n = Vec2(a.narrow_offsets.row(s)).norm();
        total += std::max(d_n - narrow_radius, 0.0);
        const Vec2 broad = Vec2(a.broad_scales.row(s)).cwiseProduct(uv);
        const double d_b = (broad - uv).norm();
        total += std::max(d_b - broad_radius, 0.0);
      }
    }
  return total;
}

// Sum over Gaussians of the product of scale components.
inline double volume_loss(const std::vector<Gaussian>& gaussians) {
  double total = 0.0;
  for (const auto& g : gaussians) total += g.scale.x() * g.scale.y() * g.scale.z();
  return total;
}

inline double volume_loss(const SceneBundle& scene) {
  double total = 0.0;
  for (const auto& a : scene.anchors)
    for (int j = 0; j < a.scales.rows(); ++j)
      total += a.scales(j, 0) * a.scales(j, 1) * a.scales(j, 2);
  return total;
}

struct LossBreakdown {
  double photometric = 0.0;
  double ssim_dissim = 0.0;  // 1 - SSIM
  double l1 = 0.0;
  double projection = 0.0;
  double volume = 0.0;
  double total = 0.0;
  double ssim_weight = 0.2, l1_weight = 0.8, proj_weight = 0.01, vol_weight = 0.01;
};

inline LossBreakdown total_loss(double ssim_dissim, double l1, double projection,
                                double volume, double ssim_weight = 0.2,
                                double l1_weight = 0.8, double proj_weight = 0.01,
                                double vol_weight = 0.01) {
  LossBreakdown b;
  b.ssim_dissim = ssim_dissim;
  b.l1 = l1;
  b.projection = projection;
  b.volume = volume;
  b.ssim_weight = ssim_weight;
  b.l1_weight = l1_weight;
  b.proj_weight = proj_weight;
  b.vol_weight = vol_weight;
  b.photometric = ssim_weight * ssim_dissim + l1_weight * l1;
  b.total = b.photometric + vol_weight * volume + proj_weight * projection;
  return b;
}

inline LossBreakdown total_loss(const Image& render, const Image& gt, double projection,
                                double volume, const Config& cfg) {
  double dissim = 0.0, l1 = 0.0;
  photometric_loss(render, gt, cfg.ssim_weight, cfg.l1_weight, &dissim, &l1);
  return total_loss(dissim, l1, projection, volume, cfg.ssim_weight, cfg.l1_weight,
                    cfg.proj_weight, cfg.vol_weight);
}

}  // namespace smw
