#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "smw/scene.hpp"

namespace smw {

inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kCovRegularizer = 0.3;  // pixels^2, added to cov2d

// One projected Gaussian. cov includes the screen-space regularizer.
struct Splat2D {
  Vec2 mean = Vec2::Zero();  // pixels; pixel (row r, col c) samples (u=c, v=r)
  Mat2 cov = Mat2::Identity();
  double depth = 0.0;  // camera-space z
  int source = -1;     // index into the flattened Gaussian list
};

struct SplatContrib {
  int splat;         // index into the splat vector
  double gsplat;     // 2D Gaussian falloff at the pixel
  double alpha_eff;  // min(opacity * gsplat, clamp)
  bool clamped;
};

struct RenderOutput {
  Image color;
  std::vector<double> alpha;  // per pixel accumulated opacity
  bool recorded = false;
  std::vector<std::vector<SplatContrib>> contribs;  // per pixel, front-to-back
};

// EWA-style first-order projection. Returns nullopt when the Gaussian is
// behind the near plane or its 3-sigma ellipse misses the image.
inline std::optional<Splat2D> project_gaussian(const Gaussian& g, const CameraView& cam,
                                               double near_plane = 0.01) {
  const Vec3 p = cam.world_to_cam * (g.mean - cam.center);
  if (p.z() <= near_plane) return std::nullopt;

  const double inv_z = 1.0 / p.z();
  Splat2D s;
  s.mean = Vec2(cam.fx * p.x() * inv_z + cam.cx, cam.fy * p.y() * inv_z + cam.cy);
  s.depth = p.z();

  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx * inv_z, 0.0, -cam.fx * p.x() * inv_z * inv_z,
      0.0, cam.fy * inv_z, -cam.fy * p.y() * inv_z * inv_z;
  const Mat3 cov_world = build_covariance(g.rotation, g.scale);
  const Mat3 cov_cam = cam.world_to_cam * cov_world * cam.world_to_cam.transpose();
  s.cov = jac * cov_cam * jac.transpose() + kCovRegularizer * Mat2::Identity();

  // 3-sigma screen cull against the sampled pixel grid [0, W-1] x [0, H-1].
  const double tr = 0.5 * (s.cov(0, 0) + s.cov(1, 1));
  const double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(1, 0);
  const double lam_max = tr + std::sqrt(std::max(tr * tr - det, 0.0));
  const double radius = 3.0 * std::sqrt(lam_max);
  if (s.mean.x() + radius < 0.0 || s.mean.x() - radius > cam.width - 1 ||
      s.mean.y() + radius < 0.0 || s.mean.y() - radius > cam.height - 1)
    return std::nullopt;
  return s;
}

// Front-to-back alpha compositing of projected splats over a black background.
// Colors/opacities are indexed by splat source. Splats are processed in depth
// order (ties broken by source index); per pixel, contributions below the
// skip threshold are dropped and the effective alpha is clamped.
inline RenderOutput render_splats(const std::vector<Splat2D>& splats,
                                  const std::vector<Vec3>& colors,
                                  const std::vector<double>& opacities, int width, int height,
                                  bool record = false) {
  RenderOutput out;
  out.color = Image(height, width, 0.0);
  out.alpha.assign(static_cast<std::size_t>(width) * height, 0.0);
  out.recorded = record;
  if (record) out.contribs.assign(static_cast<std::size_t>(width) * height, {});

  std::vector<int> order(splats.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
    return splats[a].source < splats[b].source;
  });

  std::vector<double> transmittance(static_cast<std::size_t>(width) * height, 1.0);

  for (int idx : order) {
    const Splat2D& s = splats[idx];
    const Vec3& col = colors[s.source];
    const double op = opacities[s.source];

    const double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(1, 0);
    if (det <= 0.0) continue;
    const double inv_det = 1.0 / det;
    const double ia = s.cov(1, 1) * inv_det;   // inverse covariance entries
    const double ib = -s.cov(0, 1) * inv_det;
    const double ic = s.cov(0, 0) * inv_det;

    // Pixels outside this radius satisfy alpha_eff < skip threshold for any
    // opacity <= 1, so the bounding box drops nothing the skip rule keeps.
    const double tr = 0.5 * (s.cov(0, 0) + s.cov(1, 1));
    const double lam_max = tr + std::sqrt(std::max(tr * tr - det, 0.0));
    const double radius = std::sqrt(2.0 * std::log(255.0) * lam_max) + 1.0;

    const int x0 = std::max(0, static_cast<int>(std::ceil(s.mean.x() - radius)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(s.mean.x() + radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(s.mean.y() - radius)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(s.mean.y() + radius)));

    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double du = x - s.mean.x();
        const double dv = y - s.mean.y();
        const double q = ia * du * du + 2.0 * ib * du * dv + ic * dv * dv;
        if (q < 0.0) continue;
        const double gsplat = std::exp(-0.5 * q);
        double alpha_eff = op * gsplat;
        const bool clamped = alpha_eff > kAlphaClamp;
        if (clamped) alpha_eff = kAlphaClamp;
        if (alpha_eff < kAlphaSkip) continue;

        const std::size_t pix = static_cast<std::size_t>(y) * width + x;
        const double weight = alpha_eff * transmittance[pix];
        out.color.at(y, x, 0) += weight * col.x();
        out.color.at(y, x, 1) += weight * col.y();
        out.color.at(y, x, 2) += weight * col.z();
        out.alpha[pix] += weight;
        transmittance[pix] *= (1.0 - alpha_eff);
        if (record) out.contribs[pix].push_back({idx, gsplat, alpha_eff, clamped});
      }
  }
  return out;
}

namespace detail {

inline std::vector<Splat2D> project_all(const std::vector<Gaussian>& gaussians,
                                        const CameraView& cam, double near_plane) {
  std::vector<Splat2D> splats;
  splats.reserve(gaussians.size());
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    auto s = project_gaussian(gaussians[i], cam, near_plane);
    if (s) {
      s->source = static_cast<int>(i);
      splats.push_back(*s);
    }
  }
  return splats;
}

}  // namespace detail

// Renders the scene's flattened Gaussians with externally supplied colors and
// opacities (aligned with the flattened list).
inline RenderOutput render(const SceneBundle& scene, const CameraView& cam,
                           const std::vector<Vec3>& colors,
                           const std::vector<double>& opacities, bool record = false) {
  const auto gaussians = flatten_gaussians(scene);
  if (colors.size() != gaussians.size() || opacities.size() != gaussians.size())
    throw std::invalid_argument("render: color/opacity list length mismatch");
  const auto splats = detail::project_all(gaussians, cam, scene.config.near_plane);
  return render_splats(splats, colors, opacities, cam.width, cam.height, record);
}

// Same as render over the complement of `excluded_ids` (flattened indices).
inline RenderOutput render_excluding(const SceneBundle& scene, const CameraView& cam,
                                     const std::vector<Vec3>& colors,
                                     const std::vector<double>& opacities,
                                     const std::vector<int>& excluded_ids,
                                     bool record = false) {
  const auto gaussians = flatten_gaussians(scene);
  if (colors.size() != gaussians.size() || opacities.size() != gaussians.size())
    throw std::invalid_argument("render_excluding: color/opacity list length mismatch");
  std::vector<bool> excluded(gaussians.size(), false);
  for (int id : excluded_ids) {
    if (id < 0 || id >= static_cast<int>(gaussians.size()))
      throw std::invalid_argument("render_excluding: unknown gaussian id");
    excluded[id] = true;
  }
  std::vector<Gaussian> kept;
  std::vector<int> kept_source;
  for (std::size_t i = 0; i < gaussians.size(); ++i)
    if (!excluded[i]) {
      kept.push_back(gaussians[i]);
      kept_source.push_back(static_cast<int>(i));
    }
  auto splats = detail::project_all(kept, cam, scene.config.near_plane);
  for (auto& s : splats) s.source = kept_source[s.source];
  return render_splats(splats, colors, opacities, cam.width, cam.height, record);
}

struct RasterGrads {
  std::vector<Vec3> d_color;
  std::vector<double> d_opacity;
};

// Analytic gradient of the compositing equation w.r.t. per-Gaussian colors
// and base opacities. The 2D falloff is treated as a constant (geometry is
// frozen); clamped contributions pass no opacity gradient.
inline RasterGrads backward_color_opacity(const RenderOutput& out,
                                          const std::vector<Splat2D>& splats,
                                          const std::vector<Vec3>& colors,
                                          const Image& d_color_image, int n_gaussians) {
  if (!out.recorded)
    throw std::logic_error("backward_color_opacity: render was not recorded");
  if (!out.color.same_shape(d_color_image))
    throw std::invalid_argument("backward_color_opacity: gradient image shape mismatch");

  RasterGrads g;
  g.d_color.assign(n_gaussians, Vec3::Zero());
  g.d_opacity.assign(n_gaussians, 0.0);

  const int width = out.color.w, height = out.color.h;
  std::vector<double> trans;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * width + x;
      const auto& list = out.contribs[pix];
      if (list.empty()) continue;
      const Vec3 d_pix(d_color_image.at(y, x, 0), d_color_image.at(y, x, 1),
                       d_color_image.at(y, x, 2));

      trans.resize(list.size());
      double t = 1.0;
      for (std::size_t i = 0; i < list.size(); ++i) {
        trans[i] = t;
        t *= (1.0 - list[i].alpha_eff);
      }
      // Reverse sweep with the suffix sum S_i = sum_{j>i} c_j a_j T_j.
      Vec3 suffix = Vec3::Zero();
      for (int i = static_cast<int>(list.size()) - 1; i >= 0; --i) {
        const SplatContrib& cb = list[i];
        const int src = splats[cb.splat].source;
        const Vec3& col = colors[src];
        const double weight = cb.alpha_eff * trans[i];
        g.d_color[src] += weight * d_pix;
        if (!cb.clamped) {
          const Vec3 d_alpha_vec = trans[i] * col - suffix / (1.0 - cb.alpha_eff);
          g.d_opacity[src] += cb.gsplat * d_pix.dot(d_alpha_vec);
        }
        suffix += weight * col;
      }
    }
  return g;
}

}  // namespace smw
