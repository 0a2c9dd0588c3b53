#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "smw/raster.hpp"
#include "smw/rng.hpp"
#include "smw/scene.hpp"

namespace smw::test {

inline Mat3 lookat_rotation(const Vec3& center, const Vec3& target,
                            const Vec3& up = Vec3(0, 0, 1)) {
  const Vec3 fwd = (target - center).normalized();
  Vec3 down = fwd * up.dot(fwd) - up;
  if (down.norm() < 1e-9) down = fwd * Vec3(0, 1, 0).dot(fwd) - Vec3(0, 1, 0);
  down.normalize();
  Mat3 r;
  r.row(0) = down.cross(fwd);
  r.row(1) = down;
  r.row(2) = fwd;
  return r;
}

inline CameraView make_camera(const Vec3& center, const Vec3& target, double focal,
                              int width, int height, int id = 0) {
  CameraView v;
  v.id = id;
  v.center = center;
  v.world_to_cam = lookat_rotation(center, target);
  v.fx = v.fy = focal;
  v.cx = (width - 1) / 2.0;
  v.cy = (height - 1) / 2.0;
  v.width = width;
  v.height = height;
  return v;
}

// Direct per-pixel evaluation of the compositing sum, written independently
// of the renderer (own sort, own 2x2 inverse, pixel-major loop).
inline Image naive_composite(const std::vector<Splat2D>& splats,
                             const std::vector<Vec3>& colors,
                             const std::vector<double>& opacities, int width, int height) {
  std::vector<int> order(splats.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
    return splats[a].source < splats[b].source;
  });

  Image img(height, width, 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double t = 1.0;
      for (int idx : order) {
        const Splat2D& s = splats[idx];
        const double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(1, 0);
        const double du = x - s.mean.x(), dv = y - s.mean.y();
        const double q =
            (s.cov(1, 1) * du * du - 2.0 * s.cov(0, 1) * du * dv + s.cov(0, 0) * dv * dv) /
            det;
        double a = opacities[s.source] * std::exp(-0.5 * q);
        if (a > kAlphaClamp) a = kAlphaClamp;
        if (a < kAlphaSkip) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) += t * a * colors[s.source][ch];
        t *= (1.0 - a);
      }
    }
  return img;
}

// Random splat scene with margins away from the alpha clamp and skip
// thresholds, so central differences stay on one smooth branch.
struct SplatScene {
  std::vector<Splat2D> splats;
  std::vector<Vec3> colors;
  std::vector<double> opacities;
  int width = 16, height = 16;
};

inline SplatScene random_splat_scene(Rng& rng, int max_splats, int width, int height,
                                     bool fd_safe = false) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    SplatScene s;
    s.width = width;
    s.height = height;
    const int n = rng.uniform_int(1, max_splats);
    for (int i = 0; i < n; ++i) {
      Splat2D sp;
      sp.mean = Vec2(rng.uniform(-2.0, width + 1.0), rng.uniform(-2.0, height + 1.0));
      const double a = rng.uniform(0.5, 6.0), b = rng.uniform(0.5, 6.0);
      const double c = rng.uniform(-0.5, 0.5) * std::sqrt(a * b);
      sp.cov << a, c, c, b;
      sp.depth = rng.uniform(0.5, 10.0);
      sp.source = i;
      s.splats.push_back(sp);
      s.colors.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
      s.opacities.push_back(rng.uniform(0.1, 0.85));
    }
    if (!fd_safe) return s;

    bool safe = true;
    for (const auto& sp : s.splats) {
      for (int y = 0; y < height && safe; ++y)
        for (int x = 0; x < width && safe; ++x) {
          const double det = sp.cov(0, 0) * sp.cov(1, 1) - sp.cov(0, 1) * sp.cov(1, 0);
          const double du = x - sp.mean.x(), dv = y - sp.mean.y();
          const double q = (sp.cov(1, 1) * du * du - 2.0 * sp.cov(0, 1) * du * dv +
                            sp.cov(0, 0) * dv * dv) /
                           det;
          const double alpha = s.opacities[sp.source] * std::exp(-0.5 * q);
          // A +-h opacity perturbation moves alpha_eff by at most h, so only
          // a sliver around the thresholds can flip a contribution on or off.
          if (std::abs(alpha - kAlphaSkip) < 1e-5 || std::abs(alpha - kAlphaClamp) < 1e-5)
            safe = false;
        }
      if (!safe) break;
    }
    if (safe) return s;
  }
  throw std::runtime_error("random_splat_scene: no margin-safe scene found");
}

}  // namespace smw::test
