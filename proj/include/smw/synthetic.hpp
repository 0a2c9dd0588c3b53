#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "smw/pipeline.hpp"
#include "smw/scene.hpp"

namespace smw {

struct SynthPreset {
  int anchors = 10;
  int train_views = 8;
  int heldout_views = 2;
  int image_size = 64;
  double tint_spread = 0.06;      // per-channel multiplier in 1 +- spread
  double vignette_max = 0.08;     // darkening at the image corners
};

inline SynthPreset synth_preset(const std::string& name) {
  if (name == "tiny") return SynthPreset{};
  if (name == "medium") {
    SynthPreset p;
    p.anchors = 40;
    p.train_views = 16;
    p.heldout_views = 4;
    p.image_size = 96;
    return p;
  }
  throw std::invalid_argument("unknown preset: " + name);
}

inline Mat3 lookat_world_to_cam(const Vec3& center, const Vec3& target,
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

// Synthetic ground-plane scene: random colored Gaussians spawned from anchors
// in a flat box, cameras on a ring, and ground truth rendered by the
// reference rasterizer itself under a held-out per-view appearance
// perturbation (global tint plus radial vignette). The true colors are
// discarded; reconstructing them through the fusion network while the
// per-view tensors absorb the perturbations is the training task.
inline SceneBundle make_synthetic_scene(const std::string& preset_name, std::uint64_t seed) {
  const SynthPreset preset = synth_preset(preset_name);
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 1);

  SceneBundle scene;
  Config& cfg = scene.config;

  for (int i = 0; i < preset.anchors; ++i) {
    Anchor a = make_anchor(Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                rng.uniform(0.05, 0.7)),
                           Vec3::Constant(cfg.voxel_size), cfg, rng);
    for (int j = 0; j < cfg.gaussians_per_anchor; ++j) {
      a.offsets.row(j) << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
          rng.uniform(-1.0, 1.0);
      Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      a.rotations[j] = q.normalized();
      a.scales.row(j) << rng.uniform(0.03, 0.09), rng.uniform(0.03, 0.09),
          rng.uniform(0.03, 0.09);
      a.opacities[j] = rng.uniform(0.55, 0.9);
    }
    scene.anchors.push_back(std::move(a));
  }

  std::vector<Vec3> true_colors;
  for (int i = 0; i < preset.anchors * cfg.gaussians_per_anchor; ++i)
    true_colors.emplace_back(rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85),
                             rng.uniform(0.15, 0.85));

  const int n_views = preset.train_views + preset.heldout_views;
  const int size = preset.image_size;
  const int feat = size / cfg.feat_downsample;
  const Vec3 target(0, 0, 0.3);
  for (int i = 0; i < n_views; ++i) {
    const double angle = 2.0 * 3.14159265358979323846 * i / n_views;
    CameraView v;
    v.id = i;
    v.center = Vec3(2.6 * std::cos(angle), 2.6 * std::sin(angle), 1.3);
    v.world_to_cam = lookat_world_to_cam(v.center, target);
    v.fx = v.fy = 60.0;
    v.cx = (size - 1) / 2.0;
    v.cy = (size - 1) / 2.0;
    v.width = v.height = size;
    v.held_out = i >= preset.train_views;
    v.global_feature = VecX::Zero(cfg.global_dim);
    for (int c = 0; c < cfg.global_dim; ++c) v.global_feature[c] = 0.01 * rng.normal();
    v.feature_map = TensorCHW(cfg.refined_dim, feat, feat);
    for (auto& x : v.feature_map.data) x = 0.01 * rng.normal();
    scene.views.push_back(std::move(v));
  }

  // Broad radius scaled so the valid broad region spans about 8 feature
  // pixels at the median camera-to-scene distance.
  double median_dist = 0.0;
  {
    std::vector<double> dists;
    for (const auto& v : scene.views)
      for (const auto& a : scene.anchors) dists.push_back((a.center - v.center).norm());
    std::sort(dists.begin(), dists.end());
    median_dist = dists[dists.size() / 2];
  }
  cfg.broad_radius_max = 8.0 * median_dist;

  scene.fusion = make_hrfn(cfg.gaussians_per_anchor, cfg.intrinsic_dim, cfg.refined_dim,
                           cfg.global_dim, cfg.pe_levels, seed ^ 0xabcdef12345ull);

  // Ground truth: reference render with the hidden true colors, then the
  // per-view photometric perturbation.
  const auto gaussians = flatten_gaussians(scene);
  std::vector<double> opacities;
  for (const auto& g : gaussians) opacities.push_back(g.opacity);
  for (auto& v : scene.views) {
    const auto splats = detail::project_all(gaussians, v, cfg.near_plane);
    RenderOutput out = render_splats(splats, true_colors, opacities, v.width, v.height);
    const Vec3 tint(rng.uniform(1.0 - preset.tint_spread, 1.0 + preset.tint_spread),
                    rng.uniform(1.0 - preset.tint_spread, 1.0 + preset.tint_spread),
                    rng.uniform(1.0 - preset.tint_spread, 1.0 + preset.tint_spread));
    const double vignette = rng.uniform(0.0, preset.vignette_max);
    const double r_max = std::hypot((size - 1) / 2.0, (size - 1) / 2.0);
    v.gt = Image(v.height, v.width);
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x) {
        const double r = std::hypot(x - v.cx, y - v.cy) / r_max;
        const double fall = 1.0 - vignette * r * r;
        for (int ch = 0; ch < 3; ++ch) {
          const double val = out.color.at(y, x, ch) * tint[ch] * fall;
          v.gt.at(y, x, ch) = std::min(std::max(val, 0.0), 1.0);
        }
      }
  }
  return scene;
}

// Small scene for end-to-end gradient checks: a handful of anchors, two
// views, reduced feature dims. Finite differencing needs the forward to stay
// on one smooth branch, so candidate scenes whose splats graze the alpha
// skip/clamp thresholds at any pixel are re-rolled.
inline SceneBundle make_toy_scene(std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 256; ++attempt) {
    Rng rng(seed * 0x2545f4914f6cdd1dull + attempt + 17);

    SceneBundle scene;
    Config& cfg = scene.config;
    cfg.gaussians_per_anchor = 3;
    cfg.samples_per_frustum = 2;
    cfg.wavelet_levels = 1;
    cfg.intrinsic_dim = 8;
    cfg.refined_dim = 8;
    cfg.global_dim = 4;
    cfg.pe_levels = 2;
    cfg.feat_downsample = 3;

    for (int i = 0; i < 4; ++i) {
      Anchor a = make_anchor(Vec3(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8),
                                  rng.uniform(0.1, 0.6)),
                             Vec3::Constant(cfg.voxel_size), cfg, rng);
      for (int j = 0; j < cfg.gaussians_per_anchor; ++j) {
        a.offsets.row(j) << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
        Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        a.rotations[j] = q.normalized();
        a.scales.row(j) << rng.uniform(0.05, 0.12), rng.uniform(0.05, 0.12),
            rng.uniform(0.05, 0.12);
        a.opacities[j] = rng.uniform(0.3, 0.8);
      }
      for (int s = 0; s < cfg.samples_per_frustum; ++s) {
        a.narrow_offsets.row(s) << rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8);
        a.broad_scales.row(s) << rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1);
      }
      scene.anchors.push_back(std::move(a));
    }

    const int size = 24;
    for (int i = 0; i < 2; ++i) {
      const double angle = 2.2 * i + 0.4;
      CameraView v;
      v.id = i;
      v.center = Vec3(2.2 * std::cos(angle), 2.2 * std::sin(angle), 1.1);
      v.world_to_cam = lookat_world_to_cam(v.center, Vec3(0, 0, 0.3));
      v.fx = v.fy = 24.0;
      v.cx = v.cy = (size - 1) / 2.0;
      v.width = v.height = size;
      v.global_feature = VecX::Zero(cfg.global_dim);
      for (int c = 0; c < cfg.global_dim; ++c) v.global_feature[c] = 0.3 * rng.normal();
      v.feature_map = TensorCHW(cfg.refined_dim, size / cfg.feat_downsample,
                                size / cfg.feat_downsample);
      for (auto& x : v.feature_map.data) x = 0.3 * rng.normal();
      scene.views.push_back(std::move(v));
    }
    cfg.broad_radius_max = 2.0 * 2.2;

    scene.fusion = make_hrfn(cfg.gaussians_per_anchor, cfg.intrinsic_dim, cfg.refined_dim,
                             cfg.global_dim, cfg.pe_levels, seed ^ 0x5bd1e995u);

    const auto gaussians = flatten_gaussians(scene);
    std::vector<Vec3> true_colors;
    std::vector<double> opacities;
    for (const auto& g : gaussians) {
      true_colors.emplace_back(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                               rng.uniform(0.2, 0.8));
      opacities.push_back(g.opacity);
    }

    bool safe = true;
    for (auto& v : scene.views) {
      const auto splats = detail::project_all(gaussians, v, cfg.near_plane);
      for (const auto& sp : splats) {
        for (int y = 0; y < v.height && safe; ++y)
          for (int x = 0; x < v.width && safe; ++x) {
            const double det = sp.cov(0, 0) * sp.cov(1, 1) - sp.cov(0, 1) * sp.cov(1, 0);
            const double du = x - sp.mean.x(), dv = y - sp.mean.y();
            const double q = (sp.cov(1, 1) * du * du - 2.0 * sp.cov(0, 1) * du * dv +
                              sp.cov(0, 0) * dv * dv) /
                             det;
            const double alpha = opacities[sp.source] * std::exp(-0.5 * q);
            if (std::abs(alpha - kAlphaSkip) < 2e-5 || std::abs(alpha - kAlphaClamp) < 2e-5)
              safe = false;
          }
        if (!safe) break;
      }
      if (!safe) break;
      const RenderOutput out = render_splats(splats, true_colors, opacities, v.width,
                                             v.height);
      // Tint stays bounded away from 1 so rendered and ground-truth pixels
      // do not coincide (the L1 term has a kink at zero difference).
      const double tint = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.03, 0.15) + 1.0;
      v.gt = Image(v.height, v.width);
      for (std::size_t i = 0; i < v.gt.data.size(); ++i)
        v.gt.data[i] = std::min(std::max(out.color.data[i] * tint, 0.0), 1.0);
    }
    // Reject candidates whose forward state sits near any remaining
    // non-smooth point: ReLU pre-activations, bilinear cell boundaries, and
    // the projection hinge corners.
    for (std::size_t vi = 0; vi < scene.views.size() && safe; ++vi) {
      const ViewForward fw = forward_view(scene, static_cast<int>(vi), false);
      for (const auto& cache : fw.fusion_caches)
        for (const auto* stage : {&cache.s1, &cache.s2, &cache.s3, &cache.s4})
          for (const auto& z : stage->pre)
            for (int r = 0; r < z.size(); ++r)
              if (std::abs(z[r]) < 2e-4) safe = false;
      for (std::size_t ai = 0; ai < scene.anchors.size() && safe; ++ai) {
        const SamplerCache& sc = fw.sampler_caches[ai];
        if (!sc.in_front) continue;
        for (const auto* levels : {&sc.narrow, &sc.broad})
          for (const auto& level : *levels)
            for (const auto& taps : level.taps)
              for (const auto& tap : taps) {
                if (tap.du_live && (tap.fx < 5e-4 || tap.fx > 1.0 - 5e-4)) safe = false;
                if (tap.dv_live && (tap.fy < 5e-4 || tap.fy > 1.0 - 5e-4)) safe = false;
              }
        const Anchor& a = scene.anchors[ai];
        for (int s = 0; s < cfg.samples_per_frustum && safe; ++s) {
          if (std::abs(Vec2(a.narrow_offsets.row(s)).norm() - cfg.narrow_radius) < 1e-3)
            safe = false;
          const Vec2 diff =
              Vec2(a.broad_scales.row(s)).cwiseProduct(sc.base_uv) - sc.base_uv;
          if (std::abs(diff.norm() - sc.broad_radius) < 1e-3) safe = false;
        }
      }
    }
    if (safe) return scene;
  }
  throw std::runtime_error("make_toy_scene: no margin-safe scene found");
}

}  // namespace smw
