#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "smw/fusion.hpp"
#include "smw/tensor.hpp"

namespace smw {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;  // stored (w, x, y, z)

inline constexpr double kScaleFloor = 1e-8;
inline constexpr double kUnitTol = 1e-9;

// Global hyperparameters shared by every anchor in a scene.
struct Config {
  int gaussians_per_anchor = 10;  // k
  int samples_per_frustum = 1;    // k_s
  int wavelet_levels = 1;         // M
  int intrinsic_dim = 48;         // n_v
  int refined_dim = 32;           // n_r
  int global_dim = 16;            // n_g

  double voxel_size = 0.25;        // anchor voxel edge length, world units
  double narrow_radius = 2.0;      // feature-map pixels
  double broad_radius_max = 8.0;   // world-units * feature-map pixels
  double ssim_weight = 0.2;
  double l1_weight = 0.8;
  double proj_weight = 0.01;
  double vol_weight = 0.01;
  double visibility_kappa = 0.5;   // supervision threshold factor
  double sensitivity_eta = 0.01;   // block-sensitivity threshold
  int rotation_period = 100;       // iterations per block rotation
  int pe_levels = 4;
  int feat_downsample = 4;         // feature map is image size / this
  double near_plane = 0.01;

  int band_count() const {  // total packet maps across levels 1..M
    int total = 0, cnt = 1;
    for (int m = 1; m <= wavelet_levels; ++m) {
      cnt *= 4;
      total += cnt;
    }
    return total;
  }
};

// One anisotropic 3D Gaussian primitive. The rotation is normalized and the
// scale floor enforced on construction so that the covariance stays SPD.
struct Gaussian {
  Vec3 mean = Vec3::Zero();
  Quat rotation = Quat::Identity();
  Vec3 scale = Vec3::Ones();
  double opacity = 1.0;
  Vec3 color = Vec3::Zero();

  Gaussian() = default;
  Gaussian(const Vec3& mean_, const Quat& rot, const Vec3& scale_, double opacity_,
           const Vec3& color_ = Vec3::Zero())
      : mean(mean_), rotation(rot.normalized()), scale(scale_), opacity(opacity_),
        color(color_) {
    if (scale.minCoeff() <= kScaleFloor)
      throw std::invalid_argument("Gaussian: scale below floor");
    if (opacity < 0.0) opacity = 0.0;
    if (opacity > 1.0) opacity = 1.0;
  }
};

// Covariance from the factored parameterization: R diag(s) diag(s) R^T.
inline Mat3 build_covariance(const Quat& q, const Vec3& s) {
  if (std::abs(q.norm() - 1.0) > kUnitTol)
    throw std::invalid_argument("build_covariance: quaternion not unit length");
  if (s.minCoeff() <= 0.0)
    throw std::invalid_argument("build_covariance: scale must be positive");
  const Mat3 rs = q.toRotationMatrix() * s.asDiagonal();
  return rs * rs.transpose();
}

// Unnormalized density exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)), equals 1 at the mean.
inline double gaussian_density(const Gaussian& g, const Vec3& x) {
  if (g.scale.minCoeff() <= kScaleFloor)
    throw std::domain_error("gaussian_density: degenerate covariance");
  const Vec3 local = g.rotation.conjugate() * (x - g.mean);
  const Vec3 scaled = local.cwiseQuotient(g.scale);
  return std::exp(-0.5 * scaled.squaredNorm());
}

// Voxel-centered anchor. Spawns k Gaussians through learnable offsets and
// carries the per-anchor sampling parameters and intrinsic feature.
struct Anchor {
  Vec3 center = Vec3::Zero();       // x_i
  Vec3 voxel_scale = Vec3::Ones();  // l_v
  MatX offsets;                     // k x 3, unitless
  VecX intrinsic;                   // f_v, length n_v
  MatX narrow_offsets;              // k_s x 2, feature-map pixels
  MatX broad_scales;                // k_s x 2, unitless
  std::vector<VecX> narrow_weights;  // per level m = 1..M, 4^m entries
  std::vector<VecX> broad_weights;

  // Attributes of the k spawned Gaussians (colors come from the fusion net).
  std::vector<Quat> rotations;
  MatX scales;     // k x 3
  VecX opacities;  // k
};

inline void validate_anchor(const Anchor& a, const Config& cfg) {
  const int k = cfg.gaussians_per_anchor;
  if (a.offsets.rows() != k || a.offsets.cols() != 3)
    throw std::invalid_argument("anchor: offset count must equal k");
  if (a.narrow_offsets.rows() != cfg.samples_per_frustum || a.narrow_offsets.cols() != 2 ||
      a.broad_scales.rows() != cfg.samples_per_frustum || a.broad_scales.cols() != 2)
    throw std::invalid_argument("anchor: frustum sample count must equal k_s");
  if (static_cast<int>(a.narrow_weights.size()) != cfg.wavelet_levels ||
      static_cast<int>(a.broad_weights.size()) != cfg.wavelet_levels)
    throw std::invalid_argument("anchor: sub-band weight level count mismatch");
  int cnt = 1;
  for (int m = 0; m < cfg.wavelet_levels; ++m) {
    cnt *= 4;
    if (a.narrow_weights[m].size() != cnt || a.broad_weights[m].size() != cnt)
      throw std::invalid_argument("anchor: sub-band weights must have 4^m entries");
  }
  if (a.intrinsic.size() != cfg.intrinsic_dim)
    throw std::invalid_argument("anchor: intrinsic feature dim mismatch");
  if (static_cast<int>(a.rotations.size()) != k || a.scales.rows() != k ||
      a.opacities.size() != k)
    throw std::invalid_argument("anchor: per-gaussian attribute count mismatch");
}

// Positions of the k Gaussians spawned by an anchor: center + offset * voxel scale.
inline std::vector<Vec3> anchor_to_gaussians(const Anchor& a, const Config& cfg) {
  if (a.offsets.rows() != cfg.gaussians_per_anchor)
    throw std::invalid_argument("anchor_to_gaussians: offset count must equal k");
  std::vector<Vec3> out(a.offsets.rows());
  for (int j = 0; j < a.offsets.rows(); ++j)
    out[j] = a.center + Vec3(a.offsets.row(j)).cwiseProduct(a.voxel_scale);
  return out;
}

// One camera with its stored per-image appearance tensors. The appearance
// encoder is not part of this library, so the global feature and feature-map
// stack are directly learnable per-image tensors.
struct CameraView {
  int id = 0;
  Vec3 center = Vec3::Zero();              // x_c
  Mat3 world_to_cam = Mat3::Identity();    // rows: right, down, forward
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Image gt;                // ground-truth image, may be empty
  VecX global_feature;     // f_g, length n_g
  TensorCHW feature_map;   // n_r x H_F x W_F
  bool held_out = false;
  std::string image_path;
};

inline void validate_view(const CameraView& v, const Config& cfg) {
  const Mat3 should_be_identity = v.world_to_cam * v.world_to_cam.transpose();
  if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > kUnitTol)
    throw std::invalid_argument("camera view: rotation not orthonormal");
  if (v.global_feature.size() != cfg.global_dim)
    throw std::invalid_argument("camera view: global feature dim mismatch");
  if (v.feature_map.c != cfg.refined_dim)
    throw std::invalid_argument("camera view: feature map channel count mismatch");
  const int min_side = 1 << cfg.wavelet_levels;
  if (v.feature_map.h < min_side || v.feature_map.w < min_side)
    throw std::invalid_argument("camera view: feature map too small for wavelet levels");
}

// A whole scene: anchors, views, the shared config, and fusion parameters.
// Immutable while rendering; mutated only between optimizer steps.
struct SceneBundle {
  Config config;
  std::vector<Anchor> anchors;
  std::vector<CameraView> views;
  HrfnParams fusion;

  int total_gaussians() const {
    return static_cast<int>(anchors.size()) * config.gaussians_per_anchor;
  }
};

inline void validate_scene(const SceneBundle& scene) {
  for (const auto& a : scene.anchors) validate_anchor(a, scene.config);
  std::vector<int> ids;
  for (const auto& v : scene.views) {
    validate_view(v, scene.config);
    ids.push_back(v.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("scene: duplicate view ids");
}

// Flattened Gaussian list in anchor-major order; colors are left at zero and
// filled by the caller (directly or from the fusion network).
inline std::vector<Gaussian> flatten_gaussians(const SceneBundle& scene) {
  std::vector<Gaussian> out;
  out.reserve(scene.total_gaussians());
  for (const auto& a : scene.anchors) {
    const auto positions = anchor_to_gaussians(a, scene.config);
    for (int j = 0; j < scene.config.gaussians_per_anchor; ++j)
      out.emplace_back(positions[j], a.rotations[j], Vec3(a.scales.row(j)), a.opacities[j]);
  }
  return out;
}

// Fresh anchor with the documented initial values: zero offsets, zero jitter,
// unit broad scales, uniform sub-band weights.
inline Anchor make_anchor(const Vec3& center, const Vec3& voxel_scale, const Config& cfg,
                          Rng& rng) {
  Anchor a;
  a.center = center;
  a.voxel_scale = voxel_scale;
  a.offsets = MatX::Zero(cfg.gaussians_per_anchor, 3);
  a.intrinsic = VecX::Zero(cfg.intrinsic_dim);
  for (int i = 0; i < a.intrinsic.size(); ++i) a.intrinsic[i] = 0.01 * rng.normal();
  a.narrow_offsets = MatX::Zero(cfg.samples_per_frustum, 2);
  a.broad_scales = MatX::Ones(cfg.samples_per_frustum, 2);
  int cnt = 1;
  for (int m = 1; m <= cfg.wavelet_levels; ++m) {
    cnt *= 4;
    a.narrow_weights.push_back(VecX::Constant(cnt, 1.0 / cnt));
    a.broad_weights.push_back(VecX::Constant(cnt, 1.0 / cnt));
  }
  a.rotations.assign(cfg.gaussians_per_anchor, Quat::Identity());
  a.scales = MatX::Constant(cfg.gaussians_per_anchor, 3, 0.05);
  a.opacities = VecX::Constant(cfg.gaussians_per_anchor, 0.8);
  return a;
}

}  // namespace smw
