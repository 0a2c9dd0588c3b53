#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "smw/fusion.hpp"
#include "smw/losses.hpp"
#include "smw/raster.hpp"
#include "smw/sampler.hpp"
#include "smw/scene.hpp"
#include "smw/wavelet.hpp"

namespace smw {

// Forward state of one view, kept around for the backward pass.
struct ViewForward {
  int view_index = -1;
  FeaturePyramid pyramid;
  std::vector<SamplerCache> sampler_caches;  // per anchor
  std::vector<FusionCache> fusion_caches;    // per anchor
  std::vector<VecX> refined;                 // f_r per anchor
  std::vector<Vec3> colors;                  // flattened gaussians
  std::vector<double> opacities;
  std::vector<Splat2D> splats;
  RenderOutput render_out;
  LossBreakdown loss;
  bool has_loss = false;
};

// Injection points for gradient checking and for rendering held-out views
// with substituted appearance tensors.
struct ForwardOverrides {
  const std::vector<VecX>* refined = nullptr;
  const std::vector<Vec3>* colors = nullptr;
  const VecX* global_feature = nullptr;
  const TensorCHW* feature_map = nullptr;
};

// Full per-view forward: feature pyramid, per-anchor refined features, fusion
// colors, rasterization, and the training loss when the view carries ground
// truth.
inline ViewForward forward_view(const SceneBundle& scene, int view_index,
                                bool record_for_backward,
                                const ForwardOverrides* overrides = nullptr) {
  const Config& cfg = scene.config;
  const CameraView& view = scene.views.at(view_index);
  const VecX& f_g = overrides && overrides->global_feature ? *overrides->global_feature
                                                           : view.global_feature;
  const TensorCHW& fmap =
      overrides && overrides->feature_map ? *overrides->feature_map : view.feature_map;
  if (fmap.h % (1 << cfg.wavelet_levels) != 0 || fmap.w % (1 << cfg.wavelet_levels) != 0)
    throw std::invalid_argument("forward_view: feature map size must be divisible by 2^M");

  ViewForward fw;
  fw.view_index = view_index;
  fw.pyramid = split_feature_map(fmap, cfg.wavelet_levels);

  const int n_anchors = static_cast<int>(scene.anchors.size());
  const int k = cfg.gaussians_per_anchor;
  fw.sampler_caches.resize(n_anchors);
  fw.fusion_caches.resize(n_anchors);
  fw.refined.resize(n_anchors);
  fw.colors.resize(static_cast<std::size_t>(n_anchors) * k);
  fw.opacities.resize(fw.colors.size());

  for (int i = 0; i < n_anchors; ++i) {
    const Anchor& a = scene.anchors[i];
    if (overrides && overrides->refined) {
      fw.refined[i] = (*overrides->refined)[i];
      refined_feature(a, fw.pyramid, view, cfg, &fw.sampler_caches[i]);
    } else {
      fw.refined[i] = refined_feature(a, fw.pyramid, view, cfg, &fw.sampler_caches[i]);
    }

    const Vec3 to_anchor = a.center - view.center;
    const double dist = to_anchor.norm();
    const Vec3 dir = dist > 1e-12 ? Vec3(to_anchor / dist) : Vec3(0, 0, 1);
    const MatX colors = hrfn_forward(a.center, a.intrinsic, fw.refined[i], f_g, dir,
                                     scene.fusion, &fw.fusion_caches[i]);
    for (int j = 0; j < k; ++j) {
      fw.colors[static_cast<std::size_t>(i) * k + j] = colors.row(j).transpose();
      fw.opacities[static_cast<std::size_t>(i) * k + j] = a.opacities[j];
    }
  }
  if (overrides && overrides->colors) fw.colors = *overrides->colors;

  const auto gaussians = flatten_gaussians(scene);
  fw.splats = detail::project_all(gaussians, view, cfg.near_plane);
  fw.render_out = render_splats(fw.splats, fw.colors, fw.opacities, view.width, view.height,
                                record_for_backward);

  if (!view.gt.empty()) {
    std::vector<const CameraView*> cams{&view};
    const double l_proj = projection_loss(scene.anchors, cams, cfg.narrow_radius,
                                          cfg.broad_radius_max, cfg.near_plane);
    fw.loss = total_loss(fw.render_out.color, view.gt, l_proj, volume_loss(scene), cfg);
    fw.has_loss = true;
  }
  return fw;
}

// Gradients of the total loss for every trainable family. The feature-map and
// global-feature slots belong to the view the forward pass ran on.
struct SceneGrads {
  std::vector<VecX> d_intrinsic;
  std::vector<MatX> d_narrow_offsets;
  std::vector<MatX> d_broad_scales;
  std::vector<std::vector<VecX>> d_narrow_weights, d_broad_weights;
  std::vector<VecX> d_opacities;
  HrfnParamGrads fusion;
  VecX d_global_feature;
  TensorCHW d_feature_map;
  // Intermediate gradients, kept for gradient checking.
  std::vector<Vec3> d_colors;
  std::vector<VecX> d_refined;
};

inline SceneGrads make_scene_grads(const SceneBundle& scene) {
  const Config& cfg = scene.config;
  SceneGrads g;
  const int n = static_cast<int>(scene.anchors.size());
  g.d_intrinsic.assign(n, VecX::Zero(cfg.intrinsic_dim));
  g.d_narrow_offsets.assign(n, MatX::Zero(cfg.samples_per_frustum, 2));
  g.d_broad_scales.assign(n, MatX::Zero(cfg.samples_per_frustum, 2));
  g.d_narrow_weights.resize(n);
  g.d_broad_weights.resize(n);
  int cnt = 1;
  std::vector<int> sizes;
  for (int m = 1; m <= cfg.wavelet_levels; ++m) {
    cnt *= 4;
    sizes.push_back(cnt);
  }
  for (int i = 0; i < n; ++i)
    for (int s : sizes) {
      g.d_narrow_weights[i].push_back(VecX::Zero(s));
      g.d_broad_weights[i].push_back(VecX::Zero(s));
    }
  g.d_opacities.assign(n, VecX::Zero(cfg.gaussians_per_anchor));
  g.fusion = make_hrfn_grads(scene.fusion);
  g.d_global_feature = VecX::Zero(cfg.global_dim);
  g.d_colors.assign(static_cast<std::size_t>(n) * cfg.gaussians_per_anchor, Vec3::Zero());
  g.d_refined.assign(n, VecX::Zero(cfg.refined_dim));
  return g;
}

// Reverse pass for one view: loss -> image -> (colors, opacities) ->
// (fusion features and parameters) -> (sampling offsets, weights, feature
// map), plus the direct projection-loss hinges on the sampling parameters.
inline void backward_view(const SceneBundle& scene, const ViewForward& fw, SceneGrads& g) {
  const Config& cfg = scene.config;
  const CameraView& view = scene.views.at(fw.view_index);
  if (!fw.has_loss) throw std::logic_error("backward_view: forward carried no loss");
  if (!fw.render_out.recorded)
    throw std::logic_error("backward_view: forward was not recorded");

  Image d_image(view.height, view.width, 0.0);
  photometric_backward(fw.render_out.color, view.gt, cfg.ssim_weight, cfg.l1_weight,
                       d_image);

  const int n_gauss = static_cast<int>(fw.colors.size());
  const RasterGrads rg =
      backward_color_opacity(fw.render_out, fw.splats, fw.colors, d_image, n_gauss);
  g.d_colors = rg.d_color;

  const int k = cfg.gaussians_per_anchor;
  PyramidGrads pg = make_pyramid_grads(fw.pyramid);
  for (std::size_t i = 0; i < scene.anchors.size(); ++i) {
    const Anchor& a = scene.anchors[i];
    for (int j = 0; j < k; ++j) g.d_opacities[i][j] += rg.d_opacity[i * k + j];

    MatX d_colors_anchor(k, 3);
    for (int j = 0; j < k; ++j)
      d_colors_anchor.row(j) = rg.d_color[i * k + j].transpose();
    VecX d_fr = VecX::Zero(cfg.refined_dim);
    hrfn_backward(scene.fusion, fw.fusion_caches[i], d_colors_anchor, g.fusion,
                  g.d_intrinsic[i], d_fr, g.d_global_feature);
    g.d_refined[i] = d_fr;

    SamplerGrads sg = make_sampler_grads(cfg);
    refined_feature_backward(a, fw.pyramid, cfg, fw.sampler_caches[i], d_fr, sg, pg);
    g.d_narrow_offsets[i] += sg.d_narrow_offsets;
    g.d_broad_scales[i] += sg.d_broad_scales;
    for (std::size_t m = 0; m < sg.d_narrow_weights.size(); ++m) {
      g.d_narrow_weights[i][m] += sg.d_narrow_weights[m];
      g.d_broad_weights[i][m] += sg.d_broad_weights[m];
    }

    // Projection-loss hinges act directly on the sampling parameters.
    const SamplerCache& cache = fw.sampler_caches[i];
    if (cache.in_front) {
      for (int s = 0; s < cfg.samples_per_frustum; ++s) {
        const Vec2 nc = a.narrow_offsets.row(s);
        const double norm_n = nc.norm();
        if (norm_n > cfg.narrow_radius && norm_n > 0.0)
          g.d_narrow_offsets[i].row(s) += cfg.proj_weight * (nc / norm_n).transpose();
        const Vec2 diff = Vec2(a.broad_scales.row(s)).cwiseProduct(cache.base_uv) -
                          cache.base_uv;
        const double norm_b = diff.norm();
        if (norm_b > cache.broad_radius && norm_b > 0.0) {
          const Vec2 dir = diff / norm_b;
          g.d_broad_scales[i](s, 0) += cfg.proj_weight * dir.x() * cache.base_uv.x();
          g.d_broad_scales[i](s, 1) += cfg.proj_weight * dir.y() * cache.base_uv.y();
        }
      }
    }
  }
  g.d_feature_map = collapse_pyramid_grads(pg, fw.pyramid, view.feature_map.c,
                                           view.feature_map.h, view.feature_map.w);
}

}  // namespace smw
