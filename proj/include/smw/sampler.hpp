#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "smw/losses.hpp"
#include "smw/scene.hpp"
#include "smw/wavelet.hpp"

namespace smw {

// One bilinear lookup with border clamping. Clamped axes stop propagating
// position gradients, matching the flat extension of the map.
struct BilinearTap {
  int x0 = 0, y0 = 0;
  double fx = 0.0, fy = 0.0;
  bool du_live = false, dv_live = false;
};

inline BilinearTap make_tap(double u, double v, int w, int h) {
  BilinearTap t;
  double uc = u, vc = v;
  t.du_live = w > 1 && u > 0.0 && u < w - 1;
  t.dv_live = h > 1 && v > 0.0 && v < h - 1;
  uc = std::min(std::max(uc, 0.0), static_cast<double>(w - 1));
  vc = std::min(std::max(vc, 0.0), static_cast<double>(h - 1));
  t.x0 = std::min(static_cast<int>(uc), w > 1 ? w - 2 : 0);
  t.y0 = std::min(static_cast<int>(vc), h > 1 ? h - 2 : 0);
  t.fx = w > 1 ? uc - t.x0 : 0.0;
  t.fy = h > 1 ? vc - t.y0 : 0.0;
  return t;
}

inline double tap_value(const TensorCHW& t, int ch, const BilinearTap& b) {
  const int x1 = std::min(b.x0 + 1, t.w - 1), y1 = std::min(b.y0 + 1, t.h - 1);
  return (1.0 - b.fx) * (1.0 - b.fy) * t.at(ch, b.y0, b.x0) +
         b.fx * (1.0 - b.fy) * t.at(ch, b.y0, x1) +
         (1.0 - b.fx) * b.fy * t.at(ch, y1, b.x0) + b.fx * b.fy * t.at(ch, y1, x1);
}

// d(tap value)/d(u, v), zero on clamped axes.
inline Vec2 tap_position_grad(const TensorCHW& t, int ch, const BilinearTap& b) {
  const int x1 = std::min(b.x0 + 1, t.w - 1), y1 = std::min(b.y0 + 1, t.h - 1);
  const double v00 = t.at(ch, b.y0, b.x0), v01 = t.at(ch, b.y0, x1);
  const double v10 = t.at(ch, y1, b.x0), v11 = t.at(ch, y1, x1);
  Vec2 g = Vec2::Zero();
  if (b.du_live) g.x() = (1.0 - b.fy) * (v01 - v00) + b.fy * (v11 - v10);
  if (b.dv_live) g.y() = (1.0 - b.fx) * (v10 - v00) + b.fx * (v11 - v01);
  return g;
}

inline void tap_scatter(TensorCHW& g, int ch, const BilinearTap& b, double d) {
  const int x1 = std::min(b.x0 + 1, g.w - 1), y1 = std::min(b.y0 + 1, g.h - 1);
  g.at(ch, b.y0, b.x0) += (1.0 - b.fx) * (1.0 - b.fy) * d;
  g.at(ch, b.y0, x1) += b.fx * (1.0 - b.fy) * d;
  g.at(ch, y1, b.x0) += (1.0 - b.fx) * b.fy * d;
  g.at(ch, y1, x1) += b.fx * b.fy * d;
}

// Narrow-frustum samples: the feature-map projection of the point plus each
// learned jitter offset. Offsets are soft-constrained by the projection loss
// rather than clamped here. Returns nullopt when the point is behind the
// camera (its feature contribution is zero).
inline std::optional<std::vector<Vec2>> narrow_projection(const Vec3& x,
                                                          const CameraView& cam,
                                                          const MatX& narrow_offsets,
                                                          double near_plane = 0.01) {
  Vec2 uv;
  if (!detail::project_to_feature(x, cam, near_plane, &uv, nullptr)) return std::nullopt;
  std::vector<Vec2> out;
  out.reserve(narrow_offsets.rows());
  for (int s = 0; s < narrow_offsets.rows(); ++s)
    out.push_back(uv + Vec2(narrow_offsets.row(s)));
  return out;
}

struct BroadProjection {
  std::vector<Vec2> uv;
  double radius = 0.0;  // distance-scaled broad radius
  Vec2 base = Vec2::Zero();
};

// Broad-frustum samples: elementwise scaling of the projection center, with
// the valid radius shrinking in proportion to the point's distance.
inline std::optional<BroadProjection> broad_projection(const Vec3& x, const CameraView& cam,
                                                       const MatX& broad_scales,
                                                       double broad_radius_max,
                                                       double near_plane = 0.01) {
  const double dist = (x - cam.center).norm();
  if (dist <= 0.0)
    throw std::domain_error("broad_projection: point coincides with camera center");
  Vec2 uv;
  if (!detail::project_to_feature(x, cam, near_plane, &uv, nullptr)) return std::nullopt;
  BroadProjection out;
  out.base = uv;
  out.radius = broad_radius_max / dist;
  out.uv.reserve(broad_scales.rows());
  for (int s = 0; s < broad_scales.rows(); ++s)
    out.uv.push_back(Vec2(broad_scales.row(s)).cwiseProduct(uv));
  return out;
}

// Forward records for one anchor's refined-feature evaluation.
struct SamplerCache {
  bool in_front = false;
  Vec2 base_uv = Vec2::Zero();
  double dist = 0.0;
  double broad_radius = 0.0;
  // Per level (0..M): taps[map][sample] and the per-map sample-averaged
  // feature vectors (needed for the sub-band weight gradients).
  struct Level {
    std::vector<std::vector<BilinearTap>> taps;
    std::vector<VecX> feats;
  };
  std::vector<Level> narrow, broad;
};

namespace detail {

inline VecX sample_level(const std::vector<const TensorCHW*>& maps, const VecX* weights,
                         const std::vector<Vec2>& coords, double coord_scale,
                         SamplerCache::Level* cache) {
  const int channels = maps[0]->c;
  const int k_s = static_cast<int>(coords.size());
  VecX seg = VecX::Zero(channels);
  for (std::size_t j = 0; j < maps.size(); ++j) {
    const TensorCHW& map = *maps[j];
    VecX feat = VecX::Zero(channels);
    std::vector<BilinearTap> taps(k_s);
    for (int s = 0; s < k_s; ++s) {
      taps[s] = make_tap(coords[s].x() * coord_scale, coords[s].y() * coord_scale, map.w,
                         map.h);
      for (int ch = 0; ch < channels; ++ch) feat[ch] += tap_value(map, ch, taps[s]);
    }
    feat /= static_cast<double>(k_s);
    seg += (weights ? (*weights)[j] : 1.0) * feat;
    if (cache) {
      cache->taps.push_back(std::move(taps));
      cache->feats.push_back(std::move(feat));
    }
  }
  return seg;
}

}  // namespace detail

// Assembles the refined appearance feature: per level, the k_s-sample average
// of bilinear lookups (weighted across the 4^m packet maps for levels >= 1),
// concatenated narrow/broad across levels. Output length is always n_r; a
// point behind the camera yields the zero vector.
inline VecX refined_feature(const Anchor& a, const FeaturePyramid& pyr, const CameraView& cam,
                            const Config& cfg, SamplerCache* cache = nullptr) {
  if (pyr.levels != cfg.wavelet_levels ||
      pyr.chunk_channels * (2 * cfg.wavelet_levels + 2) != cfg.refined_dim)
    throw std::invalid_argument("refined_feature: pyramid does not match config");

  VecX out = VecX::Zero(cfg.refined_dim);
  Vec2 uv;
  double dist = 0.0;
  if (!detail::project_to_feature(a.center, cam, cfg.near_plane, &uv, &dist) || dist <= 0.0) {
    if (cache) *cache = SamplerCache{};
    return out;
  }
  if (cache) {
    cache->in_front = true;
    cache->base_uv = uv;
    cache->dist = dist;
    cache->broad_radius = cfg.broad_radius_max / dist;
    cache->narrow.resize(cfg.wavelet_levels + 1);
    cache->broad.resize(cfg.wavelet_levels + 1);
  }

  const int k_s = cfg.samples_per_frustum;
  std::vector<Vec2> narrow_coords(k_s), broad_coords(k_s);
  for (int s = 0; s < k_s; ++s) {
    narrow_coords[s] = uv + Vec2(a.narrow_offsets.row(s));
    broad_coords[s] = Vec2(a.broad_scales.row(s)).cwiseProduct(uv);
  }

  const int c = pyr.chunk_channels;
  double coord_scale = 1.0;
  for (int m = 0; m <= cfg.wavelet_levels; ++m) {
    std::vector<const TensorCHW*> nmaps, bmaps;
    const VecX* nw = nullptr;
    const VecX* bw = nullptr;
    if (m == 0) {
      nmaps = {&pyr.base[0]};
      bmaps = {&pyr.base[1]};
    } else {
      for (const auto& t : pyr.narrow_bands[m - 1]) nmaps.push_back(&t);
      for (const auto& t : pyr.broad_bands[m - 1]) bmaps.push_back(&t);
      nw = &a.narrow_weights[m - 1];
      bw = &a.broad_weights[m - 1];
    }
    out.segment(2 * m * c, c) = detail::sample_level(
        nmaps, nw, narrow_coords, coord_scale, cache ? &cache->narrow[m] : nullptr);
    out.segment((2 * m + 1) * c, c) = detail::sample_level(
        bmaps, bw, broad_coords, coord_scale, cache ? &cache->broad[m] : nullptr);
    coord_scale *= 0.5;
  }
  return out;
}

// Gradient buffers shaped like a FeaturePyramid; collapsed back to the
// feature map once per view after all anchors have scattered into them.
struct PyramidGrads {
  std::vector<TensorCHW> base;
  std::vector<std::vector<TensorCHW>> narrow_bands, broad_bands;
};

inline PyramidGrads make_pyramid_grads(const FeaturePyramid& pyr) {
  PyramidGrads g;
  for (const auto& t : pyr.base) g.base.emplace_back(t.c, t.h, t.w);
  for (const auto& lvl : pyr.narrow_bands) {
    std::vector<TensorCHW> maps;
    for (const auto& t : lvl) maps.emplace_back(t.c, t.h, t.w);
    g.narrow_bands.push_back(std::move(maps));
  }
  for (const auto& lvl : pyr.broad_bands) {
    std::vector<TensorCHW> maps;
    for (const auto& t : lvl) maps.emplace_back(t.c, t.h, t.w);
    g.broad_bands.push_back(std::move(maps));
  }
  return g;
}

struct SamplerGrads {
  MatX d_narrow_offsets;  // k_s x 2
  MatX d_broad_scales;    // k_s x 2
  std::vector<VecX> d_narrow_weights, d_broad_weights;
};

inline SamplerGrads make_sampler_grads(const Config& cfg) {
  SamplerGrads g;
  g.d_narrow_offsets = MatX::Zero(cfg.samples_per_frustum, 2);
  g.d_broad_scales = MatX::Zero(cfg.samples_per_frustum, 2);
  int cnt = 1;
  for (int m = 1; m <= cfg.wavelet_levels; ++m) {
    cnt *= 4;
    g.d_narrow_weights.push_back(VecX::Zero(cnt));
    g.d_broad_weights.push_back(VecX::Zero(cnt));
  }
  return g;
}

namespace detail {

inline void backward_level(const std::vector<const TensorCHW*>& maps, const VecX* weights,
                           const SamplerCache::Level& cache, const VecX& d_seg, double k_s,
                           double coord_scale, const std::vector<TensorCHW*>& map_grads,
                           VecX* d_weights, std::vector<Vec2>& d_coords) {
  const int channels = maps[0]->c;
  for (std::size_t j = 0; j < maps.size(); ++j) {
    const double wj = weights ? (*weights)[j] : 1.0;
    if (d_weights) (*d_weights)[j] += d_seg.dot(cache.feats[j]);
    for (std::size_t s = 0; s < cache.taps[j].size(); ++s) {
      const BilinearTap& tap = cache.taps[j][s];
      Vec2 d_uv = Vec2::Zero();
      for (int ch = 0; ch < channels; ++ch) {
        const double d_val = wj * d_seg[ch] / k_s;
        tap_scatter(*map_grads[j], ch, tap, d_val);
        d_uv += d_val * tap_position_grad(*maps[j], ch, tap);
      }
      d_coords[s] += coord_scale * d_uv;  // chain through the level-m shrink
    }
  }
}

}  // namespace detail

// Reverse pass of refined_feature. Adds into the sampler grads and the
// pyramid-shaped feature map grads.
inline void refined_feature_backward(const Anchor& a, const FeaturePyramid& pyr,
                                     const Config& cfg, const SamplerCache& cache,
                                     const VecX& d_fr, SamplerGrads& sg, PyramidGrads& pg) {
  if (!cache.in_front) return;
  const int c = pyr.chunk_channels;
  const int k_s = cfg.samples_per_frustum;
  std::vector<Vec2> d_narrow_coords(k_s, Vec2::Zero()), d_broad_coords(k_s, Vec2::Zero());

  double coord_scale = 1.0;
  for (int m = 0; m <= cfg.wavelet_levels; ++m) {
    std::vector<const TensorCHW*> nmaps, bmaps;
    std::vector<TensorCHW*> ngrads, bgrads;
    const VecX* nw = nullptr;
    const VecX* bw = nullptr;
    VecX* ndw = nullptr;
    VecX* bdw = nullptr;
    if (m == 0) {
      nmaps = {&pyr.base[0]};
      bmaps = {&pyr.base[1]};
      ngrads = {&pg.base[0]};
      bgrads = {&pg.base[1]};
    } else {
      for (const auto& t : pyr.narrow_bands[m - 1]) nmaps.push_back(&t);
      for (const auto& t : pyr.broad_bands[m - 1]) bmaps.push_back(&t);
      for (auto& t : pg.narrow_bands[m - 1]) ngrads.push_back(&t);
      for (auto& t : pg.broad_bands[m - 1]) bgrads.push_back(&t);
      nw = &a.narrow_weights[m - 1];
      bw = &a.broad_weights[m - 1];
      ndw = &sg.d_narrow_weights[m - 1];
      bdw = &sg.d_broad_weights[m - 1];
    }
    const VecX d_n = d_fr.segment(2 * m * c, c);
    const VecX d_b = d_fr.segment((2 * m + 1) * c, c);
    detail::backward_level(nmaps, nw, cache.narrow[m], d_n, k_s, coord_scale, ngrads, ndw,
                           d_narrow_coords);
    detail::backward_level(bmaps, bw, cache.broad[m], d_b, k_s, coord_scale, bgrads, bdw,
                           d_broad_coords);
    coord_scale *= 0.5;
  }

  // Narrow coords are base + nc; broad coords are bc (.) base.
  for (int s = 0; s < k_s; ++s) {
    sg.d_narrow_offsets.row(s) += d_narrow_coords[s].transpose();
    sg.d_broad_scales(s, 0) += d_broad_coords[s].x() * cache.base_uv.x();
    sg.d_broad_scales(s, 1) += d_broad_coords[s].y() * cache.base_uv.y();
  }
}

// Collapse pyramid-shaped gradients back to a feature-map gradient. Level-m
// band gradients are pulled through the packet adjoint.
inline TensorCHW collapse_pyramid_grads(const PyramidGrads& pg, const FeaturePyramid& pyr,
                                        int fmap_c, int fmap_h, int fmap_w) {
  TensorCHW d_fmap(fmap_c, fmap_h, fmap_w);
  const int c = pyr.chunk_channels;
  const int groups = 2 * pyr.levels + 2;
  for (int g = 0; g < groups; ++g) {
    TensorCHW chunk_grad;
    if (g < 2) {
      chunk_grad = pg.base[g];
    } else {
      const int m = g / 2;  // chunks 2m, 2m+1 carry level m
      const bool narrow = (g % 2) == 0;
      chunk_grad = wavelet_packet_adjoint(
          narrow ? pg.narrow_bands[m - 1] : pg.broad_bands[m - 1], m);
    }
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < fmap_h; ++y)
        for (int x = 0; x < fmap_w; ++x)
          d_fmap.at(g * c + ch, y, x) += chunk_grad.at(ch, y, x);
  }
  return d_fmap;
}

}  // namespace smw
