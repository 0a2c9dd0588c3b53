#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "smw/rng.hpp"

namespace smw {

using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Sinusoidal positional encoding: for each frequency l in [0, levels) and each
// coordinate d, the pair [sin(2^l pi x_d), cos(2^l pi x_d)], ordered
// frequency-major with coordinates x, y, z inside. Length 6 * levels.
inline VecX positional_encoding(const Vec3& x, int levels) {
  VecX out(6 * levels);
  int at = 0;
  double freq = 3.14159265358979323846;
  for (int l = 0; l < levels; ++l) {
    for (int d = 0; d < 3; ++d) {
      out[at++] = std::sin(freq * x[d]);
      out[at++] = std::cos(freq * x[d]);
    }
    freq *= 2.0;
  }
  return out;
}

struct DenseLayer {
  MatX weight;  // out x in
  VecX bias;    // out
};

// Four-stage fusion MLP. Stages feed into each other with residual feature
// injections between them; every layer is followed by ReLU except the final
// projection, which goes through a sigmoid to produce colors in (0, 1).
struct HrfnParams {
  std::vector<DenseLayer> stage1, stage2, stage3, stage4;
  double residual_refined = 1.0;    // gain on the refined-feature residual
  double residual_intrinsic = 1.0;  // gain on the intrinsic-feature residual

  int pe_levels = 4;
  int gaussians_per_anchor = 0;  // k; stage4 output is 3k
  int intrinsic_dim = 0, refined_dim = 0, global_dim = 0;
};

namespace detail {

inline DenseLayer make_layer(int out, int in, Rng& rng) {
  DenseLayer l;
  l.weight.resize(out, in);
  const double limit = std::sqrt(6.0 / in);
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c) l.weight(r, c) = rng.uniform(-limit, limit);
  l.bias = VecX::Zero(out);
  return l;
}

}  // namespace detail

inline HrfnParams make_hrfn(int gaussians_per_anchor, int intrinsic_dim, int refined_dim,
                            int global_dim, int pe_levels, std::uint64_t seed) {
  HrfnParams p;
  p.pe_levels = pe_levels;
  p.gaussians_per_anchor = gaussians_per_anchor;
  p.intrinsic_dim = intrinsic_dim;
  p.refined_dim = refined_dim;
  p.global_dim = global_dim;

  Rng rng(seed);
  const int in1 = 6 * pe_levels + intrinsic_dim + refined_dim + global_dim;
  p.stage1 = {detail::make_layer(128, in1, rng), detail::make_layer(96, 128, rng)};
  p.stage2 = {detail::make_layer(96, 96 + refined_dim, rng), detail::make_layer(64, 96, rng)};
  p.stage3 = {detail::make_layer(48, 64 + intrinsic_dim, rng), detail::make_layer(48, 48, rng)};
  p.stage4 = {detail::make_layer(48, 48 + 3, rng),
              detail::make_layer(3 * gaussians_per_anchor, 48, rng)};
  return p;
}

// Per-stage forward records for the hand-written backward pass.
struct StageCache {
  std::vector<VecX> inputs;  // input to each layer
  std::vector<VecX> pre;     // pre-activation of each layer
};

struct FusionCache {
  VecX pos_enc, f_v, f_r, f_g;
  Vec3 dir = Vec3::Zero();
  StageCache s1, s2, s3, s4;
  VecX logits;  // 3k, pre-sigmoid
  MatX colors;  // k x 3
};

namespace detail {

// Runs one stage; ReLU after every layer unless `linear_last` is set (final
// projection of stage 4).
inline VecX run_stage(const std::vector<DenseLayer>& layers, VecX x, bool linear_last,
                      StageCache* cache) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    VecX z = layers[i].weight * x + layers[i].bias;
    if (cache) {
      cache->inputs.push_back(x);
      cache->pre.push_back(z);
    }
    if (linear_last && i + 1 == layers.size()) {
      x = std::move(z);
    } else {
      x = z.cwiseMax(0.0);
    }
  }
  return x;
}

inline VecX concat(const VecX& a, const VecX& b) {
  VecX out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace detail

// Hierarchical fusion forward: returns k colors (rows) in (0,1)^3.
// `dir` must be the unit vector from the camera center to the anchor.
inline MatX hrfn_forward(const Vec3& anchor_center, const VecX& f_v, const VecX& f_r,
                         const VecX& f_g, const Vec3& dir, const HrfnParams& p,
                         FusionCache* cache = nullptr) {
  if (f_v.size() != p.intrinsic_dim || f_r.size() != p.refined_dim ||
      f_g.size() != p.global_dim)
    throw std::invalid_argument("hrfn_forward: feature dimension mismatch");

  const VecX pe = positional_encoding(anchor_center, p.pe_levels);
  VecX in1(pe.size() + f_v.size() + f_r.size() + f_g.size());
  in1 << pe, f_v, f_r, f_g;

  if (cache) {
    cache->pos_enc = pe;
    cache->f_v = f_v;
    cache->f_r = f_r;
    cache->f_g = f_g;
    cache->dir = dir;
  }

  const VecX h1 = detail::run_stage(p.stage1, in1, false, cache ? &cache->s1 : nullptr);
  const VecX emb = detail::concat(h1, p.residual_refined * f_r);
  const VecX h2 = detail::run_stage(p.stage2, emb, false, cache ? &cache->s2 : nullptr);
  const VecX in3 = detail::concat(h2, p.residual_intrinsic * f_v);
  const VecX h3 = detail::run_stage(p.stage3, in3, false, cache ? &cache->s3 : nullptr);
  VecX in4(h3.size() + 3);
  in4 << h3, dir;
  const VecX logits = detail::run_stage(p.stage4, in4, true, cache ? &cache->s4 : nullptr);

  const int k = p.gaussians_per_anchor;
  MatX colors(k, 3);
  for (int j = 0; j < k; ++j)
    for (int ch = 0; ch < 3; ++ch)
      colors(j, ch) = 1.0 / (1.0 + std::exp(-logits[3 * j + ch]));

  if (cache) {
    cache->logits = logits;
    cache->colors = colors;
  }
  return colors;
}

struct HrfnParamGrads {
  std::vector<DenseLayer> stage1, stage2, stage3, stage4;  // same shapes as params
  double residual_refined = 0.0;
  double residual_intrinsic = 0.0;
};

inline HrfnParamGrads make_hrfn_grads(const HrfnParams& p) {
  HrfnParamGrads g;
  auto zeros_like = [](const std::vector<DenseLayer>& ls) {
    std::vector<DenseLayer> out;
    out.reserve(ls.size());
    for (const auto& l : ls)
      out.push_back({MatX::Zero(l.weight.rows(), l.weight.cols()), VecX::Zero(l.bias.size())});
    return out;
  };
  g.stage1 = zeros_like(p.stage1);
  g.stage2 = zeros_like(p.stage2);
  g.stage3 = zeros_like(p.stage3);
  g.stage4 = zeros_like(p.stage4);
  return g;
}

namespace detail {

// Backprop through one stage; returns gradient w.r.t. the stage input.
inline VecX backward_stage(const std::vector<DenseLayer>& layers, const StageCache& cache,
                           VecX d_out, bool linear_last, std::vector<DenseLayer>& grads) {
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    VecX dz;
    if (linear_last && i + 1 == static_cast<int>(layers.size())) {
      dz = std::move(d_out);
    } else {
      dz = d_out;
      const VecX& z = cache.pre[i];
      for (int r = 0; r < dz.size(); ++r)
        if (z[r] <= 0.0) dz[r] = 0.0;
    }
    grads[i].weight.noalias() += dz * cache.inputs[i].transpose();
    grads[i].bias += dz;
    d_out = layers[i].weight.transpose() * dz;
  }
  return d_out;
}

}  // namespace detail

// Reverse-mode pass for one anchor. Parameter gradients accumulate into
// `pg`; feature gradients accumulate into d_f_v / d_f_r / d_f_g (callers zero
// or pre-seed them). `d_colors` is k x 3.
inline void hrfn_backward(const HrfnParams& p, const FusionCache& cache, const MatX& d_colors,
                          HrfnParamGrads& pg, VecX& d_f_v, VecX& d_f_r, VecX& d_f_g) {
  const int k = p.gaussians_per_anchor;
  VecX d_logits(3 * k);
  for (int j = 0; j < k; ++j)
    for (int ch = 0; ch < 3; ++ch) {
      const double c = cache.colors(j, ch);
      d_logits[3 * j + ch] = d_colors(j, ch) * c * (1.0 - c);
    }

  VecX d_in4 = detail::backward_stage(p.stage4, cache.s4, std::move(d_logits), true, pg.stage4);
  VecX d_h3 = d_in4.head(d_in4.size() - 3);  // gradient w.r.t. dir unused (geometry frozen)

  VecX d_in3 = detail::backward_stage(p.stage3, cache.s3, std::move(d_h3), false, pg.stage3);
  const int nv = p.intrinsic_dim;
  VecX d_h2 = d_in3.head(d_in3.size() - nv);
  VecX d_res_v = d_in3.tail(nv);
  pg.residual_intrinsic += d_res_v.dot(cache.f_v);
  d_f_v += p.residual_intrinsic * d_res_v;

  VecX d_emb = detail::backward_stage(p.stage2, cache.s2, std::move(d_h2), false, pg.stage2);
  const int nr = p.refined_dim;
  VecX d_h1 = d_emb.head(d_emb.size() - nr);
  VecX d_res_r = d_emb.tail(nr);
  pg.residual_refined += d_res_r.dot(cache.f_r);
  d_f_r += p.residual_refined * d_res_r;

  VecX d_in1 = detail::backward_stage(p.stage1, cache.s1, std::move(d_h1), false, pg.stage1);
  const int pe = 6 * p.pe_levels;
  d_f_v += d_in1.segment(pe, nv);
  d_f_r += d_in1.segment(pe + nv, nr);
  d_f_g += d_in1.segment(pe + nv + nr, p.global_dim);
}

}  // namespace smw
