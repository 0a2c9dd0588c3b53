#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "smw/partition.hpp"
#include "smw/pipeline.hpp"

namespace smw {

// Exponentially interpolated learning rate: start * (end/start)^(t/T).
struct LrPair {
  double start = 1e-4, end = 1e-5;
  double at(int iter, int total) const {
    if (start <= 0.0) return 0.0;
    if (total <= 0) return start;
    return start * std::pow(end / start, static_cast<double>(iter) / total);
  }
};

struct TrainConfig {
  int iterations = 2000;
  LrPair lr_sampling{1e-4, 1e-5};    // narrow offsets, broad scales, sub-band weights
  LrPair lr_fusion{5e-4, 5e-5};      // fusion layers, residual gains, intrinsic features
  LrPair lr_appearance{1e-4, 1e-6};  // per-view global features and feature maps
  LrPair lr_opacity{5e-3, 5e-4};
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0 disables periodic eval records
  int rotation_period = 100;
  int slots = 1;

  void validate() const {
    for (const LrPair* lr : {&lr_sampling, &lr_fusion, &lr_appearance, &lr_opacity}) {
      if (lr->start < 0.0 || lr->end < 0.0)
        throw std::invalid_argument("train config: negative learning rate");
      if (lr->end > lr->start)
        throw std::invalid_argument("train config: decay end above start");
    }
    if (iterations < 0) throw std::invalid_argument("train config: negative iterations");
  }
};

struct IterationRecord {
  int iteration = 0;
  int view = -1;
  int block = -1;
  LossBreakdown loss;
};

struct EvalRecord {
  int iteration = 0;
  double train_psnr = 0.0;
  double heldout_psnr = 0.0;
};

struct TrainLog {
  std::vector<IterationRecord> iterations;
  std::vector<EvalRecord> evals;
  double wall_seconds = 0.0;  // not serialized; logs must be reproducible
};

namespace detail {

struct AdamStep {
  double beta1, beta2, eps;
  double b1t = 1.0, b2t = 1.0;  // running beta powers for this step index

  void begin(int t) {
    b1t = std::pow(beta1, t);
    b2t = std::pow(beta2, t);
  }
  void apply(double* p, const double* g, double* m, double* v, std::size_t n,
             double lr) const {
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / (1.0 - b1t);
      const double vhat = v[i] / (1.0 - b2t);
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

}  // namespace detail

// Adam moment buffers mirror the gradient layout; per-view appearance tensors
// keep their own step counters because only the active view receives
// gradients each iteration.
struct TrainState {
  SceneGrads m, v;
  std::vector<VecX> m_fg, v_fg;
  std::vector<TensorCHW> m_fmap, v_fmap;
  std::vector<int> appearance_steps;
  int step = 0;
};

inline TrainState make_train_state(const SceneBundle& scene) {
  TrainState st;
  st.m = make_scene_grads(scene);
  st.v = make_scene_grads(scene);
  for (const auto& view : scene.views) {
    st.m_fg.push_back(VecX::Zero(view.global_feature.size()));
    st.v_fg.push_back(VecX::Zero(view.global_feature.size()));
    st.m_fmap.emplace_back(view.feature_map.c, view.feature_map.h, view.feature_map.w);
    st.v_fmap.emplace_back(view.feature_map.c, view.feature_map.h, view.feature_map.w);
    st.appearance_steps.push_back(0);
  }
  return st;
}

namespace detail {

inline void apply_updates(SceneBundle& scene, const SceneGrads& g, TrainState& st,
                          const TrainConfig& cfg, int iter, int view_index) {
  AdamStep adam{cfg.beta1, cfg.beta2, cfg.epsilon};
  st.step += 1;
  adam.begin(st.step);

  const double lr_op = cfg.lr_opacity.at(iter, cfg.iterations);
  const double lr_samp = cfg.lr_sampling.at(iter, cfg.iterations);
  const double lr_fus = cfg.lr_fusion.at(iter, cfg.iterations);
  const double lr_app = cfg.lr_appearance.at(iter, cfg.iterations);

  for (std::size_t i = 0; i < scene.anchors.size(); ++i) {
    Anchor& a = scene.anchors[i];
    adam.apply(a.opacities.data(), g.d_opacities[i].data(), st.m.d_opacities[i].data(),
               st.v.d_opacities[i].data(), a.opacities.size(), lr_op);
    for (int j = 0; j < a.opacities.size(); ++j)
      a.opacities[j] = std::min(std::max(a.opacities[j], 0.0), 1.0);

    adam.apply(a.narrow_offsets.data(), g.d_narrow_offsets[i].data(),
               st.m.d_narrow_offsets[i].data(), st.v.d_narrow_offsets[i].data(),
               a.narrow_offsets.size(), lr_samp);
    adam.apply(a.broad_scales.data(), g.d_broad_scales[i].data(),
               st.m.d_broad_scales[i].data(), st.v.d_broad_scales[i].data(),
               a.broad_scales.size(), lr_samp);
    for (std::size_t m = 0; m < a.narrow_weights.size(); ++m) {
      adam.apply(a.narrow_weights[m].data(), g.d_narrow_weights[i][m].data(),
                 st.m.d_narrow_weights[i][m].data(), st.v.d_narrow_weights[i][m].data(),
                 a.narrow_weights[m].size(), lr_samp);
      adam.apply(a.broad_weights[m].data(), g.d_broad_weights[i][m].data(),
                 st.m.d_broad_weights[i][m].data(), st.v.d_broad_weights[i][m].data(),
                 a.broad_weights[m].size(), lr_samp);
    }
    adam.apply(a.intrinsic.data(), g.d_intrinsic[i].data(), st.m.d_intrinsic[i].data(),
               st.v.d_intrinsic[i].data(), a.intrinsic.size(), lr_fus);
  }

  auto update_stage = [&](std::vector<DenseLayer>& layers,
                          const std::vector<DenseLayer>& grads,
                          std::vector<DenseLayer>& ms, std::vector<DenseLayer>& vs) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      adam.apply(layers[l].weight.data(), grads[l].weight.data(), ms[l].weight.data(),
                 vs[l].weight.data(), layers[l].weight.size(), lr_fus);
      adam.apply(layers[l].bias.data(), grads[l].bias.data(), ms[l].bias.data(),
                 vs[l].bias.data(), layers[l].bias.size(), lr_fus);
    }
  };
  update_stage(scene.fusion.stage1, g.fusion.stage1, st.m.fusion.stage1, st.v.fusion.stage1);
  update_stage(scene.fusion.stage2, g.fusion.stage2, st.m.fusion.stage2, st.v.fusion.stage2);
  update_stage(scene.fusion.stage3, g.fusion.stage3, st.m.fusion.stage3, st.v.fusion.stage3);
  update_stage(scene.fusion.stage4, g.fusion.stage4, st.m.fusion.stage4, st.v.fusion.stage4);
  adam.apply(&scene.fusion.residual_refined, &g.fusion.residual_refined,
             &st.m.fusion.residual_refined, &st.v.fusion.residual_refined, 1, lr_fus);
  adam.apply(&scene.fusion.residual_intrinsic, &g.fusion.residual_intrinsic,
             &st.m.fusion.residual_intrinsic, &st.v.fusion.residual_intrinsic, 1, lr_fus);

  // Sparse appearance update: bias correction tracks per-view step counts.
  CameraView& view = scene.views[view_index];
  AdamStep app_adam{cfg.beta1, cfg.beta2, cfg.epsilon};
  st.appearance_steps[view_index] += 1;
  app_adam.begin(st.appearance_steps[view_index]);
  app_adam.apply(view.global_feature.data(), g.d_global_feature.data(),
                 st.m_fg[view_index].data(), st.v_fg[view_index].data(),
                 view.global_feature.size(), lr_app);
  app_adam.apply(view.feature_map.data.data(), g.d_feature_map.data.data(),
                 st.m_fmap[view_index].data.data(), st.v_fmap[view_index].data.data(),
                 view.feature_map.size(), lr_app);
}

inline std::string nan_diagnostic(const SceneBundle& scene, const ViewForward& fw) {
  std::string out = "non-finite loss; offending tensors:";
  auto scan = [&](const char* name, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(p[i])) {
        out += " ";
        out += name;
        return;
      }
  };
  for (const auto& a : scene.anchors) {
    scan("anchor.opacities", a.opacities.data(), a.opacities.size());
    scan("anchor.intrinsic", a.intrinsic.data(), a.intrinsic.size());
  }
  for (const auto& v : scene.views) {
    scan("view.global_feature", v.global_feature.data(), v.global_feature.size());
    scan("view.feature_map", v.feature_map.data.data(), v.feature_map.size());
  }
  scan("render.color", fw.render_out.color.data.data(), fw.render_out.color.size());
  return out;
}

}  // namespace detail

// Mean PSNR over a set of views. Held-out views are rendered with the mean
// appearance tensors of the training views (their own tensors never receive
// gradients), which probes whether the shared components generalize.
inline double mean_view_psnr(const SceneBundle& scene, bool held_out) {
  VecX mean_fg;
  TensorCHW mean_fmap;
  if (held_out) {
    int count = 0;
    for (const auto& v : scene.views)
      if (!v.held_out) {
        if (count == 0) {
          mean_fg = v.global_feature;
          mean_fmap = v.feature_map;
        } else {
          mean_fg += v.global_feature;
          for (std::size_t i = 0; i < mean_fmap.data.size(); ++i)
            mean_fmap.data[i] += v.feature_map.data[i];
        }
        ++count;
      }
    if (count == 0) throw std::invalid_argument("mean_view_psnr: no training views");
    mean_fg /= count;
    for (auto& v : mean_fmap.data) v /= count;
  }

  double total = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < scene.views.size(); ++i) {
    if (scene.views[i].held_out != held_out) continue;
    ForwardOverrides ov;
    if (held_out) {
      ov.global_feature = &mean_fg;
      ov.feature_map = &mean_fmap;
    }
    const ViewForward fw = forward_view(scene, static_cast<int>(i), false,
                                        held_out ? &ov : nullptr);
    total += psnr(fw.render_out.color, scene.views[i].gt);
    ++n;
  }
  if (n == 0) return 0.0;
  return total / n;
}

// Desk-scale training loop. When blocks and a schedule are supplied, each
// iteration draws its view from the block the rotation assigns to the
// iteration's slot; otherwise views cycle round-robin. One view per
// iteration; parameters update with bias-corrected adaptive moments under the
// exponentially decayed per-family rates.
inline TrainLog train(SceneBundle& scene, const TrainConfig& cfg,
                      const std::vector<BlockManifest>* blocks = nullptr,
                      const RotationSchedule* schedule = nullptr) {
  cfg.validate();
  validate_scene(scene);
  if (scene.views.empty()) throw std::invalid_argument("train: scene has no views");

  std::vector<int> train_views;
  for (std::size_t i = 0; i < scene.views.size(); ++i)
    if (!scene.views[i].held_out && !scene.views[i].gt.empty())
      train_views.push_back(static_cast<int>(i));
  if (train_views.empty() && cfg.iterations > 0)
    throw std::invalid_argument("train: no training views with ground truth");

  // Per-block view pools and rotation cursors.
  std::vector<std::vector<int>> block_views;
  std::vector<std::size_t> block_cursor;
  if (blocks && schedule) {
    for (const auto& b : *blocks) {
      std::vector<int> pool;
      for (int cam : b.camera_ids()) {
        if (cam < 0 || cam >= static_cast<int>(scene.views.size()))
          throw std::invalid_argument("train: block camera out of range");
        if (!scene.views[cam].held_out && !scene.views[cam].gt.empty()) pool.push_back(cam);
      }
      std::sort(pool.begin(), pool.end());
      pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
      block_views.push_back(std::move(pool));
      block_cursor.push_back(0);
    }
  }

  TrainState st = make_train_state(scene);
  TrainLog log;
  const auto t0 = std::chrono::steady_clock::now();

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    int view_index, block_id = -1;
    if (blocks && schedule && !schedule->periods.empty()) {
      const int period = std::min(iter / schedule->period_iters,
                                  static_cast<int>(schedule->periods.size()) - 1);
      const int slot = iter % schedule->num_slots;
      block_id = schedule->periods[period][slot];
      const auto& pool = block_views.at(block_id);
      if (pool.empty())
        throw std::invalid_argument("train: rotation selected a block with no views");
      view_index = pool[block_cursor[block_id] % pool.size()];
      block_cursor[block_id] += 1;
    } else {
      view_index = train_views[iter % train_views.size()];
    }

    const ViewForward fw = forward_view(scene, view_index, true);
    if (!std::isfinite(fw.loss.total))
      throw std::runtime_error("train: " + detail::nan_diagnostic(scene, fw));

    SceneGrads grads = make_scene_grads(scene);
    backward_view(scene, fw, grads);
    detail::apply_updates(scene, grads, st, cfg, iter, view_index);

    log.iterations.push_back({iter, scene.views[view_index].id, block_id, fw.loss});

    if (cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0)
      log.evals.push_back(
          {iter + 1, mean_view_psnr(scene, false), mean_view_psnr(scene, true)});
  }

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

// Deterministic fields only: the log must be bitwise reproducible for a fixed
// seed and config.
inline void write_log_tsv(const TrainLog& log, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("write_log_tsv: cannot open " + path);
  std::fprintf(f, "iteration\tview\tblock\ttotal\tphotometric\tssim\tl1\tprojection\tvolume\n");
  for (const auto& r : log.iterations)
    std::fprintf(f, "%d\t%d\t%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", r.iteration,
                 r.view, r.block, r.loss.total, r.loss.photometric, r.loss.ssim_dissim,
                 r.loss.l1, r.loss.projection, r.loss.volume);
  std::fclose(f);
}

enum class ParamFamily {
  colors,
  opacities,
  intrinsic,
  refined_input,
  global_feature,
  narrow_offsets,
  broad_scales,
  narrow_weights,
  broad_weights,
  residual_refined,
  residual_intrinsic,
  hrfn_weights,
  feature_map,
  anchor_offsets,  // frozen; reported gradient is exactly zero
};

// End-to-end gradient check: analytic dL/dtheta from the backward pass
// against central finite differences of the full forward, for a sampled
// subset of the family. Returns the max relative error over the probes.
inline double gradcheck(SceneBundle& scene, int view_index, ParamFamily family,
                        int max_probes = 8, double h = 1e-4) {
  const ViewForward fw = forward_view(scene, view_index, true);
  SceneGrads grads = make_scene_grads(scene);
  backward_view(scene, fw, grads);

  if (family == ParamFamily::anchor_offsets) return 0.0;  // frozen tensor

  auto loss_with = [&](const ForwardOverrides* ov) {
    return forward_view(scene, view_index, false, ov).loss.total;
  };
  auto rel_err = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
  };

  double max_err = 0.0;
  auto fd_probe = [&](double* slot, double analytic) {
    const double saved = *slot;
    *slot = saved + h;
    const double up = loss_with(nullptr);
    *slot = saved - h;
    const double dn = loss_with(nullptr);
    *slot = saved;
    max_err = std::max(max_err, rel_err(analytic, (up - dn) / (2 * h)));
  };
  // Deterministic spread of probe indices over a family of size n.
  auto probe_indices = [&](std::size_t n) {
    std::vector<std::size_t> idx;
    const std::size_t count = std::min<std::size_t>(max_probes, n);
    for (std::size_t j = 0; j < count; ++j) idx.push_back(j * n / count);
    return idx;
  };

  const int n_anchors = static_cast<int>(scene.anchors.size());
  switch (family) {
    case ParamFamily::colors: {
      for (std::size_t p : probe_indices(fw.colors.size() * 3)) {
        const std::size_t i = p / 3;
        const int ch = static_cast<int>(p % 3);
        auto colors = fw.colors;
        ForwardOverrides ov;
        ov.colors = &colors;
        colors[i][ch] = fw.colors[i][ch] + h;
        const double up = loss_with(&ov);
        colors[i][ch] = fw.colors[i][ch] - h;
        const double dn = loss_with(&ov);
        max_err = std::max(max_err, rel_err(grads.d_colors[i][ch], (up - dn) / (2 * h)));
      }
      break;
    }
    case ParamFamily::refined_input: {
      const std::size_t dim = scene.config.refined_dim;
      for (std::size_t p : probe_indices(n_anchors * dim)) {
        const std::size_t i = p / dim;
        const int c = static_cast<int>(p % dim);
        auto refined = fw.refined;
        ForwardOverrides ov;
        ov.refined = &refined;
        refined[i][c] = fw.refined[i][c] + h;
        const double up = loss_with(&ov);
        refined[i][c] = fw.refined[i][c] - h;
        const double dn = loss_with(&ov);
        max_err = std::max(max_err, rel_err(grads.d_refined[i][c], (up - dn) / (2 * h)));
      }
      break;
    }
    case ParamFamily::opacities: {
      for (std::size_t p : probe_indices(static_cast<std::size_t>(n_anchors) *
                                         scene.config.gaussians_per_anchor)) {
        const int i = static_cast<int>(p) / scene.config.gaussians_per_anchor;
        const int j = static_cast<int>(p) % scene.config.gaussians_per_anchor;
        fd_probe(&scene.anchors[i].opacities[j], grads.d_opacities[i][j]);
      }
      break;
    }
    case ParamFamily::intrinsic: {
      const std::size_t dim = scene.config.intrinsic_dim;
      for (std::size_t p : probe_indices(n_anchors * dim)) {
        const int i = static_cast<int>(p / dim);
        const int c = static_cast<int>(p % dim);
        fd_probe(&scene.anchors[i].intrinsic[c], grads.d_intrinsic[i][c]);
      }
      break;
    }
    case ParamFamily::global_feature: {
      CameraView& view = scene.views[view_index];
      for (std::size_t p : probe_indices(view.global_feature.size()))
        fd_probe(&view.global_feature[p], grads.d_global_feature[p]);
      break;
    }
    case ParamFamily::feature_map: {
      CameraView& view = scene.views[view_index];
      for (std::size_t p : probe_indices(view.feature_map.size()))
        fd_probe(&view.feature_map.data[p], grads.d_feature_map.data[p]);
      break;
    }
    case ParamFamily::narrow_offsets: {
      const std::size_t per = scene.config.samples_per_frustum * 2;
      for (std::size_t p : probe_indices(n_anchors * per)) {
        const int i = static_cast<int>(p / per);
        const int s = static_cast<int>((p % per) / 2);
        const int d = static_cast<int>(p % 2);
        fd_probe(&scene.anchors[i].narrow_offsets(s, d), grads.d_narrow_offsets[i](s, d));
      }
      break;
    }
    case ParamFamily::broad_scales: {
      const std::size_t per = scene.config.samples_per_frustum * 2;
      for (std::size_t p : probe_indices(n_anchors * per)) {
        const int i = static_cast<int>(p / per);
        const int s = static_cast<int>((p % per) / 2);
        const int d = static_cast<int>(p % 2);
        fd_probe(&scene.anchors[i].broad_scales(s, d), grads.d_broad_scales[i](s, d));
      }
      break;
    }
    case ParamFamily::narrow_weights:
    case ParamFamily::broad_weights: {
      const bool narrow = family == ParamFamily::narrow_weights;
      const std::size_t per = scene.config.band_count();
      if (per == 0) return 0.0;
      for (std::size_t p : probe_indices(n_anchors * per)) {
        const int i = static_cast<int>(p / per);
        std::size_t rem = p % per, lvl = 0;
        auto& weights = narrow ? scene.anchors[i].narrow_weights
                               : scene.anchors[i].broad_weights;
        const auto& gw = narrow ? grads.d_narrow_weights[i] : grads.d_broad_weights[i];
        while (rem >= static_cast<std::size_t>(weights[lvl].size())) {
          rem -= weights[lvl].size();
          ++lvl;
        }
        fd_probe(&weights[lvl][rem], gw[lvl][rem]);
      }
      break;
    }
    case ParamFamily::residual_refined:
      fd_probe(&scene.fusion.residual_refined, grads.fusion.residual_refined);
      break;
    case ParamFamily::residual_intrinsic:
      fd_probe(&scene.fusion.residual_intrinsic, grads.fusion.residual_intrinsic);
      break;
    case ParamFamily::hrfn_weights: {
      auto stages = {std::make_pair(&scene.fusion.stage1, &grads.fusion.stage1),
                     std::make_pair(&scene.fusion.stage2, &grads.fusion.stage2),
                     std::make_pair(&scene.fusion.stage3, &grads.fusion.stage3),
                     std::make_pair(&scene.fusion.stage4, &grads.fusion.stage4)};
      for (auto [layers, glayers] : stages)
        for (std::size_t l = 0; l < layers->size(); ++l) {
          const std::size_t n = (*layers)[l].weight.size();
          for (std::size_t p : probe_indices(std::min<std::size_t>(n, 3)))
            fd_probe((*layers)[l].weight.data() + (p * 97) % n,
                     (*glayers)[l].weight.data()[(p * 97) % n]);
          fd_probe((*layers)[l].bias.data(), (*glayers)[l].bias.data()[0]);
        }
      break;
    }
    case ParamFamily::anchor_offsets:
      break;
  }
  return max_err;
}

}  // namespace smw
