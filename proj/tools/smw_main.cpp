// Command-line front end: scene generation, rendering, evaluation, wavelet
// self-checks, sampling visualization, scene partitioning, rotation
// scheduling, and training.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "smw/io.hpp"
#include "smw/png_io.hpp"
#include "smw/synthetic.hpp"
#include "smw/toml.hpp"
#include "smw/trainer.hpp"

namespace fs = std::filesystem;
using namespace smw;

namespace {

int find_view(const SceneBundle& scene, int view_id) {
  for (std::size_t i = 0; i < scene.views.size(); ++i)
    if (scene.views[i].id == view_id) return static_cast<int>(i);
  throw std::runtime_error("no view with id " + std::to_string(view_id));
}

// Flattened Gaussian positions; block "points" are these primitives.
std::vector<Vec3> scene_points(const SceneBundle& scene) {
  std::vector<Vec3> points;
  for (const auto& g : flatten_gaussians(scene)) points.push_back(g.mean);
  return points;
}

void assign_anchor_ids(std::vector<BlockManifest>& blocks, const SceneBundle& scene,
                       std::pair<int, int> axes) {
  for (auto& b : blocks) {
    b.anchor_ids.clear();
    for (std::size_t i = 0; i < scene.anchors.size(); ++i) {
      const Vec2 p(scene.anchors[i].center[axes.first], scene.anchors[i].center[axes.second]);
      if (b.bounds.contains(p, false)) b.anchor_ids.push_back(static_cast<int>(i));
    }
  }
}

TrainConfig train_config_from_toml(const std::string& path) {
  TrainConfig cfg;
  if (path.empty()) return cfg;
  const TomlTable t = parse_toml_file(path);
  cfg.iterations = static_cast<int>(toml_number(t, "train", "iterations", cfg.iterations));
  cfg.seed = static_cast<std::uint64_t>(toml_number(t, "train", "seed", 0));
  cfg.eval_every = static_cast<int>(toml_number(t, "train", "eval_every", cfg.eval_every));
  cfg.rotation_period =
      static_cast<int>(toml_number(t, "train", "rotation_period", cfg.rotation_period));
  cfg.slots = static_cast<int>(toml_number(t, "train", "slots", cfg.slots));
  auto lr = [&](const char* name, LrPair fallback) {
    return LrPair{toml_number(t, "lr", std::string(name) + "_start", fallback.start),
                  toml_number(t, "lr", std::string(name) + "_end", fallback.end)};
  };
  cfg.lr_sampling = lr("sampling", cfg.lr_sampling);
  cfg.lr_fusion = lr("fusion", cfg.lr_fusion);
  cfg.lr_appearance = lr("appearance", cfg.lr_appearance);
  cfg.lr_opacity = lr("opacity", cfg.lr_opacity);
  return cfg;
}

std::pair<int, int> parse_grid(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos)
    throw std::runtime_error("grid must look like MxN, got " + s);
  return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

int cmd_gen(const std::string& preset, std::uint64_t seed, const std::string& out) {
  const SceneBundle scene = make_synthetic_scene(preset, seed);
  save_scene(scene, out);
  std::printf("wrote %s: %zu anchors, %d gaussians, %zu views (%d held out)\n",
              (fs::path(out) / "scene.json").c_str(), scene.anchors.size(),
              scene.total_gaussians(), scene.views.size(),
              static_cast<int>(std::count_if(scene.views.begin(), scene.views.end(),
                                             [](const CameraView& v) { return v.held_out; })));
  return 0;
}

int cmd_render(const std::string& scene_path, int view_id, const std::string& out,
               const std::string& raw) {
  const SceneBundle scene = load_scene(scene_path);
  const int idx = find_view(scene, view_id);
  const ViewForward fw = forward_view(scene, idx, false);
  if (!out.empty()) write_png(out, fw.render_out.color);
  if (!raw.empty()) write_raw_f32(raw, fw.render_out.color);
  std::printf("rendered view %d (%dx%d)\n", view_id, scene.views[idx].width,
              scene.views[idx].height);
  return 0;
}

int cmd_eval(const std::string& scene_path, const std::string& views_path) {
  const SceneBundle scene = load_scene(scene_path);

  std::vector<int> selected;
  if (!views_path.empty()) {
    std::ifstream f(views_path);
    if (!f) throw std::runtime_error("cannot open: " + views_path);
    nlohmann::json j;
    f >> j;
    const auto& arr = j.is_array() ? j : j.at("views");
    for (const auto& v : arr) selected.push_back(v.get<int>());
  } else {
    for (const auto& v : scene.views) selected.push_back(v.id);
  }

  // Held-out views render with the mean training-view appearance.
  VecX mean_fg;
  TensorCHW mean_fmap;
  int train_count = 0;
  for (const auto& v : scene.views)
    if (!v.held_out) {
      if (train_count == 0) {
        mean_fg = v.global_feature;
        mean_fmap = v.feature_map;
      } else {
        mean_fg += v.global_feature;
        for (std::size_t i = 0; i < mean_fmap.data.size(); ++i)
          mean_fmap.data[i] += v.feature_map.data[i];
      }
      ++train_count;
    }
  if (train_count > 0) {
    mean_fg /= train_count;
    for (auto& v : mean_fmap.data) v /= train_count;
  }

  std::printf("view\tsplit\tpsnr\tssim\tl1\n");
  double sum_psnr = 0, sum_ssim = 0, sum_l1 = 0;
  int n = 0;
  for (int id : selected) {
    const int idx = find_view(scene, id);
    const CameraView& view = scene.views[idx];
    if (view.gt.empty()) continue;
    ForwardOverrides ov;
    if (view.held_out && train_count > 0) {
      ov.global_feature = &mean_fg;
      ov.feature_map = &mean_fmap;
    }
    const ViewForward fw =
        forward_view(scene, idx, false, view.held_out ? &ov : nullptr);
    const double p = psnr(fw.render_out.color, view.gt);
    const double s = ssim(fw.render_out.color, view.gt);
    double l1 = 0;
    for (std::size_t i = 0; i < view.gt.data.size(); ++i)
      l1 += std::abs(fw.render_out.color.data[i] - view.gt.data[i]);
    l1 /= static_cast<double>(view.gt.data.size());
    std::printf("%d\t%s\t%.4f\t%.6f\t%.6f\n", id, view.held_out ? "test" : "train", p, s, l1);
    sum_psnr += p;
    sum_ssim += s;
    sum_l1 += l1;
    ++n;
  }
  if (n > 0)
    std::printf("mean\t-\t%.4f\t%.6f\t%.6f\n", sum_psnr / n, sum_ssim / n, sum_l1 / n);
  return 0;
}

int cmd_dwt_check(const std::string& size, std::uint64_t seed) {
  const auto x = size.find('x');
  if (x == std::string::npos) throw std::runtime_error("size must look like HxW");
  const int h = std::stoi(size.substr(0, x)), w = std::stoi(size.substr(x + 1));
  Rng rng(seed);
  TensorCHW map(8, h, w);
  for (auto& v : map.data) v = rng.normal();

  const SubBandSet bands = dwt1(map);
  const TensorCHW back = idwt1(bands);
  double max_err = 0.0;
  for (std::size_t i = 0; i < map.data.size(); ++i)
    max_err = std::max(max_err, std::abs(map.data[i] - back.data[i]));

  double in_energy = 0.0, out_energy = 0.0;
  for (double v : map.data) in_energy += v * v;
  for (const auto* b : {&bands.ll, &bands.lh, &bands.hl, &bands.hh})
    for (double v : b->data) out_energy += v * v;
  const bool padded = (h % 2) != 0 || (w % 2) != 0;

  std::printf("size %dx%d seed %llu\n", h, w, static_cast<unsigned long long>(seed));
  std::printf("round-trip max abs error: %.3e\n", max_err);
  if (padded)
    std::printf("energy (padded input, bands vs padded map): n/a\n");
  else
    std::printf("energy error: %.3e\n", std::abs(in_energy - out_energy));
  return 0;
}

int cmd_sample_viz(const std::string& scene_path, int anchor, int view_id,
                   const std::string& out) {
  const SceneBundle scene = load_scene(scene_path);
  const int idx = find_view(scene, view_id);
  const CameraView& view = scene.views[idx];
  if (anchor < 0 || anchor >= static_cast<int>(scene.anchors.size()))
    throw std::runtime_error("anchor index out of range");

  const FeaturePyramid pyr =
      split_feature_map(view.feature_map, scene.config.wavelet_levels);
  SamplerCache cache;
  refined_feature(scene.anchors[anchor], pyr, view, scene.config, &cache);
  if (!cache.in_front) throw std::runtime_error("anchor is behind this view");

  // Accumulate a soft footprint per sample position, in full-map coordinates.
  const int fh = view.feature_map.h, fw_ = view.feature_map.w;
  std::vector<double> heat(static_cast<std::size_t>(fh) * fw_, 0.0);
  auto splat = [&](const Vec2& uv, double weight) {
    const double sigma = 0.7;
    for (int y = 0; y < fh; ++y)
      for (int x = 0; x < fw_; ++x) {
        const double d2 = (x - uv.x()) * (x - uv.x()) + (y - uv.y()) * (y - uv.y());
        heat[static_cast<std::size_t>(y) * fw_ + x] +=
            weight * std::exp(-d2 / (2 * sigma * sigma));
      }
  };
  const Anchor& a = scene.anchors[anchor];
  for (int s = 0; s < scene.config.samples_per_frustum; ++s) {
    splat(cache.base_uv + Vec2(a.narrow_offsets.row(s)), 1.0);
    splat(Vec2(a.broad_scales.row(s)).cwiseProduct(cache.base_uv), 1.0);
  }
  double peak = 0.0;
  for (double v : heat) peak = std::max(peak, v);

  const int up = 16;  // nearest-neighbor upscale for visibility
  Image img(fh * up, fw_ * up);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double v = peak > 0 ? heat[static_cast<std::size_t>(y / up) * fw_ + x / up] / peak
                                : 0.0;
      img.at(y, x, 0) = v;
      img.at(y, x, 1) = v * 0.85;
      img.at(y, x, 2) = 1.0 - v;
    }
  write_png(out, img);
  std::printf("wrote %s (base projection %.2f, %.2f; broad radius %.2f)\n", out.c_str(),
              cache.base_uv.x(), cache.base_uv.y(), cache.broad_radius);
  return 0;
}

int cmd_partition(const std::string& scene_path, const std::string& grid, double kappa,
                  double eta, const std::string& out, const std::string& axes_arg) {
  const auto [gx, gy] = parse_grid(grid);

  std::vector<Vec3> points;
  std::vector<CameraView> cameras;
  SceneBundle scene;
  const bool renderable = fs::path(scene_path).extension() == ".json";
  if (renderable) {
    scene = load_scene(scene_path);
    points = scene_points(scene);
    cameras = scene.views;
  } else {
    const ColmapData data = load_colmap_text(scene_path);
    points = data.points;
    cameras = data.cameras;
  }

  std::pair<int, int> axes{-1, -1};
  if (!axes_arg.empty()) {
    const std::map<std::string, std::pair<int, int>> named{
        {"xy", {0, 1}}, {"xz", {0, 2}}, {"yz", {1, 2}}};
    axes = named.at(axes_arg);
  } else {
    axes = pick_ground_axes(points);
  }

  auto blocks = initial_division(points, cameras, gx, gy, axes);
  if (renderable) assign_anchor_ids(blocks, scene, axes);

  const VisibilityTable vis = visibility_stats(points, cameras, kappa);
  std::vector<int> all_cams(cameras.size());
  for (std::size_t i = 0; i < cameras.size(); ++i) all_cams[i] = static_cast<int>(i);
  for (auto& b : blocks) psg_stage1(b, vis, all_cams);

  if (renderable) {
    const int k = scene.config.gaussians_per_anchor;
    std::map<int, ViewForward> forward_cache;
    auto render_fn = [&](int cam, const BlockManifest* exclude) -> Image {
      auto it = forward_cache.find(cam);
      if (it == forward_cache.end())
        it = forward_cache.emplace(cam, forward_view(scene, cam, false)).first;
      if (!exclude) return it->second.render_out.color;
      std::vector<int> ids;
      for (int a : exclude->anchor_ids)
        for (int j = 0; j < k; ++j) ids.push_back(a * k + j);
      return render_excluding(scene, scene.views[cam], it->second.colors,
                              it->second.opacities, ids)
          .color;
    };
    psg_stage2(blocks, static_cast<int>(cameras.size()), eta, render_fn);
    for (auto& b : blocks) recompute_supervision(b, vis);
  } else {
    std::printf("note: plain point-cloud input, stage 2 (render sensitivity) skipped\n");
  }

  save_blocks(blocks, out);

  std::ofstream hist(fs::path(out) / "supervision_histogram.tsv");
  hist << "block\tn_vis\tpoints\n";
  for (const auto& b : blocks) {
    std::map<int, int> counts;
    for (const auto& [p, nv] : b.supervision) counts[nv]++;
    for (const auto& [nv, cnt] : counts)
      hist << b.id << "\t" << nv << "\t" << cnt << "\n";
  }

  std::printf("mean visible cameras per point: %.3f (tau = %.3f)\n", vis.mean_count,
              vis.threshold);
  for (const auto& b : blocks) {
    int direct = 0, greedy = 0, stage2 = 0, initial = 0;
    for (const auto& [cam, prov] : b.cameras) switch (prov) {
        case CameraProvenance::initial: ++initial; break;
        case CameraProvenance::stage1_direct: ++direct; break;
        case CameraProvenance::stage1_greedy: ++greedy; break;
        case CameraProvenance::stage2: ++stage2; break;
      }
    std::printf(
        "block %d: %zu points, %zu cameras (initial %d, stage1-direct %d, "
        "stage1-greedy %d, stage2 %d)\n",
        b.id, b.point_ids.size(), b.cameras.size(), initial, direct, greedy, stage2);
  }
  return 0;
}

int cmd_schedule(int blocks, int slots, int niter, int total) {
  const RotationSchedule s = rotational_schedule(blocks, slots, niter, total);
  std::printf("period\titers\tslot assignments\n");
  for (std::size_t p = 0; p < s.periods.size(); ++p) {
    const auto [lo, hi] = s.period_range(static_cast<int>(p));
    std::string cells;
    for (int g = 0; g < slots; ++g) {
      if (g) cells += " ";
      cells += std::to_string(g) + ":" + std::to_string(s.periods[p][g]);
    }
    std::printf("%zu\t[%d,%d)\t%s\n", p, lo, hi, cells.c_str());
  }
  return 0;
}

int cmd_train(const std::string& scene_path, const std::string& out,
              const std::string& log_path, const std::string& config_path, int iters,
              const std::string& blocks_dir, int slots) {
  SceneBundle scene = load_scene(scene_path);
  TrainConfig cfg = train_config_from_toml(config_path);
  if (iters >= 0) cfg.iterations = iters;
  if (slots > 0) cfg.slots = slots;

  TrainLog log;
  if (!blocks_dir.empty()) {
    const auto blocks = load_blocks(blocks_dir);
    const RotationSchedule schedule =
        rotational_schedule(static_cast<int>(blocks.size()), cfg.slots,
                            cfg.rotation_period, cfg.iterations);
    log = train(scene, cfg, &blocks, &schedule);
  } else {
    log = train(scene, cfg);
  }

  if (!out.empty()) save_scene(scene, out);
  if (!log_path.empty()) {
    fs::create_directories(fs::path(log_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(log_path).parent_path());
    write_log_tsv(log, log_path);
  }

  if (!log.iterations.empty())
    std::printf("final loss %.6f (photometric %.6f)\n", log.iterations.back().loss.total,
                log.iterations.back().loss.photometric);
  std::printf("train PSNR %.2f dB, held-out PSNR %.2f dB (%.1f s)\n",
              mean_view_psnr(scene, false), mean_view_psnr(scene, true), log.wall_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchor-based gaussian scene reconstruction toolkit"};
  app.require_subcommand(1);

  std::string preset = "tiny", out, scene_path, raw, views_path, size = "16x16";
  std::string grid = "2x2", axes, config_path, blocks_dir, log_path;
  std::uint64_t seed = 0;
  int view_id = 0, anchor = 0, iters = -1;
  int blocks = 2, slots = 1, niter = 100, total = 1000;
  double kappa = 0.5, eta = 0.01;

  auto* gen = app.add_subcommand("gen", "generate a synthetic scene");
  gen->add_option("--preset", preset, "tiny or medium");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out, "output directory")->required();

  auto* render = app.add_subcommand("render", "render one view to an image");
  render->add_option("--scene", scene_path)->required();
  render->add_option("--view", view_id)->required();
  render->add_option("--out", out, "PNG path");
  render->add_option("--raw", raw, "raw float32 dump path");

  auto* eval = app.add_subcommand("eval", "print a PSNR/SSIM/L1 metrics table");
  eval->add_option("--scene", scene_path)->required();
  eval->add_option("--views", views_path, "JSON list of view ids");

  auto* dwt = app.add_subcommand("dwt-check", "wavelet round-trip self check");
  dwt->add_option("--size", size, "HxW");
  dwt->add_option("--seed", seed);

  auto* viz = app.add_subcommand("sample-viz", "sampling attention map for one anchor");
  viz->add_option("--scene", scene_path)->required();
  viz->add_option("--anchor", anchor)->required();
  viz->add_option("--view", view_id)->required();
  viz->add_option("--out", out)->required();

  auto* part = app.add_subcommand("partition", "divide a scene into camera blocks");
  part->add_option("--scene", scene_path, "scene.json or COLMAP-like .txt")->required();
  part->add_option("--grid", grid, "MxN");
  part->add_option("--kappa", kappa, "supervision threshold factor");
  part->add_option("--eta", eta, "stage-2 sensitivity threshold");
  part->add_option("--axes", axes, "ground axes: xy, xz or yz (default: largest extent)");
  part->add_option("--out", out)->required();

  auto* sched = app.add_subcommand("schedule", "print the block rotation table");
  sched->add_option("--blocks", blocks)->required();
  sched->add_option("--slots", slots)->required();
  sched->add_option("--niter", niter)->required();
  sched->add_option("--total", total)->required();

  auto* tr = app.add_subcommand("train", "optimize a scene");
  tr->add_option("--scene", scene_path)->required();
  tr->add_option("--config", config_path, "train config TOML");
  tr->add_option("--iters", iters, "override iteration count");
  tr->add_option("--out", out, "directory for the trained scene");
  tr->add_option("--log", log_path, "per-iteration TSV log");
  tr->add_option("--blocks", blocks_dir, "block manifest directory (enables rotation)");
  tr->add_option("--slots", slots, "simulated compute slots");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(preset, seed, out);
    if (render->parsed()) return cmd_render(scene_path, view_id, out, raw);
    if (eval->parsed()) return cmd_eval(scene_path, views_path);
    if (dwt->parsed()) return cmd_dwt_check(size, seed);
    if (viz->parsed()) return cmd_sample_viz(scene_path, anchor, view_id, out);
    if (part->parsed()) return cmd_partition(scene_path, grid, kappa, eta, out, axes);
    if (sched->parsed()) return cmd_schedule(blocks, slots, niter, total);
    if (tr->parsed())
      return cmd_train(scene_path, out, log_path, config_path, iters, blocks_dir, slots);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
