#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "smw/losses.hpp"
#include "smw/scene.hpp"

namespace smw {

// Axis-aligned bounds on the two ground-plane axes. Outer edges of the grid
// are infinite so every point and camera is covered.
struct BlockBounds {
  Vec2 lo = Vec2::Zero(), hi = Vec2::Zero();
  bool lo_inf[2] = {false, false};
  bool hi_inf[2] = {false, false};

  bool contains(const Vec2& p, bool strict) const {
    for (int d = 0; d < 2; ++d) {
      if (!lo_inf[d] && (strict ? p[d] <= lo[d] : p[d] < lo[d])) return false;
      if (!hi_inf[d] && (strict ? p[d] >= hi[d] : p[d] > hi[d])) return false;
    }
    return true;
  }
};

enum class CameraProvenance { initial, stage1_direct, stage1_greedy, stage2 };

inline const char* to_string(CameraProvenance p) {
  switch (p) {
    case CameraProvenance::initial: return "initial";
    case CameraProvenance::stage1_direct: return "stage1-direct";
    case CameraProvenance::stage1_greedy: return "stage1-greedy";
    case CameraProvenance::stage2: return "stage2";
  }
  return "?";
}

// One spatial block. Camera ids are indices into the camera list the
// partitioner was given; supervision maps member point id -> count of
// assigned cameras that see it.
struct BlockManifest {
  int id = 0;
  int grid_x = 0, grid_y = 0;
  BlockBounds cell;    // unexpanded grid cell (tiles the plane)
  BlockBounds bounds;  // cell expanded by 5% per edge
  std::vector<int> point_ids;
  std::vector<int> anchor_ids;
  std::vector<std::pair<int, CameraProvenance>> cameras;
  std::map<int, int> supervision;

  bool has_camera(int cam) const {
    for (const auto& [c, p] : cameras)
      if (c == cam) return true;
    return false;
  }
  std::vector<int> camera_ids() const {
    std::vector<int> out;
    out.reserve(cameras.size());
    for (const auto& [c, p] : cameras) out.push_back(c);
    return out;
  }
};

struct VisibilityTable {
  std::vector<std::vector<int>> visible;  // per point: sorted camera indices
  std::vector<int> counts;
  double mean_count = 0.0;
  double kappa = 0.5;
  double threshold = 0.0;  // tau = kappa * mean_count

  bool sees(int point, int cam) const {
    const auto& v = visible[point];
    return std::binary_search(v.begin(), v.end(), cam);
  }
};

// Linear-interpolation quantile (the numpy default).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty input");
  std::sort(values.begin(), values.end());
  const double h = (values.size() - 1) * q;
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

// The two world axes with the largest point extent, in ascending index order.
inline std::pair<int, int> pick_ground_axes(const std::vector<Vec3>& points) {
  double extent[3];
  for (int d = 0; d < 3; ++d) {
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (const auto& p : points) {
      mn = std::min(mn, p[d]);
      mx = std::max(mx, p[d]);
    }
    extent[d] = mx - mn;
  }
  int smallest = 0;
  for (int d = 1; d < 3; ++d)
    if (extent[d] < extent[smallest]) smallest = d;
  const int a = (smallest == 0) ? 1 : 0;
  const int b = (smallest == 2) ? 1 : 2;
  return {a, b};
}

// Grid division over the 5%/95% quantile box of the ground-plane point
// coordinates. Each cell is expanded by 5% of its edge length per edge, and
// the outermost edges are extended to infinity. Points join every block whose
// expanded bounds contain them; the initial camera assignment uses strict
// containment in the unexpanded cell.
inline std::vector<BlockManifest> initial_division(const std::vector<Vec3>& points,
                                                   const std::vector<CameraView>& cameras,
                                                   int grid_x, int grid_y,
                                                   std::pair<int, int> axes = {-1, -1}) {
  if (points.size() < 2) throw std::invalid_argument("initial_division: need >= 2 points");
  if (grid_x < 1 || grid_y < 1)
    throw std::invalid_argument("initial_division: grid must be >= 1x1");
  if (axes.first < 0) axes = pick_ground_axes(points);

  double qlo[2], qhi[2];
  const int ax[2] = {axes.first, axes.second};
  for (int d = 0; d < 2; ++d) {
    std::vector<double> coords;
    coords.reserve(points.size());
    for (const auto& p : points) coords.push_back(p[ax[d]]);
    qlo[d] = quantile(coords, 0.05);
    qhi[d] = quantile(coords, 0.95);
    if (!(qhi[d] > qlo[d]))
      throw std::domain_error("initial_division: degenerate extent on a ground axis");
  }
  const int grid[2] = {grid_x, grid_y};
  const double cell_w[2] = {(qhi[0] - qlo[0]) / grid_x, (qhi[1] - qlo[1]) / grid_y};

  std::vector<BlockManifest> blocks;
  int id = 0;
  for (int gy = 0; gy < grid_y; ++gy)
    for (int gx = 0; gx < grid_x; ++gx) {
      BlockManifest b;
      b.id = id++;
      b.grid_x = gx;
      b.grid_y = gy;
      const int gpos[2] = {gx, gy};
      for (int d = 0; d < 2; ++d) {
        const double lo = qlo[d] + gpos[d] * cell_w[d];
        const double hi = lo + cell_w[d];
        b.cell.lo[d] = lo;
        b.cell.hi[d] = hi;
        b.cell.lo_inf[d] = gpos[d] == 0;
        b.cell.hi_inf[d] = gpos[d] == grid[d] - 1;
        b.bounds.lo[d] = lo - 0.05 * cell_w[d];
        b.bounds.hi[d] = hi + 0.05 * cell_w[d];
        b.bounds.lo_inf[d] = b.cell.lo_inf[d];
        b.bounds.hi_inf[d] = b.cell.hi_inf[d];
      }
      blocks.push_back(std::move(b));
    }

  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec2 p(points[i][ax[0]], points[i][ax[1]]);
    for (auto& b : blocks)
      if (b.bounds.contains(p, false)) b.point_ids.push_back(static_cast<int>(i));
  }
  for (std::size_t c = 0; c < cameras.size(); ++c) {
    const Vec2 p(cameras[c].center[ax[0]], cameras[c].center[ax[1]]);
    for (auto& b : blocks)
      if (b.cell.contains(p, true))
        b.cameras.emplace_back(static_cast<int>(c), CameraProvenance::initial);
  }
  return blocks;
}

// Frustum-and-depth visibility (no occlusion test): a point is visible from a
// camera when its projection lands on the pixel grid in front of the near
// plane.
inline bool point_visible(const Vec3& p, const CameraView& cam, double near_plane = 0.01) {
  const Vec3 local = cam.world_to_cam * (p - cam.center);
  if (local.z() <= near_plane) return false;
  const double u = cam.fx * local.x() / local.z() + cam.cx;
  const double v = cam.fy * local.y() / local.z() + cam.cy;
  return u >= 0.0 && u <= cam.width - 1 && v >= 0.0 && v <= cam.height - 1;
}

inline VisibilityTable visibility_stats(const std::vector<Vec3>& points,
                                        const std::vector<CameraView>& cameras, double kappa,
                                        double near_plane = 0.01) {
  VisibilityTable t;
  t.kappa = kappa;
  t.visible.resize(points.size());
  t.counts.resize(points.size(), 0);
  double sum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t c = 0; c < cameras.size(); ++c)
      if (point_visible(points[i], cameras[c], near_plane))
        t.visible[i].push_back(static_cast<int>(c));
    t.counts[i] = static_cast<int>(t.visible[i].size());
    sum += t.counts[i];
  }
  t.mean_count = points.empty() ? 0.0 : sum / points.size();
  t.threshold = kappa * t.mean_count;
  return t;
}

// Recomputes the per-point supervision counts from the block's camera set.
inline void recompute_supervision(BlockManifest& block, const VisibilityTable& vis) {
  block.supervision.clear();
  for (int p : block.point_ids) {
    int n = 0;
    for (const auto& [cam, prov] : block.cameras)
      if (vis.sees(p, cam)) ++n;
    block.supervision[p] = n;
  }
}

// Stage 1: visibility-aware camera allocation. Points whose global visible
// set is below the threshold pull in all of their cameras; the remaining
// candidates are added greedily by coverage gain (count of still
// under-supervised member points they see) until every point reaches the
// threshold or no candidate helps. Ties break toward the lowest camera index.
inline void psg_stage1(BlockManifest& block, const VisibilityTable& vis,
                       const std::vector<int>& candidate_cameras) {
  recompute_supervision(block, vis);
  const double tau = vis.threshold;

  auto add_camera = [&](int cam, CameraProvenance prov) {
    block.cameras.emplace_back(cam, prov);
    for (int p : block.point_ids)
      if (vis.sees(p, cam)) ++block.supervision[p];
  };

  for (int p : block.point_ids) {
    if (vis.counts[p] < tau)
      for (int cam : vis.visible[p])
        if (!block.has_camera(cam)) add_camera(cam, CameraProvenance::stage1_direct);
  }

  std::vector<int> pool;
  for (int cam : candidate_cameras)
    if (!block.has_camera(cam)) pool.push_back(cam);
  std::sort(pool.begin(), pool.end());

  while (true) {
    bool any_needy = false;
    for (int p : block.point_ids)
      if (block.supervision[p] < tau) {
        any_needy = true;
        break;
      }
    if (!any_needy) break;

    int best = -1, best_gain = 0;
    for (int cam : pool) {
      if (block.has_camera(cam)) continue;
      int gain = 0;
      for (int p : block.point_ids)
        if (block.supervision[p] < tau && vis.sees(p, cam)) ++gain;
      if (gain > best_gain) {
        best_gain = gain;
        best = cam;
      }
    }
    if (best < 0) break;  // no performance gains
    add_camera(best, CameraProvenance::stage1_greedy);
  }
}

// Stage 2: content-relevant augmentation. A camera joins a block when the
// block's removal visibly changes its rendering, measured as
// 1 - SSIM(full, without-block) > eta. The callback renders camera `cam`,
// excluding the given block's content when non-null.
using BlockRenderFn = std::function<Image(int cam, const BlockManifest* exclude)>;

inline void psg_stage2(std::vector<BlockManifest>& blocks, int num_cameras, double eta,
                       const BlockRenderFn& render_fn) {
  std::vector<Image> full(num_cameras);
  std::vector<bool> have_full(num_cameras, false);
  for (auto& block : blocks)
    for (int cam = 0; cam < num_cameras; ++cam) {
      if (block.has_camera(cam)) continue;
      if (!have_full[cam]) {
        full[cam] = render_fn(cam, nullptr);
        have_full[cam] = true;
      }
      const Image excl = render_fn(cam, &block);
      const double dissim = 1.0 - ssim(full[cam], excl);
      if (dissim > eta) block.cameras.emplace_back(cam, CameraProvenance::stage2);
    }
}

// Round-robin block rotation: period t hands slot g the block
// (g + t * num_slots) mod num_blocks. Over any number of periods the
// per-block counts differ by at most one.
struct RotationSchedule {
  int num_blocks = 0, num_slots = 0;
  int period_iters = 0, total_iters = 0;
  std::vector<std::vector<int>> periods;  // [period][slot] -> block

  std::pair<int, int> period_range(int p) const {
    return {p * period_iters, std::min((p + 1) * period_iters, total_iters)};
  }
};

inline RotationSchedule rotational_schedule(int num_blocks, int num_slots, int period_iters,
                                            int total_iters) {
  if (num_slots > num_blocks)
    throw std::invalid_argument("rotational_schedule: more slots than blocks");
  if (num_slots < 1 || period_iters < 1 || total_iters < 0)
    throw std::invalid_argument("rotational_schedule: invalid parameters");
  RotationSchedule s;
  s.num_blocks = num_blocks;
  s.num_slots = num_slots;
  s.period_iters = period_iters;
  s.total_iters = total_iters;
  const int n_periods = (total_iters + period_iters - 1) / period_iters;
  for (int t = 0; t < n_periods; ++t) {
    std::vector<int> slots(num_slots);
    for (int g = 0; g < num_slots; ++g)
      slots[g] = (g + t * num_slots) % num_blocks;
    s.periods.push_back(std::move(slots));
  }
  return s;
}

}  // namespace smw
