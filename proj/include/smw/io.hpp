#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "smw/partition.hpp"
#include "smw/scene.hpp"

namespace smw {

inline constexpr char kSceneMagic[8] = {'S', 'M', 'W', 'S', '0', '0', '0', '1'};

// Named-tensor blob: magic, tensor count, then per tensor a name, a shape,
// and row-major little-endian float32 data.
namespace blob {

struct Entry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

inline void write(const std::string& path, const std::vector<Entry>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kSceneMagic, 8);
  const auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    u32(static_cast<std::uint32_t>(e.name.size()));
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    u32(static_cast<std::uint32_t>(e.dims.size()));
    std::size_t total = 1;
    for (std::uint32_t d : e.dims) {
      u32(d);
      total *= d;
    }
    if (total != e.data.size())
      throw std::logic_error("tensor blob: shape/data mismatch for " + e.name);
    f.write(reinterpret_cast<const char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::map<std::string, Entry> read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kSceneMagic, 8) != 0)
    throw std::runtime_error("bad scene blob magic in " + path);
  const auto u32 = [&] {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  std::map<std::string, Entry> out;
  const std::uint32_t count = u32();
  for (std::uint32_t i = 0; i < count && f; ++i) {
    Entry e;
    e.name.resize(u32());
    f.read(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const std::uint32_t ndim = u32();
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.dims.push_back(u32());
      total *= e.dims.back();
    }
    e.data.resize(total);
    f.read(reinterpret_cast<char*>(e.data.data()),
           static_cast<std::streamsize>(total * sizeof(float)));
    out[e.name] = std::move(e);
  }
  if (!f) throw std::runtime_error("truncated scene blob: " + path);
  return out;
}

}  // namespace blob

namespace detail {

inline nlohmann::json config_to_json(const Config& c) {
  return {{"gaussians_per_anchor", c.gaussians_per_anchor},
          {"samples_per_frustum", c.samples_per_frustum},
          {"wavelet_levels", c.wavelet_levels},
          {"intrinsic_dim", c.intrinsic_dim},
          {"refined_dim", c.refined_dim},
          {"global_dim", c.global_dim},
          {"voxel_size", c.voxel_size},
          {"narrow_radius", c.narrow_radius},
          {"broad_radius_max", c.broad_radius_max},
          {"ssim_weight", c.ssim_weight},
          {"l1_weight", c.l1_weight},
          {"proj_weight", c.proj_weight},
          {"vol_weight", c.vol_weight},
          {"visibility_kappa", c.visibility_kappa},
          {"sensitivity_eta", c.sensitivity_eta},
          {"rotation_period", c.rotation_period},
          {"pe_levels", c.pe_levels},
          {"feat_downsample", c.feat_downsample},
          {"near_plane", c.near_plane}};
}

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  c.gaussians_per_anchor = j.at("gaussians_per_anchor");
  c.samples_per_frustum = j.at("samples_per_frustum");
  c.wavelet_levels = j.at("wavelet_levels");
  c.intrinsic_dim = j.at("intrinsic_dim");
  c.refined_dim = j.at("refined_dim");
  c.global_dim = j.at("global_dim");
  c.voxel_size = j.at("voxel_size");
  c.narrow_radius = j.at("narrow_radius");
  c.broad_radius_max = j.at("broad_radius_max");
  c.ssim_weight = j.at("ssim_weight");
  c.l1_weight = j.at("l1_weight");
  c.proj_weight = j.at("proj_weight");
  c.vol_weight = j.at("vol_weight");
  c.visibility_kappa = j.at("visibility_kappa");
  c.sensitivity_eta = j.at("sensitivity_eta");
  c.rotation_period = j.at("rotation_period");
  c.pe_levels = j.at("pe_levels");
  c.feat_downsample = j.at("feat_downsample");
  c.near_plane = j.at("near_plane");
  return c;
}

template <typename Derived>
void push_matrix(std::vector<float>& out, const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      out.push_back(static_cast<float>(m(r, c)));
}

}  // namespace detail

// Writes dir/scene.json (cameras, config, counts) and dir/scene.bin (all
// anchor, view, and fusion tensors).
inline void save_scene(const SceneBundle& scene, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const Config& cfg = scene.config;
  const int n = static_cast<int>(scene.anchors.size());
  const int k = cfg.gaussians_per_anchor;
  const int ks = cfg.samples_per_frustum;
  const int bands = cfg.band_count();

  std::vector<blob::Entry> entries;
  auto add = [&](std::string name, std::vector<std::uint32_t> dims, std::vector<float> data) {
    entries.push_back({std::move(name), std::move(dims), std::move(data)});
  };

  std::vector<float> center, voxel, offsets, intrinsic, nc, bc, wn, wb, rot, scl, opac;
  for (const auto& a : scene.anchors) {
    detail::push_matrix(center, a.center.transpose());
    detail::push_matrix(voxel, a.voxel_scale.transpose());
    detail::push_matrix(offsets, a.offsets);
    detail::push_matrix(intrinsic, a.intrinsic.transpose());
    detail::push_matrix(nc, a.narrow_offsets);
    detail::push_matrix(bc, a.broad_scales);
    for (const auto& w : a.narrow_weights) detail::push_matrix(wn, w.transpose());
    for (const auto& w : a.broad_weights) detail::push_matrix(wb, w.transpose());
    for (const auto& q : a.rotations) {
      rot.push_back(static_cast<float>(q.w()));
      rot.push_back(static_cast<float>(q.x()));
      rot.push_back(static_cast<float>(q.y()));
      rot.push_back(static_cast<float>(q.z()));
    }
    detail::push_matrix(scl, a.scales);
    detail::push_matrix(opac, a.opacities.transpose());
  }
  const auto un = [](int v) { return static_cast<std::uint32_t>(v); };
  add("anchors.center", {un(n), 3}, std::move(center));
  add("anchors.voxel_scale", {un(n), 3}, std::move(voxel));
  add("anchors.offsets", {un(n), un(k), 3}, std::move(offsets));
  add("anchors.intrinsic", {un(n), un(cfg.intrinsic_dim)}, std::move(intrinsic));
  add("anchors.narrow_offsets", {un(n), un(ks), 2}, std::move(nc));
  add("anchors.broad_scales", {un(n), un(ks), 2}, std::move(bc));
  if (bands > 0) {
    add("anchors.narrow_weights", {un(n), un(bands)}, std::move(wn));
    add("anchors.broad_weights", {un(n), un(bands)}, std::move(wb));
  }
  add("anchors.rotation", {un(n), un(k), 4}, std::move(rot));
  add("anchors.scale", {un(n), un(k), 3}, std::move(scl));
  add("anchors.opacity", {un(n), un(k)}, std::move(opac));

  nlohmann::json views_json = nlohmann::json::array();
  for (const auto& v : scene.views) {
    nlohmann::json jv;
    jv["id"] = v.id;
    jv["center"] = {v.center.x(), v.center.y(), v.center.z()};
    std::vector<double> rot9;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot9.push_back(v.world_to_cam(r, c));
    jv["rotation"] = rot9;
    jv["fx"] = v.fx;
    jv["fy"] = v.fy;
    jv["cx"] = v.cx;
    jv["cy"] = v.cy;
    jv["width"] = v.width;
    jv["height"] = v.height;
    jv["held_out"] = v.held_out;
    jv["image_path"] = v.image_path;
    jv["has_gt"] = !v.gt.empty();
    views_json.push_back(std::move(jv));

    const std::string prefix = "view." + std::to_string(v.id) + ".";
    std::vector<float> fg, fmap, gt;
    detail::push_matrix(fg, v.global_feature.transpose());
    for (double x : v.feature_map.data) fmap.push_back(static_cast<float>(x));
    add(prefix + "global_feature", {un(cfg.global_dim)}, std::move(fg));
    add(prefix + "feature_map",
        {un(v.feature_map.c), un(v.feature_map.h), un(v.feature_map.w)}, std::move(fmap));
    if (!v.gt.empty()) {
      for (double x : v.gt.data) gt.push_back(static_cast<float>(x));
      add(prefix + "gt", {un(v.height), un(v.width), 3}, std::move(gt));
    }
  }

  auto add_stage = [&](const char* name, const std::vector<DenseLayer>& layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::vector<float> w, b;
      detail::push_matrix(w, layers[l].weight);
      detail::push_matrix(b, layers[l].bias.transpose());
      const std::string base =
          std::string("fusion.") + name + ".layer" + std::to_string(l) + ".";
      add(base + "weight",
          {un(static_cast<int>(layers[l].weight.rows())),
           un(static_cast<int>(layers[l].weight.cols()))},
          std::move(w));
      add(base + "bias", {un(static_cast<int>(layers[l].bias.size()))}, std::move(b));
    }
  };
  add_stage("stage1", scene.fusion.stage1);
  add_stage("stage2", scene.fusion.stage2);
  add_stage("stage3", scene.fusion.stage3);
  add_stage("stage4", scene.fusion.stage4);
  add("fusion.residuals", {2},
      {static_cast<float>(scene.fusion.residual_refined),
       static_cast<float>(scene.fusion.residual_intrinsic)});

  blob::write((fs::path(dir) / "scene.bin").string(), entries);

  nlohmann::json j;
  j["format"] = "smw-scene-v1";
  j["binary"] = "scene.bin";
  j["config"] = detail::config_to_json(cfg);
  j["anchor_count"] = n;
  j["views"] = std::move(views_json);
  std::ofstream f(fs::path(dir) / "scene.json");
  if (!f) throw std::runtime_error("cannot write scene.json in " + dir);
  f << j.dump(2) << "\n";
}

inline SceneBundle load_scene(const std::string& json_path) {
  namespace fs = std::filesystem;
  std::ifstream f(json_path);
  if (!f) throw std::runtime_error("cannot open: " + json_path);
  nlohmann::json j;
  f >> j;
  if (j.value("format", "") != "smw-scene-v1")
    throw std::runtime_error("not a scene manifest: " + json_path);

  SceneBundle scene;
  scene.config = detail::config_from_json(j.at("config"));
  const Config& cfg = scene.config;
  const auto blob_path = fs::path(json_path).parent_path() / j.at("binary").get<std::string>();
  auto tensors = blob::read(blob_path.string());

  auto need = [&](const std::string& name) -> blob::Entry& {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("scene blob missing tensor: " + name);
    return it->second;
  };

  const int n = j.at("anchor_count");
  const int k = cfg.gaussians_per_anchor;
  const int ks = cfg.samples_per_frustum;
  const int bands = cfg.band_count();
  const auto& center = need("anchors.center").data;
  const auto& voxel = need("anchors.voxel_scale").data;
  const auto& offsets = need("anchors.offsets").data;
  const auto& intrinsic = need("anchors.intrinsic").data;
  const auto& nc = need("anchors.narrow_offsets").data;
  const auto& bc = need("anchors.broad_scales").data;
  const auto& rot = need("anchors.rotation").data;
  const auto& scl = need("anchors.scale").data;
  const auto& opac = need("anchors.opacity").data;
  const std::vector<float>* wn = bands > 0 ? &need("anchors.narrow_weights").data : nullptr;
  const std::vector<float>* wb = bands > 0 ? &need("anchors.broad_weights").data : nullptr;

  for (int i = 0; i < n; ++i) {
    Anchor a;
    a.center = Vec3(center[3 * i], center[3 * i + 1], center[3 * i + 2]);
    a.voxel_scale = Vec3(voxel[3 * i], voxel[3 * i + 1], voxel[3 * i + 2]);
    a.offsets.resize(k, 3);
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < 3; ++c) a.offsets(r, c) = offsets[(i * k + r) * 3 + c];
    a.intrinsic.resize(cfg.intrinsic_dim);
    for (int c = 0; c < cfg.intrinsic_dim; ++c)
      a.intrinsic[c] = intrinsic[i * cfg.intrinsic_dim + c];
    a.narrow_offsets.resize(ks, 2);
    a.broad_scales.resize(ks, 2);
    for (int s = 0; s < ks; ++s)
      for (int c = 0; c < 2; ++c) {
        a.narrow_offsets(s, c) = nc[(i * ks + s) * 2 + c];
        a.broad_scales(s, c) = bc[(i * ks + s) * 2 + c];
      }
    int at = i * bands, cnt = 1;
    for (int m = 1; m <= cfg.wavelet_levels; ++m) {
      cnt *= 4;
      VecX vn(cnt), vb(cnt);
      for (int c = 0; c < cnt; ++c) {
        vn[c] = (*wn)[at + c];
        vb[c] = (*wb)[at + c];
      }
      at += cnt;
      a.narrow_weights.push_back(std::move(vn));
      a.broad_weights.push_back(std::move(vb));
    }
    for (int r = 0; r < k; ++r) {
      Quat q(rot[(i * k + r) * 4], rot[(i * k + r) * 4 + 1], rot[(i * k + r) * 4 + 2],
             rot[(i * k + r) * 4 + 3]);
      a.rotations.push_back(q.normalized());
    }
    a.scales.resize(k, 3);
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < 3; ++c) a.scales(r, c) = scl[(i * k + r) * 3 + c];
    a.opacities.resize(k);
    for (int r = 0; r < k; ++r) a.opacities[r] = opac[i * k + r];
    scene.anchors.push_back(std::move(a));
  }

  for (const auto& jv : j.at("views")) {
    CameraView v;
    v.id = jv.at("id");
    const auto& c = jv.at("center");
    v.center = Vec3(c[0], c[1], c[2]);
    const auto& r9 = jv.at("rotation");
    for (int r = 0; r < 3; ++r)
      for (int c2 = 0; c2 < 3; ++c2) v.world_to_cam(r, c2) = r9[r * 3 + c2];
    v.fx = jv.at("fx");
    v.fy = jv.at("fy");
    v.cx = jv.at("cx");
    v.cy = jv.at("cy");
    v.width = jv.at("width");
    v.height = jv.at("height");
    v.held_out = jv.at("held_out");
    v.image_path = jv.at("image_path");

    const std::string prefix = "view." + std::to_string(v.id) + ".";
    const auto& fg = need(prefix + "global_feature").data;
    v.global_feature.resize(cfg.global_dim);
    for (int i = 0; i < cfg.global_dim; ++i) v.global_feature[i] = fg[i];
    const auto& fmap = need(prefix + "feature_map");
    v.feature_map = TensorCHW(static_cast<int>(fmap.dims[0]), static_cast<int>(fmap.dims[1]),
                              static_cast<int>(fmap.dims[2]));
    for (std::size_t i = 0; i < fmap.data.size(); ++i) v.feature_map.data[i] = fmap.data[i];
    if (jv.at("has_gt").get<bool>()) {
      const auto& gt = need(prefix + "gt");
      v.gt = Image(static_cast<int>(gt.dims[0]), static_cast<int>(gt.dims[1]));
      for (std::size_t i = 0; i < gt.data.size(); ++i) v.gt.data[i] = gt.data[i];
    }
    scene.views.push_back(std::move(v));
  }

  scene.fusion = make_hrfn(cfg.gaussians_per_anchor, cfg.intrinsic_dim, cfg.refined_dim,
                           cfg.global_dim, cfg.pe_levels, 0);
  auto load_stage = [&](const char* name, std::vector<DenseLayer>& layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string base =
          std::string("fusion.") + name + ".layer" + std::to_string(l) + ".";
      const auto& w = need(base + "weight");
      if (static_cast<Eigen::Index>(w.dims[0]) != layers[l].weight.rows() ||
          static_cast<Eigen::Index>(w.dims[1]) != layers[l].weight.cols())
        throw std::runtime_error("fusion tensor shape mismatch: " + base);
      for (Eigen::Index r = 0; r < layers[l].weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layers[l].weight.cols(); ++c)
          layers[l].weight(r, c) = w.data[r * layers[l].weight.cols() + c];
      const auto& b = need(base + "bias");
      for (Eigen::Index r = 0; r < layers[l].bias.size(); ++r)
        layers[l].bias[r] = b.data[r];
    }
  };
  load_stage("stage1", scene.fusion.stage1);
  load_stage("stage2", scene.fusion.stage2);
  load_stage("stage3", scene.fusion.stage3);
  load_stage("stage4", scene.fusion.stage4);
  const auto& res = need("fusion.residuals").data;
  scene.fusion.residual_refined = res[0];
  scene.fusion.residual_intrinsic = res[1];

  validate_scene(scene);
  return scene;
}

namespace detail {

inline nlohmann::json bounds_to_json(const BlockBounds& b) {
  nlohmann::json j;
  for (int d = 0; d < 2; ++d) {
    j["lo"].push_back(b.lo_inf[d] ? nlohmann::json(nullptr) : nlohmann::json(b.lo[d]));
    j["hi"].push_back(b.hi_inf[d] ? nlohmann::json(nullptr) : nlohmann::json(b.hi[d]));
    j["lo_raw"].push_back(b.lo[d]);
    j["hi_raw"].push_back(b.hi[d]);
  }
  return j;
}

inline BlockBounds bounds_from_json(const nlohmann::json& j) {
  BlockBounds b;
  for (int d = 0; d < 2; ++d) {
    b.lo_inf[d] = j.at("lo")[d].is_null();
    b.hi_inf[d] = j.at("hi")[d].is_null();
    b.lo[d] = j.at("lo_raw")[d];
    b.hi[d] = j.at("hi_raw")[d];
  }
  return b;
}

inline CameraProvenance provenance_from_string(const std::string& s) {
  if (s == "initial") return CameraProvenance::initial;
  if (s == "stage1-direct") return CameraProvenance::stage1_direct;
  if (s == "stage1-greedy") return CameraProvenance::stage1_greedy;
  if (s == "stage2") return CameraProvenance::stage2;
  throw std::runtime_error("unknown camera provenance: " + s);
}

}  // namespace detail

inline nlohmann::json block_to_json(const BlockManifest& b) {
  nlohmann::json j;
  j["id"] = b.id;
  j["grid"] = {b.grid_x, b.grid_y};
  j["cell"] = detail::bounds_to_json(b.cell);
  j["bounds"] = detail::bounds_to_json(b.bounds);
  j["points"] = b.point_ids;
  j["anchors"] = b.anchor_ids;
  j["cameras"] = nlohmann::json::array();
  for (const auto& [cam, prov] : b.cameras)
    j["cameras"].push_back({{"index", cam}, {"via", to_string(prov)}});
  j["supervision"] = nlohmann::json::array();
  for (const auto& [p, n] : b.supervision) j["supervision"].push_back({p, n});
  return j;
}

inline BlockManifest block_from_json(const nlohmann::json& j) {
  BlockManifest b;
  b.id = j.at("id");
  b.grid_x = j.at("grid")[0];
  b.grid_y = j.at("grid")[1];
  b.cell = detail::bounds_from_json(j.at("cell"));
  b.bounds = detail::bounds_from_json(j.at("bounds"));
  b.point_ids = j.at("points").get<std::vector<int>>();
  b.anchor_ids = j.at("anchors").get<std::vector<int>>();
  for (const auto& c : j.at("cameras"))
    b.cameras.emplace_back(c.at("index"),
                           detail::provenance_from_string(c.at("via")));
  for (const auto& s : j.at("supervision")) b.supervision[s[0]] = s[1];
  return b;
}

inline void save_blocks(const std::vector<BlockManifest>& blocks, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const auto& b : blocks) {
    std::ofstream f(fs::path(dir) / ("block_" + std::to_string(b.id) + ".json"));
    if (!f) throw std::runtime_error("cannot write block manifest in " + dir);
    f << block_to_json(b).dump(2) << "\n";
  }
}

inline std::vector<BlockManifest> load_blocks(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<BlockManifest> blocks;
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind("block_", 0) == 0 &&
        e.path().extension() == ".json")
      paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    std::ifstream f(p);
    nlohmann::json j;
    f >> j;
    blocks.push_back(block_from_json(j));
  }
  if (blocks.empty()) throw std::runtime_error("no block manifests found in " + dir);
  return blocks;
}

// COLMAP-like plain text: points as "id x y z" and cameras as
// "id qw qx qy qz tx ty tz fx fy cx cy W H image_path". The quaternion and
// translation map world to camera coordinates; the stored camera center is
// -R^T t. Lines starting with '#' are skipped; the two record kinds are told
// apart by field count.
struct ColmapData {
  std::vector<int> point_ids;
  std::vector<Vec3> points;
  std::vector<CameraView> cameras;
};

inline ColmapData load_colmap_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  ColmapData out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::vector<std::string> tok;
    std::string t;
    while (ss >> t) tok.push_back(t);
    if (tok.empty()) continue;
    try {
      if (tok.size() == 4) {
        out.point_ids.push_back(std::stoi(tok[0]));
        out.points.emplace_back(std::stod(tok[1]), std::stod(tok[2]), std::stod(tok[3]));
      } else if (tok.size() == 15) {
        CameraView v;
        v.id = std::stoi(tok[0]);
        const Quat q(std::stod(tok[1]), std::stod(tok[2]), std::stod(tok[3]),
                     std::stod(tok[4]));
        const Vec3 trans(std::stod(tok[5]), std::stod(tok[6]), std::stod(tok[7]));
        v.world_to_cam = q.normalized().toRotationMatrix();
        v.center = -(v.world_to_cam.transpose() * trans);
        v.fx = std::stod(tok[8]);
        v.fy = std::stod(tok[9]);
        v.cx = std::stod(tok[10]);
        v.cy = std::stod(tok[11]);
        v.width = std::stoi(tok[12]);
        v.height = std::stoi(tok[13]);
        v.image_path = tok[14];
        out.cameras.push_back(std::move(v));
      } else {
        throw std::runtime_error("unexpected field count");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad record (" +
                               e.what() + ")");
    }
  }
  return out;
}

}  // namespace smw
