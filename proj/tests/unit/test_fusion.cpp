#include <catch2/catch_amalgamated.hpp>

#include "smw/fusion.hpp"
#include "smw/rng.hpp"

using namespace smw;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct ToyInputs {
  Vec3 center;
  VecX f_v, f_r, f_g;
  Vec3 dir;
};

ToyInputs toy_inputs(const HrfnParams& p, Rng& rng) {
  ToyInputs in;
  in.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  in.f_v = VecX::Zero(p.intrinsic_dim);
  in.f_r = VecX::Zero(p.refined_dim);
  in.f_g = VecX::Zero(p.global_dim);
  for (int i = 0; i < in.f_v.size(); ++i) in.f_v[i] = rng.normal();
  for (int i = 0; i < in.f_r.size(); ++i) in.f_r[i] = rng.normal();
  for (int i = 0; i < in.f_g.size(); ++i) in.f_g[i] = rng.normal();
  in.dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
  return in;
}

// Plain-loop reimplementation of the forward pass, kept deliberately naive.
MatX straight_line_forward(const HrfnParams& p, const ToyInputs& in) {
  auto dense = [](const DenseLayer& l, const std::vector<double>& x, bool relu) {
    std::vector<double> out(l.weight.rows(), 0.0);
    for (int r = 0; r < l.weight.rows(); ++r) {
      double acc = l.bias[r];
      for (int c = 0; c < l.weight.cols(); ++c) acc += l.weight(r, c) * x[c];
      out[r] = relu && acc < 0.0 ? 0.0 : acc;
    }
    return out;
  };

  std::vector<double> x;
  for (int l = 0; l < p.pe_levels; ++l)
    for (int d = 0; d < 3; ++d) {
      x.push_back(std::sin(std::pow(2.0, l) * kPi * in.center[d]));
      x.push_back(std::cos(std::pow(2.0, l) * kPi * in.center[d]));
    }
  for (int i = 0; i < in.f_v.size(); ++i) x.push_back(in.f_v[i]);
  for (int i = 0; i < in.f_r.size(); ++i) x.push_back(in.f_r[i]);
  for (int i = 0; i < in.f_g.size(); ++i) x.push_back(in.f_g[i]);

  for (const auto& l : p.stage1) x = dense(l, x, true);
  for (int i = 0; i < in.f_r.size(); ++i) x.push_back(p.residual_refined * in.f_r[i]);
  for (const auto& l : p.stage2) x = dense(l, x, true);
  for (int i = 0; i < in.f_v.size(); ++i) x.push_back(p.residual_intrinsic * in.f_v[i]);
  for (const auto& l : p.stage3) x = dense(l, x, true);
  for (int d = 0; d < 3; ++d) x.push_back(in.dir[d]);
  x = dense(p.stage4[0], x, true);
  x = dense(p.stage4[1], x, false);

  MatX colors(p.gaussians_per_anchor, 3);
  for (int j = 0; j < p.gaussians_per_anchor; ++j)
    for (int ch = 0; ch < 3; ++ch)
      colors(j, ch) = 1.0 / (1.0 + std::exp(-x[3 * j + ch]));
  return colors;
}

void zero_params(HrfnParams& p) {
  for (auto* stage : {&p.stage1, &p.stage2, &p.stage3, &p.stage4})
    for (auto& l : *stage) {
      l.weight.setZero();
      l.bias.setZero();
    }
}

}  // namespace

TEST_CASE("positional encoding", "[fusion]") {
  SECTION("origin gives zero sines and unit cosines") {
    const VecX pe = positional_encoding(Vec3::Zero(), 3);
    REQUIRE(pe.size() == 18);
    for (int i = 0; i < pe.size(); i += 2) {
      CHECK(pe[i] == 0.0);
      CHECK(pe[i + 1] == 1.0);
    }
  }
  SECTION("quarter period hits one") {
    const VecX pe = positional_encoding(Vec3(0.5, 0, 0), 1);
    REQUIRE(pe.size() == 6);
    CHECK(pe[0] == Catch::Approx(1.0));  // sin(pi/2), slot (l=0, d=x)
    CHECK(pe[1] == Catch::Approx(std::cos(kPi / 2)).margin(1e-15));
  }
  SECTION("two frequencies evaluate the scaled arguments") {
    const VecX pe = positional_encoding(Vec3(0.25, 0, 0), 2);
    REQUIRE(pe.size() == 12);
    CHECK(pe[0] == Catch::Approx(std::sin(kPi * 0.25)));
    CHECK(pe[1] == Catch::Approx(std::cos(kPi * 0.25)));
    CHECK(pe[6] == Catch::Approx(std::sin(2 * kPi * 0.25)));
    CHECK(pe[7] == Catch::Approx(std::cos(2 * kPi * 0.25)));
  }
}

TEST_CASE("zeroed network outputs mid-gray", "[fusion]") {
  HrfnParams p = make_hrfn(3, 4, 6, 2, 2, 1);
  zero_params(p);
  Rng rng(2);
  const ToyInputs in = toy_inputs(p, rng);
  const MatX colors = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p);
  REQUIRE(colors.rows() == 3);
  for (int j = 0; j < colors.rows(); ++j)
    for (int ch = 0; ch < 3; ++ch) CHECK(colors(j, ch) == 0.5);
}

TEST_CASE("severing the refined path makes output f_r-invariant", "[fusion]") {
  HrfnParams p = make_hrfn(2, 4, 6, 2, 2, 3);
  p.residual_refined = 0.0;
  const int pe = 6 * p.pe_levels;
  // Zero the f_r block of the first stage-1 layer.
  p.stage1[0].weight.middleCols(pe + p.intrinsic_dim, p.refined_dim).setZero();

  Rng rng(4);
  ToyInputs in = toy_inputs(p, rng);
  const MatX base = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p);
  for (int i = 0; i < in.f_r.size(); ++i) in.f_r[i] = rng.normal();
  const MatX moved = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p);
  CHECK((base - moved).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches the straight-line oracle", "[fusion]") {
  const HrfnParams p = make_hrfn(2, 4, 6, 2, 2, 42);
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const ToyInputs in = toy_inputs(p, rng);
    const MatX got = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p);
    const MatX expect = straight_line_forward(p, in);
    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("forward is deterministic and strictly inside (0,1)", "[fusion]") {
  const HrfnParams p = make_hrfn(2, 4, 6, 2, 2, 7);
  Rng rng(6);
  const ToyInputs in = toy_inputs(p, rng);
  const MatX a = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p);
  const MatX b = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  for (int j = 0; j < a.rows(); ++j)
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(a(j, ch) > 0.0);
      CHECK(a(j, ch) < 1.0);
    }
}

TEST_CASE("view direction sensitivity", "[fusion]") {
  HrfnParams p = make_hrfn(2, 4, 6, 2, 2, 9);
  Rng rng(8);
  const ToyInputs in = toy_inputs(p, rng);
  const Vec3 dir2 = Vec3(-in.dir.y(), in.dir.x(), in.dir.z()).normalized();

  const MatX a = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p);
  const MatX b = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, dir2, p);
  CHECK((a - b).cwiseAbs().maxCoeff() > 0.0);

  p.stage4[0].weight.rightCols(3).setZero();
  const MatX c = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p);
  const MatX d = hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, dir2, p);
  CHECK((c - d).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fusion backward matches central differences", "[fusion]") {
  const HrfnParams p = make_hrfn(2, 4, 6, 2, 2, 11);
  Rng rng(12);
  const ToyInputs in = toy_inputs(p, rng);

  MatX w(p.gaussians_per_anchor, 3);
  for (int j = 0; j < w.rows(); ++j)
    for (int ch = 0; ch < 3; ++ch) w(j, ch) = rng.uniform(-1, 1);

  auto objective = [&](const HrfnParams& params, const ToyInputs& inputs) {
    const MatX colors = hrfn_forward(inputs.center, inputs.f_v, inputs.f_r, inputs.f_g,
                                     inputs.dir, params);
    return (colors.array() * w.array()).sum();
  };

  FusionCache cache;
  hrfn_forward(in.center, in.f_v, in.f_r, in.f_g, in.dir, p, &cache);
  HrfnParamGrads pg = make_hrfn_grads(p);
  VecX d_fv = VecX::Zero(p.intrinsic_dim);
  VecX d_fr = VecX::Zero(p.refined_dim);
  VecX d_fg = VecX::Zero(p.global_dim);
  hrfn_backward(p, cache, w, pg, d_fv, d_fr, d_fg);

  const double h = 1e-5;
  auto check = [&](double analytic, double fd) {
    CHECK(std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6}) <
          1e-4);
  };

  for (int i = 0; i < in.f_v.size(); ++i) {
    ToyInputs pert = in;
    pert.f_v[i] += h;
    const double up = objective(p, pert);
    pert.f_v[i] -= 2 * h;
    check(d_fv[i], (up - objective(p, pert)) / (2 * h));
  }
  for (int i = 0; i < in.f_r.size(); ++i) {
    ToyInputs pert = in;
    pert.f_r[i] += h;
    const double up = objective(p, pert);
    pert.f_r[i] -= 2 * h;
    check(d_fr[i], (up - objective(p, pert)) / (2 * h));
  }
  for (int i = 0; i < in.f_g.size(); ++i) {
    ToyInputs pert = in;
    pert.f_g[i] += h;
    const double up = objective(p, pert);
    pert.f_g[i] -= 2 * h;
    check(d_fg[i], (up - objective(p, pert)) / (2 * h));
  }
  {
    HrfnParams pert = p;
    pert.residual_refined += h;
    const double up = objective(pert, in);
    pert.residual_refined -= 2 * h;
    check(pg.residual_refined, (up - objective(pert, in)) / (2 * h));

    pert = p;
    pert.residual_intrinsic += h;
    const double up2 = objective(pert, in);
    pert.residual_intrinsic -= 2 * h;
    check(pg.residual_intrinsic, (up2 - objective(pert, in)) / (2 * h));
  }
  // Spot-check a few weights in every stage.
  Rng probe(13);
  auto stages = {std::make_pair(&p.stage1, &pg.stage1), std::make_pair(&p.stage2, &pg.stage2),
                 std::make_pair(&p.stage3, &pg.stage3), std::make_pair(&p.stage4, &pg.stage4)};
  for (auto [params, grads] : stages)
    for (std::size_t l = 0; l < params->size(); ++l)
      for (int probe_i = 0; probe_i < 4; ++probe_i) {
        const int r = probe.uniform_int(0, static_cast<int>((*params)[l].weight.rows()) - 1);
        const int c = probe.uniform_int(0, static_cast<int>((*params)[l].weight.cols()) - 1);
        HrfnParams pert = p;
        auto* stage_ptr = params == &p.stage1   ? &pert.stage1
                          : params == &p.stage2 ? &pert.stage2
                          : params == &p.stage3 ? &pert.stage3
                                                : &pert.stage4;
        (*stage_ptr)[l].weight(r, c) += h;
        const double up = objective(pert, in);
        (*stage_ptr)[l].weight(r, c) -= 2 * h;
        check((*grads)[l].weight(r, c), (up - objective(pert, in)) / (2 * h));
      }
}
