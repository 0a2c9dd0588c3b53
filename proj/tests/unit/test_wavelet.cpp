#include <catch2/catch_amalgamated.hpp>

#include "smw/rng.hpp"
#include "smw/wavelet.hpp"

using namespace smw;

namespace {

TensorCHW random_map(int c, int h, int w, Rng& rng) {
  TensorCHW t(c, h, w);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

double frob2(const TensorCHW& t) {
  double s = 0.0;
  for (double v : t.data) s += v * v;
  return s;
}

}  // namespace

TEST_CASE("haar 2x2 closed form", "[wavelet]") {
  TensorCHW f(1, 2, 2);
  const double a = 1.0, b = 2.0, c = 3.0, d = 4.0;
  f.at(0, 0, 0) = a;
  f.at(0, 0, 1) = b;
  f.at(0, 1, 0) = c;
  f.at(0, 1, 1) = d;
  const SubBandSet bands = dwt1(f);
  CHECK(bands.ll.at(0, 0, 0) == (a + b + c + d) / 2);
  CHECK(bands.lh.at(0, 0, 0) == (a + b - c - d) / 2);
  CHECK(bands.hl.at(0, 0, 0) == (a - b + c - d) / 2);
  CHECK(bands.hh.at(0, 0, 0) == (a - b - c + d) / 2);
}

TEST_CASE("constant map concentrates in the low band", "[wavelet]") {
  const double value = 0.7;
  TensorCHW f(2, 4, 4, value);
  const SubBandSet bands = dwt1(f);
  for (double v : bands.ll.data) CHECK(v == Catch::Approx(2 * value).epsilon(1e-13));
  for (double v : bands.lh.data) CHECK(v == 0.0);
  for (double v : bands.hl.data) CHECK(v == 0.0);
  for (double v : bands.hh.data) CHECK(v == 0.0);
}

TEST_CASE("zero map stays zero", "[wavelet]") {
  const SubBandSet bands = dwt1(TensorCHW(1, 4, 6));
  for (const auto* b : {&bands.ll, &bands.lh, &bands.hl, &bands.hh})
    for (double v : b->data) CHECK(v == 0.0);
  CHECK_THROWS_AS(dwt1(TensorCHW()), std::invalid_argument);
}

TEST_CASE("perfect reconstruction", "[wavelet]") {
  Rng rng(11);
  const TensorCHW f = random_map(3, 8, 8, rng);
  const TensorCHW back = idwt1(dwt1(f));
  REQUIRE(back.same_shape(f));
  for (std::size_t i = 0; i < f.data.size(); ++i)
    CHECK(std::abs(back.data[i] - f.data[i]) < 1e-10);

  SECTION("all-zero bands invert to a zero map") {
    SubBandSet z;
    z.ll = z.lh = z.hl = z.hh = TensorCHW(1, 2, 2);
    for (double v : idwt1(z).data) CHECK(v == 0.0);
  }
  SECTION("ll-only bands of a constant map invert to the constant") {
    SubBandSet b;
    b.ll = TensorCHW(1, 2, 2, 2 * 0.3);
    b.lh = b.hl = b.hh = TensorCHW(1, 2, 2, 0.0);
    for (double v : idwt1(b).data) CHECK(v == Catch::Approx(0.3).epsilon(1e-13));
  }
}

TEST_CASE("odd sizes pad and crop", "[wavelet]") {
  Rng rng(5);
  const TensorCHW f = random_map(2, 7, 5, rng);
  const TensorCHW back = idwt1(dwt1(f));
  REQUIRE(back.same_shape(f));
  for (std::size_t i = 0; i < f.data.size(); ++i)
    CHECK(std::abs(back.data[i] - f.data[i]) < 1e-10);
}

TEST_CASE("energy preservation", "[wavelet]") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const TensorCHW f = random_map(2, 16, 12, rng);
    const SubBandSet b = dwt1(f);
    const double energy = frob2(b.ll) + frob2(b.lh) + frob2(b.hl) + frob2(b.hh);
    CHECK(std::abs(energy - frob2(f)) < 1e-9);
  }
}

TEST_CASE("two-level packet equals per-band recursion", "[wavelet]") {
  Rng rng(17);
  const TensorCHW f = random_map(1, 8, 8, rng);
  const auto packet2 = wavelet_packet(f, 2);
  REQUIRE(packet2.size() == 16);

  const SubBandSet level1 = dwt1(f);
  const TensorCHW* bands1[4] = {&level1.ll, &level1.lh, &level1.hl, &level1.hh};
  for (int parent = 0; parent < 4; ++parent) {
    const SubBandSet child = dwt1(*bands1[parent]);
    const TensorCHW* kids[4] = {&child.ll, &child.lh, &child.hl, &child.hh};
    for (int band = 0; band < 4; ++band) {
      const TensorCHW& got = packet2[parent * 4 + band];
      REQUIRE(got.same_shape(*kids[band]));
      for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - kids[band]->data[i]) < 1e-12);
    }
  }
}

TEST_CASE("packet adjoint matches the inner product identity", "[wavelet]") {
  Rng rng(23);
  const TensorCHW x = random_map(1, 8, 8, rng);
  for (int levels : {1, 2}) {
    const auto wx = wavelet_packet(x, levels);
    std::vector<TensorCHW> y;
    for (const auto& t : wx) y.push_back(random_map(t.c, t.h, t.w, rng));
    double lhs = 0.0;
    for (std::size_t m = 0; m < wx.size(); ++m)
      for (std::size_t i = 0; i < wx[m].data.size(); ++i)
        lhs += wx[m].data[i] * y[m].data[i];
    const TensorCHW aty = wavelet_packet_adjoint(y, levels);
    double rhs = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * aty.data[i];
    CHECK(lhs == Catch::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("feature map splitting", "[wavelet]") {
  Rng rng(29);

  SECTION("default shape: 32 channels, one level") {
    const TensorCHW fmap = random_map(32, 8, 8, rng);
    const FeaturePyramid pyr = split_feature_map(fmap, 1);
    REQUIRE(pyr.base.size() == 4);
    CHECK(pyr.chunk_channels == 8);
    REQUIRE(pyr.narrow_bands.size() == 1);
    REQUIRE(pyr.narrow_bands[0].size() == 4);
    REQUIRE(pyr.broad_bands[0].size() == 4);
    CHECK(pyr.narrow_bands[0][0].h == 4);
    // Chunks are contiguous channel slices.
    CHECK(pyr.base[1].at(2, 3, 4) == fmap.at(8 + 2, 3, 4));
    // Level-1 maps decompose chunk index 2 (narrow) and 3 (broad).
    const auto expect = wavelet_packet(pyr.base[2], 1);
    for (std::size_t i = 0; i < expect[1].data.size(); ++i)
      CHECK(pyr.narrow_bands[0][1].data[i] == expect[1].data[i]);
  }
  SECTION("degenerate pyramid with no wavelet levels") {
    const FeaturePyramid pyr = split_feature_map(random_map(32, 4, 4, rng), 0);
    CHECK(pyr.base.size() == 2);
    CHECK(pyr.narrow_bands.empty());
  }
  SECTION("indivisible channel count is a config error") {
    CHECK_THROWS_AS(split_feature_map(TensorCHW(30, 4, 4), 1), std::invalid_argument);
  }
}
