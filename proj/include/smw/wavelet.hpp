#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "smw/tensor.hpp"

namespace smw {

// Four half-resolution sub-bands of a one-level 2D Haar transform. With the
// orthonormal filters L = [1 1]/sqrt(2), H = [1 -1]/sqrt(2), a 2x2 block
// [[a, b], [c, d]] maps to
//   ll = (a+b+c+d)/2   lh = (a+b-c-d)/2
//   hl = (a-b+c-d)/2   hh = (a-b-c+d)/2
// where lh carries vertical detail (high-pass across rows) and hl horizontal.
struct SubBandSet {
  TensorCHW ll, lh, hl, hh;
  int level = 1;
  int orig_h = 0, orig_w = 0;  // pre-padding size, for the inverse crop
};

namespace detail {

// Edge-replicate pad to even height/width. Returns the input untouched when
// already even.
inline TensorCHW pad_even(const TensorCHW& f) {
  if (f.h % 2 == 0 && f.w % 2 == 0) return f;
  const int h2 = f.h + (f.h % 2), w2 = f.w + (f.w % 2);
  TensorCHW out(f.c, h2, w2);
  for (int ch = 0; ch < f.c; ++ch)
    for (int y = 0; y < h2; ++y)
      for (int x = 0; x < w2; ++x)
        out.at(ch, y, x) = f.at(ch, std::min(y, f.h - 1), std::min(x, f.w - 1));
  return out;
}

}  // namespace detail

inline SubBandSet dwt1(const TensorCHW& f) {
  if (f.empty() || f.h <= 0 || f.w <= 0)
    throw std::invalid_argument("dwt1: empty input");
  const TensorCHW src = detail::pad_even(f);
  const int hh = src.h / 2, hw = src.w / 2;

  SubBandSet out;
  out.level = 1;
  out.orig_h = f.h;
  out.orig_w = f.w;
  out.ll = TensorCHW(f.c, hh, hw);
  out.lh = TensorCHW(f.c, hh, hw);
  out.hl = TensorCHW(f.c, hh, hw);
  out.hh = TensorCHW(f.c, hh, hw);

  for (int ch = 0; ch < f.c; ++ch)
    for (int y = 0; y < hh; ++y)
      for (int x = 0; x < hw; ++x) {
        const double a = src.at(ch, 2 * y, 2 * x);
        const double b = src.at(ch, 2 * y, 2 * x + 1);
        const double c = src.at(ch, 2 * y + 1, 2 * x);
        const double d = src.at(ch, 2 * y + 1, 2 * x + 1);
        out.ll.at(ch, y, x) = 0.5 * (a + b + c + d);
        out.lh.at(ch, y, x) = 0.5 * (a + b - c - d);
        out.hl.at(ch, y, x) = 0.5 * (a - b + c - d);
        out.hh.at(ch, y, x) = 0.5 * (a - b - c + d);
      }
  return out;
}

// Exact inverse of dwt1; crops back to the recorded pre-padding size.
inline TensorCHW idwt1(const SubBandSet& b) {
  if (!b.ll.same_shape(b.lh) || !b.ll.same_shape(b.hl) || !b.ll.same_shape(b.hh))
    throw std::invalid_argument("idwt1: sub-band shape mismatch");
  const int oh = b.orig_h > 0 ? b.orig_h : b.ll.h * 2;
  const int ow = b.orig_w > 0 ? b.orig_w : b.ll.w * 2;
  TensorCHW out(b.ll.c, oh, ow);
  for (int ch = 0; ch < b.ll.c; ++ch)
    for (int y = 0; y < b.ll.h; ++y)
      for (int x = 0; x < b.ll.w; ++x) {
        const double ll = b.ll.at(ch, y, x);
        const double lh = b.lh.at(ch, y, x);
        const double hl = b.hl.at(ch, y, x);
        const double hh = b.hh.at(ch, y, x);
        const double v00 = 0.5 * (ll + lh + hl + hh);
        const double v01 = 0.5 * (ll + lh - hl - hh);
        const double v10 = 0.5 * (ll - lh + hl - hh);
        const double v11 = 0.5 * (ll - lh - hl + hh);
        if (2 * y < oh && 2 * x < ow) out.at(ch, 2 * y, 2 * x) = v00;
        if (2 * y < oh && 2 * x + 1 < ow) out.at(ch, 2 * y, 2 * x + 1) = v01;
        if (2 * y + 1 < oh && 2 * x < ow) out.at(ch, 2 * y + 1, 2 * x) = v10;
        if (2 * y + 1 < oh && 2 * x + 1 < ow) out.at(ch, 2 * y + 1, 2 * x + 1) = v11;
      }
  return out;
}

// Full packet decomposition: every band is decomposed again at each level,
// yielding 4^levels equal-size maps. Ordering is level-major with the band
// order (LL, LH, HL, HH) applied recursively, so the children of map t sit at
// positions 4t .. 4t+3 of the next level.
inline std::vector<TensorCHW> wavelet_packet(const TensorCHW& f, int levels) {
  if (levels < 0) throw std::invalid_argument("wavelet_packet: negative level");
  std::vector<TensorCHW> maps{f};
  for (int m = 0; m < levels; ++m) {
    std::vector<TensorCHW> next;
    next.reserve(maps.size() * 4);
    for (const auto& t : maps) {
      SubBandSet b = dwt1(t);
      next.push_back(std::move(b.ll));
      next.push_back(std::move(b.lh));
      next.push_back(std::move(b.hl));
      next.push_back(std::move(b.hh));
    }
    maps = std::move(next);
  }
  return maps;
}

// Adjoint of wavelet_packet for even-size inputs, used to pull sampling
// gradients on the sub-maps back to the undecomposed map. The Haar butterfly
// is orthogonal, so the adjoint is the inverse packet recomposition.
inline TensorCHW wavelet_packet_adjoint(const std::vector<TensorCHW>& grads, int levels) {
  if (grads.size() != (1ull << (2 * levels)))
    throw std::invalid_argument("wavelet_packet_adjoint: map count must be 4^levels");
  std::vector<TensorCHW> maps = grads;
  for (int m = 0; m < levels; ++m) {
    std::vector<TensorCHW> next;
    next.reserve(maps.size() / 4);
    for (std::size_t t = 0; t < maps.size(); t += 4) {
      SubBandSet b;
      b.ll = maps[t];
      b.lh = maps[t + 1];
      b.hl = maps[t + 2];
      b.hh = maps[t + 3];
      next.push_back(idwt1(b));
    }
    maps = std::move(next);
  }
  return maps[0];
}

// The 2M+2 channel chunks of a feature map plus the packet sub-maps of the
// chunks that carry wavelet levels. Chunks 2m+1 and 2m+2 (1-indexed) hold the
// level-m narrow and broad maps.
struct FeaturePyramid {
  int levels = 0;                                 // M
  int chunk_channels = 0;                          // n_r / (2M+2)
  std::vector<TensorCHW> base;                     // 2M+2 chunks
  std::vector<std::vector<TensorCHW>> narrow_bands;  // [m-1] -> 4^m maps
  std::vector<std::vector<TensorCHW>> broad_bands;
};

inline FeaturePyramid split_feature_map(const TensorCHW& fmap, int levels) {
  if (levels < 0) throw std::invalid_argument("split_feature_map: negative level");
  const int groups = 2 * levels + 2;
  if (fmap.c % groups != 0)
    throw std::invalid_argument("split_feature_map: channel count not divisible by 2M+2");

  FeaturePyramid pyr;
  pyr.levels = levels;
  pyr.chunk_channels = fmap.c / groups;
  for (int g = 0; g < groups; ++g) {
    TensorCHW chunk(pyr.chunk_channels, fmap.h, fmap.w);
    for (int ch = 0; ch < pyr.chunk_channels; ++ch)
      for (int y = 0; y < fmap.h; ++y)
        for (int x = 0; x < fmap.w; ++x)
          chunk.at(ch, y, x) = fmap.at(g * pyr.chunk_channels + ch, y, x);
    pyr.base.push_back(std::move(chunk));
  }
  for (int m = 1; m <= levels; ++m) {
    pyr.narrow_bands.push_back(wavelet_packet(pyr.base[2 * m], m));
    pyr.broad_bands.push_back(wavelet_packet(pyr.base[2 * m + 1], m));
  }
  return pyr;
}

}  // namespace smw
