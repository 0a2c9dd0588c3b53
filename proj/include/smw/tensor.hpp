#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace smw {

// Dense C x H x W tensor of doubles, row-major within each channel.
struct TensorCHW {
  int c = 0, h = 0, w = 0;
  std::vector<double> data;

  TensorCHW() = default;
  TensorCHW(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(c_) * h_ * w_, fill) {
    if (c_ < 0 || h_ < 0 || w_ < 0) throw std::invalid_argument("TensorCHW: negative shape");
  }

  double& at(int ch, int y, int x) {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const TensorCHW& o) const { return c == o.c && h == o.h && w == o.w; }

  void fill(double v) { data.assign(data.size(), v); }
};

// H x W x 3 color image, values nominally in [0, 1].
struct Image {
  int h = 0, w = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h_, int w_, double fill = 0.0)
      : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_ * 3, fill) {}

  double& at(int y, int x, int ch) {
    return data[(static_cast<std::size_t>(y) * w + x) * 3 + ch];
  }
  double at(int y, int x, int ch) const {
    return data[(static_cast<std::size_t>(y) * w + x) * 3 + ch];
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w; }

  void fill(double v) { data.assign(data.size(), v); }
};

}  // namespace smw
