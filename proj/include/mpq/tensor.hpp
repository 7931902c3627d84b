#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mpq/error.hpp"

namespace mpq {

// Dense row-major tensor of 64-bit reals. Rank is arbitrary but nearly all
// uses are matrices (rows x cols) or vectors.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;

  Tensor(std::vector<int64_t> shp, std::vector<double> values)
      : shape(std::move(shp)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != element_count(shape))
      fail(Errc::ShapeMismatch, "data length does not match shape");
    for (double v : data)
      if (!std::isfinite(v)) fail(Errc::NonFiniteData, "tensor contains NaN/Inf");
  }

  static int64_t element_count(const std::vector<int64_t>& shp) {
    int64_t n = 1;
    for (int64_t d : shp) {
      if (d < 1) fail(Errc::ShapeMismatch, "shape dims must be >= 1");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int64_t> shp) {
    Tensor t;
    t.shape = std::move(shp);
    t.data.assign(element_count(t.shape), 0.0);
    return t;
  }

  static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor row(std::vector<double> values) {
    int64_t n = static_cast<int64_t>(values.size());
    return Tensor({1, n}, std::move(values));
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? 1 : 0); }
  int64_t cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 0); }

  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor extract_row(int64_t r) const {
    if (rank() != 2 || r < 0 || r >= shape[0]) fail(Errc::IndexOutOfRange, "row index");
    std::vector<double> out(data.begin() + r * shape[1], data.begin() + (r + 1) * shape[1]);
    Tensor t;
    t.shape = {1, shape[1]};
    t.data = std::move(out);
    return t;
  }
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (size_t i = 0; i < t.shape.size(); ++i)
    s += (i ? "x" : "") + std::to_string(t.shape[i]);
  return s + "]";
}

}  // namespace mpq
