#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dlh/error.hpp"

namespace dlh {

// Dense row-major tensor of doubles. Shapes are small vectors; rank 2 is
// [rows, cols], rank 4 is [N, C, H, W].
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    require(count(shape) == data.size(), "Tensor: data size does not match shape");
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  // Rows/cols view of a rank-2 tensor; rank-1 tensors count as one row.
  int rows() const { return rank() == 1 ? 1 : shape.front(); }
  int cols() const { return rank() == 1 ? shape.front() : static_cast<int>(size() / rows()); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  static Tensor row_vector(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace dlh
