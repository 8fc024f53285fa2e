#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fssl/errors.hpp"

namespace fssl {

// Dense row-major tensor of doubles. Rank up to 4 is what the model needs;
// shape arithmetic is kept deliberately plain.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<int> s);
  static Tensor filled(std::vector<int> s, double v);
  static Tensor from(std::vector<int> s, std::vector<double> d);
  static Tensor scalar(double v);

  std::int64_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }

  double& at(int i, int j) {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
  }
  double at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
  }

  double& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  double& at(int i, int j, int k, int l) {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) *
                    shape[3] +
                l];
  }
  double at(int i, int j, int k, int l) const {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) *
                    shape[3] +
                l];
  }

  bool all_finite() const;
  std::string shape_str() const;
};

std::int64_t shape_numel(const std::vector<int>& shape);

}  // namespace fssl
