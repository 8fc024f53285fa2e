#include "fssl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace fssl {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> s) {
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(static_cast<std::size_t>(shape_numel(t.shape)), 0.0);
  return t;
}

Tensor Tensor::filled(std::vector<int> s, double v) {
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(static_cast<std::size_t>(shape_numel(t.shape)), v);
  return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<double> d) {
  if (shape_numel(s) != static_cast<std::int64_t>(d.size())) {
    throw ShapeError("data length does not match shape");
  }
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(d);
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

std::int64_t Tensor::numel() const {
  return static_cast<std::int64_t>(data.size());
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

}  // namespace fssl
