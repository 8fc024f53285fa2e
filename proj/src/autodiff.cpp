#include "fssl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "fssl/errors.hpp"

namespace fssl {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

VarId Graph::emplace(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

bool Graph::any_needs_grad(const std::vector<VarId>& ids) const {
  for (VarId id : ids) {
    if (nodes_[static_cast<std::size_t>(id)].needs_grad) return true;
  }
  return false;
}

VarId Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return emplace(std::move(n));
}

VarId Graph::param(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  return emplace(std::move(n));
}

VarId Graph::add(VarId a, VarId b) {
  check_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
  Node n;
  n.value = std::move(out);
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a, b](Graph& g, Node& self) {
    for (VarId in : {a, b}) {
      Node& src = g.node(in);
      if (src.grad.data.empty()) continue;
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        src.grad.data[i] += self.grad.data[i];
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::sub(VarId a, VarId b) {
  check_same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
  Node n;
  n.value = std::move(out);
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a, b](Graph& g, Node& self) {
    Node& na = g.node(a);
    if (!na.grad.data.empty()) {
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        na.grad.data[i] += self.grad.data[i];
      }
    }
    Node& nb = g.node(b);
    if (!nb.grad.data.empty()) {
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        nb.grad.data[i] -= self.grad.data[i];
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::mul(VarId a, VarId b) {
  check_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
  Node n;
  n.value = std::move(out);
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a, b](Graph& g, Node& self) {
    Node& na = g.node(a);
    Node& nb = g.node(b);
    if (!na.grad.data.empty()) {
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        na.grad.data[i] += self.grad.data[i] * nb.value.data[i];
      }
    }
    if (!nb.grad.data.empty()) {
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        nb.grad.data[i] += self.grad.data[i] * na.value.data[i];
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::scale(VarId a, double s) {
  Tensor out = value(a);
  for (double& v : out.data) v *= s;
  Node n;
  n.value = std::move(out);
  n.inputs = {a};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a, s](Graph& g, Node& self) {
    Node& na = g.node(a);
    if (na.grad.data.empty()) return;
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      na.grad.data[i] += s * self.grad.data[i];
    }
  };
  return emplace(std::move(n));
}

VarId Graph::add_n(const std::vector<VarId>& xs) {
  if (xs.empty()) throw ContractError("add_n of zero terms");
  Tensor out = value(xs[0]);
  for (std::size_t t = 1; t < xs.size(); ++t) {
    check_same_shape(out, value(xs[t]), "add_n");
    const Tensor& v = value(xs[t]);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += v.data[i];
  }
  Node n;
  n.value = std::move(out);
  n.inputs = xs;
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [xs](Graph& g, Node& self) {
    for (VarId in : xs) {
      Node& src = g.node(in);
      if (src.grad.data.empty()) continue;
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        src.grad.data[i] += self.grad.data[i];
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::matmul(VarId a, VarId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + va.shape_str() + " x " +
                     vb.shape_str());
  }
  const int m = va.dim(0), k = va.dim(1), nn = vb.dim(1);
  Tensor out = Tensor::zeros({m, nn});
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double av = va.at(i, kk);
      if (av == 0.0) continue;
      const double* brow = &vb.data[static_cast<std::size_t>(kk) * nn];
      double* orow = &out.data[static_cast<std::size_t>(i) * nn];
      for (int j = 0; j < nn; ++j) orow[j] += av * brow[j];
    }
  }
  Node n;
  n.value = std::move(out);
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a, b, m, k, nn](Graph& g, Node& self) {
    Node& na = g.node(a);
    Node& nb = g.node(b);
    // dA = G * B^T
    if (!na.grad.data.empty()) {
      for (int i = 0; i < m; ++i) {
        const double* grow = &self.grad.data[static_cast<std::size_t>(i) * nn];
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = &nb.value.data[static_cast<std::size_t>(kk) * nn];
          double acc = 0.0;
          for (int j = 0; j < nn; ++j) acc += grow[j] * brow[j];
          na.grad.at(i, kk) += acc;
        }
      }
    }
    // dB = A^T * G
    if (!nb.grad.data.empty()) {
      for (int i = 0; i < m; ++i) {
        const double* grow = &self.grad.data[static_cast<std::size_t>(i) * nn];
        for (int kk = 0; kk < k; ++kk) {
          const double av = na.value.at(i, kk);
          if (av == 0.0) continue;
          double* brow = &nb.grad.data[static_cast<std::size_t>(kk) * nn];
          for (int j = 0; j < nn; ++j) brow[j] += av * grow[j];
        }
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::sigmoid(VarId a) {
  Tensor out = value(a);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  Node n;
  n.value = std::move(out);
  n.inputs = {a};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a](Graph& g, Node& self) {
    Node& na = g.node(a);
    if (na.grad.data.empty()) return;
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      const double y = self.value.data[i];
      na.grad.data[i] += self.grad.data[i] * y * (1.0 - y);
    }
  };
  return emplace(std::move(n));
}

VarId Graph::tanh(VarId a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::tanh(v);
  Node n;
  n.value = std::move(out);
  n.inputs = {a};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a](Graph& g, Node& self) {
    Node& na = g.node(a);
    if (na.grad.data.empty()) return;
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      const double y = self.value.data[i];
      na.grad.data[i] += self.grad.data[i] * (1.0 - y * y);
    }
  };
  return emplace(std::move(n));
}

VarId Graph::relu(VarId a) {
  Tensor out = value(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  Node n;
  n.value = std::move(out);
  n.inputs = {a};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a](Graph& g, Node& self) {
    Node& na = g.node(a);
    if (na.grad.data.empty()) return;
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      if (na.value.data[i] > 0.0) na.grad.data[i] += self.grad.data[i];
    }
  };
  return emplace(std::move(n));
}

VarId Graph::slice_rows(VarId a, int r0, int r1) {
  const Tensor& va = value(a);
  if (va.rank() != 2 || r0 < 0 || r1 > va.dim(0) || r0 >= r1) {
    throw ShapeError("slice_rows: bad range");
  }
  const int cols = va.dim(1);
  Tensor out = Tensor::zeros({r1 - r0, cols});
  std::copy(va.data.begin() + static_cast<std::ptrdiff_t>(r0) * cols,
            va.data.begin() + static_cast<std::ptrdiff_t>(r1) * cols,
            out.data.begin());
  Node n;
  n.value = std::move(out);
  n.inputs = {a};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a, r0, cols](Graph& g, Node& self) {
    Node& na = g.node(a);
    if (na.grad.data.empty()) return;
    double* dst = &na.grad.data[static_cast<std::size_t>(r0) * cols];
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      dst[i] += self.grad.data[i];
    }
  };
  return emplace(std::move(n));
}

VarId Graph::slice_cols(VarId a, int c0, int c1) {
  const Tensor& va = value(a);
  if (va.rank() != 2 || c0 < 0 || c1 > va.dim(1) || c0 >= c1) {
    throw ShapeError("slice_cols: bad range");
  }
  const int rows = va.dim(0), cols = va.dim(1), w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < w; ++j) out.at(i, j) = va.at(i, c0 + j);
  }
  Node n;
  n.value = std::move(out);
  n.inputs = {a};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a, c0, rows, cols, w](Graph& g, Node& self) {
    (void)cols;
    Node& na = g.node(a);
    if (na.grad.data.empty()) return;
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < w; ++j) {
        na.grad.at(i, c0 + j) += self.grad.at(i, j);
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::concat_rows(const std::vector<VarId>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of zero parts");
  const int cols = value(parts[0]).dim(1);
  int rows = 0;
  for (VarId p : parts) {
    const Tensor& v = value(p);
    if (v.rank() != 2 || v.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch");
    }
    rows += v.dim(0);
  }
  Tensor out = Tensor::zeros({rows, cols});
  std::size_t offset = 0;
  for (VarId p : parts) {
    const Tensor& v = value(p);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.data.size();
  }
  Node n;
  n.value = std::move(out);
  n.inputs = parts;
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [parts](Graph& g, Node& self) {
    std::size_t offset = 0;
    for (VarId p : parts) {
      Node& src = g.node(p);
      const std::size_t count = src.value.data.size();
      if (!src.grad.data.empty()) {
        for (std::size_t i = 0; i < count; ++i) {
          src.grad.data[i] += self.grad.data[offset + i];
        }
      }
      offset += count;
    }
  };
  return emplace(std::move(n));
}

VarId Graph::reshape(VarId a, std::vector<int> new_shape) {
  const Tensor& va = value(a);
  if (shape_numel(new_shape) != va.numel()) {
    throw ShapeError("reshape: element count mismatch");
  }
  Tensor out;
  out.shape = std::move(new_shape);
  out.data = va.data;
  Node n;
  n.value = std::move(out);
  n.inputs = {a};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [a](Graph& g, Node& self) {
    Node& na = g.node(a);
    if (na.grad.data.empty()) return;
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      na.grad.data[i] += self.grad.data[i];
    }
  };
  return emplace(std::move(n));
}

VarId Graph::conv2d(VarId input, VarId kernel, VarId bias, int stride_t,
                    int stride_f) {
  const Tensor& in = value(input);
  const Tensor& k = value(kernel);
  const Tensor& b = value(bias);
  if (in.rank() != 3 || k.rank() != 4 || b.rank() != 1) {
    throw ShapeError("conv2d: expected input (T,F,Cin), kernel (kh,kw,Cin,Cout), bias (Cout)");
  }
  if (k.dim(2) != in.dim(2) || b.dim(0) != k.dim(3)) {
    throw ShapeError("conv2d: channel mismatch");
  }
  if (stride_t < 1 || stride_f < 1) throw ContractError("conv2d: stride must be >= 1");
  const int t = in.dim(0), f = in.dim(1), cin = in.dim(2);
  const int kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  const int to = ceil_div(t, stride_t), fo = ceil_div(f, stride_f);
  const int pad_t = std::max(0, (to - 1) * stride_t + kh - t);
  const int pad_f = std::max(0, (fo - 1) * stride_f + kw - f);
  const int pad_top = pad_t / 2, pad_left = pad_f / 2;

  Tensor out = Tensor::zeros({to, fo, cout});
  for (int i = 0; i < to; ++i) {
    for (int j = 0; j < fo; ++j) {
      double* orow = &out.data[(static_cast<std::size_t>(i) * fo + j) * cout];
      for (int co = 0; co < cout; ++co) orow[co] = b.at(co);
      for (int kt = 0; kt < kh; ++kt) {
        const int ti = i * stride_t - pad_top + kt;
        if (ti < 0 || ti >= t) continue;
        for (int kf = 0; kf < kw; ++kf) {
          const int fi = j * stride_f - pad_left + kf;
          if (fi < 0 || fi >= f) continue;
          const double* irow =
              &in.data[(static_cast<std::size_t>(ti) * f + fi) * cin];
          const double* krow =
              &k.data[(static_cast<std::size_t>(kt) * kw + kf) * cin * cout];
          for (int ci = 0; ci < cin; ++ci) {
            const double iv = irow[ci];
            if (iv == 0.0) continue;
            const double* kc = &krow[static_cast<std::size_t>(ci) * cout];
            for (int co = 0; co < cout; ++co) orow[co] += iv * kc[co];
          }
        }
      }
    }
  }
  Node n;
  n.value = std::move(out);
  n.inputs = {input, kernel, bias};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [input, kernel, bias, stride_t, stride_f, t, f, cin, kh, kw,
                   cout, to, fo, pad_top, pad_left](Graph& g, Node& self) {
    Node& nin = g.node(input);
    Node& nk = g.node(kernel);
    Node& nb = g.node(bias);
    const bool want_in = !nin.grad.data.empty();
    const bool want_k = !nk.grad.data.empty();
    const bool want_b = !nb.grad.data.empty();
    for (int i = 0; i < to; ++i) {
      for (int j = 0; j < fo; ++j) {
        const double* grow =
            &self.grad.data[(static_cast<std::size_t>(i) * fo + j) * cout];
        if (want_b) {
          for (int co = 0; co < cout; ++co) nb.grad.at(co) += grow[co];
        }
        for (int kt = 0; kt < kh; ++kt) {
          const int ti = i * stride_t - pad_top + kt;
          if (ti < 0 || ti >= t) continue;
          for (int kf = 0; kf < kw; ++kf) {
            const int fi = j * stride_f - pad_left + kf;
            if (fi < 0 || fi >= f) continue;
            const std::size_t in_base =
                (static_cast<std::size_t>(ti) * f + fi) * cin;
            const std::size_t k_base =
                (static_cast<std::size_t>(kt) * kw + kf) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const double iv = nin.value.data[in_base + ci];
              const double* kc = &nk.value.data[k_base + static_cast<std::size_t>(ci) * cout];
              if (want_in) {
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) acc += grow[co] * kc[co];
                nin.grad.data[in_base + ci] += acc;
              }
              if (want_k && iv != 0.0) {
                double* dk = &nk.grad.data[k_base + static_cast<std::size_t>(ci) * cout];
                for (int co = 0; co < cout; ++co) dk[co] += iv * grow[co];
              }
            }
          }
        }
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::conv1d(VarId input, VarId kernel, VarId bias) {
  const Tensor& in = value(input);
  const Tensor& k = value(kernel);
  const Tensor& b = value(bias);
  if (in.rank() != 2 || k.rank() != 3 || b.rank() != 1) {
    throw ShapeError("conv1d: expected input (T,Cin), kernel (k,Cin,Cout), bias (Cout)");
  }
  if (k.dim(1) != in.dim(1) || b.dim(0) != k.dim(2)) {
    throw ShapeError("conv1d: channel mismatch");
  }
  const int t = in.dim(0), cin = in.dim(1);
  const int kk = k.dim(0), cout = k.dim(2);
  const int pad_left = (kk - 1) / 2;

  Tensor out = Tensor::zeros({t, cout});
  for (int i = 0; i < t; ++i) {
    double* orow = &out.data[static_cast<std::size_t>(i) * cout];
    for (int co = 0; co < cout; ++co) orow[co] = b.at(co);
    for (int kt = 0; kt < kk; ++kt) {
      const int ti = i - pad_left + kt;
      if (ti < 0 || ti >= t) continue;
      const double* irow = &in.data[static_cast<std::size_t>(ti) * cin];
      const double* krow = &k.data[static_cast<std::size_t>(kt) * cin * cout];
      for (int ci = 0; ci < cin; ++ci) {
        const double iv = irow[ci];
        if (iv == 0.0) continue;
        const double* kc = &krow[static_cast<std::size_t>(ci) * cout];
        for (int co = 0; co < cout; ++co) orow[co] += iv * kc[co];
      }
    }
  }
  Node n;
  n.value = std::move(out);
  n.inputs = {input, kernel, bias};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [input, kernel, bias, t, cin, kk, cout, pad_left](Graph& g,
                                                                    Node& self) {
    Node& nin = g.node(input);
    Node& nk = g.node(kernel);
    Node& nb = g.node(bias);
    const bool want_in = !nin.grad.data.empty();
    const bool want_k = !nk.grad.data.empty();
    const bool want_b = !nb.grad.data.empty();
    for (int i = 0; i < t; ++i) {
      const double* grow = &self.grad.data[static_cast<std::size_t>(i) * cout];
      if (want_b) {
        for (int co = 0; co < cout; ++co) nb.grad.at(co) += grow[co];
      }
      for (int kt = 0; kt < kk; ++kt) {
        const int ti = i - pad_left + kt;
        if (ti < 0 || ti >= t) continue;
        const std::size_t in_base = static_cast<std::size_t>(ti) * cin;
        const std::size_t k_base = static_cast<std::size_t>(kt) * cin * cout;
        for (int ci = 0; ci < cin; ++ci) {
          const double iv = nin.value.data[in_base + ci];
          const double* kc = &nk.value.data[k_base + static_cast<std::size_t>(ci) * cout];
          if (want_in) {
            double acc = 0.0;
            for (int co = 0; co < cout; ++co) acc += grow[co] * kc[co];
            nin.grad.data[in_base + ci] += acc;
          }
          if (want_k && iv != 0.0) {
            double* dk = &nk.grad.data[k_base + static_cast<std::size_t>(ci) * cout];
            for (int co = 0; co < cout; ++co) dk[co] += iv * grow[co];
          }
        }
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::l1_masked(VarId pred, Tensor target,
                       std::vector<std::uint8_t> row_mask) {
  const Tensor& p = value(pred);
  check_same_shape(p, target, "l1_masked");
  if (p.rank() != 2 ||
      row_mask.size() != static_cast<std::size_t>(p.dim(0))) {
    throw ShapeError("l1_masked: mask length must equal row count");
  }
  const int rows = p.dim(0), cols = p.dim(1);
  double loss = 0.0;
  for (int i = 0; i < rows; ++i) {
    if (!row_mask[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < cols; ++j) {
      loss += std::abs(p.at(i, j) - target.at(i, j));
    }
  }
  Node n;
  n.value = Tensor::scalar(loss);
  n.inputs = {pred};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [pred, target = std::move(target),
                   row_mask = std::move(row_mask), rows, cols](Graph& g,
                                                               Node& self) {
    Node& np = g.node(pred);
    if (np.grad.data.empty()) return;
    const double go = self.grad.at(0);
    for (int i = 0; i < rows; ++i) {
      if (!row_mask[static_cast<std::size_t>(i)]) continue;
      for (int j = 0; j < cols; ++j) {
        const double d = np.value.at(i, j) - target.at(i, j);
        if (d > 0.0) {
          np.grad.at(i, j) += go;
        } else if (d < 0.0) {
          np.grad.at(i, j) -= go;
        }
      }
    }
  };
  return emplace(std::move(n));
}

VarId Graph::scaled_bce(VarId p, int label, double pos_scale,
                        double clamp_eps) {
  if (pos_scale <= 0.0) throw ContractError("scaled_bce: scale must be positive");
  if (label != 0 && label != 1) throw ContractError("scaled_bce: label must be 0 or 1");
  const Tensor& vp = value(p);
  if (vp.numel() != 1) throw ContractError("scaled_bce: probability must be scalar");
  const double raw = vp.at(0);
  const double clamped = std::clamp(raw, clamp_eps, 1.0 - clamp_eps);
  const double loss = -(pos_scale * label * std::log(clamped) +
                        (1 - label) * std::log(1.0 - clamped));
  Node n;
  n.value = Tensor::scalar(loss);
  n.inputs = {p};
  n.needs_grad = any_needs_grad(n.inputs);
  n.backward_fn = [p, label, pos_scale, clamp_eps, raw, clamped](Graph& g,
                                                                 Node& self) {
    Node& np = g.node(p);
    if (np.grad.data.empty()) return;
    if (raw < clamp_eps || raw > 1.0 - clamp_eps) return;  // clamp active
    const double go = self.grad.at(0);
    const double d =
        -(pos_scale * label / clamped - (1 - label) / (1.0 - clamped));
    np.grad.data[0] += go * d;
  };
  return emplace(std::move(n));
}

void Graph::backward(VarId loss) {
  Node& loss_node = node(loss);
  if (loss_node.value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        loss_node.value.shape_str());
  }
  if (!std::isfinite(loss_node.value.at(0))) {
    throw ContractError("backward: loss is not finite");
  }
  for (std::size_t i = 0; i <= static_cast<std::size_t>(loss); ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) {
      n.grad = Tensor::zeros(n.value.shape);
    } else {
      n.grad = Tensor();
    }
  }
  if (!loss_node.needs_grad) return;  // loss does not depend on any parameter
  loss_node.grad.at(0) = 1.0;
  for (VarId id = loss; id >= 0; --id) {
    Node& n = node(id);
    if (n.needs_grad && n.backward_fn && !n.grad.data.empty()) {
      n.backward_fn(*this, n);
    }
  }
}

LstmStepOut lstm_step(Graph& g, VarId x, VarId h_prev, VarId c_prev, VarId wx,
                      VarId wh, VarId bias, int hidden) {
  const VarId pre = g.add(g.add(g.matmul(x, wx), g.matmul(h_prev, wh)), bias);
  const VarId gate_i = g.sigmoid(g.slice_cols(pre, 0, hidden));
  const VarId gate_f = g.sigmoid(g.slice_cols(pre, hidden, 2 * hidden));
  const VarId cand = g.tanh(g.slice_cols(pre, 2 * hidden, 3 * hidden));
  const VarId gate_o = g.sigmoid(g.slice_cols(pre, 3 * hidden, 4 * hidden));
  LstmStepOut out;
  out.c = g.add(g.mul(gate_i, cand), g.mul(gate_f, c_prev));
  out.h = g.mul(gate_o, g.tanh(out.c));
  return out;
}

LstmOut lstm_sequence(Graph& g, VarId input, VarId wx, VarId wh, VarId bias,
                      int hidden) {
  const Tensor& in = g.value(input);
  if (in.rank() != 2) throw ShapeError("lstm_sequence: input must be (T,D)");
  const int t = in.dim(0);
  if (t == 0) throw ContractError("lstm_sequence: empty input");
  VarId h = g.constant(Tensor::zeros({1, hidden}));
  VarId c = g.constant(Tensor::zeros({1, hidden}));
  std::vector<VarId> hs;
  hs.reserve(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    const VarId x = g.slice_rows(input, i, i + 1);
    const LstmStepOut step = lstm_step(g, x, h, c, wx, wh, bias, hidden);
    h = step.h;
    c = step.c;
    hs.push_back(h);
  }
  LstmOut out;
  out.outputs = g.concat_rows(hs);
  out.last = h;
  return out;
}

VarId dense(Graph& g, VarId x, VarId w, VarId b) {
  const VarId prod = g.matmul(x, w);
  // Copy the shape facts out: creating nodes below reallocates the arena
  // that value() references point into.
  const int out_rows = g.value(prod).dim(0);
  const int out_cols = g.value(prod).dim(1);
  const Tensor& bv = g.value(b);
  if (bv.rank() != 2 || bv.dim(0) != 1 || bv.dim(1) != out_cols) {
    throw ShapeError("dense: bias must be (1,n)");
  }
  if (out_rows == 1) return g.add(prod, b);
  // Broadcast the bias row over every output row.
  std::vector<VarId> rows;
  rows.reserve(static_cast<std::size_t>(out_rows));
  for (int i = 0; i < out_rows; ++i) {
    rows.push_back(g.add(g.slice_rows(prod, i, i + 1), b));
  }
  return g.concat_rows(rows);
}

}  // namespace fssl
