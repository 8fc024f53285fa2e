#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fssl/tensor.hpp"

namespace fssl {

using VarId = int;

// Define-by-run reverse-mode tape. Values are computed eagerly as ops are
// recorded; backward() runs the tape in reverse and accumulates gradients
// into every node that transitively depends on a parameter leaf.
//
// One Graph is single-threaded; distinct Graphs may live on distinct threads.
class Graph {
 public:
  // Leaves.
  VarId constant(Tensor value);
  VarId param(Tensor value);

  // Elementwise; shapes must match exactly (no broadcasting).
  VarId add(VarId a, VarId b);
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);

  VarId scale(VarId a, double s);
  VarId add_n(const std::vector<VarId>& xs);

  // (m,k) x (k,n) -> (m,n)
  VarId matmul(VarId a, VarId b);

  VarId sigmoid(VarId a);
  VarId tanh(VarId a);
  VarId relu(VarId a);

  VarId slice_rows(VarId a, int r0, int r1);
  VarId slice_cols(VarId a, int c0, int c1);
  VarId concat_rows(const std::vector<VarId>& parts);
  VarId reshape(VarId a, std::vector<int> new_shape);

  // 2-D convolution over (time, freq) with channels: input (T,F,Cin),
  // kernel (kh,kw,Cin,Cout), bias (Cout). "Same" padding in ceil mode:
  // output length ceil(in/stride) per spatial axis.
  VarId conv2d(VarId input, VarId kernel, VarId bias, int stride_t,
               int stride_f);

  // 1-D convolution over time: input (T,Cin), kernel (k,Cin,Cout),
  // bias (Cout), stride 1, same padding.
  VarId conv1d(VarId input, VarId kernel, VarId bias);

  // Sum of |pred - target| over rows where row_mask is nonzero. Scalar.
  // Subgradient of |.| at zero is taken as zero.
  VarId l1_masked(VarId pred, Tensor target, std::vector<std::uint8_t> row_mask);

  // -[c*z*ln(p) + (1-z)*ln(1-p)] with p clamped to [eps, 1-eps]. Input is a
  // one-element tensor; output is scalar. No gradient flows where the clamp
  // is active.
  VarId scaled_bce(VarId p, int label, double pos_scale, double clamp_eps);

  void backward(VarId loss);

  const Tensor& value(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(VarId id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<VarId> inputs;
    std::function<void(Graph&, Node&)> backward_fn;
    bool needs_grad = false;
  };

  VarId emplace(Node node);
  Node& node(VarId id) { return nodes_[static_cast<std::size_t>(id)]; }
  bool any_needs_grad(const std::vector<VarId>& ids) const;

  std::vector<Node> nodes_;
};

// LSTM with standard gates (input, forget, cell candidate, output in that
// column order), sigmoid gate activations and tanh cell activation. Initial
// hidden and cell states are zero.
struct LstmOut {
  VarId outputs;  // (T, H): hidden state at every step
  VarId last;     // (1, H): final hidden state
};

struct LstmStepOut {
  VarId h;  // (1, H)
  VarId c;  // (1, H)
};

// One step: x (1,D), h/c (1,H), wx (D,4H), wh (H,4H), bias (1,4H).
LstmStepOut lstm_step(Graph& g, VarId x, VarId h_prev, VarId c_prev, VarId wx,
                      VarId wh, VarId bias, int hidden);

// Full sequence: input (T,D).
LstmOut lstm_sequence(Graph& g, VarId input, VarId wx, VarId wh, VarId bias,
                      int hidden);

// x (r,k) -> x*w + b with w (k,n), b (1,n) broadcast over rows.
VarId dense(Graph& g, VarId x, VarId w, VarId b);

}  // namespace fssl
