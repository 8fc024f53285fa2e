#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "fssl/autodiff.hpp"
#include "fssl/features.hpp"
#include "fssl/params.hpp"
#include "fssl/rng.hpp"
#include "fssl/tensor.hpp"

namespace fssl {

// Convolutional front end plus LSTM producing the latent sequence, and a
// Conv1D decoder predicting future input frames from the latents. Kernel and
// stride pairs are (time, mel).
struct ApcConfig {
  std::array<std::pair<int, int>, 5> conv_kernels{
      {{3, 3}, {3, 3}, {3, 3}, {3, 1}, {3, 1}}};
  std::array<std::pair<int, int>, 5> conv_strides{
      {{2, 2}, {2, 2}, {2, 1}, {2, 1}, {2, 1}}};
  std::array<int, 5> conv_channels{32, 32, 64, 64, 64};
  int lstm_units = 64;    // latent dimension m
  int n_shift = 3;        // prediction shift in input frames
  int input_mels = 20;    // M
  int decoder_kernel = 3;

  void validate() const;  // throws ConfigError
};

struct ClassifierConfig {
  int lstm_units = 96;
  double scale_c = 2.0;     // positive-class scale in the weighted BCE
  double clamp_eps = 1e-7;  // probability clamp inside the loss

  void validate() const;
};

// Uniformly shrunk dimensions for fast simulated experiments; the layer
// structure (kernels, strides, shift) is identical to the defaults above.
ApcConfig desk_apc();
ClassifierConfig desk_classifier();

// Product of the time strides: input frames consumed per encoder step.
int time_stride_total(const ApcConfig& cfg);

// (T', flattened per-step width) after the conv stack, before the LSTM.
std::pair<int, int> encoded_shape(const ApcConfig& cfg, int input_frames);

// Fresh parameter sets. Conv and dense weights are Glorot-uniform; LSTM
// biases start at zero except the forget gate block at 1.
ParamSet init_apc(const ApcConfig& cfg, Rng& rng);
ParamSet init_classifier(const ClassifierConfig& cfg, int latent_dim,
                         Rng& rng);

// Graph builders. `bound` must hold the entries the respective init_*
// created; input tensors enter the graph as constants.
VarId build_encoder(Graph& g, const BoundParams& bound, const ApcConfig& cfg,
                    const Tensor& input);
VarId build_decoder(Graph& g, const BoundParams& bound, const ApcConfig& cfg,
                    VarId latents);
VarId build_classifier_score(Graph& g, const BoundParams& bound,
                             const ClassifierConfig& cfg, VarId latents);

// Future-frame targets: encoder step j is paired with input frame
// j*stride_total + n_shift; rows whose target index runs past the input are
// masked out of the loss. Throws EmptyTargetsError if nothing survives.
struct ApcTargets {
  Tensor values;                   // T' x M, zero on masked rows
  std::vector<std::uint8_t> mask;  // 1 = contributes to the loss
};
ApcTargets apc_targets(const Tensor& x, int n_shift, int stride_total,
                       int encoded_steps);

// Scalar sum of absolute residuals over unmasked rows.
VarId build_apc_loss(Graph& g, VarId predicted, const ApcTargets& targets);

// Composed per-clip objective: encode, decode, compare with shifted input.
VarId build_apc_clip_loss(Graph& g, const BoundParams& bound,
                          const ApcConfig& cfg, const Tensor& input);

// Forward-only conveniences.
Tensor encode(const ParamSet& params, const ApcConfig& cfg,
              const Tensor& input);
double apc_clip_loss(const ParamSet& params, const ApcConfig& cfg,
                     const Tensor& input);
double classify_prob(const ParamSet& cls_params, const ClassifierConfig& cfg,
                     const Tensor& latents);

}  // namespace fssl
