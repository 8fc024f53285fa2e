#include "fssl/model.hpp"

#include <string>

#include "fssl/errors.hpp"

namespace fssl {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

std::string conv_name(int layer, const char* part) {
  return "enc.conv" + std::to_string(layer) + "." + part;
}

// Mel-axis width after the conv stack; independent of clip length.
int final_mel_width(const ApcConfig& cfg) {
  int f = cfg.input_mels;
  for (int i = 0; i < 5; ++i) f = ceil_div(f, cfg.conv_strides[i].second);
  return f;
}

}  // namespace

void ApcConfig::validate() const {
  for (int i = 0; i < 5; ++i) {
    if (conv_kernels[i].first < 1 || conv_kernels[i].second < 1 ||
        conv_strides[i].first < 1 || conv_strides[i].second < 1 ||
        conv_channels[i] < 1) {
      throw ConfigError("conv layer " + std::to_string(i) +
                        ": kernels, strides and channels must be positive");
    }
  }
  if (lstm_units < 1) throw ConfigError("lstm_units must be positive");
  if (n_shift < 1) throw ConfigError("n_shift must be at least 1");
  if (input_mels < 1) throw ConfigError("input_mels must be positive");
  if (decoder_kernel < 1) throw ConfigError("decoder_kernel must be positive");
}

void ClassifierConfig::validate() const {
  if (lstm_units < 1) throw ConfigError("classifier lstm_units must be positive");
  if (scale_c <= 0.0) throw ConfigError("scale_c must be positive");
  if (clamp_eps <= 0.0 || clamp_eps >= 0.5) {
    throw ConfigError("clamp_eps must lie in (0, 0.5)");
  }
}

ApcConfig desk_apc() {
  ApcConfig cfg;
  cfg.conv_channels = {8, 8, 16, 16, 16};
  cfg.lstm_units = 32;
  return cfg;
}

ClassifierConfig desk_classifier() {
  ClassifierConfig cfg;
  cfg.lstm_units = 48;
  return cfg;
}

int time_stride_total(const ApcConfig& cfg) {
  int s = 1;
  for (int i = 0; i < 5; ++i) s *= cfg.conv_strides[i].first;
  return s;
}

std::pair<int, int> encoded_shape(const ApcConfig& cfg, int input_frames) {
  int t = input_frames;
  for (int i = 0; i < 5; ++i) t = ceil_div(t, cfg.conv_strides[i].first);
  return {t, final_mel_width(cfg) * cfg.conv_channels[4]};
}

ParamSet init_apc(const ApcConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet ps;
  int cin = 1;
  for (int i = 0; i < 5; ++i) {
    const auto [kt, kf] = cfg.conv_kernels[i];
    const int cout = cfg.conv_channels[i];
    ps.add(conv_name(i, "kernel"), ParamTag::encoder,
           glorot_uniform(rng, {kt, kf, cin, cout}, kt * kf * cin,
                          kt * kf * cout));
    ps.add(conv_name(i, "bias"), ParamTag::encoder, Tensor::zeros({cout}));
    cin = cout;
  }
  const int flat = final_mel_width(cfg) * cfg.conv_channels[4];
  const int h = cfg.lstm_units;
  ps.add("enc.lstm.wx", ParamTag::encoder,
         glorot_uniform(rng, {flat, 4 * h}, flat, 4 * h));
  ps.add("enc.lstm.wh", ParamTag::encoder,
         glorot_uniform(rng, {h, 4 * h}, h, 4 * h));
  ps.add("enc.lstm.bias", ParamTag::encoder, lstm_bias(h, 1.0));
  const int k = cfg.decoder_kernel;
  ps.add("dec.conv.kernel", ParamTag::decoder,
         glorot_uniform(rng, {k, h, cfg.input_mels}, k * h,
                        k * cfg.input_mels));
  ps.add("dec.conv.bias", ParamTag::decoder, Tensor::zeros({cfg.input_mels}));
  return ps;
}

ParamSet init_classifier(const ClassifierConfig& cfg, int latent_dim,
                         Rng& rng) {
  cfg.validate();
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  ParamSet ps;
  const int h = cfg.lstm_units;
  ps.add("cls.lstm.wx", ParamTag::classifier,
         glorot_uniform(rng, {latent_dim, 4 * h}, latent_dim, 4 * h));
  ps.add("cls.lstm.wh", ParamTag::classifier,
         glorot_uniform(rng, {h, 4 * h}, h, 4 * h));
  ps.add("cls.lstm.bias", ParamTag::classifier, lstm_bias(h, 1.0));
  ps.add("cls.dense.w", ParamTag::classifier,
         glorot_uniform(rng, {h, 1}, h, 1));
  ps.add("cls.dense.b", ParamTag::classifier, Tensor::zeros({1, 1}));
  return ps;
}

VarId build_encoder(Graph& g, const BoundParams& bound, const ApcConfig& cfg,
                    const Tensor& input) {
  if (input.rank() != 2 || input.dim(1) != cfg.input_mels) {
    throw ShapeError("encoder input must be (T," +
                     std::to_string(cfg.input_mels) + "), got " +
                     input.shape_str());
  }
  Tensor planes = input;
  planes.shape = {input.dim(0), input.dim(1), 1};
  VarId cur = g.constant(std::move(planes));
  for (int i = 0; i < 5; ++i) {
    cur = g.relu(g.conv2d(cur, bound.id(conv_name(i, "kernel")),
                          bound.id(conv_name(i, "bias")),
                          cfg.conv_strides[i].first,
                          cfg.conv_strides[i].second));
  }
  const Tensor& shaped = g.value(cur);
  const int tp = shaped.dim(0);
  const int flat = shaped.dim(1) * shaped.dim(2);
  cur = g.reshape(cur, {tp, flat});
  const LstmOut lstm =
      lstm_sequence(g, cur, bound.id("enc.lstm.wx"), bound.id("enc.lstm.wh"),
                    bound.id("enc.lstm.bias"), cfg.lstm_units);
  return lstm.outputs;
}

VarId build_decoder(Graph& g, const BoundParams& bound, const ApcConfig& cfg,
                    VarId latents) {
  if (g.value(latents).dim(1) != cfg.lstm_units) {
    throw ShapeError("decoder input must have " +
                     std::to_string(cfg.lstm_units) + " columns");
  }
  return g.conv1d(latents, bound.id("dec.conv.kernel"),
                  bound.id("dec.conv.bias"));
}

VarId build_classifier_score(Graph& g, const BoundParams& bound,
                             const ClassifierConfig& cfg, VarId latents) {
  const Tensor& h = g.value(latents);
  if (h.rank() != 2 || h.dim(0) < 1) {
    throw ContractError("classifier needs a non-empty latent sequence");
  }
  const LstmOut lstm =
      lstm_sequence(g, latents, bound.id("cls.lstm.wx"),
                    bound.id("cls.lstm.wh"), bound.id("cls.lstm.bias"),
                    cfg.lstm_units);
  const VarId logit =
      dense(g, lstm.last, bound.id("cls.dense.w"), bound.id("cls.dense.b"));
  return g.sigmoid(logit);
}

ApcTargets apc_targets(const Tensor& x, int n_shift, int stride_total,
                       int encoded_steps) {
  if (x.rank() != 2) throw ShapeError("targets need a (T,M) input");
  const int t = x.dim(0), m = x.dim(1);
  ApcTargets out;
  out.values = Tensor::zeros({encoded_steps, m});
  out.mask.assign(static_cast<std::size_t>(encoded_steps), 0);
  int kept = 0;
  for (int j = 0; j < encoded_steps; ++j) {
    const int idx = j * stride_total + n_shift;
    if (idx > t - 1) continue;
    for (int c = 0; c < m; ++c) out.values.at(j, c) = x.at(idx, c);
    out.mask[static_cast<std::size_t>(j)] = 1;
    ++kept;
  }
  if (kept == 0) {
    throw EmptyTargetsError("prediction shift leaves no target frame");
  }
  return out;
}

VarId build_apc_loss(Graph& g, VarId predicted, const ApcTargets& targets) {
  return g.l1_masked(predicted, targets.values, targets.mask);
}

VarId build_apc_clip_loss(Graph& g, const BoundParams& bound,
                          const ApcConfig& cfg, const Tensor& input) {
  const VarId latents = build_encoder(g, bound, cfg, input);
  const VarId predicted = build_decoder(g, bound, cfg, latents);
  const int steps = g.value(latents).dim(0);
  const ApcTargets targets =
      apc_targets(input, cfg.n_shift, time_stride_total(cfg), steps);
  return build_apc_loss(g, predicted, targets);
}

Tensor encode(const ParamSet& params, const ApcConfig& cfg,
              const Tensor& input) {
  Graph g;
  const BoundParams bound = bind_params(g, params, {});
  return g.value(build_encoder(g, bound, cfg, input));
}

double apc_clip_loss(const ParamSet& params, const ApcConfig& cfg,
                     const Tensor& input) {
  Graph g;
  const BoundParams bound = bind_params(g, params, {});
  return g.value(build_apc_clip_loss(g, bound, cfg, input)).at(0);
}

double classify_prob(const ParamSet& cls_params, const ClassifierConfig& cfg,
                     const Tensor& latents) {
  Graph g;
  const BoundParams bound = bind_params(g, cls_params, {});
  const VarId p =
      build_classifier_score(g, bound, cfg, g.constant(latents));
  return g.value(p).at(0);
}

}  // namespace fssl
