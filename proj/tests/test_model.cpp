#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "fssl/errors.hpp"
#include "fssl/model.hpp"
#include "fssl/rng.hpp"

using namespace fssl;

namespace {

Tensor random_frames(std::uint64_t seed, int t, int m) {
  Rng rng(seed);
  Tensor x = Tensor::zeros({t, m});
  for (double& v : x.data) v = rng.normal();
  return x;
}

// Ceil-mode output length of one strided dimension, computed the slow way:
// count the windows a stride-s scan needs to cover n positions.
int ceil_div(int n, int s) { return (n + s - 1) / s; }

}  // namespace

TEST_CASE("encoder consumes 32 input frames per step at full scale") {
  const ApcConfig cfg;
  CHECK(time_stride_total(cfg) == 32);
  const auto [steps, width] = encoded_shape(cfg, 998);
  CHECK(steps == 32);
  // Mel axis: 20 -> 10 -> 5 -> 5 -> 5 -> 5 at 64 channels.
  CHECK(width == 5 * 64);
}

TEST_CASE("two-second clips encode to seven steps at desk scale") {
  const ApcConfig cfg = desk_apc();
  CHECK(time_stride_total(cfg) == 32);
  const auto [steps, width] = encoded_shape(cfg, 198);
  CHECK(steps == 7);
  CHECK(width == 5 * cfg.conv_channels[4]);
}

TEST_CASE("encoded shape matches per-layer ceil division") {
  const ApcConfig cfg;
  for (int t : {64, 100, 198, 337, 998}) {
    int tt = t, mm = cfg.input_mels;
    for (int layer = 0; layer < 5; ++layer) {
      tt = ceil_div(tt, cfg.conv_strides[static_cast<std::size_t>(layer)].first);
      mm = ceil_div(mm, cfg.conv_strides[static_cast<std::size_t>(layer)].second);
    }
    const auto [steps, width] = encoded_shape(cfg, t);
    CHECK(steps == tt);
    CHECK(width == mm * cfg.conv_channels[4]);
  }
}

TEST_CASE("desk config shrinks widths but keeps the layer structure") {
  const ApcConfig full;
  const ApcConfig desk = desk_apc();
  CHECK(desk.conv_kernels == full.conv_kernels);
  CHECK(desk.conv_strides == full.conv_strides);
  CHECK(desk.n_shift == full.n_shift);
  CHECK(desk.decoder_kernel == full.decoder_kernel);
  for (int i = 0; i < 5; ++i) {
    CHECK(desk.conv_channels[static_cast<std::size_t>(i)] <
          full.conv_channels[static_cast<std::size_t>(i)]);
  }
  CHECK(desk.lstm_units < full.lstm_units);
  CHECK(desk_classifier().lstm_units < ClassifierConfig{}.lstm_units);
  desk.validate();
  desk_classifier().validate();
}

TEST_CASE("fresh parameter sets have the advertised structure") {
  Rng rng(1);
  const ApcConfig cfg = desk_apc();
  const ParamSet ps = init_apc(cfg, rng);
  int n_enc = 0, n_dec = 0, n_cls = 0;
  for (const auto& e : ps.entries()) {
    if (e.tag == ParamTag::encoder) ++n_enc;
    if (e.tag == ParamTag::decoder) ++n_dec;
    if (e.tag == ParamTag::classifier) ++n_cls;
  }
  // 5 conv layers (kernel + bias), LSTM (wx, wh, bias) on the encoder side;
  // Conv1D kernel + bias on the decoder side; no classifier entries.
  CHECK(n_enc == 5 * 2 + 3);
  CHECK(n_dec == 2);
  CHECK(n_cls == 0);
  CHECK(ps.all_finite());

  Rng rng2(2);
  const ParamSet cls =
      init_classifier(desk_classifier(), cfg.lstm_units, rng2);
  for (const auto& e : cls.entries()) {
    CHECK(e.tag == ParamTag::classifier);
  }
  CHECK(cls.all_finite());

  Rng rng3(1);
  const ParamSet again = init_apc(cfg, rng3);
  CHECK(same_structure(ps, again));
  CHECK(max_abs_diff(ps, again) == 0.0);  // same seed, same values
}

TEST_CASE("future-frame targets shift and mask correctly") {
  // 7 encoder steps over 198 frames, stride 32, shift 3: step j targets
  // frame 32 j + 3; j = 7 would need frame 227 and is out of range for
  // j >= ceil((198 - 3) / 32) = 7, so all 7 rows survive here.
  const Tensor x = random_frames(3, 198, 4);
  const ApcTargets t = apc_targets(x, 3, 32, 7);
  REQUIRE(t.values.dim(0) == 7);
  REQUIRE(t.mask.size() == 7);
  for (int j = 0; j < 7; ++j) {
    const int src = 32 * j + 3;
    REQUIRE(t.mask[static_cast<std::size_t>(j)] == 1);
    for (int m = 0; m < 4; ++m) {
      CHECK(t.values.at(j, m) == x.at(src, m));
    }
  }

  // With 193 frames the last step's target frame 195 still exists, but for
  // a shift of 30 the target of step 6 is 222 and must be masked.
  const Tensor y = random_frames(4, 193, 4);
  const ApcTargets far = apc_targets(y, 30, 32, 7);
  CHECK(far.mask[5] == 1);   // 190 < 193
  CHECK(far.mask[6] == 0);   // 222 >= 193
  for (int m = 0; m < 4; ++m) {
    CHECK(far.values.at(6, m) == 0.0);
  }

  CHECK_THROWS_AS(apc_targets(random_frames(5, 10, 4), 400, 32, 7),
                  EmptyTargetsError);
}

TEST_CASE("graph builders agree with the forward-only paths") {
  const ApcConfig cfg = desk_apc();
  Rng rng(6);
  const ParamSet ps = init_apc(cfg, rng);
  const Tensor x = random_frames(7, 198, cfg.input_mels);

  Graph g;
  const BoundParams bound = bind_params(g, ps, {});
  const VarId latents = build_encoder(g, bound, cfg, x);
  const Tensor direct = encode(ps, cfg, x);
  REQUIRE(g.value(latents).shape == direct.shape);
  CHECK(direct.dim(0) == 7);
  CHECK(direct.dim(1) == cfg.lstm_units);
  for (std::size_t i = 0; i < direct.data.size(); ++i) {
    CHECK(g.value(latents).data[i] == doctest::Approx(direct.data[i]).epsilon(1e-12));
  }

  Graph g2;
  const BoundParams bound2 = bind_params(g2, ps, {});
  const VarId loss = build_apc_clip_loss(g2, bound2, cfg, x);
  CHECK(g2.value(loss).numel() == 1);
  CHECK(g2.value(loss).at(0) ==
        doctest::Approx(apc_clip_loss(ps, cfg, x)).epsilon(1e-12));
  CHECK(g2.value(loss).at(0) > 0.0);
}

TEST_CASE("classifier outputs a probability and matches its graph") {
  const ApcConfig cfg = desk_apc();
  const ClassifierConfig ccfg = desk_classifier();
  Rng rng(8);
  ParamSet cls = init_classifier(ccfg, cfg.lstm_units, rng);
  const Tensor latents = random_frames(9, 7, cfg.lstm_units);

  const double p = classify_prob(cls, ccfg, latents);
  CHECK(p > 0.0);
  CHECK(p < 1.0);

  Graph g;
  const BoundParams bound = bind_params(g, cls, {});
  const VarId score = build_classifier_score(g, bound, ccfg,
                                             g.constant(latents));
  CHECK(g.value(score).at(0, 0) == doctest::Approx(p).epsilon(1e-12));
}

TEST_CASE("different seeds move the encoder output") {
  const ApcConfig cfg = desk_apc();
  Rng a(10), b(11);
  const ParamSet pa = init_apc(cfg, a);
  const ParamSet pb = init_apc(cfg, b);
  const Tensor x = random_frames(12, 198, cfg.input_mels);
  const Tensor ea = encode(pa, cfg, x);
  const Tensor eb = encode(pb, cfg, x);
  double diff = 0.0;
  for (std::size_t i = 0; i < ea.data.size(); ++i) {
    diff = std::max(diff, std::abs(ea.data[i] - eb.data[i]));
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("config validation rejects degenerate settings") {
  ApcConfig cfg;
  cfg.lstm_units = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ApcConfig{};
  cfg.n_shift = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ApcConfig{};
  cfg.conv_strides[0] = {0, 2};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  ClassifierConfig c;
  c.scale_c = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
