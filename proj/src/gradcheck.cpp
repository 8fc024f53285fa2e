#include "fssl/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <utility>

#include "fssl/errors.hpp"
#include "fssl/model.hpp"

namespace fssl {

GradCheckResult finite_diff_check(
    const ParamSet& ps, const ParamSet& analytic,
    const std::set<ParamTag>& trainable,
    const std::function<double(const ParamSet&)>& loss,
    const GradCheckConfig& cfg, Rng& rng) {
  if (!same_structure(ps, analytic)) {
    throw ContractError("finite_diff_check: gradient structure differs");
  }
  // Flat list of (entry index, scalar index) coordinates to probe.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t e = 0; e < ps.size(); ++e) {
    if (trainable.count(ps.entries()[e].tag) == 0) continue;
    for (std::size_t j = 0; j < ps.entries()[e].value.data.size(); ++j) {
      coords.emplace_back(e, j);
    }
  }
  if (coords.empty()) throw ContractError("finite_diff_check: nothing to check");
  if (cfg.max_coords != 0 && coords.size() > cfg.max_coords) {
    rng.shuffle(coords);
    coords.resize(cfg.max_coords);
  }

  ParamSet work = ps;
  GradCheckResult result;
  for (const auto& [e, j] : coords) {
    double& slot = work.entries()[e].value.data[j];
    const double saved = slot;
    slot = saved + cfg.step;
    const double up = loss(work);
    slot = saved - cfg.step;
    const double down = loss(work);
    slot = saved;
    const double numeric = (up - down) / (2.0 * cfg.step);
    const double exact = analytic.entries()[e].value.data[j];
    const double denom =
        std::max({std::abs(numeric), std::abs(exact), cfg.denom_floor});
    const double rel = std::abs(numeric - exact) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = ps.entries()[e].name;
      result.worst_index = j;
    }
    ++result.checked;
  }
  return result;
}

namespace {

Tensor randn(Rng& rng, const std::vector<int>& shape) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data) v = rng.normal();
  return t;
}

using GraphBuilder = std::function<VarId(Graph&, const BoundParams&)>;

GradSuiteCase run_case(std::string name, const ParamSet& ps,
                       const std::set<ParamTag>& trainable,
                       const GraphBuilder& build, const GradCheckConfig& cfg,
                       Rng& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  Graph g;
  BoundParams bound = bind_params(g, ps, trainable);
  const VarId loss = build(g, bound);
  g.backward(loss);
  ParamSet grads = zeros_like(ps);
  collect_grads(g, bound, ps, trainable, grads);

  const auto loss_of = [&build, &trainable](const ParamSet& p) {
    Graph h;
    BoundParams b = bind_params(h, p, trainable);
    return h.value(build(h, b)).at(0);
  };
  GradSuiteCase out;
  out.name = std::move(name);
  out.result = finite_diff_check(ps, grads, trainable, loss_of, cfg, rng);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0)
                    .count();
  return out;
}

}  // namespace

std::vector<GradSuiteCase> model_gradient_checks(
    std::uint64_t seed, std::size_t composed_coords) {
  const std::set<ParamTag> enc = {ParamTag::encoder};
  const GradCheckConfig exhaustive;
  GradCheckConfig sampled;
  sampled.max_coords = composed_coords;

  std::vector<GradSuiteCase> cases;
  std::uint64_t idx = 0;
  const auto case_rng = [&seed, &idx]() {
    return Rng(substream(seed, "gradcase", idx++));
  };

  {
    Rng rng = case_rng();
    ParamSet ps;
    ps.add("w", ParamTag::encoder, randn(rng, {3, 2}));
    ps.add("b", ParamTag::encoder, randn(rng, {1, 2}));
    const Tensor x = randn(rng, {4, 3});
    const Tensor target = Tensor::zeros({4, 2});
    cases.push_back(run_case(
        "dense_tanh_l1", ps, enc,
        [x, target](Graph& g, const BoundParams& b) {
          VarId y = g.tanh(dense(g, g.constant(x), b.id("w"), b.id("b")));
          return g.l1_masked(y, target, std::vector<std::uint8_t>(4, 1));
        },
        exhaustive, rng));
  }
  {
    Rng rng = case_rng();
    ParamSet ps;
    ps.add("k", ParamTag::encoder, randn(rng, {3, 3, 2, 3}));
    ps.add("b", ParamTag::encoder, randn(rng, {3}));
    const Tensor x = randn(rng, {7, 6, 2});
    const Tensor target = Tensor::zeros({4, 9});
    cases.push_back(run_case(
        "conv2d_relu_l1", ps, enc,
        [x, target](Graph& g, const BoundParams& b) {
          VarId y = g.relu(g.conv2d(g.constant(x), b.id("k"), b.id("b"), 2, 2));
          return g.l1_masked(g.reshape(y, {4, 9}), target,
                             std::vector<std::uint8_t>(4, 1));
        },
        exhaustive, rng));
  }
  {
    Rng rng = case_rng();
    ParamSet ps;
    ps.add("k", ParamTag::decoder, randn(rng, {3, 4, 5}));
    ps.add("b", ParamTag::decoder, randn(rng, {5}));
    const Tensor x = randn(rng, {9, 4});
    const Tensor target = Tensor::zeros({9, 5});
    cases.push_back(run_case(
        "conv1d_l1", ps, {ParamTag::decoder},
        [x, target](Graph& g, const BoundParams& b) {
          VarId y = g.conv1d(g.constant(x), b.id("k"), b.id("b"));
          return g.l1_masked(y, target, std::vector<std::uint8_t>(9, 1));
        },
        exhaustive, rng));
  }
  {
    Rng rng = case_rng();
    ParamSet ps;
    ps.add("wx", ParamTag::encoder, randn(rng, {5, 16}));
    ps.add("wh", ParamTag::encoder, randn(rng, {4, 16}));
    ps.add("bias", ParamTag::encoder, randn(rng, {1, 16}));
    const Tensor x = randn(rng, {6, 5});
    const Tensor target = Tensor::zeros({6, 4});
    cases.push_back(run_case(
        "lstm_l1", ps, enc,
        [x, target](Graph& g, const BoundParams& b) {
          LstmOut out = lstm_sequence(g, g.constant(x), b.id("wx"),
                                      b.id("wh"), b.id("bias"), 4);
          return g.l1_masked(out.outputs, target,
                             std::vector<std::uint8_t>(6, 1));
        },
        exhaustive, rng));
  }
  {
    Rng rng = case_rng();
    ParamSet ps;
    ps.add("w", ParamTag::classifier, randn(rng, {5, 1}));
    ps.add("b", ParamTag::classifier, randn(rng, {1, 1}));
    const Tensor x = randn(rng, {1, 5});
    cases.push_back(run_case(
        "sigmoid_bce_negative", ps, {ParamTag::classifier},
        [x](Graph& g, const BoundParams& b) {
          VarId p = g.sigmoid(dense(g, g.constant(x), b.id("w"), b.id("b")));
          return g.scaled_bce(p, 0, 2.0, 1e-7);
        },
        exhaustive, rng));
  }

  // Composed objectives on one simulation-scale clip (2 s: 198 frames).
  const ApcConfig apc = desk_apc();
  const ClassifierConfig cls = desk_classifier();
  const int frames = 198;
  {
    Rng rng = case_rng();
    ParamSet ps = init_apc(apc, rng);
    const Tensor x = randn(rng, {frames, apc.input_mels});
    cases.push_back(run_case(
        "reconstruction_composed", ps,
        {ParamTag::encoder, ParamTag::decoder},
        [&apc, x](Graph& g, const BoundParams& b) {
          return build_apc_clip_loss(g, b, apc, x);
        },
        sampled, rng));
  }
  {
    Rng rng = case_rng();
    ParamSet ps = init_apc(apc, rng);
    ParamSet cls_ps = init_classifier(cls, apc.lstm_units, rng);
    for (auto& e : cls_ps.entries()) ps.add(e.name, e.tag, e.value);
    const Tensor x = randn(rng, {frames, apc.input_mels});
    cases.push_back(run_case(
        "classification_composed", ps,
        {ParamTag::encoder, ParamTag::classifier},
        [&apc, &cls, x](Graph& g, const BoundParams& b) {
          VarId h = build_encoder(g, b, apc, x);
          VarId p = build_classifier_score(g, b, cls, h);
          return g.scaled_bce(p, 1, cls.scale_c, cls.clamp_eps);
        },
        sampled, rng));
  }
  return cases;
}

}  // namespace fssl
