#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "fssl/errors.hpp"
#include "fssl/params.hpp"
#include "fssl/rng.hpp"

using namespace fssl;

namespace {

ParamSet sample_set(std::uint64_t seed) {
  Rng rng(seed);
  ParamSet ps;
  ps.add("enc_w", ParamTag::encoder, glorot_uniform(rng, {4, 3}, 4, 3));
  ps.add("enc_b", ParamTag::encoder, Tensor::zeros({1, 3}));
  ps.add("dec_k", ParamTag::decoder, glorot_uniform(rng, {3, 3, 2}, 9, 6));
  ps.add("cls_w", ParamTag::classifier, glorot_uniform(rng, {3, 1}, 3, 1));
  return ps;
}

}  // namespace

TEST_CASE("registration preserves order and addresses by name") {
  const ParamSet ps = sample_set(1);
  REQUIRE(ps.size() == 4);
  CHECK(ps.entries()[0].name == "enc_w");
  CHECK(ps.entries()[2].name == "dec_k");
  CHECK(ps.has("cls_w"));
  CHECK_FALSE(ps.has("missing"));
  CHECK(ps.tag_of("dec_k") == ParamTag::decoder);
  CHECK(ps.at("enc_b").dim(1) == 3);
  CHECK(ps.scalar_count() == 12 + 3 + 18 + 3);
  CHECK(ps.all_finite());
}

TEST_CASE("duplicate and unknown names are rejected") {
  ParamSet ps = sample_set(1);
  CHECK_THROWS_AS(ps.add("enc_w", ParamTag::encoder, Tensor::zeros({1, 1})),
                  ContractError);
  CHECK_THROWS_AS(ps.at("missing"), ContractError);
  CHECK_THROWS_AS(ps.tag_of("missing"), ContractError);
}

TEST_CASE("structure comparison checks names, tags and shapes in order") {
  const ParamSet a = sample_set(1);
  const ParamSet b = sample_set(2);  // different values, same construction
  CHECK(same_structure(a, b));

  ParamSet shape_differs;
  shape_differs.add("enc_w", ParamTag::encoder, Tensor::zeros({4, 4}));
  CHECK_FALSE(same_structure(a, shape_differs));

  ParamSet tag_differs = sample_set(1);
  tag_differs.entries()[0].tag = ParamTag::decoder;
  CHECK_FALSE(same_structure(a, tag_differs));
}

TEST_CASE("linear algebra over sets matches elementwise arithmetic") {
  const ParamSet a = sample_set(3);
  const ParamSet b = sample_set(4);
  ParamSet y = a;
  axpy_params(y, b, 0.5);
  for (std::size_t e = 0; e < a.size(); ++e) {
    const Tensor& ta = a.entries()[e].value;
    const Tensor& tb = b.entries()[e].value;
    const Tensor& ty = y.entries()[e].value;
    for (std::size_t i = 0; i < ta.data.size(); ++i) {
      CHECK(ty.data[i] == doctest::Approx(ta.data[i] + 0.5 * tb.data[i]));
    }
  }
  scale_params(y, 2.0);
  for (std::size_t e = 0; e < a.size(); ++e) {
    const Tensor& ta = a.entries()[e].value;
    const Tensor& tb = b.entries()[e].value;
    const Tensor& ty = y.entries()[e].value;
    for (std::size_t i = 0; i < ta.data.size(); ++i) {
      CHECK(ty.data[i] ==
            doctest::Approx(2.0 * ta.data[i] + 1.0 * tb.data[i]));
    }
  }
  const ParamSet z = zeros_like(a);
  CHECK(same_structure(z, a));
  CHECK(max_abs_diff(z, z) == 0.0);
  CHECK(max_abs_diff(a, b) > 0.0);

  ParamSet other;
  other.add("x", ParamTag::encoder, Tensor::zeros({2}));
  ParamSet target = a;
  CHECK_THROWS_AS(axpy_params(target, other, 1.0), ContractError);
}

TEST_CASE("glorot bounds follow the fan counts") {
  Rng rng(5);
  const int fan_in = 50, fan_out = 30;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  const Tensor t = glorot_uniform(rng, {50, 30}, fan_in, fan_out);
  double lo = 1e9, hi = -1e9;
  for (double v : t.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -limit);
  CHECK(hi <= limit);
  CHECK(lo < -0.8 * limit);  // the range is actually used
  CHECK(hi > 0.8 * limit);
}

TEST_CASE("lstm bias sets exactly the forget block") {
  const Tensor b = lstm_bias(3, 1.0);
  REQUIRE(b.rank() == 2);
  REQUIRE(b.dim(0) == 1);
  REQUIRE(b.dim(1) == 12);
  for (int j = 0; j < 12; ++j) {
    const double expect = (j >= 3 && j < 6) ? 1.0 : 0.0;
    CHECK(b.at(0, j) == expect);
  }
}

TEST_CASE("serialization round-trips bit-exactly") {
  const ParamSet ps = sample_set(6);
  const auto bytes = serialize_params(ps);
  const ParamSet back = deserialize_params(bytes);
  REQUIRE(same_structure(ps, back));
  CHECK(max_abs_diff(ps, back) == 0.0);
  CHECK(param_checksum(ps) == param_checksum(back));

  const auto path =
      std::filesystem::temp_directory_path() / "fssl_params_test.bin";
  save_params(path, ps);
  const ParamSet from_file = load_params(path);
  CHECK(param_checksum(from_file) == param_checksum(ps));
  std::filesystem::remove(path);
}

TEST_CASE("checksums detect single-scalar changes") {
  ParamSet ps = sample_set(7);
  const std::string before = param_checksum(ps);
  CHECK(before.size() == 16);
  ps.at("dec_k").data[5] += 1e-9;
  CHECK(param_checksum(ps) != before);
}

TEST_CASE("corrupt serial data is rejected") {
  auto bytes = serialize_params(sample_set(8));
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_params(bytes), ContractError);  // truncated
  std::vector<std::uint8_t> garbage(16, 0xAB);
  CHECK_THROWS_AS(deserialize_params(garbage), ContractError);  // bad magic
}

TEST_CASE("gradient step only touches trainable tags") {
  ParamSet ps = sample_set(9);
  const ParamSet before = ps;
  const std::set<ParamTag> trainable{ParamTag::encoder};
  Graph g;
  const BoundParams bound = bind_params(g, ps, trainable);
  // loss = sum(|enc_w|) + sum(|cls_w|): both get graph gradients, but only
  // the encoder tag may move.
  const VarId loss = g.add(
      g.l1_masked(bound.id("enc_w"), Tensor::zeros({4, 3}), {1, 1, 1, 1}),
      g.l1_masked(bound.id("cls_w"), Tensor::zeros({3, 1}), {1, 1, 1}));
  g.backward(loss);
  apply_sgd(ps, g, bound, trainable, 0.1);
  CHECK(max_abs_diff(ps, before) > 0.0);
  for (std::size_t e = 0; e < ps.size(); ++e) {
    const auto& entry = ps.entries()[e];
    const Tensor& was = before.entries()[e].value;
    if (entry.tag == ParamTag::encoder) continue;
    for (std::size_t i = 0; i < was.data.size(); ++i) {
      CHECK(entry.value.data[i] == was.data[i]);
    }
  }
}
