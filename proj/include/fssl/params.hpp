#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "fssl/autodiff.hpp"
#include "fssl/rng.hpp"
#include "fssl/tensor.hpp"

namespace fssl {

// Which stage of the model a parameter belongs to. Federated aggregation
// touches encoder and decoder weights; the classifier never leaves the server.
enum class ParamTag : std::uint8_t { encoder = 0, decoder = 1, classifier = 2 };

struct ParamEntry {
  std::string name;
  ParamTag tag = ParamTag::encoder;
  Tensor value;
};

// Ordered, name-addressable collection of model parameters. Order is the
// registration order and is part of the serialized format, so two sets built
// by the same construction code are structurally identical.
class ParamSet {
 public:
  void add(std::string name, ParamTag tag, Tensor value);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  ParamTag tag_of(const std::string& name) const;

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  bool all_finite() const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// True when both sets list the same names, tags and shapes in the same order.
bool same_structure(const ParamSet& a, const ParamSet& b);

ParamSet zeros_like(const ParamSet& ps);

// y.value += a * x.value for every entry; structures must match exactly.
void axpy_params(ParamSet& y, const ParamSet& x, double a);
void scale_params(ParamSet& ps, double s);

// Largest absolute difference over all scalars; structures must match.
double max_abs_diff(const ParamSet& a, const ParamSet& b);

// Graph-side handles for a ParamSet. Entries whose tag is listed as trainable
// are registered as differentiable leaves, the rest as constants.
struct BoundParams {
  std::unordered_map<std::string, VarId> ids;
  VarId id(const std::string& name) const;
};

BoundParams bind_params(Graph& g, const ParamSet& ps,
                        const std::set<ParamTag>& trainable);

// In-place gradient step p -= lr * dp over every trainable bound entry.
// Must be called after Graph::backward. Throws if any update is not finite.
void apply_sgd(ParamSet& ps, const Graph& g, const BoundParams& bound,
               const std::set<ParamTag>& trainable, double lr);

// Copies gradients for trainable entries out of the graph, summing into
// `accum` (same structure as `ps`). Used by the gradient checker.
void collect_grads(const Graph& g, const BoundParams& bound,
                   const ParamSet& ps, const std::set<ParamTag>& trainable,
                   ParamSet& accum);

// Initializers. Glorot bounds use the given fan counts, which for conv
// kernels include the receptive field.
Tensor glorot_uniform(Rng& rng, const std::vector<int>& shape, int fan_in,
                      int fan_out);

// LSTM bias of shape (1,4H), zero except the forget-gate block set to 1.
Tensor lstm_bias(int hidden, double forget_bias);

// Binary round-trip. The byte layout is fixed so checksums are reproducible.
std::vector<std::uint8_t> serialize_params(const ParamSet& ps);
ParamSet deserialize_params(const std::vector<std::uint8_t>& bytes);
void save_params(const std::filesystem::path& path, const ParamSet& ps);
ParamSet load_params(const std::filesystem::path& path);

// FNV-1a over the serialized bytes, as a fixed-width hex string.
std::string param_checksum(const ParamSet& ps);

}  // namespace fssl
