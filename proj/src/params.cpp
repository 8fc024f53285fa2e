#include "fssl/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fssl/errors.hpp"

namespace fssl {

void ParamSet::add(std::string name, ParamTag tag, Tensor value) {
  if (index_.count(name) != 0) {
    throw ContractError("duplicate parameter name: " + name);
  }
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry{std::move(name), tag, std::move(value)});
}

bool ParamSet::has(const std::string& name) const {
  return index_.count(name) != 0;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].value;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].value;
}

ParamTag ParamSet::tag_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tag;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.data.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

bool same_structure(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const ParamEntry& ea = a.entries()[i];
    const ParamEntry& eb = b.entries()[i];
    if (ea.name != eb.name || ea.tag != eb.tag ||
        !ea.value.same_shape(eb.value)) {
      return false;
    }
  }
  return true;
}

ParamSet zeros_like(const ParamSet& ps) {
  ParamSet out;
  for (const auto& e : ps.entries()) {
    out.add(e.name, e.tag, Tensor::zeros(e.value.shape));
  }
  return out;
}

void axpy_params(ParamSet& y, const ParamSet& x, double a) {
  if (!same_structure(y, x)) {
    throw ContractError("axpy_params: parameter structures differ");
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto& yd = y.entries()[i].value.data;
    const auto& xd = x.entries()[i].value.data;
    for (std::size_t j = 0; j < yd.size(); ++j) yd[j] += a * xd[j];
  }
}

void scale_params(ParamSet& ps, double s) {
  for (auto& e : ps.entries()) {
    for (double& v : e.value.data) v *= s;
  }
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  if (!same_structure(a, b)) {
    throw ContractError("max_abs_diff: parameter structures differ");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ad = a.entries()[i].value.data;
    const auto& bd = b.entries()[i].value.data;
    for (std::size_t j = 0; j < ad.size(); ++j) {
      worst = std::max(worst, std::abs(ad[j] - bd[j]));
    }
  }
  return worst;
}

VarId BoundParams::id(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw ContractError("unbound parameter: " + name);
  return it->second;
}

BoundParams bind_params(Graph& g, const ParamSet& ps,
                        const std::set<ParamTag>& trainable) {
  BoundParams bound;
  for (const auto& e : ps.entries()) {
    const VarId id = trainable.count(e.tag) != 0 ? g.param(e.value)
                                                 : g.constant(e.value);
    bound.ids.emplace(e.name, id);
  }
  return bound;
}

void apply_sgd(ParamSet& ps, const Graph& g, const BoundParams& bound,
               const std::set<ParamTag>& trainable, double lr) {
  for (auto& e : ps.entries()) {
    if (trainable.count(e.tag) == 0) continue;
    const Tensor& grad = g.grad(bound.id(e.name));
    if (grad.data.empty()) {
      throw ContractError("apply_sgd: no gradient for " + e.name);
    }
    for (std::size_t j = 0; j < e.value.data.size(); ++j) {
      e.value.data[j] -= lr * grad.data[j];
    }
    if (!e.value.all_finite()) {
      throw ContractError("apply_sgd: non-finite update for " + e.name);
    }
  }
}

void collect_grads(const Graph& g, const BoundParams& bound,
                   const ParamSet& ps, const std::set<ParamTag>& trainable,
                   ParamSet& accum) {
  for (const auto& e : ps.entries()) {
    if (trainable.count(e.tag) == 0) continue;
    const Tensor& grad = g.grad(bound.id(e.name));
    if (grad.data.empty()) {
      throw ContractError("collect_grads: no gradient for " + e.name);
    }
    auto& dst = accum.at(e.name).data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += grad.data[j];
  }
}

Tensor glorot_uniform(Rng& rng, const std::vector<int>& shape, int fan_in,
                      int fan_out) {
  if (fan_in <= 0 || fan_out <= 0) {
    throw ContractError("glorot_uniform: fan counts must be positive");
  }
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor out = Tensor::zeros(shape);
  for (double& v : out.data) v = rng.uniform(-limit, limit);
  return out;
}

Tensor lstm_bias(int hidden, double forget_bias) {
  Tensor out = Tensor::zeros({1, 4 * hidden});
  for (int j = hidden; j < 2 * hidden; ++j) out.at(0, j) = forget_bias;
  return out;
}

namespace {

constexpr char kMagic[8] = {'F', 'S', 'S', 'L', 'P', 'R', 'M', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw ContractError("parameter blob truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const ParamSet& ps) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto& e : ps.entries()) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.tag));
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (int d : e.value.shape) put_u32(out, static_cast<std::uint32_t>(d));
    const std::size_t base = out.size();
    out.resize(base + e.value.data.size() * sizeof(double));
    std::memcpy(out.data() + base, e.value.data.data(),
                e.value.data.size() * sizeof(double));
  }
  return out;
}

ParamSet deserialize_params(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ContractError("parameter blob: bad magic");
  }
  std::size_t pos = sizeof(kMagic);
  const std::uint32_t count = get_u32(bytes, pos);
  ParamSet ps;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(bytes, pos);
    if (pos + name_len > bytes.size()) throw ContractError("parameter blob truncated");
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
    pos += name_len;
    if (pos >= bytes.size()) throw ContractError("parameter blob truncated");
    const auto tag = static_cast<ParamTag>(bytes[pos++]);
    if (tag != ParamTag::encoder && tag != ParamTag::decoder &&
        tag != ParamTag::classifier) {
      throw ContractError("parameter blob: bad tag");
    }
    const std::uint32_t rank = get_u32(bytes, pos);
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(get_u32(bytes, pos)));
    }
    Tensor value = Tensor::zeros(shape);
    const std::size_t nbytes = value.data.size() * sizeof(double);
    if (pos + nbytes > bytes.size()) throw ContractError("parameter blob truncated");
    std::memcpy(value.data.data(), bytes.data() + pos, nbytes);
    pos += nbytes;
    ps.add(std::move(name), tag, std::move(value));
  }
  return ps;
}

void save_params(const std::filesystem::path& path, const ParamSet& ps) {
  const std::vector<std::uint8_t> bytes = serialize_params(ps);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ContractError("write failed: " + path.string());
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open for read: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

std::string param_checksum(const ParamSet& ps) {
  const std::vector<std::uint8_t> bytes = serialize_params(ps);
  const std::string_view view(reinterpret_cast<const char*>(bytes.data()),
                              bytes.size());
  const std::uint64_t h = fnv1a64(view);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace fssl
