#include "unisal/params.hpp"

#include <cmath>

#include "unisal/errors.hpp"
#include "unisal/rng.hpp"

namespace unisal {

Tensor ParameterStore::add(std::string name, int domain, ParamRole role, bool encoder, Tensor init) {
  if (find(name, domain)) {
    throw BuildError("duplicate parameter '" + name + "' for domain tag " + std::to_string(domain));
  }
  init.set_requires_grad(role == ParamRole::Parameter);
  entries_.push_back(ParamEntry{std::move(name), domain, role, encoder, init});
  return init;
}

Tensor ParameterStore::add_parameter(std::string name, int domain, Tensor init, bool encoder) {
  return add(std::move(name), domain, ParamRole::Parameter, encoder, std::move(init));
}

Tensor ParameterStore::add_buffer(std::string name, int domain, Tensor init, bool encoder) {
  return add(std::move(name), domain, ParamRole::Buffer, encoder, std::move(init));
}

const ParamEntry* ParameterStore::find(const std::string& name, int domain) const {
  for (const auto& e : entries_) {
    if (e.domain == domain && e.name == name) return &e;
  }
  return nullptr;
}

std::vector<Tensor> ParameterStore::parameters() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) {
    if (e.role == ParamRole::Parameter) out.push_back(e.value);
  }
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.role == ParamRole::Parameter) n += e.value.numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

std::uint64_t string_key(const std::string& text) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor kaiming_normal(Shape shape, std::size_t fan_in, std::uint64_t seed, const std::string& key) {
  CounterRng rng(seed, string_key(key));
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = std_dev * rng.normal();
  return Tensor::from(std::move(shape), std::move(values));
}

}  // namespace unisal
