#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "unisal/tensor.hpp"

namespace unisal {

inline constexpr int kSharedTag = -1;

enum class ParamRole { Parameter, Buffer };

/// One named tensor owned by a model. `domain` is the private-set tag
/// (kSharedTag for shared tensors); buffers hold running statistics and are
/// never optimized.
struct ParamEntry {
  std::string name;
  int domain = kSharedTag;
  ParamRole role = ParamRole::Parameter;
  bool encoder = false;
  Tensor value;
};

class ParameterStore {
 public:
  Tensor add_parameter(std::string name, int domain, Tensor init, bool encoder = false);
  Tensor add_buffer(std::string name, int domain, Tensor init, bool encoder = false);

  const std::deque<ParamEntry>& entries() const { return entries_; }
  std::deque<ParamEntry>& entries() { return entries_; }

  const ParamEntry* find(const std::string& name, int domain) const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  Tensor add(std::string name, int domain, ParamRole role, bool encoder, Tensor init);
  std::deque<ParamEntry> entries_;
};

/// Kaiming-style normal initialization, std = sqrt(2 / fan_in), drawn from a
/// stream keyed by the parameter name so the result does not depend on
/// construction order.
Tensor kaiming_normal(Shape shape, std::size_t fan_in, std::uint64_t seed, const std::string& key);

std::uint64_t string_key(const std::string& text);

}  // namespace unisal
