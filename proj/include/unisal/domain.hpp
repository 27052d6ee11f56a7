#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace unisal {

enum class Modality { Static, Dynamic };

std::string to_string(Modality m);
Modality parse_modality(const std::string& text);

struct Resolution {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

/// One dataset domain. Static domains (images) have a native frame rate of 0.
struct DomainId {
  std::size_t index = 0;
  std::string name;
  Modality modality = Modality::Static;
  std::size_t native_fps = 0;
  Resolution input_resolution;

  bool is_static() const { return modality == Modality::Static; }
  friend bool operator==(const DomainId&, const DomainId&) = default;
};

/// Ordered set of registered domains. Indices are assigned in registration
/// order and double as the slot of each domain's private parameter set.
class DomainRegistry {
 public:
  const DomainId& add(std::string name, Modality modality, std::size_t native_fps,
                      Resolution resolution);

  std::size_t size() const { return domains_.size(); }
  const std::vector<DomainId>& domains() const { return domains_; }
  const DomainId& at(std::size_t index) const;
  const DomainId& by_name(const std::string& name) const;
  bool contains(const DomainId& domain) const;
  /// Throws RegistryError unless `domain` is registered here.
  void require(const DomainId& domain) const;

 private:
  std::vector<DomainId> domains_;
};

/// Maps domains to private parameter slots. With adaptation disabled every
/// domain shares slot 0 and the parameters are tagged as shared.
class DomainScope {
 public:
  DomainScope(std::shared_ptr<const DomainRegistry> registry, bool adaptive);

  /// A scope with a single shared slot that accepts any domain.
  static DomainScope shared();

  std::size_t slots() const;
  std::size_t slot(const DomainId& domain) const;
  /// Parameter-store domain tag of a slot (-1 for shared).
  int tag(std::size_t slot) const;
  bool adaptive() const { return adaptive_; }

 private:
  DomainScope() = default;
  std::shared_ptr<const DomainRegistry> registry_;
  bool adaptive_ = false;
};

}  // namespace unisal
