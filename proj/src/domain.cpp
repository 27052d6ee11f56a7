#include "unisal/domain.hpp"

#include "unisal/errors.hpp"

namespace unisal {

std::string to_string(Modality m) { return m == Modality::Static ? "static" : "dynamic"; }

Modality parse_modality(const std::string& text) {
  if (text == "static") return Modality::Static;
  if (text == "dynamic") return Modality::Dynamic;
  throw ConfigError("unknown modality '" + text + "' (expected static or dynamic)");
}

const DomainId& DomainRegistry::add(std::string name, Modality modality, std::size_t native_fps,
                                    Resolution resolution) {
  for (const auto& d : domains_) {
    if (d.name == name) throw RegistryError("domain '" + name + "' already registered");
  }
  if (modality == Modality::Static && native_fps != 0) {
    throw RegistryError("static domain '" + name + "' must have fps 0");
  }
  if (modality == Modality::Dynamic && native_fps == 0) {
    throw RegistryError("dynamic domain '" + name + "' needs a positive fps");
  }
  if (resolution.height == 0 || resolution.width == 0) {
    throw RegistryError("domain '" + name + "' has an empty input resolution");
  }
  domains_.push_back(DomainId{domains_.size(), std::move(name), modality, native_fps, resolution});
  return domains_.back();
}

const DomainId& DomainRegistry::at(std::size_t index) const {
  if (index >= domains_.size()) {
    throw RegistryError("no domain with index " + std::to_string(index));
  }
  return domains_[index];
}

const DomainId& DomainRegistry::by_name(const std::string& name) const {
  for (const auto& d : domains_) {
    if (d.name == name) return d;
  }
  throw RegistryError("unregistered domain '" + name + "'");
}

bool DomainRegistry::contains(const DomainId& domain) const {
  return domain.index < domains_.size() && domains_[domain.index] == domain;
}

void DomainRegistry::require(const DomainId& domain) const {
  if (!contains(domain)) throw RegistryError("unregistered domain '" + domain.name + "'");
}

DomainScope::DomainScope(std::shared_ptr<const DomainRegistry> registry, bool adaptive)
    : registry_(std::move(registry)), adaptive_(adaptive) {
  if (!registry_) throw RegistryError("domain scope needs a registry");
  if (registry_->size() == 0) throw RegistryError("domain registry is empty");
}

DomainScope DomainScope::shared() { return DomainScope(); }

std::size_t DomainScope::slots() const { return adaptive_ ? registry_->size() : 1; }

std::size_t DomainScope::slot(const DomainId& domain) const {
  if (registry_) registry_->require(domain);
  return adaptive_ ? domain.index : 0;
}

int DomainScope::tag(std::size_t slot) const { return adaptive_ ? static_cast<int>(slot) : -1; }

}  // namespace unisal
