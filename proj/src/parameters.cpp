#include "cdssl/parameters.hpp"

#include "cdssl/errors.hpp"

namespace cdssl {

Tensor& ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  entries_.push_back({std::move(name), std::move(value), trainable});
  return entries_.back().value;
}

NamedTensor* ParameterSet::find(std::string_view name) {
  for (auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

const NamedTensor* ParameterSet::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

Tensor& ParameterSet::at(std::string_view name) {
  if (auto* e = find(name)) return e->value;
  throw ValidationError("unknown parameter: " + std::string(name));
}

const Tensor& ParameterSet::at(std::string_view name) const {
  if (const auto* e = find(name)) return e->value;
  throw ValidationError("unknown parameter: " + std::string(name));
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, Tensor(e.value.shape()), e.trainable);
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

}  // namespace cdssl
