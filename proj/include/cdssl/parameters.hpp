#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cdssl/tensor.hpp"

namespace cdssl {

struct NamedTensor {
  std::string name;
  Tensor value;
  /// False for running statistics and other buffers the optimizer never touches.
  bool trainable = true;
};

/// Ordered collection of named arrays. Order is insertion order and is the
/// canonical order used for checkpoints and optimizer iteration.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value, bool trainable = true);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  NamedTensor& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }

  NamedTensor* find(std::string_view name);
  const NamedTensor* find(std::string_view name) const;
  /// Throws ValidationError when the name is unknown.
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::vector<std::string> names() const;
  /// Same names and shapes, all values zero.
  ParameterSet zeros_like() const;
  std::size_t scalar_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace cdssl
