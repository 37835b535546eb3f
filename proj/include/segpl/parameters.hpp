#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "segpl/tensor.hpp"

namespace segpl {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered collection of named arrays. Iteration order is insertion order,
/// which fixes checkpoint layout and optimizer traversal.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  std::size_t scalar_count() const;

  ParameterSet& operator+=(const ParameterSet& other);
  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<NamedTensor> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace segpl
