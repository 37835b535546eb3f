#include "segpl/parameters.hpp"

#include "segpl/error.hpp"

namespace segpl {

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.back().value;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw MismatchError("unknown parameter: " + name);
  return entries_[it->second].value;
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw MismatchError("unknown parameter: " + name);
  return entries_[it->second].value;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, Tensor::zeros_like(e.value));
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParameterSet& ParameterSet::operator+=(const ParameterSet& other) {
  for (const auto& e : other.entries_) at(e.name) += e.value;
  return *this;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) {
      return false;
    }
  }
  return true;
}

}  // namespace segpl
