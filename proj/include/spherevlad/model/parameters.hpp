#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "spherevlad/common/error.hpp"

namespace spherevlad::model {

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)), data(element_count(shape), fill) {}

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t size() const { return data.size(); }
  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }
};

/// Ordered, named tensors. Trainable weights, their gradients and Adam moments
/// all share one layout so they can be walked in lockstep.
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(const std::string& name, std::vector<std::size_t> shape, T fill = T(0)) {
    if (contains(name)) throw Error(ErrorCode::ShapeMismatch, "duplicate parameter " + name);
    entries_.emplace_back(name, Tensor<T>(std::move(shape), fill));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
  }

  Tensor<T>& at(const std::string& name) {
    for (auto& e : entries_)
      if (e.first == name) return e.second;
    throw Error(ErrorCode::ShapeMismatch, "no parameter named " + name);
  }
  const Tensor<T>& at(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return e.second;
    throw Error(ErrorCode::ShapeMismatch, "no parameter named " + name);
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  /// Same names and shapes, zero-filled.
  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& [name, t] : entries_) out.add(name, t.shape);
    return out;
  }

  void fill(T value) {
    for (auto& e : entries_) std::fill(e.second.data.begin(), e.second.data.end(), value);
  }

  void accumulate(const ParameterSet& other) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& dst = entries_[i].second.data;
      const auto& src = other.entries_[i].second.data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : entries_) {
      auto& dst = out.add(name, t.shape);
      std::transform(t.data.begin(), t.data.end(), dst.data.begin(), [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

}  // namespace spherevlad::model
