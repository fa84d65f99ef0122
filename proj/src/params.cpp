// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/params.hpp"

#include <algorithm>
#include <cstring>

#include "icllab/errors.hpp"

namespace icllab {

void ParamSet::add(std::string name, ndiff::Tensor value) {
  if (contains(name)) throw FormatError("duplicate parameter name " + name);
  tensors_.push_back({std::move(name), std::move(value)});
}

const ndiff::Tensor& ParamSet::at(std::string_view name) const {
  auto it = std::find_if(tensors_.begin(), tensors_.end(), [&](const auto& t) { return t.name == name; });
  if (it == tensors_.end()) throw FormatError("no parameter named " + std::string(name));
  return it->value;
}

ndiff::Tensor& ParamSet::at(std::string_view name) {
  return const_cast<ndiff::Tensor&>(static_cast<const ParamSet&>(*this).at(name));
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& t) { return t.name == name; });
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.numel();
  return n;
}

std::uint64_t ParamSet::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : tensors_) {
    feed(t.name.data(), t.name.size());
    for (auto e : t.value.shape()) feed(&e, sizeof e);
    feed(t.value.ptr(), t.value.numel() * sizeof(double));
  }
  return h;
}

bool ParamSet::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(), [](const auto& t) { return t.value.all_finite(); });
}

std::vector<ndiff::Var> ParamSet::bind(ndiff::Graph& g, bool trainable) const {
  std::vector<ndiff::Var> vars;
  vars.reserve(tensors_.size());
  for (const auto& t : tensors_) vars.push_back(trainable ? g.variable(t.value) : g.constant(t.value));
  return vars;
}

}  // namespace icllab
