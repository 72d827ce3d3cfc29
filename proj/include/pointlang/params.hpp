#pragma once

#include <map>
#include <string>
#include <vector>

#include "pointlang/tensor.hpp"

namespace pointlang {

// Tracked copies of parameters for one forward/backward pass. Parameters that
// were frozen are present (forward needs their values) but not tape-tracked,
// so no gradient ever reaches them.
class ParamView {
 public:
  const Tensor& operator[](const std::string& name) const;
  bool has(const std::string& name) const { return m.count(name) != 0; }
  std::map<std::string, Tensor> m;
};

// Named persistent parameters of a model. Iteration order is the sorted name
// order everywhere, which keeps optimizer updates and serialization
// deterministic.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return p_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  void set(const std::string& name, Tensor t);  // same-shape replacement
  std::vector<std::string> names() const;
  std::size_t count() const { return p_.size(); }
  std::int64_t total_elements() const;

  // Copies every parameter whose name starts with `prefix` from `other`.
  void adopt(const ParamStore& other, const std::string& prefix = "");

  // Registers parameters on the tape. Names matching any frozen prefix are
  // included untracked.
  ParamView watch(Tape& tape,
                  const std::vector<std::string>& frozen_prefixes = {}) const;

  // Gradients keyed by parameter name (absent if none reached it).
  std::map<std::string, std::vector<double>> collect(
      const ParamView& view, const Gradients& grads) const;

  // Content hash over names, shapes and raw values (freeze checks, tests).
  std::uint64_t content_hash() const;

  const std::map<std::string, Tensor>& raw() const { return p_; }

 private:
  std::map<std::string, Tensor> p_;
};

}  // namespace pointlang
