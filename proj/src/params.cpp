#include "pointlang/params.hpp"

#include <algorithm>

namespace pointlang {

const Tensor& ParamView::operator[](const std::string& name) const {
  auto it = m.find(name);
  if (it == m.end()) fail("ParamView: unknown parameter '", name, "'");
  return it->second;
}

void ParamStore::add(const std::string& name, Tensor t) {
  if (!t.defined()) fail("ParamStore::add: undefined tensor for '", name, "'");
  if (p_.count(name)) fail("ParamStore::add: duplicate parameter '", name, "'");
  p_.emplace(name, std::move(t));
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = p_.find(name);
  if (it == p_.end()) fail("ParamStore: unknown parameter '", name, "'");
  return it->second;
}

void ParamStore::set(const std::string& name, Tensor t) {
  auto it = p_.find(name);
  if (it == p_.end()) fail("ParamStore::set: unknown parameter '", name, "'");
  if (t.shape() != it->second.shape())
    fail<ShapeError>("ParamStore::set: shape ", shape_str(t.shape()),
                     " != existing ", shape_str(it->second.shape()), " for '",
                     name, "'");
  it->second = std::move(t);
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(p_.size());
  for (const auto& [k, v] : p_) out.push_back(k);
  return out;
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [k, v] : p_) n += v.size();
  return n;
}

void ParamStore::adopt(const ParamStore& other, const std::string& prefix) {
  for (const auto& [k, v] : other.p_) {
    if (k.rfind(prefix, 0) != 0) continue;
    if (p_.count(k))
      set(k, v);
    else
      add(k, v);
  }
}

ParamView ParamStore::watch(Tape& tape,
                            const std::vector<std::string>& frozen_prefixes) const {
  ParamView view;
  for (const auto& [name, t] : p_) {
    bool frozen = false;
    for (const auto& fp : frozen_prefixes)
      if (name.rfind(fp, 0) == 0) {
        frozen = true;
        break;
      }
    view.m.emplace(name, frozen ? t : tape.leaf(t));
  }
  return view;
}

std::map<std::string, std::vector<double>> ParamStore::collect(
    const ParamView& view, const Gradients& grads) const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : view.m)
    if (grads.has(t)) out.emplace(name, grads.wrt(t));
  return out;
}

std::uint64_t ParamStore::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : p_) {
    h = fnv1a64(name.data(), name.size(), h);
    for (int d : t.shape()) h = fnv1a64(&d, sizeof(d), h);
    h = fnv1a64(t.ptr(), size_t(t.size()) * sizeof(double), h);
  }
  return h;
}

}  // namespace pointlang
