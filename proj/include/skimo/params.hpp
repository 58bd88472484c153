#pragma once

#include <map>
#include <string>

#include "skimo/tensor.hpp"

namespace skimo {

// Named leaf tensors, ordered by name. The map is the single source of truth
// for learnable state: optimizers, target copies, checkpoints, and hashes all
// walk it by name so every consumer sees the same deterministic order.
template <class S>
struct ParameterSet {
  std::map<std::string, Tensor<S>> params;

  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (params.count(name)) throw UsageError("parameter already registered: " + name);
    return params.emplace(name, std::move(t)).first->second;
  }

  Tensor<S>& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  const Tensor<S>& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return params.count(name) != 0; }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params)
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
  }

  void zero_grads() {
    for (auto& [k, v] : params) v.zero_grad();
  }

  int64_t numel() const {
    int64_t n = 0;
    for (const auto& [k, v] : params) n += v.numel();
    return n;
  }

  // Hash of parameter values (names + raw bytes, in map order). Two sets
  // compare equal iff they have the same names, shapes, and bit patterns.
  uint64_t value_hash(const std::string& prefix = "") const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : params) {
      if (!prefix.empty() && k.rfind(prefix, 0) != 0) continue;
      h = fnv1a64(k.data(), k.size(), h);
      h = fnv1a64(v.value().data(), v.value().size() * sizeof(S), h);
    }
    return h;
  }

  // L2 norm over the gradients of the named parameters.
  double grad_norm(const std::vector<std::string>& names) const {
    double acc = 0;
    for (const auto& name : names)
      for (S g : at(name).grad()) acc += double(g) * double(g);
    return std::sqrt(acc);
  }
};

// Copies values from `src` into same-named parameters of `dst` (which must
// all exist with matching shapes). Used to sync target networks.
template <class S>
void copy_values(const ParameterSet<S>& src, ParameterSet<S>& dst,
                 const std::vector<std::string>& names) {
  for (const auto& name : names) {
    const auto& s = src.at(name);
    auto& d = dst.at(name);
    if (s.shape() != d.shape()) throw UsageError("copy_values: shape mismatch for " + name);
    d.value() = s.value();
  }
}

// Polyak averaging: dst <- tau * src + (1 - tau) * dst.
template <class S>
void soft_update(const ParameterSet<S>& src, ParameterSet<S>& dst,
                 const std::vector<std::string>& names, S tau) {
  for (const auto& name : names) {
    const auto& sv = src.at(name).value();
    auto& dv = dst.at(name).value();
    if (sv.size() != dv.size()) throw UsageError("soft_update: shape mismatch for " + name);
    for (size_t i = 0; i < dv.size(); ++i) dv[i] = tau * sv[i] + (S(1) - tau) * dv[i];
  }
}

// Adam over a fixed subset of a ParameterSet, with per-name first/second
// moment state. step() requires that every managed parameter carries a
// gradient from the current backward pass.
template <class S>
class Adam {
 public:
  Adam(std::vector<std::string> names, S lr, S beta1 = S(0.9), S beta2 = S(0.999),
       S eps = S(1e-8))
      : names_(std::move(names)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  const std::vector<std::string>& names() const { return names_; }
  S lr() const { return lr_; }

  void step(ParameterSet<S>& ps) {
    ++t_;
    S bc1 = S(1) - S(std::pow(double(beta1_), double(t_)));
    S bc2 = S(1) - S(std::pow(double(beta2_), double(t_)));
    for (const auto& name : names_) {
      auto& p = ps.at(name);
      if (!p.requires_grad()) throw UsageError("Adam: parameter not trainable: " + name);
      if (p.node()->grad.empty())
        throw UsageError("Adam: no gradient accumulated for " + name +
                         " (backward not run, or parameter unused by the loss)");
      const auto& g = p.grad();
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(g.size(), S(0));
        v.assign(g.size(), S(0));
      }
      auto& val = p.value();
      for (size_t i = 0; i < g.size(); ++i) {
        m[i] = beta1_ * m[i] + (S(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (S(1) - beta2_) * g[i] * g[i];
        S mhat = m[i] / bc1;
        S vhat = v[i] / bc2;
        val[i] -= lr_ * mhat / (S(std::sqrt(double(vhat))) + eps_);
      }
      if (!p.all_finite()) throw NumericError("Adam produced non-finite values in " + name);
    }
  }

 private:
  std::vector<std::string> names_;
  S lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, std::vector<S>> m_, v_;
};

}  // namespace skimo
