#pragma once

#include "skimo/params.hpp"

namespace skimo {

// Fully connected ELU network: n_hidden layers of width `hidden` plus a
// linear output layer.
struct MlpConfig {
  int in = 0;
  int out = 0;
  int hidden = 128;
  int n_hidden = 5;

  int n_linear() const { return n_hidden + 1; }
};

// A view over weights living in a ParameterSet under `prefix`. The class
// itself is stateless: construction just records names, init() registers the
// leaf tensors, and the forward paths look them up per call so target copies
// and checkpoint round-trips need no re-wiring.
template <class S>
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, MlpConfig cfg) : prefix_(std::move(prefix)), cfg_(cfg) {
    if (cfg_.in <= 0 || cfg_.out <= 0 || cfg_.hidden <= 0 || cfg_.n_hidden < 0)
      throw UsageError("Mlp: bad config for " + prefix_);
  }

  const MlpConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  // Glorot-uniform weights scaled by init_scale, zero biases.
  void init(ParameterSet<S>& ps, Rng& rng, S init_scale = S(1)) const {
    for (int l = 0; l < cfg_.n_linear(); ++l) {
      auto [fi, fo] = layer_dims(l);
      S limit = init_scale * S(std::sqrt(6.0 / double(fi + fo)));
      auto w = Tensor<S>::zeros({fi, fo}, true);
      for (auto& v : w.value()) v = S(rng.uniform(-double(limit), double(limit)));
      ps.add(weight_name(l), w);
      ps.add(bias_name(l), Tensor<S>::zeros({fo}, true));
    }
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    for (int l = 0; l < cfg_.n_linear(); ++l) {
      out.push_back(weight_name(l));
      out.push_back(bias_name(l));
    }
    return out;
  }

  // Tape forward. With frozen=true the weights enter as constants, so the
  // graph carries gradients to the inputs but never to these parameters.
  Tensor<S> forward(const ParameterSet<S>& ps, Tensor<S> x, bool frozen = false) const {
    if (x.rank() != 2 || x.shape()[1] != cfg_.in)
      throw UsageError("Mlp " + prefix_ + ": input shape " + shape_str(x.shape()) +
                       " does not match in=" + std::to_string(cfg_.in));
    for (int l = 0; l < cfg_.n_linear(); ++l) {
      Tensor<S> w = ps.at(weight_name(l));
      Tensor<S> b = ps.at(bias_name(l));
      if (frozen) {
        w = stop_gradient(w);
        b = stop_gradient(b);
      }
      x = add_rowvec(matmul(x, w), b);
      if (l + 1 < cfg_.n_linear()) x = elu(x);
    }
    return x;
  }

  // Tape-free forward over plain matrices; the planner's hot path.
  Mat<S> forward_raw(const ParameterSet<S>& ps, const Mat<S>& x) const {
    if (x.cols != cfg_.in) throw UsageError("Mlp " + prefix_ + ": raw input width mismatch");
    Mat<S> cur = x;
    for (int l = 0; l < cfg_.n_linear(); ++l) {
      auto [fi, fo] = layer_dims(l);
      const auto& w = ps.at(weight_name(l)).value();
      const auto& b = ps.at(bias_name(l)).value();
      Mat<S> next(cur.rows, fo);
      for (int i = 0; i < cur.rows; ++i) {
        const S* xin = cur.row(i);
        S* xout = next.row(i);
        for (int j = 0; j < fo; ++j) xout[j] = b[j];
        for (int k = 0; k < fi; ++k) {
          S xv = xin[k];
          if (xv == S(0)) continue;
          const S* wrow = w.data() + size_t(k) * fo;
          for (int j = 0; j < fo; ++j) xout[j] += xv * wrow[j];
        }
        if (l + 1 < cfg_.n_linear())
          for (int j = 0; j < fo; ++j)
            if (xout[j] < S(0)) xout[j] = S(std::exp(double(xout[j])) - 1.0);
      }
      cur = std::move(next);
    }
    return cur;
  }

  std::string weight_name(int l) const { return prefix_ + ".w" + std::to_string(l); }
  std::string bias_name(int l) const { return prefix_ + ".b" + std::to_string(l); }

 private:
  std::string prefix_;
  MlpConfig cfg_;

  std::pair<int, int> layer_dims(int l) const {
    int fi = l == 0 ? cfg_.in : cfg_.hidden;
    int fo = l == cfg_.n_linear() - 1 ? cfg_.out : cfg_.hidden;
    return {fi, fo};
  }
};

}  // namespace skimo
