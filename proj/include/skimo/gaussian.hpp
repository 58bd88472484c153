#pragma once

#include "skimo/tensor.hpp"

namespace skimo {

// log-std clamp keeping exp() and the KL well conditioned
inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

// KL(q || p) between diagonal Gaussians given as [B,D] mean / log-std pairs,
// summed over dimensions and averaged over the batch. Fused with a
// hand-derived backward: per element, with d = mq - mp and r = lsq - lsp,
//   kl      = -r + (e^{2 lsq} + d^2) e^{-2 lsp} / 2 - 1/2
//   d/dmq   =  d e^{-2 lsp}            d/dmp  = -d/dmq
//   d/dlsq  = -1 + e^{2 r}
//   d/dlsp  =  1 - e^{2 r} - d^2 e^{-2 lsp}
// each scaled by upstream/B.
template <class S>
Tensor<S> kl_diag(const Tensor<S>& mq, const Tensor<S>& lsq, const Tensor<S>& mp,
                  const Tensor<S>& lsp) {
  detail::check_same_shape(mq, lsq, "kl_diag");
  detail::check_same_shape(mq, mp, "kl_diag");
  detail::check_same_shape(mq, lsp, "kl_diag");
  if (mq.rank() != 2) throw UsageError("kl_diag: expected [batch, dim] tensors");
  int64_t b = mq.shape()[0];
  auto out = Tensor<S>::make_op({1}, {mq, lsq, mp, lsp}, [b](typename Tensor<S>::Node& n) {
    auto& pmq = *n.parents[0];
    auto& plsq = *n.parents[1];
    auto& pmp = *n.parents[2];
    auto& plsp = *n.parents[3];
    S g = n.grad[0] / S(b);
    for (auto* p : {&pmq, &plsq, &pmp, &plsp})
      if (p->requires_grad) Tensor<S>::ensure_grad(*p);
    for (size_t i = 0; i < pmq.value.size(); ++i) {
      S d = pmq.value[i] - pmp.value[i];
      S e2r = S(std::exp(2.0 * double(plsq.value[i] - plsp.value[i])));
      S inv_vp = S(std::exp(-2.0 * double(plsp.value[i])));
      if (pmq.requires_grad) pmq.grad[i] += g * d * inv_vp;
      if (pmp.requires_grad) pmp.grad[i] -= g * d * inv_vp;
      if (plsq.requires_grad) plsq.grad[i] += g * (e2r - S(1));
      if (plsp.requires_grad) plsp.grad[i] += g * (S(1) - e2r - d * d * inv_vp);
    }
  });
  const auto &vmq = mq.value(), &vlsq = lsq.value(), &vmp = mp.value(), &vlsp = lsp.value();
  S acc = 0;
  for (size_t i = 0; i < vmq.size(); ++i) {
    S d = vmq[i] - vmp[i];
    S e2q = S(std::exp(2.0 * double(vlsq[i])));
    S inv_vp = S(std::exp(-2.0 * double(vlsp[i])));
    acc += -(vlsq[i] - vlsp[i]) + (e2q + d * d) * inv_vp * S(0.5) - S(0.5);
  }
  out.value()[0] = acc / S(b);
  return out;
}

// KL(q || N(0, I)), the standard-normal special case used by the VAE bottleneck.
template <class S>
Tensor<S> kl_diag_std_normal(const Tensor<S>& mq, const Tensor<S>& lsq) {
  auto zero = Tensor<S>::zeros(mq.shape());
  return kl_diag(mq, lsq, zero, zero);
}

// Diagonal Gaussian over a batch: mean and log-std both [B,D]. Log-std is
// clamped on construction so downstream exp/KL stay finite.
template <class S>
struct DiagGaussian {
  Tensor<S> mean;
  Tensor<S> log_std;

  static DiagGaussian from_raw(const Tensor<S>& mean, const Tensor<S>& log_std_raw) {
    return DiagGaussian{mean, clamp_op(log_std_raw, S(kLogStdMin), S(kLogStdMax))};
  }

  // Splits a [B,2D] head output into mean and clamped log-std halves.
  static DiagGaussian from_packed(const Tensor<S>& packed) {
    if (packed.rank() != 2 || packed.shape()[1] % 2 != 0)
      throw UsageError("DiagGaussian::from_packed: expected [batch, 2*dim]");
    int d = packed.shape()[1] / 2;
    return from_raw(slice_cols(packed, 0, d), slice_cols(packed, d, 2 * d));
  }

  int dim() const { return mean.shape()[1]; }
  int batch() const { return mean.shape()[0]; }

  // Reparameterized draw: mean + exp(log_std) * eps, eps ~ N(0, I). The
  // noise enters as a constant, so gradients flow through mean and log_std.
  Tensor<S> sample(Rng& rng) const {
    auto eps = Tensor<S>::zeros(mean.shape());
    for (auto& v : eps.value()) v = S(rng.normal());
    return mean + exp_op(log_std) * eps;
  }

  Tensor<S> mode() const { return mean; }

  Tensor<S> kl_to(const DiagGaussian& p) const {
    return kl_diag(mean, log_std, p.mean, p.log_std);
  }

  Tensor<S> kl_to_std_normal() const { return kl_diag_std_normal(mean, log_std); }

  DiagGaussian detached() const {
    return DiagGaussian{stop_gradient(mean), stop_gradient(log_std)};
  }
};

}  // namespace skimo
