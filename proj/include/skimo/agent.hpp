#pragma once

#include "skimo/checkpoint.hpp"
#include "skimo/gaussian.hpp"
#include "skimo/mlp.hpp"
#include "skimo/normalizer.hpp"

namespace skimo {

// Architecture of the full skill-model agent. Everything that affects
// checkpoint compatibility lives here and feeds config_hash().
struct AgentConfig {
  int obs_dim = 4;
  int act_dim = 2;
  int latent_dim = 128;   // state embedding width
  int skill_dim = 10;
  int hidden = 128;
  int n_hidden = 5;       // hidden layers per MLP
  int skill_horizon = 10; // H: env steps per skill
  double init_scale = 1.0;
  bool normalize_obs = true;

  uint64_t config_hash() const {
    std::string s = "skill;obs=" + std::to_string(obs_dim) + ";act=" + std::to_string(act_dim) +
                    ";latent=" + std::to_string(latent_dim) +
                    ";skill=" + std::to_string(skill_dim) + ";hidden=" + std::to_string(hidden) +
                    ";layers=" + std::to_string(n_hidden) + ";H=" + std::to_string(skill_horizon) +
                    ";norm=" + std::to_string(int(normalize_obs));
    return fnv1a64(s);
  }
};

// The nine learned components, grouped by parameter-name prefix:
//   psi.enc    state encoder            h = E(s)
//   psi.dyn    skill dynamics           h' = D(h, z)
//   theta.dec  observation decoder      s^ = O(h)
//   theta.q    skill posterior          q(z | (s,a) over H steps)
//   theta.prior skill prior             p(z | h)
//   theta.lo   low-level skill policy   a = pi_lo(s, z)
//   phi.pi     task policy              pi(z | h)
//   phi.r      reward head              r^ = R(h, z)
//   phi.q      value head               v^ = Q(h, z)
// psi and phi additionally keep target copies for bootstrapped regression.
// Skills z live in (-1,1)^skill_dim via tanh; distribution heads emit the
// pre-squash Gaussian, and all KL terms are computed pre-squash.
template <class S>
class Agent {
 public:
  AgentConfig cfg;
  ParameterSet<S> ps;       // online parameters (all groups)
  ParameterSet<S> targets;  // psi.* and phi.* copies, not trainable
  Normalizer norm;

  Agent() = default;

  explicit Agent(AgentConfig c) : cfg(c), norm(c.obs_dim) {
    auto mc = [&](int in, int out) { return MlpConfig{in, out, cfg.hidden, cfg.n_hidden}; };
    enc_ = {"psi.enc", mc(cfg.obs_dim, cfg.latent_dim)};
    dyn_ = {"psi.dyn", mc(cfg.latent_dim + cfg.skill_dim, cfg.latent_dim)};
    dec_ = {"theta.dec", mc(cfg.latent_dim, cfg.obs_dim)};
    q_ = {"theta.q", mc(cfg.skill_horizon * (cfg.obs_dim + cfg.act_dim), 2 * cfg.skill_dim)};
    prior_ = {"theta.prior", mc(cfg.latent_dim, 2 * cfg.skill_dim)};
    lo_ = {"theta.lo", mc(cfg.obs_dim + cfg.skill_dim, cfg.act_dim)};
    pi_ = {"phi.pi", mc(cfg.latent_dim, 2 * cfg.skill_dim)};
    r_ = {"phi.r", mc(cfg.latent_dim + cfg.skill_dim, 1)};
    qv_ = {"phi.q", mc(cfg.latent_dim + cfg.skill_dim, 1)};
  }

  void init(uint64_t seed) {
    ps = {};
    Rng rng(seed);
    for (const Mlp<S>* net : nets()) {
      Rng stream = rng.split(fnv1a64(net->prefix()));
      net->init(ps, stream, S(cfg.init_scale));
    }
    reset_targets();
  }

  // Re-initializes only the phi.* heads (task policy, reward, value) from a
  // fresh seed; psi/theta values and targets are untouched.
  void init_phi(uint64_t seed) {
    for (auto it = ps.params.begin(); it != ps.params.end();) {
      if (it->first.rfind("phi.", 0) == 0)
        it = ps.params.erase(it);
      else
        ++it;
    }
    Rng rng(seed);
    for (const Mlp<S>* net : nets()) {
      if (net->prefix().rfind("phi.", 0) != 0) continue;
      Rng stream = rng.split(fnv1a64(net->prefix()));
      net->init(ps, stream, S(cfg.init_scale));
    }
    reset_target_group("phi.");
  }

  // Fresh copies of psi.* and phi.* (same names) into the target set.
  void reset_targets() {
    targets = {};
    for (const auto& [name, t] : ps.params) {
      if (name.rfind("psi.", 0) != 0 && name.rfind("phi.", 0) != 0) continue;
      targets.add(name, Tensor<S>::from(t.shape(), t.value(), false));
    }
  }

  // Refreshes only the target copies under the given prefix from the current
  // online values; other targets keep their state.
  void reset_target_group(const std::string& prefix) {
    for (auto it = targets.params.begin(); it != targets.params.end();) {
      if (it->first.rfind(prefix, 0) == 0)
        it = targets.params.erase(it);
      else
        ++it;
    }
    for (const auto& [name, t] : ps.params) {
      if (name.rfind(prefix, 0) != 0) continue;
      targets.add(name, Tensor<S>::from(t.shape(), t.value(), false));
    }
  }

  std::vector<std::string> psi_names() const { return ps.names_with_prefix("psi."); }
  std::vector<std::string> theta_names() const { return ps.names_with_prefix("theta."); }
  std::vector<std::string> phi_names() const { return ps.names_with_prefix("phi."); }

  uint64_t psi_hash() const { return ps.value_hash("psi."); }
  uint64_t theta_hash() const { return ps.value_hash("theta."); }
  uint64_t phi_hash() const { return ps.value_hash("phi."); }

  // --- observation plumbing --------------------------------------------

  // Normalized copy of raw observations (rows), using the current
  // normalizer statistics. The result enters graphs as a constant.
  template <class R>
  Mat<S> normalize_rows(const Mat<R>& raw) const {
    Mat<S> out(raw.rows, raw.cols);
    std::vector<double> in(raw.cols), tmp(raw.cols);
    for (int i = 0; i < raw.rows; ++i) {
      for (int j = 0; j < raw.cols; ++j) in[j] = double(raw.at(i, j));
      if (cfg.normalize_obs)
        norm.apply(in.data(), tmp.data());
      else
        tmp = in;
      for (int j = 0; j < raw.cols; ++j) out.at(i, j) = S(tmp[j]);
    }
    return out;
  }

  template <class R>
  Tensor<S> obs_tensor(const Mat<R>& raw) const {
    return Tensor<S>::from_mat(normalize_rows(raw));
  }

  // --- tape-building forwards (training losses) ------------------------

  Tensor<S> encode(const Tensor<S>& s, bool frozen = false) const {
    return enc_.forward(ps, s, frozen);
  }
  Tensor<S> decode(const Tensor<S>& h) const { return dec_.forward(ps, h); }

  DiagGaussian<S> skill_posterior(const Tensor<S>& window_flat) const {
    return DiagGaussian<S>::from_packed(q_.forward(ps, window_flat));
  }

  // Callers pass stop_gradient(h) when the encoder must not learn through
  // the prior path (the pretraining contract).
  DiagGaussian<S> skill_prior(const Tensor<S>& h, bool frozen = false) const {
    return DiagGaussian<S>::from_packed(prior_.forward(ps, h, frozen));
  }

  DiagGaussian<S> task_policy(const Tensor<S>& h, bool frozen = false) const {
    return DiagGaussian<S>::from_packed(pi_.forward(ps, h, frozen));
  }

  Tensor<S> low_policy(const Tensor<S>& s, const Tensor<S>& z, bool frozen = false) const {
    return tanh_op(lo_.forward(ps, concat_cols(s, z), frozen));
  }

  Tensor<S> dynamics(const Tensor<S>& h, const Tensor<S>& z, bool frozen = false) const {
    return dyn_.forward(ps, concat_cols(h, z), frozen);
  }

  Tensor<S> reward(const Tensor<S>& h, const Tensor<S>& z, bool frozen = false) const {
    return r_.forward(ps, concat_cols(h, z), frozen);
  }

  Tensor<S> value(const Tensor<S>& h, const Tensor<S>& z, bool frozen = false) const {
    return qv_.forward(ps, concat_cols(h, z), frozen);
  }

  // Target-network forwards; target tensors are non-trainable, so these
  // contribute no gradients by construction.
  Tensor<S> target_encode(const Tensor<S>& s) const { return enc_.forward(targets, s); }
  Tensor<S> target_dynamics(const Tensor<S>& h, const Tensor<S>& z) const {
    return dyn_.forward(targets, concat_cols(h, z));
  }
  Tensor<S> target_value(const Tensor<S>& h, const Tensor<S>& z) const {
    return qv_.forward(targets, concat_cols(h, z));
  }

  // --- tape-free forwards (planning and rollout hot paths) -------------

  Mat<S> encode_raw(const Mat<S>& s) const { return enc_.forward_raw(ps, s); }
  Mat<S> decode_raw(const Mat<S>& h) const { return dec_.forward_raw(ps, h); }
  Mat<S> dynamics_raw(const Mat<S>& h, const Mat<S>& z) const {
    return dyn_.forward_raw(ps, hcat(h, z));
  }
  Mat<S> reward_raw(const Mat<S>& h, const Mat<S>& z) const {
    return r_.forward_raw(ps, hcat(h, z));
  }
  Mat<S> value_raw(const Mat<S>& h, const Mat<S>& z) const {
    return qv_.forward_raw(ps, hcat(h, z));
  }
  std::pair<Mat<S>, Mat<S>> task_policy_raw(const Mat<S>& h) const {
    return split_packed(pi_.forward_raw(ps, h));
  }
  std::pair<Mat<S>, Mat<S>> prior_raw(const Mat<S>& h) const {
    return split_packed(prior_.forward_raw(ps, h));
  }
  Mat<S> low_policy_raw(const Mat<S>& s, const Mat<S>& z) const {
    Mat<S> a = lo_.forward_raw(ps, hcat(s, z));
    for (auto& v : a.d) v = S(std::tanh(double(v)));
    return a;
  }
  Mat<S> target_encode_raw(const Mat<S>& s) const { return enc_.forward_raw(targets, s); }
  Mat<S> target_value_raw(const Mat<S>& h, const Mat<S>& z) const {
    return qv_.forward_raw(targets, hcat(h, z));
  }

  static Mat<S> hcat(const Mat<S>& a, const Mat<S>& b) {
    if (a.rows != b.rows) throw UsageError("hcat: row mismatch");
    Mat<S> out(a.rows, a.cols + b.cols);
    for (int i = 0; i < a.rows; ++i) {
      std::memcpy(out.row(i), a.row(i), sizeof(S) * a.cols);
      std::memcpy(out.row(i) + a.cols, b.row(i), sizeof(S) * b.cols);
    }
    return out;
  }

  // Splits a packed [B, 2D] head output into mean and clamped log-std.
  static std::pair<Mat<S>, Mat<S>> split_packed(const Mat<S>& packed) {
    int d = packed.cols / 2;
    Mat<S> mean(packed.rows, d), log_std(packed.rows, d);
    for (int i = 0; i < packed.rows; ++i)
      for (int j = 0; j < d; ++j) {
        mean.at(i, j) = packed.at(i, j);
        log_std.at(i, j) = clampv(packed.at(i, j + d), S(kLogStdMin), S(kLogStdMax));
      }
    return {mean, log_std};
  }

  // Task policy starts as an exact copy of the pretrained skill prior
  // (identical architecture over the same latent input).
  void init_task_policy_from_prior() {
    for (int l = 0; l < pi_.config().n_linear(); ++l) {
      ps.at(pi_.weight_name(l)).value() = ps.at(prior_.weight_name(l)).value();
      ps.at(pi_.bias_name(l)).value() = ps.at(prior_.bias_name(l)).value();
    }
  }

  // --- checkpoint I/O ---------------------------------------------------

  void save(const std::string& path) const {
    TensorMap tm;
    auto put = [&tm](const std::string& name, const Shape& shape, const std::vector<S>& v) {
      NamedTensor t;
      t.shape = shape;
      t.data.assign(v.begin(), v.end());
      tm.emplace(name, std::move(t));
    };
    for (const auto& [name, t] : ps.params) put(name, t.shape(), t.value());
    for (const auto& [name, t] : targets.params) put("target." + name, t.shape(), t.value());
    auto ns = norm.serialize();
    NamedTensor nt;
    nt.shape = {int(ns.size())};
    nt.data.assign(ns.begin(), ns.end());
    tm.emplace("norm.state", std::move(nt));
    save_tensor_map(tm, cfg.config_hash(), path);
  }

  // Loads into an agent constructed with the expected architecture; a
  // checkpoint from any other architecture is refused up front.
  void load(const std::string& path) {
    auto ck = load_tensor_map(path);
    if (ck.config_hash != cfg.config_hash())
      throw FormatError(FormatError::Kind::HashMismatch,
                        "checkpoint was written by an incompatible model configuration");
    auto take = [&ck](const std::string& name) -> NamedTensor& {
      auto it = ck.tensors.find(name);
      if (it == ck.tensors.end())
        throw FormatError(FormatError::Kind::Malformed, "checkpoint missing tensor " + name);
      return it->second;
    };
    auto fill = [&](Tensor<S>& dst, const std::string& name) {
      auto& src = take(name);
      if (Shape(src.shape.begin(), src.shape.end()) != dst.shape())
        throw FormatError(FormatError::Kind::DimMismatch,
                          "checkpoint tensor " + name + " has wrong shape");
      auto& v = dst.value();
      for (size_t i = 0; i < v.size(); ++i) v[i] = S(src.data[i]);
    };
    if (ps.params.empty()) init(0);  // materialize shapes before filling
    for (auto& [name, t] : ps.params) fill(t, name);
    for (auto& [name, t] : targets.params) fill(t, "target." + name);
    auto& ns = take("norm.state");
    norm = Normalizer::deserialize(std::vector<double>(ns.data.begin(), ns.data.end()),
                                   cfg.obs_dim);
  }

 private:
  Mlp<S> enc_, dyn_, dec_, q_, prior_, lo_, pi_, r_, qv_;

  std::vector<const Mlp<S>*> nets() const {
    return {&enc_, &dyn_, &dec_, &q_, &prior_, &lo_, &pi_, &r_, &qv_};
  }
};

}  // namespace skimo
