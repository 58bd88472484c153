// Single-step dynamics baseline: encoder, decoder, and an env-step latent
// transition d(h, a) trained on the same offline corpus as the skill model.
// Used to compare long-horizon open-loop prediction against the skill-step
// dynamics; it shares the latent width for a fair comparison but nothing
// else, and its checkpoints are deliberately incompatible with the skill
// pipeline's.

#pragma once

#include <chrono>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "skimo/checkpoint.hpp"
#include "skimo/dataset.hpp"
#include "skimo/mlp.hpp"
#include "skimo/normalizer.hpp"

namespace skimo {

struct FlatConfig {
  int obs_dim = 4;
  int act_dim = 2;
  int latent_dim = 128;  // keep equal to the skill model's for comparisons
  int hidden = 128;
  int n_hidden = 5;
  double init_scale = 1.0;
  bool normalize_obs = true;

  uint64_t config_hash() const {
    std::string s = "flat;obs=" + std::to_string(obs_dim) + ";act=" + std::to_string(act_dim) +
                    ";latent=" + std::to_string(latent_dim) + ";hidden=" + std::to_string(hidden) +
                    ";layers=" + std::to_string(n_hidden) +
                    ";norm=" + std::to_string(int(normalize_obs));
    return fnv1a64(s);
  }
};

template <class S>
class FlatModel {
 public:
  FlatConfig cfg;
  ParameterSet<S> ps;
  ParameterSet<S> targets;  // encoder copy for consistency targets
  Normalizer norm;

  FlatModel() = default;

  explicit FlatModel(FlatConfig c) : cfg(c), norm(c.obs_dim) {
    auto mc = [&](int in, int out) { return MlpConfig{in, out, cfg.hidden, cfg.n_hidden}; };
    enc_ = {"flat.enc", mc(cfg.obs_dim, cfg.latent_dim)};
    dyn_ = {"flat.dyn", mc(cfg.latent_dim + cfg.act_dim, cfg.latent_dim)};
    dec_ = {"flat.dec", mc(cfg.latent_dim, cfg.obs_dim)};
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

  void reset_targets() {
    targets = {};
    for (const auto& [name, t] : ps.params)
      if (name.rfind("flat.enc.", 0) == 0)
        targets.add(name, Tensor<S>::from(t.shape(), t.value(), false));
  }

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

  Tensor<S> encode(const Tensor<S>& s) const { return enc_.forward(ps, s); }
  Tensor<S> decode(const Tensor<S>& h) const { return dec_.forward(ps, h); }
  Tensor<S> dynamics(const Tensor<S>& h, const Tensor<S>& a) const {
    return dyn_.forward(ps, concat_cols(h, a));
  }
  Tensor<S> target_encode(const Tensor<S>& s) const { return enc_.forward(targets, s); }

  Mat<S> encode_raw(const Mat<S>& s) const { return enc_.forward_raw(ps, s); }
  Mat<S> decode_raw(const Mat<S>& h) const { return dec_.forward_raw(ps, h); }
  Mat<S> dynamics_raw(const Mat<S>& h, const Mat<S>& a) const {
    Mat<S> in(h.rows, h.cols + a.cols);
    for (int i = 0; i < h.rows; ++i) {
      std::memcpy(in.row(i), h.row(i), sizeof(S) * h.cols);
      std::memcpy(in.row(i) + h.cols, a.row(i), sizeof(S) * a.cols);
    }
    return dyn_.forward_raw(ps, in);
  }

  std::vector<std::string> param_names() const { return ps.names_with_prefix("flat."); }
  uint64_t value_hash() const { return ps.value_hash("flat."); }

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
    if (ps.params.empty()) init(0);
    for (auto& [name, t] : ps.params) fill(t, name);
    for (auto& [name, t] : targets.params) fill(t, "target." + name);
    auto& ns = take("norm.state");
    norm = Normalizer::deserialize(std::vector<double>(ns.data.begin(), ns.data.end()),
                                   cfg.obs_dim);
  }

 private:
  Mlp<S> enc_, dyn_, dec_;

  std::vector<const Mlp<S>*> nets() const { return {&enc_, &dyn_, &dec_}; }
};

// --- training ---------------------------------------------------------------

struct FlatTrainConfig {
  int n_unroll = 30;  // env steps of BPTT; match the skill model's N * H span
  int batch = 512;
  double lr = 1e-3;
  double lambda_obs = 1.0;
  double lambda_latent = 2.0;
  double rho = 0.9;  // per-env-step unroll weight
  double tau = 0.01;
  int iterations = 2000;
  int log_every = 200;

  void validate() const {
    if (n_unroll < 1 || batch < 1 || iterations < 0) throw UsageError("flat: bad loop sizes");
    if (lr < 0 || lambda_obs < 0 || lambda_latent < 0) throw UsageError("flat: negative weights");
    if (rho < 0 || rho > 1) throw UsageError("flat: rho must be in [0, 1]");
    if (tau < 0 || tau > 1) throw UsageError("flat: tau must be in [0, 1]");
    if (log_every < 1) throw UsageError("flat: log_every must be >= 1");
  }
};

// Observation reconstruction at every visited state plus one-step latent
// consistency to the target encoder, back-propagated through the dynamics
// chain with geometric step weights — the skill model's prediction loss with
// a one-step horizon and raw actions in place of skills.
template <class S>
struct FlatParts {
  Tensor<S> total, rec, consistency;
};

template <class S>
FlatParts<S> flat_model_loss(const FlatModel<S>& model, const WindowBatch& wb,
                             const FlatTrainConfig& cfg) {
  if (wb.obs_dim != model.cfg.obs_dim || wb.act_dim != model.cfg.act_dim)
    throw UsageError("flat_model_loss: batch dims do not match model");
  int B = wb.batch, N = wb.window;
  S invB = S(1.0 / double(B));

  auto obs_at_step = [&](int t) {
    Mat<float> m(B, wb.obs_dim);
    for (int b = 0; b < B; ++b)
      std::memcpy(m.row(b), wb.obs_at(b, t), sizeof(float) * size_t(wb.obs_dim));
    return m;
  };
  auto act_at_step = [&](int t) {
    Mat<S> m(B, wb.act_dim);
    for (int b = 0; b < B; ++b) {
      const float* a = wb.act_at(b, t);
      for (int j = 0; j < wb.act_dim; ++j) m.at(b, j) = S(a[j]);
    }
    return m;
  };

  Tensor<S> rec_total = Tensor<S>::scalar(S(0));
  Tensor<S> cons_total = Tensor<S>::scalar(S(0));
  Tensor<S> h;
  double w = 1.0;
  for (int i = 0; i < N; ++i) {
    Tensor<S> s_i = model.obs_tensor(obs_at_step(i));
    Tensor<S> enc_i = model.encode(s_i);
    if (i == 0) h = enc_i;
    Tensor<S> rec = mul_scalar(sum_sq_diff(model.decode(enc_i), s_i), invB * S(w));
    rec_total = add(rec_total, rec);

    Tensor<S> a = Tensor<S>::from_mat(act_at_step(i));
    h = model.dynamics(h, a);
    Tensor<S> target = model.target_encode(model.obs_tensor(obs_at_step(i + 1)));
    Tensor<S> cons = mul_scalar(sum_sq_diff(h, target), invB * S(w));
    cons_total = add(cons_total, cons);
    w *= cfg.rho;
  }
  FlatParts<S> parts;
  parts.rec = rec_total;
  parts.consistency = cons_total;
  parts.total = add(mul_scalar(rec_total, S(cfg.lambda_obs)),
                    mul_scalar(cons_total, S(cfg.lambda_latent)));
  return parts;
}

struct FlatRow {
  int iter = 0;
  double l_total = 0, l_rec = 0, l_consistency = 0, grad_norm = 0, wall_ms = 0;
};

template <class S>
std::vector<FlatRow> train_flat_model(FlatModel<S>& model, const Dataset& ds,
                                      const FlatTrainConfig& cfg, uint64_t seed,
                                      const std::string& csv_path = "") {
  cfg.validate();
  if (ds.obs_dim != model.cfg.obs_dim || ds.act_dim != model.cfg.act_dim)
    throw UsageError("train_flat_model: dataset dims do not match model config");
  if (model.cfg.normalize_obs) {
    model.norm = Normalizer(model.cfg.obs_dim);
    for (const auto& traj : ds.trajectories)
      for (int i = 0; i < traj.obs.rows; ++i) {
        std::vector<double> row(size_t(ds.obs_dim));
        for (int j = 0; j < ds.obs_dim; ++j) row[size_t(j)] = double(traj.obs.at(i, j));
        model.norm.update(row.data());
      }
  }
  model.reset_targets();

  auto names = model.param_names();
  Adam<S> opt(names, S(cfg.lr));

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path, std::ios::trunc);
    if (!csv) throw UsageError("train_flat_model: cannot open csv path " + csv_path);
    csv << "iter,l_total,l_rec,l_consistency,grad_norm,wall_ms\n";
  }

  std::vector<FlatRow> rows;
  Rng root(seed);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    auto t0 = std::chrono::steady_clock::now();
    Rng it_rng = root.split(uint64_t(iter));
    auto wb = sample_windows(ds, cfg.batch, cfg.n_unroll, it_rng);

    model.ps.zero_grads();
    auto parts = flat_model_loss(model, wb, cfg);

    FlatRow row;
    row.iter = iter;
    row.l_rec = double(parts.rec.item());
    row.l_consistency = double(parts.consistency.item());
    row.l_total = double(parts.total.item());
    if (!std::isfinite(row.l_total)) {
      std::ostringstream oss;
      oss << "train_flat_model: non-finite loss at iter " << iter << " (rec=" << row.l_rec
          << " cons=" << row.l_consistency << ")";
      throw NumericError(oss.str());
    }

    parts.total.backward();
    row.grad_norm = model.ps.grad_norm(names);
    opt.step(model.ps);
    soft_update(model.ps, model.targets, model.targets.names_with_prefix("flat.enc."), S(cfg.tau));

    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations) {
      rows.push_back(row);
      if (csv.is_open()) {
        std::ostringstream line;
        line.precision(9);
        line << row.iter << ',' << row.l_total << ',' << row.l_rec << ',' << row.l_consistency
             << ',' << row.grad_norm << ',' << row.wall_ms;
        csv << line.str() << '\n';
        csv.flush();
      }
    }
  }
  return rows;
}

// Mean squared one-step prediction error in normalized observation space,
// versus predicting no change at all.
template <class S>
std::pair<double, double> flat_one_step_errors(const FlatModel<S>& model, const Dataset& ds,
                                               int n_samples, uint64_t seed) {
  Rng rng(seed);
  auto wb = sample_windows(ds, n_samples, 1, rng);
  Mat<float> s0(n_samples, wb.obs_dim), s1(n_samples, wb.obs_dim);
  Mat<S> a(n_samples, wb.act_dim);
  for (int b = 0; b < n_samples; ++b) {
    std::memcpy(s0.row(b), wb.obs_at(b, 0), sizeof(float) * size_t(wb.obs_dim));
    std::memcpy(s1.row(b), wb.obs_at(b, 1), sizeof(float) * size_t(wb.obs_dim));
    for (int j = 0; j < wb.act_dim; ++j) a.at(b, j) = S(wb.act_at(b, 0)[j]);
  }
  Mat<S> n0 = model.normalize_rows(s0), n1 = model.normalize_rows(s1);
  Mat<S> pred = model.decode_raw(model.dynamics_raw(model.encode_raw(n0), a));
  double model_err = 0, identity_err = 0;
  for (size_t i = 0; i < n1.d.size(); ++i) {
    double dm = double(pred.d[i]) - double(n1.d[i]);
    double di = double(n0.d[i]) - double(n1.d[i]);
    model_err += dm * dm;
    identity_err += di * di;
  }
  return {model_err / double(n1.d.size()), identity_err / double(n1.d.size())};
}

}  // namespace skimo
