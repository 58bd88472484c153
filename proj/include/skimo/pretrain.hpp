// Phase 1: joint training of the skill VAE, skill prior, observation decoder,
// and skill-step latent dynamics from an offline trajectory dataset.
//
// One gradient step per iteration: sample a batch of N*H-step windows, build
//   L = L_vae (action reconstruction + embedding regularization)
//     + L_model (boundary observation reconstruction + latent consistency,
//                back-propagated through the dynamics unroll)
//     + L_prior (KL from the frozen posterior to the state-conditioned prior)
// then take a joint Adam step on [theta, psi] and soft-update the target
// encoder. Skills live in (-1,1)^d via tanh; KL terms act pre-squash.

#pragma once

#include <chrono>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "skimo/agent.hpp"
#include "skimo/dataset.hpp"

namespace skimo {

struct PretrainConfig {
  int skill_horizon = 10;          // H: env steps per skill
  int n_unroll = 3;                // N: skill transitions unrolled for BPTT
  int batch = 512;
  double lr = 1e-3;                // joint model/actor learning rate
  double beta = 1e-4;              // embedding KL regularization
  double lambda_obs = 1.0;         // observation reconstruction weight
  double lambda_latent = 2.0;      // latent consistency weight
  double lambda_bc = 2.0;          // action reconstruction weight
  double lambda_prior = 1.0;       // prior-matching weight
  double rho = 0.5;                // geometric weight on unrolled loss steps
  double tau = 0.01;               // target-network blend per iteration
  int iterations = 20000;
  int minibatches_per_update = 5;  // schedule knob; the offline loop takes one
                                   // minibatch per iteration, so this only
                                   // matters for interleaved trainers
  bool joint_training = true;      // false: skills stop-gradiented out of the
                                   // dynamics loss (VAE-only skill space)
  int log_every = 200;

  void validate() const {
    if (skill_horizon < 1) throw UsageError("pretrain: skill_horizon must be >= 1");
    if (n_unroll < 1) throw UsageError("pretrain: n_unroll must be >= 1");
    if (batch < 1) throw UsageError("pretrain: batch must be >= 1");
    if (iterations < 0) throw UsageError("pretrain: iterations must be >= 0");
    if (beta < 0 || lambda_obs < 0 || lambda_latent < 0 || lambda_bc < 0 || lambda_prior < 0)
      throw UsageError("pretrain: loss weights must be >= 0");
    if (rho < 0 || rho > 1) throw UsageError("pretrain: rho must be in [0, 1]");
    if (tau < 0 || tau > 1) throw UsageError("pretrain: tau must be in [0, 1]");
  }
};

// --- batch views ------------------------------------------------------------

// States s_t across the batch as a [B, obs_dim] matrix (raw, unnormalized).
inline Mat<float> obs_rows(const WindowBatch& wb, int t) {
  if (t < 0 || t > wb.window) throw UsageError("obs_rows: t out of range");
  Mat<float> m(wb.batch, wb.obs_dim);
  for (int b = 0; b < wb.batch; ++b)
    std::copy(wb.obs_at(b, t), wb.obs_at(b, t) + wb.obs_dim, m.row(b));
  return m;
}

inline Mat<float> act_rows(const WindowBatch& wb, int t) {
  if (t < 0 || t >= wb.window) throw UsageError("act_rows: t out of range");
  Mat<float> m(wb.batch, wb.act_dim);
  for (int b = 0; b < wb.batch; ++b)
    std::copy(wb.act_at(b, t), wb.act_at(b, t) + wb.act_dim, m.row(b));
  return m;
}

template <class S>
Tensor<S> act_tensor(const WindowBatch& wb, int t) {
  if (t < 0 || t >= wb.window) throw UsageError("act_tensor: t out of range");
  Mat<S> m(wb.batch, wb.act_dim);
  for (int b = 0; b < wb.batch; ++b) {
    const float* a = wb.act_at(b, t);
    for (int j = 0; j < wb.act_dim; ++j) m.row(b)[j] = S(a[j]);
  }
  return Tensor<S>::from_mat(m);
}

// Reshape a batch of N*H-step windows into a batch of B*N H-step windows, so
// every skill-length chunk of the sampled data feeds the VAE and prior terms.
inline WindowBatch split_chunks(const WindowBatch& wb, int H) {
  if (H < 1 || wb.window % H != 0) throw UsageError("split_chunks: window not divisible by H");
  int n = wb.window / H;
  WindowBatch out;
  out.batch = wb.batch * n;
  out.window = H;
  out.obs_dim = wb.obs_dim;
  out.act_dim = wb.act_dim;
  out.obs = Mat<float>(out.batch * (H + 1), wb.obs_dim);
  out.act = Mat<float>(out.batch * H, wb.act_dim);
  out.source.reserve(size_t(out.batch));
  for (int b = 0; b < wb.batch; ++b) {
    for (int i = 0; i < n; ++i) {
      int ob = b * n + i;
      for (int t = 0; t <= H; ++t)
        std::copy(wb.obs_at(b, i * H + t), wb.obs_at(b, i * H + t) + wb.obs_dim,
                  out.obs.row(ob * (H + 1) + t));
      for (int t = 0; t < H; ++t)
        std::copy(wb.act_at(b, i * H + t), wb.act_at(b, i * H + t) + wb.act_dim,
                  out.act.row(ob * H + t));
      auto src = wb.source[size_t(b)];
      out.source.push_back({src.first, src.second + i * H});
    }
  }
  return out;
}

// Flattened posterior input: [s_t0, a_t0, ..., s_{t0+H-1}, a_{t0+H-1}] per row,
// with states normalized the same way the encoder sees them.
template <class S>
Tensor<S> posterior_input(const Agent<S>& agent, const WindowBatch& wb, int t0, int H) {
  if (t0 < 0 || t0 + H > wb.window) throw UsageError("posterior_input: window out of range");
  int od = wb.obs_dim, ad = wb.act_dim;
  Mat<S> flat(wb.batch, H * (od + ad));
  for (int t = 0; t < H; ++t) {
    Mat<S> so = agent.normalize_rows(obs_rows(wb, t0 + t));
    for (int b = 0; b < wb.batch; ++b) {
      S* dst = flat.row(b) + t * (od + ad);
      std::copy(so.row(b), so.row(b) + od, dst);
      const float* a = wb.act_at(b, t0 + t);
      for (int j = 0; j < ad; ++j) dst[od + j] = S(a[j]);
    }
  }
  return Tensor<S>::from_mat(flat);
}

// --- loss terms -------------------------------------------------------------

template <class S>
struct VaeLossParts {
  Tensor<S> total, bc, kl;
};

// Action reconstruction through a sampled skill plus embedding regularization:
//   (lambda_BC / H) * sum_i ||piL(s_i, z) - a_i||^2 + beta * KL(q || N(0,1)).
// Squared norms are summed over dimensions and averaged over the batch.
template <class S>
VaeLossParts<S> vae_loss(const Agent<S>& agent, const WindowBatch& wb, const PretrainConfig& cfg,
                         Rng& rng) {
  int H = cfg.skill_horizon;
  if (wb.window != H) throw UsageError("vae_loss: window length != skill_horizon");
  auto q = agent.skill_posterior(posterior_input(agent, wb, 0, H));
  auto z = tanh_op(q.sample(rng));
  Tensor<S> bc;
  for (int i = 0; i < H; ++i) {
    auto pred = agent.low_policy(agent.obs_tensor(obs_rows(wb, i)), z);
    auto term = sum_sq_diff(pred, act_tensor<S>(wb, i));
    bc = i == 0 ? term : bc + term;
  }
  bc = mul_scalar(bc, S(cfg.lambda_bc / (double(H) * wb.batch)));
  auto kl = mul_scalar(q.kl_to_std_normal(), S(cfg.beta));
  return {bc + kl, bc, kl};
}

template <class S>
struct ModelLossParts {
  Tensor<S> total, rec, consistency;
  // Per-skill-step audit trail: geometric weight and the unweighted values.
  std::vector<double> step_weight, step_rec, step_consistency;
};

// Boundary observation reconstruction plus latent consistency, unrolled over N
// skill steps with gradients flowing through the dynamics chain. Targets come
// from the frozen encoder copy. Skills enter as tanh(posterior mean); with
// joint_training off they are stop-gradiented so the VAE alone shapes them.
template <class S>
ModelLossParts<S> model_loss(const Agent<S>& agent, const WindowBatch& wb,
                             const PretrainConfig& cfg) {
  int H = cfg.skill_horizon, N = cfg.n_unroll;
  if (wb.window != N * H) throw UsageError("model_loss: window length != n_unroll * skill_horizon");
  ModelLossParts<S> parts;
  S inv_b = S(1.0 / wb.batch);
  Tensor<S> rec_total, cons_total, h;
  double w = 1.0;
  for (int i = 0; i < N; ++i) {
    auto s_i = agent.obs_tensor(obs_rows(wb, i * H));
    auto enc_i = agent.encode(s_i);
    if (i == 0) h = enc_i;
    auto rec_i = mul_scalar(sum_sq_diff(agent.decode(enc_i), s_i), inv_b);
    auto z = tanh_op(agent.skill_posterior(posterior_input(agent, wb, i * H, H)).mean);
    if (!cfg.joint_training) z = stop_gradient(z);
    h = agent.dynamics(h, z);
    auto target = agent.target_encode(agent.obs_tensor(obs_rows(wb, (i + 1) * H)));
    auto cons_i = mul_scalar(sum_sq_diff(h, target), inv_b);
    parts.step_weight.push_back(w);
    parts.step_rec.push_back(double(rec_i.item()));
    parts.step_consistency.push_back(double(cons_i.item()));
    auto rec_w = mul_scalar(rec_i, S(w * cfg.lambda_obs));
    auto cons_w = mul_scalar(cons_i, S(w * cfg.lambda_latent));
    rec_total = i == 0 ? rec_w : rec_total + rec_w;
    cons_total = i == 0 ? cons_w : cons_total + cons_w;
    w *= cfg.rho;
  }
  parts.rec = rec_total;
  parts.consistency = cons_total;
  parts.total = rec_total + cons_total;
  return parts;
}

// KL from the frozen posterior to the prior; gradient reaches only the prior
// head (the embedding it reads is stop-gradiented by skill_prior's contract).
template <class S>
Tensor<S> prior_loss(const Agent<S>& agent, const WindowBatch& wb, const PretrainConfig& cfg) {
  int H = cfg.skill_horizon;
  if (wb.window != H) throw UsageError("prior_loss: window length != skill_horizon");
  auto q = agent.skill_posterior(posterior_input(agent, wb, 0, H)).detached();
  auto h = stop_gradient(agent.encode(agent.obs_tensor(obs_rows(wb, 0))));
  auto p = agent.skill_prior(h);
  return mul_scalar(kl_diag(q.mean, q.log_std, p.mean, p.log_std), S(cfg.lambda_prior));
}

// --- training loop ----------------------------------------------------------

struct PretrainRow {
  int iter = 0;
  double l_total = 0, l_bc = 0, l_kl = 0, l_rec_obs = 0, l_consistency = 0, l_prior = 0;
  double grad_norm = 0, wall_ms = 0;
};

inline void fit_normalizer(Normalizer& norm, const Dataset& ds) {
  norm = Normalizer(ds.obs_dim);
  std::vector<double> row(size_t(ds.obs_dim));
  for (const auto& traj : ds.trajectories)
    for (int t = 0; t < traj.obs.rows; ++t) {
      for (int j = 0; j < ds.obs_dim; ++j) row[size_t(j)] = traj.obs.at(t, j);
      norm.update(row.data());
    }
}

// Runs the offline phase in place on `agent`; returns the metric rows that
// were logged (first iteration, every log_every, and the last).
template <class S>
std::vector<PretrainRow> pretrain(Agent<S>& agent, const Dataset& ds, const PretrainConfig& cfg,
                                  uint64_t seed, const std::string& csv_path = "") {
  cfg.validate();
  if (ds.obs_dim != agent.cfg.obs_dim || ds.act_dim != agent.cfg.act_dim)
    throw UsageError("pretrain: dataset dims do not match agent config");
  if (agent.cfg.skill_horizon != cfg.skill_horizon)
    throw UsageError("pretrain: agent and pretrain skill_horizon disagree");
  if (agent.cfg.normalize_obs) fit_normalizer(agent.norm, ds);
  agent.reset_targets();

  auto names = agent.theta_names();
  auto psi = agent.psi_names();
  names.insert(names.end(), psi.begin(), psi.end());
  Adam<S> opt(names, S(cfg.lr));

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path, std::ios::trunc);
    if (!csv) throw UsageError("pretrain: cannot open csv path " + csv_path);
    csv << "iter,l_total,l_bc,l_kl,l_rec_obs,l_consistency,l_prior,grad_norm,wall_ms\n";
  }

  std::vector<PretrainRow> rows;
  Rng root(seed);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    auto t0 = std::chrono::steady_clock::now();
    Rng it_rng = root.split(uint64_t(iter));
    auto wb = sample_windows(ds, cfg.batch, cfg.n_unroll * cfg.skill_horizon, it_rng);
    auto chunks = split_chunks(wb, cfg.skill_horizon);

    agent.ps.zero_grads();
    auto vae = vae_loss(agent, chunks, cfg, it_rng);
    auto model = model_loss(agent, wb, cfg);
    auto prior = prior_loss(agent, chunks, cfg);
    auto total = vae.total + model.total + prior;

    PretrainRow row;
    row.iter = iter;
    row.l_bc = double(vae.bc.item());
    row.l_kl = double(vae.kl.item());
    row.l_rec_obs = double(model.rec.item());
    row.l_consistency = double(model.consistency.item());
    row.l_prior = double(prior.item());
    row.l_total = double(total.item());
    if (!std::isfinite(row.l_total)) {
      std::ostringstream oss;
      oss << "pretrain: non-finite loss at iter " << iter << " (bc=" << row.l_bc
          << " kl=" << row.l_kl << " rec=" << row.l_rec_obs << " cons=" << row.l_consistency
          << " prior=" << row.l_prior << ")";
      throw NumericError(oss.str());
    }

    total.backward();
    row.grad_norm = agent.ps.grad_norm(names);
    opt.step(agent.ps);
    soft_update(agent.ps, agent.targets, agent.targets.names_with_prefix("psi."), S(cfg.tau));

    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations) {
      rows.push_back(row);
      if (csv.is_open()) {
        std::ostringstream line;
        line.precision(9);
        line << row.iter << ',' << row.l_total << ',' << row.l_bc << ',' << row.l_kl << ','
             << row.l_rec_obs << ',' << row.l_consistency << ',' << row.l_prior << ','
             << row.grad_norm << ',' << row.wall_ms;
        csv << line.str() << '\n';
        csv.flush();
      }
    }
  }
  return rows;
}

// --- held-out diagnostics (no gradients, raw forwards) ----------------------

// Mean per-element squared error between decoded and actual normalized
// observations over sampled states.
template <class S>
double reconstruction_mse(const Agent<S>& agent, const Dataset& ds, int n_samples, uint64_t seed) {
  Rng rng(seed);
  auto wb = sample_windows(ds, n_samples, 1, rng);
  Mat<S> s = agent.normalize_rows(obs_rows(wb, 0));
  Mat<S> out = agent.decode_raw(agent.encode_raw(s));
  double err = 0;
  for (size_t i = 0; i < s.d.size(); ++i) {
    double d = double(out.d[i]) - double(s.d[i]);
    err += d * d;
  }
  return err / double(s.d.size());
}

// Per-element variance of normalized observations (the trivial-predictor
// baseline reconstruction_mse is judged against).
template <class S>
double normalized_obs_variance(const Agent<S>& agent, const Dataset& ds, int n_samples,
                               uint64_t seed) {
  Rng rng(seed);
  auto wb = sample_windows(ds, n_samples, 1, rng);
  Mat<S> s = agent.normalize_rows(obs_rows(wb, 0));
  double mean = 0;
  for (S v : s.d) mean += double(v);
  mean /= double(s.d.size());
  double var = 0;
  for (S v : s.d) var += (double(v) - mean) * (double(v) - mean);
  return var / double(s.d.size());
}

// Mean per-element N-step latent consistency error on freshly sampled windows,
// using the online encoder for targets.
template <class S>
double heldout_consistency(const Agent<S>& agent, const Dataset& ds, const PretrainConfig& cfg,
                           int n_windows, uint64_t seed) {
  Rng rng(seed);
  auto wb = sample_windows(ds, n_windows, cfg.n_unroll * cfg.skill_horizon, rng);
  NoGradGuard guard;
  Mat<S> h = agent.encode_raw(agent.normalize_rows(obs_rows(wb, 0)));
  double err = 0;
  size_t count = 0;
  for (int i = 0; i < cfg.n_unroll; ++i) {
    auto q = agent.skill_posterior(posterior_input(agent, wb, i * cfg.skill_horizon,
                                                   cfg.skill_horizon));
    auto z = tanh_op(q.mean).to_mat();
    h = agent.dynamics_raw(h, z);
    Mat<S> target =
        agent.encode_raw(agent.normalize_rows(obs_rows(wb, (i + 1) * cfg.skill_horizon)));
    for (size_t j = 0; j < h.d.size(); ++j) {
      double d = double(h.d[j]) - double(target.d[j]);
      err += d * d;
      ++count;
    }
  }
  return err / double(count);
}

}  // namespace skimo
