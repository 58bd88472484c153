#pragma once

#include <cstdio>
#include <fstream>

#include "skimo/common.hpp"

namespace skimo {

// ---------------------------------------------------------------------------
// Little-endian binary primitives shared by the dataset and checkpoint
// formats. Reads throw Truncated on short input.

namespace bin {

template <class T>
void write_pod(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  if (in.gcount() != std::streamsize(sizeof(T)))
    throw FormatError(FormatError::Kind::Truncated, std::string("unexpected end of file reading ") + what);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void write_f32s(std::ostream& out, const std::vector<float>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
}

inline void read_f32s(std::istream& in, std::vector<float>& v, const char* what) {
  in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
  if (in.gcount() != std::streamsize(v.size() * sizeof(float)))
    throw FormatError(FormatError::Kind::Truncated, std::string("unexpected end of file reading ") + what);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open for reading: " + path);
  return in;
}

}  // namespace bin

// ---------------------------------------------------------------------------
// Offline trajectory data. Reward-free by construction: the format stores
// observations and actions only.

struct Trajectory {
  Mat<float> obs;  // [T, obs_dim]
  Mat<float> act;  // [T-1, act_dim]

  int length() const { return obs.rows; }  // number of observations
};

struct Dataset {
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<Trajectory> trajectories;
  uint64_t layout_hash = 0;  // geometry fingerprint of the generating maze
  uint64_t seed = 0;         // generator seed

  int n_traj() const { return int(trajectories.size()); }

  double mean_length() const {
    if (trajectories.empty()) return 0;
    double s = 0;
    for (const auto& t : trajectories) s += t.length();
    return s / double(trajectories.size());
  }
};

// File layout: "SKMO" | u16 version=1 | u32 obs_dim | u32 act_dim |
// u32 n_traj | per trajectory (u32 T, T*obs_dim f32 observations,
// (T-1)*act_dim f32 actions) | u64 layout hash | u64 seed. All little-endian.
inline constexpr char kDatasetMagic[4] = {'S', 'K', 'M', 'O'};
inline constexpr uint16_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, const std::string& path) {
  auto out = bin::open_out(path);
  out.write(kDatasetMagic, 4);
  bin::write_pod(out, kDatasetVersion);
  bin::write_pod(out, uint32_t(ds.obs_dim));
  bin::write_pod(out, uint32_t(ds.act_dim));
  bin::write_pod(out, uint32_t(ds.trajectories.size()));
  for (const auto& t : ds.trajectories) {
    if (t.obs.cols != ds.obs_dim || t.act.cols != ds.act_dim || t.act.rows != t.obs.rows - 1)
      throw UsageError("save_dataset: trajectory dims inconsistent with dataset header");
    bin::write_pod(out, uint32_t(t.obs.rows));
    bin::write_f32s(out, t.obs.d);
    bin::write_f32s(out, t.act.d);
  }
  bin::write_pod(out, ds.layout_hash);
  bin::write_pod(out, ds.seed);
  if (!out) throw UsageError("write failed: " + path);
}

// expected_obs_dim / expected_act_dim of 0 accept any dimension.
inline Dataset load_dataset(const std::string& path, int expected_obs_dim = 0,
                            int expected_act_dim = 0) {
  auto in = bin::open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw FormatError(FormatError::Kind::BadMagic, "not a dataset file: " + path);
  auto version = bin::read_pod<uint16_t>(in, "version");
  if (version != kDatasetVersion)
    throw FormatError(FormatError::Kind::BadVersion,
                      "unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.obs_dim = int(bin::read_pod<uint32_t>(in, "obs_dim"));
  ds.act_dim = int(bin::read_pod<uint32_t>(in, "act_dim"));
  if (ds.obs_dim <= 0 || ds.act_dim <= 0)
    throw FormatError(FormatError::Kind::Malformed, "dataset dims must be positive");
  if ((expected_obs_dim && ds.obs_dim != expected_obs_dim) ||
      (expected_act_dim && ds.act_dim != expected_act_dim))
    throw FormatError(FormatError::Kind::DimMismatch,
                      "dataset dims " + std::to_string(ds.obs_dim) + "/" +
                          std::to_string(ds.act_dim) + " do not match expected " +
                          std::to_string(expected_obs_dim) + "/" + std::to_string(expected_act_dim));
  auto n_traj = bin::read_pod<uint32_t>(in, "n_traj");
  ds.trajectories.reserve(n_traj);
  for (uint32_t i = 0; i < n_traj; ++i) {
    auto len = bin::read_pod<uint32_t>(in, "trajectory length");
    if (len < 2)
      throw FormatError(FormatError::Kind::Malformed, "trajectory must have at least 2 states");
    Trajectory t;
    t.obs = Mat<float>(int(len), ds.obs_dim);
    t.act = Mat<float>(int(len) - 1, ds.act_dim);
    bin::read_f32s(in, t.obs.d, "observations");
    bin::read_f32s(in, t.act.d, "actions");
    if (!t.obs.all_finite() || !t.act.all_finite())
      throw FormatError(FormatError::Kind::Malformed, "non-finite trajectory payload");
    ds.trajectories.push_back(std::move(t));
  }
  ds.layout_hash = bin::read_pod<uint64_t>(in, "layout hash");
  ds.seed = bin::read_pod<uint64_t>(in, "seed");
  return ds;
}

// Guards against mixing corpora across maze geometries.
inline void check_layout(const Dataset& ds, uint64_t expected_layout_hash) {
  if (ds.layout_hash != expected_layout_hash)
    throw FormatError(FormatError::Kind::HashMismatch,
                      "dataset was generated on a different maze layout");
}

// ---------------------------------------------------------------------------
// Window sampling for training: contiguous (window+1)-state slices that never
// cross trajectory boundaries.

struct WindowBatch {
  int batch = 0;
  int window = 0;  // actions per window; observations are window+1
  int obs_dim = 0, act_dim = 0;
  Mat<float> obs;  // [batch*(window+1), obs_dim]
  Mat<float> act;  // [batch*window, act_dim]
  std::vector<std::pair<int, int>> source;  // (trajectory index, offset) per row

  const float* obs_at(int b, int t) const { return obs.row(b * (window + 1) + t); }
  const float* act_at(int b, int t) const { return act.row(b * window + t); }
};

inline WindowBatch sample_windows(const Dataset& ds, int batch, int window, Rng& rng) {
  if (batch <= 0 || window <= 0) throw UsageError("sample_windows: batch and window must be > 0");
  // Eligible trajectories weighted by their number of valid offsets, so every
  // (trajectory, offset) pair is equally likely.
  std::vector<int64_t> cum;  // cumulative offset counts per trajectory
  int64_t total = 0;
  for (const auto& t : ds.trajectories) {
    int64_t k = int64_t(t.length()) - window - 1 + 1;  // offsets 0 .. T-window-1
    total += std::max<int64_t>(k, 0);
    cum.push_back(total);
  }
  if (total == 0)
    throw UsageError("sample_windows: no trajectory long enough for window " +
                     std::to_string(window));
  WindowBatch wb;
  wb.batch = batch;
  wb.window = window;
  wb.obs_dim = ds.obs_dim;
  wb.act_dim = ds.act_dim;
  wb.obs = Mat<float>(batch * (window + 1), ds.obs_dim);
  wb.act = Mat<float>(batch * window, ds.act_dim);
  for (int b = 0; b < batch; ++b) {
    int64_t u = int64_t(rng.uniform() * double(total));
    if (u >= total) u = total - 1;
    int ti = int(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    int64_t base = ti == 0 ? 0 : cum[ti - 1];
    int off = int(u - base);
    const auto& t = ds.trajectories[ti];
    for (int i = 0; i <= window; ++i)
      std::memcpy(wb.obs.row(b * (window + 1) + i), t.obs.row(off + i),
                  sizeof(float) * ds.obs_dim);
    for (int i = 0; i < window; ++i)
      std::memcpy(wb.act.row(b * window + i), t.act.row(off + i), sizeof(float) * ds.act_dim);
    wb.source.emplace_back(ti, off);
  }
  return wb;
}

}  // namespace skimo
