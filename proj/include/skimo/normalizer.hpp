#pragma once

#include "skimo/common.hpp"

namespace skimo {

// Running per-feature mean/variance over streamed observations (Welford in
// double precision). Training and inference paths normalize through a frozen
// snapshot so one episode sees self-consistent statistics.
class Normalizer {
 public:
  Normalizer() = default;
  explicit Normalizer(int dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  int dim() const { return int(mean_.size()); }
  double count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }

  void update(const double* x) {
    count_ += 1.0;
    for (size_t i = 0; i < mean_.size(); ++i) {
      double delta = x[i] - mean_[i];
      mean_[i] += delta / count_;
      m2_[i] += delta * (x[i] - mean_[i]);
    }
  }

  template <class It>
  void update(It begin, It end) {
    std::vector<double> row(begin, end);
    if (int(row.size()) != dim()) throw UsageError("Normalizer: dim mismatch in update");
    update(row.data());
  }

  double variance(int i) const { return count_ > 1 ? m2_[i] / count_ : 1.0; }
  double stddev(int i) const { return std::sqrt(variance(i) + 1e-6); }

  // y = (x - mean) / std, identity while no data has been seen.
  void apply(const double* x, double* y) const {
    for (int i = 0; i < dim(); ++i)
      y[i] = count_ > 1 ? (x[i] - mean_[i]) / stddev(i) : x[i];
  }

  template <class S>
  void apply_rows(Mat<S>& m) const {
    if (m.cols != dim()) throw UsageError("Normalizer: dim mismatch in apply_rows");
    std::vector<double> in(dim()), out(dim());
    for (int r = 0; r < m.rows; ++r) {
      for (int i = 0; i < dim(); ++i) in[i] = double(m.at(r, i));
      apply(in.data(), out.data());
      for (int i = 0; i < dim(); ++i) m.at(r, i) = S(out[i]);
    }
  }

  // Flat state vector for checkpoint round-trips: [count, mean..., m2...].
  std::vector<double> serialize() const {
    std::vector<double> out{count_};
    out.insert(out.end(), mean_.begin(), mean_.end());
    out.insert(out.end(), m2_.begin(), m2_.end());
    return out;
  }

  static Normalizer deserialize(const std::vector<double>& v, int dim) {
    if (int(v.size()) != 1 + 2 * dim)
      throw FormatError(FormatError::Kind::DimMismatch, "normalizer state has wrong length");
    Normalizer n(dim);
    n.count_ = v[0];
    std::copy(v.begin() + 1, v.begin() + 1 + dim, n.mean_.begin());
    std::copy(v.begin() + 1 + dim, v.end(), n.m2_.begin());
    return n;
  }

 private:
  double count_ = 0;
  std::vector<double> mean_, m2_;
};

}  // namespace skimo
