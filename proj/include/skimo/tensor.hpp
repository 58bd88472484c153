#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <unordered_set>

#include "skimo/common.hpp"

namespace skimo {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) {
    if (e < 0) throw UsageError("negative extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

namespace detail {
inline std::atomic<uint64_t> tensor_id_counter{0};
inline thread_local int no_grad_depth = 0;
}  // namespace detail

// While alive, newly created tensors record no tape; used on planning and
// target-computation paths.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// Dense real-valued array with reverse-mode gradient support.
//
// A Tensor is a shared handle to a node in an implicit tape. Ops create new
// nodes whose `backprop` closures accumulate into parent gradients. Values
// are immutable after creation except for leaf parameters, which the
// optimizer updates in place between tape builds.
template <class S>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads grad, writes parents' grads
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t = raw(std::move(shape));
    t.n_->requires_grad = requires_grad && grad_enabled();
    return t;
  }

  static Tensor full(Shape shape, S v) {
    Tensor t = raw(std::move(shape));
    std::fill(t.n_->value.begin(), t.n_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (int64_t(data.size()) != shape_numel(shape))
      throw UsageError("Tensor::from: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad && grad_enabled();
    t.n_->id = detail::tensor_id_counter.fetch_add(1, std::memory_order_relaxed);
    return t;
  }

  static Tensor scalar(S v) { return from({1}, {v}); }

  static Tensor from_mat(const Mat<S>& m, bool requires_grad = false) {
    return from({m.rows, m.cols}, m.d, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return int(n_->shape.size()); }
  int rows() const { return n_->shape.size() == 2 ? n_->shape[0] : (throw UsageError("rows: rank != 2"), 0); }
  int cols() const { return n_->shape.size() == 2 ? n_->shape[1] : (throw UsageError("cols: rank != 2"), 0); }
  int64_t numel() const { return int64_t(n_->value.size()); }

  std::vector<S>& value() { return n_->value; }
  const std::vector<S>& value() const { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }

  // Gradient accumulated by the last backward(); zeros if never touched.
  const std::vector<S>& grad() const {
    ensure_grad(*n_);
    return n_->grad;
  }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  S item() const {
    if (numel() != 1) throw UsageError("item: tensor is not a scalar");
    return n_->value[0];
  }

  bool all_finite() const {
    for (S v : n_->value)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  Mat<S> to_mat() const {
    if (rank() != 2) throw UsageError("to_mat: rank != 2");
    return Mat<S>(n_->shape[0], n_->shape[1], n_->value);
  }

  // Reverse pass from this scalar. Gradients accumulate into every
  // requires-grad node reachable through the tape.
  void backward() {
    if (numel() != 1) throw UsageError("backward: root must be a scalar");
    if (!n_->requires_grad) return;
    // Creation ids give a valid topological order: parents precede children.
    std::vector<Node*> order;
    collect(n_.get(), order);
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    ensure_grad(*n_);
    n_->grad[0] += S(1);
    for (Node* nd : order)
      if (nd->backprop) nd->backprop(*nd);
  }

  std::shared_ptr<Node> node() const { return n_; }

  static void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
  }

  // Builds an op result. `parents` keep the graph alive; `bp` is attached
  // only when some parent needs gradients and the tape is enabled.
  static Tensor make_op(Shape shape, std::vector<Tensor> parents, std::function<void(Node&)> bp) {
    Tensor t = raw(std::move(shape));
    bool need = false;
    if (grad_enabled())
      for (const Tensor& p : parents) need = need || p.n_->requires_grad;
    if (need) {
      t.n_->requires_grad = true;
      t.n_->parents.reserve(parents.size());
      for (Tensor& p : parents) t.n_->parents.push_back(p.n_);
      t.n_->backprop = std::move(bp);
    }
    return t;
  }

 private:
  std::shared_ptr<Node> n_;

  static Tensor raw(Shape shape) {
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->value.assign(size_t(shape_numel(shape)), S(0));
    t.n_->shape = std::move(shape);
    t.n_->id = detail::tensor_id_counter.fetch_add(1, std::memory_order_relaxed);
    return t;
  }

  static void collect(Node* root, std::vector<Node*>& out) {
    // Iterative DFS; visited-set keyed on node pointer.
    std::vector<Node*> stack{root};
    std::unordered_set<Node*> seen;
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      if (!seen.insert(n).second) continue;
      out.push_back(n);
      for (auto& p : n->parents)
        if (p->requires_grad) stack.push_back(p.get());
    }
  }
};

// ---------------------------------------------------------------------------
// Elementwise and shape utilities

namespace detail {
template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}
}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = Tensor<S>::make_op(a.shape(), {a, b}, [](typename Tensor<S>::Node& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *n.parents[k];
      if (!p.requires_grad) continue;
      Tensor<S>::ensure_grad(p);
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  });
  const auto &av = a.value(), &bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = Tensor<S>::make_op(a.shape(), {a, b}, [](typename Tensor<S>::Node& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *n.parents[k];
      if (!p.requires_grad) continue;
      Tensor<S>::ensure_grad(p);
      S sign = k == 0 ? S(1) : S(-1);
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += sign * n.grad[i];
    }
  });
  const auto &av = a.value(), &bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = Tensor<S>::make_op(a.shape(), {a, b}, [](typename Tensor<S>::Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      Tensor<S>::ensure_grad(pa);
      for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor<S>::ensure_grad(pb);
      for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
    }
  });
  const auto &av = a.value(), &bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  return out;
}

template <class S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  auto out = Tensor<S>::make_op(a.shape(), {a}, [c](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
  });
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = c * av[i];
  return out;
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  auto out = Tensor<S>::make_op(a.shape(), {a}, [](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
  });
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
  return out;
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return mul_scalar(a, S(-1));
}

// Adds a row vector [c] or [1,c] to every row of a [r,c] matrix.
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& v) {
  if (a.rank() != 2) throw UsageError("add_rowvec: matrix must be rank 2");
  int r = a.shape()[0], c = a.shape()[1];
  if (int64_t(v.numel()) != c) throw UsageError("add_rowvec: vector length mismatch");
  auto out = Tensor<S>::make_op(a.shape(), {a, v}, [r, c](typename Tensor<S>::Node& n) {
    auto& pa = *n.parents[0];
    auto& pv = *n.parents[1];
    if (pa.requires_grad) {
      Tensor<S>::ensure_grad(pa);
      for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
    }
    if (pv.requires_grad) {
      Tensor<S>::ensure_grad(pv);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pv.grad[j] += n.grad[size_t(i) * c + j];
    }
  });
  const auto &av = a.value(), &vv = v.value();
  auto& ov = out.value();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) ov[size_t(i) * c + j] = av[size_t(i) * c + j] + vv[j];
  return out;
}

// Standard matrix product of rank-2 tensors.
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw UsageError("matmul: operands must be rank 2");
  int m = a.shape()[0], ka = a.shape()[1], kb = b.shape()[0], n = b.shape()[1];
  if (ka != kb)
    throw UsageError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  auto out = Tensor<S>::make_op({m, n}, {a, b}, [m, ka, n](typename Tensor<S>::Node& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    // dA += G * B^T
    if (pa.requires_grad) {
      Tensor<S>::ensure_grad(pa);
      for (int i = 0; i < m; ++i) {
        const S* g = nd.grad.data() + size_t(i) * n;
        S* da = pa.grad.data() + size_t(i) * ka;
        for (int k = 0; k < ka; ++k) {
          const S* brow = pb.value.data() + size_t(k) * n;
          S acc = 0;
          for (int j = 0; j < n; ++j) acc += g[j] * brow[j];
          da[k] += acc;
        }
      }
    }
    // dB += A^T * G
    if (pb.requires_grad) {
      Tensor<S>::ensure_grad(pb);
      for (int i = 0; i < m; ++i) {
        const S* arow = pa.value.data() + size_t(i) * ka;
        const S* g = nd.grad.data() + size_t(i) * n;
        for (int k = 0; k < ka; ++k) {
          S aik = arow[k];
          if (aik == S(0)) continue;
          S* db = pb.grad.data() + size_t(k) * n;
          for (int j = 0; j < n; ++j) db[j] += aik * g[j];
        }
      }
    }
  });
  const S* av = a.value().data();
  const S* bv = b.value().data();
  S* ov = out.value().data();
  for (int i = 0; i < m; ++i) {
    const S* arow = av + size_t(i) * ka;
    S* orow = ov + size_t(i) * n;
    for (int k = 0; k < ka; ++k) {
      S aik = arow[k];
      if (aik == S(0)) continue;
      const S* brow = bv + size_t(k) * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

template <class S>
Tensor<S> elu(const Tensor<S>& x) {
  auto out = Tensor<S>::make_op(x.shape(), {x}, [](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      S d = p.value[i] > S(0) ? S(1) : n.value[i] + S(1);  // e^x = value + 1 for x <= 0
      p.grad[i] += d * n.grad[i];
    }
  });
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = xv[i] > S(0) ? xv[i] : S(std::exp(double(xv[i])) - 1.0);
  return out;
}

template <class S>
Tensor<S> tanh_op(const Tensor<S>& x) {
  auto out = Tensor<S>::make_op(x.shape(), {x}, [](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (size_t i = 0; i < n.grad.size(); ++i)
      p.grad[i] += (S(1) - n.value[i] * n.value[i]) * n.grad[i];
  });
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = S(std::tanh(double(xv[i])));
  return out;
}

template <class S>
Tensor<S> exp_op(const Tensor<S>& x) {
  auto out = Tensor<S>::make_op(x.shape(), {x}, [](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.value[i] * n.grad[i];
  });
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = S(std::exp(double(xv[i])));
  return out;
}

template <class S>
Tensor<S> square(const Tensor<S>& x) {
  auto out = Tensor<S>::make_op(x.shape(), {x}, [](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += S(2) * p.value[i] * n.grad[i];
  });
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * xv[i];
  return out;
}

// Elementwise clamp; gradient passes only where lo < x < hi.
template <class S>
Tensor<S> clamp_op(const Tensor<S>& x, S lo, S hi) {
  auto out = Tensor<S>::make_op(x.shape(), {x}, [lo, hi](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (p.value[i] > lo && p.value[i] < hi) p.grad[i] += n.grad[i];
  });
  const auto& xv = x.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = clampv(xv[i], lo, hi);
  return out;
}

template <class S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0])
    throw UsageError("concat_cols: need rank-2 tensors with equal row counts");
  int r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  auto out = Tensor<S>::make_op({r, ca + cb}, {a, b}, [r, ca, cb](typename Tensor<S>::Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    int c = ca + cb;
    if (pa.requires_grad) {
      Tensor<S>::ensure_grad(pa);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < ca; ++j) pa.grad[size_t(i) * ca + j] += n.grad[size_t(i) * c + j];
    }
    if (pb.requires_grad) {
      Tensor<S>::ensure_grad(pb);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < cb; ++j) pb.grad[size_t(i) * cb + j] += n.grad[size_t(i) * c + ca + j];
    }
  });
  const auto &av = a.value(), &bv = b.value();
  auto& ov = out.value();
  int c = ca + cb;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j) ov[size_t(i) * c + j] = av[size_t(i) * ca + j];
    for (int j = 0; j < cb; ++j) ov[size_t(i) * c + ca + j] = bv[size_t(i) * cb + j];
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int c1) {
  if (x.rank() != 2) throw UsageError("slice_cols: rank != 2");
  int r = x.shape()[0], c = x.shape()[1];
  if (c0 < 0 || c1 > c || c0 >= c1) throw UsageError("slice_cols: bad column range");
  int w = c1 - c0;
  auto out = Tensor<S>::make_op({r, w}, {x}, [r, c, c0, w](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j) p.grad[size_t(i) * c + c0 + j] += n.grad[size_t(i) * w + j];
  });
  const auto& xv = x.value();
  auto& ov = out.value();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j) ov[size_t(i) * w + j] = xv[size_t(i) * c + c0 + j];
  return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  auto out = Tensor<S>::make_op({1}, {x}, [](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    Tensor<S>::ensure_grad(p);
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
  });
  S acc = 0;
  for (S v : x.value()) acc += v;
  out.value()[0] = acc;
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  int64_t n_elem = x.numel();
  if (n_elem == 0) throw UsageError("mean: empty tensor");
  return mul_scalar(sum(x), S(1) / S(n_elem));
}

// Mean of elementwise squared differences.
template <class S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mse");
  int64_t m = a.numel();
  auto out = Tensor<S>::make_op({1}, {a, b}, [m](typename Tensor<S>::Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    S g = n.grad[0] * S(2) / S(m);
    if (pa.requires_grad) {
      Tensor<S>::ensure_grad(pa);
      for (size_t i = 0; i < pa.value.size(); ++i) pa.grad[i] += g * (pa.value[i] - pb.value[i]);
    }
    if (pb.requires_grad) {
      Tensor<S>::ensure_grad(pb);
      for (size_t i = 0; i < pb.value.size(); ++i) pb.grad[i] -= g * (pa.value[i] - pb.value[i]);
    }
  });
  const auto &av = a.value(), &bv = b.value();
  S acc = 0;
  for (size_t i = 0; i < av.size(); ++i) {
    S d = av[i] - bv[i];
    acc += d * d;
  }
  out.value()[0] = acc / S(m);
  return out;
}

// Sum of elementwise squared differences (no averaging); the building block
// of the squared-norm losses.
template <class S>
Tensor<S> sum_sq_diff(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sum_sq_diff");
  auto out = Tensor<S>::make_op({1}, {a, b}, [](typename Tensor<S>::Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    S g = n.grad[0] * S(2);
    if (pa.requires_grad) {
      Tensor<S>::ensure_grad(pa);
      for (size_t i = 0; i < pa.value.size(); ++i) pa.grad[i] += g * (pa.value[i] - pb.value[i]);
    }
    if (pb.requires_grad) {
      Tensor<S>::ensure_grad(pb);
      for (size_t i = 0; i < pb.value.size(); ++i) pb.grad[i] -= g * (pa.value[i] - pb.value[i]);
    }
  });
  const auto &av = a.value(), &bv = b.value();
  S acc = 0;
  for (size_t i = 0; i < av.size(); ++i) {
    S d = av[i] - bv[i];
    acc += d * d;
  }
  out.value()[0] = acc;
  return out;
}

// Value-transparent, gradient-opaque barrier.
template <class S>
Tensor<S> stop_gradient(const Tensor<S>& x) {
  return Tensor<S>::from(x.shape(), x.value(), false);
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <class S>
Tensor<S> operator*(S c, const Tensor<S>& a) { return mul_scalar(a, c); }

}  // namespace skimo
