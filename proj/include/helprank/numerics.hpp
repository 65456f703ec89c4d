#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "helprank/error.hpp"
#include "helprank/rng.hpp"

namespace helprank {

// Dense row-major matrix. A vector is a rows x 1 matrix. Shape is fixed at
// construction; summation loops run in index order so results are
// reproducible run to run.
template <typename T>
class Mat {
 public:
  Mat() = default;
  Mat(size_t rows, size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  T operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](size_t i) { return data_[i]; }
  T operator[](size_t i) const { return data_[i]; }

  std::span<T> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Mat<U> cast() const {
    Mat<U> out(rows_, cols_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Mat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

 private:
  size_t rows_ = 0, cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
using Vec = std::vector<T>;

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) raise("ShapeError", what);
}

// y = W x + b
template <typename T>
void affine(const Mat<T>& W, std::span<const T> x, std::span<const T> b,
            std::span<T> y) {
  check_shape(W.cols() == x.size() && W.rows() == b.size() && W.rows() == y.size(),
              "affine: W is " + std::to_string(W.rows()) + "x" +
                  std::to_string(W.cols()) + ", x has " + std::to_string(x.size()) +
                  ", b has " + std::to_string(b.size()));
  for (size_t r = 0; r < W.rows(); ++r) {
    T acc = b[r];
    const T* wr = W.data() + r * W.cols();
    for (size_t c = 0; c < W.cols(); ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

template <typename T>
Vec<T> affine(const Mat<T>& W, std::span<const T> x, std::span<const T> b) {
  Vec<T> y(W.rows());
  affine(W, x, b, std::span<T>(y));
  return y;
}

// y += W^T d  (backprop of affine into its input)
template <typename T>
void matvec_transposed_add(const Mat<T>& W, std::span<const T> d, std::span<T> y) {
  check_shape(W.rows() == d.size() && W.cols() == y.size(), "matvec_transposed_add");
  for (size_t r = 0; r < W.rows(); ++r) {
    const T* wr = W.data() + r * W.cols();
    T dr = d[r];
    for (size_t c = 0; c < W.cols(); ++c) y[c] += wr[c] * dr;
  }
}

// dW += d x^T
template <typename T>
void outer_add(std::span<const T> d, std::span<const T> x, Mat<T>& dW) {
  check_shape(dW.rows() == d.size() && dW.cols() == x.size(), "outer_add");
  for (size_t r = 0; r < d.size(); ++r) {
    T* wr = dW.data() + r * dW.cols();
    T dr = d[r];
    for (size_t c = 0; c < x.size(); ++c) wr[c] += dr * x[c];
  }
}

template <typename T>
void add_scaled(std::span<T> dst, std::span<const T> src, T scale) {
  check_shape(dst.size() == src.size(), "add_scaled");
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  check_shape(a.size() == b.size(), "dot");
  T acc = T(0);
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Numerically stable softmax (max subtraction).
template <typename T>
Vec<T> softmax(std::span<const T> logits) {
  T mx = logits[0];
  for (T v : logits) mx = std::max(mx, v);
  Vec<T> p(logits.size());
  T z = T(0);
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (T& v : p) v /= z;
  return p;
}

template <typename T>
struct SoftmaxLoss {
  T loss;
  Vec<T> dlogits;  // softmax(logits) - onehot(true_class)
};

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(std::span<const T> logits, size_t true_class) {
  if (true_class >= logits.size())
    raise("IndexError", "class index " + std::to_string(true_class) + " out of range");
  T mx = logits[0];
  for (T v : logits) mx = std::max(mx, v);
  T z = T(0);
  for (T v : logits) z += std::exp(v - mx);
  SoftmaxLoss<T> out;
  out.loss = std::log(z) - (logits[true_class] - mx);
  out.dlogits.resize(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    out.dlogits[i] = std::exp(logits[i] - mx) / z - (i == true_class ? T(1) : T(0));
  }
  return out;
}

// Hinge loss max(0, 1 - label*score) with subgradient in d_score.
// label is +1 or -1.
template <typename T>
struct HingeLoss {
  T loss;
  T dscore;
};

template <typename T>
HingeLoss<T> hinge_loss(T score, int label) {
  T margin = T(1) - T(label) * score;
  if (margin > T(0)) return {margin, T(-label)};
  return {T(0), T(0)};
}

// Element-wise max over the rows of a (positions x features) matrix,
// restricted to the first n_valid rows. Gradient flows only to the argmax
// row of each feature, so the argmax indices are returned alongside.
template <typename T>
void ewise_max_pool(const Mat<T>& values, size_t n_valid, std::span<T> pooled,
                    std::span<int32_t> argmax) {
  check_shape(n_valid >= 1 && n_valid <= values.rows() &&
                  pooled.size() == values.cols() && argmax.size() == values.cols(),
              "ewise_max_pool");
  for (size_t c = 0; c < values.cols(); ++c) {
    pooled[c] = values(0, c);
    argmax[c] = 0;
  }
  for (size_t r = 1; r < n_valid; ++r) {
    const T* vr = values.data() + r * values.cols();
    for (size_t c = 0; c < values.cols(); ++c) {
      if (vr[c] > pooled[c]) {
        pooled[c] = vr[c];
        argmax[c] = static_cast<int32_t>(r);
      }
    }
  }
}

// Named collection of tensors with stable iteration order (insertion order).
// Houses all trainable weights of a model; Adam state mirrors its shapes.
template <typename T>
class ParamSet {
 public:
  Mat<T>& add(const std::string& name, size_t rows, size_t cols) {
    if (index_.count(name)) raise("ShapeError", "duplicate parameter name " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, Mat<T>(rows, cols));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Mat<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) raise("ShapeError", "unknown parameter " + name);
    return items_[it->second].second;
  }
  const Mat<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) raise("ShapeError", "unknown parameter " + name);
    return items_[it->second].second;
  }

  size_t tensor_count() const { return items_.size(); }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& [name, m] : items_) n += m.size();
    return n;
  }

  void zero() {
    for (auto& [name, m] : items_) m.fill(T(0));
  }

  // Grads ParamSet with the same names/shapes, zero-filled.
  ParamSet<T> zeros_like() const {
    ParamSet<T> out;
    for (const auto& [name, m] : items_) out.add(name, m.rows(), m.cols());
    return out;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, m] : items_) {
      out.add(name, m.rows(), m.cols());
      out.at(name) = m.template cast<U>();
    }
    return out;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  bool operator==(const ParamSet& other) const { return items_ == other.items_; }

 private:
  std::vector<std::pair<std::string, Mat<T>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  ParamSet<T> m;  // first moments
  ParamSet<T> v;  // second moments
  int64_t t = 0;

  static AdamState init(const ParamSet<T>& params) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    return s;
  }
};

// Standard Adam update with bias correction. One call = one step.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg = {}) {
  state.t += 1;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const Mat<T>& g = grads.at(name);
    check_shape(g.rows() == p.rows() && g.cols() == p.cols(), "adam_step: " + name);
    Mat<T>& m = state.m.at(name);
    Mat<T>& v = state.v.at(name);
    for (size_t i = 0; i < p.size(); ++i) {
      double gi = static_cast<double>(g[i]);
      double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double update = cfg.learning_rate * (mi / b1t) / (std::sqrt(vi / b2t) + cfg.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

// Central finite differences on n_probes randomly chosen coordinates.
// loss_fn must be deterministic and read the ParamSet it closed over, so that
// perturbing `params` in place is visible to it. Returns the max over probes
// of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename T>
double grad_check(const std::function<double()>& loss_fn, ParamSet<T>& params,
                  const ParamSet<T>& analytic, int n_probes, double h, Rng& rng) {
  size_t total = params.parameter_count();
  double max_rel = 0.0;
  for (int probe = 0; probe < n_probes; ++probe) {
    size_t flat = static_cast<size_t>(rng.next_below(total));
    // locate tensor
    std::string name;
    size_t off = flat;
    for (auto& [n, m] : params) {
      if (off < m.size()) {
        name = n;
        break;
      }
      off -= m.size();
    }
    Mat<T>& m = params.at(name);
    T saved = m[off];
    m[off] = static_cast<T>(static_cast<double>(saved) + h);
    double f_plus = loss_fn();
    m[off] = static_cast<T>(static_cast<double>(saved) - h);
    double f_minus = loss_fn();
    m[off] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      raise("NumericalError", "non-finite loss during grad_check at " + name);
    double numeric = (f_plus - f_minus) / (2.0 * h);
    double a = static_cast<double>(analytic.at(name)[off]);
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace helprank
