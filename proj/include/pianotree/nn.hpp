#pragma once

// Small hand-rolled NN layer: linear maps and GRU cells with explicit
// backward passes, in single-item (column vector) and lane-batched
// (dim x lanes matrix) flavors. Templated on the scalar so the same code
// runs in float for training and double for finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pianotree::nn {

template <class S> using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S> using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S> using RowArr = Eigen::Array<S, 1, Eigen::Dynamic>;

// ---------------------------------------------------------------- random

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Stable derivation of independent streams, e.g. per (step, batch slot).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0) {
  return mix64(seed ^ mix64(a ^ mix64(b)));
}

/// mt19937_64 core (bit-exact by the standard) with hand-rolled uniform and
/// Box-Muller transforms, since std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() {  // [0,1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }
  bool coin(double p) { return uniform() < p; }
  std::uint64_t bits() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// -------------------------------------------------------------- modules

template <class S>
struct Linear {
  Mat<S> w;  // out x in
  Vec<S> b;  // out

  void init(int out, int in, Rng& rng) {
    w.resize(out, in);
    b = Vec<S>::Zero(out);
    double limit = std::sqrt(6.0 / (in + out));
    for (int j = 0; j < in; ++j)
      for (int i = 0; i < out; ++i)
        w(i, j) = static_cast<S>((2.0 * rng.uniform() - 1.0) * limit);
  }
  void zero_like(const Linear& src) {
    w = Mat<S>::Zero(src.w.rows(), src.w.cols());
    b = Vec<S>::Zero(src.b.size());
  }

  Vec<S> forward(const Vec<S>& x) const { return w * x + b; }
  Mat<S> forward(const Mat<S>& x) const {
    return (w * x).colwise() + b;
  }
  // accumulates parameter grads; returns dx
  Vec<S> backward(const Vec<S>& x, const Vec<S>& dy, Linear& grad) const {
    grad.w.noalias() += dy * x.transpose();
    grad.b += dy;
    return w.transpose() * dy;
  }
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, Linear& grad) const {
    grad.w.noalias() += dy * x.transpose();
    grad.b += dy.rowwise().sum();
    return w.transpose() * dy;
  }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

template <class S>
Vec<S> sigmoid(const Vec<S>& x) {
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}
template <class S>
Mat<S> sigmoid_m(const Mat<S>& x) {
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}

/// GRU with stacked gates [update; reset; candidate]:
///   a  = wx x + b;  g = wh h
///   u  = sigm(a_u + g_u);  r = sigm(a_r + g_r)
///   c  = tanh(a_c + r .* g_c)
///   h' = u .* h + (1 - u) .* c
template <class S>
struct Gru {
  Mat<S> wx;  // 3H x X
  Mat<S> wh;  // 3H x H
  Vec<S> b;   // 3H

  int hidden() const { return static_cast<int>(wh.cols()); }

  void init(int h, int x, Rng& rng) {
    auto fill = [&](Mat<S>& m, int rows, int cols, double limit) {
      m.resize(rows, cols);
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
          m(i, j) = static_cast<S>((2.0 * rng.uniform() - 1.0) * limit);
    };
    fill(wx, 3 * h, x, std::sqrt(6.0 / (x + h)));
    fill(wh, 3 * h, h, std::sqrt(6.0 / (h + h)));
    b = Vec<S>::Zero(3 * h);
  }
  void zero_like(const Gru& src) {
    wx = Mat<S>::Zero(src.wx.rows(), src.wx.cols());
    wh = Mat<S>::Zero(src.wh.rows(), src.wh.cols());
    b = Vec<S>::Zero(src.b.size());
  }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".wx", wx);
    f(prefix + ".wh", wh);
    f(prefix + ".b", b);
  }
};

template <class S>
struct GruCache {
  Vec<S> x, h_prev, u, r, c, gh_c;
};

template <class S>
Vec<S> gru_forward(const Gru<S>& g, const Vec<S>& x, const Vec<S>& h,
                   GruCache<S>* cache = nullptr) {
  const int H = g.hidden();
  Vec<S> a = g.wx * x + g.b;
  Vec<S> gh = g.wh * h;
  Vec<S> u = sigmoid<S>(a.segment(0, H) + gh.segment(0, H));
  Vec<S> r = sigmoid<S>(a.segment(H, H) + gh.segment(H, H));
  Vec<S> gh_c = gh.segment(2 * H, H);
  Vec<S> c =
      (a.segment(2 * H, H).array() + r.array() * gh_c.array()).tanh().matrix();
  Vec<S> h_new =
      (u.array() * h.array() + (S(1) - u.array()) * c.array()).matrix();
  if (cache) *cache = {x, h, u, r, c, gh_c};
  return h_new;
}

/// Backward for one cell application. `dh_new` is the gradient of the loss
/// w.r.t. the cell output; dx is returned, dh_prev accumulated in place.
template <class S>
Vec<S> gru_backward(const Gru<S>& g, const GruCache<S>& cc, const Vec<S>& dh_new,
                    Vec<S>& dh_prev, Gru<S>& grad) {
  const int H = g.hidden();
  using A = Eigen::Array<S, Eigen::Dynamic, 1>;
  A dh = dh_new.array();
  A u = cc.u.array(), r = cc.r.array(), c = cc.c.array();
  A dc = dh * (S(1) - u);
  A du = dh * (cc.h_prev.array() - c);
  A da_c = dc * (S(1) - c * c);
  A dr = da_c * cc.gh_c.array();
  A dgh_c = da_c * r;
  A da_u = du * u * (S(1) - u);
  A da_r = dr * r * (S(1) - r);

  Vec<S> da(3 * H), dgh(3 * H);
  da << da_u.matrix(), da_r.matrix(), da_c.matrix();
  dgh << da_u.matrix(), da_r.matrix(), dgh_c.matrix();

  grad.wx.noalias() += da * cc.x.transpose();
  grad.wh.noalias() += dgh * cc.h_prev.transpose();
  grad.b += da;
  dh_prev += g.wh.transpose() * dgh + (dh * u).matrix();
  return g.wx.transpose() * da;
}

// Lane-batched cell: columns are independent lanes. Masking is the caller's
// job (select between h_new and h_prev per lane; zero dh columns of inactive
// lanes before calling backward).
template <class S>
struct GruBatchCache {
  Mat<S> x, h_prev, u, r, c, gh_c;
};

template <class S>
Mat<S> gru_forward_batch(const Gru<S>& g, const Mat<S>& x, const Mat<S>& h,
                         GruBatchCache<S>* cache = nullptr) {
  const int H = g.hidden();
  Mat<S> a = (g.wx * x).colwise() + g.b;
  Mat<S> gh = g.wh * h;
  Mat<S> u = sigmoid_m<S>(a.middleRows(0, H) + gh.middleRows(0, H));
  Mat<S> r = sigmoid_m<S>(a.middleRows(H, H) + gh.middleRows(H, H));
  Mat<S> gh_c = gh.middleRows(2 * H, H);
  Mat<S> c =
      (a.middleRows(2 * H, H).array() + r.array() * gh_c.array()).tanh().matrix();
  Mat<S> h_new =
      (u.array() * h.array() + (S(1) - u.array()) * c.array()).matrix();
  if (cache) *cache = {x, h, u, r, c, gh_c};
  return h_new;
}

template <class S>
Mat<S> gru_backward_batch(const Gru<S>& g, const GruBatchCache<S>& cc,
                          const Mat<S>& dh_new, Mat<S>& dh_prev, Gru<S>& grad) {
  const int H = g.hidden();
  using AM = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;
  AM dh = dh_new.array();
  AM u = cc.u.array(), r = cc.r.array(), c = cc.c.array();
  AM dc = dh * (S(1) - u);
  AM du = dh * (cc.h_prev.array() - c);
  AM da_c = dc * (S(1) - c * c);
  AM dr = da_c * cc.gh_c.array();
  AM dgh_c = da_c * r;
  AM da_u = du * u * (S(1) - u);
  AM da_r = dr * r * (S(1) - r);

  Mat<S> da(3 * H, dh_new.cols()), dgh(3 * H, dh_new.cols());
  da << da_u.matrix(), da_r.matrix(), da_c.matrix();
  dgh << da_u.matrix(), da_r.matrix(), dgh_c.matrix();

  grad.wx.noalias() += da * cc.x.transpose();
  grad.wh.noalias() += dgh * cc.h_prev.transpose();
  grad.b += da.rowwise().sum();
  dh_prev.noalias() += g.wh.transpose() * dgh;
  dh_prev += (dh * u).matrix();
  return g.wx.transpose() * da;
}

// ------------------------------------------------------------- softmax

template <class S>
Vec<S> softmax(const Vec<S>& logits) {
  Vec<S> p = (logits.array() - logits.maxCoeff()).exp().matrix();
  return p / p.sum();
}

/// Column-wise softmax for lane batches.
template <class S>
Mat<S> softmax_cols(const Mat<S>& logits) {
  Mat<S> p = (logits.rowwise() - logits.colwise().maxCoeff()).array().exp().matrix();
  RowArr<S> z = p.colwise().sum().array();
  return (p.array().rowwise() / z).matrix();
}

/// -log p[target] given probabilities (already softmaxed).
template <class S>
S cross_entropy(const Vec<S>& probs, int target) {
  return -std::log(std::max(probs(target), std::numeric_limits<S>::min()));
}

/// Gradient of cross-entropy w.r.t. logits: probs - onehot(target).
template <class S>
Vec<S> ce_backward(const Vec<S>& probs, int target, S scale = S(1)) {
  Vec<S> d = probs * scale;
  d(target) -= scale;
  return d;
}

/// Gradient through y = softmax(v) when downstream consumed the
/// probabilities directly: dv = y .* (dy - <y, dy>).
template <class S>
Vec<S> softmax_backward(const Vec<S>& probs, const Vec<S>& dprobs) {
  S dot = probs.dot(dprobs);
  return (probs.array() * (dprobs.array() - dot)).matrix();
}

template <class S>
Mat<S> softmax_backward_cols(const Mat<S>& probs, const Mat<S>& dprobs) {
  RowArr<S> dot = (probs.array() * dprobs.array()).colwise().sum();
  return (probs.array() * (dprobs.array().rowwise() - dot)).matrix();
}

}  // namespace pianotree::nn
