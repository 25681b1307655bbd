#pragma once

// Reverse-mode differentiation over dense Eigen matrices. A Tape records
// matrix-valued nodes; each op stores its forward value and a closure that
// pushes the output gradient back to its inputs. Everything is templated on
// the scalar type so the same model code runs in float for training and in
// double for finite-difference checks.

#include "graphloc/error.hpp"

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace graphloc::autodiff {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
};

/// Named tensors in declaration order. Declaration order fixes the checkpoint
/// layout and the optimizer's iteration order.
template <typename Scalar>
class ParameterSet {
 public:
  Parameter<Scalar>& add(const std::string& name, Matrix<Scalar> value) {
    if (index_.count(name) != 0) throw ValidationError("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    Matrix<Scalar> grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    params_.push_back({name, std::move(value), std::move(grad)});
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<Scalar>& operator[](const std::string& name) { return params_[lookup(name)]; }
  const Parameter<Scalar>& operator[](const std::string& name) const {
    return params_[lookup(name)];
  }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<Other>());
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::deque<Parameter<Scalar>> params_;  // stable addresses: tapes cache them
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Tape;

/// Handle to a tape node.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<Scalar>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using V = Var<Scalar>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  V constant(Mat value) { return push(std::move(value), {}); }

  /// Leaf bound to a parameter; repeated calls return the same node so the
  /// parameter gradient is accumulated once.
  V param(Parameter<Scalar>& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return {this, it->second};
    Parameter<Scalar>* target = &p;
    V v = push(p.value, {});
    nodes_[v.id].backward = [this, target, id = v.id] { target->grad += nodes_[id].grad; };
    leaves_.emplace(target, v.id);
    return v;
  }

  /// Records an op result. `backward` reads grad(out) and adds into grad(inputs).
  V push(Mat value, std::function<void()> backward) {
    nodes_.push_back({std::move(value), Mat(), std::move(backward)});
    return {this, nodes_.size() - 1};
  }

  const Mat& value(V v) const { return nodes_[v.id].value; }

  /// Gradient buffer of a node, zero-initialised on first touch.
  Mat& grad(V v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  /// Seeds d(output)/d(output) = 1 on a 1x1 node and accumulates into the
  /// gradients of every parameter reached.
  void backward(V output) {
    if (output.rows() != 1 || output.cols() != 1) {
      throw ValidationError("backward() needs a scalar output");
    }
    grad(output)(0, 0) += Scalar(1);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() != 0 && n.backward) n.backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    leaves_.clear();
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, std::size_t> leaves_;
};

// ------------------------------------------------------------------- ops

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string("shape mismatch in ") + what);
}

/// Pushes `value` and installs `fn(out)` as its backward step.
template <typename Scalar, typename Fn>
Var<Scalar> record(Tape<Scalar>& t, Matrix<Scalar> value, Fn fn) {
  const Var<Scalar> out{&t, t.size()};
  t.push(std::move(value), [out, fn = std::move(fn)] { fn(out); });
  return out;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.cols() == b.rows(), "matmul");
  auto& t = *a.tape;
  return detail::record(t, Matrix<Scalar>(a.value() * b.value()), [a, b](Var<Scalar> out) {
    auto& t = *out.tape;
    const auto& g = t.grad(out);
    t.grad(a).noalias() += g * b.value().transpose();
    t.grad(b).noalias() += a.value().transpose() * g;
  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.cols() == b.cols(), "matmul_nt");
  auto& t = *a.tape;
  return detail::record(t, Matrix<Scalar>(a.value() * b.value().transpose()),
                        [a, b](Var<Scalar> out) {
                          auto& t = *out.tape;
                          const auto& g = t.grad(out);
                          t.grad(a).noalias() += g * b.value();
                          t.grad(b).noalias() += g.transpose() * a.value();
                        });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  return detail::record(*a.tape, Matrix<Scalar>(a.value() + b.value()), [a, b](Var<Scalar> out) {
    auto& t = *out.tape;
    t.grad(a) += t.grad(out);
    t.grad(b) += t.grad(out);
  });
}

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  return detail::record(*a.tape, Matrix<Scalar>(a.value() - b.value()), [a, b](Var<Scalar> out) {
    auto& t = *out.tape;
    t.grad(a) += t.grad(out);
    t.grad(b) -= t.grad(out);
  });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  return detail::record(*a.tape, Matrix<Scalar>(a.value().cwiseProduct(b.value())),
                        [a, b](Var<Scalar> out) {
                          auto& t = *out.tape;
                          const auto& g = t.grad(out);
                          t.grad(a) += g.cwiseProduct(b.value());
                          t.grad(b) += g.cwiseProduct(a.value());
                        });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  return detail::record(*a.tape, Matrix<Scalar>(a.value() * s), [a, s](Var<Scalar> out) {
    auto& t = *out.tape;
    t.grad(a) += t.grad(out) * s;
  });
}

/// a + row, with the 1 x n row broadcast over every row of a.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Matrix<Scalar> v = a.value();
  v.rowwise() += row.value().row(0);
  return detail::record(*a.tape, std::move(v), [a, row](Var<Scalar> out) {
    auto& t = *out.tape;
    const auto& g = t.grad(out);
    t.grad(a) += g;
    t.grad(row) += g.colwise().sum();
  });
}

/// a .* row, with the 1 x n row broadcast over every row of a.
template <typename Scalar>
Var<Scalar> mul_row(Var<Scalar> a, Var<Scalar> row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "mul_row");
  Matrix<Scalar> v = a.value().array().rowwise() * row.value().row(0).array();
  return detail::record(*a.tape, std::move(v), [a, row](Var<Scalar> out) {
    auto& t = *out.tape;
    const auto& g = t.grad(out);
    t.grad(a).array() += g.array().rowwise() * row.value().row(0).array();
    t.grad(row) += g.cwiseProduct(a.value()).colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  return detail::record(*a.tape, Matrix<Scalar>(a.value().cwiseMax(Scalar(0))),
                        [a](Var<Scalar> out) {
                          auto& t = *out.tape;
                          t.grad(a).array() +=
                              (a.value().array() > Scalar(0)).select(t.grad(out).array(), Scalar(0));
                        });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  Matrix<Scalar> y = a.value().array().tanh();
  return detail::record(*a.tape, std::move(y), [a](Var<Scalar> out) {
    auto& t = *out.tape;
    const auto& y = out.value();
    t.grad(a).array() += t.grad(out).array() * (Scalar(1) - y.array().square());
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Matrix<Scalar> y = (Scalar(1) + (-a.value().array()).exp()).inverse();
  return detail::record(*a.tape, std::move(y), [a](Var<Scalar> out) {
    auto& t = *out.tape;
    const auto& y = out.value();
    t.grad(a).array() += t.grad(out).array() * y.array() * (Scalar(1) - y.array());
  });
}

/// tanh approximation of GELU.
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  const Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  const Scalar k = Scalar(0.044715);
  const auto& x = a.value().array();
  Matrix<Scalar> inner_t = (c * (x + k * x.cube())).tanh().matrix();
  Matrix<Scalar> y = (Scalar(0.5) * x * (Scalar(1) + inner_t.array())).matrix();
  return detail::record(*a.tape, std::move(y), [a, c, k, inner_t = std::move(inner_t)](Var<Scalar> out) {
    auto& t = *out.tape;
    const auto& x = a.value().array();
    const auto th = inner_t.array();
    const auto dy = Scalar(0.5) * (Scalar(1) + th) +
                    Scalar(0.5) * x * (Scalar(1) - th.square()) * c *
                        (Scalar(1) + Scalar(3) * k * x.square());
    t.grad(a).array() += t.grad(out).array() * dy;
  });
}

/// Row-wise layer normalisation with 1 x n gain and bias.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias,
                       Scalar eps = Scalar(1e-5)) {
  detail::require(gain.cols() == x.cols() && bias.cols() == x.cols(), "layer_norm");
  const auto n = x.cols();
  const auto& xv = x.value();
  Matrix<Scalar> xhat(xv.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const Scalar mean = xv.row(i).mean();
    const Scalar var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Matrix<Scalar> y = xhat.array().rowwise() * gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  return detail::record(
      *x.tape, std::move(y),
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Var<Scalar> out) {
        auto& t = *out.tape;
        const auto& g = t.grad(out);
        t.grad(bias) += g.colwise().sum();
        t.grad(gain) += g.cwiseProduct(xhat).colwise().sum();
        Matrix<Scalar> dxhat = g.array().rowwise() * gain.value().row(0).array();
        auto& gx = t.grad(x);
        for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
          const Scalar m1 = dxhat.row(i).mean();
          const Scalar m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
          gx.row(i).array() +=
              inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
        }
      });
}

/// Row-wise softmax.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  Matrix<Scalar> p = a.value();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp();
    p.row(i) /= p.row(i).sum();
  }
  return detail::record(*a.tape, std::move(p), [a](Var<Scalar> out) {
    auto& t = *out.tape;
    const auto& p = out.value();
    const auto& g = t.grad(out);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = g.cwiseProduct(p).rowwise().sum();
    t.grad(a).array() += p.array() * (g.colwise() - dots).array();
  });
}

/// Multi-head scaled dot-product attention; q is Lq x d, k and v are Lk x d.
/// Per-head attention matrices are copied to `probs_out` when given.
template <typename Scalar>
Var<Scalar> attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, int heads,
                      std::vector<Matrix<Scalar>>* probs_out = nullptr) {
  detail::require(q.cols() == k.cols() && k.rows() == v.rows() && v.cols() == q.cols() &&
                      heads > 0 && q.cols() % heads == 0,
                  "attention");
  const Eigen::Index dh = q.cols() / heads;
  const Scalar s = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Matrix<Scalar>> probs(static_cast<std::size_t>(heads));
  Matrix<Scalar> o(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c = h * dh;
    Matrix<Scalar> p = (q.value().middleCols(c, dh) * k.value().middleCols(c, dh).transpose()) * s;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      p.row(i).array() -= p.row(i).maxCoeff();
      p.row(i) = p.row(i).array().exp();
      p.row(i) /= p.row(i).sum();
    }
    o.middleCols(c, dh).noalias() = p * v.value().middleCols(c, dh);
    probs[static_cast<std::size_t>(h)] = std::move(p);
  }
  if (probs_out) *probs_out = probs;
  return detail::record(
      *q.tape, std::move(o), [q, k, v, heads, dh, s, probs = std::move(probs)](Var<Scalar> out) {
        auto& t = *out.tape;
        const auto& g = t.grad(out);
        auto& gq = t.grad(q);
        auto& gk = t.grad(k);
        auto& gv = t.grad(v);
        for (int h = 0; h < heads; ++h) {
          const Eigen::Index c = h * dh;
          const auto& p = probs[static_cast<std::size_t>(h)];
          const auto go = g.middleCols(c, dh);
          gv.middleCols(c, dh).noalias() += p.transpose() * go;
          Matrix<Scalar> dp = go * v.value().middleCols(c, dh).transpose();
          const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = dp.cwiseProduct(p).rowwise().sum();
          Matrix<Scalar> ds = (p.array() * (dp.colwise() - dots).array()) * s;
          gq.middleCols(c, dh).noalias() += ds * k.value().middleCols(c, dh);
          gk.middleCols(c, dh).noalias() += ds.transpose() * q.value().middleCols(c, dh);
        }
      });
}

/// Rows [start, start + count).
template <typename Scalar>
Var<Scalar> rows(Var<Scalar> a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.rows(), "rows");
  return detail::record(*a.tape, Matrix<Scalar>(a.value().middleRows(start, count)),
                        [a, start, count](Var<Scalar> out) {
                          auto& t = *out.tape;
                          t.grad(a).middleRows(start, count) += t.grad(out);
                        });
}

template <typename Scalar>
Var<Scalar> row(Var<Scalar> a, Eigen::Index i) {
  return rows(a, i, 1);
}

/// Columns [start, start + count).
template <typename Scalar>
Var<Scalar> cols(Var<Scalar> a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.cols(), "cols");
  return detail::record(*a.tape, Matrix<Scalar>(a.value().middleCols(start, count)),
                        [a, start, count](Var<Scalar> out) {
                          auto& t = *out.tape;
                          t.grad(a).middleCols(start, count) += t.grad(out);
                        });
}

/// Stacks the inputs vertically.
template <typename Scalar>
Var<Scalar> vstack(const std::vector<Var<Scalar>>& parts) {
  detail::require(!parts.empty(), "vstack");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == parts.front().cols(), "vstack");
    total += p.rows();
  }
  Matrix<Scalar> v(total, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return detail::record(*parts.front().tape, std::move(v), [parts](Var<Scalar> out) {
    auto& t = *out.tape;
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      const auto n = p.rows();
      t.grad(p) += t.grad(out).middleRows(r, n);
      r += n;
    }
  });
}

/// Concatenates the inputs side by side.
template <typename Scalar>
Var<Scalar> hstack(const std::vector<Var<Scalar>>& parts) {
  detail::require(!parts.empty(), "hstack");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == parts.front().rows(), "hstack");
    total += p.cols();
  }
  Matrix<Scalar> v(parts.front().rows(), total);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return detail::record(*parts.front().tape, std::move(v), [parts](Var<Scalar> out) {
    auto& t = *out.tape;
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      const auto n = p.cols();
      t.grad(p) += t.grad(out).middleCols(c, n);
      c += n;
    }
  });
}

/// Row lookup into an embedding table.
template <typename Scalar, typename Index>
Var<Scalar> gather_rows(Var<Scalar> table, std::span<const Index> ids) {
  Matrix<Scalar> v(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] >= 0 && static_cast<Eigen::Index>(ids[i]) < table.rows(), "gather_rows");
    v.row(static_cast<Eigen::Index>(i)) = table.value().row(static_cast<Eigen::Index>(ids[i]));
  }
  std::vector<Eigen::Index> idx(ids.begin(), ids.end());
  return detail::record(*table.tape, std::move(v), [table, idx = std::move(idx)](Var<Scalar> out) {
    auto& t = *out.tape;
    const auto& g = t.grad(out);
    auto& gt = t.grad(table);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// 1 x n column means.
template <typename Scalar>
Var<Scalar> mean_rows(Var<Scalar> a) {
  detail::require(a.rows() > 0, "mean_rows");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.rows());
  return detail::record(*a.tape, Matrix<Scalar>(a.value().colwise().sum() * inv),
                        [a, inv](Var<Scalar> out) {
                          auto& t = *out.tape;
                          t.grad(a).rowwise() += t.grad(out).row(0) * inv;
                        });
}

/// Sum of 1x1 nodes.
template <typename Scalar>
Var<Scalar> add_n(const std::vector<Var<Scalar>>& terms) {
  detail::require(!terms.empty(), "add_n");
  Matrix<Scalar> v = Matrix<Scalar>::Zero(1, 1);
  for (const auto& x : terms) {
    detail::require(x.rows() == 1 && x.cols() == 1, "add_n");
    v(0, 0) += x.scalar();
  }
  return detail::record(*terms.front().tape, std::move(v), [terms](Var<Scalar> out) {
    auto& t = *out.tape;
    const Scalar g = t.grad(out)(0, 0);
    for (const auto& x : terms) t.grad(x)(0, 0) += g;
  });
}

/// Mean over rows of -log softmax(logits)[row, target[row]].
template <typename Scalar, typename Index>
Var<Scalar> softmax_cross_entropy(Var<Scalar> logits, std::span<const Index> targets) {
  detail::require(static_cast<Eigen::Index>(targets.size()) == logits.rows() && !targets.empty(),
                  "softmax_cross_entropy");
  const auto& z = logits.value();
  Matrix<Scalar> p(z.rows(), z.cols());
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)]);
    detail::require(t >= 0 && t < z.cols(), "softmax_cross_entropy target");
    const Scalar m = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - m).exp();
    const Scalar sum = p.row(i).sum();
    p.row(i) /= sum;
    loss += m + std::log(sum) - z(i, t);
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(z.rows());
  Matrix<Scalar> v(1, 1);
  v(0, 0) = loss * inv;
  std::vector<Eigen::Index> idx;
  for (auto x : targets) idx.push_back(static_cast<Eigen::Index>(x));
  return detail::record(*logits.tape, std::move(v),
                        [logits, p = std::move(p), idx = std::move(idx), inv](Var<Scalar> out) {
                          auto& t = *out.tape;
                          const Scalar g = t.grad(out)(0, 0) * inv;
                          auto& gz = t.grad(logits);
                          gz += p * g;
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            gz(static_cast<Eigen::Index>(i), idx[i]) -= g;
                          }
                        });
}

/// Binary cross-entropy of sigmoid(logit) against `label`, for a 1x1 logit.
template <typename Scalar>
Var<Scalar> sigmoid_cross_entropy(Var<Scalar> logit, bool label) {
  detail::require(logit.rows() == 1 && logit.cols() == 1, "sigmoid_cross_entropy");
  const Scalar z = logit.scalar();
  const Scalar y = label ? Scalar(1) : Scalar(0);
  // max(z,0) - z*y + log(1 + exp(-|z|))
  Matrix<Scalar> v(1, 1);
  v(0, 0) = std::max(z, Scalar(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  return detail::record(*logit.tape, std::move(v), [logit, z, y](Var<Scalar> out) {
    auto& t = *out.tape;
    const Scalar sig = Scalar(1) / (Scalar(1) + std::exp(-z));
    t.grad(logit)(0, 0) += t.grad(out)(0, 0) * (sig - y);
  });
}

// ------------------------------------------------------------ initialisers

template <typename Scalar>
Matrix<Scalar> random_normal(Eigen::Index rows, Eigen::Index cols, double stddev,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

/// Glorot-scaled normal weights.
template <typename Scalar>
Matrix<Scalar> glorot(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  return random_normal<Scalar>(fan_in, fan_out,
                               std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)), rng);
}

}  // namespace graphloc::autodiff
