#pragma once

// Parameterised building blocks shared by LED-Bert and the baselines. Each
// block is a pair of functions: declare_* registers its tensors under a name
// prefix, and the matching forward function looks them up again.

#include "graphloc/autodiff.hpp"

#include <random>
#include <string>

namespace graphloc::nn {

using autodiff::Matrix;
using autodiff::ParameterSet;
using autodiff::Tape;
using autodiff::Var;

template <typename Scalar>
void declare_linear(ParameterSet<Scalar>& ps, const std::string& prefix, Eigen::Index in,
                    Eigen::Index out, std::mt19937_64& rng, bool bias = true) {
  ps.add(prefix + ".weight", autodiff::glorot<Scalar>(in, out, rng));
  if (bias) ps.add(prefix + ".bias", Matrix<Scalar>::Zero(1, out));
}

/// x W (+ b)
template <typename Scalar>
Var<Scalar> linear(Tape<Scalar>& t, ParameterSet<Scalar>& ps, const std::string& prefix,
                   Var<Scalar> x) {
  Var<Scalar> y = autodiff::matmul(x, t.param(ps[prefix + ".weight"]));
  const std::string bias = prefix + ".bias";
  if (ps.contains(bias)) y = autodiff::add_row(y, t.param(ps[bias]));
  return y;
}

template <typename Scalar>
void declare_layer_norm(ParameterSet<Scalar>& ps, const std::string& prefix, Eigen::Index dim) {
  ps.add(prefix + ".gain", Matrix<Scalar>::Ones(1, dim));
  ps.add(prefix + ".bias", Matrix<Scalar>::Zero(1, dim));
}

template <typename Scalar>
Var<Scalar> layer_norm(Tape<Scalar>& t, ParameterSet<Scalar>& ps, const std::string& prefix,
                       Var<Scalar> x) {
  return autodiff::layer_norm(x, t.param(ps[prefix + ".gain"]), t.param(ps[prefix + ".bias"]));
}

template <typename Scalar>
void declare_feed_forward(ParameterSet<Scalar>& ps, const std::string& prefix, Eigen::Index dim,
                          Eigen::Index hidden, std::mt19937_64& rng) {
  declare_linear(ps, prefix + ".in", dim, hidden, rng);
  declare_linear(ps, prefix + ".out", hidden, dim, rng);
}

template <typename Scalar>
Var<Scalar> feed_forward(Tape<Scalar>& t, ParameterSet<Scalar>& ps, const std::string& prefix,
                         Var<Scalar> x) {
  return linear(t, ps, prefix + ".out", autodiff::gelu(linear(t, ps, prefix + ".in", x)));
}

/// Pre-norm transformer block whose queries come from one stream and whose
/// keys/values come from `kv_dim`-wide states (the same stream for
/// self-attention, the other stream for co-attention).
template <typename Scalar>
void declare_attention_block(ParameterSet<Scalar>& ps, const std::string& prefix,
                             Eigen::Index dim, Eigen::Index kv_dim, Eigen::Index ffn_hidden,
                             std::mt19937_64& rng) {
  declare_layer_norm(ps, prefix + ".attn_norm", dim);
  declare_linear(ps, prefix + ".query", dim, dim, rng);
  declare_linear(ps, prefix + ".key", kv_dim, dim, rng);
  declare_linear(ps, prefix + ".value", kv_dim, dim, rng);
  declare_linear(ps, prefix + ".attn_out", dim, dim, rng);
  declare_layer_norm(ps, prefix + ".ffn_norm", dim);
  declare_feed_forward(ps, prefix + ".ffn", dim, ffn_hidden, rng);
}

/// x + Attn(norm(x), context) followed by h + FFN(norm(h)). `context` must
/// already be normalised by its owner.
template <typename Scalar>
Var<Scalar> attention_block(Tape<Scalar>& t, ParameterSet<Scalar>& ps, const std::string& prefix,
                            Var<Scalar> x, Var<Scalar> normed_x, Var<Scalar> context, int heads,
                            std::vector<Matrix<Scalar>>* probs_out = nullptr) {
  Var<Scalar> q = linear(t, ps, prefix + ".query", normed_x);
  Var<Scalar> k = linear(t, ps, prefix + ".key", context);
  Var<Scalar> v = linear(t, ps, prefix + ".value", context);
  Var<Scalar> attended = autodiff::attention(q, k, v, heads, probs_out);
  Var<Scalar> h = x + linear(t, ps, prefix + ".attn_out", attended);
  return h + feed_forward(t, ps, prefix + ".ffn", layer_norm(t, ps, prefix + ".ffn_norm", h));
}

template <typename Scalar>
Var<Scalar> self_attention_block(Tape<Scalar>& t, ParameterSet<Scalar>& ps,
                                 const std::string& prefix, Var<Scalar> x, int heads) {
  Var<Scalar> normed = layer_norm(t, ps, prefix + ".attn_norm", x);
  return attention_block(t, ps, prefix, x, normed, normed, heads);
}

}  // namespace graphloc::nn
