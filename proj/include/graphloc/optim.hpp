#pragma once

// SGD with momentum, linear warmup and global gradient-norm clipping.

#include "graphloc/autodiff.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

namespace graphloc {

struct OptimizerConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  int warmup_steps = 50;
  double clip_norm = 1.0;  // <= 0 disables clipping

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"momentum", c.momentum},
       {"warmup_steps", c.warmup_steps},
       {"clip_norm", c.clip_norm}};
}

inline void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  const OptimizerConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.momentum = j.value("momentum", d.momentum);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
}

template <typename Scalar>
class SgdMomentum {
 public:
  explicit SgdMomentum(OptimizerConfig config) : config_(config) {}

  double learning_rate_at(long step) const {
    if (config_.warmup_steps <= 0) return config_.learning_rate;
    return config_.learning_rate *
           std::min(1.0, static_cast<double>(step + 1) / config_.warmup_steps);
  }

  /// Applies `grad / batch` of every parameter, then clears the gradients.
  /// Returns the pre-clipping gradient norm.
  double step(autodiff::ParameterSet<Scalar>& params, int batch = 1) {
    double sq = 0.0;
    for (const auto& p : params) sq += p.grad.template cast<double>().squaredNorm();
    const double norm = std::sqrt(sq) / batch;
    double factor = 1.0 / batch;
    if (config_.clip_norm > 0 && norm > config_.clip_norm) factor *= config_.clip_norm / norm;
    const auto lr = static_cast<Scalar>(learning_rate_at(step_));
    const auto mu = static_cast<Scalar>(config_.momentum);
    for (auto& p : params) {
      auto [it, fresh] = velocity_.try_emplace(p.name);
      if (fresh) it->second = autodiff::Matrix<Scalar>::Zero(p.value.rows(), p.value.cols());
      it->second = mu * it->second + static_cast<Scalar>(factor) * p.grad;
      p.value -= lr * it->second;
      p.grad.setZero();
    }
    ++step_;
    return norm;
  }

  long steps_taken() const { return step_; }

 private:
  OptimizerConfig config_;
  long step_ = 0;
  std::unordered_map<std::string, autodiff::Matrix<Scalar>> velocity_;
};

}  // namespace graphloc
