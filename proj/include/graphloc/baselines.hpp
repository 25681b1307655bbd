#pragma once

// Comparison models. Random and Center need no training; the joint-embedding
// models (late fusion, dialog attention, attention over history) and the GCN
// share a bidirectional LSTM dialog encoder and are trained with the same
// cross-entropy over nodes as LED-Bert.

#include "graphloc/autodiff.hpp"
#include "graphloc/episodes.hpp"
#include "graphloc/ledbert.hpp"
#include "graphloc/navgraph.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace graphloc {

enum class BaselineKind { late_fusion, attention, history_attention, gcn };

std::string_view to_string(BaselineKind k);
BaselineKind parse_baseline_kind(std::string_view s);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::late_fusion;
  int vocab_size = 0;
  int feature_dim = 2048;
  int embed_dim = 32;
  int hidden = 64;  // H
  int gcn_layers = 2;
  int max_text_length = 160;

  void validate() const;

  friend bool operator==(const BaselineConfig&, const BaselineConfig&) = default;
};

void to_json(nlohmann::json& j, const BaselineConfig& c);
void from_json(const nlohmann::json& j, BaselineConfig& c);

/// Relative displacement in the source node's heading frame (3), cos/sin of
/// the heading change (2) and the elevation change (1).
inline constexpr int kEdgeAttributeDim = 6;
Eigen::Matrix<double, 1, kEdgeAttributeDim> edge_attributes(const Pose& source, const Pose& dest);

/// The dialog split the ways the baselines read it.
struct DialogTokens {
  std::vector<TokenId> full;     // every message
  std::vector<TokenId> history;  // all but the last message (may be empty)
  std::vector<TokenId> current;  // the last message
};

DialogTokens dialog_tokens(const Dialog& dialog, const Vocabulary& vocab,
                           std::size_t max_length);

/// Node inputs of one environment, sorted by node id; `graph` is needed by the GCN only.
template <typename Scalar>
struct EnvironmentView {
  const NavGraph* graph = nullptr;
  std::span<const PanoTensor<Scalar>> panos;
};

template <typename Scalar>
class BaselineModel {
 public:
  using Mat = autodiff::Matrix<Scalar>;
  using Var = autodiff::Var<Scalar>;
  using Tape = autodiff::Tape<Scalar>;
  using Params = autodiff::ParameterSet<Scalar>;

  BaselineModel(BaselineConfig config, std::uint64_t seed);
  BaselineModel(BaselineConfig config, Params params);

  static Params initial_parameters(const BaselineConfig& config, std::uint64_t seed);

  const BaselineConfig& config() const { return config_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  /// Final forward and backward LSTM states side by side (1 x 2H).
  Var encoder_states(Tape& t, const std::string& encoder, std::span<const TokenId> ids);
  /// Projection of encoder_states to H.
  Var encode_dialog(Tape& t, const std::string& encoder, std::span<const TokenId> ids);

  /// 1 x N node scores in the order of env.panos. Per-node attention weights
  /// over regions are appended to `attention_out` when given.
  Var logits(Tape& t, const EnvironmentView<Scalar>& env, const DialogTokens& dialog,
             std::vector<Mat>* attention_out = nullptr);
  Var loss(Tape& t, const EnvironmentView<Scalar>& env, const DialogTokens& dialog,
           std::size_t target);

  /// Softmax over nodes, in the order of env.panos.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> probabilities(const EnvironmentView<Scalar>& env,
                                                         const DialogTokens& dialog);
  /// Most probable node; ties go to the smallest id.
  std::string predict(const EnvironmentView<Scalar>& env, const DialogTokens& dialog);

 private:
  Var region_states(Tape& t, const PanoTensor<Scalar>& pano);
  Var fuse_and_score(Tape& t, Var visual, Var language);
  Var gcn_logits(Tape& t, const EnvironmentView<Scalar>& env, Var dialog);

  BaselineConfig config_;
  Params params_;
};

extern template class BaselineModel<float>;
extern template class BaselineModel<double>;

/// Uniform draw over the graph's nodes.
std::string random_baseline(const NavGraph& graph, std::mt19937_64& rng);
/// Node closest to the mean node position.
std::string center_baseline(const NavGraph& graph);

// Named entry points for the learned baselines.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> late_fusion_predict(BaselineModel<Scalar>& model,
                                                             const EnvironmentView<Scalar>& env,
                                                             const DialogTokens& dialog);
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> attention_predict(BaselineModel<Scalar>& model,
                                                           const EnvironmentView<Scalar>& env,
                                                           const DialogTokens& dialog);
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> history_attention_predict(
    BaselineModel<Scalar>& model, const EnvironmentView<Scalar>& env, const DialogTokens& dialog);
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gcn_predict(BaselineModel<Scalar>& model,
                                                     const EnvironmentView<Scalar>& env,
                                                     const DialogTokens& dialog);

}  // namespace graphloc
