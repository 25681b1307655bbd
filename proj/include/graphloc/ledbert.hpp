#pragma once

// LED-Bert: a two-stream transformer that scores how well a dialog matches one
// panoramic node. The text stream reads [CLS] w_1..w_L [SEP], the visual
// stream reads [IMG] r_1..r_k, and the streams exchange information only in
// co-attention layers, where each stream's queries attend over the other
// stream's keys and values.

#include "graphloc/autodiff.hpp"
#include "graphloc/episodes.hpp"
#include "graphloc/features.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace graphloc {

struct LedBertConfig {
  int vocab_size = 0;
  int feature_dim = 2048;  // width of the raw region vectors
  int text_hidden = 64;
  int visual_hidden = 64;
  int heads = 4;
  int text_layers = 2;
  int visual_layers = 2;
  /// A co-attention exchange runs after layer i of both streams.
  std::vector<int> co_attention_layers = {1};
  int ffn_multiplier = 2;
  int max_text_length = 160;  // L_max, dialog tokens excluding CLS/SEP
  int max_regions = 36;       // k_max
  double mask_rate = 0.15;

  /// Throws ValidationError on inconsistent dimensions or layer indices.
  void validate() const;
  /// Width of the compatibility head.
  int joint_dim() const { return std::min(text_hidden, visual_hidden); }

  friend bool operator==(const LedBertConfig&, const LedBertConfig&) = default;
};

void to_json(nlohmann::json& j, const LedBertConfig& c);
void from_json(const nlohmann::json& j, LedBertConfig& c);

/// Region inputs of one node converted to the model's scalar type.
template <typename Scalar>
struct PanoTensor {
  std::string node_id;
  autodiff::Matrix<Scalar> visual;   // k x feature_dim
  autodiff::Matrix<Scalar> spatial;  // k x 11
};

template <typename Scalar>
PanoTensor<Scalar> to_tensor(const PanoObservation& pano);

/// Tensors for every node of an environment, sorted by node id.
template <typename Scalar>
std::vector<PanoTensor<Scalar>> to_tensors(const FeatureStore& store);

template <typename Scalar>
struct PairRepresentation {
  autodiff::RowVector<Scalar> h_cls;
  autodiff::RowVector<Scalar> h_img;
};

template <typename Scalar>
struct EnvironmentScores {
  std::vector<std::string> node_ids;  // lexicographic
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scores;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> probabilities;
};

/// Positions (into token_ids) replaced by [MASK]: ceil(rate * L) of the
/// maskable positions, sorted. Throws ValidationError when none are maskable.
std::vector<std::size_t> choose_mask_positions(std::span<const TokenId> token_ids, double rate,
                                               std::mt19937_64& rng);

template <typename Scalar>
class LedBert {
 public:
  using Mat = autodiff::Matrix<Scalar>;
  using Var = autodiff::Var<Scalar>;
  using Tape = autodiff::Tape<Scalar>;
  using Params = autodiff::ParameterSet<Scalar>;

  struct Streams {
    Var text;
    Var visual;
  };

  /// Fresh, seeded initialisation.
  LedBert(LedBertConfig config, std::uint64_t seed);
  /// Adopts existing tensors; every expected tensor must be present with the
  /// expected shape.
  LedBert(LedBertConfig config, Params params);

  static Params initial_parameters(const LedBertConfig& config, std::uint64_t seed);

  const LedBertConfig& config() const { return config_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  // ---- graph construction (differentiable)

  Streams embed_inputs(Tape& t, const PanoTensor<Scalar>& pano,
                       std::span<const TokenId> token_ids);
  Var embed_text(Tape& t, std::span<const TokenId> token_ids);
  Var embed_visual(Tape& t, const PanoTensor<Scalar>& pano);

  /// Text layers that run before the first co-attention exchange (all of them
  /// when `text_only` or when there is no exchange). Node independent.
  Var encode_text_prefix(Tape& t, Var text_embedding, bool text_only = false);

  /// One exchange: text queries over visual keys/values and vice versa, each
  /// followed by its stream's feed-forward sublayer. Per-head attention
  /// matrices are written to the optional outputs.
  Streams co_attention(Tape& t, int layer, Var text, Var visual,
                       std::vector<Mat>* text_probs = nullptr,
                       std::vector<Mat>* visual_probs = nullptr);

  /// Runs the rest of both streams for one node, ending with the final norms.
  Streams encode_pair(Tape& t, Var text_prefix, const PanoTensor<Scalar>& pano);

  /// w . (proj(h_cls) * proj(h_img)) + b
  Var compatibility(Tape& t, Var h_cls, Var h_img);
  Var pair_score(Tape& t, Var text_prefix, const PanoTensor<Scalar>& pano);

  /// 1 x N scores, in the order of `panos`.
  Var environment_logits(Tape& t, std::span<const PanoTensor<Scalar>> panos,
                         std::span<const TokenId> token_ids);

  /// -log softmax(scores)[target]. With `candidates` non-empty only those node
  /// indices (which must include the target) are scored.
  Var localization_loss(Tape& t, std::span<const PanoTensor<Scalar>> panos,
                        std::span<const TokenId> token_ids, std::size_t target,
                        std::span<const std::size_t> candidates = {});

  /// Cross-entropy of the MLM head at `positions`, after replacing them with
  /// [MASK]. `pano == nullptr` runs the text stream alone.
  Var mlm_loss(Tape& t, const PanoTensor<Scalar>* pano, std::span<const TokenId> token_ids,
               std::span<const std::size_t> positions);
  Var mlm_loss(Tape& t, const PanoTensor<Scalar>* pano, std::span<const TokenId> token_ids,
               std::mt19937_64& rng);

  /// Binary cross-entropy of sigmoid(score) against `matched`.
  Var alignment_loss(Tape& t, const PanoTensor<Scalar>& pano, std::span<const TokenId> token_ids,
                     bool matched);

  // ---- inference

  PairRepresentation<Scalar> forward(const PanoTensor<Scalar>& pano,
                                     std::span<const TokenId> token_ids);
  Scalar score_pair(const PanoTensor<Scalar>& pano, std::span<const TokenId> token_ids);
  /// Softmax over nodes, reported in lexicographic node-id order whatever the
  /// order of `panos`.
  EnvironmentScores<Scalar> score_environment(std::span<const PanoTensor<Scalar>> panos,
                                              std::span<const TokenId> token_ids);
  /// Highest-scoring node; ties go to the smallest id.
  std::string predict(std::span<const PanoTensor<Scalar>> panos,
                      std::span<const TokenId> token_ids);

 private:
  void check_inputs(const PanoTensor<Scalar>* pano, std::span<const TokenId> token_ids) const;
  int first_exchange() const;

  LedBertConfig config_;
  Params params_;
};

extern template class LedBert<float>;
extern template class LedBert<double>;

}  // namespace graphloc
