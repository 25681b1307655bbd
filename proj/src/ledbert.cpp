#include "graphloc/ledbert.hpp"

#include "graphloc/error.hpp"
#include "graphloc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace graphloc {

namespace ad = autodiff;

void LedBertConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("LedBertConfig: " + msg); };
  if (vocab_size < Vocabulary::kReservedCount) fail("vocab_size smaller than the reserved tokens");
  if (feature_dim < 1) fail("feature_dim must be positive");
  if (heads < 1) fail("heads must be positive");
  if (text_hidden < 1 || text_hidden % heads != 0) fail("text_hidden not divisible by heads");
  if (visual_hidden < 1 || visual_hidden % heads != 0) fail("visual_hidden not divisible by heads");
  if (text_layers < 0 || visual_layers < 0) fail("negative layer count");
  if (ffn_multiplier < 1) fail("ffn_multiplier must be positive");
  if (max_text_length < 0 || max_regions < 1) fail("bad length limits");
  if (!(mask_rate > 0.0 && mask_rate <= 1.0)) fail("mask_rate outside (0,1]");
  std::set<int> seen;
  for (int i : co_attention_layers) {
    if (i < 0 || i >= std::min(text_layers, visual_layers)) {
      fail("co-attention index " + std::to_string(i) + " invalid for both streams");
    }
    if (!seen.insert(i).second) fail("duplicate co-attention index");
  }
  if (!std::is_sorted(co_attention_layers.begin(), co_attention_layers.end())) {
    fail("co-attention indices must be sorted");
  }
}

void to_json(nlohmann::json& j, const LedBertConfig& c) {
  j = {{"vocab_size", c.vocab_size},
       {"feature_dim", c.feature_dim},
       {"text_hidden", c.text_hidden},
       {"visual_hidden", c.visual_hidden},
       {"heads", c.heads},
       {"text_layers", c.text_layers},
       {"visual_layers", c.visual_layers},
       {"co_attention_layers", c.co_attention_layers},
       {"ffn_multiplier", c.ffn_multiplier},
       {"max_text_length", c.max_text_length},
       {"max_regions", c.max_regions},
       {"mask_rate", c.mask_rate}};
}

void from_json(const nlohmann::json& j, LedBertConfig& c) {
  LedBertConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.text_hidden = j.value("text_hidden", d.text_hidden);
  c.visual_hidden = j.value("visual_hidden", d.visual_hidden);
  c.heads = j.value("heads", d.heads);
  c.text_layers = j.value("text_layers", d.text_layers);
  c.visual_layers = j.value("visual_layers", d.visual_layers);
  c.co_attention_layers = j.value("co_attention_layers", d.co_attention_layers);
  c.ffn_multiplier = j.value("ffn_multiplier", d.ffn_multiplier);
  c.max_text_length = j.value("max_text_length", d.max_text_length);
  c.max_regions = j.value("max_regions", d.max_regions);
  c.mask_rate = j.value("mask_rate", d.mask_rate);
}

template <typename Scalar>
PanoTensor<Scalar> to_tensor(const PanoObservation& pano) {
  return {pano.node_id, visual_matrix(pano).template cast<Scalar>(),
          spatial_matrix(pano).template cast<Scalar>()};
}

template <typename Scalar>
std::vector<PanoTensor<Scalar>> to_tensors(const FeatureStore& store) {
  std::vector<PanoTensor<Scalar>> out;
  out.reserve(store.size());
  for (const auto& [id, pano] : store) out.push_back(to_tensor<Scalar>(pano));
  return out;
}

template PanoTensor<float> to_tensor<float>(const PanoObservation&);
template PanoTensor<double> to_tensor<double>(const PanoObservation&);
template std::vector<PanoTensor<float>> to_tensors<float>(const FeatureStore&);
template std::vector<PanoTensor<double>> to_tensors<double>(const FeatureStore&);

std::vector<std::size_t> choose_mask_positions(std::span<const TokenId> token_ids, double rate,
                                               std::mt19937_64& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (Vocabulary::is_maskable(token_ids[i])) candidates.push_back(i);
  }
  if (candidates.empty()) throw ValidationError("no maskable tokens in sequence");
  // The epsilon keeps exact products such as 0.15 * 20 from rounding up.
  const auto wanted =
      static_cast<std::size_t>(std::ceil(rate * static_cast<double>(token_ids.size()) - 1e-9));
  const std::size_t count = std::clamp<std::size_t>(wanted, 1, candidates.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

namespace {

std::string text_layer(int i) { return "text.layer" + std::to_string(i); }
std::string visual_layer(int i) { return "visual.layer" + std::to_string(i); }
std::string exchange(int i) { return "coattn" + std::to_string(i); }

}  // namespace

template <typename Scalar>
typename LedBert<Scalar>::Params LedBert<Scalar>::initial_parameters(const LedBertConfig& c,
                                                                     std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  Params ps;
  const Eigen::Index dt = c.text_hidden;
  const Eigen::Index dv = c.visual_hidden;
  constexpr double embed_std = 0.1;

  ps.add("text.token_embedding", ad::random_normal<Scalar>(c.vocab_size, dt, embed_std, rng));
  ps.add("text.position_embedding",
         ad::random_normal<Scalar>(c.max_text_length + 2, dt, embed_std, rng));
  ps.add("special.cls", ad::random_normal<Scalar>(1, dt, embed_std, rng));
  ps.add("special.sep", ad::random_normal<Scalar>(1, dt, embed_std, rng));
  ps.add("special.img", ad::random_normal<Scalar>(1, dv, embed_std, rng));
  nn::declare_linear(ps, "visual.feature_proj", c.feature_dim, dv, rng, false);
  nn::declare_linear(ps, "visual.spatial_proj", kSpatialDim, dv, rng, false);

  for (int i = 0; i < c.text_layers; ++i) {
    nn::declare_attention_block(ps, text_layer(i), dt, dt, dt * c.ffn_multiplier, rng);
  }
  for (int i = 0; i < c.visual_layers; ++i) {
    nn::declare_attention_block(ps, visual_layer(i), dv, dv, dv * c.ffn_multiplier, rng);
  }
  for (int i : c.co_attention_layers) {
    nn::declare_attention_block(ps, exchange(i) + ".text", dt, dv, dt * c.ffn_multiplier, rng);
    nn::declare_attention_block(ps, exchange(i) + ".visual", dv, dt, dv * c.ffn_multiplier, rng);
  }
  nn::declare_layer_norm(ps, "text.final_norm", dt);
  nn::declare_layer_norm(ps, "visual.final_norm", dv);

  const Eigen::Index d = c.joint_dim();
  if (dt != dv) {
    nn::declare_linear(ps, "head.text_proj", dt, d, rng, false);
    nn::declare_linear(ps, "head.visual_proj", dv, d, rng, false);
  }
  ps.add("head.weight", ad::glorot<Scalar>(d, 1, rng));
  ps.add("head.bias", Mat::Zero(1, 1));
  nn::declare_linear(ps, "mlm", dt, c.vocab_size, rng);
  return ps;
}

template <typename Scalar>
LedBert<Scalar>::LedBert(LedBertConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(initial_parameters(config_, seed)) {}

template <typename Scalar>
LedBert<Scalar>::LedBert(LedBertConfig config, Params params)
    : config_(std::move(config)), params_(std::move(params)) {
  const Params expected = initial_parameters(config_, 0);
  std::string problems;
  for (const auto& p : expected) {
    if (!params_.contains(p.name)) {
      problems += "\n  missing tensor " + p.name;
      continue;
    }
    const auto& got = params_[p.name].value;
    if (got.rows() != p.value.rows() || got.cols() != p.value.cols()) {
      problems += "\n  " + p.name + ": expected " + std::to_string(p.value.rows()) + "x" +
                  std::to_string(p.value.cols()) + ", got " + std::to_string(got.rows()) + "x" +
                  std::to_string(got.cols());
    }
  }
  if (!problems.empty()) throw ValidationError("LED-Bert parameter mismatch:" + problems);
}

template <typename Scalar>
void LedBert<Scalar>::check_inputs(const PanoTensor<Scalar>* pano,
                                   std::span<const TokenId> token_ids) const {
  if (static_cast<int>(token_ids.size()) > config_.max_text_length) {
    throw ValidationError("dialog of " + std::to_string(token_ids.size()) +
                          " tokens exceeds max_text_length " +
                          std::to_string(config_.max_text_length));
  }
  for (TokenId id : token_ids) {
    if (id < 0 || id >= config_.vocab_size) throw ValidationError("token id outside vocabulary");
  }
  if (pano) {
    if (pano->visual.rows() > config_.max_regions) {
      throw ValidationError("node '" + pano->node_id + "' has more than max_regions regions");
    }
    if (pano->visual.rows() < 1 || pano->visual.cols() != config_.feature_dim ||
        pano->spatial.rows() != pano->visual.rows() || pano->spatial.cols() != kSpatialDim) {
      throw ValidationError("node '" + pano->node_id + "' has malformed region tensors");
    }
  }
}

template <typename Scalar>
int LedBert<Scalar>::first_exchange() const {
  return config_.co_attention_layers.empty() ? -1 : config_.co_attention_layers.front();
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::embed_text(Tape& t,
                                                          std::span<const TokenId> token_ids) {
  check_inputs(nullptr, token_ids);
  std::vector<Var> parts{t.param(params_["special.cls"])};
  if (!token_ids.empty()) {
    parts.push_back(ad::gather_rows(t.param(params_["text.token_embedding"]), token_ids));
  }
  parts.push_back(t.param(params_["special.sep"]));
  Var tokens = ad::vstack(parts);
  Var positions = ad::rows(t.param(params_["text.position_embedding"]), 0, tokens.rows());
  return tokens + positions;
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::embed_visual(Tape& t,
                                                            const PanoTensor<Scalar>& pano) {
  check_inputs(&pano, {});
  Var regions = nn::linear(t, params_, "visual.feature_proj", t.constant(pano.visual)) +
                nn::linear(t, params_, "visual.spatial_proj", t.constant(pano.spatial));
  return ad::vstack(std::vector<Var>{t.param(params_["special.img"]), regions});
}

template <typename Scalar>
typename LedBert<Scalar>::Streams LedBert<Scalar>::embed_inputs(
    Tape& t, const PanoTensor<Scalar>& pano, std::span<const TokenId> token_ids) {
  return {embed_text(t, token_ids), embed_visual(t, pano)};
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::encode_text_prefix(Tape& t, Var text,
                                                                  bool text_only) {
  const int first = first_exchange();
  const int last = (text_only || first < 0) ? config_.text_layers - 1 : first;
  for (int i = 0; i <= last; ++i) text = nn::self_attention_block(t, params_, text_layer(i), text, config_.heads);
  if (text_only || first < 0) text = nn::layer_norm(t, params_, "text.final_norm", text);
  return text;
}

template <typename Scalar>
typename LedBert<Scalar>::Streams LedBert<Scalar>::co_attention(Tape& t, int layer, Var text,
                                                                Var visual,
                                                                std::vector<Mat>* text_probs,
                                                                std::vector<Mat>* visual_probs) {
  const std::string tp = exchange(layer) + ".text";
  const std::string vp = exchange(layer) + ".visual";
  Var text_normed = nn::layer_norm(t, params_, tp + ".attn_norm", text);
  Var visual_normed = nn::layer_norm(t, params_, vp + ".attn_norm", visual);
  Var new_text = nn::attention_block(t, params_, tp, text, text_normed, visual_normed,
                                     config_.heads, text_probs);
  Var new_visual = nn::attention_block(t, params_, vp, visual, visual_normed, text_normed,
                                       config_.heads, visual_probs);
  return {new_text, new_visual};
}

template <typename Scalar>
typename LedBert<Scalar>::Streams LedBert<Scalar>::encode_pair(Tape& t, Var text_prefix,
                                                              const PanoTensor<Scalar>& pano) {
  Var text = text_prefix;
  Var visual = embed_visual(t, pano);
  const int first = first_exchange();
  const int depth = std::max(config_.text_layers, config_.visual_layers);
  const auto& exchanges = config_.co_attention_layers;
  for (int i = 0; i < depth; ++i) {
    if (i > first && i < config_.text_layers) {
      text = nn::self_attention_block(t, params_, text_layer(i), text, config_.heads);
    }
    if (i < config_.visual_layers) {
      visual = nn::self_attention_block(t, params_, visual_layer(i), visual, config_.heads);
    }
    if (std::find(exchanges.begin(), exchanges.end(), i) != exchanges.end()) {
      auto s = co_attention(t, i, text, visual);
      text = s.text;
      visual = s.visual;
    }
  }
  if (first >= 0) text = nn::layer_norm(t, params_, "text.final_norm", text);
  visual = nn::layer_norm(t, params_, "visual.final_norm", visual);
  return {text, visual};
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::compatibility(Tape& t, Var h_cls, Var h_img) {
  if (config_.text_hidden != config_.visual_hidden) {
    h_cls = nn::linear(t, params_, "head.text_proj", h_cls);
    h_img = nn::linear(t, params_, "head.visual_proj", h_img);
  }
  return ad::matmul(h_cls * h_img, t.param(params_["head.weight"])) + t.param(params_["head.bias"]);
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::pair_score(Tape& t, Var text_prefix,
                                                          const PanoTensor<Scalar>& pano) {
  Streams s = encode_pair(t, text_prefix, pano);
  return compatibility(t, ad::row(s.text, 0), ad::row(s.visual, 0));
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::environment_logits(
    Tape& t, std::span<const PanoTensor<Scalar>> panos, std::span<const TokenId> token_ids) {
  if (panos.empty()) throw ValidationError("environment without nodes");
  Var prefix = encode_text_prefix(t, embed_text(t, token_ids));
  std::vector<Var> scores;
  scores.reserve(panos.size());
  for (const auto& pano : panos) scores.push_back(pair_score(t, prefix, pano));
  return ad::hstack(scores);
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::localization_loss(
    Tape& t, std::span<const PanoTensor<Scalar>> panos, std::span<const TokenId> token_ids,
    std::size_t target, std::span<const std::size_t> candidates) {
  if (target >= panos.size()) throw DataError("target node index outside environment");
  if (candidates.empty()) {
    Var logits = environment_logits(t, panos, token_ids);
    const std::size_t targets[] = {target};
    return ad::softmax_cross_entropy(logits, std::span<const std::size_t>(targets));
  }
  std::vector<PanoTensor<Scalar>> subset;
  std::size_t target_in_subset = candidates.size();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] >= panos.size()) throw DataError("candidate node index outside environment");
    if (candidates[i] == target) target_in_subset = i;
    subset.push_back(panos[candidates[i]]);
  }
  if (target_in_subset == candidates.size()) {
    throw ValidationError("candidate list must contain the target node");
  }
  Var logits = environment_logits(t, subset, token_ids);
  const std::size_t targets[] = {target_in_subset};
  return ad::softmax_cross_entropy(logits, std::span<const std::size_t>(targets));
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::mlm_loss(Tape& t, const PanoTensor<Scalar>* pano,
                                                        std::span<const TokenId> token_ids,
                                                        std::span<const std::size_t> positions) {
  if (positions.empty()) throw ValidationError("mlm_loss needs at least one masked position");
  std::vector<TokenId> masked(token_ids.begin(), token_ids.end());
  std::vector<TokenId> targets;
  std::vector<std::size_t> rows;
  for (std::size_t p : positions) {
    if (p >= masked.size() || !Vocabulary::is_maskable(token_ids[p])) {
      throw ValidationError("mask position " + std::to_string(p) + " is not maskable");
    }
    targets.push_back(token_ids[p]);
    masked[p] = Vocabulary::kMask;
    rows.push_back(p + 1);  // skip [CLS]
  }
  Var text = embed_text(t, masked);
  if (pano == nullptr) {
    text = encode_text_prefix(t, text, true);
  } else {
    text = encode_pair(t, encode_text_prefix(t, text), *pano).text;
  }
  Var picked = ad::vstack([&] {
    std::vector<Var> r;
    for (std::size_t row : rows) r.push_back(ad::row(text, static_cast<Eigen::Index>(row)));
    return r;
  }());
  Var logits = nn::linear(t, params_, "mlm", picked);
  return ad::softmax_cross_entropy(logits, std::span<const TokenId>(targets));
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::mlm_loss(Tape& t, const PanoTensor<Scalar>* pano,
                                                        std::span<const TokenId> token_ids,
                                                        std::mt19937_64& rng) {
  const auto positions = choose_mask_positions(token_ids, config_.mask_rate, rng);
  return mlm_loss(t, pano, token_ids, positions);
}

template <typename Scalar>
typename LedBert<Scalar>::Var LedBert<Scalar>::alignment_loss(Tape& t,
                                                              const PanoTensor<Scalar>& pano,
                                                              std::span<const TokenId> token_ids,
                                                              bool matched) {
  Var prefix = encode_text_prefix(t, embed_text(t, token_ids));
  return ad::sigmoid_cross_entropy(pair_score(t, prefix, pano), matched);
}

template <typename Scalar>
PairRepresentation<Scalar> LedBert<Scalar>::forward(const PanoTensor<Scalar>& pano,
                                                    std::span<const TokenId> token_ids) {
  Tape t;
  Streams s = encode_pair(t, encode_text_prefix(t, embed_text(t, token_ids)), pano);
  return {s.text.value().row(0), s.visual.value().row(0)};
}

template <typename Scalar>
Scalar LedBert<Scalar>::score_pair(const PanoTensor<Scalar>& pano,
                                   std::span<const TokenId> token_ids) {
  Tape t;
  return pair_score(t, encode_text_prefix(t, embed_text(t, token_ids)), pano).scalar();
}

template <typename Scalar>
EnvironmentScores<Scalar> LedBert<Scalar>::score_environment(
    std::span<const PanoTensor<Scalar>> panos, std::span<const TokenId> token_ids) {
  if (panos.empty()) throw ValidationError("environment without nodes");
  std::vector<std::size_t> order(panos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return panos[a].node_id < panos[b].node_id; });

  Tape t;
  Var prefix = encode_text_prefix(t, embed_text(t, token_ids));
  EnvironmentScores<Scalar> out;
  out.scores.resize(static_cast<Eigen::Index>(panos.size()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.node_ids.push_back(panos[order[i]].node_id);
    out.scores(static_cast<Eigen::Index>(i)) = pair_score(t, prefix, panos[order[i]]).scalar();
  }
  const Scalar m = out.scores.maxCoeff();
  out.probabilities = (out.scores.array() - m).exp();
  out.probabilities /= out.probabilities.sum();
  return out;
}

template <typename Scalar>
std::string LedBert<Scalar>::predict(std::span<const PanoTensor<Scalar>> panos,
                                     std::span<const TokenId> token_ids) {
  const auto s = score_environment(panos, token_ids);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < s.scores.size(); ++i) {
    if (s.scores(i) > s.scores(best)) best = i;
  }
  return s.node_ids[static_cast<std::size_t>(best)];
}

template class LedBert<float>;
template class LedBert<double>;

}  // namespace graphloc
