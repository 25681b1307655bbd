#include "graphloc/baselines.hpp"

#include "graphloc/error.hpp"
#include "graphloc/nn.hpp"

#include <cmath>

namespace graphloc {

namespace ad = autodiff;

std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::late_fusion: return "late_fusion";
    case BaselineKind::attention: return "attention";
    case BaselineKind::history_attention: return "history_attention";
    case BaselineKind::gcn: return "gcn";
  }
  return "late_fusion";
}

BaselineKind parse_baseline_kind(std::string_view s) {
  for (auto k : {BaselineKind::late_fusion, BaselineKind::attention,
                 BaselineKind::history_attention, BaselineKind::gcn}) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError("unknown baseline '" + std::string(s) + "'");
}

void BaselineConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("BaselineConfig: " + msg); };
  if (vocab_size < Vocabulary::kReservedCount) fail("vocab_size smaller than the reserved tokens");
  if (feature_dim < 1 || embed_dim < 1 || hidden < 1) fail("dimensions must be positive");
  if (gcn_layers < 1) fail("gcn_layers must be >= 1");
  if (max_text_length < 1) fail("max_text_length must be positive");
}

void to_json(nlohmann::json& j, const BaselineConfig& c) {
  j = {{"kind", to_string(c.kind)},     {"vocab_size", c.vocab_size},
       {"feature_dim", c.feature_dim},  {"embed_dim", c.embed_dim},
       {"hidden", c.hidden},            {"gcn_layers", c.gcn_layers},
       {"max_text_length", c.max_text_length}};
}

void from_json(const nlohmann::json& j, BaselineConfig& c) {
  BaselineConfig d;
  c.kind = parse_baseline_kind(j.value("kind", std::string(to_string(d.kind))));
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.hidden = j.value("hidden", d.hidden);
  c.gcn_layers = j.value("gcn_layers", d.gcn_layers);
  c.max_text_length = j.value("max_text_length", d.max_text_length);
}

Eigen::Matrix<double, 1, kEdgeAttributeDim> edge_attributes(const Pose& source, const Pose& dest) {
  const Eigen::Vector3d delta = dest.position - source.position;
  const double c = std::cos(source.heading);
  const double s = std::sin(source.heading);
  const double turn = dest.heading - source.heading;
  Eigen::Matrix<double, 1, kEdgeAttributeDim> e;
  e << c * delta.x() + s * delta.y(), -s * delta.x() + c * delta.y(), delta.z(), std::cos(turn),
      std::sin(turn), dest.elevation - source.elevation;
  return e;
}

DialogTokens dialog_tokens(const Dialog& dialog, const Vocabulary& vocab, std::size_t max_length) {
  validate_dialog(dialog);
  DialogTokens out;
  out.full = truncate_history(flatten_dialog(dialog, vocab), max_length);
  Dialog history{{dialog.messages.begin(), dialog.messages.end() - 1}};
  out.history = truncate_history(flatten_dialog(history, vocab), max_length);
  out.current = truncate_history(flatten_dialog(Dialog{{dialog.messages.back()}}, vocab), max_length);
  return out;
}

namespace {

std::vector<std::string> encoder_names(BaselineKind kind) {
  if (kind == BaselineKind::history_attention) return {"history", "current"};
  return {"dialog"};
}

}  // namespace

template <typename Scalar>
typename BaselineModel<Scalar>::Params BaselineModel<Scalar>::initial_parameters(
    const BaselineConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  Params ps;
  const Eigen::Index h = c.hidden;
  ps.add("words.embedding", ad::random_normal<Scalar>(c.vocab_size, c.embed_dim, 0.1, rng));
  for (const auto& name : encoder_names(c.kind)) {
    for (const char* dir : {".fwd", ".bwd"}) {
      const std::string p = "enc." + name + dir;
      ps.add(p + ".input", ad::glorot<Scalar>(c.embed_dim, 4 * h, rng));
      ps.add(p + ".recurrent", ad::glorot<Scalar>(h, 4 * h, rng));
      Mat bias = Mat::Zero(1, 4 * h);
      bias.middleCols(h, h).setOnes();  // forget gate
      ps.add(p + ".bias", std::move(bias));
    }
    nn::declare_linear(ps, "enc." + name + ".proj", 2 * h, h, rng);
  }

  if (c.kind == BaselineKind::gcn) {
    nn::declare_linear(ps, "gcn.input", c.feature_dim + h, h, rng);
    for (int l = 0; l < c.gcn_layers; ++l) {
      const std::string p = "gcn.layer" + std::to_string(l);
      nn::declare_linear(ps, p + ".message", h + kEdgeAttributeDim, h, rng);
      nn::declare_linear(ps, p + ".self", h, h, rng);
    }
    ps.add("gcn.out.weight", ad::glorot<Scalar>(1, h, rng));
    return ps;
  }

  nn::declare_linear(ps, "region.proj", c.feature_dim, h, rng);
  if (c.kind == BaselineKind::late_fusion) {
    nn::declare_linear(ps, "pool.hidden", h, h, rng);
    ps.add("pool.score.weight", ad::glorot<Scalar>(1, h, rng));
  } else {
    nn::declare_linear(ps, "attn.query", h, h, rng);
  }
  if (c.kind == BaselineKind::history_attention) {
    ps.add("history.null", ad::random_normal<Scalar>(1, h, 0.1, rng));
  }
  nn::declare_linear(ps, "mlp.hidden", h, h, rng);
  nn::declare_linear(ps, "mlp.out", h, 1, rng);
  return ps;
}

template <typename Scalar>
BaselineModel<Scalar>::BaselineModel(BaselineConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(initial_parameters(config_, seed)) {}

template <typename Scalar>
BaselineModel<Scalar>::BaselineModel(BaselineConfig config, Params params)
    : config_(std::move(config)), params_(std::move(params)) {
  const Params expected = initial_parameters(config_, 0);
  std::string problems;
  for (const auto& p : expected) {
    if (!params_.contains(p.name)) {
      problems += "\n  missing tensor " + p.name;
    } else if (params_[p.name].value.rows() != p.value.rows() ||
               params_[p.name].value.cols() != p.value.cols()) {
      problems += "\n  " + p.name + ": shape mismatch";
    }
  }
  if (!problems.empty()) throw ValidationError("baseline parameter mismatch:" + problems);
}

template <typename Scalar>
typename BaselineModel<Scalar>::Var BaselineModel<Scalar>::encoder_states(
    Tape& t, const std::string& encoder, std::span<const TokenId> ids) {
  if (ids.empty()) throw ValidationError("cannot encode an empty token sequence");
  for (TokenId id : ids) {
    if (id < 0 || id >= config_.vocab_size) throw ValidationError("token id outside vocabulary");
  }
  const Eigen::Index h = config_.hidden;
  const auto steps = static_cast<Eigen::Index>(ids.size());
  Var words = ad::gather_rows(t.param(params_["words.embedding"]), ids);

  auto run = [&](const std::string& dir, bool reverse) {
    const std::string p = "enc." + encoder + dir;
    Var inputs = ad::matmul(words, t.param(params_[p + ".input"]));
    Var recurrent = t.param(params_[p + ".recurrent"]);
    Var bias = t.param(params_[p + ".bias"]);
    Var state = t.constant(Mat::Zero(1, h));
    Var cell = t.constant(Mat::Zero(1, h));
    for (Eigen::Index s = 0; s < steps; ++s) {
      const Eigen::Index step = reverse ? steps - 1 - s : s;
      Var gates = ad::row(inputs, step) + ad::matmul(state, recurrent) + bias;
      Var in = ad::sigmoid(ad::cols(gates, 0, h));
      Var forget = ad::sigmoid(ad::cols(gates, h, h));
      Var candidate = ad::tanh(ad::cols(gates, 2 * h, h));
      Var out = ad::sigmoid(ad::cols(gates, 3 * h, h));
      cell = forget * cell + in * candidate;
      state = out * ad::tanh(cell);
    }
    return state;
  };
  return ad::hstack(std::vector<Var>{run(".fwd", false), run(".bwd", true)});
}

template <typename Scalar>
typename BaselineModel<Scalar>::Var BaselineModel<Scalar>::encode_dialog(
    Tape& t, const std::string& encoder, std::span<const TokenId> ids) {
  return nn::linear(t, params_, "enc." + encoder + ".proj", encoder_states(t, encoder, ids));
}

template <typename Scalar>
typename BaselineModel<Scalar>::Var BaselineModel<Scalar>::region_states(
    Tape& t, const PanoTensor<Scalar>& pano) {
  if (pano.visual.rows() < 1 || pano.visual.cols() != config_.feature_dim) {
    throw ValidationError("node '" + pano.node_id + "' has malformed region features");
  }
  return ad::tanh(nn::linear(t, params_, "region.proj", t.constant(pano.visual)));
}

template <typename Scalar>
typename BaselineModel<Scalar>::Var BaselineModel<Scalar>::fuse_and_score(Tape& t, Var visual,
                                                                          Var language) {
  Var hidden = ad::relu(nn::linear(t, params_, "mlp.hidden", visual * language));
  return nn::linear(t, params_, "mlp.out", hidden);
}

template <typename Scalar>
typename BaselineModel<Scalar>::Var BaselineModel<Scalar>::logits(Tape& t,
                                                                  const EnvironmentView<Scalar>& env,
                                                                  const DialogTokens& dialog,
                                                                  std::vector<Mat>* attention_out) {
  if (env.panos.empty()) throw ValidationError("environment without nodes");
  const auto kind = config_.kind;

  if (kind == BaselineKind::gcn) return gcn_logits(t, env, encode_dialog(t, "dialog", dialog.full));

  Var language{};
  Var query{};
  if (kind == BaselineKind::history_attention) {
    Var history = dialog.history.empty() ? t.param(params_["history.null"])
                                         : encode_dialog(t, "history", dialog.history);
    query = nn::linear(t, params_, "attn.query", history);
    language = encode_dialog(t, "current", dialog.current);
  } else {
    language = encode_dialog(t, "dialog", dialog.full);
    if (kind == BaselineKind::attention) query = nn::linear(t, params_, "attn.query", language);
  }

  const Scalar inv_sqrt_h = Scalar(1) / std::sqrt(static_cast<Scalar>(config_.hidden));
  std::vector<Var> scores;
  for (const auto& pano : env.panos) {
    Var regions = region_states(t, pano);
    Var weights{};
    if (kind == BaselineKind::late_fusion) {
      Var keys = ad::tanh(nn::linear(t, params_, "pool.hidden", regions));
      weights = ad::softmax_rows(ad::matmul_nt(t.param(params_["pool.score.weight"]), keys));
    } else {
      weights = ad::softmax_rows(ad::scale(ad::matmul_nt(query, regions), inv_sqrt_h));
    }
    if (attention_out) attention_out->push_back(weights.value());
    scores.push_back(fuse_and_score(t, ad::matmul(weights, regions), language));
  }
  return ad::hstack(scores);
}

template <typename Scalar>
typename BaselineModel<Scalar>::Var BaselineModel<Scalar>::gcn_logits(
    Tape& t, const EnvironmentView<Scalar>& env, Var dialog) {
  if (env.graph == nullptr) throw ValidationError("the GCN baseline needs the navigation graph");
  const NavGraph& graph = *env.graph;
  const auto n = static_cast<Eigen::Index>(env.panos.size());
  if (graph.size() != env.panos.size()) {
    throw DataError("graph '" + graph.environment_id() + "' and its features disagree on node count");
  }
  // Node order follows env.panos; map graph indices onto it.
  std::vector<Eigen::Index> slot(graph.size());
  Mat pooled(n, config_.feature_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& pano = env.panos[static_cast<std::size_t>(i)];
    if (pano.visual.cols() != config_.feature_dim || pano.visual.rows() < 1) {
      throw ValidationError("node '" + pano.node_id + "' has malformed region features");
    }
    slot[graph.index_of(pano.node_id)] = i;
    pooled.row(i) = pano.visual.colwise().mean();
  }

  std::vector<Var> dialog_rows(static_cast<std::size_t>(n), dialog);
  Var h = ad::relu(nn::linear(t, params_, "gcn.input",
                              ad::hstack(std::vector<Var>{t.constant(std::move(pooled)),
                                                          ad::vstack(dialog_rows)})));

  // Directed edges source -> dest, averaged at the destination.
  std::vector<Eigen::Index> sources;
  std::vector<Eigen::Index> dests;
  std::vector<Eigen::Matrix<double, 1, kEdgeAttributeDim>> attrs;
  const auto& adj = graph.adjacency();
  for (std::size_t gi = 0; gi < graph.size(); ++gi) {
    for (auto [gj, len] : adj[gi]) {
      sources.push_back(slot[gj]);
      dests.push_back(slot[gi]);
      attrs.push_back(edge_attributes(graph.nodes()[gj].pose, graph.nodes()[gi].pose));
    }
  }
  const auto e = static_cast<Eigen::Index>(sources.size());
  Mat edge_attr(e, kEdgeAttributeDim);
  Mat mean_at_dest = Mat::Zero(n, e);
  Eigen::VectorXd in_degree = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < e; ++k) in_degree(dests[static_cast<std::size_t>(k)]) += 1.0;
  for (Eigen::Index k = 0; k < e; ++k) {
    edge_attr.row(k) = attrs[static_cast<std::size_t>(k)].template cast<Scalar>();
    const auto d = dests[static_cast<std::size_t>(k)];
    mean_at_dest(d, k) = static_cast<Scalar>(1.0 / in_degree(d));
  }

  for (int l = 0; l < config_.gcn_layers; ++l) {
    const std::string p = "gcn.layer" + std::to_string(l);
    Var update = nn::linear(t, params_, p + ".self", h);
    if (e > 0) {
      Var messages = nn::linear(
          t, params_, p + ".message",
          ad::hstack(std::vector<Var>{ad::gather_rows(h, std::span<const Eigen::Index>(sources)),
                                      t.constant(edge_attr)}));
      update = update + ad::matmul(t.constant(mean_at_dest), messages);
    }
    h = ad::relu(update);
  }
  return ad::matmul_nt(t.param(params_["gcn.out.weight"]), h);
}

template <typename Scalar>
typename BaselineModel<Scalar>::Var BaselineModel<Scalar>::loss(Tape& t,
                                                                const EnvironmentView<Scalar>& env,
                                                                const DialogTokens& dialog,
                                                                std::size_t target) {
  if (target >= env.panos.size()) throw DataError("target node index outside environment");
  const std::size_t targets[] = {target};
  return ad::softmax_cross_entropy(logits(t, env, dialog), std::span<const std::size_t>(targets));
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> BaselineModel<Scalar>::probabilities(
    const EnvironmentView<Scalar>& env, const DialogTokens& dialog) {
  Tape t;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z = logits(t, env, dialog).value().row(0).transpose();
  z = (z.array() - z.maxCoeff()).exp();
  return z / z.sum();
}

template <typename Scalar>
std::string BaselineModel<Scalar>::predict(const EnvironmentView<Scalar>& env,
                                           const DialogTokens& dialog) {
  Tape t;
  const Mat z = logits(t, env, dialog).value();
  std::size_t best = 0;
  for (std::size_t i = 1; i < env.panos.size(); ++i) {
    const auto zi = z(0, static_cast<Eigen::Index>(i));
    const auto zb = z(0, static_cast<Eigen::Index>(best));
    if (zi > zb || (zi == zb && env.panos[i].node_id < env.panos[best].node_id)) best = i;
  }
  return env.panos[best].node_id;
}

template class BaselineModel<float>;
template class BaselineModel<double>;

std::string random_baseline(const NavGraph& graph, std::mt19937_64& rng) {
  if (graph.empty()) throw ValidationError("random baseline on an empty graph");
  return graph.nodes()[std::uniform_int_distribution<std::size_t>(0, graph.size() - 1)(rng)].id;
}

std::string center_baseline(const NavGraph& graph) { return centroid_node(graph); }

namespace {

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> predict_as(BaselineModel<Scalar>& model, BaselineKind kind,
                                                    const EnvironmentView<Scalar>& env,
                                                    const DialogTokens& dialog) {
  if (model.config().kind != kind) {
    throw ValidationError("model is a " + std::string(to_string(model.config().kind)) +
                          " baseline, not " + std::string(to_string(kind)));
  }
  return model.probabilities(env, dialog);
}

}  // namespace

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> late_fusion_predict(BaselineModel<Scalar>& model,
                                                             const EnvironmentView<Scalar>& env,
                                                             const DialogTokens& dialog) {
  return predict_as(model, BaselineKind::late_fusion, env, dialog);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> attention_predict(BaselineModel<Scalar>& model,
                                                           const EnvironmentView<Scalar>& env,
                                                           const DialogTokens& dialog) {
  return predict_as(model, BaselineKind::attention, env, dialog);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> history_attention_predict(
    BaselineModel<Scalar>& model, const EnvironmentView<Scalar>& env, const DialogTokens& dialog) {
  return predict_as(model, BaselineKind::history_attention, env, dialog);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gcn_predict(BaselineModel<Scalar>& model,
                                                     const EnvironmentView<Scalar>& env,
                                                     const DialogTokens& dialog) {
  return predict_as(model, BaselineKind::gcn, env, dialog);
}

#define GRAPHLOC_INSTANTIATE_PREDICTORS(S)                                                      \
  template Eigen::Matrix<S, Eigen::Dynamic, 1> late_fusion_predict(                             \
      BaselineModel<S>&, const EnvironmentView<S>&, const DialogTokens&);                       \
  template Eigen::Matrix<S, Eigen::Dynamic, 1> attention_predict(                               \
      BaselineModel<S>&, const EnvironmentView<S>&, const DialogTokens&);                       \
  template Eigen::Matrix<S, Eigen::Dynamic, 1> history_attention_predict(                       \
      BaselineModel<S>&, const EnvironmentView<S>&, const DialogTokens&);                       \
  template Eigen::Matrix<S, Eigen::Dynamic, 1> gcn_predict(BaselineModel<S>&,                   \
                                                           const EnvironmentView<S>&,           \
                                                           const DialogTokens&);

GRAPHLOC_INSTANTIATE_PREDICTORS(float)
GRAPHLOC_INSTANTIATE_PREDICTORS(double)

#undef GRAPHLOC_INSTANTIATE_PREDICTORS

}  // namespace graphloc
