#pragma once

// The four ways of conditioning a GRU language model on an image, behind one
// shared skeleton: token embedding -> GRU -> output layer -> softmax, with an
// image projection layer feeding the pipeline at an architecture-specific
// point:
//
//   init_inject  projected image becomes the initial GRU state
//   pre_inject   projected image is consumed as the first GRU input
//   par_inject   projected image is concatenated to every word embedding
//   merge        GRU sees only words; the output layer sees
//                [projected image, final state]
//
// The embedding width, the projection width and the hidden width are all the
// same `layer_size`, so par_inject widens the GRU input to 2*layer_size and
// merge widens the output layer input to 2*layer_size.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caprnn/error.hpp"
#include "caprnn/layers.hpp"
#include "caprnn/rng.hpp"
#include "caprnn/tensor.hpp"
#include "caprnn/types.hpp"

namespace caprnn {

enum class ArchitectureKind { init_inject, pre_inject, par_inject, merge };

enum class InitMethod { normal, xavier_normal };

enum class RnnInitState { zeros, learnable, image };

struct DropoutSites {
  bool image = false;       // raw (normalized) image vector
  bool image_proj = false;  // output of the image projection layer
  bool embedding = false;   // word embeddings, fresh mask per timestep
  bool rnn_output = false;  // GRU output on its way to the output layer
  bool any() const { return image || image_proj || embedding || rnn_output; }

  bool operator==(const DropoutSites&) const = default;
};

/// Dropout keep-scale: inverted dropout at rate 0.5 doubles surviving
/// activations during training and applies nothing at evaluation time.
inline constexpr double kDropoutRate = 0.5;

/// L2 coefficient used whenever weight decay is enabled.
inline constexpr double kL2Coefficient = 1e-8;

struct ModelConfig {
  ArchitectureKind kind = ArchitectureKind::merge;
  std::size_t layer_size = 128;   // embedding = projection = hidden width
  std::size_t vocab_size = 0;     // includes the three special tokens
  std::size_t image_dim = 4096;
  InitMethod init_method = InitMethod::normal;
  double init_range = 0.1;        // weights are clipped to [-range, +range]
  bool normalize_image = true;
  Activation image_activation = Activation::none;  // none | relu
  RnnInitState rnn_init_state = RnnInitState::zeros;
  bool l2_enabled = false;
  DropoutSites dropout_sites;
  std::size_t minibatch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t beam_width = 3;

  std::size_t gru_input_dim() const {
    return kind == ArchitectureKind::par_inject ? 2 * layer_size : layer_size;
  }
  std::size_t output_input_dim() const {
    return kind == ArchitectureKind::merge ? 2 * layer_size : layer_size;
  }

  void validate() const {
    if (layer_size == 0) throw ConfigError("layer_size must be positive");
    if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    if (image_dim == 0) throw ConfigError("image_dim must be positive");
    if (!(init_range > 0)) throw ConfigError("init_range must be positive");
    if (minibatch_size == 0) throw ConfigError("minibatch_size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (beam_width == 0) throw ConfigError("beam_width must be positive");
    if (image_activation == Activation::softmax)
      throw ConfigError("image_activation must be 'none' or 'relu'");
    const bool is_init = kind == ArchitectureKind::init_inject;
    if (is_init && rnn_init_state != RnnInitState::image)
      throw ConfigError(
          "init_inject models take their initial state from the image; set "
          "rnn_init_state to 'image'");
    if (!is_init && rnn_init_state == RnnInitState::image)
      throw ConfigError(
          "rnn_init_state 'image' is only valid for init_inject models");
  }
};

template <class T>
struct ParamT {
  std::string name;
  TensorT<T> tensor;
  bool regularized;  // weight matrices and embeddings yes; biases and s0 no
};

template <class T>
struct CaptionModelT {
  ModelConfig config;
  EmbeddingTableT<T> embedding;  // vocab_size x layer_size
  GruCellT<T> gru;
  DenseLayerT<T> ff_img;  // image_dim x layer_size
  DenseLayerT<T> ff_out;  // output_input_dim x vocab_size, softmax
  TensorT<T> s0;          // learnable initial state (layer_size), else unused

  bool has_learnable_s0() const {
    return config.rnn_init_state == RnnInitState::learnable;
  }

  /// All parameters in their fixed serialization order.
  std::vector<ParamT<T>> parameters() const {
    std::vector<ParamT<T>> p = {
        {"embedding.table", embedding.table, true},
        {"gru.w_xr", gru.w_xr, true},
        {"gru.w_sr", gru.w_sr, true},
        {"gru.b_r", gru.b_r, false},
        {"gru.w_xu", gru.w_xu, true},
        {"gru.w_su", gru.w_su, true},
        {"gru.b_u", gru.b_u, false},
        {"gru.w_xc", gru.w_xc, true},
        {"gru.w_sc", gru.w_sc, true},
        {"gru.b_c", gru.b_c, false},
        {"ff_img.w", ff_img.w, true},
        {"ff_img.b", ff_img.b, false},
        {"ff_out.w", ff_out.w, true},
        {"ff_out.b", ff_out.b, false},
    };
    if (has_learnable_s0()) p.push_back({"s0", s0, false});
    return p;
  }

  void zero_grads() const {
    for (auto& p : parameters()) {
      auto t = p.tensor;
      t.grad();
      t.zero_grad();
    }
  }
};

using CaptionModel = CaptionModelT<float>;

/// Exact trainable-parameter count for a configuration, by enumeration of
/// the tensor shapes build_model would create.
inline std::size_t count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t l = cfg.layer_size, v = cfg.vocab_size, d = cfg.image_dim;
  const std::size_t gin = cfg.gru_input_dim(), oin = cfg.output_input_dim();
  std::size_t n = 0;
  n += v * l;                        // embedding
  n += 3 * (gin * l) + 3 * (l * l);  // GRU input and state matrices
  n += 3 * l;                        // GRU biases
  n += d * l + l;                    // image projection
  n += oin * v + v;                  // output layer
  if (cfg.rnn_init_state == RnnInitState::learnable) n += l;
  return n;
}

namespace detail {

/// Draws one weight matrix. "normal" uses std = init_range / 2; "xavier"
/// uses std = sqrt(2 / (fan_in + fan_out)). Both clip to +-init_range.
template <class T>
void init_weight(TensorT<T>& w, InitMethod method, double range, Rng& rng) {
  const std::size_t fan_in = w.rank() == 2 ? w.dim(0) : w.size();
  const std::size_t fan_out = w.rank() == 2 ? w.dim(1) : w.size();
  const double std_dev = method == InitMethod::normal
                             ? range / 2.0
                             : std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : w.values_mut()) {
    const double draw = rng.normal() * std_dev;
    x = static_cast<T>(std::clamp(draw, -range, range));
  }
}

}  // namespace detail

/// Allocates all parameter tensors (zero-filled) for a configuration.
template <class T>
CaptionModelT<T> make_model_skeleton(const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.vocab_size < kSpecialTokenCount + 1)
    throw ConfigError("vocab_size must be at least " +
                      std::to_string(kSpecialTokenCount + 1) +
                      " (specials plus one word), got " +
                      std::to_string(cfg.vocab_size));
  const std::size_t l = cfg.layer_size, v = cfg.vocab_size, d = cfg.image_dim;
  const std::size_t gin = cfg.gru_input_dim(), oin = cfg.output_input_dim();

  CaptionModelT<T> m;
  m.config = cfg;
  m.embedding.table = TensorT<T>(Shape{v, l});
  m.gru = GruCellT<T>{TensorT<T>(Shape{gin, l}), TensorT<T>(Shape{l, l}),
                      TensorT<T>(Shape{l}),      TensorT<T>(Shape{gin, l}),
                      TensorT<T>(Shape{l, l}),   TensorT<T>(Shape{l}),
                      TensorT<T>(Shape{gin, l}), TensorT<T>(Shape{l, l}),
                      TensorT<T>(Shape{l})};
  m.ff_img = DenseLayerT<T>{TensorT<T>(Shape{d, l}), TensorT<T>(Shape{l}),
                            cfg.image_activation};
  m.ff_out = DenseLayerT<T>{TensorT<T>(Shape{oin, v}), TensorT<T>(Shape{v}),
                            Activation::softmax};
  m.s0 = TensorT<T>(Shape{l});
  return m;
}

/// Builds a model with freshly initialized parameters. Weight matrices and
/// the embedding are drawn from the configured initializer in parameter
/// order; biases and the learnable initial state start at zero.
template <class T>
CaptionModelT<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  CaptionModelT<T> m = make_model_skeleton<T>(cfg);
  Rng rng(seed);
  for (auto& p : m.parameters())
    if (p.regularized) {
      auto t = p.tensor;
      detail::init_weight(t, cfg.init_method, cfg.init_range, rng);
    }
  return m;
}

// ---------------------------------------------------------------------------
// Forward execution
// ---------------------------------------------------------------------------

/// Walks a model over a token sequence one step at a time. The same runner
/// drives training (tape recording, dropout) and evaluation / decoding
/// (tape == nullptr, no dropout), so there is exactly one implementation of
/// each architecture's wiring.
///
/// Dropout masks for the image and its projection are drawn once per runner;
/// embedding and RNN-output masks are drawn fresh at every step.
template <class T>
class SequenceRunnerT {
 public:
  SequenceRunnerT(const CaptionModelT<T>& model, TapeT<T>* tape,
                  const TensorT<T>& image_feature, bool train_mode = false,
                  Rng* rng = nullptr)
      : m_(&model), tape_(tape), train_(train_mode), rng_(rng) {
    const auto& cfg = m_->config;
    if (image_feature.rank() != 1 || image_feature.size() != cfg.image_dim)
      throw DimensionError("image feature shape " +
                           detail::shape_str(image_feature.shape()) +
                           " does not match configured image_dim (" +
                           std::to_string(cfg.image_dim) + ")");
    if (train_ && cfg.dropout_sites.any() && rng_ == nullptr)
      throw UsageError("training with dropout requires an Rng");

    TensorT<T> img =
        cfg.normalize_image ? normalize_feature(image_feature) : image_feature;
    img = maybe_dropout(img, cfg.dropout_sites.image);
    proj_ = dense(tape_, m_->ff_img, img);
    proj_ = maybe_dropout(proj_, cfg.dropout_sites.image_proj);
  }

  /// State before any token has been consumed. For pre_inject this already
  /// includes the image step.
  TensorT<T> initial_state() {
    const auto& cfg = m_->config;
    TensorT<T> s;
    switch (cfg.rnn_init_state) {
      case RnnInitState::image:
        s = proj_;
        break;
      case RnnInitState::learnable:
        s = m_->s0;
        break;
      case RnnInitState::zeros:
        s = TensorT<T>(Shape{cfg.layer_size});
        break;
    }
    if (cfg.kind == ArchitectureKind::pre_inject)
      s = gru_step(tape_, m_->gru, proj_, s);
    return s;
  }

  /// Consumes one token, returning the next state.
  TensorT<T> advance(const TensorT<T>& state, TokenId id) {
    const auto& cfg = m_->config;
    TensorT<T> x = embed_row(tape_, m_->embedding, id);
    x = maybe_dropout(x, cfg.dropout_sites.embedding);
    if (cfg.kind == ArchitectureKind::par_inject) x = concat(tape_, x, proj_);
    return gru_step(tape_, m_->gru, x, state);
  }

  /// The multimodal vector for a state: exactly what the output layer sees.
  TensorT<T> multimodal(const TensorT<T>& state) {
    const auto& cfg = m_->config;
    TensorT<T> h = maybe_dropout(state, cfg.dropout_sites.rnn_output);
    if (cfg.kind == ArchitectureKind::merge) h = concat(tape_, proj_, h);
    return h;
  }

  /// Output-layer logits for a state.
  TensorT<T> logits(const TensorT<T>& state) {
    return dense_linear(tape_, m_->ff_out, multimodal(state));
  }

  /// log softmax of the logits, for no-tape scoring and decoding.
  std::vector<T> log_probs(const TensorT<T>& state) {
    return log_softmax_values(logits(state));
  }

  const TensorT<T>& projected_image() const { return proj_; }

 private:
  TensorT<T> maybe_dropout(const TensorT<T>& x, bool site_enabled) {
    if (!train_ || !site_enabled) return x;
    // inverted dropout: zero half the units, double the survivors
    TensorT<T> mask(x.shape());
    auto mv = mask.values_mut();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - kDropoutRate));
    for (auto& v : mv) v = rng_->uniform() >= kDropoutRate ? keep_scale : T{0};
    return multiply(tape_, x, mask);
  }

  const CaptionModelT<T>* m_;
  TapeT<T>* tape_;
  bool train_;
  Rng* rng_;
  TensorT<T> proj_;
};

using SequenceRunner = SequenceRunnerT<float>;

namespace detail {

template <class T>
void check_prefix(const CaptionModelT<T>& m, std::span<const TokenId> prefix) {
  if (prefix.empty())
    throw UsageError("prefix must be non-empty and begin with the START token");
  if (prefix.front() != kStartId)
    throw UsageError("prefix must begin with the START token (id " +
                     std::to_string(kStartId) + "), got id " +
                     std::to_string(prefix.front()));
  for (const TokenId id : prefix)
    if (id < 0 || static_cast<std::size_t>(id) >= m.config.vocab_size)
      throw IndexError("prefix token id " + std::to_string(id) +
                       " out of range [0, " +
                       std::to_string(m.config.vocab_size) + ")");
}

}  // namespace detail

/// Distribution over the next token after consuming `prefix` (which must
/// start with START). Evaluation mode draws no randomness; training mode
/// applies dropout at the configured sites.
template <class T>
TensorT<T> forward_step(const CaptionModelT<T>& model,
                        const TensorT<T>& image_feature,
                        std::span<const TokenId> prefix, bool train_mode = false,
                        Rng* rng = nullptr) {
  detail::check_prefix(model, prefix);
  SequenceRunnerT<T> runner(model, nullptr, image_feature, train_mode, rng);
  TensorT<T> s = runner.initial_state();
  for (const TokenId id : prefix) s = runner.advance(s, id);
  return softmax<T>(nullptr, runner.logits(s));
}

/// The vector the output layer would consume after `prefix`: the GRU state
/// for inject architectures, [projected image, state] for merge. Always
/// evaluation mode.
template <class T>
TensorT<T> multimodal_vector(const CaptionModelT<T>& model,
                             const TensorT<T>& image_feature,
                             std::span<const TokenId> prefix) {
  detail::check_prefix(model, prefix);
  SequenceRunnerT<T> runner(model, nullptr, image_feature);
  TensorT<T> s = runner.initial_state();
  for (const TokenId id : prefix) s = runner.advance(s, id);
  return runner.multimodal(s);
}

/// Copies of all parameter values, for snapshot/restore.
template <class T>
std::vector<std::vector<T>> snapshot_parameters(const CaptionModelT<T>& model) {
  std::vector<std::vector<T>> out;
  for (const auto& p : model.parameters())
    out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

template <class T>
void restore_parameters(CaptionModelT<T>& model,
                        const std::vector<std::vector<T>>& snapshot) {
  auto params = model.parameters();
  if (snapshot.size() != params.size())
    throw StateError("snapshot does not match model parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i].tensor;
    if (snapshot[i].size() != t.size())
      throw StateError("snapshot entry " + params[i].name + " has wrong length");
    std::copy(snapshot[i].begin(), snapshot[i].end(), t.values_mut().begin());
  }
}

inline const char* to_string(ArchitectureKind k) {
  switch (k) {
    case ArchitectureKind::init_inject: return "init-inject";
    case ArchitectureKind::pre_inject: return "pre-inject";
    case ArchitectureKind::par_inject: return "par-inject";
    case ArchitectureKind::merge: return "merge";
  }
  return "?";
}

inline ArchitectureKind parse_architecture(const std::string& s) {
  if (s == "init-inject" || s == "init_inject") return ArchitectureKind::init_inject;
  if (s == "pre-inject" || s == "pre_inject") return ArchitectureKind::pre_inject;
  if (s == "par-inject" || s == "par_inject") return ArchitectureKind::par_inject;
  if (s == "merge") return ArchitectureKind::merge;
  throw ConfigError("unknown architecture '" + s +
                    "' (expected init-inject, pre-inject, par-inject or merge)");
}

inline const char* to_string(InitMethod m) {
  return m == InitMethod::normal ? "normal" : "xavier";
}

inline InitMethod parse_init_method(const std::string& s) {
  if (s == "normal") return InitMethod::normal;
  if (s == "xavier" || s == "xavier_normal") return InitMethod::xavier_normal;
  throw ConfigError("unknown init_method '" + s + "' (expected normal or xavier)");
}

inline const char* to_string(RnnInitState r) {
  switch (r) {
    case RnnInitState::zeros: return "zeros";
    case RnnInitState::learnable: return "learnable";
    case RnnInitState::image: return "image";
  }
  return "?";
}

inline RnnInitState parse_rnn_init_state(const std::string& s) {
  if (s == "zeros") return RnnInitState::zeros;
  if (s == "learnable") return RnnInitState::learnable;
  if (s == "image") return RnnInitState::image;
  throw ConfigError("unknown rnn_init_state '" + s +
                    "' (expected zeros, learnable or image)");
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  throw ConfigError("unknown activation '" + s +
                    "' (expected none, relu or softmax)");
}

/// The four tuned reference configurations (Flickr8K-scale: vocabulary 2539,
/// image features 4096-d). Every field follows the published tuning result
/// for its architecture.
inline ModelConfig preset_config(ArchitectureKind kind) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.vocab_size = 2539;
  cfg.image_dim = 4096;
  cfg.normalize_image = true;
  cfg.image_activation = Activation::none;
  cfg.max_epochs = 100;
  cfg.dropout_sites.rnn_output = true;  // shared by all four
  switch (kind) {
    case ArchitectureKind::init_inject:
      cfg.init_method = InitMethod::xavier_normal;
      cfg.init_range = 0.01;
      cfg.layer_size = 512;
      cfg.rnn_init_state = RnnInitState::image;
      cfg.l2_enabled = false;
      cfg.dropout_sites.embedding = true;
      cfg.minibatch_size = 128;
      cfg.beam_width = 3;
      break;
    case ArchitectureKind::pre_inject:
      cfg.init_method = InitMethod::normal;
      cfg.init_range = 0.1;
      cfg.layer_size = 512;
      cfg.rnn_init_state = RnnInitState::zeros;
      cfg.l2_enabled = false;
      cfg.dropout_sites.embedding = true;
      cfg.minibatch_size = 32;
      cfg.beam_width = 3;
      break;
    case ArchitectureKind::par_inject:
      cfg.init_method = InitMethod::normal;
      cfg.init_range = 0.1;
      cfg.layer_size = 256;
      cfg.rnn_init_state = RnnInitState::learnable;
      cfg.l2_enabled = true;
      cfg.dropout_sites.image = true;
      cfg.dropout_sites.embedding = true;
      cfg.minibatch_size = 64;
      cfg.beam_width = 5;
      break;
    case ArchitectureKind::merge:
      cfg.init_method = InitMethod::normal;
      cfg.init_range = 0.1;
      cfg.layer_size = 128;
      cfg.rnn_init_state = RnnInitState::learnable;
      cfg.l2_enabled = false;
      cfg.minibatch_size = 128;
      cfg.beam_width = 3;
      break;
  }
  return cfg;
}

}  // namespace caprnn
