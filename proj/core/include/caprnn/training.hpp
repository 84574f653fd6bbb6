#pragma once

// Minibatch training: cross-entropy loss over caption positions, Adam
// updates, optional L2, dropout at the model's configured sites, and early
// stopping on validation geometric-mean perplexity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "caprnn/error.hpp"
#include "caprnn/model.hpp"
#include "caprnn/perplexity.hpp"
#include "caprnn/rng.hpp"
#include "caprnn/tensor.hpp"

namespace caprnn {

struct TrainConfig {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2_coefficient = 0.0;  // kL2Coefficient when regularization is on
  std::size_t minibatch_size = 32;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0)) throw ConfigError("alpha must be positive");
    if (beta1 < 0 || beta1 >= 1) throw ConfigError("beta1 must be in [0, 1)");
    if (beta2 < 0 || beta2 >= 1) throw ConfigError("beta2 must be in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
    if (l2_coefficient < 0) throw ConfigError("l2_coefficient must be >= 0");
    if (minibatch_size == 0) throw ConfigError("minibatch_size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  }
};

/// Training settings implied by a model configuration (batch size, epoch
/// budget, L2 on/off), with the given run seed.
inline TrainConfig train_config_for(const ModelConfig& model_cfg,
                                    std::uint64_t seed) {
  TrainConfig cfg;
  cfg.l2_coefficient = model_cfg.l2_enabled ? kL2Coefficient : 0.0;
  cfg.minibatch_size = model_cfg.minibatch_size;
  cfg.max_epochs = model_cfg.max_epochs;
  cfg.seed = seed;
  return cfg;
}

/// Cross-entropy of one caption: the mean over its |C|+1 prediction
/// positions (each word, then END) of -ln(probability of the true next
/// token). Pure data term; L2 is added at the batch level.
template <class T>
TensorT<T> caption_loss(TapeT<T>* tape, const CaptionModelT<T>& model,
                        const TensorT<T>& image_feature,
                        std::span<const TokenId> caption,
                        bool train_mode = false, Rng* rng = nullptr) {
  if (caption.empty()) throw DataError("caption must contain at least one word");
  SequenceRunnerT<T> runner(model, tape, image_feature, train_mode, rng);
  TensorT<T> s = runner.initial_state();
  std::vector<TokenId> inputs = {kStartId};
  inputs.insert(inputs.end(), caption.begin(), caption.end());
  std::vector<TokenId> targets(caption.begin(), caption.end());
  targets.push_back(kEndId);

  TensorT<T> total = TensorT<T>::scalar(T{0});
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    s = runner.advance(s, inputs[t]);
    total = add(tape, total,
                cross_entropy_logits(tape, runner.logits(s),
                                     static_cast<std::size_t>(targets[t])));
  }
  return scale(tape, total, T{1} / static_cast<T>(targets.size()));
}

/// L2 penalty l2_coefficient * sum of squares over regularized parameters
/// (weight matrices and the embedding; never biases or the initial state).
template <class T>
TensorT<T> l2_penalty(TapeT<T>* tape, const CaptionModelT<T>& model,
                      double l2_coefficient) {
  TensorT<T> total = TensorT<T>::scalar(T{0});
  for (const auto& p : model.parameters())
    if (p.regularized)
      total = add(tape, total, sum(tape, multiply(tape, p.tensor, p.tensor)));
  return scale(tape, total, static_cast<T>(l2_coefficient));
}

/// Minibatch objective: mean over every prediction position of every caption
/// in the batch, plus the L2 term when l2_coefficient > 0.
template <class T>
TensorT<T> batch_loss(TapeT<T>* tape, const CaptionModelT<T>& model,
                      std::span<const CaptionExampleT<T>> batch,
                      double l2_coefficient = 0.0, bool train_mode = false,
                      Rng* rng = nullptr) {
  if (batch.empty()) throw UsageError("batch_loss: empty batch");
  TensorT<T> total = TensorT<T>::scalar(T{0});
  std::size_t positions = 0;
  for (const auto& ex : batch) {
    if (ex.caption.empty())
      throw DataError("caption must contain at least one word");
    SequenceRunnerT<T> runner(model, tape, ex.image, train_mode, rng);
    TensorT<T> s = runner.initial_state();
    std::vector<TokenId> inputs = {kStartId};
    inputs.insert(inputs.end(), ex.caption.begin(), ex.caption.end());
    std::vector<TokenId> targets(ex.caption.begin(), ex.caption.end());
    targets.push_back(kEndId);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      s = runner.advance(s, inputs[t]);
      total = add(tape, total,
                  cross_entropy_logits(tape, runner.logits(s),
                                       static_cast<std::size_t>(targets[t])));
      ++positions;
    }
  }
  TensorT<T> loss = scale(tape, total, T{1} / static_cast<T>(positions));
  if (l2_coefficient > 0)
    loss = add(tape, loss, l2_penalty(tape, model, l2_coefficient));
  return loss;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class T>
class AdamStateT {
 public:
  explicit AdamStateT(const std::vector<ParamT<T>>& params) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.size(), T{0});
      r_.emplace_back(p.tensor.size(), T{0});
    }
  }

  std::size_t step_count() const { return t_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return r_; }

  template <class U>
  friend void adam_step(const std::vector<ParamT<U>>& params,
                        AdamStateT<U>& state, const TrainConfig& cfg);

 private:
  std::vector<std::vector<T>> m_, r_;
  std::size_t t_ = 0;
};

using AdamState = AdamStateT<float>;

/// One Adam update with bias correction:
///   m <- b1 m + (1-b1) g;  r <- b2 r + (1-b2) g^2
///   w <- w - alpha * (m / (1-b1^t)) / (sqrt(r / (1-b2^t)) + eps)
template <class T>
void adam_step(const std::vector<ParamT<T>>& params, AdamStateT<T>& state,
               const TrainConfig& cfg) {
  if (state.m_.size() != params.size())
    throw StateError("Adam state does not match the parameter list");
  state.t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto tensor = params[i].tensor;
    const auto g = tensor.grad_view();
    auto w = tensor.values_mut();
    auto& m = state.m_[i];
    auto& r = state.r_[i];
    if (m.size() != w.size())
      throw StateError("Adam buffers for '" + params[i].name +
                       "' do not match the parameter shape");
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (!std::isfinite(static_cast<double>(g[j])))
        throw NumericError("non-finite gradient in parameter '" +
                           params[i].name + "'");
      m[j] = static_cast<T>(cfg.beta1) * m[j] +
             static_cast<T>(1.0 - cfg.beta1) * g[j];
      r[j] = static_cast<T>(cfg.beta2) * r[j] +
             static_cast<T>(1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = static_cast<double>(m[j]) / bc1;
      const double r_hat = static_cast<double>(r[j]) / bc2;
      w[j] -= static_cast<T>(cfg.alpha * m_hat /
                             (std::sqrt(r_hat) + cfg.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Minibatching and the epoch loop
// ---------------------------------------------------------------------------

/// Groups examples into same-caption-length minibatches: within each length
/// bucket the examples are shuffled and chunked (a short final chunk is kept
/// as-is), then the batch order itself is shuffled. Returns index lists into
/// `examples`.
inline std::vector<std::vector<std::size_t>> make_minibatches(
    std::span<const CaptionExample> examples, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < examples.size(); ++i)
    buckets[examples[i].caption.size()].push_back(i);

  std::vector<std::vector<std::size_t>> batches;
  for (auto& [len, idxs] : buckets) {
    (void)len;
    rng.shuffle(idxs.begin(), idxs.end());
    for (std::size_t start = 0; start < idxs.size(); start += batch_size) {
      const std::size_t stop = std::min(start + batch_size, idxs.size());
      batches.emplace_back(idxs.begin() + static_cast<std::ptrdiff_t>(start),
                           idxs.begin() + static_cast<std::ptrdiff_t>(stop));
    }
  }
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

struct EpochRecord {
  std::size_t epoch = 0;       // 1-based
  double train_loss = 0.0;     // mean of minibatch objective values
  double val_perplexity = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;
  std::size_t best_epoch = 0;  // 1-based epoch whose weights were kept
};

/// Optional replacement validation measure; when absent, validation
/// geometric-mean perplexity over `val` is used.
using ValidationHook = std::function<double(const CaptionModel&)>;

/// Trains the model in place. Each epoch runs seeded-shuffled length-bucketed
/// minibatches with Adam; after each epoch the validation score is computed,
/// and training stops at the first epoch whose score is worse than the
/// previous epoch's, restoring the previous epoch's weights. Identical seeds
/// give identical runs.
inline TrainResult train(CaptionModel& model,
                         std::span<const CaptionExample> train_examples,
                         std::span<const CaptionExample> val_examples,
                         const TrainConfig& cfg,
                         const ValidationHook& validation = {}) {
  cfg.validate();
  if (train_examples.empty())
    throw UsageError("training requires a nonempty train split");
  if (!validation && val_examples.empty())
    throw UsageError("training requires a nonempty validation split");

  const auto params = model.parameters();
  AdamState adam(params);
  TrainResult result;
  std::vector<std::vector<float>> snapshot = snapshot_parameters(model);
  double prev_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, epoch));
    const auto batches = make_minibatches(train_examples, cfg.minibatch_size, rng);

    double loss_sum = 0.0;
    for (const auto& batch_indices : batches) {
      std::vector<CaptionExample> batch;
      batch.reserve(batch_indices.size());
      for (std::size_t i : batch_indices) batch.push_back(train_examples[i]);
      Tape tape;
      Tensor loss = batch_loss<float>(&tape, model, batch, cfg.l2_coefficient,
                                      /*train_mode=*/true, &rng);
      model.zero_grads();
      tape.backward(loss);
      adam_step(params, adam, cfg);
      loss_sum += static_cast<double>(loss.value(0));
    }

    const double val_score =
        validation ? validation(model)
                   : geometric_mean_perplexity(model, val_examples);
    result.epochs.push_back(
        {epoch, loss_sum / static_cast<double>(batches.size()), val_score});

    if (epoch >= 2 && val_score > prev_val) {
      restore_parameters(model, snapshot);  // keep the previous epoch
      result.stopped_early = true;
      result.best_epoch = epoch - 1;
      return result;
    }
    snapshot = snapshot_parameters(model);
    prev_val = val_score;
    result.best_epoch = epoch;
  }
  return result;
}

/// Epoch log as CSV with a header row: epoch, train_loss, val_perplexity.
inline std::string epoch_log_csv(const TrainResult& result) {
  std::ostringstream out;
  out << "epoch,train_loss,val_perplexity\n";
  for (const auto& e : result.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_perplexity << '\n';
  return out.str();
}

}  // namespace caprnn
