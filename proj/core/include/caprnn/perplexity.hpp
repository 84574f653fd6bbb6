#pragma once

// Language-model perplexity of captions under a trained model. A caption's
// perplexity is 2 to the power of its mean per-token base-2 surprisal,
// measured over the same prediction positions as the training loss: after
// consuming START and each caption word, the model must predict the next
// word, with END as the final target. Corpus-level aggregation is the
// geometric mean of caption perplexities.

#include <cmath>
#include <span>
#include <vector>

#include "caprnn/error.hpp"
#include "caprnn/model.hpp"
#include "caprnn/types.hpp"

namespace caprnn {

/// One (image feature, caption) pair. Captions carry vocabulary ids without
/// START/END; those are added internally wherever sequences are consumed.
template <class T>
struct CaptionExampleT {
  TensorT<T> image;
  std::vector<TokenId> caption;
};

using CaptionExample = CaptionExampleT<float>;

/// Mean per-position base-2 surprisal of a caption (the exponent H in
/// perplexity = 2^H). With include_end the END prediction counts as a
/// position (the default, mirroring the training loss); without it only the
/// caption's own words count. A zero predicted probability yields infinity.
template <class T>
double caption_surprisal(const CaptionModelT<T>& model,
                         const TensorT<T>& image_feature,
                         std::span<const TokenId> caption,
                         bool include_end = true) {
  if (caption.empty()) throw DataError("caption must contain at least one word");
  SequenceRunnerT<T> runner(model, nullptr, image_feature);
  TensorT<T> s = runner.initial_state();
  std::vector<TokenId> inputs = {kStartId};
  inputs.insert(inputs.end(), caption.begin(), caption.end());
  std::vector<TokenId> targets(caption.begin(), caption.end());
  targets.push_back(kEndId);
  const std::size_t n_positions = include_end ? targets.size() : caption.size();

  double total_log2 = 0.0;
  for (std::size_t t = 0; t < n_positions; ++t) {
    s = runner.advance(s, inputs[t]);
    const auto lp = runner.log_probs(s);
    const TokenId target = targets[t];
    if (target < 0 || static_cast<std::size_t>(target) >= lp.size())
      throw IndexError("caption token id " + std::to_string(target) +
                       " out of range [0, " + std::to_string(lp.size()) + ")");
    total_log2 += static_cast<double>(lp[static_cast<std::size_t>(target)]) /
                  std::log(2.0);
  }
  return -total_log2 / static_cast<double>(n_positions);
}

template <class T>
double caption_perplexity(const CaptionModelT<T>& model,
                          const TensorT<T>& image_feature,
                          std::span<const TokenId> caption,
                          bool include_end = true) {
  return std::exp2(caption_surprisal(model, image_feature, caption, include_end));
}

/// Geometric mean of caption perplexities over a set of examples, computed
/// in log space: 2^(mean of surprisals).
inline double geometric_mean_perplexity(const CaptionModel& model,
                                        std::span<const CaptionExample> examples,
                                        bool include_end = true) {
  if (examples.empty())
    throw UsageError("geometric mean perplexity needs at least one caption");
  double total = 0.0;
  for (const auto& ex : examples)
    total += caption_surprisal(model, ex.image, ex.caption, include_end);
  return std::exp2(total / static_cast<double>(examples.size()));
}

}  // namespace caprnn
