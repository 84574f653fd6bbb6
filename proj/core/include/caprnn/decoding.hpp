#pragma once

// Caption generation: beam search under the length constraints, plus an
// exhaustive enumeration oracle used to validate it.
//
// Shared semantics (both decoders):
//   - A hypothesis's word count excludes END. END is masked (log -inf,
//     no renormalization of the rest) until the hypothesis has min_len
//     words; choosing END adds its log-probability and finishes.
//   - A hypothesis reaching max_len words is forcibly finished: the
//     structural END token is appended WITHOUT its log-probability (the
//     model did not choose to end the sentence).
//   - START is never a candidate; UNKNOWN is masked unless allow_unknown.
//   - Scores are raw summed natural-log probabilities; no length
//     normalization.
//   - The winner is the finished hypothesis with the highest score; ties
//     go to the lexicographically smallest word sequence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "caprnn/error.hpp"
#include "caprnn/model.hpp"
#include "caprnn/types.hpp"

namespace caprnn {

struct Hypothesis {
  std::vector<TokenId> tokens;  // includes the trailing END once finished
  double log_prob = 0.0;
  bool finished = false;

  /// The caption itself: tokens with the trailing END removed.
  std::vector<TokenId> words() const {
    if (finished && !tokens.empty() && tokens.back() == kEndId)
      return {tokens.begin(), tokens.end() - 1};
    return tokens;
  }
};

struct BeamParams {
  std::size_t width = 3;
  std::size_t min_len = 5;
  std::size_t max_len = 50;
  bool allow_unknown = false;

  void validate() const {
    if (width == 0) throw UsageError("beam width must be at least 1");
    if (min_len == 0) throw UsageError("min_len must be at least 1");
    if (min_len > max_len)
      throw UsageError("min_len (" + std::to_string(min_len) +
                       ") must not exceed max_len (" + std::to_string(max_len) +
                       ")");
  }
};

namespace detail {

/// Selects the winner: highest log-probability, ties broken by the
/// lexicographically smallest word sequence.
inline const Hypothesis& best_hypothesis(const std::vector<Hypothesis>& pool) {
  if (pool.empty())
    throw StateError("decoding produced no finished hypothesis");
  const Hypothesis* best = &pool.front();
  std::vector<TokenId> best_words = best->words();
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const Hypothesis& h = pool[i];
    if (h.log_prob > best->log_prob) {
      best = &h;
      best_words = h.words();
    } else if (h.log_prob == best->log_prob) {
      auto w = h.words();
      if (w < best_words) {
        best = &h;
        best_words = std::move(w);
      }
    }
  }
  return *best;
}

}  // namespace detail

/// Beam search over next-token distributions. All live hypotheses advance in
/// lockstep (they always hold the same number of words); finished hypotheses
/// are set aside and never count against the width.
template <class T>
Hypothesis beam_search_hypothesis(const CaptionModelT<T>& model,
                                  const TensorT<T>& image_feature,
                                  const BeamParams& params = {}) {
  params.validate();
  SequenceRunnerT<T> runner(model, nullptr, image_feature);

  struct Alive {
    std::vector<TokenId> tokens;
    double log_prob;
    TensorT<T> state;
  };
  std::vector<Alive> alive;
  alive.push_back({{}, 0.0, runner.advance(runner.initial_state(), kStartId)});
  std::vector<Hypothesis> finished;

  while (!alive.empty()) {
    // rank every legal continuation (words, and END once min_len is met) of
    // every live hypothesis, keep the best `width`, and retire the END ones:
    // with width 1 this reduces exactly to greedy argmax chaining, and with
    // a width that covers all continuations nothing is ever pruned, so the
    // result matches exhaustive enumeration.
    struct Candidate {
      std::size_t parent;
      TokenId token;
      double log_prob;
    };
    std::vector<Candidate> candidates;
    const std::size_t words = alive.front().tokens.size();

    for (std::size_t a = 0; a < alive.size(); ++a) {
      const auto lp = runner.log_probs(alive[a].state);
      for (TokenId id = 0; id < static_cast<TokenId>(lp.size()); ++id) {
        if (id == kStartId) continue;
        if (id == kUnknownId && !params.allow_unknown) continue;
        if (id == kEndId && words < params.min_len) continue;
        candidates.push_back(
            {a, id,
             alive[a].log_prob +
                 static_cast<double>(lp[static_cast<std::size_t>(id)])});
      }
    }

    // lockstep parents hold equal-length token lists, so comparing (parent
    // tokens, token) orders candidates like their full sequences
    std::sort(candidates.begin(), candidates.end(),
              [&](const Candidate& x, const Candidate& y) {
                if (x.log_prob != y.log_prob) return x.log_prob > y.log_prob;
                if (alive[x.parent].tokens != alive[y.parent].tokens)
                  return alive[x.parent].tokens < alive[y.parent].tokens;
                return x.token < y.token;
              });
    if (candidates.size() > params.width) candidates.resize(params.width);

    std::vector<Alive> next;
    next.reserve(candidates.size());
    for (const auto& c : candidates) {
      if (c.token == kEndId) {
        Hypothesis h;
        h.tokens = alive[c.parent].tokens;
        h.tokens.push_back(kEndId);
        h.log_prob = c.log_prob;  // END chosen by the model: its score counts
        h.finished = true;
        finished.push_back(std::move(h));
      } else if (words + 1 == params.max_len) {
        Hypothesis h;
        h.tokens = alive[c.parent].tokens;
        h.tokens.push_back(c.token);
        h.tokens.push_back(kEndId);  // structural END, log-prob not added
        h.log_prob = c.log_prob;
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        Alive n;
        n.tokens = alive[c.parent].tokens;
        n.tokens.push_back(c.token);
        n.log_prob = c.log_prob;
        n.state = runner.advance(alive[c.parent].state, c.token);
        next.push_back(std::move(n));
      }
    }
    alive = std::move(next);
  }

  return detail::best_hypothesis(finished);
}

/// The generated caption: beam_search_hypothesis's winner without END.
template <class T>
std::vector<TokenId> beam_search(const CaptionModelT<T>& model,
                                 const TensorT<T>& image_feature,
                                 const BeamParams& params = {}) {
  return beam_search_hypothesis(model, image_feature, params).words();
}

/// Enumerates every legal caption and returns the best, with the same
/// scoring, masking, and tie-break rules as the beam. Guarded to corpora
/// where v^max_len <= 10^6.
template <class T>
Hypothesis exhaustive_decode_hypothesis(const CaptionModelT<T>& model,
                                        const TensorT<T>& image_feature,
                                        const BeamParams& params = {}) {
  params.validate();
  const double v = static_cast<double>(model.config.vocab_size);
  if (static_cast<double>(params.max_len) * std::log(v) > std::log(1e6) + 1e-9)
    throw UsageError(
        "exhaustive decoding is limited to vocab_size^max_len <= 10^6 "
        "sequences; got v=" + std::to_string(model.config.vocab_size) +
        ", max_len=" + std::to_string(params.max_len));

  SequenceRunnerT<T> runner(model, nullptr, image_feature);
  std::vector<Hypothesis> finished;
  std::vector<TokenId> tokens;

  // depth-first over word tokens; `state` already consumed START and tokens
  auto walk = [&](auto&& self, const TensorT<T>& state, double log_prob) -> void {
    const auto lp = runner.log_probs(state);
    const std::size_t words = tokens.size();
    for (TokenId id = 0; id < static_cast<TokenId>(lp.size()); ++id) {
      if (id == kStartId) continue;
      if (id == kUnknownId && !params.allow_unknown) continue;
      const double step_lp =
          static_cast<double>(lp[static_cast<std::size_t>(id)]);
      if (id == kEndId) {
        if (words >= params.min_len) {
          Hypothesis h;
          h.tokens = tokens;
          h.tokens.push_back(kEndId);
          h.log_prob = log_prob + step_lp;
          h.finished = true;
          finished.push_back(std::move(h));
        }
        continue;
      }
      tokens.push_back(id);
      if (tokens.size() == params.max_len) {
        Hypothesis h;
        h.tokens = tokens;
        h.tokens.push_back(kEndId);  // structural END, log-prob not added
        h.log_prob = log_prob + step_lp;
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        self(self, runner.advance(state, id), log_prob + step_lp);
      }
      tokens.pop_back();
    }
  };
  walk(walk, runner.advance(runner.initial_state(), kStartId), 0.0);

  return detail::best_hypothesis(finished);
}

template <class T>
std::vector<TokenId> exhaustive_decode(const CaptionModelT<T>& model,
                                       const TensorT<T>& image_feature,
                                       const BeamParams& params = {}) {
  return exhaustive_decode_hypothesis(model, image_feature, params).words();
}

}  // namespace caprnn
