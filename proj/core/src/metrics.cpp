#include "caprnn/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>

#include "caprnn/error.hpp"
#include "caprnn/types.hpp"

namespace caprnn {

namespace {

using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, std::size_t>;

NgramCounts ngram_counts(const TokenSeq& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() >= n)
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
      ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

void check_corpus(std::span<const TokenSeq> candidates,
                  std::span<const ReferenceSet> reference_sets) {
  if (candidates.empty())
    throw UsageError("metric needs at least one candidate caption");
  if (candidates.size() != reference_sets.size())
    throw UsageError("got " + std::to_string(candidates.size()) +
                     " candidates but " +
                     std::to_string(reference_sets.size()) +
                     " reference sets");
  for (std::size_t i = 0; i < reference_sets.size(); ++i)
    if (reference_sets[i].empty())
      throw UsageError("image " + std::to_string(i) + " has no references");
}

}  // namespace

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double entropy_bits(std::span<const std::size_t> counts) {
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  if (total == 0) return 0.0;
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

double bleu(std::span<const TokenSeq> candidates,
            std::span<const ReferenceSet> reference_sets, std::size_t max_n) {
  check_corpus(candidates, reference_sets);
  if (max_n < 1 || max_n > 4)
    throw UsageError("bleu max_n must be in 1..4 (got " +
                     std::to_string(max_n) + ")");

  // Corpus totals: clipped matches and candidate n-gram counts per order.
  std::vector<std::size_t> matched(max_n, 0), possible(max_n, 0);
  std::size_t candidate_len = 0, effective_ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenSeq& cand = candidates[i];
    candidate_len += cand.size();

    // Effective reference length: closest to the candidate's, ties toward
    // the shorter reference.
    std::size_t best_len = reference_sets[i][0].size();
    for (const TokenSeq& ref : reference_sets[i]) {
      const auto diff = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (diff(ref.size()) < diff(best_len) ||
          (diff(ref.size()) == diff(best_len) && ref.size() < best_len))
        best_len = ref.size();
    }
    effective_ref_len += best_len;

    for (std::size_t n = 1; n <= max_n; ++n) {
      NgramCounts cand_counts = ngram_counts(cand, n);
      NgramCounts max_ref;
      for (const TokenSeq& ref : reference_sets[i])
        for (const auto& [gram, count] : ngram_counts(ref, n))
          max_ref[gram] = std::max(max_ref[gram], count);
      for (const auto& [gram, count] : cand_counts) {
        possible[n - 1] += count;
        auto it = max_ref.find(gram);
        if (it != max_ref.end())
          matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  if (candidate_len == 0) return 0.0;
  double log_precision_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0 || possible[n] == 0) return 0.0;
    log_precision_sum += std::log(static_cast<double>(matched[n]) /
                                  static_cast<double>(possible[n]));
  }
  const double geo_mean =
      std::exp(log_precision_sum / static_cast<double>(max_n));
  const double bp =
      std::exp(std::min(0.0, 1.0 - static_cast<double>(effective_ref_len) /
                                       static_cast<double>(candidate_len)));
  return geo_mean * bp;
}

double rouge_l(std::span<const TokenSeq> candidates,
               std::span<const ReferenceSet> reference_sets) {
  check_corpus(candidates, reference_sets);
  constexpr double kBeta = 1.2;
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenSeq& cand = candidates[i];
    double best = 0.0;
    for (const TokenSeq& ref : reference_sets[i]) {
      if (cand.empty() || ref.empty()) continue;
      const double lcs = static_cast<double>(lcs_length(cand, ref));
      const double recall = lcs / static_cast<double>(ref.size());
      const double precision = lcs / static_cast<double>(cand.size());
      const double denom = recall + kBeta * kBeta * precision;
      if (denom > 0.0)
        best = std::max(
            best, (1.0 + kBeta * kBeta) * recall * precision / denom);
    }
    total += best;
  }
  return total / static_cast<double>(candidates.size());
}

double cider_d(std::span<const TokenSeq> candidates,
               std::span<const ReferenceSet> reference_sets,
               std::string* warning) {
  check_corpus(candidates, reference_sets);
  constexpr std::size_t kMaxN = 4;
  constexpr double kSigma = 6.0;
  if (warning) warning->clear();
  if (candidates.size() < 2) {
    const std::string msg =
        "cider_d: corpus has a single image; IDF is degenerate and the "
        "score is 0";
    if (warning)
      *warning = msg;
    else
      std::cerr << "warning: " << msg << "\n";
  }

  // Image-level document frequency per n-gram.
  const double n_images = static_cast<double>(candidates.size());
  std::array<NgramCounts, kMaxN> df;
  for (const ReferenceSet& refs : reference_sets) {
    std::array<std::set<Ngram>, kMaxN> seen;
    for (const TokenSeq& ref : refs)
      for (std::size_t n = 1; n <= kMaxN; ++n)
        for (const auto& [gram, count] : ngram_counts(ref, n))
          seen[n - 1].insert(gram);
    for (std::size_t n = 0; n < kMaxN; ++n)
      for (const Ngram& gram : seen[n]) ++df[n][gram];
  }

  // IDF-weighted term-frequency vector for one caption, one order.
  using Vec = std::map<Ngram, double>;
  const auto weigh = [&](const TokenSeq& tokens, std::size_t n) {
    Vec vec;
    for (const auto& [gram, count] : ngram_counts(tokens, n)) {
      auto it = df[n - 1].find(gram);
      const double docs = it == df[n - 1].end()
                              ? 1.0
                              : std::max(1.0, static_cast<double>(it->second));
      vec[gram] = static_cast<double>(count) * std::log(n_images / docs);
    }
    return vec;
  };
  const auto norm = [](const Vec& vec) {
    double s = 0.0;
    for (const auto& [gram, v] : vec) s += v * v;
    return std::sqrt(s);
  };

  double corpus = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenSeq& cand = candidates[i];
    double image_score = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const Vec cand_vec = weigh(cand, n);
      const double cand_norm = norm(cand_vec);
      double order_score = 0.0;
      for (const TokenSeq& ref : reference_sets[i]) {
        const Vec ref_vec = weigh(ref, n);
        const double ref_norm = norm(ref_vec);
        if (cand_norm == 0.0 || ref_norm == 0.0) continue;
        double dot = 0.0;
        for (const auto& [gram, v] : cand_vec) {
          auto it = ref_vec.find(gram);
          if (it != ref_vec.end()) dot += std::min(v, it->second) * it->second;
        }
        const double delta = static_cast<double>(cand.size()) -
                             static_cast<double>(ref.size());
        order_score += dot / (cand_norm * ref_norm) *
                       std::exp(-delta * delta / (2.0 * kSigma * kSigma));
      }
      image_score +=
          order_score / static_cast<double>(reference_sets[i].size());
    }
    corpus += image_score / static_cast<double>(kMaxN) * 10.0;
  }
  return corpus / n_images;
}

DiversityReport diversity_report(std::span<const TokenSeq> generated,
                                 std::span<const TokenSeq> training,
                                 const Vocabulary& vocabulary) {
  if (generated.empty())
    throw UsageError("diversity_report needs at least one generated caption");
  if (vocabulary.size() <= kSpecialTokenCount)
    throw UsageError("diversity_report needs a vocabulary with real words");

  NgramCounts unigrams, bigrams;
  std::set<std::string> used_words;
  for (const TokenSeq& caption : generated) {
    for (const auto& [gram, count] : ngram_counts(caption, 1))
      unigrams[gram] += count;
    for (const auto& [gram, count] : ngram_counts(caption, 2))
      bigrams[gram] += count;
    for (const std::string& token : caption)
      if (vocabulary.contains(token) &&
          vocabulary.id_of(token) >= static_cast<TokenId>(kSpecialTokenCount))
        used_words.insert(token);
  }

  const auto counts_of = [](const NgramCounts& table) {
    std::vector<std::size_t> counts;
    counts.reserve(table.size());
    for (const auto& [gram, count] : table) counts.push_back(count);
    return counts;
  };

  std::set<TokenSeq> training_set(training.begin(), training.end());
  std::size_t existing = 0;
  for (const TokenSeq& caption : generated)
    if (training_set.count(caption)) ++existing;

  DiversityReport report;
  report.vocab_used_pct =
      100.0 * static_cast<double>(used_words.size()) /
      static_cast<double>(vocabulary.size() - kSpecialTokenCount);
  const auto uni = counts_of(unigrams);
  const auto bi = counts_of(bigrams);
  report.unigram_entropy = entropy_bits(uni);
  report.bigram_entropy = entropy_bits(bi);
  report.existing_pct = 100.0 * static_cast<double>(existing) /
                        static_cast<double>(generated.size());
  return report;
}

}  // namespace caprnn
