#pragma once

// Caption-quality and diversity metrics.
//
// All metrics are pure functions over tokenized captions (surface-token
// sequences). `candidates` holds one generated caption per image;
// `reference_sets` holds that image's reference captions in the same order.
//
//   * bleu        — corpus-level BLEU-n: clipped n-gram precisions combined
//                   by geometric mean, times the brevity penalty
//                   exp(min(0, 1 - r/c)) where r sums, per image, the
//                   reference length closest to the candidate's (ties toward
//                   the shorter reference).
//   * rouge_l     — per image the LCS-based F-measure (beta = 1.2) against
//                   each reference, max over references; mean over images.
//   * cider_d     — CIDEr-D with n = 1..4: term frequencies clipped to the
//                   reference counts, weighted by image-level IDF
//                   ln(N / max(1, df)), cosine similarity per n times the
//                   Gaussian length penalty exp(-(lc-lr)^2 / (2*6^2)),
//                   averaged over references then over n, scaled by 10.
//                   A single-image corpus has degenerate IDF: the score is
//                   0 and a warning is emitted.
//   * diversity_report — vocabulary-usage percentage, base-2 unigram and
//                   bigram entropies over the pooled generated captions, and
//                   the percentage of generated captions that literally
//                   appear in the training set.

#include <span>
#include <string>
#include <vector>

#include "caprnn/vocab.hpp"

namespace caprnn {

using TokenSeq = std::vector<std::string>;
using ReferenceSet = std::vector<TokenSeq>;

double bleu(std::span<const TokenSeq> candidates,
            std::span<const ReferenceSet> reference_sets, std::size_t max_n);

double rouge_l(std::span<const TokenSeq> candidates,
               std::span<const ReferenceSet> reference_sets);

/// If `warning` is non-null it receives any warning text (empty when none);
/// otherwise warnings go to stderr.
double cider_d(std::span<const TokenSeq> candidates,
               std::span<const ReferenceSet> reference_sets,
               std::string* warning = nullptr);

struct DiversityReport {
  double vocab_used_pct = 0.0;
  double unigram_entropy = 0.0;
  double bigram_entropy = 0.0;
  double existing_pct = 0.0;
};

DiversityReport diversity_report(std::span<const TokenSeq> generated,
                                 std::span<const TokenSeq> training,
                                 const Vocabulary& vocabulary);

/// Longest-common-subsequence length between two token sequences.
std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);

/// Base-2 entropy of a frequency table given as raw counts (zeros ignored;
/// an empty or all-zero table has entropy 0).
double entropy_bits(std::span<const std::size_t> counts);

}  // namespace caprnn
