#pragma once

// Image retrieval: rank a pool of images by how probable they make a query
// caption, then summarize recall and median rank over a split.
//
// Relevance of an image to a caption is the caption's total natural-log
// probability under the model conditioned on that image (the same prediction
// positions as the training loss, END included). Ties break toward the
// lower pool index. The report follows the standard protocol: one query per
// image using its first caption, pool capped at `pool_cap` images, recall@n
// as percentages, and the median rank (even count: mean of the middle two).

#include <cstddef>
#include <span>
#include <vector>

#include "caprnn/model.hpp"
#include "caprnn/perplexity.hpp"

namespace caprnn {

/// Total natural-log probability of the caption's prediction positions
/// (words plus END) given the image.
double caption_log_prob(const CaptionModel& model, const Tensor& image,
                        std::span<const TokenId> caption);

struct RankResult {
  std::vector<std::size_t> order;  // pool indices, most relevant first
  std::size_t rank = 0;            // 1-based rank of the correct image
};

/// Scores every pool image against the caption. `correct_index` selects
/// which pool entry's rank is reported.
RankResult rank_images(const CaptionModel& model,
                       std::span<const TokenId> caption,
                       std::span<const Tensor> image_pool,
                       std::size_t correct_index);

struct RetrievalReport {
  double recall_at_1 = 0.0;   // percentages in [0, 100]
  double recall_at_5 = 0.0;
  double recall_at_10 = 0.0;
  double median_rank = 0.0;
  std::vector<std::size_t> ranks;  // one per query, 1-based
};

/// Summarizes a list of 1-based ranks into the report.
RetrievalReport retrieval_report_from_ranks(std::span<const std::size_t> ranks);

/// One entry per image (its first caption already encoded). Uses the first
/// `pool_cap` entries as both the query set and the candidate pool.
RetrievalReport retrieval_report(const CaptionModel& model,
                                 std::span<const CaptionExample> items,
                                 std::size_t pool_cap = 1000);

}  // namespace caprnn
