#include "caprnn/retrieval.hpp"

#include <algorithm>
#include <numeric>

#include "caprnn/error.hpp"

namespace caprnn {

double caption_log_prob(const CaptionModel& model, const Tensor& image,
                        std::span<const TokenId> caption) {
  if (caption.empty())
    throw DataError("cannot score an empty caption");
  for (const TokenId id : caption)
    if (id < 0 || static_cast<std::size_t>(id) >= model.config.vocab_size)
      throw IndexError("caption token id " + std::to_string(id) +
                       " out of range [0, " +
                       std::to_string(model.config.vocab_size) + ")");
  SequenceRunner runner(model, nullptr, image);
  Tensor state = runner.advance(runner.initial_state(), kStartId);
  double total = 0.0;
  for (std::size_t t = 0; t <= caption.size(); ++t) {
    const TokenId target = t < caption.size() ? caption[t] : kEndId;
    total += static_cast<double>(
        runner.log_probs(state)[static_cast<std::size_t>(target)]);
    if (t < caption.size()) state = runner.advance(state, caption[t]);
  }
  return total;
}

RankResult rank_images(const CaptionModel& model,
                       std::span<const TokenId> caption,
                       std::span<const Tensor> image_pool,
                       std::size_t correct_index) {
  if (image_pool.empty()) throw UsageError("image pool is empty");
  if (correct_index >= image_pool.size())
    throw IndexError("correct_index " + std::to_string(correct_index) +
                     " out of range (pool size " +
                     std::to_string(image_pool.size()) + ")");

  std::vector<double> relevance(image_pool.size());
  for (std::size_t i = 0; i < image_pool.size(); ++i)
    relevance[i] = caption_log_prob(model, image_pool[i], caption);

  RankResult result;
  result.order.resize(image_pool.size());
  std::iota(result.order.begin(), result.order.end(), std::size_t{0});
  std::stable_sort(result.order.begin(), result.order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return relevance[a] > relevance[b];
                   });  // stable => ties keep pool order
  for (std::size_t pos = 0; pos < result.order.size(); ++pos)
    if (result.order[pos] == correct_index) {
      result.rank = pos + 1;
      break;
    }
  return result;
}

RetrievalReport retrieval_report_from_ranks(
    std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw UsageError("no ranks to aggregate");
  RetrievalReport report;
  report.ranks.assign(ranks.begin(), ranks.end());
  const double q = static_cast<double>(ranks.size());
  const auto recall_at = [&](std::size_t n) {
    std::size_t hits = 0;
    for (std::size_t r : ranks)
      if (r <= n) ++hits;
    return 100.0 * static_cast<double>(hits) / q;
  };
  report.recall_at_1 = recall_at(1);
  report.recall_at_5 = recall_at(5);
  report.recall_at_10 = recall_at(10);

  std::vector<std::size_t> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  report.median_rank =
      sorted.size() % 2 == 1
          ? static_cast<double>(sorted[mid])
          : (static_cast<double>(sorted[mid - 1]) +
             static_cast<double>(sorted[mid])) /
                2.0;
  return report;
}

RetrievalReport retrieval_report(const CaptionModel& model,
                                 std::span<const CaptionExample> items,
                                 std::size_t pool_cap) {
  if (items.empty()) throw UsageError("retrieval needs a non-empty split");
  if (pool_cap == 0) throw UsageError("pool_cap must be positive");
  const std::size_t n = std::min(items.size(), pool_cap);

  std::vector<Tensor> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.push_back(items[i].image);

  std::vector<std::size_t> ranks(n);
  for (std::size_t i = 0; i < n; ++i)
    ranks[i] = rank_images(model, items[i].caption, pool, i).rank;
  return retrieval_report_from_ranks(ranks);
}

}  // namespace caprnn
