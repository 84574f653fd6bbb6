#pragma once

// Hyperparameter search pipeline.
//
// Stages, each feeding the next:
//   1. random stage   — n unique combinations, one evaluation each
//                        (protocol: train <= 10 epochs, decode with beam 2,
//                        score by validation CIDEr).
//   2. hill climb     — from the best combination so far, repeatedly move to
//                        the best strictly-improving single-axis neighbor.
//      (The original pipeline ran two model-based proposal stages between
//      these; the `ProposalStrategy` slot keeps that extension point open —
//      the shipped strategies are the random stage and hill climbing.)
//   3. dedupe         — identical combinations across all recorded trials
//                        collapse into one trial with the mean score.
//   4. finalists      — among the top 10 by mean score, the 3 that maximize
//                        summed pairwise Hamming distance, always including
//                        the top scorer.
//   5. final sweep    — every finalist x epochs {10, 100} x beam {1..6},
//                        each cell the mean of `final_runs` seeded runs;
//                        winner by score, ties toward smaller epochs then
//                        smaller beam then finalist order.
//
// Every evaluation is identified by (combination, epochs, beam, seed) and
// logged to an append-only JSONL journal. Rerunning a pipeline on a journal
// that already holds a result for a task reuses it instead of calling the
// evaluator, which makes the pipeline resumable and idempotent. Evaluator
// failures are recorded as score 0 with the error text in `status`.
//
// An optional evaluation budget caps the number of evaluator calls (journal
// hits are free); a stage that exhausts the budget returns its best result
// so far.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caprnn/hparams.hpp"

namespace caprnn {

struct EvalTask {
  HparamPoint combination;
  std::size_t max_epochs = 10;
  std::size_t beam_width = 2;
  std::uint64_t seed = 0;
};

/// Returns the validation CIDEr for one trained run of the task.
using TrialEvaluator = std::function<double(const EvalTask&)>;

struct Trial {
  HparamPoint combination;
  std::vector<double> scores;

  double mean_score() const;
};

class SearchJournal {
 public:
  /// Opens (and loads) a JSONL journal; an empty path keeps the journal
  /// in memory only.
  explicit SearchJournal(std::string path = "");

  std::optional<double> lookup(const EvalTask& task) const;
  void record(const EvalTask& task, double cider, const std::string& status);
  std::size_t size() const { return entries_.size(); }

  static std::string task_key(const EvalTask& task);

 private:
  std::string path_;
  std::map<std::string, double> entries_;
};

struct SearchConfig {
  std::size_t random_trials = 100;
  std::size_t search_epochs = 10;  // cap during random/hill stages
  std::size_t search_beam = 2;     // beam width during random/hill stages
  std::size_t final_runs = 3;      // seeded runs per final-sweep cell
  std::size_t n_finalists = 3;
  std::uint64_t seed = 0;
  std::size_t eval_budget = std::numeric_limits<std::size_t>::max();

  void validate() const;
};

/// Derives the deterministic per-task seed for run number `run_index` of a
/// (combination, epochs, beam) cell under pipeline seed `seed`.
std::uint64_t task_seed(std::uint64_t seed, const HparamPoint& combination,
                        std::size_t epochs, std::size_t beam,
                        std::size_t run_index);

/// Scores one task through the journal: reuse a logged result or call the
/// evaluator (recording the outcome, including failures as 0). Decrements
/// `budget` only on real evaluator calls; returns nullopt when the budget
/// is exhausted.
std::optional<double> evaluate_via_journal(const EvalTask& task,
                                           const TrialEvaluator& evaluate,
                                           SearchJournal& journal,
                                           std::size_t& budget);

std::vector<Trial> random_stage(const HparamSpace& space,
                                const SearchConfig& cfg,
                                const TrialEvaluator& evaluate,
                                SearchJournal& journal, std::size_t& budget,
                                std::string* warning = nullptr);

Trial hill_climb(const HparamSpace& space, Trial start,
                 const SearchConfig& cfg, const TrialEvaluator& evaluate,
                 SearchJournal& journal, std::size_t& budget,
                 std::vector<Trial>* log = nullptr);

/// Collapses duplicate combinations, concatenating score lists; output is
/// sorted by mean score descending (ties: canonical JSON ascending).
std::vector<Trial> dedupe_average(std::span<const Trial> trials);

/// Top-10 cut, then the subset of `n_finalists` maximizing summed pairwise
/// Hamming distance subject to containing the best trial. Fewer than
/// `n_finalists` distinct trials are returned as-is (with a warning when
/// `warning` is non-null).
std::vector<HparamPoint> select_finalists(const HparamSpace& space,
                                          std::span<const Trial> deduped,
                                          std::size_t n_finalists = 3,
                                          std::string* warning = nullptr);

struct SweepCell {
  HparamPoint combination;
  std::size_t epochs = 0;
  std::size_t beam = 0;
  std::vector<double> scores;
  double mean_score = 0.0;
};

/// The full epochs x beam grid over the finalists; returns every cell,
/// winner first (score desc, then smaller epochs, smaller beam, finalist
/// order).
std::vector<SweepCell> final_sweep(const HparamSpace& space,
                                   std::span<const HparamPoint> finalists,
                                   const SearchConfig& cfg,
                                   const TrialEvaluator& evaluate,
                                   SearchJournal& journal,
                                   std::size_t& budget);

struct SearchOutcome {
  std::vector<Trial> random_trials;
  Trial climbed;
  std::vector<HparamPoint> finalists;
  std::vector<SweepCell> sweep;  // winner first
  SweepCell best;
  std::vector<std::string> warnings;
};

SearchOutcome run_search(const HparamSpace& space, const SearchConfig& cfg,
                         const TrialEvaluator& evaluate,
                         SearchJournal& journal);

}  // namespace caprnn
