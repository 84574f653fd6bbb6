#include "caprnn/search.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "caprnn/error.hpp"
#include "caprnn/rng.hpp"

namespace caprnn {
namespace {

using nlohmann::ordered_json;

constexpr std::array<std::size_t, 2> kSweepEpochs{10, 100};
constexpr std::array<std::size_t, 6> kSweepBeams{1, 2, 3, 4, 5, 6};

}  // namespace

double Trial::mean_score() const {
  if (scores.empty()) return 0.0;
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

void SearchConfig::validate() const {
  if (random_trials == 0) throw ConfigError("random_trials must be positive");
  if (search_epochs == 0) throw ConfigError("search_epochs must be positive");
  if (search_beam == 0) throw ConfigError("search_beam must be positive");
  if (final_runs == 0) throw ConfigError("final_runs must be positive");
  if (n_finalists == 0) throw ConfigError("n_finalists must be positive");
}

std::string SearchJournal::task_key(const EvalTask& task) {
  std::ostringstream out;
  out << hparam_to_json(task.combination) << "|e" << task.max_epochs << "|b"
      << task.beam_width << "|s" << task.seed;
  return out.str();
}

SearchJournal::SearchJournal(std::string path) : path_(std::move(path)) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  if (!in) throw LoadError("cannot open search journal: " + path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json entry;
    try {
      entry = ordered_json::parse(line);
      EvalTask task;
      task.combination = hparam_from_json(entry.at("combination").dump());
      task.max_epochs = entry.at("epochs").get<std::size_t>();
      task.beam_width = entry.at("beam").get<std::size_t>();
      task.seed = entry.at("seed").get<std::uint64_t>();
      entries_[task_key(task)] = entry.at("cider").get<double>();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "malformed search journal " << path_ << " at line " << line_no
          << ": " << e.what();
      throw LoadError(msg.str());
    }
  }
}

std::optional<double> SearchJournal::lookup(const EvalTask& task) const {
  auto it = entries_.find(task_key(task));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void SearchJournal::record(const EvalTask& task, double cider,
                           const std::string& status) {
  entries_[task_key(task)] = cider;
  if (path_.empty()) return;
  ordered_json entry;
  entry["combination"] = ordered_json::parse(hparam_to_json(task.combination));
  entry["seed"] = task.seed;
  entry["epochs"] = task.max_epochs;
  entry["beam"] = task.beam_width;
  entry["cider"] = cider;
  entry["status"] = status;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw LoadError("cannot append to search journal: " + path_);
  out << entry.dump() << '\n';
  out.flush();
}

std::uint64_t task_seed(std::uint64_t seed, const HparamPoint& combination,
                        std::size_t epochs, std::size_t beam,
                        std::size_t run_index) {
  // FNV-1a over the canonical combination text plus the cell coordinates,
  // folded into the pipeline seed.
  std::uint64_t h = 1469598103934665603ull;
  auto mix_byte = [&h](unsigned char b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  for (unsigned char c : hparam_to_json(combination)) mix_byte(c);
  const std::array<std::uint64_t, 3> tail{static_cast<std::uint64_t>(epochs),
                                          static_cast<std::uint64_t>(beam),
                                          static_cast<std::uint64_t>(run_index)};
  for (std::uint64_t v : tail) {
    for (int i = 0; i < 8; ++i) {
      mix_byte(static_cast<unsigned char>(v >> (8 * i)));
    }
  }
  return mix_seed(seed, h);
}

std::optional<double> evaluate_via_journal(const EvalTask& task,
                                           const TrialEvaluator& evaluate,
                                           SearchJournal& journal,
                                           std::size_t& budget) {
  if (auto cached = journal.lookup(task)) return cached;
  if (budget == 0) return std::nullopt;
  --budget;
  double score = 0.0;
  std::string status = "ok";
  try {
    score = evaluate(task);
  } catch (const std::exception& e) {
    score = 0.0;
    status = std::string("error: ") + e.what();
  }
  journal.record(task, score, status);
  return score;
}

std::vector<Trial> random_stage(const HparamSpace& space,
                                const SearchConfig& cfg,
                                const TrialEvaluator& evaluate,
                                SearchJournal& journal, std::size_t& budget,
                                std::string* warning) {
  Rng rng(mix_seed(cfg.seed, 0x5ea7c4ull));
  const std::vector<HparamPoint> combos =
      space.sample_unique(cfg.random_trials, rng, warning);
  std::vector<Trial> trials;
  trials.reserve(combos.size());
  for (const HparamPoint& combo : combos) {
    EvalTask task{combo, cfg.search_epochs, cfg.search_beam,
                  task_seed(cfg.seed, combo, cfg.search_epochs,
                            cfg.search_beam, 0)};
    const auto score = evaluate_via_journal(task, evaluate, journal, budget);
    if (!score) break;
    trials.push_back(Trial{combo, {*score}});
  }
  return trials;
}

Trial hill_climb(const HparamSpace& space, Trial start,
                 const SearchConfig& cfg, const TrialEvaluator& evaluate,
                 SearchJournal& journal, std::size_t& budget,
                 std::vector<Trial>* log) {
  if (start.scores.empty()) {
    throw UsageError("hill climb needs a scored starting trial");
  }
  Trial incumbent = std::move(start);
  bool moved = true;
  while (moved) {
    moved = false;
    Trial best_neighbor;
    double best_score = incumbent.mean_score();
    for (const HparamPoint& neighbor : space.neighbors(incumbent.combination)) {
      EvalTask task{neighbor, cfg.search_epochs, cfg.search_beam,
                    task_seed(cfg.seed, neighbor, cfg.search_epochs,
                              cfg.search_beam, 0)};
      const auto score = evaluate_via_journal(task, evaluate, journal, budget);
      if (!score) return incumbent;  // budget exhausted: keep the incumbent
      if (log) log->push_back(Trial{neighbor, {*score}});
      if (*score > best_score) {
        best_score = *score;
        best_neighbor = Trial{neighbor, {*score}};
        moved = true;
      }
    }
    if (moved) incumbent = std::move(best_neighbor);
  }
  return incumbent;
}

std::vector<Trial> dedupe_average(std::span<const Trial> trials) {
  std::map<std::string, Trial> merged;
  for (const Trial& trial : trials) {
    const std::string key = hparam_to_json(trial.combination);
    auto [it, inserted] = merged.emplace(key, Trial{trial.combination, {}});
    it->second.scores.insert(it->second.scores.end(), trial.scores.begin(),
                             trial.scores.end());
  }
  std::vector<Trial> out;
  out.reserve(merged.size());
  for (auto& [key, trial] : merged) out.push_back(std::move(trial));
  std::stable_sort(out.begin(), out.end(), [](const Trial& a, const Trial& b) {
    const double ma = a.mean_score();
    const double mb = b.mean_score();
    if (ma != mb) return ma > mb;
    return hparam_to_json(a.combination) < hparam_to_json(b.combination);
  });
  return out;
}

std::vector<HparamPoint> select_finalists(const HparamSpace& space,
                                          std::span<const Trial> deduped,
                                          std::size_t n_finalists,
                                          std::string* warning) {
  if (n_finalists == 0) throw UsageError("n_finalists must be positive");
  if (deduped.empty()) throw UsageError("no trials to select finalists from");
  const std::size_t pool = std::min<std::size_t>(deduped.size(), 10);
  if (pool <= n_finalists) {
    if (pool < n_finalists && warning) {
      std::ostringstream msg;
      msg << "only " << pool << " distinct combinations available; requested "
          << n_finalists << " finalists";
      *warning = msg.str();
    }
    std::vector<HparamPoint> all;
    all.reserve(pool);
    for (std::size_t i = 0; i < pool; ++i) {
      all.push_back(deduped[i].combination);
    }
    return all;
  }

  // Pairwise Hamming distances inside the top-10 pool.
  std::vector<std::vector<std::size_t>> dist(pool,
                                             std::vector<std::size_t>(pool, 0));
  for (std::size_t i = 0; i < pool; ++i) {
    for (std::size_t j = i + 1; j < pool; ++j) {
      dist[i][j] = dist[j][i] = hamming_distance(space, deduped[i].combination,
                                                 deduped[j].combination);
    }
  }

  // Enumerate subsets that contain the top scorer (index 0) and pick the one
  // with the largest summed pairwise distance; ties go to the higher summed
  // mean score, then to the earlier index tuple.
  std::vector<std::size_t> pick(n_finalists, 0);
  std::vector<std::size_t> best;
  std::size_t best_dist = 0;
  double best_sum = -std::numeric_limits<double>::infinity();
  auto consider = [&](const std::vector<std::size_t>& subset) {
    std::size_t d = 0;
    double s = 0.0;
    for (std::size_t a = 0; a < subset.size(); ++a) {
      s += deduped[subset[a]].mean_score();
      for (std::size_t b = a + 1; b < subset.size(); ++b) {
        d += dist[subset[a]][subset[b]];
      }
    }
    if (best.empty() || d > best_dist || (d == best_dist && s > best_sum) ||
        (d == best_dist && s == best_sum && subset < best)) {
      best = subset;
      best_dist = d;
      best_sum = s;
    }
  };
  auto recurse = [&](auto&& self, std::size_t slot, std::size_t from) -> void {
    if (slot == n_finalists) {
      consider(pick);
      return;
    }
    for (std::size_t i = from; i < pool; ++i) {
      pick[slot] = i;
      self(self, slot + 1, i + 1);
    }
  };
  recurse(recurse, 1, 1);  // slot 0 is pinned to the top scorer

  std::vector<HparamPoint> finalists;
  finalists.reserve(best.size());
  for (std::size_t i : best) finalists.push_back(deduped[i].combination);
  return finalists;
}

std::vector<SweepCell> final_sweep(const HparamSpace& space,
                                   std::span<const HparamPoint> finalists,
                                   const SearchConfig& cfg,
                                   const TrialEvaluator& evaluate,
                                   SearchJournal& journal,
                                   std::size_t& budget) {
  (void)space;
  std::vector<SweepCell> cells;
  for (const HparamPoint& combo : finalists) {
    for (std::size_t epochs : kSweepEpochs) {
      for (std::size_t beam : kSweepBeams) {
        SweepCell cell;
        cell.combination = combo;
        cell.epochs = epochs;
        cell.beam = beam;
        bool complete = true;
        for (std::size_t run = 0; run < cfg.final_runs; ++run) {
          EvalTask task{combo, epochs, beam,
                        task_seed(cfg.seed, combo, epochs, beam, run)};
          const auto score =
              evaluate_via_journal(task, evaluate, journal, budget);
          if (!score) {
            complete = false;
            break;
          }
          cell.scores.push_back(*score);
        }
        if (!complete) {
          // Budget exhausted: rank what finished so far.
          std::stable_sort(cells.begin(), cells.end(),
                           [](const SweepCell& a, const SweepCell& b) {
                             if (a.mean_score != b.mean_score)
                               return a.mean_score > b.mean_score;
                             if (a.epochs != b.epochs) return a.epochs < b.epochs;
                             return a.beam < b.beam;
                           });
          return cells;
        }
        double sum = 0.0;
        for (double s : cell.scores) sum += s;
        cell.mean_score = sum / static_cast<double>(cell.scores.size());
        cells.push_back(std::move(cell));
      }
    }
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const SweepCell& a, const SweepCell& b) {
                     if (a.mean_score != b.mean_score)
                       return a.mean_score > b.mean_score;
                     if (a.epochs != b.epochs) return a.epochs < b.epochs;
                     return a.beam < b.beam;
                   });
  return cells;
}

SearchOutcome run_search(const HparamSpace& space, const SearchConfig& cfg,
                         const TrialEvaluator& evaluate,
                         SearchJournal& journal) {
  cfg.validate();
  SearchOutcome outcome;
  std::size_t budget = cfg.eval_budget;

  std::string warning;
  outcome.random_trials =
      random_stage(space, cfg, evaluate, journal, budget, &warning);
  if (!warning.empty()) outcome.warnings.push_back(warning);
  if (outcome.random_trials.empty()) {
    outcome.warnings.push_back(
        "evaluation budget exhausted before any trial completed");
    return outcome;
  }

  std::size_t best_start = 0;
  for (std::size_t i = 1; i < outcome.random_trials.size(); ++i) {
    if (outcome.random_trials[i].mean_score() >
        outcome.random_trials[best_start].mean_score()) {
      best_start = i;
    }
  }

  std::vector<Trial> climb_log;
  outcome.climbed = hill_climb(space, outcome.random_trials[best_start], cfg,
                               evaluate, journal, budget, &climb_log);

  std::vector<Trial> all = outcome.random_trials;
  all.insert(all.end(), climb_log.begin(), climb_log.end());
  const std::vector<Trial> deduped = dedupe_average(all);

  warning.clear();
  outcome.finalists =
      select_finalists(space, deduped, cfg.n_finalists, &warning);
  if (!warning.empty()) outcome.warnings.push_back(warning);

  outcome.sweep =
      final_sweep(space, outcome.finalists, cfg, evaluate, journal, budget);
  if (outcome.sweep.empty()) {
    outcome.warnings.push_back(
        "evaluation budget exhausted before any sweep cell completed");
  } else {
    outcome.best = outcome.sweep.front();
  }
  return outcome;
}

}  // namespace caprnn
