// Acceptance checks for the caption-architecture workbench.
//
// Unlike the unit suites this is a standalone binary: each numbered check
// prints exactly one "[criterion N] PASS/FAIL" line and the process exits
// nonzero if any check fails. Checks 7 and 8 drive the installed CLI
// end-to-end; its path is passed as argv[1] by the test harness.
//
//   1. autodiff minibatch cross-entropy gradients vs. central differences
//   2. beam search vs. the exhaustive oracle at saturating width
//   3. reference-preset parameter counts and the init-inject/merge ratio
//   4. retention-curve constancy for merge, drift for the inject wirings
//   5. synthetic end-to-end training bar for all four architectures
//   6. hand-derived metric fixtures (BLEU, ROUGE-L, CIDEr-D, entropy, ppl)
//   7. bit-identical retraining and regeneration from one seed
//   8. conversion + preset path for full-scale runs ships and works
//   9. diversity report against an exact-match oracle with held-out combos

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caprnn/dataset.hpp"
#include "caprnn/decoding.hpp"
#include "caprnn/gradcheck.hpp"
#include "caprnn/metrics.hpp"
#include "caprnn/model.hpp"
#include "caprnn/perplexity.hpp"
#include "caprnn/probe.hpp"
#include "caprnn/retrieval.hpp"
#include "caprnn/rng.hpp"
#include "caprnn/training.hpp"
#include "caprnn/vocab.hpp"

namespace {

using namespace caprnn;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome pass(std::string detail) { return {true, std::move(detail)}; }
Outcome fail(std::string detail) { return {false, std::move(detail)}; }

const std::vector<ArchitectureKind> kKinds = {
    ArchitectureKind::init_inject, ArchitectureKind::pre_inject,
    ArchitectureKind::par_inject, ArchitectureKind::merge};

RnnInitState natural_state(ArchitectureKind kind) {
  if (kind == ArchitectureKind::init_inject) return RnnInitState::image;
  if (kind == ArchitectureKind::par_inject) return RnnInitState::learnable;
  return RnnInitState::zeros;
}

template <class T>
TensorT<T> random_image(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  TensorT<T> img(Shape{dim});
  for (auto& v : img.values_mut()) v = static_cast<T>(rng.normal() + 0.1);
  return img;
}

double stddev(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool run_command(const std::string& command) {
  return std::system(command.c_str()) == 0;
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

// ---------------------------------------------------------------------------
// 1. Minibatch cross-entropy gradients match central finite differences for
//    every architecture at l=8, v=12, image_dim=16 across 20 seeds (64-bit).

Outcome check_gradients() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ArchitectureKind kind = kKinds[seed % 4];
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.layer_size = 8;
    cfg.vocab_size = 12;
    cfg.image_dim = 16;
    cfg.init_method = InitMethod::normal;
    cfg.init_range = 0.2;
    cfg.rnn_init_state = natural_state(kind);
    auto model = build_model<double>(cfg, 100 + seed);

    Rng rng(500 + seed);
    std::vector<CaptionExampleT<double>> batch;
    for (std::size_t n : {std::size_t{2}, std::size_t{4}}) {
      CaptionExampleT<double> ex;
      ex.image = random_image<double>(cfg.image_dim, 900 + 7 * seed + n);
      for (std::size_t t = 0; t < n; ++t)
        ex.caption.push_back(static_cast<TokenId>(3 + rng.index(9)));
      batch.push_back(std::move(ex));
    }

    TapeT<double> tape;
    auto loss = batch_loss<double>(&tape, model, batch);
    model.zero_grads();
    tape.backward(loss);

    auto f = [&](const TensorT<double>&) {
      return batch_loss<double>(nullptr, model, batch).value(0);
    };
    for (auto& p : model.parameters()) {
      auto fd = finite_difference_grad(f, p.tensor, 1e-4);
      const double err = relative_error(p.tensor.grad_view(), fd.values());
      worst = std::max(worst, err);
      if (!(err < 1e-4))
        return fail("seed " + std::to_string(seed) + " " +
                    std::string(to_string(kind)) +
                    " parameter " + p.name + ": relative error " +
                    std::to_string(err));
    }
  }
  std::ostringstream msg;
  msg << "20 seeds x 4 architectures, worst relative error " << worst;
  return pass(msg.str());
}

// ---------------------------------------------------------------------------
// 2. At width >= vocab^max_len the beam returns the exhaustive optimum,
//    identical words and log-probability, for 100 random tiny models.

Outcome check_beam_oracle() {
  BeamParams params;
  params.width = 1296;  // 6^4: no step can ever prune
  params.min_len = 1;
  params.max_len = 4;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ArchitectureKind kind = kKinds[seed % 4];
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.layer_size = 6;
    cfg.vocab_size = 6;  // START, END, UNKNOWN + three words
    cfg.image_dim = 5;
    cfg.init_method = InitMethod::normal;
    cfg.init_range = 0.35;
    cfg.rnn_init_state = natural_state(kind);
    auto model = build_model<float>(cfg, 3000 + seed);
    auto img = random_image<float>(cfg.image_dim, 4000 + seed);

    const Hypothesis beam = beam_search_hypothesis(model, img, params);
    const Hypothesis oracle = exhaustive_decode_hypothesis(model, img, params);
    if (beam.words() != oracle.words())
      return fail("seed " + std::to_string(seed) + " " +
                    std::string(to_string(kind)) +
                  ": beam and oracle disagree on the word sequence");
    if (beam.log_prob != oracle.log_prob)
      return fail("seed " + std::to_string(seed) + " " +
                    std::string(to_string(kind)) +
                  ": log-probs differ (" + std::to_string(beam.log_prob) +
                  " vs " + std::to_string(oracle.log_prob) + ")");
  }
  return pass("100 seeds, words and log-probs identical to the oracle");
}

// ---------------------------------------------------------------------------
// 3. Reference presets: init-inject has between 3x and 4x the parameters of
//    merge at the published vocabulary size.

Outcome check_parameter_ratio() {
  const auto init = preset_config(ArchitectureKind::init_inject);
  const auto merge = preset_config(ArchitectureKind::merge);
  const std::size_t n_init = count_parameters(init);
  const std::size_t n_merge = count_parameters(merge);
  if (n_init != 6274539)
    return fail("init-inject preset count " + std::to_string(n_init) +
                " != 6274539");
  if (n_merge != 1600747)
    return fail("merge preset count " + std::to_string(n_merge) +
                " != 1600747");
  const double ratio =
      static_cast<double>(n_init) / static_cast<double>(n_merge);
  if (!(ratio >= 3.0 && ratio <= 4.0))
    return fail("ratio " + std::to_string(ratio) + " outside [3, 4]");
  std::ostringstream msg;
  msg << n_init << " / " << n_merge << " = " << ratio << " in [3, 4]";
  return pass(msg.str());
}

// ---------------------------------------------------------------------------
// 4. Retention curve: constant across positions for merge (std < 1e-5),
//    non-constant for init-inject and pre-inject toy models (std > 1e-4).

Outcome check_retention() {
  const LoadedData data = generate_synthetic(13, 60, 4);
  const Vocabulary vocab = build_vocabulary(data.dataset, 5);
  const auto examples =
      make_examples(data.dataset, data.features, vocab, Split::train);

  auto probe_std = [&](ArchitectureKind kind, double init_range,
                       std::uint64_t seed) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.layer_size = 16;
    cfg.vocab_size = vocab.size();
    cfg.image_dim = data.features.dim();
    cfg.init_method = InitMethod::normal;
    cfg.init_range = init_range;
    cfg.rnn_init_state = natural_state(kind);
    auto model = build_model<float>(cfg, seed);
    const RetentionCurve curve = retention_probe(model, examples, 5, 20, 3);
    return stddev(curve.distances);
  };

  const double merge_std = probe_std(ArchitectureKind::merge, 0.5, 5);
  if (!(merge_std < 1e-5))
    return fail("merge curve std " + std::to_string(merge_std) + " >= 1e-5");
  const double init_std = probe_std(ArchitectureKind::init_inject, 0.8, 6);
  if (!(init_std > 1e-4))
    return fail("init-inject curve std " + std::to_string(init_std) +
                " <= 1e-4");
  const double pre_std = probe_std(ArchitectureKind::pre_inject, 0.8, 7);
  if (!(pre_std > 1e-4))
    return fail("pre-inject curve std " + std::to_string(pre_std) +
                " <= 1e-4");
  std::ostringstream msg;
  msg << "merge std " << merge_std << ", init-inject " << init_std
      << ", pre-inject " << pre_std;
  return pass(msg.str());
}

// ---------------------------------------------------------------------------
// 5. Synthetic end-to-end: each architecture trains at l=32 within 100
//    epochs to val geometric-mean perplexity < 1.5, regenerates >= 90% of
//    val captions exactly, and scores R@1 > 80% on the val pool.

Outcome check_synthetic_end_to_end() {
  const LoadedData data = generate_synthetic(13, 200, 4);
  const Vocabulary vocab = build_vocabulary(data.dataset, 5);
  const auto train_ex =
      make_examples(data.dataset, data.features, vocab, Split::train);
  const auto val_ex =
      make_examples(data.dataset, data.features, vocab, Split::val);

  std::ostringstream msg;
  for (const ArchitectureKind kind : kKinds) {
    const auto t0 = std::chrono::steady_clock::now();

    ModelConfig cfg;
    cfg.kind = kind;
    cfg.layer_size = 32;
    cfg.vocab_size = vocab.size();
    cfg.image_dim = data.features.dim();
    cfg.init_method = InitMethod::normal;
    cfg.init_range = 0.3;
    cfg.rnn_init_state =
        kind == ArchitectureKind::init_inject ? RnnInitState::image
                                              : RnnInitState::zeros;
    cfg.max_epochs = 100;
    auto model = build_model<float>(cfg, 4);

    TrainConfig tc = train_config_for(cfg, 4);
    tc.alpha = 0.005;
    train(model, train_ex, val_ex, tc);

    const double ppl = geometric_mean_perplexity(model, val_ex);
    if (!(ppl < 1.5))
      return fail(std::string(to_string(kind)) + ": val perplexity " +
                  std::to_string(ppl) + " >= 1.5");

    BeamParams beam;
    beam.width = 3;
    std::size_t exact = 0;
    for (const auto& ex : val_ex)
      if (beam_search(model, ex.image, beam) == ex.caption) ++exact;
    const double exact_pct =
        100.0 * static_cast<double>(exact) / static_cast<double>(val_ex.size());
    if (!(exact_pct >= 90.0))
      return fail(std::string(to_string(kind)) + ": exact regeneration " +
                  std::to_string(exact_pct) + "% < 90%");

    const RetrievalReport retr = retrieval_report(model, val_ex);
    if (!(retr.recall_at_1 > 80.0))
      return fail(std::string(to_string(kind)) + ": R@1 " +
                  std::to_string(retr.recall_at_1) + "% <= 80%");

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (elapsed >= 600.0)
      return fail(std::string(to_string(kind)) + ": took " + std::to_string(elapsed) +
                  "s, over the 10 minute budget");
    msg << to_string(kind) << " ppl " << ppl << " exact " << exact_pct
        << "% R@1 " << retr.recall_at_1 << "% (" << elapsed << "s); ";
  }
  return pass(msg.str());
}

// ---------------------------------------------------------------------------
// 6. Hand-derived metric fixtures, all within 1e-6.

Outcome check_metric_fixtures() {
  const double tol = 1e-6;

  // BLEU-1 brevity: perfect unigram precision at length 3 against a
  // length-4 reference leaves exactly the brevity penalty exp(1 - 4/3).
  {
    const std::vector<TokenSeq> cand = {{"the", "cat", "sat"}};
    const std::vector<ReferenceSet> refs = {{{"the", "cat", "sat", "down"}}};
    const double got = bleu(cand, refs, 1);
    const double want = std::exp(-1.0 / 3.0);
    if (std::abs(got - want) > tol)
      return fail("BLEU-1 brevity: got " + std::to_string(got) +
                  ", want exp(-1/3)");
  }

  // ROUGE-L with recall == precision collapses to that common value.
  {
    const std::vector<TokenSeq> cand = {{"the", "cat", "sat"}};
    const std::vector<ReferenceSet> refs = {{{"the", "cat", "ran"}}};
    const double got = rouge_l(cand, refs);
    if (std::abs(got - 2.0 / 3.0) > tol)
      return fail("ROUGE-L: got " + std::to_string(got) + ", want 2/3");
  }

  // CIDEr-D self-match on two disjoint images: every n-gram is distinctive
  // (idf = ln 2), cosine 1 per n, length penalty 1 -> exactly 10.
  {
    const std::vector<TokenSeq> cand = {{"a", "b", "c", "d"},
                                        {"e", "f", "g", "h"}};
    const std::vector<ReferenceSet> refs = {{{"a", "b", "c", "d"}},
                                            {{"e", "f", "g", "h"}}};
    std::string warning;
    const double got = cider_d(cand, refs, &warning);
    if (!warning.empty())
      return fail("CIDEr-D self-match: unexpected warning: " + warning);
    if (std::abs(got - 10.0) > tol)
      return fail("CIDEr-D self-match: got " + std::to_string(got) +
                  ", want 10");
  }

  // Entropy of a uniform 8-way frequency table is exactly 3 bits.
  {
    const std::vector<std::size_t> counts(8, 7);
    const double got = entropy_bits(counts);
    if (std::abs(got - 3.0) > tol)
      return fail("entropy: got " + std::to_string(got) + ", want 3");
  }

  // A model with all parameters zeroed predicts the uniform distribution,
  // so with vocab_size 8 every caption's perplexity is exactly 8.
  {
    ModelConfig cfg;
    cfg.kind = ArchitectureKind::merge;
    cfg.layer_size = 4;
    cfg.vocab_size = 8;
    cfg.image_dim = 4;
    auto model = build_model<float>(cfg, 1);
    for (auto& p : model.parameters())
      for (auto& v : p.tensor.values_mut()) v = 0.0f;
    std::vector<CaptionExample> examples(1);
    examples[0].image = random_image<float>(4, 2);
    examples[0].caption = {3, 4, 5};
    const double got = geometric_mean_perplexity(model, examples);
    if (std::abs(got - 8.0) > tol)
      return fail("uniform perplexity: got " + std::to_string(got) +
                  ", want 8");
  }

  return pass("BLEU brevity, ROUGE-L, CIDEr-D, entropy, perplexity all exact");
}

// ---------------------------------------------------------------------------
// 7. Two `train` runs with identical config and seed produce bit-identical
//    checkpoints, and generation from them bit-identical captions.

Outcome check_cli_determinism(const std::string& cli) {
  if (cli.empty()) return fail("CLI path not supplied as argv[1]");
  const fs::path root = fs::temp_directory_path() / "caprnn-acceptance-c7";
  fs::remove_all(root);
  fs::create_directories(root / "ck");

  const std::string data_dir = (root / "data").string();
  if (!run_command(quoted(cli) + " synth-data --out-dir " + quoted(data_dir) +
                   " --seed 5 --n-images 40 --n-attributes 4 > /dev/null"))
    return fail("synth-data failed");

  const std::string dataset = quoted(data_dir + "/dataset.json");
  const std::string features = quoted(data_dir + "/features.bin");
  const std::string train_args = " train --dataset " + dataset +
                                 " --features " + features +
                                 " --arch merge --seed 9 --layer-size 16"
                                 " --max-epochs 8 --out-dir ";
  for (const char* run : {"a", "b"})
    if (!run_command(quoted(cli) + train_args +
                     quoted((root / run).string()) + " > /dev/null"))
      return fail(std::string("train run ") + run + " failed");

  const std::string ck_a = read_bytes(root / "a" / "model.ckpt");
  const std::string ck_b = read_bytes(root / "b" / "model.ckpt");
  if (ck_a != ck_b) return fail("checkpoints differ between identical runs");

  // Generate from both checkpoints through one fixed path so the caption
  // metadata (which embeds the checkpoint path) stays comparable.
  const fs::path shared_ckpt = root / "ck" / "model.ckpt";
  for (const char* run : {"a", "b"}) {
    fs::copy_file(root / run / "model.ckpt", shared_ckpt,
                  fs::copy_options::overwrite_existing);
    if (!run_command(quoted(cli) + " generate --checkpoint " +
                     quoted(shared_ckpt.string()) + " --dataset " + dataset +
                     " --features " + features + " --split val --out " +
                     quoted((root / (std::string("cap_") + run + ".jsonl"))
                                .string()) +
                     " --beam-width 3 > /dev/null"))
      return fail(std::string("generate run ") + run + " failed");
  }
  if (read_bytes(root / "cap_a.jsonl") != read_bytes(root / "cap_b.jsonl"))
    return fail("generated captions differ between identical runs");
  return pass("checkpoints and captions bit-identical across reruns");
}

// ---------------------------------------------------------------------------
// 8. Full-scale runs need the published features and hours of training, so
//    they are out of scope here; what must ship is the conversion path and
//    the reference presets. Drive both through the CLI.

Outcome check_reproduction_path(const std::string& cli) {
  if (cli.empty()) return fail("CLI path not supplied as argv[1]");
  const fs::path root = fs::temp_directory_path() / "caprnn-acceptance-c8";
  fs::remove_all(root);
  fs::create_directories(root);

  const fs::path counts_path = root / "counts.json";
  if (!run_command(quoted(cli) + " count-params --vocab-size 2539 > " +
                   quoted(counts_path.string())))
    return fail("count-params failed");
  const auto counts = nlohmann::json::parse(read_bytes(counts_path));
  if (counts.at("counts").at("init-inject").get<std::size_t>() != 6274539 ||
      counts.at("counts").at("merge").get<std::size_t>() != 1600747)
    return fail("preset parameter counts drifted");
  const double ratio = counts.at("ratio_init_inject_over_merge").get<double>();
  if (!(ratio >= 3.0 && ratio <= 4.0))
    return fail("preset ratio " + std::to_string(ratio) + " outside [3, 4]");

  // Minimal input in the published caption-JSON layout.
  const nlohmann::json karpathy = {
      {"images",
       {{{"filename", "x.jpg"},
         {"imgid", 0},
         {"split", "train"},
         {"sentences", {{{"tokens", {"a", "dog", "runs"}}}}}},
        {{"filename", "y.jpg"},
         {"imgid", 1},
         {"split", "test"},
         {"sentences", {{{"tokens", {"a", "cat", "sits"}}}}}}}}};
  const fs::path in_path = root / "karpathy.json";
  std::ofstream(in_path) << karpathy.dump();
  const fs::path out_path = root / "converted.json";
  if (!run_command(quoted(cli) + " convert-karpathy --input " +
                   quoted(in_path.string()) + " --out " +
                   quoted(out_path.string()) + " > /dev/null"))
    return fail("convert-karpathy failed");
  const Dataset converted = load_dataset_file(out_path.string());
  if (converted.images.size() != 2 || converted.images[0].id != "x.jpg" ||
      converted.images[1].split != Split::test)
    return fail("converted dataset does not match the input layout");

  return pass(
      "converter and presets ship; published-scale scores need the real "
      "feature files and long training, so they are exercised via this "
      "path rather than rerun here");
}

// ---------------------------------------------------------------------------
// 9. Diversity report vs. an exact-match oracle: half the generated captions
//    are training captions, half are novel attribute combinations that the
//    generator's truncated pools can never produce.

Outcome check_diversity_oracle() {
  const LoadedData data = generate_synthetic(31, 60, 4);
  const Vocabulary vocab = build_vocabulary(data.dataset, 5);
  const auto training = collect_captions(data.dataset, Split::train);

  std::set<TokenSeq> train_set(training.begin(), training.end());
  std::vector<TokenSeq> generated;
  for (std::size_t i = 0; i < 6; ++i) generated.push_back(training[i]);
  const auto colors = synthetic_colors();
  const auto objects = synthetic_objects();
  const auto actions = synthetic_actions();
  for (std::size_t i = 0; i < 6; ++i) {
    // Pool indices >= 4 are outside the truncated pools the dataset drew
    // from, so these combinations are held out of training by construction.
    TokenSeq novel = {"a", colors[4 + (i % 6)], objects[4 + ((i + 1) % 6)],
                      "is", actions[4 + ((i + 2) % 6)]};
    if (train_set.count(novel))
      return fail("held-out combination unexpectedly present in training");
    generated.push_back(std::move(novel));
  }

  const std::size_t existing =
      static_cast<std::size_t>(std::count_if(
          generated.begin(), generated.end(),
          [&](const TokenSeq& c) { return train_set.count(c) > 0; }));
  const double want_existing =
      100.0 * static_cast<double>(existing) /
      static_cast<double>(generated.size());

  const DiversityReport report = diversity_report(generated, training, vocab);
  if (std::abs(report.existing_pct - want_existing) > 1e-9)
    return fail("existing% " + std::to_string(report.existing_pct) +
                " != oracle " + std::to_string(want_existing));
  if (!std::isfinite(report.unigram_entropy) ||
      !std::isfinite(report.bigram_entropy) ||
      report.unigram_entropy <= 0.0 || report.bigram_entropy <= 0.0)
    return fail("entropies not finite and positive");
  if (!(report.vocab_used_pct > 0.0 && report.vocab_used_pct <= 100.0))
    return fail("vocab-used% " + std::to_string(report.vocab_used_pct) +
                " out of range");
  std::ostringstream msg;
  msg << "existing " << report.existing_pct << "% matches the oracle; "
      << "unigram entropy " << report.unigram_entropy << ", bigram "
      << report.bigram_entropy;
  return pass(msg.str());
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";

  struct Check {
    int id;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Check> checks = {
      {1, 60.0, check_gradients},
      {2, 60.0, check_beam_oracle},
      {3, 1.0, check_parameter_ratio},
      {4, 60.0, check_retention},
      {5, 2400.0, check_synthetic_end_to_end},
      {6, 1.0, check_metric_fixtures},
      {7, 0.0, [&] { return check_cli_determinism(cli); }},
      {8, 0.0, [&] { return check_reproduction_path(cli); }},
      {9, 60.0, check_diversity_oracle},
  };

  bool all_pass = true;
  for (const auto& check : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check.run();
    } catch (const std::exception& e) {
      outcome = fail(std::string("exception: ") + e.what());
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (outcome.pass && check.budget_seconds > 0.0 &&
        elapsed >= check.budget_seconds)
      outcome = fail("over the " + std::to_string(check.budget_seconds) +
                     "s budget (took " + std::to_string(elapsed) + "s)");
    std::printf("[criterion %d] %s: %s (%.2fs)\n", check.id,
                outcome.pass ? "PASS" : "FAIL", outcome.detail.c_str(),
                elapsed);
    std::fflush(stdout);
    all_pass = all_pass && outcome.pass;
  }
  return all_pass ? 0 : 1;
}
