// caprnn — command-line interface to the captioning library.
//
// Subcommands:
//   synth-data       generate the deterministic synthetic dataset
//   convert-karpathy convert a Karpathy-style JSON file to the dataset format
//   train            train one architecture on a dataset
//   generate         decode captions for a split with beam search
//   evaluate         score generated captions (BLEU/ROUGE/CIDEr/perplexity/…)
//   retrieve         caption-to-image retrieval (R@1/5/10, median rank)
//   probe            visual-information retention curve along the caption
//   search-hparams   journal-backed hyperparameter search pipeline
//   count-params     exact trainable-parameter counts of the presets
//   report           aggregate per-run metric files into mean (std) form
//
// Conventions shared by every subcommand:
//   * `--config FILE` names a flat JSON object whose keys mirror the long
//     option names (without the leading dashes); explicitly passed flags
//     always win over config-file values.
//   * file outputs are written atomically (temp file + rename);
//   * the default output directory is $CAPRNN_OUT_DIR, falling back to ".";
//   * artifacts embed the resolved configuration and seed that produced them;
//   * on success a single JSON object goes to stdout (the report table is the
//     one human-format exception); on failure a JSON object
//     {"error":{"type","message"}} goes to stderr and the exit code is 1.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "caprnn/checkpoint.hpp"
#include "caprnn/dataset.hpp"
#include "caprnn/decoding.hpp"
#include "caprnn/error.hpp"
#include "caprnn/hparams.hpp"
#include "caprnn/metrics.hpp"
#include "caprnn/model.hpp"
#include "caprnn/perplexity.hpp"
#include "caprnn/probe.hpp"
#include "caprnn/report.hpp"
#include "caprnn/retrieval.hpp"
#include "caprnn/rng.hpp"
#include "caprnn/search.hpp"
#include "caprnn/training.hpp"
#include "caprnn/version.hpp"
#include "caprnn/vocab.hpp"

namespace {

using namespace caprnn;
using nlohmann::ordered_json;

std::string default_out_dir() {
  const char* env = std::getenv("CAPRNN_OUT_DIR");
  return (env && *env) ? env : ".";
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::filesystem::create_directories(dir);
}

// ---------------------------------------------------------------------------
// Flat JSON config overlay: keys mirror long option names; explicit command
// line flags win over config values, config values win over defaults.
// ---------------------------------------------------------------------------

class FlagConfig {
 public:
  void bind(CLI::App* cmd) {
    cmd_ = cmd;
    cmd->add_option("--config", path_,
                    "flat JSON object whose keys mirror the long option "
                    "names; explicit flags win");
  }

  template <class T>
  void key(const std::string& name, T* target) {
    setters_[name] = [target](const ordered_json& v) { *target = v.get<T>(); };
  }

  template <class T>
  void key(const std::string& name, std::optional<T>* target) {
    setters_[name] = [target](const ordered_json& v) { *target = v.get<T>(); };
  }

  void apply() const {
    if (path_.empty()) return;
    ordered_json obj;
    try {
      obj = ordered_json::parse(read_file(path_));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config file " + path_ + " is not valid JSON: " +
                        e.what());
    }
    if (!obj.is_object())
      throw ConfigError("config file " + path_ +
                        " must hold a flat JSON object");
    for (const auto& [k, v] : obj.items()) {
      auto it = setters_.find(k);
      if (it == setters_.end())
        throw ConfigError("unknown config key '" + k + "' in " + path_);
      const CLI::Option* opt = cmd_->get_option_no_throw("--" + k);
      if (opt != nullptr && opt->count() > 0) continue;  // flag wins
      try {
        it->second(v);
      } catch (const std::exception& e) {
        throw ConfigError("config key '" + k + "': " + e.what());
      }
    }
  }

 private:
  CLI::App* cmd_ = nullptr;
  std::string path_;
  std::map<std::string, std::function<void(const ordered_json&)>> setters_;
};

// ---------------------------------------------------------------------------
// Small shared pieces
// ---------------------------------------------------------------------------

ordered_json config_json(const ModelConfig& cfg) {
  return ordered_json::parse(model_config_to_json(cfg));
}

void emit(const ordered_json& summary) {
  std::printf("%s\n", summary.dump(2).c_str());
}

Split parse_split_arg(const std::string& s) { return parse_split(s); }

/// Generated captions for every image of a split, in file order, as surface
/// tokens, plus their scores.
struct GeneratedCaption {
  std::string image_id;
  std::vector<std::string> tokens;
  double log_prob = 0.0;
};

std::vector<GeneratedCaption> decode_split(const CaptionModel& model,
                                           const Vocabulary& vocabulary,
                                           const Dataset& dataset,
                                           const FeatureStore& features,
                                           Split split,
                                           const BeamParams& params) {
  std::vector<GeneratedCaption> out;
  for (std::size_t i : split_indices(dataset, split)) {
    const ImageEntry& image = dataset.images[i];
    const Hypothesis hyp = beam_search_hypothesis(
        model, features.row_tensor(image.feature_index), params);
    GeneratedCaption gen;
    gen.image_id = image.id;
    for (TokenId id : hyp.words())
      gen.tokens.push_back(vocabulary.token_of(id));
    gen.log_prob = hyp.log_prob;
    out.push_back(std::move(gen));
  }
  return out;
}

std::string captions_jsonl(const std::vector<GeneratedCaption>& captions,
                           const ordered_json& meta) {
  std::ostringstream out;
  ordered_json head;
  head["meta"] = meta;
  out << head.dump() << '\n';
  for (const auto& c : captions) {
    ordered_json line;
    line["image_id"] = c.image_id;
    line["tokens"] = c.tokens;
    line["log_prob"] = c.log_prob;
    out << line.dump() << '\n';
  }
  return out.str();
}

std::vector<GeneratedCaption> load_captions_jsonl(const std::string& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::vector<GeneratedCaption> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw LoadError("malformed captions file " + path + " at line " +
                      std::to_string(line_no) + ": " + e.what());
    }
    if (obj.contains("meta")) continue;  // embedded provenance header
    try {
      GeneratedCaption c;
      c.image_id = obj.at("image_id").get<std::string>();
      c.tokens = obj.at("tokens").get<std::vector<std::string>>();
      c.log_prob = obj.at("log_prob").get<double>();
      out.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw LoadError("malformed captions file " + path + " at line " +
                      std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// First-caption-per-image examples of a split, for retrieval.
std::vector<CaptionExample> first_caption_examples(const Dataset& dataset,
                                                   const FeatureStore& features,
                                                   const Vocabulary& vocabulary,
                                                   Split split) {
  std::vector<CaptionExample> items;
  for (std::size_t i : split_indices(dataset, split)) {
    const ImageEntry& image = dataset.images[i];
    CaptionExample ex;
    ex.image = features.row_tensor(image.feature_index);
    ex.caption = vocabulary.encode(image.captions.front());
    items.push_back(std::move(ex));
  }
  return items;
}

// ---------------------------------------------------------------------------
// synth-data
// ---------------------------------------------------------------------------

void add_synth_data(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "synth-data", "Generate the deterministic synthetic dataset");
  auto cfg = std::make_shared<FlagConfig>();
  auto out_dir = std::make_shared<std::string>(default_out_dir());
  auto seed = std::make_shared<std::uint64_t>(0);
  auto n_images = std::make_shared<std::size_t>(200);
  auto n_attributes = std::make_shared<std::size_t>(3);

  cfg->bind(cmd);
  cmd->add_option("--out-dir", *out_dir, "output directory");
  cmd->add_option("--seed", *seed, "generator seed");
  cmd->add_option("--n-images", *n_images, "number of images (>= 10)");
  cmd->add_option("--n-attributes", *n_attributes,
                  "attribute values per slot (2..10)");
  cfg->key("out-dir", out_dir.get());
  cfg->key("seed", seed.get());
  cfg->key("n-images", n_images.get());
  cfg->key("n-attributes", n_attributes.get());

  cmd->callback([=]() {
    cfg->apply();
    const LoadedData data = generate_synthetic(*seed, *n_images, *n_attributes);
    ensure_dir(*out_dir);
    const std::string dataset_path = join_path(*out_dir, "dataset.json");
    const std::string features_path = join_path(*out_dir, "features.bin");
    save_dataset(dataset_path, data.dataset);
    save_features(features_path, data.features);

    ordered_json summary;
    summary["ok"] = true;
    summary["seed"] = *seed;
    summary["images"] = data.dataset.images.size();
    summary["feature_dim"] = data.features.dim();
    summary["outputs"]["dataset"] = dataset_path;
    summary["outputs"]["features"] = features_path;
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// convert-karpathy
// ---------------------------------------------------------------------------

void add_convert_karpathy(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "convert-karpathy",
      "Convert a Karpathy-style JSON file to the dataset format");
  auto cfg = std::make_shared<FlagConfig>();
  auto input = std::make_shared<std::string>();
  auto output = std::make_shared<std::string>();

  cfg->bind(cmd);
  cmd->add_option("--input", *input, "Karpathy-style JSON file")->required();
  cmd->add_option("--out", *output,
                  "output dataset path (default <out-dir>/dataset.json)");
  cfg->key("input", input.get());
  cfg->key("out", output.get());

  cmd->callback([=]() {
    cfg->apply();
    if (output->empty()) *output = join_path(default_out_dir(), "dataset.json");
    const Dataset dataset = convert_karpathy_json(read_file(*input));
    save_dataset(*output, dataset);

    std::size_t captions = 0;
    std::map<std::string, std::size_t> by_split;
    for (const auto& img : dataset.images) {
      captions += img.captions.size();
      by_split[to_string(img.split)] += 1;
    }
    ordered_json summary;
    summary["ok"] = true;
    summary["images"] = dataset.images.size();
    summary["captions"] = captions;
    for (const auto& [name, n] : by_split) summary["splits"][name] = n;
    summary["outputs"]["dataset"] = *output;
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset_path;
  std::string features_path;
  std::string arch = "merge";
  bool preset = false;
  std::string out_dir = default_out_dir();
  std::uint64_t seed = 0;
  std::size_t min_frequency = 5;
  // optional overrides on top of the preset / defaults
  std::optional<std::size_t> layer_size;
  std::optional<std::string> init_method;
  std::optional<double> init_range;
  std::optional<bool> normalize_image;
  std::optional<std::string> image_activation;
  std::optional<std::string> rnn_init_state;
  std::optional<bool> l2;
  std::optional<bool> dropout_image;
  std::optional<bool> dropout_image_proj;
  std::optional<bool> dropout_embedding;
  std::optional<bool> dropout_rnn_output;
  std::optional<std::size_t> minibatch_size;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> beam_width;
  std::optional<double> alpha;
  std::optional<double> beta1;
  std::optional<double> beta2;
  std::optional<double> epsilon;
};

ModelConfig resolve_train_config(const TrainArgs& a, std::size_t vocab_size,
                                 std::size_t image_dim) {
  const ArchitectureKind kind = parse_architecture(a.arch);
  ModelConfig cfg = a.preset ? preset_config(kind) : ModelConfig{};
  cfg.kind = kind;
  if (!a.preset && kind == ArchitectureKind::init_inject)
    cfg.rnn_init_state = RnnInitState::image;
  cfg.vocab_size = vocab_size;
  cfg.image_dim = image_dim;
  if (a.layer_size) cfg.layer_size = *a.layer_size;
  if (a.init_method) cfg.init_method = parse_init_method(*a.init_method);
  if (a.init_range) cfg.init_range = *a.init_range;
  if (a.normalize_image) cfg.normalize_image = *a.normalize_image;
  if (a.image_activation)
    cfg.image_activation = parse_activation(*a.image_activation);
  if (a.rnn_init_state)
    cfg.rnn_init_state = parse_rnn_init_state(*a.rnn_init_state);
  if (a.l2) cfg.l2_enabled = *a.l2;
  if (a.dropout_image) cfg.dropout_sites.image = *a.dropout_image;
  if (a.dropout_image_proj) cfg.dropout_sites.image_proj = *a.dropout_image_proj;
  if (a.dropout_embedding) cfg.dropout_sites.embedding = *a.dropout_embedding;
  if (a.dropout_rnn_output) cfg.dropout_sites.rnn_output = *a.dropout_rnn_output;
  if (a.minibatch_size) cfg.minibatch_size = *a.minibatch_size;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  if (a.beam_width) cfg.beam_width = *a.beam_width;
  cfg.validate();
  return cfg;
}

void add_model_override_options(CLI::App* cmd, FlagConfig& cfg, TrainArgs& a) {
  cmd->add_option("--layer-size", a.layer_size,
                  "embedding/projection/state width");
  cmd->add_option("--init-method", a.init_method, "normal | xavier");
  cmd->add_option("--init-range", a.init_range, "weight clipping range");
  cmd->add_option("--normalize-image", a.normalize_image,
                  "L2-normalize image features (true/false)");
  cmd->add_option("--image-activation", a.image_activation, "none | relu");
  cmd->add_option("--rnn-init-state", a.rnn_init_state,
                  "zeros | learnable | image");
  cmd->add_option("--l2", a.l2, "enable weight decay (true/false)");
  cmd->add_option("--dropout-image", a.dropout_image,
                  "dropout on the raw image vector (true/false)");
  cmd->add_option("--dropout-image-proj", a.dropout_image_proj,
                  "dropout on the projected image (true/false)");
  cmd->add_option("--dropout-embedding", a.dropout_embedding,
                  "dropout on word embeddings (true/false)");
  cmd->add_option("--dropout-rnn-output", a.dropout_rnn_output,
                  "dropout on the GRU output (true/false)");
  cmd->add_option("--minibatch-size", a.minibatch_size, "examples per batch");
  cmd->add_option("--max-epochs", a.max_epochs, "training epoch budget");
  cmd->add_option("--beam-width", a.beam_width, "default decoding beam width");
  cfg.key("layer-size", &a.layer_size);
  cfg.key("init-method", &a.init_method);
  cfg.key("init-range", &a.init_range);
  cfg.key("normalize-image", &a.normalize_image);
  cfg.key("image-activation", &a.image_activation);
  cfg.key("rnn-init-state", &a.rnn_init_state);
  cfg.key("l2", &a.l2);
  cfg.key("dropout-image", &a.dropout_image);
  cfg.key("dropout-image-proj", &a.dropout_image_proj);
  cfg.key("dropout-embedding", &a.dropout_embedding);
  cfg.key("dropout-rnn-output", &a.dropout_rnn_output);
  cfg.key("minibatch-size", &a.minibatch_size);
  cfg.key("max-epochs", &a.max_epochs);
  cfg.key("beam-width", &a.beam_width);
}

void add_train(CLI::App& app) {
  auto* cmd =
      app.add_subcommand("train", "Train one architecture on a dataset");
  auto cfg = std::make_shared<FlagConfig>();
  auto a = std::make_shared<TrainArgs>();

  cfg->bind(cmd);
  cmd->add_option("--dataset", a->dataset_path, "dataset JSON")->required();
  cmd->add_option("--features", a->features_path, "feature binary")->required();
  cmd->add_option("--arch", a->arch,
                  "init-inject | pre-inject | par-inject | merge");
  cmd->add_flag("--preset", a->preset,
                "start from the published tuned configuration for --arch");
  cmd->add_option("--out-dir", a->out_dir, "output directory");
  cmd->add_option("--seed", a->seed, "training seed");
  cmd->add_option("--min-frequency", a->min_frequency,
                  "vocabulary inclusion threshold");
  cmd->add_option("--alpha", a->alpha, "Adam step size");
  cmd->add_option("--beta1", a->beta1, "Adam first-moment decay");
  cmd->add_option("--beta2", a->beta2, "Adam second-moment decay");
  cmd->add_option("--epsilon", a->epsilon, "Adam epsilon");
  cfg->key("dataset", &a->dataset_path);
  cfg->key("features", &a->features_path);
  cfg->key("arch", &a->arch);
  cfg->key("preset", &a->preset);
  cfg->key("out-dir", &a->out_dir);
  cfg->key("seed", &a->seed);
  cfg->key("min-frequency", &a->min_frequency);
  cfg->key("alpha", &a->alpha);
  cfg->key("beta1", &a->beta1);
  cfg->key("beta2", &a->beta2);
  cfg->key("epsilon", &a->epsilon);
  add_model_override_options(cmd, *cfg, *a);

  cmd->callback([=]() {
    cfg->apply();
    const LoadedData data = load_dataset(a->dataset_path, a->features_path);
    const Vocabulary vocabulary =
        build_vocabulary(data.dataset, a->min_frequency);
    const ModelConfig model_cfg =
        resolve_train_config(*a, vocabulary.size(), data.features.dim());

    TrainConfig train_cfg = train_config_for(model_cfg, a->seed);
    if (a->alpha) train_cfg.alpha = *a->alpha;
    if (a->beta1) train_cfg.beta1 = *a->beta1;
    if (a->beta2) train_cfg.beta2 = *a->beta2;
    if (a->epsilon) train_cfg.epsilon = *a->epsilon;

    CaptionModel model = build_model<float>(model_cfg, a->seed);
    const auto train_examples =
        make_examples(data.dataset, data.features, vocabulary, Split::train);
    const auto val_examples =
        make_examples(data.dataset, data.features, vocabulary, Split::val);
    const TrainResult result =
        train(model, train_examples, val_examples, train_cfg);

    ensure_dir(a->out_dir);
    const std::string ckpt_path = join_path(a->out_dir, "model.ckpt");
    const std::string csv_path = join_path(a->out_dir, "epochs.csv");
    const std::string json_path = join_path(a->out_dir, "train.json");
    save_checkpoint(ckpt_path, model, vocabulary);
    write_file_atomic(csv_path, epoch_log_csv(result));

    ordered_json summary;
    summary["ok"] = true;
    summary["config"] = config_json(model_cfg);
    summary["train"] = {{"alpha", train_cfg.alpha},
                        {"beta1", train_cfg.beta1},
                        {"beta2", train_cfg.beta2},
                        {"epsilon", train_cfg.epsilon},
                        {"l2_coefficient", train_cfg.l2_coefficient},
                        {"minibatch_size", train_cfg.minibatch_size},
                        {"max_epochs", train_cfg.max_epochs},
                        {"seed", train_cfg.seed}};
    summary["result"] = {
        {"epochs_run", result.epochs.size()},
        {"stopped_early", result.stopped_early},
        {"best_epoch", result.best_epoch},
        {"final_val_perplexity",
         result.epochs.empty() ? 0.0 : result.epochs.back().val_perplexity}};
    summary["vocabulary_size"] = vocabulary.size();
    summary["parameters"] = count_parameters(model_cfg);
    summary["outputs"]["checkpoint"] = ckpt_path;
    summary["outputs"]["epoch_log"] = csv_path;
    summary["outputs"]["summary"] = json_path;
    write_file_atomic(json_path, summary.dump(2) + "\n");
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

void add_generate(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "generate", "Decode captions for a split with beam search");
  auto cfg = std::make_shared<FlagConfig>();
  auto checkpoint = std::make_shared<std::string>();
  auto dataset_path = std::make_shared<std::string>();
  auto features_path = std::make_shared<std::string>();
  auto split_name = std::make_shared<std::string>("test");
  auto out = std::make_shared<std::string>();
  auto beam_width = std::make_shared<std::optional<std::size_t>>();
  auto min_len = std::make_shared<std::size_t>(5);
  auto max_len = std::make_shared<std::size_t>(50);
  auto allow_unknown = std::make_shared<bool>(false);

  cfg->bind(cmd);
  cmd->add_option("--checkpoint", *checkpoint, "trained model")->required();
  cmd->add_option("--dataset", *dataset_path, "dataset JSON")->required();
  cmd->add_option("--features", *features_path, "feature binary")->required();
  cmd->add_option("--split", *split_name, "train | val | test");
  cmd->add_option("--out", *out,
                  "captions JSONL path (default <out-dir>/captions.jsonl)");
  cmd->add_option("--beam-width", *beam_width,
                  "beam width (default: the checkpoint's)");
  cmd->add_option("--min-len", *min_len, "minimum words before END is legal");
  cmd->add_option("--max-len", *max_len, "hard caption length cap");
  cmd->add_flag("--allow-unknown", *allow_unknown,
                "let the decoder emit the unknown-word token");
  cfg->key("checkpoint", checkpoint.get());
  cfg->key("dataset", dataset_path.get());
  cfg->key("features", features_path.get());
  cfg->key("split", split_name.get());
  cfg->key("out", out.get());
  cfg->key("beam-width", beam_width.get());
  cfg->key("min-len", min_len.get());
  cfg->key("max-len", max_len.get());
  cfg->key("allow-unknown", allow_unknown.get());

  cmd->callback([=]() {
    cfg->apply();
    if (out->empty()) *out = join_path(default_out_dir(), "captions.jsonl");
    const Checkpoint ckpt = load_checkpoint(*checkpoint);
    const LoadedData data = load_dataset(*dataset_path, *features_path);
    const Split split = parse_split_arg(*split_name);

    BeamParams params;
    params.width = beam_width->value_or(ckpt.model.config.beam_width);
    params.min_len = *min_len;
    params.max_len = *max_len;
    params.allow_unknown = *allow_unknown;

    const auto captions = decode_split(ckpt.model, ckpt.vocabulary,
                                       data.dataset, data.features, split,
                                       params);

    ordered_json meta;
    meta["config"] = config_json(ckpt.model.config);
    meta["checkpoint"] = *checkpoint;
    meta["split"] = to_string(split);
    meta["beam"] = {{"width", params.width},
                    {"min_len", params.min_len},
                    {"max_len", params.max_len},
                    {"allow_unknown", params.allow_unknown}};
    write_file_atomic(*out, captions_jsonl(captions, meta));

    ordered_json summary;
    summary["ok"] = true;
    summary["images"] = captions.size();
    summary["beam"] = meta["beam"];
    summary["outputs"]["captions"] = *out;
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void add_evaluate(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "evaluate",
      "Score generated captions against a split's references");
  auto cfg = std::make_shared<FlagConfig>();
  auto checkpoint = std::make_shared<std::string>();
  auto dataset_path = std::make_shared<std::string>();
  auto features_path = std::make_shared<std::string>();
  auto split_name = std::make_shared<std::string>("test");
  auto captions_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto beam_width = std::make_shared<std::optional<std::size_t>>();
  auto min_len = std::make_shared<std::size_t>(5);
  auto max_len = std::make_shared<std::size_t>(50);
  auto allow_unknown = std::make_shared<bool>(false);
  auto exclude_end = std::make_shared<bool>(false);

  cfg->bind(cmd);
  cmd->add_option("--checkpoint", *checkpoint, "trained model")->required();
  cmd->add_option("--dataset", *dataset_path, "dataset JSON")->required();
  cmd->add_option("--features", *features_path, "feature binary")->required();
  cmd->add_option("--split", *split_name, "train | val | test");
  cmd->add_option("--captions", *captions_path,
                  "generated captions JSONL (default: decode internally)");
  cmd->add_option("--out", *out,
                  "metrics JSON path (default <out-dir>/metrics.json)");
  cmd->add_option("--beam-width", *beam_width,
                  "beam width for internal decoding");
  cmd->add_option("--min-len", *min_len, "minimum words before END is legal");
  cmd->add_option("--max-len", *max_len, "hard caption length cap");
  cmd->add_flag("--allow-unknown", *allow_unknown,
                "let the decoder emit the unknown-word token");
  cmd->add_flag("--exclude-end", *exclude_end,
                "leave the END prediction out of perplexity");
  cfg->key("checkpoint", checkpoint.get());
  cfg->key("dataset", dataset_path.get());
  cfg->key("features", features_path.get());
  cfg->key("split", split_name.get());
  cfg->key("captions", captions_path.get());
  cfg->key("out", out.get());
  cfg->key("beam-width", beam_width.get());
  cfg->key("min-len", min_len.get());
  cfg->key("max-len", max_len.get());
  cfg->key("allow-unknown", allow_unknown.get());
  cfg->key("exclude-end", exclude_end.get());

  cmd->callback([=]() {
    cfg->apply();
    if (out->empty()) *out = join_path(default_out_dir(), "metrics.json");
    const Checkpoint ckpt = load_checkpoint(*checkpoint);
    const LoadedData data = load_dataset(*dataset_path, *features_path);
    const Split split = parse_split_arg(*split_name);
    const auto split_idx = split_indices(data.dataset, split);
    if (split_idx.empty())
      throw DataError("split '" + *split_name + "' has no images");

    // Candidates: either the supplied JSONL (aligned by image id) or a fresh
    // internal decode of the split.
    std::vector<std::vector<std::string>> candidates;
    if (!captions_path->empty()) {
      const auto loaded = load_captions_jsonl(*captions_path);
      std::map<std::string, const GeneratedCaption*> by_id;
      for (const auto& c : loaded) {
        if (!by_id.emplace(c.image_id, &c).second)
          throw DataError("captions file has two entries for image '" +
                          c.image_id + "'");
      }
      for (std::size_t i : split_idx) {
        const std::string& id = data.dataset.images[i].id;
        auto it = by_id.find(id);
        if (it == by_id.end())
          throw DataError("captions file has no entry for image '" + id +
                          "' of split " + *split_name);
        candidates.push_back(it->second->tokens);
      }
    } else {
      BeamParams params;
      params.width = beam_width->value_or(ckpt.model.config.beam_width);
      params.min_len = *min_len;
      params.max_len = *max_len;
      params.allow_unknown = *allow_unknown;
      for (const auto& gen :
           decode_split(ckpt.model, ckpt.vocabulary, data.dataset,
                        data.features, split, params))
        candidates.push_back(gen.tokens);
    }

    const auto references = reference_captions(data.dataset, split);
    const auto examples =
        make_examples(data.dataset, data.features, ckpt.vocabulary, split);
    const auto train_captions = collect_captions(data.dataset, Split::train);

    std::string cider_warning;
    MetricMap metrics;
    metrics["bleu_1"] = bleu(candidates, references, 1);
    metrics["bleu_2"] = bleu(candidates, references, 2);
    metrics["bleu_3"] = bleu(candidates, references, 3);
    metrics["bleu_4"] = bleu(candidates, references, 4);
    metrics["rouge_l"] = rouge_l(candidates, references);
    metrics["cider_d"] = cider_d(candidates, references, &cider_warning);
    metrics["perplexity"] =
        geometric_mean_perplexity(ckpt.model, examples, !*exclude_end);
    const DiversityReport diversity =
        diversity_report(candidates, train_captions, ckpt.vocabulary);
    metrics["vocab_used_pct"] = diversity.vocab_used_pct;
    metrics["unigram_entropy"] = diversity.unigram_entropy;
    metrics["bigram_entropy"] = diversity.bigram_entropy;
    metrics["existing_pct"] = diversity.existing_pct;

    ordered_json summary;
    summary["ok"] = true;
    summary["split"] = to_string(split);
    summary["n_images"] = split_idx.size();
    summary["metrics"] = ordered_json::object();
    for (const auto& [name, value] : metrics) summary["metrics"][name] = value;
    summary["config"] = config_json(ckpt.model.config);
    summary["warnings"] = ordered_json::array();
    if (!cider_warning.empty()) summary["warnings"].push_back(cider_warning);
    summary["outputs"]["metrics"] = *out;
    write_file_atomic(*out, summary.dump(2) + "\n");
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// retrieve
// ---------------------------------------------------------------------------

void add_retrieve(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "retrieve", "Caption-to-image retrieval over a split");
  auto cfg = std::make_shared<FlagConfig>();
  auto checkpoint = std::make_shared<std::string>();
  auto dataset_path = std::make_shared<std::string>();
  auto features_path = std::make_shared<std::string>();
  auto split_name = std::make_shared<std::string>("test");
  auto pool_cap = std::make_shared<std::size_t>(1000);
  auto out = std::make_shared<std::string>();

  cfg->bind(cmd);
  cmd->add_option("--checkpoint", *checkpoint, "trained model")->required();
  cmd->add_option("--dataset", *dataset_path, "dataset JSON")->required();
  cmd->add_option("--features", *features_path, "feature binary")->required();
  cmd->add_option("--split", *split_name, "train | val | test");
  cmd->add_option("--pool-cap", *pool_cap, "largest candidate pool to rank");
  cmd->add_option("--out", *out,
                  "report path (default <out-dir>/retrieval.json)");
  cfg->key("checkpoint", checkpoint.get());
  cfg->key("dataset", dataset_path.get());
  cfg->key("features", features_path.get());
  cfg->key("split", split_name.get());
  cfg->key("pool-cap", pool_cap.get());
  cfg->key("out", out.get());

  cmd->callback([=]() {
    cfg->apply();
    if (out->empty()) *out = join_path(default_out_dir(), "retrieval.json");
    const Checkpoint ckpt = load_checkpoint(*checkpoint);
    const LoadedData data = load_dataset(*dataset_path, *features_path);
    const Split split = parse_split_arg(*split_name);

    const auto items = first_caption_examples(data.dataset, data.features,
                                              ckpt.vocabulary, split);
    const RetrievalReport report =
        retrieval_report(ckpt.model, items, *pool_cap);

    ordered_json summary;
    summary["ok"] = true;
    summary["split"] = to_string(split);
    summary["pool"] = report.ranks.size();
    summary["metrics"] = {{"recall_at_1", report.recall_at_1},
                          {"recall_at_5", report.recall_at_5},
                          {"recall_at_10", report.recall_at_10},
                          {"median_rank", report.median_rank}};
    summary["config"] = config_json(ckpt.model.config);
    summary["outputs"]["report"] = *out;
    write_file_atomic(*out, summary.dump(2) + "\n");
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

void add_probe(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "probe",
      "Visual-information retention along the caption (distance between "
      "multimodal vectors under an image swap)");
  auto cfg = std::make_shared<FlagConfig>();
  auto checkpoint = std::make_shared<std::string>();
  auto dataset_path = std::make_shared<std::string>();
  auto features_path = std::make_shared<std::string>();
  auto split_name = std::make_shared<std::string>("test");
  auto caption_len = std::make_shared<std::size_t>(0);
  auto repetitions = std::make_shared<std::size_t>(100);
  auto seed = std::make_shared<std::uint64_t>(0);
  auto out = std::make_shared<std::string>();

  cfg->bind(cmd);
  cmd->add_option("--checkpoint", *checkpoint, "trained model")->required();
  cmd->add_option("--dataset", *dataset_path, "dataset JSON")->required();
  cmd->add_option("--features", *features_path, "feature binary")->required();
  cmd->add_option("--split", *split_name, "train | val | test");
  cmd->add_option("--caption-len", *caption_len,
                  "probe captions of exactly this length "
                  "(0 = the split's most common length)");
  cmd->add_option("--repetitions", *repetitions,
                  "replacement draws per caption");
  cmd->add_option("--seed", *seed, "replacement-draw seed");
  cmd->add_option("--out", *out, "CSV path (default <out-dir>/probe.csv)");
  cfg->key("checkpoint", checkpoint.get());
  cfg->key("dataset", dataset_path.get());
  cfg->key("features", features_path.get());
  cfg->key("split", split_name.get());
  cfg->key("caption-len", caption_len.get());
  cfg->key("repetitions", repetitions.get());
  cfg->key("seed", seed.get());
  cfg->key("out", out.get());

  cmd->callback([=]() {
    cfg->apply();
    if (out->empty()) *out = join_path(default_out_dir(), "probe.csv");
    const Checkpoint ckpt = load_checkpoint(*checkpoint);
    const LoadedData data = load_dataset(*dataset_path, *features_path);
    const Split split = parse_split_arg(*split_name);
    const auto examples =
        make_examples(data.dataset, data.features, ckpt.vocabulary, split);

    std::size_t len = *caption_len;
    if (len == 0) {  // most common caption length, ties toward shorter
      std::map<std::size_t, std::size_t> counts;
      for (const auto& ex : examples) counts[ex.caption.size()] += 1;
      if (counts.empty())
        throw DataError("split '" + *split_name + "' has no captions");
      for (const auto& [length, n] : counts)
        if (len == 0 || n > counts[len]) len = length;
    }

    const RetentionCurve curve =
        retention_probe(ckpt.model, examples, len, *repetitions, *seed);
    write_file_atomic(*out, retention_curve_csv(curve));

    ordered_json summary;
    summary["ok"] = true;
    summary["split"] = to_string(split);
    summary["caption_len"] = curve.caption_len;
    summary["repetitions"] = curve.repetitions;
    summary["seed"] = curve.seed;
    summary["distances"] = curve.distances;
    summary["config"] = config_json(ckpt.model.config);
    summary["outputs"]["csv"] = *out;
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// search-hparams
// ---------------------------------------------------------------------------

void add_search_hparams(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "search-hparams",
      "Random search + hill climb + diversified final sweep, with a "
      "resumable evaluation journal");
  auto cfg = std::make_shared<FlagConfig>();
  auto dataset_path = std::make_shared<std::string>();
  auto features_path = std::make_shared<std::string>();
  auto arch = std::make_shared<std::string>("merge");
  auto out_dir = std::make_shared<std::string>(default_out_dir());
  auto journal_path = std::make_shared<std::string>();
  auto random_trials = std::make_shared<std::size_t>(100);
  auto search_epochs = std::make_shared<std::size_t>(10);
  auto search_beam = std::make_shared<std::size_t>(2);
  auto final_runs = std::make_shared<std::size_t>(3);
  auto seed = std::make_shared<std::uint64_t>(0);
  auto budget =
      std::make_shared<std::size_t>(std::numeric_limits<std::size_t>::max());
  auto min_frequency = std::make_shared<std::size_t>(5);
  auto min_len = std::make_shared<std::size_t>(5);
  auto max_len = std::make_shared<std::size_t>(50);

  cfg->bind(cmd);
  cmd->add_option("--dataset", *dataset_path, "dataset JSON")->required();
  cmd->add_option("--features", *features_path, "feature binary")->required();
  cmd->add_option("--arch", *arch,
                  "init-inject | pre-inject | par-inject | merge");
  cmd->add_option("--out-dir", *out_dir, "output directory");
  cmd->add_option("--journal", *journal_path,
                  "evaluation journal JSONL (default "
                  "<out-dir>/search-journal.jsonl)");
  cmd->add_option("--random-trials", *random_trials,
                  "combinations in the random stage");
  cmd->add_option("--search-epochs", *search_epochs,
                  "epoch cap during the search stages");
  cmd->add_option("--search-beam", *search_beam,
                  "beam width during the search stages");
  cmd->add_option("--final-runs", *final_runs, "seeded runs per sweep cell");
  cmd->add_option("--seed", *seed, "pipeline seed");
  cmd->add_option("--budget", *budget, "largest number of evaluator calls");
  cmd->add_option("--min-frequency", *min_frequency,
                  "vocabulary inclusion threshold");
  cmd->add_option("--min-len", *min_len, "decoder minimum caption length");
  cmd->add_option("--max-len", *max_len, "decoder maximum caption length");
  cfg->key("dataset", dataset_path.get());
  cfg->key("features", features_path.get());
  cfg->key("arch", arch.get());
  cfg->key("out-dir", out_dir.get());
  cfg->key("journal", journal_path.get());
  cfg->key("random-trials", random_trials.get());
  cfg->key("search-epochs", search_epochs.get());
  cfg->key("search-beam", search_beam.get());
  cfg->key("final-runs", final_runs.get());
  cfg->key("seed", seed.get());
  cfg->key("budget", budget.get());
  cfg->key("min-frequency", min_frequency.get());
  cfg->key("min-len", min_len.get());
  cfg->key("max-len", max_len.get());

  cmd->callback([=]() {
    cfg->apply();
    ensure_dir(*out_dir);
    if (journal_path->empty())
      *journal_path = join_path(*out_dir, "search-journal.jsonl");
    const std::string out = join_path(*out_dir, "search.json");

    const LoadedData data = load_dataset(*dataset_path, *features_path);
    const Vocabulary vocabulary =
        build_vocabulary(data.dataset, *min_frequency);
    const ArchitectureKind kind = parse_architecture(*arch);
    const HparamSpace space(kind);

    const auto train_examples =
        make_examples(data.dataset, data.features, vocabulary, Split::train);
    const auto val_examples =
        make_examples(data.dataset, data.features, vocabulary, Split::val);
    const auto val_references = reference_captions(data.dataset, Split::val);
    const auto val_idx = split_indices(data.dataset, Split::val);

    const TrialEvaluator evaluate = [&](const EvalTask& task) {
      ModelConfig model_cfg = hparam_model_config(
          task.combination, kind, vocabulary.size(), data.features.dim());
      model_cfg.max_epochs = task.max_epochs;
      model_cfg.beam_width = task.beam_width;
      CaptionModel model = build_model<float>(model_cfg, task.seed);
      const TrainConfig train_cfg = train_config_for(model_cfg, task.seed);
      train(model, train_examples, val_examples, train_cfg);

      BeamParams params;
      params.width = task.beam_width;
      params.min_len = *min_len;
      params.max_len = *max_len;
      std::vector<std::vector<std::string>> candidates;
      for (std::size_t i : val_idx) {
        const auto words = beam_search(
            model,
            data.features.row_tensor(data.dataset.images[i].feature_index),
            params);
        std::vector<std::string> tokens;
        for (TokenId id : words) tokens.push_back(vocabulary.token_of(id));
        candidates.push_back(std::move(tokens));
      }
      return cider_d(candidates, val_references);
    };

    SearchConfig search_cfg;
    search_cfg.random_trials = *random_trials;
    search_cfg.search_epochs = *search_epochs;
    search_cfg.search_beam = *search_beam;
    search_cfg.final_runs = *final_runs;
    search_cfg.seed = *seed;
    search_cfg.eval_budget = *budget;

    SearchJournal journal(*journal_path);
    const SearchOutcome outcome =
        run_search(space, search_cfg, evaluate, journal);

    auto combo_json = [](const HparamPoint& p) {
      return ordered_json::parse(hparam_to_json(p));
    };
    ordered_json summary;
    summary["ok"] = true;
    summary["arch"] = to_string(kind);
    summary["seed"] = *seed;
    summary["space_size"] = space.size();
    summary["random_trials"] = outcome.random_trials.size();
    summary["climbed"] = combo_json(outcome.climbed.combination);
    summary["finalists"] = ordered_json::array();
    for (const auto& f : outcome.finalists)
      summary["finalists"].push_back(combo_json(f));
    if (!outcome.sweep.empty()) {
      summary["best"] = {{"combination", combo_json(outcome.best.combination)},
                         {"epochs", outcome.best.epochs},
                         {"beam", outcome.best.beam},
                         {"mean_cider", outcome.best.mean_score},
                         {"ciders", outcome.best.scores}};
    }
    summary["evaluations_logged"] = journal.size();
    summary["warnings"] = outcome.warnings;
    summary["outputs"]["journal"] = *journal_path;
    summary["outputs"]["summary"] = out;
    write_file_atomic(out, summary.dump(2) + "\n");
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// count-params
// ---------------------------------------------------------------------------

void add_count_params(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "count-params",
      "Exact trainable-parameter counts of the four preset configurations");
  auto cfg = std::make_shared<FlagConfig>();
  auto vocab_size = std::make_shared<std::size_t>(2539);
  auto image_dim = std::make_shared<std::size_t>(4096);
  auto out = std::make_shared<std::string>();

  cfg->bind(cmd);
  cmd->add_option("--vocab-size", *vocab_size,
                  "vocabulary size including the special tokens");
  cmd->add_option("--image-dim", *image_dim, "image feature dimensionality");
  cmd->add_option("--out", *out, "optional JSON output path");
  cfg->key("vocab-size", vocab_size.get());
  cfg->key("image-dim", image_dim.get());
  cfg->key("out", out.get());

  cmd->callback([=]() {
    cfg->apply();
    ordered_json counts;
    std::map<ArchitectureKind, std::size_t> by_kind;
    for (ArchitectureKind kind :
         {ArchitectureKind::init_inject, ArchitectureKind::pre_inject,
          ArchitectureKind::par_inject, ArchitectureKind::merge}) {
      ModelConfig preset = preset_config(kind);
      preset.vocab_size = *vocab_size;
      preset.image_dim = *image_dim;
      by_kind[kind] = count_parameters(preset);
      counts[to_string(kind)] = by_kind[kind];
    }
    const double ratio =
        static_cast<double>(by_kind[ArchitectureKind::init_inject]) /
        static_cast<double>(by_kind[ArchitectureKind::merge]);

    ordered_json summary;
    summary["ok"] = true;
    summary["vocab_size"] = *vocab_size;
    summary["image_dim"] = *image_dim;
    summary["counts"] = counts;
    summary["ratio_init_inject_over_merge"] = ratio;
    if (!out->empty()) {
      write_file_atomic(*out, summary.dump(2) + "\n");
      summary["outputs"]["summary"] = *out;
    }
    emit(summary);
  });
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void add_report(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "report",
      "Aggregate per-run metric files into mean (population std) form");
  auto cfg = std::make_shared<FlagConfig>();
  auto inputs = std::make_shared<std::vector<std::string>>();
  auto out = std::make_shared<std::string>();

  cfg->bind(cmd);
  cmd->add_option("--inputs", *inputs, "metric JSON files, one per run")
      ->required()
      ->expected(-1);
  cmd->add_option("--out", *out,
                  "aggregated JSON path (default <out-dir>/report.json)");
  cfg->key("inputs", inputs.get());
  cfg->key("out", out.get());

  cmd->callback([=]() {
    cfg->apply();
    if (out->empty()) *out = join_path(default_out_dir(), "report.json");
    std::vector<MetricMap> runs;
    for (const std::string& path : *inputs) {
      ordered_json obj;
      try {
        obj = ordered_json::parse(read_file(path));
      } catch (const Error&) {
        throw;
      } catch (const std::exception& e) {
        throw LoadError("metric file " + path + " is not valid JSON: " +
                        e.what());
      }
      // evaluate/retrieve outputs keep their numbers under "metrics"; a bare
      // flat object of numbers is accepted too.
      const ordered_json& metrics =
          obj.is_object() && obj.contains("metrics") ? obj["metrics"] : obj;
      if (!metrics.is_object())
        throw LoadError("metric file " + path +
                        " holds no object of metric values");
      MetricMap run;
      for (const auto& [k, v] : metrics.items()) {
        if (!v.is_number())
          throw LoadError("metric '" + k + "' in " + path +
                          " is not a number");
        run[k] = v.get<double>();
      }
      runs.push_back(std::move(run));
    }

    const AggregatedReport aggregated = aggregate_runs(runs);
    write_file_atomic(*out, report_to_json(aggregated));
    std::printf("%s", report_table(aggregated).c_str());
    std::printf("(%zu runs; written to %s)\n", runs.size(), out->c_str());
  });
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const DataError*>(&e)) return "data";
  if (dynamic_cast<const LoadError*>(&e)) return "load";
  if (dynamic_cast<const IndexError*>(&e)) return "index";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const StateError*>(&e)) return "state";
  if (dynamic_cast<const Error*>(&e)) return "error";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caption-architecture workbench"};
  app.set_version_flag("--version", std::string("caprnn ") + version());
  app.require_subcommand(1);

  add_synth_data(app);
  add_convert_karpathy(app);
  add_train(app);
  add_generate(app);
  add_evaluate(app);
  add_retrieve(app);
  add_probe(app);
  add_search_hparams(app);
  add_count_params(app);
  add_report(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    ordered_json err;
    err["error"] = {{"type", error_kind(e)}, {"message", e.what()}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 0;
}
