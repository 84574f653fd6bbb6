#include "caprnn/dataset.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <utility>

#include <json.hpp>

#include "caprnn/checkpoint.hpp"  // write_file_atomic / read_file
#include "caprnn/rng.hpp"

namespace caprnn {

namespace {

using json = nlohmann::ordered_json;

constexpr char kFeatureMagic[] = "CAPFEAT1";
constexpr std::size_t kMagicLen = 8;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string path)
      : bytes_(bytes), path_(std::move(path)) {}

  std::string take(std::size_t n) {
    need(n);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw LoadError("feature file '" + path_ + "' is truncated");
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

[[noreturn]] void bad_dataset(const std::string& path,
                              const std::string& detail) {
  throw LoadError("dataset file '" + path + "': " + detail);
}

// The synthetic word pools, alphabetical so slot values are reproducible.
const std::array<std::string, 10> kColors = {
    "black", "blue",   "brown", "green", "grey",
    "orange", "purple", "red",   "white", "yellow"};
const std::array<std::string, 10> kObjects = {
    "bird", "boat", "car",   "cat",   "chair",
    "dog",  "fish", "horse", "house", "tree"};
const std::array<std::string, 10> kActions = {
    "drifting", "eating",   "flying",   "jumping", "playing",
    "running",  "sitting",  "sleeping", "standing", "walking"};

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw UsageError("invalid Split value");
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + text +
                    "' (expected train, val, or test)");
}

FeatureStore::FeatureStore(std::size_t count, std::size_t dim,
                           std::vector<float> data)
    : count_(count), dim_(dim), data_(std::move(data)) {
  if (dim_ == 0) throw UsageError("feature dimension must be positive");
  if (data_.size() != count_ * dim_)
    throw UsageError("feature data holds " + std::to_string(data_.size()) +
                     " floats but count*dim = " +
                     std::to_string(count_ * dim_));
}

std::span<const float> FeatureStore::row(std::size_t index) const {
  if (index >= count_)
    throw IndexError("feature row " + std::to_string(index) +
                     " out of range (count " + std::to_string(count_) + ")");
  return std::span<const float>(data_.data() + index * dim_, dim_);
}

Tensor FeatureStore::row_tensor(std::size_t index) const {
  auto r = row(index);
  return Tensor::row(std::vector<float>(r.begin(), r.end()));
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  json images = json::array();
  for (const auto& entry : dataset.images) {
    json captions = json::array();
    for (const auto& caption : entry.captions) captions.push_back(caption);
    images.push_back({{"id", entry.id},
                      {"split", to_string(entry.split)},
                      {"feature_index", entry.feature_index},
                      {"captions", std::move(captions)}});
  }
  json root = {{"images", std::move(images)}};
  write_file_atomic(path, root.dump(2) + "\n");
}

Dataset load_dataset_file(const std::string& path) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::exception& e) {
    bad_dataset(path, std::string("not valid JSON (") + e.what() + ")");
  }
  if (!root.is_object() || !root.contains("images"))
    bad_dataset(path, "top level must be an object with an \"images\" array");
  for (const auto& [key, value] : root.items())
    if (key != "images") bad_dataset(path, "unexpected key \"" + key + "\"");
  const json& images = root["images"];
  if (!images.is_array()) bad_dataset(path, "\"images\" must be an array");

  Dataset dataset;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const json& img = images[i];
    const std::string where = "images[" + std::to_string(i) + "]";
    if (!img.is_object()) bad_dataset(path, where + " must be an object");
    for (const auto& [key, value] : img.items())
      if (key != "id" && key != "split" && key != "feature_index" &&
          key != "captions")
        bad_dataset(path, where + " has unexpected key \"" + key + "\"");
    for (const char* key : {"id", "split", "feature_index", "captions"})
      if (!img.contains(key))
        bad_dataset(path, where + " is missing \"" + std::string(key) + "\"");
    if (!img["id"].is_string())
      bad_dataset(path, where + ".id must be a string");
    if (!img["split"].is_string())
      bad_dataset(path, where + ".split must be a string");
    if (!img["feature_index"].is_number_unsigned())
      bad_dataset(path, where + ".feature_index must be a non-negative "
                                "integer");
    if (!img["captions"].is_array())
      bad_dataset(path, where + ".captions must be an array");

    ImageEntry entry;
    entry.id = img["id"].get<std::string>();
    try {
      entry.split = parse_split(img["split"].get<std::string>());
    } catch (const ConfigError& e) {
      bad_dataset(path, where + ".split: " + e.what());
    }
    entry.feature_index = img["feature_index"].get<std::size_t>();
    for (std::size_t c = 0; c < img["captions"].size(); ++c) {
      const json& caption = img["captions"][c];
      if (!caption.is_array())
        bad_dataset(path, where + ".captions[" + std::to_string(c) +
                              "] must be an array of tokens");
      std::vector<std::string> tokens;
      for (const json& token : caption) {
        if (!token.is_string())
          bad_dataset(path, where + ".captions[" + std::to_string(c) +
                                "] contains a non-string token");
        tokens.push_back(token.get<std::string>());
      }
      entry.captions.push_back(std::move(tokens));
    }
    dataset.images.push_back(std::move(entry));
  }
  return dataset;
}

void save_features(const std::string& path, const FeatureStore& features) {
  std::string out;
  out.reserve(kMagicLen + 8 + features.data().size() * 4);
  out.append(kFeatureMagic, kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(features.count()));
  put_u32(out, static_cast<std::uint32_t>(features.dim()));
  for (float v : features.data()) put_f32(out, v);
  write_file_atomic(path, out);
}

FeatureStore load_features(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader reader(bytes, path);
  if (reader.take(kMagicLen) != kFeatureMagic)
    throw LoadError("feature file '" + path +
                    "' does not start with the CAPFEAT1 magic");
  const std::size_t count = reader.u32();
  const std::size_t dim = reader.u32();
  if (dim == 0)
    throw LoadError("feature file '" + path + "' declares dimension 0");
  std::vector<float> data;
  data.reserve(count * dim);
  for (std::size_t i = 0; i < count * dim; ++i) data.push_back(reader.f32());
  if (!reader.at_end())
    throw LoadError("feature file '" + path +
                    "' has trailing bytes after the declared rows");
  return FeatureStore(count, dim, std::move(data));
}

void validate_dataset(const Dataset& dataset, const FeatureStore& features) {
  for (const auto& entry : dataset.images) {
    if (entry.feature_index >= features.count())
      throw LoadError("image '" + entry.id + "' has feature_index " +
                      std::to_string(entry.feature_index) +
                      " but the feature store holds " +
                      std::to_string(features.count()) + " rows");
    if (entry.captions.empty())
      throw LoadError("image '" + entry.id + "' has no captions");
    for (const auto& caption : entry.captions)
      if (caption.empty())
        throw LoadError("image '" + entry.id + "' has an empty caption");
  }
}

LoadedData load_dataset(const std::string& dataset_path,
                        const std::string& features_path) {
  LoadedData loaded{load_dataset_file(dataset_path),
                    load_features(features_path)};
  validate_dataset(loaded.dataset, loaded.features);
  return loaded;
}

std::span<const std::string> synthetic_colors() {
  return {kColors.data(), kColors.size()};
}
std::span<const std::string> synthetic_objects() {
  return {kObjects.data(), kObjects.size()};
}
std::span<const std::string> synthetic_actions() {
  return {kActions.data(), kActions.size()};
}

LoadedData generate_synthetic(std::uint64_t seed, std::size_t n_images,
                              std::size_t n_attributes) {
  if (n_images < 10)
    throw UsageError("generate_synthetic needs n_images >= 10 so that the "
                     "80/10/10 split leaves no split empty (got " +
                     std::to_string(n_images) + ")");
  if (n_attributes < 2)
    throw UsageError("generate_synthetic needs n_attributes >= 2 (got " +
                     std::to_string(n_attributes) + ")");
  if (n_attributes > kColors.size())
    throw UsageError("generate_synthetic supports at most " +
                     std::to_string(kColors.size()) +
                     " values per attribute slot (got " +
                     std::to_string(n_attributes) + ")");

  const std::size_t n_val = n_images / 10;
  const std::size_t n_test = n_images / 10;
  const std::size_t n_train = n_images - n_val - n_test;
  const std::size_t dim = 3 * n_attributes;

  Rng rng(seed);
  Dataset dataset;
  std::vector<float> data;
  data.reserve(n_images * dim);
  for (std::size_t i = 0; i < n_images; ++i) {
    const std::size_t color = rng.index(n_attributes);
    const std::size_t object = rng.index(n_attributes);
    const std::size_t action = rng.index(n_attributes);

    std::vector<float> feature(dim, 0.0f);
    feature[color] = 1.0f;
    feature[n_attributes + object] = 1.0f;
    feature[2 * n_attributes + action] = 1.0f;
    for (std::size_t d = 0; d < dim; ++d)
      feature[d] += 0.02f * static_cast<float>(rng.normal());
    data.insert(data.end(), feature.begin(), feature.end());

    char id[32];
    std::snprintf(id, sizeof id, "synth-%06zu", i);
    ImageEntry entry;
    entry.id = id;
    entry.split = i < n_train            ? Split::train
                  : i < n_train + n_val  ? Split::val
                                         : Split::test;
    entry.feature_index = i;
    entry.captions = {{"a", kColors[color], kObjects[object], "is",
                       kActions[action]}};
    dataset.images.push_back(std::move(entry));
  }
  return LoadedData{std::move(dataset),
                    FeatureStore(n_images, dim, std::move(data))};
}

Dataset convert_karpathy_json(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw LoadError(std::string("input is not valid JSON (") + e.what() + ")");
  }
  if (!root.is_object() || !root.contains("images") ||
      !root["images"].is_array())
    throw LoadError("input must be an object with an \"images\" array");

  Dataset dataset;
  const json& images = root["images"];
  for (std::size_t i = 0; i < images.size(); ++i) {
    const json& img = images[i];
    const std::string where = "images[" + std::to_string(i) + "]";
    if (!img.is_object())
      throw LoadError(where + " must be an object");
    if (!img.contains("imgid") || !img["imgid"].is_number_unsigned())
      throw LoadError(where + " needs a non-negative integer \"imgid\"");
    if (!img.contains("split") || !img["split"].is_string())
      throw LoadError(where + " needs a string \"split\"");
    if (!img.contains("sentences") || !img["sentences"].is_array() ||
        img["sentences"].empty())
      throw LoadError(where + " needs a non-empty \"sentences\" array");

    ImageEntry entry;
    entry.feature_index = img["imgid"].get<std::size_t>();
    if (img.contains("filename") && img["filename"].is_string())
      entry.id = img["filename"].get<std::string>();
    else
      entry.id = "img" + std::to_string(entry.feature_index);

    const std::string split = img["split"].get<std::string>();
    try {
      entry.split = split == "restval" ? Split::train : parse_split(split);
    } catch (const ConfigError& e) {
      throw LoadError(where + ": " + e.what());
    }

    for (std::size_t s = 0; s < img["sentences"].size(); ++s) {
      const json& sentence = img["sentences"][s];
      if (!sentence.is_object() || !sentence.contains("tokens") ||
          !sentence["tokens"].is_array())
        throw LoadError(where + ".sentences[" + std::to_string(s) +
                        "] needs a \"tokens\" array");
      std::vector<std::string> tokens;
      for (const json& token : sentence["tokens"]) {
        if (!token.is_string())
          throw LoadError(where + ".sentences[" + std::to_string(s) +
                          "].tokens contains a non-string entry");
        tokens.push_back(token.get<std::string>());
      }
      if (tokens.empty())
        throw LoadError(where + ".sentences[" + std::to_string(s) +
                        "] has zero tokens");
      entry.captions.push_back(std::move(tokens));
    }
    dataset.images.push_back(std::move(entry));
  }
  return dataset;
}

std::vector<std::size_t> split_indices(const Dataset& dataset, Split split) {
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < dataset.images.size(); ++i)
    if (dataset.images[i].split == split) indices.push_back(i);
  return indices;
}

std::vector<std::vector<std::string>> collect_captions(const Dataset& dataset,
                                                       Split split) {
  std::vector<std::vector<std::string>> captions;
  for (std::size_t i : split_indices(dataset, split))
    for (const auto& caption : dataset.images[i].captions)
      captions.push_back(caption);
  return captions;
}

Vocabulary build_vocabulary(const Dataset& dataset,
                            std::size_t min_frequency) {
  return build_vocabulary(collect_captions(dataset, Split::train),
                          min_frequency);
}

std::vector<CaptionExample> make_examples(const Dataset& dataset,
                                          const FeatureStore& features,
                                          const Vocabulary& vocabulary,
                                          Split split) {
  std::vector<CaptionExample> examples;
  for (std::size_t i : split_indices(dataset, split)) {
    const ImageEntry& entry = dataset.images[i];
    for (const auto& caption : entry.captions)
      examples.push_back(CaptionExample{
          features.row_tensor(entry.feature_index),
          vocabulary.encode(caption)});
  }
  return examples;
}

std::vector<std::vector<std::vector<std::string>>> reference_captions(
    const Dataset& dataset, Split split) {
  std::vector<std::vector<std::vector<std::string>>> refs;
  for (std::size_t i : split_indices(dataset, split))
    refs.push_back(dataset.images[i].captions);
  return refs;
}

}  // namespace caprnn
