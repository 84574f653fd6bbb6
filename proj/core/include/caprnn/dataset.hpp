#pragma once

// Dataset, feature-store, and synthetic-data plumbing.
//
// A captioning dataset is two files:
//   * a UTF-8 JSON dataset file
//       {"images":[{"id": str,
//                   "split": "train"|"val"|"test",
//                   "feature_index": int,
//                   "captions": [[token, ...], ...]}, ...]}
//     Captions are stored pre-tokenized as lowercase token arrays.
//   * a binary feature file holding one row of 32-bit floats per image:
//       magic "CAPFEAT1" (8 bytes)
//       u32 little-endian row count
//       u32 little-endian row dimension
//       count * dim little-endian 32-bit floats, row-major
//
// `load_dataset` reads and cross-validates the pair (every feature_index must
// be a valid row; every image needs at least one non-empty caption).
//
// `generate_synthetic` builds a deterministic desk-scale dataset: each image
// has one caption following the five-token template
//     "a <color> <object> is <action>"
// and a feature vector made of three one-hot attribute blocks (color, object,
// action) plus small seeded noise. Identical seeds reproduce the dataset
// bit-for-bit.
//
// `convert_karpathy_json` maps the widely circulated caption-dataset JSON
// (images[].{filename, imgid, split, sentences[].tokens}) onto this schema:
//   id            <- filename (falling back to "img<imgid>")
//   split         <- split, with "restval" folded into "train"
//   feature_index <- imgid (feature rows must therefore be ordered by imgid)
//   captions      <- sentences[].tokens
//
// Model-facing encoding replaces out-of-vocabulary tokens with UNKNOWN;
// metric references keep the raw surface tokens (see make_examples /
// reference_captions).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "caprnn/error.hpp"
#include "caprnn/perplexity.hpp"
#include "caprnn/tensor.hpp"
#include "caprnn/types.hpp"
#include "caprnn/vocab.hpp"

namespace caprnn {

std::string to_string(Split split);
Split parse_split(const std::string& text);  // ConfigError on anything else

struct ImageEntry {
  std::string id;
  Split split = Split::train;
  std::size_t feature_index = 0;
  std::vector<std::vector<std::string>> captions;

  bool operator==(const ImageEntry&) const = default;
};

struct Dataset {
  std::vector<ImageEntry> images;

  bool operator==(const Dataset&) const = default;
};

/// Immutable row-major matrix of image feature vectors.
class FeatureStore {
 public:
  FeatureStore(std::size_t count, std::size_t dim, std::vector<float> data);

  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }
  std::span<const float> row(std::size_t index) const;  // IndexError
  Tensor row_tensor(std::size_t index) const;
  const std::vector<float>& data() const { return data_; }

  bool operator==(const FeatureStore&) const = default;

 private:
  std::size_t count_;
  std::size_t dim_;
  std::vector<float> data_;
};

struct LoadedData {
  Dataset dataset;
  FeatureStore features;
};

// --- Serialization ---------------------------------------------------------

void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset_file(const std::string& path);  // LoadError

void save_features(const std::string& path, const FeatureStore& features);
FeatureStore load_features(const std::string& path);  // LoadError

/// Loads both files and validates them against each other.
LoadedData load_dataset(const std::string& dataset_path,
                        const std::string& features_path);

/// Validates the pair invariants (feature_index bounds, non-empty captions).
/// Throws LoadError with the offending image named.
void validate_dataset(const Dataset& dataset, const FeatureStore& features);

// --- Synthetic generator ---------------------------------------------------

/// Deterministically generates `n_images` images with `n_attributes` possible
/// values per attribute slot (color/object/action). Splits are assigned
/// 80/10/10 by position. UsageError if n_images < 10 (a split would be
/// empty), n_attributes < 2, or n_attributes exceeds the built-in word pools.
LoadedData generate_synthetic(std::uint64_t seed, std::size_t n_images,
                              std::size_t n_attributes);

/// The word pools the generator draws from (10 values per slot).
std::span<const std::string> synthetic_colors();
std::span<const std::string> synthetic_objects();
std::span<const std::string> synthetic_actions();

// --- Karpathy-layout conversion --------------------------------------------

/// Converts the published caption-dataset JSON text into a Dataset. The
/// feature file is distributed separately and is not touched here; rows are
/// expected to be ordered by imgid. LoadError on schema violations.
Dataset convert_karpathy_json(const std::string& json_text);

// --- Split views ------------------------------------------------------------

/// Indices into dataset.images for one split, in file order.
std::vector<std::size_t> split_indices(const Dataset& dataset, Split split);

/// All captions of one split as surface-token sequences (vocabulary input).
std::vector<std::vector<std::string>> collect_captions(const Dataset& dataset,
                                                       Split split);

/// Builds the vocabulary from the train split only.
Vocabulary build_vocabulary(const Dataset& dataset,
                            std::size_t min_frequency = 5);

/// One CaptionExample per (image, caption) pair of the split, in file order.
/// Captions are encoded with UNKNOWN replacing out-of-vocabulary tokens;
/// START/END are not included (the training loss adds them).
std::vector<CaptionExample> make_examples(const Dataset& dataset,
                                          const FeatureStore& features,
                                          const Vocabulary& vocabulary,
                                          Split split);

/// Per image of the split (file order): its captions as surface tokens, for
/// use as metric references.
std::vector<std::vector<std::vector<std::string>>> reference_captions(
    const Dataset& dataset, Split split);

}  // namespace caprnn
